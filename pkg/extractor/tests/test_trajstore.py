import json
import struct

import numpy as np
import pytest

from extractor import trajstore


def test_trajectory_file_layout_is_exactly_as_documented(tmp_path):
    states = np.arange(12, dtype=np.float32).reshape(3, 4)
    path = tmp_path / "t.bin"
    trajstore.write_trajectory_file(
        path, prompt_id="p000", layer_index=2, model_id="m", states=states, group_label="g"
    )
    blob = path.read_bytes()
    assert blob[:5] == b"MTRJ1"
    (head_len,) = struct.unpack("<I", blob[5:9])
    head = blob[9 : 9 + head_len]
    header = json.loads(head)
    assert head == json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    assert header == {
        "ambient_dim": 4,
        "group_label": "g",
        "layer_index": 2,
        "model_id": "m",
        "num_steps": 3,
        "prompt_id": "p000",
    }
    payload = blob[9 + head_len :]
    assert payload == states.astype("<f4").tobytes()


def test_trajectory_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    states = rng.standard_normal((17, 6)).astype(np.float32)
    path = tmp_path / "t.bin"
    trajstore.write_trajectory_file(path, prompt_id="p1", layer_index=0, model_id="m", states=states)
    header, back = trajstore.read_trajectory_file(path)
    assert header["num_steps"] == 17 and header["ambient_dim"] == 6
    assert back.view(np.uint32).tolist() == states.view(np.uint32).tolist()


def test_write_refuses_bad_states(tmp_path):
    path = tmp_path / "t.bin"
    bad = np.array([[1.0, np.nan]], dtype=np.float32)
    with pytest.raises(ValueError, match="non-finite"):
        trajstore.write_trajectory_file(path, prompt_id="p", layer_index=0, model_id="m", states=bad)
    with pytest.raises(ValueError, match="2-d"):
        trajstore.write_trajectory_file(
            path, prompt_id="p", layer_index=0, model_id="m", states=np.zeros(4, dtype=np.float32)
        )
    with pytest.raises(ValueError, match="num_steps"):
        trajstore.write_trajectory_file(
            path, prompt_id="p", layer_index=0, model_id="m", states=np.zeros((0, 4), dtype=np.float32)
        )
    with pytest.raises(ValueError, match="layer_index"):
        trajstore.write_trajectory_file(
            path, prompt_id="p", layer_index=-1, model_id="m", states=np.zeros((2, 2), dtype=np.float32)
        )


def test_read_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "t.bin"
    trajstore.write_trajectory_file(
        path, prompt_id="p", layer_index=0, model_id="m", states=np.ones((2, 2), dtype=np.float32)
    )
    blob = path.read_bytes()
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXXX" + blob[5:])
    with pytest.raises(ValueError, match="bad magic"):
        trajstore.read_trajectory_file(bad)
    short = tmp_path / "short.bin"
    short.write_bytes(blob[:-4])
    with pytest.raises(ValueError, match="size mismatch"):
        trajstore.read_trajectory_file(short)


def test_embedding_roundtrip_and_distinct_magic(tmp_path):
    rows = np.random.default_rng(0).standard_normal((10, 3)).astype(np.float32)
    path = tmp_path / "e.bin"
    trajstore.write_embedding_file(path, model_id="m", rows=rows)
    assert path.read_bytes()[:5] == b"MEMB1"
    header, back = trajstore.read_embedding_file(path)
    assert header["vocab_size"] == 10 and header["ambient_dim"] == 3
    assert np.array_equal(back, rows)
    with pytest.raises(ValueError, match="bad magic"):
        trajstore.read_trajectory_file(path)


def test_manifest_bytes_are_canonical(tmp_path):
    entries = [
        {"relative_path": "t.bin", "prompt_id": "p0", "layer_index": 0, "group_label": ""}
    ]
    trajstore.write_manifest(
        tmp_path,
        model_id="m",
        num_layers=2,
        temperature=0.0,
        max_new_tokens=8,
        entries=entries,
        embedding_path="e.bin",
        notes=("a note",),
    )
    text = (tmp_path / "manifest.json").read_text(encoding="utf-8")
    doc = json.loads(text)
    assert text == json.dumps(doc, sort_keys=True, indent=2) + "\n"
    assert doc["embedding"] == {"relative_path": "e.bin"}
    assert doc["notes"] == ["a note"]
    assert doc["decode_config"] == {"max_new_tokens": 8, "temperature": 0.0}
    assert doc["trajectories"][0]["relative_path"] == "t.bin"


def test_set_manifest_embedding_updates_in_place(tmp_path):
    trajstore.write_manifest(
        tmp_path, model_id="m", num_layers=1, temperature=0.7, max_new_tokens=4, entries=[]
    )
    assert trajstore.set_manifest_embedding(tmp_path, "e.bin") is True
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["embedding"] == {"relative_path": "e.bin"}
    assert doc["model_id"] == "m"


def test_set_manifest_embedding_without_manifest_is_a_noop(tmp_path):
    assert trajstore.set_manifest_embedding(tmp_path, "e.bin") is False
    assert not (tmp_path / "manifest.json").exists()
