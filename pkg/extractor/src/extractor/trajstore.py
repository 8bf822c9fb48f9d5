"""Writer for the trajectory-store interchange format.

This module is an independent implementation of the on-disk layout the
manifold-probe toolkit reads: little-endian float32 payloads behind a
5-byte magic and a length-prefixed JSON header, plus a manifest.json
tying the files together. Nothing here imports manifold-probe; the bytes
are the contract.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

TRAJECTORY_MAGIC = b"MTRJ1"
EMBEDDING_MAGIC = b"MEMB1"
MANIFEST_NAME = "manifest.json"

_LEN_FMT = "<I"
_PREFIX = len(TRAJECTORY_MAGIC) + struct.calcsize(_LEN_FMT)


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.isfinite(x).all():
        raise ValueError(f"non-finite entry in {what}")


def _pack(magic: bytes, header: dict, payload: np.ndarray) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = np.ascontiguousarray(payload, dtype="<f4").tobytes()
    return magic + struct.pack(_LEN_FMT, len(head)) + head + body


def _unpack(blob: bytes, magic: bytes, source) -> tuple[dict, bytes]:
    if len(blob) < _PREFIX:
        raise ValueError(f"truncated file: {source}")
    if blob[:5] != magic:
        raise ValueError(f"bad magic in {source}: {blob[:5]!r}")
    (head_len,) = struct.unpack(_LEN_FMT, blob[5:_PREFIX])
    if len(blob) < _PREFIX + head_len:
        raise ValueError(f"truncated file: {source}")
    header = json.loads(blob[_PREFIX : _PREFIX + head_len].decode("utf-8"))
    return header, blob[_PREFIX + head_len :]


def write_trajectory_file(
    destination,
    *,
    prompt_id: str,
    layer_index: int,
    model_id: str,
    states: np.ndarray,
    group_label: str = "",
) -> None:
    """Write one per-prompt, per-layer state sequence.

    Step count and ambient width are taken from the array shape; the
    payload is refused if it is empty or carries non-finite values.
    """
    states = np.asarray(states, dtype=np.float32)
    if states.ndim != 2:
        raise ValueError(f"states must be 2-d, got shape {states.shape}")
    num_steps, ambient_dim = states.shape
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    if ambient_dim < 1:
        raise ValueError(f"ambient_dim must be >= 1, got {ambient_dim}")
    if layer_index < 0:
        raise ValueError(f"layer_index must be >= 0, got {layer_index}")
    _check_finite(states, "trajectory states")
    header = {
        "prompt_id": prompt_id,
        "layer_index": int(layer_index),
        "num_steps": int(num_steps),
        "ambient_dim": int(ambient_dim),
        "model_id": model_id,
        "group_label": group_label,
    }
    Path(destination).write_bytes(_pack(TRAJECTORY_MAGIC, header, states))


def read_trajectory_file(source) -> tuple[dict, np.ndarray]:
    """Read back one trajectory file. Returns (header, states)."""
    blob = Path(source).read_bytes()
    header, body = _unpack(blob, TRAJECTORY_MAGIC, source)
    t, d = int(header["num_steps"]), int(header["ambient_dim"])
    if len(body) != t * d * 4:
        raise ValueError(
            f"size mismatch in {source}: payload {len(body)} bytes, header implies {t * d * 4}"
        )
    return header, np.frombuffer(body, dtype="<f4").reshape(t, d)


def write_embedding_file(
    destination,
    *,
    model_id: str,
    rows: np.ndarray,
) -> None:
    """Write a static token embedding table (vocab_size x ambient_dim)."""
    rows = np.asarray(rows, dtype=np.float32)
    if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
        raise ValueError(f"rows must be a non-empty 2-d table, got shape {rows.shape}")
    _check_finite(rows, "embedding rows")
    header = {
        "model_id": model_id,
        "vocab_size": int(rows.shape[0]),
        "ambient_dim": int(rows.shape[1]),
    }
    Path(destination).write_bytes(_pack(EMBEDDING_MAGIC, header, rows))


def read_embedding_file(source) -> tuple[dict, np.ndarray]:
    """Read back an embedding table. Returns (header, rows)."""
    blob = Path(source).read_bytes()
    header, body = _unpack(blob, EMBEDDING_MAGIC, source)
    v, d = int(header["vocab_size"]), int(header["ambient_dim"])
    if len(body) != v * d * 4:
        raise ValueError(
            f"size mismatch in {source}: payload {len(body)} bytes, header implies {v * d * 4}"
        )
    return header, np.frombuffer(body, dtype="<f4").reshape(v, d)


def write_manifest(
    root,
    *,
    model_id: str,
    num_layers: int,
    temperature: float,
    max_new_tokens: int,
    entries: list[dict],
    embedding_path: str | None = None,
    notes: tuple[str, ...] = (),
) -> Path:
    """Write manifest.json at the dataset root.

    Each entry dict carries relative_path, prompt_id, layer_index and
    group_label. The serialization is canonical (sorted keys, two-space
    indent, trailing newline) so identical datasets produce identical
    bytes.
    """
    doc = {
        "model_id": model_id,
        "num_layers": int(num_layers),
        "decode_config": {
            "temperature": float(temperature),
            "max_new_tokens": int(max_new_tokens),
        },
        "trajectories": [
            {
                "relative_path": e["relative_path"],
                "prompt_id": e["prompt_id"],
                "layer_index": int(e["layer_index"]),
                "group_label": e.get("group_label", ""),
            }
            for e in entries
        ],
    }
    if embedding_path is not None:
        doc["embedding"] = {"relative_path": embedding_path}
    if notes:
        doc["notes"] = list(notes)
    path = Path(root) / MANIFEST_NAME
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def set_manifest_embedding(root, relative_path: str) -> bool:
    """Point an existing manifest at an embedding file.

    Returns True when a manifest was updated, False when the root has
    none yet (the caller then owns writing one later).
    """
    path = Path(root) / MANIFEST_NAME
    if not path.is_file():
        return False
    doc = json.loads(path.read_text(encoding="utf-8"))
    doc["embedding"] = {"relative_path": relative_path}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return True
