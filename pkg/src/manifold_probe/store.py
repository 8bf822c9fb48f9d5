"""Bit-exact on-disk formats for trajectories, embedding matrices and run
manifests, plus validation and ingestion.

Trajectory file layout, fixed across platforms:

    [5 bytes magic "MTRJ1"]
    [u32 little-endian header length]
    [UTF-8 JSON header]
    [T * d IEEE-754 binary32 little-endian values, row-major]

Embedding files use magic "MEMB1" with the same layout. A dataset is a
directory holding one ``manifest.json`` at its root plus the files the
manifest lists (paths relative to the root).

Payloads are 32-bit on disk and in the record objects, so a write followed
by a read reproduces the record bit-exactly; estimators upcast to 64-bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TRAJECTORY_MAGIC",
    "EMBEDDING_MAGIC",
    "TrajectoryHeader",
    "TrajectoryRecord",
    "EmbeddingMatrix",
    "DecodeConfig",
    "ManifestEntry",
    "Manifest",
    "EntryResult",
    "ValidationReport",
    "TrajectorySet",
    "write_trajectory",
    "read_trajectory",
    "write_embeddings",
    "read_embeddings",
    "save_manifest",
    "load_manifest",
    "validate_manifest",
    "load_dataset",
    "MANIFEST_NAME",
]

TRAJECTORY_MAGIC = b"MTRJ1"
EMBEDDING_MAGIC = b"MEMB1"
MANIFEST_NAME = "manifest.json"

_LEN_FMT = "<I"
_PREFIX = len(TRAJECTORY_MAGIC) + struct.calcsize(_LEN_FMT)


@dataclass(frozen=True)
class TrajectoryHeader:
    prompt_id: str
    layer_index: int
    num_steps: int
    ambient_dim: int
    model_id: str
    group_label: str = ""

    def __post_init__(self) -> None:
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.ambient_dim < 1:
            raise ValueError(f"ambient_dim must be >= 1, got {self.ambient_dim}")
        if self.layer_index < 0:
            raise ValueError(f"layer_index must be >= 0, got {self.layer_index}")


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """One per-prompt, per-layer state sequence. States are float32."""

    header: TrajectoryHeader
    states: np.ndarray

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.float32)
        if states.shape != (self.header.num_steps, self.header.ambient_dim):
            raise ValueError(
                "size mismatch: states shape "
                f"{states.shape} vs header ({self.header.num_steps}, {self.header.ambient_dim})"
            )
        object.__setattr__(self, "states", states)


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Static token embedding table. Rows are float32."""

    model_id: str
    vocab_size: int
    ambient_dim: int
    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float32)
        if rows.shape != (self.vocab_size, self.ambient_dim):
            raise ValueError(
                f"size mismatch: rows shape {rows.shape} vs "
                f"({self.vocab_size}, {self.ambient_dim})"
            )
        object.__setattr__(self, "rows", rows)


@dataclass(frozen=True)
class DecodeConfig:
    temperature: float
    max_new_tokens: int


@dataclass(frozen=True)
class ManifestEntry:
    relative_path: str
    prompt_id: str
    layer_index: int
    group_label: str = ""


@dataclass(frozen=True)
class Manifest:
    model_id: str
    num_layers: int
    decode_config: DecodeConfig
    trajectories: tuple[ManifestEntry, ...]
    embedding_path: str | None = None
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class EntryResult:
    path: str
    ok: bool
    reason: str = ""


@dataclass(frozen=True)
class ValidationReport:
    entries: tuple[EntryResult, ...]

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.entries)

    def failures(self) -> list[EntryResult]:
        return [e for e in self.entries if not e.ok]


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


def write_trajectory(record: TrajectoryRecord, destination) -> None:
    """Serialize one record. Raises on non-finite entries; bit-exact under
    a subsequent read_trajectory."""
    _check_finite(record.states, "trajectory states")
    h = record.header
    header = {
        "prompt_id": h.prompt_id,
        "layer_index": h.layer_index,
        "num_steps": h.num_steps,
        "ambient_dim": h.ambient_dim,
        "model_id": h.model_id,
        "group_label": h.group_label,
    }
    Path(destination).write_bytes(_pack(TRAJECTORY_MAGIC, header, record.states))


def read_trajectory(source) -> TrajectoryRecord:
    """Parse one trajectory file, checking magic, sizes and finiteness."""
    blob = Path(source).read_bytes()
    header, body = _unpack(blob, TRAJECTORY_MAGIC, source)
    t, d = int(header["num_steps"]), int(header["ambient_dim"])
    expected = t * d * 4
    if len(body) != expected:
        raise ValueError(
            f"size mismatch in {source}: payload {len(body)} bytes, header implies {expected}"
        )
    states = np.frombuffer(body, dtype="<f4").reshape(t, d)
    _check_finite(states, f"trajectory payload of {source}")
    return TrajectoryRecord(
        header=TrajectoryHeader(
            prompt_id=str(header["prompt_id"]),
            layer_index=int(header["layer_index"]),
            num_steps=t,
            ambient_dim=d,
            model_id=str(header["model_id"]),
            group_label=str(header.get("group_label", "")),
        ),
        states=states,
    )


def write_embeddings(matrix: EmbeddingMatrix, destination) -> None:
    _check_finite(matrix.rows, "embedding rows")
    header = {
        "model_id": matrix.model_id,
        "vocab_size": matrix.vocab_size,
        "ambient_dim": matrix.ambient_dim,
    }
    Path(destination).write_bytes(_pack(EMBEDDING_MAGIC, header, matrix.rows))


def read_embeddings(source) -> EmbeddingMatrix:
    blob = Path(source).read_bytes()
    header, body = _unpack(blob, EMBEDDING_MAGIC, source)
    v, d = int(header["vocab_size"]), int(header["ambient_dim"])
    expected = v * d * 4
    if len(body) != expected:
        raise ValueError(
            f"size mismatch in {source}: payload {len(body)} bytes, header implies {expected}"
        )
    rows = np.frombuffer(body, dtype="<f4").reshape(v, d)
    _check_finite(rows, f"embedding payload of {source}")
    return EmbeddingMatrix(
        model_id=str(header["model_id"]), vocab_size=v, ambient_dim=d, rows=rows
    )


def save_manifest(manifest: Manifest, root) -> None:
    doc = {
        "model_id": manifest.model_id,
        "num_layers": manifest.num_layers,
        "decode_config": {
            "temperature": manifest.decode_config.temperature,
            "max_new_tokens": manifest.decode_config.max_new_tokens,
        },
        "trajectories": [
            {
                "relative_path": e.relative_path,
                "prompt_id": e.prompt_id,
                "layer_index": e.layer_index,
                "group_label": e.group_label,
            }
            for e in manifest.trajectories
        ],
    }
    if manifest.embedding_path is not None:
        doc["embedding"] = {"relative_path": manifest.embedding_path}
    if manifest.notes:
        doc["notes"] = list(manifest.notes)
    path = Path(root) / MANIFEST_NAME
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_manifest(root) -> Manifest:
    """Parse manifest.json under ``root``.

    Raises FileNotFoundError ("missing manifest") when absent, ValueError
    when unparseable.
    """
    path = Path(root) / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"missing manifest: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        entries = tuple(
            ManifestEntry(
                relative_path=str(e["relative_path"]),
                prompt_id=str(e["prompt_id"]),
                layer_index=int(e["layer_index"]),
                group_label=str(e.get("group_label", "")),
            )
            for e in doc["trajectories"]
        )
        embedding = doc.get("embedding")
        return Manifest(
            model_id=str(doc["model_id"]),
            num_layers=int(doc["num_layers"]),
            decode_config=DecodeConfig(
                temperature=float(doc["decode_config"]["temperature"]),
                max_new_tokens=int(doc["decode_config"]["max_new_tokens"]),
            ),
            trajectories=entries,
            embedding_path=None if embedding is None else str(embedding["relative_path"]),
            notes=tuple(str(n) for n in doc.get("notes", ())),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"unparseable manifest {path}: {exc}") from exc


def validate_manifest(root) -> ValidationReport:
    """Check every manifest entry: existence, parseability, header agreement,
    layer range, and (prompt_id, layer_index) uniqueness. Read-only."""
    rootp = Path(root)
    manifest = load_manifest(rootp)
    results: list[EntryResult] = []
    seen: set[tuple[str, int]] = set()

    for entry in manifest.trajectories:
        path = rootp / entry.relative_path
        key = (entry.prompt_id, entry.layer_index)
        if key in seen:
            results.append(
                EntryResult(entry.relative_path, False, f"duplicate key {key}")
            )
            continue
        seen.add(key)
        if not path.is_file():
            results.append(EntryResult(entry.relative_path, False, "missing file"))
            continue
        try:
            record = read_trajectory(path)
        except ValueError as exc:
            results.append(EntryResult(entry.relative_path, False, str(exc)))
            continue
        h = record.header
        if (h.prompt_id, h.layer_index, h.group_label) != (
            entry.prompt_id,
            entry.layer_index,
            entry.group_label,
        ):
            results.append(
                EntryResult(entry.relative_path, False, "header disagrees with manifest entry")
            )
        elif h.layer_index >= manifest.num_layers:
            results.append(
                EntryResult(
                    entry.relative_path,
                    False,
                    f"layer index {h.layer_index} outside declared {manifest.num_layers} layers",
                )
            )
        else:
            results.append(EntryResult(entry.relative_path, True))

    if manifest.embedding_path is not None:
        epath = rootp / manifest.embedding_path
        if not epath.is_file():
            results.append(EntryResult(manifest.embedding_path, False, "missing file"))
        else:
            try:
                read_embeddings(epath)
                results.append(EntryResult(manifest.embedding_path, True))
            except ValueError as exc:
                results.append(EntryResult(manifest.embedding_path, False, str(exc)))

    return ValidationReport(entries=tuple(results))


@dataclass(frozen=True)
class TrajectorySet:
    """A loaded dataset: every record plus the manifest metadata."""

    model_id: str
    num_layers: int
    decode_config: DecodeConfig
    records: tuple[TrajectoryRecord, ...]
    embedding: EmbeddingMatrix | None = None
    notes: tuple[str, ...] = ()

    def layers(self) -> list[int]:
        return sorted({r.header.layer_index for r in self.records})

    def final_layer(self) -> int:
        return self.num_layers - 1

    def resolve_layer(self, selector) -> int:
        if selector in (None, "final"):
            return self.final_layer()
        return int(selector)

    def at_layer(self, layer_index: int) -> list[TrajectoryRecord]:
        """Records at one layer, ordered by prompt_id for determinism."""
        picked = [r for r in self.records if r.header.layer_index == layer_index]
        picked.sort(key=lambda r: r.header.prompt_id)
        return picked

    def group_labels(self) -> list[str]:
        return sorted({r.header.group_label for r in self.records if r.header.group_label})


def load_dataset(root, force: bool = False) -> TrajectorySet:
    """Load a full dataset after validating it.

    A failing validation aborts the load unless ``force`` is set; the
    offending entries are listed in the error.
    """
    rootp = Path(root)
    manifest = load_manifest(rootp)
    report = validate_manifest(rootp)
    if not report.passed and not force:
        bad = "; ".join(f"{e.path}: {e.reason}" for e in report.failures())
        raise ValueError(f"dataset fails validation ({bad})")

    records = []
    for entry in manifest.trajectories:
        path = rootp / entry.relative_path
        if force and not path.is_file():
            continue
        try:
            records.append(read_trajectory(path))
        except ValueError:
            if not force:
                raise
    embedding = None
    if manifest.embedding_path is not None:
        epath = rootp / manifest.embedding_path
        if epath.is_file():
            embedding = read_embeddings(epath)
    return TrajectorySet(
        model_id=manifest.model_id,
        num_layers=manifest.num_layers,
        decode_config=manifest.decode_config,
        records=tuple(records),
        embedding=embedding,
        notes=manifest.notes,
    )
