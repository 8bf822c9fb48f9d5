"""Synthetic data builders shared across the test suite.

Everything is seeded and writes through the public store API, so the
fixtures double as an exercise of the file formats.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from manifold_probe import (
    DecodeConfig,
    EmbeddingMatrix,
    Manifest,
    ManifestEntry,
    TrajectoryHeader,
    TrajectoryRecord,
    save_manifest,
    write_embeddings,
    write_trajectory,
)


def random_rotation(ambient: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((ambient, ambient)))
    # fix the sign convention so the factorization is unique
    return q * np.sign(np.diag(r))


def hypercube_cloud(n: int, true_dim: int, ambient: int, seed: int) -> np.ndarray:
    """Uniform hypercube in true_dim coordinates, rotated into R^ambient."""
    rng = np.random.default_rng(seed)
    flat = np.zeros((n, ambient))
    flat[:, :true_dim] = rng.uniform(-0.5, 0.5, size=(n, true_dim))
    return flat @ random_rotation(ambient, rng).T


def subspace_walk(
    num_steps: int,
    true_dim: int,
    ambient: int,
    rng: np.random.Generator,
    scale: float = 1.0,
) -> np.ndarray:
    """Gaussian point set confined to a random true_dim-dim linear subspace."""
    basis, _ = np.linalg.qr(rng.standard_normal((ambient, true_dim)))
    coords = rng.standard_normal((num_steps, true_dim)) * scale
    return coords @ basis.T


def write_dataset(
    root,
    model_id: str,
    num_layers: int,
    records: list[TrajectoryRecord],
    embedding: EmbeddingMatrix | None = None,
    temperature: float = 0.7,
    max_new_tokens: int = 128,
    notes: tuple[str, ...] = (),
) -> Path:
    """Write records (and optionally an embedding table) plus the manifest."""
    rootp = Path(root)
    rootp.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        h = rec.header
        rel = f"traj_{h.prompt_id}_L{h.layer_index:03d}.bin"
        write_trajectory(rec, rootp / rel)
        entries.append(ManifestEntry(rel, h.prompt_id, h.layer_index, h.group_label))
    embedding_path = None
    if embedding is not None:
        embedding_path = "embeddings.bin"
        write_embeddings(embedding, rootp / embedding_path)
    save_manifest(
        Manifest(
            model_id=model_id,
            num_layers=num_layers,
            decode_config=DecodeConfig(temperature, max_new_tokens),
            trajectories=tuple(entries),
            embedding_path=embedding_path,
            notes=notes,
        ),
        rootp,
    )
    return rootp


def make_health_dataset(
    root,
    seed: int = 0,
    num_prompts: int = 8,
    num_layers: int = 2,
    num_steps: int = 48,
    ambient: int = 24,
    true_dim: int = 4,
    vocab: int = 600,
) -> Path:
    """Small all-purpose dataset with an embedding table at every layer."""
    rng = np.random.default_rng(seed)
    records = []
    for p in range(num_prompts):
        pid = f"p{p:03d}"
        for layer in range(num_layers):
            states = subspace_walk(num_steps, true_dim, ambient, rng)
            records.append(
                TrajectoryRecord(
                    TrajectoryHeader(pid, layer, num_steps, ambient, "synth-health"),
                    states.astype(np.float32),
                )
            )
    emb = EmbeddingMatrix(
        "synth-health", vocab, ambient,
        rng.standard_normal((vocab, ambient)).astype(np.float32),
    )
    return write_dataset(root, "synth-health", num_layers, records, embedding=emb)


def make_depth_dataset(
    root,
    seed: int = 0,
    num_prompts: int = 10,
    num_steps: int = 64,
    ambient: int = 32,
) -> Path:
    """Depth suite: true dimension drops 9..1 across nine layers while the
    signal variance rises layer over layer.

    The per-layer scale is solved from a target volume schedule so the mean
    volume column grows by a wide margin even though deeper layers span
    fewer directions.
    """
    rng = np.random.default_rng(seed)
    num_layers = 9
    records = []
    for layer in range(num_layers):
        true_dim = 9 - layer
        v_target = 16.0 + 8.0 * layer
        # V ~ (m/2) log(1 + (ambient/T) * T * c^2) per active direction
        c = math.sqrt(math.expm1(2.0 * v_target / true_dim) / ambient)
        for p in range(num_prompts):
            pid = f"p{p:03d}"
            states = subspace_walk(num_steps, true_dim, ambient, rng, scale=c)
            records.append(
                TrajectoryRecord(
                    TrajectoryHeader(pid, layer, num_steps, ambient, "synth-depth"),
                    states.astype(np.float32),
                )
            )
    return write_dataset(root, "synth-depth", num_layers, records)


def make_expansion_dataset(
    root,
    seed: int = 0,
    num_groups: int = 5,
    prompts_per_group: int = 2,
    num_steps: int = 11,
    ambient: int = 32,
) -> Path:
    """Expansion suite: group g walks inside its own 2-dim plane, the planes
    mutually orthogonal, so pooling more groups raises the spanned dimension.

    Group sizes are kept small next to the neighborhood size on purpose.
    With only 22 points per plane a 20-neighborhood reaches across planes at
    every stage, so each added group keeps lifting the local estimates; large
    per-plane clouds would let neighborhoods collapse back into their own
    plane and flatten the curve."""
    rng = np.random.default_rng(seed)
    rotation = random_rotation(ambient, rng)
    records = []
    for g in range(num_groups):
        label = f"group{g}"
        plane = rotation[:, 2 * g : 2 * g + 2]
        for p in range(prompts_per_group):
            pid = f"g{g}p{p:02d}"
            coords = rng.standard_normal((num_steps, 2))
            states = coords @ plane.T
            records.append(
                TrajectoryRecord(
                    TrajectoryHeader(pid, 0, num_steps, ambient, "synth-expand", label),
                    states.astype(np.float32),
                )
            )
    return write_dataset(root, "synth-expand", 1, records)
