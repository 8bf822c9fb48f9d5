"""Model-level analyses built on the estimator kernels: world expressivity,
stimulus-induced dimensionality and volume, the health score, layer profiles,
cumulative expansion curves, and control recomputations.

Everything here is a pure function of (dataset, seed, parameters). Seeded
randomness always draws its indices up front from one generator (or from
`numpy.random.SeedSequence` children with fixed spawn keys), so results are
identical no matter how many workers execute the fan-out.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .estimators import DEFAULT_K, center, information_volume, tle_global
from .stats import DEFAULT_LEVEL, DEFAULT_N_BOOT, BootstrapCI
from .store import EmbeddingMatrix, TrajectoryRecord, TrajectorySet

__all__ = [
    "WorldDimensionality",
    "StimulusSummary",
    "HealthReport",
    "LayerRow",
    "LayerProfile",
    "ExpansionStage",
    "ExpansionCurve",
    "PromptDelta",
    "ControlReport",
    "world_dimensionality",
    "stimulus_dimensionality",
    "stimulus_volume",
    "health_score",
    "health_report",
    "layer_profile",
    "expansion_curve",
    "shuffle_control",
    "truncate_control",
    "alternate_control",
    "DEFAULT_EPSILON",
    "DEFAULT_VOCAB_SAMPLE",
]

DEFAULT_EPSILON = 0.1
DEFAULT_VOCAB_SAMPLE = 20000


# ---------------------------------------------------------------------------
# result containers


@dataclass(frozen=True)
class WorldDimensionality:
    value: float
    sample_size_used: int
    k_used: int
    num_valid_points: int


@dataclass(frozen=True)
class StimulusSummary:
    """Per-prompt values plus their mean (the model-level number) and median."""

    value: float
    median: float
    per_prompt: tuple[tuple[str, float], ...]
    skipped: tuple[str, ...]

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.per_prompt], dtype=np.float64)


@dataclass(frozen=True)
class HealthReport:
    model_id: str
    layer_index: int
    d_world: float
    d_stim: float
    volume: float
    epsilon: float
    h_score: float
    ci_d_stim: BootstrapCI
    ci_volume: BootstrapCI
    ci_h_score: BootstrapCI
    k_used: int
    num_prompts: int
    d_world_sample_size: int
    median_d_stim: float
    median_volume: float
    skipped_prompts: tuple[str, ...]
    warnings: tuple[str, ...]


@dataclass(frozen=True)
class LayerRow:
    layer_index: int
    mean_id: float
    mean_volume: float
    ci_id: BootstrapCI
    ci_volume: BootstrapCI
    num_prompts: int


@dataclass(frozen=True)
class LayerProfile:
    model_id: str
    rows: tuple[LayerRow, ...]
    notices: tuple[str, ...] = ()


@dataclass(frozen=True)
class ExpansionStage:
    num_groups: int
    num_prompts: int
    d_stim: float
    ci: BootstrapCI


@dataclass(frozen=True)
class ExpansionCurve:
    model_id: str
    group_order: tuple[str, ...]
    stages: tuple[ExpansionStage, ...]


@dataclass(frozen=True)
class PromptDelta:
    prompt_id: str
    id_delta: float
    volume_delta: float


@dataclass(frozen=True)
class ControlReport:
    kind: str
    fraction: float | None
    baseline_id: float
    baseline_volume: float
    control_id: float
    control_volume: float
    per_prompt: tuple[PromptDelta, ...]
    skipped: tuple[str, ...]
    note: str = ""


# ---------------------------------------------------------------------------
# helpers


def _pmap(fn, items, threads: int):
    """Ordered map, optionally on a thread pool. Output order is input order
    regardless of scheduling, which keeps downstream merges deterministic."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _child_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def _usable(records: list[TrajectoryRecord], k: int, fallback: bool):
    usable = []
    skipped = []
    for rec in records:
        if fallback or rec.header.num_steps >= k + 2:
            usable.append(rec)
        else:
            skipped.append(rec.header.prompt_id)
    return usable, skipped


def _prompt_id_of(rec: TrajectoryRecord) -> str:
    return rec.header.prompt_id


def _trajectory_id(rec: TrajectoryRecord, k: int, fallback: bool) -> float:
    return tle_global(center(rec.states), k=k, fallback=fallback).global_id


def _trajectory_volume(rec: TrajectoryRecord) -> float:
    return information_volume(rec.states)


def _percentile_ci(point: float, resampled: np.ndarray, level: float, n_boot: int, seed: int) -> BootstrapCI:
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(resampled, [tail, 1.0 - tail])
    return BootstrapCI(point=float(point), lower=float(lo), upper=float(hi),
                       level=level, n_boot=n_boot, seed=seed)


# ---------------------------------------------------------------------------
# operations


def world_dimensionality(
    embedding: EmbeddingMatrix,
    sample_size: int = DEFAULT_VOCAB_SAMPLE,
    seed: int = 0,
    k: int = DEFAULT_K,
) -> WorldDimensionality:
    """Intrinsic dimensionality of the static embedding table.

    Rows are subsampled uniformly without replacement down to
    min(sample_size, vocab_size) with the given seed; when the whole table
    fits, no randomness is consumed and the seed is irrelevant.
    """
    if sample_size < 1:
        raise ValueError(f"sample_size must be positive, got {sample_size}")
    rows = np.asarray(embedding.rows, dtype=np.float64)
    vocab = rows.shape[0]
    if sample_size >= vocab:
        picked = rows
    else:
        rng = np.random.default_rng(seed)
        picked = rows[rng.choice(vocab, size=sample_size, replace=False)]
    est = tle_global(picked, k=k)
    return WorldDimensionality(
        value=est.global_id,
        sample_size_used=picked.shape[0],
        k_used=est.k_used,
        num_valid_points=est.num_valid_points,
    )


def _stimulus_summary(
    tset: TrajectorySet,
    layer,
    k: int,
    fallback: bool,
    threads: int,
    kernel,
) -> StimulusSummary:
    layer_index = tset.resolve_layer(layer)
    records = tset.at_layer(layer_index)
    usable, skipped = _usable(records, k, fallback)
    if not usable:
        raise ValueError(f"zero usable prompts at layer {layer_index}")
    values = _pmap(kernel, usable, threads)
    arr = np.array(values, dtype=np.float64)
    return StimulusSummary(
        value=float(arr.mean()),
        median=float(np.median(arr)),
        per_prompt=tuple((rec.header.prompt_id, float(v)) for rec, v in zip(usable, values)),
        skipped=tuple(skipped),
    )


def stimulus_dimensionality(
    tset: TrajectorySet,
    layer="final",
    k: int = DEFAULT_K,
    fallback: bool = False,
    threads: int = 1,
) -> StimulusSummary:
    """Mean per-prompt trajectory dimensionality at one layer.

    Each prompt's trajectory is centered and estimated on its own; prompts
    shorter than k+2 steps are skipped (and listed) unless fallback is set.
    """
    return _stimulus_summary(
        tset, layer, k, fallback, threads,
        kernel=lambda rec: _trajectory_id(rec, k, fallback),
    )


def stimulus_volume(
    tset: TrajectorySet,
    layer="final",
    k: int = DEFAULT_K,
    fallback: bool = False,
    threads: int = 1,
) -> StimulusSummary:
    """Mean per-prompt information volume at one layer.

    The skip rule matches stimulus_dimensionality (k+2 steps) even though the
    volume alone would tolerate shorter trajectories: the two summaries must
    cover the same prompt set so that paired bootstraps line up.
    """
    return _stimulus_summary(
        tset, layer, k, fallback, threads,
        kernel=_trajectory_volume,
    )


def health_score(
    d_world: float,
    d_stim: float,
    volume: float,
    epsilon: float = DEFAULT_EPSILON,
) -> float:
    """log(d_world) * volume * exp(-epsilon * d_stim).

    Warns (does not raise) when d_world <= 1 forces a non-positive score.
    The exponential is applied to -epsilon*d_stim so that huge d_stim
    underflows to zero instead of overflowing.
    """
    if d_world <= 0.0:
        raise ValueError(f"d_world must be positive, got {d_world}")
    if d_stim <= 0.0:
        raise ValueError(f"d_stim must be positive, got {d_stim}")
    if volume < 0.0:
        raise ValueError(f"volume must be nonnegative, got {volume}")
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if d_world <= 1.0:
        warnings.warn(
            f"d_world={d_world} <= 1 makes the health score non-positive",
            RuntimeWarning,
            stacklevel=2,
        )
    return math.log(d_world) * volume * math.exp(-epsilon * d_stim)


def health_report(
    tset: TrajectorySet,
    layer="final",
    k: int = DEFAULT_K,
    epsilon: float = DEFAULT_EPSILON,
    n_boot: int = DEFAULT_N_BOOT,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
    vocab_sample: int = DEFAULT_VOCAB_SAMPLE,
    fallback: bool = False,
    threads: int = 1,
) -> HealthReport:
    """The full health diagnostic for one dataset.

    World dimensionality comes from the embedding table and is held fixed;
    the bootstrap resamples prompts (one shared index matrix) and recomputes
    the stimulus mean, the volume mean, and the score per resample.
    """
    if tset.embedding is None:
        raise ValueError("missing embedding: dataset declares no embedding table")
    world = world_dimensionality(tset.embedding, sample_size=vocab_sample, seed=seed, k=k)
    ids = stimulus_dimensionality(tset, layer=layer, k=k, fallback=fallback, threads=threads)
    vols = stimulus_volume(tset, layer=layer, k=k, fallback=fallback, threads=threads)

    id_values = ids.values()
    vol_values = vols.values()
    n = id_values.size
    collected: list[str] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        h = health_score(world.value, ids.value, vols.value, epsilon)
        collected.extend(str(w.message) for w in caught)

    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(n_boot, n))
    id_b = id_values[idx].mean(axis=1)
    vol_b = vol_values[idx].mean(axis=1)
    log_world = math.log(world.value)
    h_b = log_world * vol_b * np.exp(-epsilon * id_b)

    return HealthReport(
        model_id=tset.model_id,
        layer_index=tset.resolve_layer(layer),
        d_world=world.value,
        d_stim=ids.value,
        volume=vols.value,
        epsilon=epsilon,
        h_score=h,
        ci_d_stim=_percentile_ci(ids.value, id_b, level, n_boot, seed),
        ci_volume=_percentile_ci(vols.value, vol_b, level, n_boot, seed),
        ci_h_score=_percentile_ci(h, h_b, level, n_boot, seed),
        k_used=k,
        num_prompts=n,
        d_world_sample_size=world.sample_size_used,
        median_d_stim=ids.median,
        median_volume=vols.median,
        skipped_prompts=ids.skipped,
        warnings=tuple(collected),
    )


def layer_profile(
    tset: TrajectorySet,
    k: int = DEFAULT_K,
    n_boot: int = DEFAULT_N_BOOT,
    level: float = DEFAULT_LEVEL,
    seed: int = 0,
    fallback: bool = False,
    threads: int = 1,
) -> LayerProfile:
    """Mean dimensionality and volume per layer, with bootstrap intervals.

    Layers where every prompt is too short are omitted and mentioned in the
    notices. Child seeds are derived per (layer, metric) so the profile is
    reproducible and independent of evaluation order.
    """
    layers = tset.layers()
    if not layers:
        raise ValueError("empty trajectory set")

    rows: list[LayerRow] = []
    notices: list[str] = []
    for layer_index in layers:
        records = tset.at_layer(layer_index)
        usable, skipped = _usable(records, k, fallback)
        if not usable:
            notices.append(f"layer {layer_index} omitted: zero usable prompts")
            continue
        ids = np.array(
            _pmap(lambda rec: _trajectory_id(rec, k, fallback), usable, threads)
        )
        vols = np.array(_pmap(_trajectory_volume, usable, threads))
        if skipped:
            notices.append(
                f"layer {layer_index}: skipped {len(skipped)} short prompt(s)"
            )
        ci_id = _bootstrap_mean_ci(ids, n_boot, level, _child_seed(seed, layer_index, 0))
        ci_vol = _bootstrap_mean_ci(vols, n_boot, level, _child_seed(seed, layer_index, 1))
        rows.append(
            LayerRow(
                layer_index=layer_index,
                mean_id=float(ids.mean()),
                mean_volume=float(vols.mean()),
                ci_id=ci_id,
                ci_volume=ci_vol,
                num_prompts=len(usable),
            )
        )
    if not rows:
        raise ValueError("no layer had a usable prompt")
    return LayerProfile(model_id=tset.model_id, rows=tuple(rows), notices=tuple(notices))


def _bootstrap_mean_ci(values: np.ndarray, n_boot: int, level: float, seed: int) -> BootstrapCI:
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    return _percentile_ci(float(values.mean()), values[idx].mean(axis=1), level, n_boot, seed)


def expansion_curve(
    tset: TrajectorySet,
    group_order: list[str] | None = None,
    seed: int = 0,
    layer="final",
    k: int = DEFAULT_K,
    n_boot: int = DEFAULT_N_BOOT,
    level: float = DEFAULT_LEVEL,
    threads: int = 1,
) -> ExpansionCurve:
    """Dimensionality of cumulatively pooled prompt groups.

    Stage s pools the centered final-layer states of every trajectory in the
    first s groups (each trajectory centered by its own mean) and estimates
    the pooled cloud. The bootstrap resamples prompts within each group, so
    group sizes stay fixed across resamples.
    """
    layer_index = tset.resolve_layer(layer)
    records = tset.at_layer(layer_index)
    by_group: dict[str, list[TrajectoryRecord]] = {}
    for rec in records:
        label = rec.header.group_label
        if label:
            by_group.setdefault(label, []).append(rec)
    if group_order is None:
        group_order = sorted(by_group)
    if not group_order:
        raise ValueError("no nonempty group labels in the dataset")
    for label in group_order:
        if label not in by_group:
            raise ValueError(f"unknown label in group order: {label!r}")

    centered = {
        label: [center(rec.states) for rec in group]
        for label, group in by_group.items()
    }

    def pooled_estimate(parts: list[np.ndarray]) -> float:
        cloud = np.vstack(parts)
        if cloud.shape[0] < k + 2:
            raise ValueError(
                f"stage below minimum size: {cloud.shape[0]} pooled steps, need {k + 2}"
            )
        return tle_global(cloud, k=k).global_id

    stages: list[ExpansionStage] = []
    for s in range(1, len(group_order) + 1):
        active = group_order[:s]
        parts = [m for label in active for m in centered[label]]
        point = pooled_estimate(parts)
        num_prompts = sum(len(centered[label]) for label in active)

        rng = np.random.default_rng(_child_seed(seed, s))
        draws = [
            {label: rng.integers(0, len(centered[label]), size=len(centered[label]))
             for label in active}
            for _ in range(n_boot)
        ]

        def resample(draw: dict[str, np.ndarray]) -> float:
            parts_b = [
                centered[label][i]
                for label in active
                for i in draw[label]
            ]
            return pooled_estimate(parts_b)

        resampled = np.array(_pmap(resample, draws, threads), dtype=np.float64)
        stages.append(
            ExpansionStage(
                num_groups=s,
                num_prompts=num_prompts,
                d_stim=point,
                ci=_percentile_ci(point, resampled, level, n_boot, _child_seed(seed, s)),
            )
        )
    return ExpansionCurve(
        model_id=tset.model_id,
        group_order=tuple(group_order),
        stages=tuple(stages),
    )


def _paired_metrics(
    state_arrays: list[np.ndarray],
    k: int,
    fallback: bool,
    threads: int,
) -> tuple[np.ndarray, np.ndarray]:
    def one(states: np.ndarray) -> tuple[float, float]:
        return (
            tle_global(center(states), k=k, fallback=fallback).global_id,
            information_volume(states),
        )

    pairs = _pmap(one, state_arrays, threads)
    ids = np.array([p[0] for p in pairs], dtype=np.float64)
    vols = np.array([p[1] for p in pairs], dtype=np.float64)
    return ids, vols


_SHUFFLE_NOTE = (
    "dimensionality and volume are order-invariant set functionals, so a "
    "step-order shuffle cannot move them beyond numerical noise; this run "
    "asserts |delta| <= 1e-9 per prompt. Any order sensitivity observed "
    "elsewhere must come from quantities outside these two metrics."
)


def shuffle_control(
    tset: TrajectorySet,
    seed: int = 0,
    layer="final",
    k: int = DEFAULT_K,
    fallback: bool = False,
    threads: int = 1,
) -> ControlReport:
    """Recompute both metrics after shuffling each trajectory's step order.

    Acts as a self-check of permutation invariance: per-prompt deltas above
    1e-9 raise instead of being reported quietly.
    """
    layer_index = tset.resolve_layer(layer)
    usable, skipped = _usable(tset.at_layer(layer_index), k, fallback)
    if not usable:
        raise ValueError(f"zero usable prompts at layer {layer_index}")

    base_ids, base_vols = _paired_metrics([rec.states for rec in usable], k, fallback, threads)

    shuffled = []
    for i, rec in enumerate(usable):
        rng = np.random.default_rng(_child_seed(seed, i))
        shuffled.append(rec.states[rng.permutation(rec.header.num_steps)])
    ctrl_ids, ctrl_vols = _paired_metrics(shuffled, k, fallback, threads)

    deltas = tuple(
        PromptDelta(
            prompt_id=rec.header.prompt_id,
            id_delta=float(ci - bi),
            volume_delta=float(cv - bv),
        )
        for rec, bi, bv, ci, cv in zip(usable, base_ids, base_vols, ctrl_ids, ctrl_vols)
    )
    worst = max(
        (max(abs(d.id_delta), abs(d.volume_delta)) for d in deltas), default=0.0
    )
    if worst > 1e-9:
        raise RuntimeError(
            f"permutation invariance self-check failed: max |delta| = {worst:.3e}"
        )
    return ControlReport(
        kind="shuffled-order",
        fraction=None,
        baseline_id=float(base_ids.mean()),
        baseline_volume=float(base_vols.mean()),
        control_id=float(ctrl_ids.mean()),
        control_volume=float(ctrl_vols.mean()),
        per_prompt=deltas,
        skipped=tuple(skipped),
        note=_SHUFFLE_NOTE,
    )


def truncate_control(
    tset: TrajectorySet,
    fractions: tuple[float, ...] = (0.25, 0.5, 0.75),
    layer="final",
    k: int = DEFAULT_K,
    fallback: bool = False,
    threads: int = 1,
) -> list[ControlReport]:
    """Recompute both metrics on length-truncated trajectories.

    For each fraction f the first ceil(f*T) steps are kept. Prompts whose
    truncated length drops below k+2 are skipped (unless fallback) and
    listed. Baseline numbers are computed over the same prompts as the
    truncated numbers so the deltas are like-for-like.
    """
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fraction must be in (0, 1], got {f}")
    layer_index = tset.resolve_layer(layer)
    records = tset.at_layer(layer_index)
    if not records:
        raise ValueError(f"zero usable prompts at layer {layer_index}")

    reports: list[ControlReport] = []
    for f in fractions:
        usable: list[TrajectoryRecord] = []
        skipped: list[str] = []
        for rec in records:
            kept = math.ceil(f * rec.header.num_steps)
            if fallback or kept >= k + 2:
                usable.append(rec)
            else:
                skipped.append(rec.header.prompt_id)
        if not usable:
            reports.append(
                ControlReport(
                    kind="truncated",
                    fraction=f,
                    baseline_id=float("nan"),
                    baseline_volume=float("nan"),
                    control_id=float("nan"),
                    control_volume=float("nan"),
                    per_prompt=(),
                    skipped=tuple(skipped),
                    note="every prompt fell below the minimum usable length",
                )
            )
            continue

        base_ids, base_vols = _paired_metrics(
            [rec.states for rec in usable], k, fallback, threads
        )
        prefixes = [
            rec.states[: math.ceil(f * rec.header.num_steps)] for rec in usable
        ]
        ctrl_ids, ctrl_vols = _paired_metrics(prefixes, k, fallback, threads)
        reports.append(
            ControlReport(
                kind="truncated",
                fraction=f,
                baseline_id=float(base_ids.mean()),
                baseline_volume=float(base_vols.mean()),
                control_id=float(ctrl_ids.mean()),
                control_volume=float(ctrl_vols.mean()),
                per_prompt=tuple(
                    PromptDelta(
                        prompt_id=rec.header.prompt_id,
                        id_delta=float(ci - bi),
                        volume_delta=float(cv - bv),
                    )
                    for rec, bi, bv, ci, cv in zip(
                        usable, base_ids, base_vols, ctrl_ids, ctrl_vols
                    )
                ),
                skipped=tuple(skipped),
            )
        )
    return reports


def alternate_control(
    tset: TrajectorySet,
    alternate: TrajectorySet,
    layer="final",
    k: int = DEFAULT_K,
    fallback: bool = False,
    threads: int = 1,
) -> ControlReport:
    """Compare model-level metrics against a user-supplied alternate dataset.

    Per-prompt deltas cover only prompt ids present in both sets; aggregate
    deltas use each set's own usable prompts.
    """
    base_summary_id = stimulus_dimensionality(tset, layer=layer, k=k, fallback=fallback, threads=threads)
    base_summary_vol = stimulus_volume(tset, layer=layer, k=k, fallback=fallback, threads=threads)
    alt_summary_id = stimulus_dimensionality(alternate, layer=layer, k=k, fallback=fallback, threads=threads)
    alt_summary_vol = stimulus_volume(alternate, layer=layer, k=k, fallback=fallback, threads=threads)

    base_ids = dict(base_summary_id.per_prompt)
    base_vols = dict(base_summary_vol.per_prompt)
    alt_ids = dict(alt_summary_id.per_prompt)
    alt_vols = dict(alt_summary_vol.per_prompt)
    shared = sorted(set(base_ids) & set(alt_ids))

    return ControlReport(
        kind="alternate-stimuli",
        fraction=None,
        baseline_id=base_summary_id.value,
        baseline_volume=base_summary_vol.value,
        control_id=alt_summary_id.value,
        control_volume=alt_summary_vol.value,
        per_prompt=tuple(
            PromptDelta(
                prompt_id=pid,
                id_delta=float(alt_ids[pid] - base_ids[pid]),
                volume_delta=float(alt_vols[pid] - base_vols[pid]),
            )
            for pid in shared
        ),
        skipped=tuple(base_summary_id.skipped) + tuple(alt_summary_id.skipped),
        note="alternate stimuli supplied as a second dataset",
    )
