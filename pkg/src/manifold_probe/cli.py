"""Command-line entry point.

Subcommands: validate, health, profile, expand, controls, correlate.
Reports are JSON by default with flat CSV mirrors for plotting; outputs are
byte-stable across reruns for a fixed config and seed (sorted keys, no
timestamps, full-precision floats).

Exit codes: 0 success, 1 data or contract error, 2 environment error.
The worker pool for per-trajectory fan-out is sized by --threads and capped
by the MANIFOLD_PROBE_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics
from .diagnostics import DEFAULT_EPSILON, DEFAULT_VOCAB_SAMPLE
from .estimators import DEFAULT_K
from .stats import DEFAULT_LEVEL, DEFAULT_N_BOOT, BootstrapCI, spearman
from .store import load_dataset, validate_manifest

__all__ = [
    "RunConfig",
    "cmd_validate",
    "cmd_health",
    "cmd_profile",
    "cmd_expand",
    "cmd_controls",
    "cmd_correlate",
    "main",
]

THREADS_ENV = "MANIFOLD_PROBE_THREADS"


@dataclass(frozen=True)
class RunConfig:
    dataset_root: str | None
    k: int = DEFAULT_K
    epsilon: float = DEFAULT_EPSILON
    layer: str = "final"
    n_boot: int = DEFAULT_N_BOOT
    level: float = DEFAULT_LEVEL
    seed: int = 0
    output: str | None = None
    format: str = "json"
    vocab_sample: int = DEFAULT_VOCAB_SAMPLE
    fallback_k: bool = False
    force: bool = False
    threads: int = 0

    def resolved_layer(self):
        return "final" if self.layer == "final" else int(self.layer)

    def resolved_threads(self) -> int:
        wanted = self.threads if self.threads > 0 else min(4, os.cpu_count() or 1)
        cap = os.environ.get(THREADS_ENV)
        if cap:
            wanted = min(wanted, max(1, int(cap)))
        return max(1, wanted)


# ---------------------------------------------------------------------------
# serialization


def _num(x: float):
    """JSON-safe float: NaN and infinities become null."""
    x = float(x)
    return x if math.isfinite(x) else None


def _ci(ci: BootstrapCI) -> dict:
    return {
        "point": _num(ci.point),
        "lower": _num(ci.lower),
        "upper": _num(ci.upper),
        "level": ci.level,
        "n_boot": ci.n_boot,
        "seed": ci.seed,
    }


def _dump_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _csv_text(column_names: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(column_names)
    writer.writerows(rows)
    return buf.getvalue()


def _emit(text: str, output: str | None) -> None:
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def _control_doc(report: diagnostics.ControlReport) -> dict:
    return {
        "kind": report.kind,
        "fraction": report.fraction,
        "baseline": {"id": _num(report.baseline_id), "volume": _num(report.baseline_volume)},
        "control": {"id": _num(report.control_id), "volume": _num(report.control_volume)},
        "per_prompt": {
            d.prompt_id: {"id_delta": _num(d.id_delta), "volume_delta": _num(d.volume_delta)}
            for d in report.per_prompt
        },
        "skipped": list(report.skipped),
        "note": report.note,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_validate(config: RunConfig) -> int:
    report = validate_manifest(config.dataset_root)
    if config.format == "csv":
        text = _csv_text(
            ["path", "ok", "reason"],
            [[e.path, int(e.ok), e.reason] for e in report.entries],
        )
    else:
        text = _dump_json(
            {
                "passed": report.passed,
                "entries": [
                    {"path": e.path, "ok": e.ok, "reason": e.reason}
                    for e in report.entries
                ],
            }
        )
    _emit(text, config.output)
    failures = report.failures()
    if failures:
        for e in failures:
            print(f"fail: {e.path}: {e.reason}", file=sys.stderr)
        return 1
    print(f"validation passed: {len(report.entries)} entries", file=sys.stderr)
    return 0


def cmd_health(config: RunConfig) -> int:
    tset = load_dataset(config.dataset_root, force=config.force)
    report = diagnostics.health_report(
        tset,
        layer=config.resolved_layer(),
        k=config.k,
        epsilon=config.epsilon,
        n_boot=config.n_boot,
        level=config.level,
        seed=config.seed,
        vocab_sample=config.vocab_sample,
        fallback=config.fallback_k,
        threads=config.resolved_threads(),
    )
    doc = {
        "model_id": report.model_id,
        "layer_index": report.layer_index,
        "d_world": _num(report.d_world),
        "d_stim": _num(report.d_stim),
        "volume": _num(report.volume),
        "epsilon": report.epsilon,
        "h_score": _num(report.h_score),
        "ci": {
            "d_stim": _ci(report.ci_d_stim),
            "volume": _ci(report.ci_volume),
            "h_score": _ci(report.ci_h_score),
        },
        "k": report.k_used,
        "num_prompts": report.num_prompts,
        "d_world_sample_size": report.d_world_sample_size,
        "median_d_stim": _num(report.median_d_stim),
        "median_volume": _num(report.median_volume),
        "skipped_prompts": list(report.skipped_prompts),
        "warnings": list(report.warnings),
    }
    if config.format == "csv":
        text = _csv_text(
            [
                "model_id", "layer", "d_world", "d_stim", "volume", "epsilon",
                "h_score", "d_stim_lo", "d_stim_hi", "volume_lo", "volume_hi",
                "h_lo", "h_hi", "k", "num_prompts",
            ],
            [[
                report.model_id, report.layer_index, report.d_world,
                report.d_stim, report.volume, report.epsilon, report.h_score,
                report.ci_d_stim.lower, report.ci_d_stim.upper,
                report.ci_volume.lower, report.ci_volume.upper,
                report.ci_h_score.lower, report.ci_h_score.upper,
                report.k_used, report.num_prompts,
            ]],
        )
    else:
        text = _dump_json(doc)
    _emit(text, config.output)
    print(
        f"{report.model_id}: H={report.h_score:.6g} "
        f"D_world={report.d_world:.6g} D_stim={report.d_stim:.6g} "
        f"V={report.volume:.6g} prompts={report.num_prompts}",
        file=sys.stderr,
    )
    return 0


_PROFILE_COLUMNS = ["layer", "mean_id", "id_lo", "id_hi", "mean_v", "v_lo", "v_hi", "n"]


def cmd_profile(config: RunConfig) -> int:
    tset = load_dataset(config.dataset_root, force=config.force)
    profile = diagnostics.layer_profile(
        tset,
        k=config.k,
        n_boot=config.n_boot,
        level=config.level,
        seed=config.seed,
        fallback=config.fallback_k,
        threads=config.resolved_threads(),
    )
    csv_rows = [
        [
            row.layer_index, row.mean_id, row.ci_id.lower, row.ci_id.upper,
            row.mean_volume, row.ci_volume.lower, row.ci_volume.upper,
            row.num_prompts,
        ]
        for row in profile.rows
    ]
    csv_text = _csv_text(_PROFILE_COLUMNS, csv_rows)
    if config.format == "csv":
        _emit(csv_text, config.output)
    else:
        doc = {
            "model_id": profile.model_id,
            "layers": [
                {
                    "layer_index": row.layer_index,
                    "mean_id": _num(row.mean_id),
                    "mean_volume": _num(row.mean_volume),
                    "ci_id": _ci(row.ci_id),
                    "ci_volume": _ci(row.ci_volume),
                    "num_prompts": row.num_prompts,
                }
                for row in profile.rows
            ],
            "notices": list(profile.notices),
        }
        _emit(_dump_json(doc), config.output)
        if config.output is not None:
            # plot-ready mirror next to the JSON report
            Path(config.output).with_suffix(".csv").write_text(csv_text, encoding="utf-8")
    print(f"{profile.model_id}: {len(profile.rows)} layers profiled", file=sys.stderr)
    return 0


def cmd_expand(config: RunConfig, group_order: list[str] | None) -> int:
    tset = load_dataset(config.dataset_root, force=config.force)
    curve = diagnostics.expansion_curve(
        tset,
        group_order=group_order,
        seed=config.seed,
        layer=config.resolved_layer(),
        k=config.k,
        n_boot=config.n_boot,
        level=config.level,
        threads=config.resolved_threads(),
    )
    if config.format == "csv":
        text = _csv_text(
            ["stage", "group", "num_groups", "num_prompts", "d_stim", "d_stim_lo", "d_stim_hi"],
            [
                [
                    i + 1, curve.group_order[i], st.num_groups, st.num_prompts,
                    st.d_stim, st.ci.lower, st.ci.upper,
                ]
                for i, st in enumerate(curve.stages)
            ],
        )
    else:
        text = _dump_json(
            {
                "model_id": curve.model_id,
                "group_order": list(curve.group_order),
                "stages": [
                    {
                        "num_groups": st.num_groups,
                        "num_prompts": st.num_prompts,
                        "d_stim": _num(st.d_stim),
                        "ci": _ci(st.ci),
                    }
                    for st in curve.stages
                ],
            }
        )
    _emit(text, config.output)
    print(f"{curve.model_id}: {len(curve.stages)} expansion stages", file=sys.stderr)
    return 0


def cmd_controls(
    config: RunConfig,
    fractions: tuple[float, ...] = (0.25, 0.5, 0.75),
    alternate_root: str | None = None,
) -> int:
    tset = load_dataset(config.dataset_root, force=config.force)
    common = dict(
        layer=config.resolved_layer(),
        k=config.k,
        fallback=config.fallback_k,
        threads=config.resolved_threads(),
    )
    shuffle = diagnostics.shuffle_control(tset, seed=config.seed, **common)
    truncate = diagnostics.truncate_control(tset, fractions=fractions, **common)
    alternate = None
    if alternate_root is not None:
        alt = load_dataset(alternate_root, force=config.force)
        alternate = diagnostics.alternate_control(tset, alt, **common)

    if config.format == "csv":
        rows = []
        for rep in [shuffle, *truncate] + ([alternate] if alternate else []):
            worst_id = max((abs(d.id_delta) for d in rep.per_prompt), default=0.0)
            worst_v = max((abs(d.volume_delta) for d in rep.per_prompt), default=0.0)
            rows.append(
                [
                    rep.kind, "" if rep.fraction is None else rep.fraction,
                    rep.baseline_id, rep.control_id,
                    rep.baseline_volume, rep.control_volume,
                    worst_id, worst_v, len(rep.skipped),
                ]
            )
        text = _csv_text(
            [
                "kind", "fraction", "baseline_id", "control_id",
                "baseline_volume", "control_volume",
                "max_abs_id_delta", "max_abs_volume_delta", "num_skipped",
            ],
            rows,
        )
    else:
        doc = {
            "shuffle": _control_doc(shuffle),
            "truncate": [_control_doc(r) for r in truncate],
        }
        if alternate is not None:
            doc["alternate"] = _control_doc(alternate)
        text = _dump_json(doc)
    _emit(text, config.output)
    print(f"controls done: shuffle + {len(truncate)} truncations"
          + (" + alternate" if alternate else ""), file=sys.stderr)
    return 0


def _read_table(path: str) -> list[dict]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"missing input file: {p}")
    if p.suffix.lower() == ".csv":
        with open(p, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    doc = json.loads(p.read_text(encoding="utf-8"))
    if not isinstance(doc, list):
        raise ValueError(f"{p}: expected a JSON list of row objects")
    return doc


_PREDICTORS = {
    "d_stim": "d_stim",
    "discounted_volume": "volume * exp(-epsilon * d_stim)",
    "health": "log(d_world) * volume * exp(-epsilon * d_stim)",
}


def cmd_correlate(config: RunConfig, scores_path: str, external_path: str) -> int:
    """Rank-correlate structural predictors against external benchmark scores.

    The scores table needs model_id, d_world, d_stim and volume per row; the
    external table needs model_id, benchmark and score. Three predictors are
    evaluated per benchmark; models are resampled with replacement for the
    intervals.
    """
    scores = _read_table(scores_path)
    external = _read_table(external_path)

    models: dict[str, dict] = {}
    for row in scores:
        mid = str(row["model_id"])
        d_world = float(row["d_world"])
        d_stim = float(row["d_stim"])
        volume = float(row["volume"])
        models[mid] = {
            "d_stim": d_stim,
            "discounted_volume": volume * math.exp(-config.epsilon * d_stim),
            "health": math.log(d_world) * volume * math.exp(-config.epsilon * d_stim),
        }

    by_benchmark: dict[str, list[tuple[str, float]]] = {}
    for row in external:
        by_benchmark.setdefault(str(row["benchmark"]), []).append(
            (str(row["model_id"]), float(row["score"]))
        )

    results = []
    for benchmark in sorted(by_benchmark):
        pairs = sorted((m, s) for m, s in by_benchmark[benchmark] if m in models)
        if len(pairs) < 2:
            raise ValueError(
                f"fewer than 2 shared models for benchmark {benchmark!r}"
            )
        bench = np.array([s for _, s in pairs])
        n = len(pairs)
        for predictor in _PREDICTORS:
            pred = np.array([models[m][predictor] for m, _ in pairs])
            corr = spearman(pred, bench)
            rng = np.random.default_rng(config.seed)
            idx = rng.integers(0, n, size=(config.n_boot, n))
            rhos = []
            degenerate = 0
            for row_idx in idx:
                try:
                    rhos.append(spearman(pred[row_idx], bench[row_idx]).rho)
                except ValueError:
                    degenerate += 1
            tail = (1.0 - config.level) / 2.0
            if rhos:
                lo, hi = np.quantile(np.array(rhos), [tail, 1.0 - tail])
            else:
                lo = hi = corr.rho
            results.append(
                {
                    "benchmark": benchmark,
                    "predictor": predictor,
                    "rho": _num(corr.rho),
                    "lower": _num(float(lo)),
                    "upper": _num(float(hi)),
                    "n_models": n,
                    "num_ties_predictor": corr.num_ties_x,
                    "num_ties_score": corr.num_ties_y,
                    "degenerate_resamples": degenerate,
                }
            )

    if config.format == "csv":
        text = _csv_text(
            [
                "benchmark", "predictor", "rho", "rho_lo", "rho_hi",
                "n_models", "num_ties_predictor", "num_ties_score",
            ],
            [
                [
                    r["benchmark"], r["predictor"], r["rho"], r["lower"],
                    r["upper"], r["n_models"], r["num_ties_predictor"],
                    r["num_ties_score"],
                ]
                for r in results
            ],
        )
    else:
        text = _dump_json(
            {
                "predictor_formulas": dict(_PREDICTORS),
                "epsilon": config.epsilon,
                "level": config.level,
                "n_boot": config.n_boot,
                "seed": config.seed,
                "correlations": results,
            }
        )
    _emit(text, config.output)
    print(f"correlated {len(by_benchmark)} benchmark(s) x {len(_PREDICTORS)} predictors",
          file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sub: argparse.ArgumentParser, with_root: bool = True) -> None:
    if with_root:
        sub.add_argument("--dataset-root", required=True, help="dataset directory")
    sub.add_argument("--k", type=int, default=DEFAULT_K)
    sub.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    sub.add_argument("--layer", default="final", help='layer index or "final"')
    sub.add_argument("--n-boot", type=int, default=DEFAULT_N_BOOT)
    sub.add_argument("--level", type=float, default=DEFAULT_LEVEL)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--output", default=None, help="report path (stdout when omitted)")
    sub.add_argument("--format", choices=("json", "csv"), default="json")
    sub.add_argument("--vocab-sample", type=int, default=DEFAULT_VOCAB_SAMPLE)
    sub.add_argument("--fallback-k", action="store_true",
                     help="shrink k instead of skipping short trajectories")
    sub.add_argument("--force", action="store_true",
                     help="run even when the manifest fails validation")
    sub.add_argument("--threads", type=int, default=0,
                     help=f"worker pool size (0 = auto; capped by {THREADS_ENV})")


def _config(args: argparse.Namespace, with_root: bool = True) -> RunConfig:
    return RunConfig(
        dataset_root=getattr(args, "dataset_root", None) if with_root else None,
        k=args.k,
        epsilon=args.epsilon,
        layer=args.layer,
        n_boot=args.n_boot,
        level=args.level,
        seed=args.seed,
        output=args.output,
        format=args.format,
        vocab_sample=args.vocab_sample,
        fallback_k=args.fallback_k,
        force=args.force,
        threads=args.threads,
    )


def _parse_fractions(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manifold-probe",
        description="Geometry and information-content diagnostics for "
                    "stepwise representation trajectories.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("validate", help="check every manifest entry")
    _add_common(p)
    p.set_defaults(func=lambda a: cmd_validate(_config(a)))

    p = subs.add_parser("health", help="world/stimulus dimensionality, volume and score")
    _add_common(p)
    p.set_defaults(func=lambda a: cmd_health(_config(a)))

    p = subs.add_parser("profile", help="per-layer dimensionality and volume")
    _add_common(p)
    p.set_defaults(func=lambda a: cmd_profile(_config(a)))

    p = subs.add_parser("expand", help="cumulative group-pooled dimensionality")
    _add_common(p)
    p.add_argument("--group-order", default=None,
                   help="comma-separated labels (default: sorted labels)")
    p.set_defaults(
        func=lambda a: cmd_expand(
            _config(a),
            None if a.group_order is None else [s for s in a.group_order.split(",") if s],
        )
    )

    p = subs.add_parser("controls", help="shuffle and truncation recomputations")
    _add_common(p)
    p.add_argument("--fractions", default="0.25,0.5,0.75",
                   help="comma-separated truncation fractions in (0, 1]")
    p.add_argument("--alternate-root", default=None,
                   help="second dataset for the alternate-stimuli comparison")
    p.set_defaults(
        func=lambda a: cmd_controls(
            _config(a), _parse_fractions(a.fractions), a.alternate_root
        )
    )

    p = subs.add_parser("correlate", help="predictors vs external benchmark scores")
    _add_common(p, with_root=False)
    p.add_argument("--scores", required=True, help="model metrics table (json or csv)")
    p.add_argument("--external", required=True, help="benchmark score table (json or csv)")
    p.set_defaults(
        func=lambda a: cmd_correlate(_config(a, with_root=False), a.scores, a.external)
    )

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
