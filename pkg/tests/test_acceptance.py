"""Acceptance gate: ten numbered checks, one test per criterion.

Run with -v to get a single pass/fail line per criterion. Tolerances are
stated inline next to each assertion; none of them are tuned to the
implementation, they come from the published contract for this toolkit.
"""

import csv
import io
import json
import math
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest
import scipy.stats

from manifold_probe import (
    bootstrap_ci,
    center,
    health_score,
    information_volume,
    spearman,
    tle_global,
)

from synth import (
    hypercube_cloud,
    make_depth_dataset,
    make_expansion_dataset,
    make_health_dataset,
    random_rotation,
    subspace_walk,
)


def _cli(*args, env_extra=None):
    import os

    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "manifold_probe", *args],
        capture_output=True, text=True, env=env,
    )


def test_criterion_01_tle_hypercube_accuracy():
    """Uniform hypercube, d in {1,2,4,8}, n=2000 rotated into R^64, k=20:
    global ID within +-20% of true d for >= 18 of 20 seeds, under 5 min."""
    t0 = time.time()
    for true_d in (1, 2, 4, 8):
        hits = 0
        for seed in range(20):
            cloud = hypercube_cloud(2000, true_d, 64, seed=1000 * true_d + seed)
            got = tle_global(cloud, k=20).global_id
            hits += abs(got - true_d) <= 0.2 * true_d
        assert hits >= 18, f"d={true_d}: only {hits}/20 seeds within +-20%"
    assert time.time() - t0 < 300.0


def test_criterion_02_information_volume_oracle():
    """100 random matrices (T <= 64, d <= 1024): value matches the
    eigenvalue-sum oracle to rel 1e-8; the two Gram sides agree to 1e-10."""
    rng = np.random.default_rng(42)
    for _ in range(100):
        t = int(rng.integers(2, 65))
        d = int(rng.integers(1, 1025))
        z = rng.standard_normal((t, d)) * rng.uniform(0.05, 20.0)
        zc = z - z.mean(axis=0)

        lam = np.linalg.eigvalsh(zc @ zc.T)
        oracle = 0.5 * float(np.log1p((d / t) * np.clip(lam, 0.0, None)).sum())
        got = information_volume(z)
        assert got == pytest.approx(oracle, rel=1e-8, abs=1e-10)

        sign_t, ld_t = np.linalg.slogdet(np.eye(t) + (d / t) * (zc @ zc.T))
        sign_d, ld_d = np.linalg.slogdet(np.eye(d) + (d / t) * (zc.T @ zc))
        assert sign_t == 1.0 and sign_d == 1.0
        assert abs(ld_t - ld_d) <= 1e-10 * max(1.0, abs(ld_t))


def test_criterion_03_exact_degenerate_cases():
    """V = 0 for constant and single-point trajectories, H = 0 when
    d_world = 1 or V = 0, center of identical rows exactly zero."""
    assert information_volume(np.array([[3.0, -1.0, 4.5]])) == 0.0
    assert information_volume(np.full((12, 7), 2.25)) == 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert health_score(1.0, 4.0, 7.5) == 0.0
    assert health_score(24.0, 4.0, 0.0) == 0.0
    c = center(np.full((9, 5), -0.625))
    assert c.shape == (9, 5)
    assert not c.any()


def test_criterion_04_permutation_and_rotation_invariance():
    """Over 50 random instances: row shuffles move global ID by <= 1e-9 and
    V by exactly 0; random orthogonal maps move ID <= 1% and V <= 1e-8 rel."""
    rng = np.random.default_rng(7)
    for trial in range(50):
        n = int(rng.integers(80, 300))
        ambient = int(rng.integers(4, 33))
        true_d = int(rng.integers(1, min(ambient, 6) + 1))
        cloud = subspace_walk(n, true_d, ambient, rng)

        base_id = tle_global(cloud, k=20).global_id
        base_v = information_volume(cloud)

        perm = rng.permutation(n)
        assert abs(tle_global(cloud[perm], k=20).global_id - base_id) <= 1e-9
        assert information_volume(cloud[perm]) - base_v == 0.0

        q = random_rotation(ambient, rng)
        rot = cloud @ q.T
        assert abs(tle_global(rot, k=20).global_id - base_id) <= 0.01 * base_id
        assert abs(information_volume(rot) - base_v) <= 1e-8 * max(1.0, abs(base_v))


def test_criterion_05_monotonicity_suite():
    """V(2Z) > V(Z) for every nonzero Z tested; H strictly decreasing in
    d_stim and strictly increasing in V when d_world > 1, on 1000 triples."""
    rng = np.random.default_rng(11)
    for _ in range(100):
        t = int(rng.integers(2, 40))
        d = int(rng.integers(1, 120))
        z = rng.standard_normal((t, d)) * rng.uniform(0.01, 50.0)
        if not (z - z.mean(axis=0)).any():
            continue
        assert information_volume(2.0 * z) > information_volume(z)

    for _ in range(1000):
        d_world = float(rng.uniform(1.01, 100.0))
        d_stim = float(rng.uniform(0.1, 40.0))
        volume = float(rng.uniform(0.01, 1e4))
        h = health_score(d_world, d_stim, volume)
        assert health_score(d_world, d_stim + rng.uniform(0.05, 5.0), volume) < h
        assert health_score(d_world, d_stim, volume * rng.uniform(1.01, 4.0)) > h


def test_criterion_06_bootstrap_coverage_and_reproducibility():
    """Nominal-95% mean CI covers the truth in 93..97% of 2000 normal trials;
    identical seeds reproduce identical intervals bit-exactly."""
    hits = 0
    trials = 2000
    for trial in range(trials):
        x = np.random.default_rng(50_000 + trial).normal(5.0, 2.0, size=100)
        ci = bootstrap_ci(x, n_boot=1000, seed=trial)
        hits += ci.lower <= 5.0 <= ci.upper
    assert 0.93 * trials <= hits <= 0.97 * trials, f"coverage {hits}/{trials}"

    x = np.random.default_rng(1).normal(size=64)
    a = bootstrap_ci(x, n_boot=500, seed=123)
    b = bootstrap_ci(x, n_boot=500, seed=123)
    assert (a.point, a.lower, a.upper) == (b.point, b.lower, b.upper)


def test_criterion_07_spearman_oracle():
    """Matches an independent implementation to 1e-12 on 500 random vectors
    including heavy ties; strictly monotone transforms leave rho unchanged."""
    rng = np.random.default_rng(13)
    checked = 0
    while checked < 500:
        n = int(rng.integers(4, 120))
        if rng.uniform() < 0.5:
            x = rng.integers(0, max(2, n // 4), size=n).astype(float)
        else:
            x = rng.normal(size=n)
        y = rng.normal(size=n) + 0.5 * x
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        got = spearman(x, y).rho
        want = float(scipy.stats.spearmanr(x, y).statistic)
        assert got == pytest.approx(want, abs=1e-12)
        checked += 1

        rho_after = spearman(np.exp(x / x.std()), y ** 3).rho
        assert rho_after == got


def test_criterion_08_depth_suite_profile_monotone(tmp_path):
    """Synthetic depth suite (true dim falling 9 to 1, variance rising):
    cmd_profile emits a strictly decreasing ID column and increasing V."""
    root = make_depth_dataset(tmp_path / "depth", seed=0)
    r = _cli(
        "profile", "--dataset-root", str(root), "--n-boot", "40",
        "--seed", "1", "--format", "csv",
    )
    assert r.returncode == 0, r.stderr
    rows = list(csv.DictReader(io.StringIO(r.stdout)))
    assert [int(row["layer"]) for row in rows] == list(range(9))
    ids = [float(row["mean_id"]) for row in rows]
    vols = [float(row["mean_v"]) for row in rows]
    assert all(a > b for a, b in zip(ids, ids[1:])), f"ID not decreasing: {ids}"
    assert all(a < b for a, b in zip(vols, vols[1:])), f"V not increasing: {vols}"


def test_criterion_09_expansion_curve_non_decreasing(tmp_path):
    """Groups confined to mutually orthogonal 2-dim planes: cmd_expand yields
    a non-decreasing d_stim column across the cumulative stages."""
    root = make_expansion_dataset(tmp_path / "exp", seed=0)
    r = _cli(
        "expand", "--dataset-root", str(root), "--n-boot", "20",
        "--seed", "2", "--format", "csv",
    )
    assert r.returncode == 0, r.stderr
    rows = list(csv.DictReader(io.StringIO(r.stdout)))
    assert len(rows) == 5
    ds = [float(row["d_stim"]) for row in rows]
    assert all(a <= b for a, b in zip(ds, ds[1:])), f"d_stim dips: {ds}"


def test_criterion_10_end_to_end_determinism(tmp_path):
    """cmd_health with a fixed seed: byte-identical JSON across two runs and
    across worker-pool sizes."""
    root = make_health_dataset(tmp_path / "health", seed=9)
    outs = []
    for name, threads in [("a", "1"), ("b", "1"), ("c", "3")]:
        out = tmp_path / f"{name}.json"
        r = _cli(
            "health", "--dataset-root", str(root), "--n-boot", "300",
            "--seed", "4", "--output", str(out),
            env_extra={"MANIFOLD_PROBE_THREADS": threads},
        )
        assert r.returncode == 0, r.stderr
        outs.append(out.read_bytes())
    assert outs[0] == outs[1], "rerun with identical config changed bytes"
    assert outs[0] == outs[2], "worker-pool size changed bytes"
    json.loads(outs[0])  # the artifact must be valid JSON
