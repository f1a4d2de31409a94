"""Acceptance gate: one test per criterion, each with its runtime budget.

A one-line PASS/FAIL summary per criterion is printed at the end of the
pytest run (and inline with ``-s``).
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from onebitcs.embed import (
    bese_deviation,
    noisy_bound_check,
    sample_model_latents,
    verify_norm_preservation,
    verify_sep_lemma,
    verify_sep_lemma_near,
    verify_sign_flip_prob,
)
from onebitcs.genmodel import GroupSparseModel, random_ffnet
from onebitcs.harness import load_config, run_sweep
from onebitcs.measure import NoiseSpec, gaussian_matrix, geodesic_dist, geodesic_dist_rows, sign_measure
from onebitcs.recover import RecoveryConfig, derive_seed, onesided_l1, pgd_1bit

from oracles import brute_force_group_sparse_projection, central_difference_grad, unit_pair_at_distance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def report(record_property):
    def _report(num, title, passed, detail, elapsed, budget):
        ok = bool(passed) and elapsed < budget
        detail = f"{detail}; {elapsed:.1f}s of {budget}s"
        record_property("criterion", num)
        record_property("title", title)
        record_property("detail", detail)
        print(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}  {detail}")
        assert passed, detail
        assert elapsed < budget, f"runtime {elapsed:.1f}s exceeds {budget}s"

    return _report


def _units(rng, count, n):
    X = rng.standard_normal((count, n))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def test_c01_sign_flip_frequency_matches_geodesic(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    X, S = _units(rng, 20, 10), _units(rng, 20, 10)
    gaps = [abs(verify_sign_flip_prob(X[i], S[i], 100_000, 1, derive_seed(101, i)) - geodesic_dist(X[i], S[i])) for i in range(20)]
    ok = sum(g <= 0.01 for g in gaps)
    report(1, "sign-flip probability equals geodesic distance", ok >= 19, f"{ok}/20 within 0.01, max gap {max(gaps):.4f}", time.perf_counter() - t0, 30)


def test_c02_geodesic_euclidean_sandwich(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    X, S = _units(rng, 100_000, 10), _units(rng, 100_000, 10)
    ds = geodesic_dist_rows(X, S)
    l2 = np.linalg.norm(X - S, axis=1)
    bad = int(np.count_nonzero((l2 / np.pi > ds) | (ds > l2 / 2)))
    report(2, "geodesic/Euclidean sandwich", bad == 0, f"{bad} violations in 100000 pairs", time.perf_counter() - t0, 5)


def test_c03_norm_preservation(report):
    t0 = time.perf_counter()
    x = _units(np.random.default_rng(103), 1, 50)[0]
    frac = verify_norm_preservation(x, 1000, 0.3, 100, seed=103)
    ok = round(frac * 100)
    report(3, "norm preservation at m=1000, eps=0.3", ok >= 98, f"{ok}/100 trials inside the bound", time.perf_counter() - t0, 10)


def test_c04_separation_bounds(report):
    t0 = time.perf_counter()
    eps = 0.5
    rng = np.random.default_rng(104)
    far, near = [], []
    for i in range(10):
        x, s = unit_pair_at_distance(rng, 10, rng.uniform(eps, 2.0))
        far.append(verify_sep_lemma(x, s, eps, 100_000, derive_seed(104, i, 0)))
        x, s = unit_pair_at_distance(rng, 10, rng.uniform(0.0, eps))
        near.append(verify_sep_lemma_near(x, s, eps, 100_000, derive_seed(104, i, 1)))
    bad = sum(p < eps / 12 - 0.01 for p in far) + sum(p < 1 - 2 * eps / 3 - 0.01 for p in near)
    report(
        4,
        "far/near separation probabilities",
        bad == 0,
        f"far min {min(far):.4f} (need {eps / 12 - 0.01:.4f}), near min {min(near):.4f} (need {1 - 2 * eps / 3 - 0.01:.4f})",
        time.perf_counter() - t0,
        60,
    )


def test_c05_embedding_deviation_shrinks_with_m(report):
    t0 = time.perf_counter()
    model = GroupSparseModel(64, 2, r=1.0, x_max=math.sqrt(3), x_c=1.0)
    devs = {}
    for m in (500, 8000):
        devs[m] = [bese_deviation(model, gaussian_matrix(m, 64, derive_seed(105, m, i)), 2000, derive_seed(105, m, i, 1)).max_dev for i in range(10)]
    lo, hi = np.median(devs[500]), np.median(devs[8000])
    ok = hi < lo and max(devs[8000]) <= 0.1
    report(5, "embedding deviation trend", ok, f"median max dev {lo:.4f} at m=500, {hi:.4f} at m=8000 (worst {max(devs[8000]):.4f})", time.perf_counter() - t0, 300)


def test_c06_noiseless_recovery(report):
    t0 = time.perf_counter()
    model = GroupSparseModel(60, 3)
    ds, zero = [], 0
    for t in range(20):
        rng = np.random.default_rng(derive_seed(106, t))
        x = model.forward(sample_model_latents(model, 1, rng)[0])
        A = gaussian_matrix(600, 60, derive_seed(106, t, 1))
        b = sign_measure(A, x)
        res = pgd_1bit(A, b, model, RecoveryConfig(seed=t))
        ds.append(geodesic_dist(x, res.estimate))
        zero += res.final_loss == 0.0
    med = float(np.median(ds))
    report(6, "noiseless recovery", med <= 0.05 and zero >= 15, f"median d_S {med:.4f}, zero loss in {zero}/20", time.perf_counter() - t0, 120)


def test_c07_noisy_recovery_bound(report):
    t0 = time.perf_counter()
    model = GroupSparseModel(60, 3)
    A = gaussian_matrix(2000, 60, 107)
    flip = noisy_bound_check(model, A, NoiseSpec.sign_flip(0.05, seed=1), trials=50, seed=107)
    gauss = noisy_bound_check(model, A, NoiseSpec.gaussian(0.2, seed=2), trials=50, seed=207, eps_hat=flip.eps_hat)
    mean_tau1 = float(np.mean(gauss.tau1))
    ok = flip.violations == 0 and mean_tau1 <= 0.15
    report(
        7,
        "noisy recovery bound",
        ok,
        f"{flip.violations} violations (eps_hat {flip.eps_hat:.4f}, min margin {flip.margins.min():.4f}), gaussian mean tau1 {mean_tau1:.4f}",
        time.perf_counter() - t0,
        300,
    )


def test_c08_vjp_matches_finite_differences(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(108)
    worst = 0.0
    for i in range(100):
        depth = int(rng.integers(1, 4))
        sizes = [int(v) for v in rng.integers(1, 17, depth + 1)]
        acts = [str(a) for a in rng.choice(["tanh", "sigmoid"], depth)]
        net = random_ffnet(sizes, acts, seed=derive_seed(108, i), scale=1.5, r=2.0)
        z = rng.standard_normal(sizes[0])
        z *= rng.uniform(0, 1.5) / np.linalg.norm(z)
        u = rng.standard_normal(sizes[-1])
        g = net.vjp(z, u)
        fd = central_difference_grad(lambda v: float(net.forward(v) @ u), z)
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300)))
    report(8, "vector-Jacobian product against central differences", worst <= 1e-6, f"worst relative error {worst:.2e} over 100 nets", time.perf_counter() - t0, 30)


def _lipschitz_ratio(model, rng, count):
    k, r = model.k, model.r
    Z1 = sample_model_latents(model, count, rng)
    # half independent pairs, half short hops where piecewise slopes dominate
    Z2 = sample_model_latents(model, count, rng)
    hop = rng.standard_normal((count // 2, k)) * (10 ** rng.uniform(-6, -1, (count // 2, 1)))
    near = Z1[: count // 2] + hop
    nrm = np.linalg.norm(near, axis=1, keepdims=True)
    Z2[: count // 2] = np.where(nrm > r, near * (r / nrm), near)
    dz = np.linalg.norm(Z1 - Z2, axis=1)
    keep = dz > 0
    dx = np.linalg.norm(model.forward(Z1[keep]) - model.forward(Z2[keep]), axis=1)
    return float(np.max(dx / dz[keep]))


def test_c09_lipschitz_certificates_hold(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(109)
    worst_gs = worst_ff = 0.0
    for i in range(10):
        k = int(rng.integers(2, 6))
        gs = GroupSparseModel(k * int(rng.integers(1, 9)), k, r=float(rng.uniform(0.5, 2.0)))
        worst_gs = max(worst_gs, _lipschitz_ratio(gs, rng, 100_000) / gs.lipschitz())
        depth = int(rng.integers(1, 4))
        sizes = [int(v) for v in rng.integers(2, 17, depth + 1)]
        ff = random_ffnet(sizes, [str(a) for a in rng.choice(["relu", "tanh", "sigmoid", "identity"], depth)], derive_seed(109, i), scale=2.0)
        worst_ff = max(worst_ff, _lipschitz_ratio(ff, rng, 100_000) / ff.lipschitz())
    ok = worst_gs <= 1.0 and worst_ff <= 1.0
    report(9, "Lipschitz certificates", ok, f"largest observed/declared ratio: group-sparse {worst_gs:.3f}, feed-forward {worst_ff:.3g}", time.perf_counter() - t0, 120)


def test_c10_error_trend_and_pgd_beats_biht(report):
    t0 = time.perf_counter()
    result = run_sweep(load_config(CONFIGS / "fig2_desk.toml"))
    pgd, biht = result.median_error("pgd1bit"), result.median_error("biht")
    grid = [50, 100, 200, 400]
    mono = all(pgd[a] >= pgd[b] and biht[a] >= biht[b] for a, b in zip(grid, grid[1:]))
    ok = mono and pgd[400] < biht[400] and all(r.status == "ok" for r in result.rows)
    detail = "pgd " + ", ".join(f"{pgd[m]:.2e}" for m in grid) + " | biht " + ", ".join(f"{biht[m]:.2e}" for m in grid)
    report(10, "error non-increasing in m, PGD below BIHT at m=400", ok, detail, time.perf_counter() - t0, 600)


def test_c11_projection_matches_brute_force(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(111)
    worst = 0.0
    for i in range(50):
        n = 2 * int(rng.integers(1, 5))
        model = GroupSparseModel(n, 2, r=float(rng.uniform(0.5, 2.0)), x_max=float(rng.uniform(0.2, 3.0)), x_c=float(rng.uniform(0.5, 2.0)))
        y = rng.standard_normal(n) * rng.uniform(0.1, 3.0)
        x, z = model.exact_project(y)
        assert model.in_range(x) and np.allclose(model.forward(z), x, atol=1e-12)
        gap = abs(float(np.sum((x - y) ** 2)) - brute_force_group_sparse_projection(model, y))
        worst = max(worst, gap)
    report(11, "exact projection matches brute force", worst <= 1e-6, f"worst objective gap {worst:.2e} over 50 instances", time.perf_counter() - t0, 60)
