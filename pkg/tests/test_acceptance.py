"""The ten acceptance criteria, each at its stated size and tolerance."""
import time
import warnings

import numpy as np
import pytest

from crpca import experiments, itmp
from crpca import state_evolution as se
from crpca.instances import generate_low_rank, make_instance, rank_from_gamma
from crpca.itmp import GroundTruth, ItmpConfig, run_itmp
from crpca.linear_denoiser import lmmse_extrinsic_general
from crpca.lowrank_denoiser import SpectralShrinker, denoise
from crpca.messages import MeanVarMessage
from crpca.operators import SpectrumDescriptor
from crpca.seeding import derive_seed
from crpca.schemas import DivergenceSpec, ExperimentConfig, PhaseGridSpec
from crpca.sparse_denoiser import SparsePrior, mmse_bg_scalar

from oracles import bg_posterior_quadrature, normalized_correlation, wishart_stieltjes

pytestmark = pytest.mark.acceptance

BASE = dict(n1=200, n2=200, alpha=0.4, rho=0.05, gamma=0.05, sigma_n_sq=0.0)


def test_c01_recovery(report):
    cfg = ExperimentConfig(kind="run", trials=10, **BASE)
    start = time.perf_counter()
    ok = []
    for k in range(10):
        _, tr = experiments.run_trial(cfg, 0.05, 0.05, derive_seed(0, 0, k))
        ok.append(itmp.succeeded(tr, 1e-3, 100))
    elapsed = time.perf_counter() - start
    passed = sum(ok) >= 9 and elapsed <= 120
    report(1, passed, f"{sum(ok)}/10 trials reach NMSE <= 1e-3 for L and S, {elapsed:.1f} s")
    assert passed


def test_c02_state_evolution_tracking(report, tmp_path):
    cfg = ExperimentConfig(kind="se-track", trials=5, se_iters=8, **dict(BASE, n1=500, n2=500))
    start = time.perf_counter()
    res = experiments.cmd_se_track(cfg, tmp_path)
    elapsed = time.perf_counter() - start
    gap = res.summary["max_gap"]
    passed = gap <= 0.20 and elapsed <= 600
    report(2, passed, f"max relative SE gap over iterations 1-8 = {gap:.3f} (<= 0.20), {elapsed:.0f} s")
    assert passed


def test_c03_extrinsic_orthogonality(report):
    inst = make_instance(256, 256, 0.4, 0.05, 0.05, 0.0, 0)
    worst = {"S": 0.0, "L": 0.0, "X": 0.0}

    def observer(t, m):
        for name, truth in (("S", inst.S), ("L", inst.L), ("X", inst.X)):
            corr = normalized_correlation(m[f"{name}_ext"].mean - truth, m[f"{name}_in"].mean - truth)
            worst[name] = max(worst[name], corr)

    conf = ItmpConfig(SparsePrior.unit_power(0.05), SpectralShrinker("best-rank-r", r=inst.r),
                      max_iters=10, stop_on_nmse=False, stop_on_stagnation=False)
    _, _, tr = run_itmp(inst.op, inst.y, 0.0, conf, GroundTruth(inst.L, inst.S), observer)
    passed = len(tr) == 10 and max(worst.values()) <= 0.05
    report(3, passed, "max normalized correlation over iterations 1-10: "
           + ", ".join(f"{k} {v:.4f}" for k, v in worst.items()))
    assert passed


def test_c04_divergence_oracle(report):
    cfg = ExperimentConfig(kind="divergence-check",
                           divergence=DivergenceSpec(sizes=[(100, 100)], omegas=[0.5, 1, 2],
                                                     ranks=[1, 5, 10], epsilon=1e-4, probes=20))
    rows = experiments.divergence_rows(cfg)
    worst = max(rows, key=lambda r: r["rel_err"])
    passed = len(rows) == 6 and worst["rel_err"] <= 0.05
    report(4, passed, f"max relative error {worst['rel_err']:.4f} ({worst['kind']} {worst['param']})")
    assert passed


def test_c05_lmmse_specialization(report):
    rng = np.random.default_rng(2024)
    n = 10_000
    worst = 0.0
    for _ in range(100):
        v = float(rng.uniform(1e-3, 10))
        s2 = float(rng.uniform(0, 1))
        m = int(rng.integers(1, n + 1))
        _, _, _, v_ext = lmmse_extrinsic_general(SpectrumDescriptor(m), v, s2, n, m)
        ref = (n - m) / m * v + n / m * s2
        worst = max(worst, abs(v_ext - ref) / max(ref, 1.0))
    passed = worst <= 1e-10
    report(5, passed, f"max deviation {worst:.2e} over 100 triples (<= 1e-10)")
    assert passed


def test_c06_mmse_scalar_oracle(report):
    prior = SparsePrior.unit_power(0.1)
    rs = np.linspace(-6, 6, 40)
    vs = np.geomspace(0.01, 5, 25)
    worst = 0.0
    for v in vs:
        mean, var = mmse_bg_scalar(rs, v, prior)
        for r, m_, s_ in zip(rs, mean, var):
            qm, qv = bg_posterior_quadrature(r, v, prior.rho, prior.theta)
            worst = max(worst, abs(m_ - qm), abs(s_ - qv))
    passed = worst <= 1e-8
    report(6, passed, f"max |closed form - quadrature| = {worst:.2e} on {rs.size * vs.size} points (<= 1e-8)")
    assert passed


def test_c07_stieltjes(report):
    errs = []
    for z in (-1 + 0.01j, -2 + 0.01j):
        m = se.stieltjes_fixed_point(z, np.zeros(1), 1.0, 1.0)
        ref = wishart_stieltjes(2000, z, seed=7)
        errs.append(abs(m - ref) / abs(ref))
    passed = max(errs) <= 0.02
    report(7, passed, "relative error " + ", ".join(f"{e:.4f}" for e in errs) + " (<= 0.02)")
    assert passed


def test_c08_threshold_consistency(report):
    cfg = ExperimentConfig(kind="phase-grid", **BASE)
    cells = experiments.phase_thresholds(cfg)
    psi = se.linear_transfer(0.4)
    bad, counts = [], {"guaranteed": 0, "indeterminate": 0, "impossible": 0}
    for (rho, g), (th, label, varphi, phi) in cells.items():
        counts[label] += 1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            states = se.se_iterate(se.SEState(1.0, 1.0), psi, varphi, phi, 500)
        total = np.array([s.tau_S + s.tau_L for s in states])
        if label == "guaranteed" and not np.min(total) < 1e-8:
            bad.append((rho, g, label, total[-1]))
        if label == "impossible" and not np.all(total > 1e-4):
            bad.append((rho, g, label, total[-1]))
    passed = not bad and len(cells) == 25
    report(8, passed, f"labels {counts}; violations {bad}")
    assert passed


def test_c09_degrees_of_freedom(report):
    cfg = ExperimentConfig(kind="phase-grid", trials=10, **BASE)
    grid = PhaseGridSpec()
    violations, successes = [], 0
    for i, rho in enumerate(grid.rho):
        for j, g in enumerate(grid.gamma):
            ok = all(itmp.succeeded(experiments.run_trial(cfg, rho, g, derive_seed(0, i, j, k))[1])
                     for k in range(cfg.trials))
            if ok:
                successes += 1
                if 0.4 < experiments.dof_bound(rho, g):
                    violations.append((rho, g))
    low = ExperimentConfig(kind="run", **dict(BASE, alpha=0.12))
    fails = sum(not itmp.succeeded(experiments.run_trial(low, 0.05, 0.05, derive_seed(1, k))[1])
                for k in range(10))
    passed = not violations and fails == 10
    report(9, passed, f"{successes}/25 cells succeed in all 10 trials, bound violations {violations}; "
           f"rho=gamma=0.05 at alpha=0.12 fails {fails}/10")
    assert passed


def _smoothed_vs_best(mode):
    n, v = 512, 0.25
    r = rank_from_gamma(n, 0.05)
    L = generate_low_rank(n, n, r, 31)
    inp = MeanVarMessage(L + np.sqrt(v) * np.random.default_rng(32).standard_normal((n, n)), v)
    best = np.mean((denoise(inp, SpectralShrinker("best-rank-r", r=r)) - L) ** 2)
    gaps = []
    for eps in (0.2, 0.1, 0.05):
        sh = SpectralShrinker("smoothed-hard", r=r, epsilon=eps, sigma_star_mode=mode)
        gaps.append(abs(np.mean((denoise(inp, sh) - L) ** 2) - best) / best)
    return best, gaps


def test_c10_smoothed_hard_fidelity(report):
    best, gaps = _smoothed_vs_best("gap")
    _, rth = _smoothed_vs_best("rth")
    monotone = all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    passed = monotone and gaps[-1] <= 0.03
    report(10, passed, f"best-rank-r MSE {best:.6f}; relative gaps at eps=0.2,0.1,0.05 sigma*: "
           + ", ".join(f"{g:.4f}" for g in gaps)
           + " (sigma* between the r-th and (r+1)-th values); with sigma* at the r-th value: "
           + ", ".join(f"{g:.4f}" for g in rth))
    assert passed
