"""Experiment drivers behind the command line and the HTTP service.

Every driver takes an ExperimentConfig, writes CSV files into an output
directory and returns an ExperimentResult. Trials fan out to a thread pool and
are merged by index, with per-trial seeds derived from (seed, cell, trial).
"""
from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy import stats

from . import convergence, instances, itmp, lowrank_denoiser
from . import state_evolution as se
from .errors import ConfigError
from .lowrank_denoiser import SpectralShrinker
from .messages import MeanVarMessage
from .schemas import ExperimentConfig, ExperimentResult
from .seeding import derive_seed
from .sparse_denoiser import SparsePrior


@contextmanager
def worker_map(threads: int):
    """An order-preserving map over a pool of ``threads`` workers."""
    if threads <= 1:
        yield lambda fn, items: list(map(fn, items))
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield lambda fn, items: list(pool.map(fn, items))


def write_rows(path: Path, rows: list[dict], columns: Iterable[str] | None = None) -> str:
    columns = list(columns) if columns is not None else list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    return str(path)


def _out_dir(cfg: ExperimentConfig, out: str | Path | None) -> Path:
    d = Path(out or cfg.out or ".")
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {d}: {exc}") from exc
    return d


def shrinker_for(cfg: ExperimentConfig, r: int) -> SpectralShrinker:
    spec = cfg.lowrank
    if spec.kind == "best-rank-r":
        return SpectralShrinker("best-rank-r", r=r)
    if spec.kind == "svst":
        return SpectralShrinker("svst", omega=spec.omega)
    return SpectralShrinker("smoothed-hard", r=r, epsilon=spec.epsilon,
                            sigma_star_mode=spec.sigma_star_mode)


def itmp_config_for(cfg: ExperimentConfig, rho: float, r: int, seed: int,
                    **overrides) -> itmp.ItmpConfig:
    kw = dict(prior=SparsePrior.unit_power(rho), shrinker=shrinker_for(cfg, r),
              sparse_kind=cfg.sparse.kind, soft_lambda=cfg.sparse.lam,
              divergence=cfg.lowrank.divergence, max_iters=cfg.max_iters, nmse_tol=cfg.nmse_tol,
              damping=cfg.damping, lowrank_variance=cfg.lowrank.variance, seed=seed)
    kw.update(overrides)
    return itmp.ItmpConfig(**kw)


def run_trial(cfg: ExperimentConfig, rho: float, gamma: float, seed: int, observer=None,
              **overrides):
    """One seeded instance and one ITMP run; returns (instance, trace)."""
    inst = instances.make_instance(cfg.n1, cfg.n2, cfg.alpha, rho, gamma, cfg.sigma_n_sq,
                                   seed, cfg.operator)
    r = inst.r if cfg.lowrank.rank is None else cfg.lowrank.rank
    conf = itmp_config_for(cfg, rho, r, seed, **overrides)
    try:
        _, _, trace = itmp.run_itmp(inst.op, inst.y, inst.sigma_n_sq, conf,
                                    itmp.GroundTruth(inst.L, inst.S), observer)
    except itmp.ItmpFailure as exc:
        # a degenerate step ends the trial as a failure; the partial trace is kept
        trace = exc.trace
    return inst, trace


# ---------------------------------------------------------------------------
# run


def cmd_run(cfg: ExperimentConfig, out=None) -> ExperimentResult:
    d = _out_dir(cfg, out)
    seeds = [derive_seed(cfg.seed, 0, k) for k in range(cfg.trials)]
    with worker_map(cfg.threads) as pmap:
        traces = pmap(lambda s: run_trial(cfg, cfg.rho, cfg.gamma, s)[1], seeds)
    files, rows = [], []
    for k, (s, tr) in enumerate(zip(seeds, traces)):
        files.append(str(d / f"trace_{k:03d}.csv"))
        tr.to_csv(files[-1])
        last = tr.records[-1] if tr.records else None
        rows.append({"trial": k, "seed": s, "iterations": len(tr),
                     "nmse_S": last.nmse_S if last else float("nan"),
                     "nmse_L": last.nmse_L if last else float("nan"),
                     "success": itmp.succeeded(tr, cfg.nmse_tol, cfg.max_iters),
                     "stop_reason": tr.stop_reason})
    files.append(write_rows(d / "summary.csv", rows))
    rate = float(np.mean([r["success"] for r in rows]))
    return ExperimentResult(kind="run", out=str(d), files=files,
                            summary={"success_rate": rate, "trials": cfg.trials})


# ---------------------------------------------------------------------------
# transfer tables


def transfer_grid(cfg: ExperimentConfig) -> np.ndarray:
    t = cfg.transfer
    v_max = t.v_max if t.v_max is not None else 2.0 / cfg.alpha + 2.0
    if v_max <= t.v_min:
        raise ConfigError("transfer.v_max must exceed transfer.v_min")
    return se.make_grid(t.v_min, v_max, num=t.num, spacing=t.spacing)


def table_shape(cfg: ExperimentConfig) -> tuple[int, int]:
    n1 = cfg.transfer.n1 or cfg.n1
    return n1, max(n1, int(round(n1 / cfg.beta)))


def build_varphi(cfg: ExperimentConfig, rho: float, grid: np.ndarray) -> se.TableTransfer:
    return se.sparse_transfer(SparsePrior.unit_power(rho), grid)


def build_phi(cfg: ExperimentConfig, gamma: float, grid: np.ndarray, seed: int,
              pmap=map) -> se.TableTransfer:
    if cfg.transfer.phi_table:
        try:
            return se.TableTransfer.from_csv(cfg.transfer.phi_table, name="phi")
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read phi table: {exc}") from exc
    n1, n2 = table_shape(cfg)
    r = instances.rank_from_gamma(n1, gamma)
    return se.phi_lowrank_table(shrinker_for(cfg, r), grid, cfg.transfer.trials, n1, n2, r,
                                seed, map_fn=pmap)


def cmd_transfer_table(cfg: ExperimentConfig, out=None) -> ExperimentResult:
    d = _out_dir(cfg, out)
    grid = transfer_grid(cfg)
    with worker_map(cfg.threads) as pmap:
        phi = build_phi(cfg, cfg.gamma, grid, derive_seed(cfg.seed, 1), pmap)
    varphi = build_varphi(cfg, cfg.rho, grid)
    files = [str(d / "phi.csv"), str(d / "varphi.csv")]
    phi.to_csv(files[0])
    varphi.to_csv(files[1])
    return ExperimentResult(kind="transfer-table", out=str(d), files=files,
                            summary={"points": int(grid.size), "v_max": float(grid[-1])})


# ---------------------------------------------------------------------------
# se-track


def se_prediction(cfg: ExperimentConfig, pmap=map, T: int | None = None,
                  rho: float | None = None, gamma: float | None = None):
    grid = transfer_grid(cfg)
    varphi = build_varphi(cfg, cfg.rho if rho is None else rho, grid)
    phi = build_phi(cfg, cfg.gamma if gamma is None else gamma, grid, derive_seed(cfg.seed, 1), pmap)
    psi = se.linear_transfer(cfg.alpha, cfg.sigma_n_sq)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        states = se.se_iterate(se.SEState(1.0, 1.0), psi, varphi, phi, T or cfg.se_iters)
    return states, varphi, phi


def cmd_se_track(cfg: ExperimentConfig, out=None) -> ExperimentResult:
    d = _out_dir(cfg, out)
    T = cfg.se_iters
    seeds = [derive_seed(cfg.seed, 0, k) for k in range(cfg.trials)]
    with worker_map(cfg.threads) as pmap:
        states, _, _ = se_prediction(cfg, pmap, T)
        traces = pmap(lambda s: run_trial(cfg, cfg.rho, cfg.gamma, s, max_iters=T,
                                          stop_on_nmse=False, stop_on_stagnation=False)[1], seeds)
    mse_S = np.full((cfg.trials, T), np.nan)
    mse_L = np.full((cfg.trials, T), np.nan)
    for k, tr in enumerate(traces):
        s, l = tr.column("mse_S_ext"), tr.column("mse_L_ext")
        mse_S[k, : s.size] = s
        mse_L[k, : l.size] = l
    sim_S = np.nanmean(mse_S, axis=0)
    sim_L = np.nanmean(mse_L, axis=0)
    sim = [{"iter": t + 1, "mse_S": sim_S[t], "mse_L": sim_L[t]} for t in range(T)]
    evo = states[1:]
    gap = [{"iter": t + 1,
            "gap_S": abs(sim_S[t] - evo[t].tau_S) / max(evo[t].tau_S, 1e-300),
            "gap_L": abs(sim_L[t] - evo[t].tau_L) / max(evo[t].tau_L, 1e-300)} for t in range(T)]
    files = [write_rows(d / "simulation.csv", sim), str(d / "evolution.csv"),
             write_rows(d / "gap.csv", gap)]
    se.se_to_csv(states, files[1])
    worst = max(max(g["gap_S"], g["gap_L"]) for g in gap)
    return ExperimentResult(kind="se-track", out=str(d), files=files,
                            summary={"max_gap": worst, "iterations": T, "trials": cfg.trials})


# ---------------------------------------------------------------------------
# phase-grid


def dof_bound(rho: float, gamma: float) -> float:
    """Minimal sampling ratio rho + (2 - gamma) gamma from counting degrees of freedom."""
    return rho + (2.0 - gamma) * gamma


def phase_thresholds(cfg: ExperimentConfig, pmap=map):
    grid = transfer_grid(cfg)
    varphis = {rho: build_varphi(cfg, rho, grid) for rho in cfg.grid.rho}
    gseeds = {g: derive_seed(cfg.seed, 2, j) for j, g in enumerate(cfg.grid.gamma)}
    phis = {g: build_phi(cfg, g, grid, gseeds[g], pmap) for g in cfg.grid.gamma}
    out = {}
    for rho in cfg.grid.rho:
        for g in cfg.grid.gamma:
            th = convergence.compute_thresholds(varphis[rho], phis[g], x_min=grid[0], x_max=grid[-1])
            out[(rho, g)] = (th, convergence.classify(cfg.alpha, th), varphis[rho], phis[g])
    return out


def cmd_phase_grid(cfg: ExperimentConfig, out=None) -> ExperimentResult:
    d = _out_dir(cfg, out)
    cells = [(rho, g) for rho in cfg.grid.rho for g in cfg.grid.gamma]
    jobs = [(i, k) for i in range(len(cells)) for k in range(cfg.trials)]

    def job(ik):
        i, k = ik
        rho, g = cells[i]
        _, tr = run_trial(cfg, rho, g, derive_seed(cfg.seed, i, k))
        return itmp.succeeded(tr, cfg.nmse_tol, cfg.max_iters)

    with worker_map(cfg.threads) as pmap:
        th = phase_thresholds(cfg, pmap)
        ok = np.array(pmap(job, jobs), dtype=float).reshape(len(cells), cfg.trials)
    rows, trows = [], []
    for i, (rho, g) in enumerate(cells):
        t, label, _, _ = th[(rho, g)]
        rows.append({"rho": rho, "gamma": g, "success_rate": float(ok[i].mean()),
                     "predicted_label": label, "dof_bound": dof_bound(rho, g)})
        trows.append({"rho": rho, "gamma": g, "alpha1": t.alpha1, "alpha2": t.alpha2,
                      "alpha3": t.alpha3, "alpha_nec": t.alpha_nec, "label": label})
    files = [write_rows(d / "phase.csv", rows), str(d / "thresholds.csv")]
    convergence.write_phase_csv(trows, files[1])
    summary = {"cells": len(cells), "successful_cells": int(sum(r["success_rate"] == 1 for r in rows))}
    return ExperimentResult(kind="phase-grid", out=str(d), files=files, summary=summary)


# ---------------------------------------------------------------------------
# qq


QQ_PANELS = ("X_input", "X_output", "S_input", "S_output", "L_input", "L_output")


def capture_errors(cfg: ExperimentConfig, iteration: int, seed: int) -> dict[str, np.ndarray]:
    captured: dict[str, np.ndarray] = {}
    holder = {}

    def observer(t, msgs):
        if t != iteration:
            return
        inst = holder["inst"]
        captured["X_input"] = msgs["X_in"].mean - inst.X
        captured["X_output"] = msgs["X_ext"].mean - inst.X
        captured["S_input"] = msgs["S_in"].mean - inst.S
        captured["S_output"] = msgs["S_ext"].mean - inst.S
        captured["L_input"] = msgs["L_in"].mean - inst.L
        captured["L_output"] = msgs["L_ext"].mean - inst.L

    inst = instances.make_instance(cfg.n1, cfg.n2, cfg.alpha, cfg.rho, cfg.gamma, cfg.sigma_n_sq,
                                   seed, cfg.operator)
    holder["inst"] = inst
    r = inst.r if cfg.lowrank.rank is None else cfg.lowrank.rank
    conf = itmp_config_for(cfg, cfg.rho, r, seed, max_iters=iteration, stop_on_nmse=False,
                           stop_on_stagnation=False)
    itmp.run_itmp(inst.op, inst.y, inst.sigma_n_sq, conf, itmp.GroundTruth(inst.L, inst.S),
                  observer)
    if len(captured) != len(QQ_PANELS):
        raise ConfigError(f"iteration {iteration} was not reached")
    return captured


def standardized_quantiles(err: np.ndarray, max_samples: int | None = None, seed: int = 0):
    x = np.ravel(err)
    if max_samples is not None and x.size > max_samples:
        x = np.random.default_rng(seed).choice(x, max_samples, replace=False)
    sd = x.std()
    z = np.sort((x - x.mean()) / (sd if sd > 0 else 1.0))
    p = (np.arange(1, z.size + 1) - 0.5) / z.size
    return stats.norm.ppf(p), z


def ks_distance(err: np.ndarray) -> float:
    x = np.ravel(err)
    sd = x.std()
    return float(stats.kstest((x - x.mean()) / (sd if sd > 0 else 1.0), "norm").statistic)


def cmd_qq(cfg: ExperimentConfig, out=None) -> ExperimentResult:
    d = _out_dir(cfg, out)
    seed = derive_seed(cfg.seed, 0, 0)
    errs = capture_errors(cfg, cfg.qq_iteration, seed)
    files, ks = [], {}
    for j, name in enumerate(QQ_PANELS):
        q, z = standardized_quantiles(errs[name], cfg.qq_max_samples, derive_seed(seed, j))
        path = d / f"qq_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["normal_quantile", "sample_quantile"])
            w.writerows(zip(q.tolist(), z.tolist()))
        files.append(str(path))
        ks[name] = ks_distance(errs[name])
    files.append(write_rows(d / "ks.csv", [{"panel": k, "ks": v} for k, v in ks.items()]))
    return ExperimentResult(kind="qq", out=str(d), files=files, summary={"ks": ks})


# ---------------------------------------------------------------------------
# divergence-check


def divergence_rows(cfg: ExperimentConfig) -> list[dict]:
    dv = cfg.divergence
    rows = []
    for idx, (n1, n2) in enumerate(dv.sizes):
        seed = derive_seed(cfg.seed, 3, idx)
        rng = np.random.default_rng(seed)
        if dv.signal_rank > 0:
            L = instances.generate_low_rank(n1, n2, min(dv.signal_rank, min(n1, n2)), derive_seed(seed, 0))
        else:
            L = np.zeros((n1, n2))
        inp = MeanVarMessage(L + np.sqrt(dv.v) * rng.standard_normal((n1, n2)), dv.v)
        specs = [SpectralShrinker("svst", omega=w) for w in dv.omegas]
        specs += [SpectralShrinker("best-rank-r", r=r) for r in dv.ranks if r <= min(n1, n2)]
        for k, sh in enumerate(specs):
            exact = lowrank_denoiser.divergence_analytic(inp, sh)
            mc = lowrank_denoiser.divergence_monte_carlo(
                lambda R, sh=sh: lowrank_denoiser.denoise(MeanVarMessage(R, dv.v), sh), inp,
                dv.epsilon, dv.probes, derive_seed(seed, 1, k))
            rows.append({"n1": n1, "n2": n2, "kind": sh.kind,
                         "param": sh.omega if sh.kind == "svst" else sh.r,
                         "analytic": exact, "monte_carlo": mc,
                         "rel_err": abs(mc - exact) / max(abs(exact), 1e-300)})
    return rows


def cmd_divergence_check(cfg: ExperimentConfig, out=None) -> ExperimentResult:
    d = _out_dir(cfg, out)
    rows = divergence_rows(cfg)
    path = write_rows(d / "divergence.csv", rows)
    return ExperimentResult(kind="divergence-check", out=str(d), files=[path],
                            summary={"max_rel_err": max(r["rel_err"] for r in rows)})


COMMANDS: dict[str, Callable[..., ExperimentResult]] = {
    "run": cmd_run,
    "se-track": cmd_se_track,
    "phase-grid": cmd_phase_grid,
    "qq": cmd_qq,
    "divergence-check": cmd_divergence_check,
    "transfer-table": cmd_transfer_table,
}


def run_experiment(cfg: ExperimentConfig, out=None) -> ExperimentResult:
    if cfg.kind is None:
        raise ConfigError("experiment kind is missing")
    return COMMANDS[cfg.kind](cfg, out)
