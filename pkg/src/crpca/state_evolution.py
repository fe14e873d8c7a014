"""Scalar state evolution: transfer functions and the coupled (tau_S, tau_L) recursion."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import instances, lowrank_denoiser
from .errors import ConfigError, ConvergenceError, NumericalError
from .lowrank_denoiser import SpectralShrinker
from .messages import MeanVarMessage
from .seeding import derive_seed
from .sparse_denoiser import SparsePrior, mmse_bg_scalar


@dataclass(frozen=True)
class SEState:
    tau_S: float
    tau_L: float

    def __post_init__(self):
        if not (np.isfinite(self.tau_S) and np.isfinite(self.tau_L)):
            raise ConfigError("SE state must be finite")
        if self.tau_S < 0 or self.tau_L < 0:
            raise ConfigError("SE state must be nonnegative")


class TransferFunction:
    """Scalar map v -> extrinsic MSE on (0, v_max].

    ``kind`` is one of closed-form, quadrature, table.
    """

    def __init__(self, fn: Callable[[float], float], v_max: float = np.inf, kind: str = "closed-form",
                 name: str = ""):
        self._fn = fn
        self.v_max = v_max
        self.kind = kind
        self.name = name

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim == 0:
            return float(self._fn(float(v)))
        return np.array([self._fn(float(x)) for x in v.ravel()]).reshape(v.shape)


class TableTransfer(TransferFunction):
    """Piecewise-linear table anchored at (0, 0); clamped above the last grid point."""

    def __init__(self, grid: Sequence[float], values: Sequence[float], name: str = ""):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.size != values.size or grid.size < 2:
            raise ConfigError("table grid and values must be 1-d of equal length >= 2")
        if np.any(np.diff(grid) <= 0) or grid[0] <= 0:
            raise ConfigError("table grid must be positive and strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ConfigError("table values must be finite and nonnegative")
        self.grid = grid
        self.values = values
        self._x = np.concatenate([[0.0], grid])
        self._y = np.concatenate([[0.0], values])
        super().__init__(self._eval_scalar, float(grid[-1]), "table", name)

    def _eval_scalar(self, v: float) -> float:
        return float(np.interp(v, self._x, self._y))

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        out = np.interp(v, self._x, self._y)
        return float(out) if out.ndim == 0 else out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["v", "phi_v"])
            w.writerows(zip(self.grid.tolist(), self.values.tolist()))

    @classmethod
    def from_csv(cls, path: str | Path, name: str = "") -> "TableTransfer":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([float(r["v"]) for r in rows], [float(r["phi_v"]) for r in rows], name)


def tabulate(fn: Callable[[float], float], grid: Sequence[float], name: str = "") -> TableTransfer:
    grid = np.asarray(grid, dtype=float)
    return TableTransfer(grid, [fn(float(v)) for v in grid], name)


# ---------------------------------------------------------------------------
# linear module


def psi_partial_orthonormal(v: float, alpha: float, sigma_n_sq: float = 0.0) -> float:
    """(1/alpha - 1) v + sigma^2/alpha."""
    if not 0 < alpha <= 1:
        raise ConfigError("alpha must lie in (0, 1]")
    if v < 0:
        raise ConfigError("v must be nonnegative")
    return (1.0 / alpha - 1.0) * v + sigma_n_sq / alpha


def psi_general(v: float, eigenvalues: np.ndarray, alpha: float, sigma_n_sq: float = 0.0) -> float:
    """1 / (alpha E[theta/(theta v + sigma^2)]) - v over eigenvalues theta of A A^T."""
    theta = np.asarray(eigenvalues, dtype=float)
    if theta.size == 0:
        raise ConfigError("empty eigenvalue sample")
    e = float(np.mean(theta / (theta * v + sigma_n_sq)))
    if not e > 0:
        raise NumericalError("degenerate eigenvalue sample")
    return 1.0 / (alpha * e) - v


def linear_transfer(alpha: float, sigma_n_sq: float = 0.0, eigenvalues=None) -> TransferFunction:
    if eigenvalues is None:
        return TransferFunction(lambda v: psi_partial_orthonormal(v, alpha, sigma_n_sq), name="psi")
    return TransferFunction(lambda v: psi_general(v, eigenvalues, alpha, sigma_n_sq), name="psi")


# ---------------------------------------------------------------------------
# sparse module


def _component_mse(scale: float, v: float, prior: SparsePrior) -> float:
    """E[Var(S | r)] for r ~ N(0, scale^2), integrated over the standardized r."""
    def integrand(z):
        _, var = mmse_bg_scalar(scale * z, v, prior)
        return float(var) * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    # split at the origin and around the responsibility transition, whose width
    # in r is about v / r0, for a stable adaptive rule
    pts = {0.0, 40.0}
    if prior.rho < 1:
        tv = prior.theta + v
        kappa = np.log((1 - prior.rho) / prior.rho) + 0.5 * np.log(tv / v)
        r0 = np.sqrt(max(2 * kappa / (1.0 / v - 1.0 / tv), 0.0))
        z0 = r0 / scale
        w = v / (max(r0, np.sqrt(v)) * scale)
        for k in (-10, -4, -1, 0, 1, 4, 10):
            z = z0 + k * w
            if 0 < z < 40:
                pts.add(float(z))
    pts = sorted(pts)
    # the integrand is of order v, so the absolute tolerance follows it
    tol = 1e-14 * v
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += integrate.quad(integrand, lo, hi, epsabs=tol, epsrel=1e-11, limit=200)[0]
    total += integrate.quad(integrand, pts[-1], np.inf, epsabs=tol, epsrel=1e-11)[0]
    return 2.0 * total


def mse_sparse_mmse(v: float, prior: SparsePrior) -> float:
    """E[(E[S | S + sqrt(v) N] - S)^2] under the Bernoulli-Gaussian prior."""
    if not v > 0:
        raise ConfigError("v must be positive")
    mse = prior.rho * _component_mse(np.sqrt(prior.theta + v), v, prior)
    if prior.rho < 1:
        mse += (1 - prior.rho) * _component_mse(np.sqrt(v), v, prior)
    return mse


def varphi_mmse(v: float, prior: SparsePrior) -> float:
    """Extrinsic variance (1/MSE_S(v) - 1/v)^{-1} of the sparse MMSE step."""
    if v <= 0:
        return 0.0
    mse = mse_sparse_mmse(v, prior)
    if mse >= v:
        raise NumericalError("MMSE not below the input variance")
    return 1.0 / (1.0 / mse - 1.0 / v)


def sparse_transfer(prior: SparsePrior, grid=None) -> TransferFunction:
    """Quadrature-backed transfer; tabulated on ``grid`` when given."""
    if grid is not None:
        return tabulate(lambda v: varphi_mmse(v, prior), grid, name="varphi")
    return TransferFunction(lambda v: varphi_mmse(v, prior), kind="quadrature", name="varphi")


# ---------------------------------------------------------------------------
# low-rank module


def make_grid(v_min: float, v_max: float, step: float | None = None, num: int | None = None,
              spacing: str = "linear") -> np.ndarray:
    if not 0 < v_min < v_max:
        raise ConfigError("need 0 < v_min < v_max")
    if spacing == "log":
        return np.geomspace(v_min, v_max, num or 40)
    if step is not None:
        return np.arange(v_min, v_max + 0.5 * step, step)
    return np.linspace(v_min, v_max, num or 40)


def phi_lowrank_point(v: float, shrinker: SpectralShrinker, n1: int, n2: int, r: int,
                      seed: int, divergence: str = "analytic") -> float:
    """One Monte Carlo draw of (1/n) |c (D(L + sqrt(v) N) - a in) - L|^2."""
    L = instances.generate_low_rank(n1, n2, r, derive_seed(seed, 0))
    N = np.random.default_rng(derive_seed(seed, 1)).standard_normal((n1, n2))
    inp = MeanVarMessage(L + np.sqrt(v) * N, v)
    res = lowrank_denoiser.lowrank_denoise(inp, shrinker, divergence, seed=derive_seed(seed, 2))
    d = res.extrinsic_mean - L
    return float(np.vdot(d, d)) / L.size


def phi_lowrank_table(shrinker: SpectralShrinker, grid: Sequence[float], trials: int, n1: int,
                      n2: int, r: int, seed: int, map_fn=map) -> TableTransfer:
    """Monte Carlo table of the low-rank extrinsic MSE over a grid of input variances.

    ``map_fn`` lets callers fan the (grid point, trial) jobs out to a worker pool.
    """
    grid = np.asarray(grid, dtype=float)
    jobs = [(i, k) for i in range(grid.size) for k in range(trials)]

    def job(ik):
        i, k = ik
        return phi_lowrank_point(float(grid[i]), shrinker, n1, n2, r, derive_seed(seed, i, k))

    vals = np.array(list(map_fn(job, jobs))).reshape(grid.size, trials).mean(axis=1)
    return TableTransfer(grid, vals, name="phi")


@dataclass(frozen=True)
class SpectralMeasureSample:
    """Sorted normalized singular values of (L + sqrt(v) N) / sqrt(n2 v)."""

    values: np.ndarray
    v: float
    n1: int
    n2: int

    def __post_init__(self):
        if self.values.size == 0 or np.any(self.values < 0):
            raise ConfigError("spectral sample must be nonempty and nonnegative")

    @property
    def beta(self) -> float:
        return self.n1 / self.n2


def sample_spectral_measure(v: float, n1: int, n2: int, r: int, seed: int) -> SpectralMeasureSample:
    L = instances.generate_low_rank(n1, n2, r, derive_seed(seed, 0))
    N = np.random.default_rng(derive_seed(seed, 1)).standard_normal((n1, n2))
    s = np.linalg.svd(L + np.sqrt(v) * N, compute_uv=False) / np.sqrt(n2 * v)
    return SpectralMeasureSample(np.sort(s)[::-1], v, n1, n2)


def _spectral_moments(shrinker: SpectralShrinker, measure: SpectralMeasureSample):
    s = measure.values
    if s.size == 0:
        raise ConfigError("empty spectral sample")
    if shrinker.kind == "best-rank-r":
        raise ConfigError("the analytic transfer needs a differentiable shrinker")
    bound = shrinker.bind(s)
    f = bound.f(s)
    g = bound.g(s)
    Hm = bound.H(s[:, None], s[None, :])
    off = ~np.eye(s.size, dtype=bool)
    EH = float(Hm[off].mean()) if s.size > 1 else float(Hm[0, 0])
    return s, f, float(g.mean()), EH


def lowrank_asymptotic_coefficients(shrinker, measure, beta: float | None = None):
    """(a_inf, c_inf) from the spectral sample."""
    beta = measure.beta if beta is None else beta
    s, f, Eg, EH = _spectral_moments(shrinker, measure)
    a = (1 - beta) * Eg + beta * EH
    d = f - a * s
    den = float(np.mean(d * d))
    if den < 1e-14:
        raise NumericalError("E[(f - a sigma)^2] vanished")
    c = float(np.mean(d * s)) / den
    return a, c


def phi_lowrank_analytic(v: float, shrinker: SpectralShrinker, measure: SpectralMeasureSample,
                         beta: float | None = None) -> float:
    """v (E[s^2] E[f^2] - E[s f]^2) / E[(f - a s)^2] - v."""
    beta = measure.beta if beta is None else beta
    s, f, Eg, EH = _spectral_moments(shrinker, measure)
    a = (1 - beta) * Eg + beta * EH
    d = f - a * s
    den = float(np.mean(d * d))
    if den < 1e-14:
        raise NumericalError("E[(f - a sigma)^2] vanished")
    num = float(np.mean(s * s) * np.mean(f * f) - np.mean(s * f) ** 2)
    return v * num / den - v


def mse_lowrank_asymptotic(v: float, shrinker: SpectralShrinker, measure: SpectralMeasureSample,
                           beta: float | None = None) -> float:
    """Posterior MSE v (E[(f - s)^2] + 2(1-beta) E[g] + 2 beta E[H] - 1)."""
    beta = measure.beta if beta is None else beta
    s, f, Eg, EH = _spectral_moments(shrinker, measure)
    return v * (float(np.mean((f - s) ** 2)) + 2 * (1 - beta) * Eg + 2 * beta * EH - 1)


def stieltjes_fixed_point(z: complex, mu_LLT: np.ndarray, v: float, beta: float,
                          damping: float = 0.5, tol: float = 1e-12, max_iter: int = 10_000,
                          m0: complex | None = None) -> complex:
    """Solve m = mean_t 1 / (t/(1 + v beta m) - (1 + v beta m) z + v (1 - beta)) by damped iteration."""
    if not np.imag(z) > 0:
        raise ConfigError("need Im z > 0")
    t = np.asarray(mu_LLT, dtype=float)
    m = complex(m0) if m0 is not None else 1j
    for _ in range(max_iter):
        w = 1.0 + v * beta * m
        new = complex(np.mean(1.0 / (t / w - w * z + v * (1 - beta))))
        nxt = (1 - damping) * m + damping * new
        if abs(nxt - m) < tol * max(1.0, abs(m)):
            if nxt.imag <= 0:
                raise NumericalError("fixed point left the upper half plane")
            return nxt
        m = nxt
    raise ConvergenceError("Stieltjes fixed point did not converge")


def empirical_stieltjes(eigenvalues: np.ndarray, z: complex) -> complex:
    return complex(np.mean(1.0 / (np.asarray(eigenvalues) - z)))


# ---------------------------------------------------------------------------
# recursion


def se_step(state: SEState, psi, varphi, phi, v_max_S: float = np.inf,
            v_max_L: float = np.inf) -> SEState:
    tau_X = psi(state.tau_S + state.tau_L)
    in_S = tau_X + state.tau_L
    in_L = tau_X + state.tau_S
    if in_S > v_max_S or in_L > v_max_L:
        warnings.warn("state evolution left the transfer-function domain; values clamped",
                      RuntimeWarning, stacklevel=2)
        in_S = min(in_S, v_max_S)
        in_L = min(in_L, v_max_L)
    return SEState(max(float(varphi(in_S)), 0.0), max(float(phi(in_L)), 0.0))


def se_iterate(init: SEState, psi, varphi, phi, T: int) -> list[SEState]:
    """States for t = 0..T: tau_S <- varphi(psi(tau_S+tau_L) + tau_L), tau_L <- phi(psi(.) + tau_S)."""
    vmax_S = getattr(varphi, "v_max", np.inf)
    vmax_L = getattr(phi, "v_max", np.inf)
    out = [init]
    for _ in range(T):
        out.append(se_step(out[-1], psi, varphi, phi, vmax_S, vmax_L))
    return out


def se_to_csv(states: Sequence[SEState], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "tau_S", "tau_L"])
        for t, s in enumerate(states):
            w.writerow([t, s.tau_S, s.tau_L])
