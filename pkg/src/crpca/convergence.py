"""Global-convergence thresholds of the (tau_S, tau_L) recursion and region labels."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NoUniqueFixedPointError, NumericalError

BISECTION_TOL = 1e-12
ALPHA_TOL = 1e-3
SMOOTH_WINDOW = 5


def _evaluate(transfer, x: np.ndarray) -> np.ndarray:
    y = np.asarray(transfer(x), dtype=float)
    if y.shape != x.shape:
        y = np.array([float(transfer(float(t))) for t in x])
    if not np.all(np.isfinite(y)):
        raise NumericalError("transfer function undefined on the grid")
    return y


def _is_table(transfer) -> bool:
    return getattr(transfer, "kind", "") == "table"


def moving_average(y: np.ndarray, window: int = SMOOTH_WINDOW) -> np.ndarray:
    """Centered moving average with the window shrunk at the ends."""
    h = window // 2
    c = np.concatenate([[0.0], np.cumsum(y)])
    idx = np.arange(y.size)
    lo = np.maximum(idx - h, 0)
    hi = np.minimum(idx + h + 1, y.size)
    return (c[hi] - c[lo]) / (hi - lo)


def log_grid(x_min: float, x_max: float, num: int = 1000) -> np.ndarray:
    if not 0 < x_min < x_max:
        raise ConfigError("need 0 < x_min < x_max")
    if num < 3:
        raise ConfigError("grid needs at least 3 points")
    return np.geomspace(x_min, x_max, num)


def alpha_from_derivative(transfer, grid: Sequence[float], smooth: bool | None = None) -> float:
    """sup over the grid of f'/(f'+1), f' by central differences.

    Table transfers are smoothed with a 5-point moving average first unless
    ``smooth`` says otherwise.
    """
    x = np.asarray(grid, dtype=float)
    if x.ndim != 1 or x.size < 3 or np.any(np.diff(x) <= 0):
        raise ConfigError("derivative grid must be 1-d, increasing, >= 3 points")
    y = _evaluate(transfer, x)
    if smooth is None:
        smooth = _is_table(transfer)
    if smooth:
        y = moving_average(y)
    d = np.maximum(np.gradient(y, x), 0.0)
    return float(np.max(d / (d + 1.0)))


def alpha_ratio(transfer, grid: Sequence[float]) -> float:
    """sup f(x)/(f(x)+x): the threshold of the single-module recursion."""
    x = np.asarray(grid, dtype=float)
    y = np.maximum(_evaluate(transfer, x), 0.0)
    return float(np.max(y / (y + x)))


def alpha_nec(varphi, phi, grid: Sequence[float]) -> float:
    """sup (varphi + phi)/(varphi + phi + x) over the grid."""
    x = np.asarray(grid, dtype=float)
    s = np.maximum(_evaluate(varphi, x), 0.0) + np.maximum(_evaluate(phi, x), 0.0)
    return float(np.max(s / (s + x)))


def _bisect_fixed_point(transfer, other, alpha: float, threshold: float | None, name: str):
    """Vectorized root of tau = f((1/alpha - 1) tau + other/alpha) for each entry of ``other``."""
    if not 0 < alpha <= 1:
        raise ConfigError("alpha must lie in (0, 1]")
    if threshold is not None and alpha <= threshold:
        raise NoUniqueFixedPointError(f"{name}: alpha={alpha} is not above its threshold {threshold}")
    other = np.atleast_1d(np.asarray(other, dtype=float))
    if np.any(other < 0):
        raise ConfigError("arguments must be nonnegative")
    k = 1.0 / alpha - 1.0

    def resid(tau):
        return _evaluate(transfer, k * tau + other / alpha) - tau

    lo = np.zeros_like(other)
    hi = np.maximum(_evaluate(transfer, other / alpha), 1e-300)
    for _ in range(200):
        bad = resid(hi) > 0
        if not bad.any():
            break
        hi = np.where(bad, 2.0 * hi, hi)
    else:
        raise NumericalError(f"{name}: could not bracket the fixed point")
    for _ in range(400):
        if np.all(hi - lo <= BISECTION_TOL):
            break
        mid = 0.5 * (lo + hi)
        pos = resid(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    root = 0.5 * (lo + hi)
    root[other == 0] = 0.0
    return root


def psi1_fixed_point(tau_L, alpha: float, varphi, alpha1: float | None = None):
    """Psi_1(tau_L): the tau_S solving tau_S = varphi((1/alpha - 1) tau_S + tau_L/alpha)."""
    out = _bisect_fixed_point(varphi, tau_L, alpha, alpha1, "Psi_1")
    return float(out[0]) if np.ndim(tau_L) == 0 else out


def psi2_fixed_point(tau_S, alpha: float, phi, alpha2: float | None = None):
    """Psi_2(tau_S): the tau_L solving tau_L = phi((1/alpha - 1) tau_L + tau_S/alpha)."""
    out = _bisect_fixed_point(phi, tau_S, alpha, alpha2, "Psi_2")
    return float(out[0]) if np.ndim(tau_S) == 0 else out


def inverse_transfer(transfer, y, x_max: float | None = None):
    """Inverse of a strictly increasing transfer by bisection."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x_max = x_max if x_max is not None else getattr(transfer, "v_max", np.inf)
    hi = np.maximum(y, 1e-300)
    for _ in range(200):
        bad = (_evaluate(transfer, hi) < y) & (hi < x_max)
        if not bad.any():
            break
        hi = np.where(bad, np.minimum(2 * hi, x_max), hi)
    if np.any(_evaluate(transfer, hi) < y * (1 - 1e-12)):
        raise NumericalError("value outside the range of the transfer function")
    lo = np.zeros_like(y)
    for _ in range(400):
        if np.all(hi - lo <= BISECTION_TOL * np.maximum(1.0, hi)):
            break
        mid = 0.5 * (lo + hi)
        below = _evaluate(transfer, mid) < y
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def psi1_inverse(tau_S, alpha: float, varphi):
    """alpha varphi^{-1}(tau_S) - (1 - alpha) tau_S."""
    t = np.asarray(tau_S, dtype=float)
    out = alpha * inverse_transfer(varphi, t) - (1 - alpha) * np.atleast_1d(t)
    return float(out[0]) if t.ndim == 0 else out


def psi2_inverse(tau_L, alpha: float, phi):
    t = np.asarray(tau_L, dtype=float)
    out = alpha * inverse_transfer(phi, t) - (1 - alpha) * np.atleast_1d(t)
    return float(out[0]) if t.ndim == 0 else out


def sup_value(transfer) -> float:
    v_max = getattr(transfer, "v_max", np.inf)
    if not np.isfinite(v_max):
        raise ConfigError("the transfer has no finite domain cap; pass x_max")
    return float(transfer(v_max))


def composition_holds(alpha: float, varphi, phi, x: np.ndarray, rel_tol: float = 1e-9) -> bool:
    """x >= Psi_1(Psi_2(x)) on every grid point."""
    comp = psi1_fixed_point(psi2_fixed_point(x, alpha, phi), alpha, varphi)
    return bool(np.all(x - comp >= -rel_tol * x))


def alpha3(varphi, phi, alpha_lo: float, alpha_hi: float = 1.0, x_grid=None,
           num: int = 200, tol: float = ALPHA_TOL):
    """inf alpha in (alpha_lo, alpha_hi) with x >= Psi_1(Psi_2(x)) on a log grid of x.

    Returns (alpha3, satisfied). When the condition fails even at alpha_hi the
    result is (alpha_hi, False).
    """
    if x_grid is None:
        x_grid = log_grid(max(sup_value(varphi), 1e-300) * 1e-6, sup_value(varphi), num)
    x = np.asarray(x_grid, dtype=float)
    # strictly above the derivative thresholds so both Psi maps are defined
    lo = min(alpha_lo + 1e-9, alpha_hi)
    hi = alpha_hi
    if not composition_holds(hi, varphi, phi, x):
        return hi, False
    if composition_holds(lo, varphi, phi, x):
        return lo, True
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if composition_holds(mid, varphi, phi, x):
            hi = mid
        else:
            lo = mid
    return hi, True


@dataclass
class ConvergenceThresholds:
    alpha1: float
    alpha2: float
    alpha3: float
    alpha_nec: float
    alpha_S: float
    alpha_L: float
    alpha3_satisfied: bool = True
    metadata: dict = field(default_factory=dict)

    @property
    def sufficient(self) -> float:
        return max(self.alpha1, self.alpha2, self.alpha3)

    def to_dict(self) -> dict:
        return asdict(self)


def compute_thresholds(varphi, phi, x_min: float = 1e-4, x_max: float | None = None,
                       num: int = 1000, alpha3_num: int = 200) -> ConvergenceThresholds:
    """All thresholds on a log grid of ``num`` points in [x_min, x_max]."""
    if x_max is None:
        x_max = min(getattr(varphi, "v_max", np.inf), getattr(phi, "v_max", np.inf))
        if not np.isfinite(x_max):
            raise ConfigError("x_max is required for transfers without a domain cap")
    grid = log_grid(x_min, x_max, num)
    a1 = alpha_from_derivative(varphi, grid)
    a2 = alpha_from_derivative(phi, grid)
    a_nec = alpha_nec(varphi, phi, grid)
    a_S = alpha_ratio(varphi, grid)
    a_L = alpha_ratio(phi, grid)
    lo = max(a1, a2)
    if lo >= 1:
        a3, ok = 1.0, False
    else:
        sup_phi = float(varphi(x_max))
        xg = log_grid(max(x_min * 1e-2, sup_phi * 1e-6), sup_phi, alpha3_num)
        a3, ok = alpha3(varphi, phi, lo, 1.0, xg)
    meta = {"x_min": x_min, "x_max": x_max, "num": num, "spacing": "log",
            "alpha3_points": alpha3_num, "alpha3_tol": ALPHA_TOL,
            "smoothed_varphi": _is_table(varphi), "smoothed_phi": _is_table(phi),
            "smoothing_window": SMOOTH_WINDOW}
    return ConvergenceThresholds(a1, a2, a3, a_nec, a_S, a_L, ok, meta)


def classify(alpha: float, thresholds: ConvergenceThresholds) -> str:
    """guaranteed / impossible / indeterminate."""
    if alpha <= thresholds.alpha_nec:
        return "impossible"
    if thresholds.alpha3_satisfied and alpha > thresholds.sufficient:
        return "guaranteed"
    return "indeterminate"


PHASE_COLUMNS = ("rho", "gamma", "alpha1", "alpha2", "alpha3", "alpha_nec", "label")


def write_phase_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(PHASE_COLUMNS), extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
