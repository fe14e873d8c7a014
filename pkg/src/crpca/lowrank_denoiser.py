"""Spectral denoisers for the low-rank component, their divergences and extrinsic messages.

All shrinkers act on normalized singular values s~ = s / sqrt(n2 v) of the input mean
and rescale by sqrt(n2 v) afterwards.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ConfigError, DegenerateSpectrumWarning
from .extrinsic import empirical_extrinsic
from .messages import MeanVarMessage

GL_ORDER = 128
TIE_TOL = 1e-12
TIE_PERTURB = 1e-10


def svd_sorted(R: np.ndarray):
    """Thin SVD, descending values, largest-magnitude entry of each u made nonnegative."""
    U, s, Vt = np.linalg.svd(R, full_matrices=False)
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, s, Vt * signs[:, None]


def normalization(shape: tuple[int, int], v: float) -> float:
    return float(np.sqrt(shape[1] * v))


# ---------------------------------------------------------------------------
# smoothed hard threshold


def bump(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(1.0 / (u[inside] ** 2 - 1.0))
    return out


@lru_cache(maxsize=None)
def _gauss_legendre(order: int):
    return np.polynomial.legendre.leggauss(order)


@lru_cache(maxsize=None)
def bump_mass(order: int = GL_ORDER) -> float:
    """Integral of the bump over (-1, 1)."""
    t, w = _gauss_legendre(order)
    return float(np.sum(w * bump(t)))


def _kernel_integrals(x, sigma_star, epsilon, order):
    """Integrals of t*B((x-t)/eps) and B((x-t)/eps) over t in (sigma_star, x + eps)."""
    t, w = _gauss_legendre(order)
    lo = sigma_star
    hi = x + epsilon
    half = 0.5 * (hi - lo)
    nodes = lo + half[:, None] * (t[None, :] + 1.0)
    kern = bump((x[:, None] - nodes) / epsilon)
    i_t = half * np.sum(w * nodes * kern, axis=1)
    i_1 = half * np.sum(w * kern, axis=1)
    return i_t, i_1


def smoothed_hard_f(x, sigma_star: float, epsilon: float, order: int = GL_ORDER):
    """Hard threshold at sigma_star convolved with a bump of radius epsilon."""
    if not 0 < epsilon < sigma_star:
        raise ConfigError(f"need 0 < epsilon < sigma_star, got {epsilon}, {sigma_star}")
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x).ravel()
    out = np.where(flat >= sigma_star + epsilon, flat, 0.0)
    mid = (flat > sigma_star - epsilon) & (flat < sigma_star + epsilon)
    if np.any(mid):
        i_t, _ = _kernel_integrals(flat[mid], sigma_star, epsilon, order)
        out[mid] = i_t / (epsilon * bump_mass(order))
    return out.reshape(x.shape) if x.ndim else float(out[0])


def smoothed_hard_fprime(x, sigma_star: float, epsilon: float, order: int = GL_ORDER):
    """Derivative of smoothed_hard_f.

    Integrating by parts turns the kernel-derivative integral into
    sigma_star*B((x - sigma_star)/eps) + int_{sigma_star}^{x+eps} B((x-t)/eps) dt,
    divided by eps times the bump mass. Both terms are nonnegative.
    """
    if not 0 < epsilon < sigma_star:
        raise ConfigError(f"need 0 < epsilon < sigma_star, got {epsilon}, {sigma_star}")
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x).ravel()
    out = np.where(flat >= sigma_star + epsilon, 1.0, 0.0)
    mid = (flat > sigma_star - epsilon) & (flat < sigma_star + epsilon)
    if np.any(mid):
        xm = flat[mid]
        _, i_1 = _kernel_integrals(xm, sigma_star, epsilon, order)
        edge = sigma_star * bump((xm - sigma_star) / epsilon)
        out[mid] = (edge + i_1) / (epsilon * bump_mass(order))
    return out.reshape(x.shape) if x.ndim else float(out[0])


def smoothed_hard_lipschitz_printed(sigma_star: float, epsilon: float) -> float:
    """The Lipschitz constant max(1, 2 + 1.2 sigma*/(e eps)) as stated for this construction."""
    return max(1.0, 2.0 + 1.2 * sigma_star / (np.e * epsilon))


def smoothed_hard_lipschitz(sigma_star: float, epsilon: float) -> float:
    """A valid Lipschitz constant: 1 + sigma*/(e eps Z) with Z the bump mass.

    The derivative is at most 1 (full kernel mass) plus the boundary term, which peaks
    at x = sigma_star with value sigma_star * B(0) / (eps Z).
    """
    return 1.0 + sigma_star / (np.e * epsilon * bump_mass())


# ---------------------------------------------------------------------------
# shrinkers


@dataclass(frozen=True)
class SpectralShrinker:
    """Scalar map f_L on normalized singular values.

    kind:
      best-rank-r    keep the top r values
      svst           soft threshold at omega
      smoothed-hard  hard threshold at sigma_star, smoothed with radius epsilon*sigma_star.
                     sigma_star_mode 'rth' uses the r-th normalized singular value of the
                     input, 'gap' the midpoint of the r-th and (r+1)-th, 'fixed' uses sigma_star.
    """

    kind: str
    r: int | None = None
    omega: float | None = None
    epsilon: float | None = None
    sigma_star_mode: str = "gap"
    sigma_star: float | None = None

    def __post_init__(self):
        if self.kind == "best-rank-r":
            if self.r is None or self.r < 0:
                raise ConfigError("best-rank-r needs r >= 0")
        elif self.kind == "svst":
            if self.omega is None or self.omega < 0:
                raise ConfigError("svst needs omega >= 0")
        elif self.kind == "smoothed-hard":
            if self.epsilon is None or not 0 < self.epsilon < 1:
                raise ConfigError("smoothed-hard needs a relative epsilon in (0, 1)")
            if self.sigma_star_mode not in ("rth", "gap", "fixed"):
                raise ConfigError(f"unknown sigma_star_mode {self.sigma_star_mode!r}")
            if self.sigma_star_mode == "fixed":
                if self.sigma_star is None or self.sigma_star <= 0:
                    raise ConfigError("fixed sigma_star must be positive")
            elif self.r is None or self.r < 1:
                raise ConfigError("smoothed-hard with a data-driven sigma_star needs r >= 1")
        else:
            raise ConfigError(f"unknown shrinker kind {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "best-rank-r":
            return {"kind": self.kind, "r": self.r}
        if self.kind == "svst":
            return {"kind": self.kind, "omega": self.omega}
        d = {"kind": self.kind, "sigma_star_mode": self.sigma_star_mode, "epsilon": self.epsilon}
        if self.r is not None:
            d["r"] = self.r
        if self.sigma_star is not None:
            d["sigma_star"] = self.sigma_star
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralShrinker":
        return cls(**d)

    def with_rank(self, r: int) -> "SpectralShrinker":
        return SpectralShrinker(self.kind, r, self.omega, self.epsilon, self.sigma_star_mode,
                                self.sigma_star)

    def resolve_sigma_star(self, s_norm: np.ndarray) -> float:
        if self.sigma_star_mode == "fixed":
            return float(self.sigma_star)
        r = min(self.r, len(s_norm))
        if self.sigma_star_mode == "gap" and r < len(s_norm):
            return 0.5 * float(s_norm[r - 1] + s_norm[r])
        return float(s_norm[r - 1])

    def bind(self, s_norm: np.ndarray) -> "BoundShrinker":
        """Fix any data-dependent parameter using the sorted normalized spectrum."""
        if self.kind == "smoothed-hard":
            sstar = self.resolve_sigma_star(s_norm)
            return BoundShrinker(self, sstar, self.epsilon * sstar)
        return BoundShrinker(self, None, None)


@dataclass(frozen=True)
class BoundShrinker:
    spec: SpectralShrinker
    sigma_star: float | None
    eps_abs: float | None

    def f(self, x):
        x = np.asarray(x, dtype=float)
        kind = self.spec.kind
        if kind == "svst":
            return np.maximum(x - self.spec.omega, 0.0)
        if kind == "smoothed-hard":
            return smoothed_hard_f(x, self.sigma_star, self.eps_abs)
        raise ConfigError("best-rank-r is index based; use f_sorted")

    def fprime(self, x):
        x = np.asarray(x, dtype=float)
        kind = self.spec.kind
        if kind == "svst":
            return (x > self.spec.omega).astype(float)
        if kind == "smoothed-hard":
            return smoothed_hard_fprime(x, self.sigma_star, self.eps_abs)
        raise ConfigError("best-rank-r is not differentiable as a scalar map")

    def f_sorted(self, s_norm: np.ndarray) -> np.ndarray:
        """Apply f to a descending spectrum (best-rank-r keeps the first r values)."""
        if self.spec.kind == "best-rank-r":
            out = np.zeros_like(s_norm)
            out[: self.spec.r] = s_norm[: self.spec.r]
            return out
        return self.f(s_norm)

    def g(self, x):
        x = np.asarray(x, dtype=float)
        fx = self.f(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x > 0, fx / np.where(x > 0, x, 1.0), 0.0)

    def H(self, x, y):
        """Two-point kernel (x f(x) - y f(y)) / (x^2 - y^2) with its diagonal limits."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        fx, fy = self.f(x), self.f(y)
        diag = np.isclose(x, y, rtol=1e-12, atol=0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            off = (x * fx - y * fy) / (x * x - y * y)
            on = np.where(x > 0, (x * self.fprime(x) + fx) / (2 * np.where(x > 0, x, 1.0)), 0.0)
        return np.where(diag, on, off)


def _apply_spectral(inp: MeanVarMessage, shrinker: SpectralShrinker):
    U, s, Vt = svd_sorted(inp.mean)
    scale = normalization(inp.mean.shape, inp.var)
    s_norm = s / scale
    bound = shrinker.bind(s_norm)
    f_vals = bound.f_sorted(s_norm)
    return (U * (scale * f_vals)) @ Vt, s_norm, bound


def denoise(inp: MeanVarMessage, shrinker: SpectralShrinker) -> np.ndarray:
    if not inp.var > 0:
        raise ConfigError("input variance must be positive")
    return _apply_spectral(inp, shrinker)[0]


def svst(inp: MeanVarMessage, omega: float) -> np.ndarray:
    """Soft-threshold the normalized singular values at omega."""
    return denoise(inp, SpectralShrinker("svst", omega=omega))


def best_rank_r(inp: MeanVarMessage, r: int) -> np.ndarray:
    if not 1 <= r <= min(inp.mean.shape):
        raise ConfigError(f"r must lie in [1, {min(inp.mean.shape)}]")
    return denoise(inp, SpectralShrinker("best-rank-r", r=r))


# ---------------------------------------------------------------------------
# divergences (per entry, i.e. divided by n = n1 n2)


def _untie(s: np.ndarray) -> np.ndarray:
    s = np.array(s, dtype=float)
    if s.size < 2 or s[0] == 0:
        return s
    gaps = -np.diff(s)
    if np.any(gaps < TIE_TOL * s[0]):
        warnings.warn("near-tied singular values perturbed before divergence evaluation",
                      DegenerateSpectrumWarning, stacklevel=3)
        # push ties apart while keeping the order
        bump_sizes = TIE_PERTURB * s[0] * np.arange(s.size)[::-1]
        s = s + bump_sizes
    return s


def _check_sorted(s: np.ndarray) -> None:
    if np.any(np.diff(s) > 0):
        raise ConfigError("singular values must be sorted in descending order")


def divergence_spectral(s_norm: np.ndarray, f_vals: np.ndarray, fprime_vals: np.ndarray,
                        n1: int, n2: int) -> float:
    """Divergence per entry of X -> sum f(s_i) u_i v_i^T for a spectral function f.

    sum f'(s_i) + |n1 - n2| sum f(s_i)/s_i + sum_{i != j} (s_i f_i - s_j f_j)/(s_i^2 - s_j^2),
    divided by n1 n2. The map is scale invariant, so normalized values can be used.
    """
    s = np.asarray(s_norm, dtype=float)
    f = np.asarray(f_vals, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(s > 0, f / np.where(s > 0, s, 1.0), 0.0)
    sf = s * f
    num = sf[:, None] - sf[None, :]
    den = s[:, None] ** 2 - s[None, :] ** 2
    np.fill_diagonal(den, 1.0)
    np.fill_diagonal(num, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = np.where(num == 0, 0.0, num / den)
    total = np.sum(fprime_vals) + abs(n1 - n2) * np.sum(g) + np.sum(cross)
    return float(total) / (n1 * n2)


def divergence_svst(s_norm, v: float, omega: float, n1: int, n2: int) -> float:
    """Closed-form SVST divergence per entry in normalized singular values.

    |n1-n2| sum (1 - omega/s_i)_+ + sum 1(s_i > omega) + 2 sum_{i != j} s_i (s_i - omega)_+ / (s_i^2 - s_j^2),
    over n1 n2. ``v`` is accepted for interface symmetry; the divergence does not depend on it.
    """
    if v <= 0:
        raise ConfigError("v must be positive")
    s = np.asarray(s_norm, dtype=float)
    _check_sorted(s)
    s = _untie(s)
    pos = np.maximum(s - omega, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(s > 0, pos / np.where(s > 0, s, 1.0), 0.0)
    term1 = abs(n1 - n2) * np.sum(ratio)
    term2 = np.count_nonzero(s > omega)
    num = (s * pos)[:, None] * np.ones_like(s)[None, :]
    den = s[:, None] ** 2 - s[None, :] ** 2
    np.fill_diagonal(den, 1.0)
    np.fill_diagonal(num, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = np.where(num == 0, 0.0, num / den)
    return float(term1 + term2 + 2.0 * np.sum(cross)) / (n1 * n2)


def divergence_best_rank_r(s_norm, v: float, r: int, n1: int, n2: int) -> float:
    """Closed-form best-rank-r divergence per entry.

    |n1-n2| r + r^2 + 2 sum_{i<=r} sum_{j>r} s_i^2 / (s_i^2 - s_j^2), over n1 n2.
    """
    if v <= 0:
        raise ConfigError("v must be positive")
    s = np.asarray(s_norm, dtype=float)
    _check_sorted(s)
    if r <= 0:
        return 0.0
    s = _untie(s)
    top = s[:r] ** 2
    rest = s[r:] ** 2
    cross = np.sum(top[:, None] / (top[:, None] - rest[None, :])) if rest.size else 0.0
    return float(abs(n1 - n2) * r + r * r + 2.0 * cross) / (n1 * n2)


def divergence_analytic(inp: MeanVarMessage, shrinker: SpectralShrinker, s_norm=None) -> float:
    if s_norm is None:
        s = np.linalg.svd(inp.mean, compute_uv=False)
        s_norm = s / normalization(inp.mean.shape, inp.var)
    n1, n2 = inp.mean.shape
    if shrinker.kind == "best-rank-r":
        return divergence_best_rank_r(s_norm, inp.var, shrinker.r, n1, n2)
    if shrinker.kind == "svst":
        return divergence_svst(s_norm, inp.var, shrinker.omega, n1, n2)
    bound = shrinker.bind(s_norm)
    s = _untie(np.asarray(s_norm, dtype=float))
    return divergence_spectral(s, bound.f(s), bound.fprime(s), n1, n2)


def divergence_monte_carlo(denoiser: Callable[[np.ndarray], np.ndarray], inp: MeanVarMessage,
                           epsilon: float = 1e-4, num_probes: int = 20, seed: int = 0) -> float:
    """Finite-difference Stein estimate of the divergence per entry.

    Probes are Gaussian with the input variance v, so that
    (1/(n v)) <[D(R + eps N) - D(R)]/eps, N> estimates div(D)/n.
    """
    if epsilon <= 0:
        raise ConfigError("probe scale must be positive")
    rng = np.random.default_rng(seed)
    R = inp.mean
    base = denoiser(R)
    total = 0.0
    for _ in range(num_probes):
        N = np.sqrt(inp.var) * rng.standard_normal(R.shape)
        total += float(np.vdot((denoiser(R + epsilon * N) - base) / epsilon, N))
    return total / (num_probes * R.size * inp.var)


# ---------------------------------------------------------------------------
# extrinsic message


@dataclass(frozen=True)
class LowRankDenoiseResult:
    posterior_mean: np.ndarray
    divergence_per_n: float
    c: float
    extrinsic_mean: np.ndarray
    extrinsic_var: float

    @property
    def a(self) -> float:
        return self.divergence_per_n


def lowrank_extrinsic(inp: MeanVarMessage, posterior: np.ndarray, a: float,
                      power: float | None = None) -> LowRankDenoiseResult:
    c, ext, v_ext = empirical_extrinsic(inp, posterior, a, power)
    return LowRankDenoiseResult(posterior, a, c, ext, v_ext)


def lowrank_denoise(inp: MeanVarMessage, shrinker: SpectralShrinker, divergence: str = "analytic",
                    mc_epsilon: float = 1e-4, mc_probes: int = 20, seed: int = 0,
                    power: float | None = None) -> LowRankDenoiseResult:
    """Posterior, Stein coefficient and extrinsic message for one low-rank step.

    ``power`` selects the variance estimate, see ``empirical_extrinsic``.
    """
    if not inp.var > 0:
        raise ConfigError("input variance must be positive")
    post, s_norm, _ = _apply_spectral(inp, shrinker)
    if divergence == "analytic":
        a = divergence_analytic(inp, shrinker, s_norm)
    elif divergence == "monte-carlo":
        a = divergence_monte_carlo(lambda R: denoise(MeanVarMessage(R, inp.var), shrinker), inp,
                                   mc_epsilon, mc_probes, seed)
    else:
        raise ConfigError(f"unknown divergence mode {divergence!r}")
    return lowrank_extrinsic(inp, post, a, power)
