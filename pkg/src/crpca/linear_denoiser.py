"""LMMSE module for X given y and its extrinsic message."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import operators
from .errors import ConfigError, NumericalError
from .messages import MeanVarMessage
from .operators import LinearOperator, SpectrumDescriptor

REGULARIZATION = 1e-12


@dataclass(frozen=True)
class LinearExtrinsic:
    a: float
    c: float
    extrinsic_mean: np.ndarray
    extrinsic_var: float
    posterior_var: float
    posterior_mean: np.ndarray | None = None


def _effective_noise(op: LinearOperator, v: float, sigma_n_sq: float) -> float:
    if sigma_n_sq < 0:
        raise ConfigError("noise variance must be nonnegative")
    if sigma_n_sq == 0 and not op.is_partial_orthonormal:
        return REGULARIZATION * v
    return sigma_n_sq


def lmmse_posterior(op: LinearOperator, y: np.ndarray, inp: MeanVarMessage,
                    sigma_n_sq: float) -> np.ndarray:
    """vec(X) = vec(R) + v A^T (v A A^T + sigma^2 I)^{-1} (y - A vec(R))."""
    v = inp.var
    if not v > 0:
        raise ConfigError("input variance must be positive")
    sigma2 = _effective_noise(op, v, sigma_n_sq)
    resid = y - operators.apply(op, inp.mean)
    if op.is_partial_orthonormal:
        return inp.mean + (v / (v + sigma2)) * operators.apply_adjoint(op, resid)
    U, s, _ = op._svd
    z = U @ ((U.T @ resid) / (v * s * s + sigma2))
    return inp.mean + v * operators.apply_adjoint(op, z)


def lmmse_extrinsic_general(spectrum: SpectrumDescriptor, v: float, sigma_n_sq: float,
                            n: int, m: int) -> tuple[float, float, float, float]:
    """(a, c, v_X, v_ext) from the singular spectrum of A."""
    if len(spectrum.squared()) != m:
        raise ConfigError("spectrum length must equal m")
    if not v > 0:
        raise ConfigError("input variance must be positive")
    s2 = spectrum.squared()
    q = float(np.sum(s2 / (v * s2 + sigma_n_sq)))
    if q <= 0:
        raise NumericalError("operator spectrum carries no information")
    v_X = v - v * v * q / n
    v_ext = n / q - v
    a = v_X / v
    c = v / (v - v_X)
    return a, c, v_X, v_ext


def lmmse_extrinsic_partial_orthonormal(op: LinearOperator, y: np.ndarray, inp: MeanVarMessage,
                                        sigma_n_sq: float) -> LinearExtrinsic:
    """Closed forms for rows that are orthonormal.

    v_ext = ((n-m)/m) v + (n/m) sigma^2 and ext = vec(R) + (n/m) A^T (y - A vec(R)).
    """
    if not op.is_partial_orthonormal:
        raise ConfigError(f"operator kind {op.kind!r} does not have orthonormal rows")
    n, m, v = op.n, op.m, inp.var
    if not v > 0:
        raise ConfigError("input variance must be positive")
    resid = y - operators.apply(op, inp.mean)
    back = operators.apply_adjoint(op, resid)
    ext = inp.mean + (n / m) * back
    v_ext = (n - m) / m * v + n / m * sigma_n_sq
    shrink = v / (v + sigma_n_sq)
    v_X = v - v * shrink * m / n
    post = inp.mean + shrink * back
    a = v_X / v
    c = v / (v - v_X)
    return LinearExtrinsic(a, c, ext, v_ext, v_X, post)


def lmmse_denoise(op: LinearOperator, y: np.ndarray, inp: MeanVarMessage,
                  sigma_n_sq: float) -> LinearExtrinsic:
    """Dispatch to the closed form when available, else the general spectral path."""
    if op.is_partial_orthonormal:
        return lmmse_extrinsic_partial_orthonormal(op, y, inp, sigma_n_sq)
    sigma2 = _effective_noise(op, inp.var, sigma_n_sq)
    post = lmmse_posterior(op, y, inp, sigma_n_sq)
    a, c, v_X, v_ext = lmmse_extrinsic_general(op.spectrum, inp.var, sigma2, op.n, op.m)
    ext = v_ext * (post / v_X - inp.mean / inp.var)
    return LinearExtrinsic(a, c, ext, v_ext, v_X, post)
