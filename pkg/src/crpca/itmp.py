"""Message-passing loop coupling the linear, sparse and low-rank modules."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable

import numpy as np

from . import linear_denoiser, lowrank_denoiser, sparse_denoiser
from .errors import ConfigError, CrpcaError
from .lowrank_denoiser import SpectralShrinker
from .messages import MeanVarMessage
from .operators import LinearOperator
from .sparse_denoiser import SparsePrior

VAR_FLOOR = 1e-12
STAGNATION_TOL = 1e-10
TRACE_COLUMNS = ("iter", "v_S_ext", "v_L_ext", "v_X_ext", "nmse_S", "nmse_L",
                 "a_S", "c_S", "a_L", "c_L", "a_X", "c_X")


@dataclass(frozen=True)
class ItmpConfig:
    prior: SparsePrior
    shrinker: SpectralShrinker
    sparse_kind: str = "mmse"  # or "soft"
    soft_lambda: float = 1.0
    divergence: str = "analytic"
    max_iters: int = 100
    nmse_tol: float = 1e-3
    stop_on_nmse: bool = True
    stop_on_stagnation: bool = True
    var_floor: float = VAR_FLOOR
    damping: float = 1.0
    power_L: float = 1.0
    power_S: float = 1.0
    lowrank_variance: str = "power"  # or "gram"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not (self.nmse_tol > 0 and self.var_floor > 0):
            raise ConfigError("tolerances must be positive")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must lie in (0, 1]")
        if self.sparse_kind not in ("mmse", "soft"):
            raise ConfigError(f"unknown sparse denoiser {self.sparse_kind!r}")
        if self.lowrank_variance not in ("power", "gram"):
            raise ConfigError(f"unknown low-rank variance rule {self.lowrank_variance!r}")


@dataclass
class IterationRecord:
    iter: int
    v_S_ext: float
    v_L_ext: float
    v_X_ext: float
    nmse_S: float
    nmse_L: float
    a_S: float
    c_S: float
    a_L: float
    c_L: float
    a_X: float
    c_X: float
    # empirical per-entry MSE of the extrinsic means, when the truth is known
    mse_S_ext: float = float("nan")
    mse_L_ext: float = float("nan")
    mse_X_ext: float = float("nan")
    v_S_in: float = float("nan")
    v_L_in: float = float("nan")


@dataclass
class RunTrace:
    records: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = ""
    error: str | None = None

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def rows(self, columns=TRACE_COLUMNS) -> list[dict]:
        return [{k: getattr(r, k) for k in columns} for r in self.records]

    def to_csv(self, path: str | Path, columns=TRACE_COLUMNS) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(columns))
            w.writeheader()
            w.writerows(self.rows(columns))


@dataclass(frozen=True)
class GroundTruth:
    L: np.ndarray
    S: np.ndarray


class ItmpFailure(CrpcaError):
    """A module signalled a degenerate step; the partial trace is attached."""

    def __init__(self, message: str, trace: RunTrace):
        super().__init__(message)
        self.trace = trace


def nmse(est: np.ndarray, truth: np.ndarray) -> float:
    denom = float(np.vdot(truth, truth))
    if denom == 0:
        raise ConfigError("NMSE is undefined for an all-zero truth")
    d = est - truth
    return float(np.vdot(d, d)) / denom


def _nmse_guarded(est, truth) -> float:
    if truth is None or not np.any(truth):
        return float("nan")
    return nmse(est, truth)


def _mse(est, truth) -> float:
    if truth is None:
        return float("nan")
    d = est - truth
    return float(np.vdot(d, d)) / d.size


def initialize_messages(config: ItmpConfig, shape: tuple[int, int]):
    """Zero-mean messages with the prior powers of L and S as variances."""
    zeros = np.zeros(shape)
    return MeanVarMessage(zeros, float(config.power_L)), MeanVarMessage(zeros.copy(), float(config.power_S))


def _mix(new: float, old: float, damping: float) -> float:
    if damping == 1.0:
        return new
    return float(new ** damping * old ** (1 - damping))


# Observer signature: observer(iteration, dict of module messages) -> None
Observer = Callable[[int, dict], None]


def run_itmp(op: LinearOperator, y: np.ndarray, sigma_n_sq: float, config: ItmpConfig,
             ground_truth: GroundTruth | None = None, observer: Observer | None = None):
    """Run the iteration; returns (L_hat, S_hat, RunTrace).

    The posterior means of the last executed iteration are returned.
    """
    shape = (op.n1, op.n2)
    y = np.asarray(y, dtype=float)
    if y.shape != (op.m,):
        raise ConfigError(f"y must have length {op.m}")
    floor = config.var_floor
    trace = RunTrace()
    L_msg, S_msg = initialize_messages(config, shape)
    L_post = np.zeros(shape)
    S_post = np.zeros(shape)
    L_true = ground_truth.L if ground_truth else None
    S_true = ground_truth.S if ground_truth else None
    X_true = L_true + S_true if ground_truth else None

    if not np.any(y):
        # nothing was measured: the zero estimate is exact for a zero signal
        trace.records.append(IterationRecord(1, 0.0, 0.0, 0.0, _nmse_guarded(S_post, S_true),
                                             _nmse_guarded(L_post, L_true),
                                             *([float("nan")] * 6)))
        trace.stop_reason = "zero-measurement"
        return L_post, S_post, trace

    for t in range(1, config.max_iters + 1):
        try:
            X_in = MeanVarMessage(L_msg.mean + S_msg.mean, max(L_msg.var + S_msg.var, floor))
            lin = linear_denoiser.lmmse_denoise(op, y, X_in, sigma_n_sq)
            v_X = max(lin.extrinsic_var, floor)

            S_in = MeanVarMessage(lin.extrinsic_mean - L_msg.mean, max(v_X + L_msg.var, floor))
            L_in = MeanVarMessage(lin.extrinsic_mean - S_msg.mean, max(v_X + S_msg.var, floor))

            if config.sparse_kind == "mmse":
                sres = sparse_denoiser.mmse_denoise(S_in, config.prior)
            else:
                sres = sparse_denoiser.soft_threshold_denoise(S_in, config.soft_lambda)
            power = config.power_L if config.lowrank_variance == "power" else None
            lres = lowrank_denoiser.lowrank_denoise(L_in, config.shrinker, config.divergence,
                                                    seed=config.seed + t, power=power)
        except CrpcaError as exc:
            trace.error = str(exc)
            trace.stop_reason = "degenerate"
            raise ItmpFailure(f"iteration {t}: {exc}", trace) from exc

        v_S = max(_mix(sres.extrinsic_var, S_msg.var, config.damping), floor)
        v_L = max(_mix(lres.extrinsic_var, L_msg.var, config.damping), floor)
        S_post, L_post = sres.posterior_mean, lres.posterior_mean

        if observer is not None:
            observer(t, {"X_in": X_in, "X_ext": MeanVarMessage(lin.extrinsic_mean, v_X),
                         "S_in": S_in, "S_ext": MeanVarMessage(sres.extrinsic_mean, v_S),
                         "L_in": L_in, "L_ext": MeanVarMessage(lres.extrinsic_mean, v_L),
                         "S_post": S_post, "L_post": L_post})

        rec = IterationRecord(
            t, v_S, v_L, v_X, _nmse_guarded(S_post, S_true), _nmse_guarded(L_post, L_true),
            sres.a, sres.c, lres.a, lres.c, lin.a, lin.c,
            _mse(sres.extrinsic_mean, S_true), _mse(lres.extrinsic_mean, L_true),
            _mse(lin.extrinsic_mean, X_true), S_in.var, L_in.var)
        trace.records.append(rec)

        prev_S, prev_L = S_msg.var, L_msg.var
        S_msg = MeanVarMessage(sres.extrinsic_mean, v_S)
        L_msg = MeanVarMessage(lres.extrinsic_mean, v_L)

        if (config.stop_on_nmse and ground_truth is not None
                and rec.nmse_S <= config.nmse_tol and rec.nmse_L <= config.nmse_tol):
            trace.stop_reason = "nmse"
            break
        if (config.stop_on_stagnation and t > 1
                and abs(v_S - prev_S) <= STAGNATION_TOL * max(prev_S, floor)
                and abs(v_L - prev_L) <= STAGNATION_TOL * max(prev_L, floor)):
            trace.stop_reason = "stagnation"
            break
    else:
        trace.stop_reason = "max_iters"
    return L_post, S_post, trace


def succeeded(trace: RunTrace, tol: float = 1e-3, max_iters: int = 100) -> bool:
    """Both NMSEs at or below tol at some iteration t < max_iters."""
    for r in trace.records:
        if r.iter < max_iters and r.nmse_S <= tol and r.nmse_L <= tol:
            return True
    return False


def record_as_dict(rec: IterationRecord) -> dict:
    return asdict(rec)
