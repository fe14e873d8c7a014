"""Request and response models shared by the service and the command line."""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ExperimentKind = Literal["run", "se-track", "phase-grid", "qq", "divergence-check", "transfer-table"]
KINDS = ("run", "se-track", "phase-grid", "qq", "divergence-check", "transfer-table")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SparseSpec(_Strict):
    kind: Literal["mmse", "soft"] = "mmse"
    # soft threshold multiplier, the threshold is lam * sqrt(v)
    lam: float = Field(1.0, ge=0)


class LowRankSpec(_Strict):
    kind: Literal["best-rank-r", "svst", "smoothed-hard"] = "best-rank-r"
    rank: Optional[int] = Field(None, ge=1, description="defaults to round(gamma * n1)")
    omega: float = Field(1.0, ge=0)
    epsilon: float = Field(0.05, gt=0, lt=1, description="relative to sigma_star")
    sigma_star_mode: Literal["rth", "gap"] = "gap"
    divergence: Literal["analytic", "monte-carlo"] = "analytic"
    variance: Literal["power", "gram"] = "power"


class PhaseGridSpec(_Strict):
    rho: list[float] = [0.05, 0.1, 0.15, 0.2, 0.25]
    gamma: list[float] = [0.025, 0.05, 0.075, 0.1, 0.125]

    @field_validator("rho", "gamma")
    @classmethod
    def _ratios(cls, v):
        if not v or any(not 0 < x <= 1 for x in v):
            raise ValueError("grid values must lie in (0, 1]")
        return v


class TransferSpec(_Strict):
    v_min: float = Field(1e-4, gt=0)
    v_max: Optional[float] = Field(None, gt=0, description="defaults to 2/alpha + 2")
    num: int = Field(40, ge=2)
    spacing: Literal["log", "linear"] = "log"
    trials: int = Field(3, ge=1)
    n1: Optional[int] = Field(None, ge=2, description="table instance size, defaults to n1")
    phi_table: Optional[str] = Field(None, description="CSV {v, phi_v} to load instead of tabulating")


class DivergenceSpec(_Strict):
    sizes: list[tuple[int, int]] = [(100, 100)]
    omegas: list[float] = [0.5, 1.0, 2.0]
    ranks: list[int] = [1, 5, 10]
    v: float = Field(1.0, gt=0)
    epsilon: float = Field(1e-4, gt=0)
    probes: int = Field(20, ge=1)
    signal_rank: int = Field(5, ge=0)


class ExperimentConfig(_Strict):
    kind: Optional[ExperimentKind] = None
    n1: int = Field(200, ge=2)
    n2: int = Field(200, ge=2)
    alpha: float = Field(0.4, gt=0, le=1)
    rho: float = Field(0.05, gt=0, le=1)
    gamma: float = Field(0.05, gt=0, le=1)
    sigma_n_sq: float = Field(0.0, ge=0)
    operator: Literal["partial-dct", "partial-haar", "gaussian"] = "partial-dct"
    sparse: SparseSpec = SparseSpec()
    lowrank: LowRankSpec = LowRankSpec()
    trials: int = Field(10, ge=1)
    seed: int = Field(0, ge=0)
    max_iters: int = Field(100, ge=1)
    nmse_tol: float = Field(1e-3, gt=0)
    damping: float = Field(1.0, gt=0, le=1)
    se_iters: int = Field(8, ge=1)
    qq_iteration: int = Field(2, ge=1)
    qq_max_samples: Optional[int] = Field(None, ge=10)
    threads: int = Field(1, ge=1)
    out: Optional[str] = None
    grid: PhaseGridSpec = PhaseGridSpec()
    transfer: TransferSpec = TransferSpec()
    divergence: DivergenceSpec = DivergenceSpec()

    @model_validator(mode="after")
    def _shape(self):
        if self.n1 > self.n2:
            raise ValueError("n1 must not exceed n2 (beta = n1/n2 lies in (0, 1])")
        return self

    @property
    def beta(self) -> float:
        return self.n1 / self.n2


class ExperimentResult(BaseModel):
    kind: ExperimentKind
    out: Optional[str] = None
    files: list[str] = []
    summary: dict = {}


class ErrorResponse(BaseModel):
    error: str
    kind: Literal["config", "numerical"]
