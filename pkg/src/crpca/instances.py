"""Ground-truth generators and the noisy measurement model."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import operators
from .errors import ConfigError
from .seeding import derive_seed


def generate_low_rank(n1: int, n2: int, r: int, seed: int) -> np.ndarray:
    """L = U V with Gaussian factors, rescaled so that ||L||_F^2 = n1*n2."""
    if not 1 <= r <= min(n1, n2):
        raise ConfigError(f"rank must lie in [1, {min(n1, n2)}], got {r}")
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((n1, r)) @ rng.standard_normal((r, n2))
    return L * np.sqrt(n1 * n2) / np.linalg.norm(L)


def generate_sparse(n1: int, n2: int, rho: float, seed: int) -> np.ndarray:
    """Bernoulli-Gaussian S with P(S_ij != 0) = rho, rescaled so that ||S||_F^2 = n1*n2."""
    if not 0 < rho <= 1:
        raise ConfigError(f"rho must lie in (0, 1], got {rho}")
    rng = np.random.default_rng(seed)
    mask = rng.random((n1, n2)) < rho
    S = np.where(mask, rng.standard_normal((n1, n2)), 0.0)
    norm = np.linalg.norm(S)
    if norm == 0:
        # no entry survived the Bernoulli draw; keep one so the normalization is defined
        S[np.unravel_index(rng.integers(n1 * n2), S.shape)] = 1.0
        norm = 1.0
    return S * np.sqrt(n1 * n2) / norm


def measure(op: operators.LinearOperator, L: np.ndarray, S: np.ndarray,
            sigma_n_sq: float, seed: int) -> np.ndarray:
    """y = A vec(L + S) + n with n ~ N(0, sigma_n_sq I)."""
    if sigma_n_sq < 0:
        raise ConfigError("noise variance must be nonnegative")
    if L.shape != S.shape:
        raise ConfigError("L and S must have equal shapes")
    y = operators.apply(op, L + S)
    if sigma_n_sq > 0:
        y = y + np.sqrt(sigma_n_sq) * np.random.default_rng(seed).standard_normal(op.m)
    return y


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    L: np.ndarray
    S: np.ndarray
    y: np.ndarray
    op: operators.LinearOperator
    sigma_n_sq: float
    r: int
    rho: float
    seed: int

    @property
    def X(self) -> np.ndarray:
        return self.L + self.S

    @property
    def n1(self) -> int:
        return self.L.shape[0]

    @property
    def n2(self) -> int:
        return self.L.shape[1]

    @property
    def n(self) -> int:
        return self.L.size

    @property
    def m(self) -> int:
        return self.op.m

    @property
    def alpha(self) -> float:
        return self.m / self.n

    @property
    def beta(self) -> float:
        return self.n1 / self.n2

    @property
    def gamma(self) -> float:
        return self.r / self.n1

    def seeds(self) -> dict[str, int]:
        return instance_seeds(self.seed)

    def metadata(self) -> dict:
        return {
            "n1": self.n1, "n2": self.n2, "m": self.m, "r": self.r, "rho": self.rho,
            "sigma_n_sq": self.sigma_n_sq, "seed": self.seed, "operator": self.op.kind,
            "seeds": self.seeds(),
        }


def instance_seeds(seed: int) -> dict[str, int]:
    return {name: derive_seed(seed, i) for i, name in enumerate(("L", "S", "noise", "operator"))}


def rank_from_gamma(n1: int, gamma: float) -> int:
    return max(1, int(round(gamma * n1)))


def measurements_from_alpha(n: int, alpha: float) -> int:
    return max(1, int(round(alpha * n)))


def make_instance(n1: int, n2: int, alpha: float, rho: float, gamma: float,
                  sigma_n_sq: float = 0.0, seed: int = 0,
                  operator: str = "partial-dct") -> ProblemInstance:
    if not 0 < alpha <= 1:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    seeds = instance_seeds(seed)
    r = rank_from_gamma(n1, gamma)
    m = measurements_from_alpha(n1 * n2, alpha)
    L = generate_low_rank(n1, n2, r, seeds["L"])
    S = generate_sparse(n1, n2, rho, seeds["S"])
    op = operators.make_operator(operator, n1, n2, m, seeds["operator"])
    y = measure(op, L, S, sigma_n_sq, seeds["noise"])
    return ProblemInstance(L, S, y, op, float(sigma_n_sq), r, float(rho), int(seed))


def dump_instance(inst: ProblemInstance, path: str | Path) -> None:
    """Write the regeneration recipe (dims, seeds, noise level) as a compressed numpy container."""
    meta = inst.metadata()
    np.savez_compressed(
        path,
        dims=np.array([inst.n1, inst.n2, inst.m, inst.r], dtype=np.int64),
        seeds=np.array([meta["seeds"][k] for k in ("L", "S", "noise", "operator")], dtype=np.uint64),
        base_seed=np.array([inst.seed], dtype=np.uint64),
        sigma_n_sq=np.array([inst.sigma_n_sq]),
        rho=np.array([inst.rho]),
        meta=np.array(json.dumps(meta)),
    )


def load_instance(path: str | Path) -> ProblemInstance:
    with np.load(path) as z:
        n1, n2, m, r = (int(v) for v in z["dims"])
        seed = int(z["base_seed"][0])
        sigma_n_sq = float(z["sigma_n_sq"][0])
        rho = float(z["rho"][0])
        meta = json.loads(str(z["meta"]))
    seeds = instance_seeds(seed)
    L = generate_low_rank(n1, n2, r, seeds["L"])
    S = generate_sparse(n1, n2, rho, seeds["S"])
    op = operators.make_operator(meta["operator"], n1, n2, m, seeds["operator"])
    y = measure(op, L, S, sigma_n_sq, seeds["noise"])
    return ProblemInstance(L, S, y, op, sigma_n_sq, r, rho, seed)
