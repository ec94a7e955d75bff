"""Controller configuration and per-step decisions."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Variant(str, Enum):
    MPC = "MPC"
    DEEPC = "DeePC"
    HDEEPC = "HDeePC"
    HDEEPC_CONDENSED = "HDeePC_Condensed"
    DEEPC_CONDENSED = "DeePC_Condensed"
    NL_HDEEPC = "NL_HDeePC"


class Norm(str, Enum):
    L1 = "L1"
    L2SQ = "L2sq"


@dataclass(frozen=True)
class ConstraintSet:
    """Per-channel box; use +-inf for unbounded channels."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in size")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, size: int) -> "ConstraintSet":
        return cls(np.full(size, -np.inf), np.full(size, np.inf))

    @classmethod
    def symmetric(cls, bound) -> "ConstraintSet":
        b = np.abs(np.asarray(bound, dtype=float).reshape(-1))
        return cls(-b, b)

    @property
    def active(self) -> bool:
        return bool(np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper)))

    def contains(self, v, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))


@dataclass(frozen=True)
class RegularizationSpec:
    lambda_g: float = 0.0
    lambda_y: float = 0.0
    g_norm: Norm = Norm.L2SQ
    slack_norm: Norm = Norm.L2SQ
    slack_enabled: bool = False

    def __post_init__(self):
        object.__setattr__(self, "g_norm", Norm(self.g_norm))
        object.__setattr__(self, "slack_norm", Norm(self.slack_norm))
        for name in ("lambda_g", "lambda_y"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative")

    def penalty_g(self, g) -> float:
        g = np.asarray(g, dtype=float)
        if self.lambda_g == 0 or g.size == 0:
            return 0.0
        return self.lambda_g * (float(np.sum(np.abs(g))) if self.g_norm is Norm.L1 else float(g @ g))

    def penalty_slack(self, sigma) -> float:
        if not self.slack_enabled or sigma is None or self.lambda_y == 0:
            return 0.0
        s = np.asarray(sigma, dtype=float)
        return self.lambda_y * (float(np.sum(np.abs(s))) if self.slack_norm is Norm.L1 else float(s @ s))


@dataclass(frozen=True)
class ControllerSpec:
    N: int
    T_ini: int
    Q: np.ndarray
    R: np.ndarray
    u_box: ConstraintSet | None = None
    y_box: ConstraintSet | None = None
    reg: RegularizationSpec = field(default_factory=RegularizationSpec)
    variant: Variant = Variant.HDEEPC

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.N < 1 or self.T_ini < 1:
            raise ValueError("N and T_ini must be at least 1")
        if Q.shape[0] != Q.shape[1] or R.shape[0] != R.shape[1]:
            raise ValueError("Q and R must be square")
        if not np.allclose(Q, Q.T) or not np.allclose(R, R.T):
            raise ValueError("Q and R must be symmetric")
        if Q.size and np.min(np.linalg.eigvalsh(Q)) < -1e-12 * max(1.0, np.abs(Q).max()):
            raise ValueError("Q must be positive semidefinite")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError as exc:
            raise ValueError("R must be positive definite") from exc
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]


@dataclass
class StepDecision:
    u_star: np.ndarray
    y_pred: np.ndarray
    g_star: np.ndarray | None
    objective: float
    status: str
    x_kappa: np.ndarray | None = None
    sigma: np.ndarray | None = None
    iterations: int = 0
    converged: bool = True

    @property
    def ok(self) -> bool:
        return self.status == "Optimal"
