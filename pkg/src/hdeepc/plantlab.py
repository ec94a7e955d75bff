"""Plant models and signal generators.

Every plant exposes ``n``, ``m``, ``p`` and ``step(x, u, t) -> (x_next, y)``
where ``y`` is the output at the current state and input. Time-varying plants
use ``t``; the others ignore it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from hdeepc.errors import DimensionMismatch, ExcitationFailed, LengthTooShort


def _mat(a, rows=None, cols=None, name="matrix") -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 1 and a.size == 0:
        a = a.reshape(rows or 0, cols or 0)
    a = np.atleast_2d(a)
    if rows is not None and cols is not None and a.size == 0:
        a = a.reshape(rows, cols)
    if (rows is not None and a.shape[0] != rows) or (cols is not None and a.shape[1] != cols):
        raise DimensionMismatch(f"{name} has shape {a.shape}, expected ({rows}, {cols})")
    return a


@dataclass(frozen=True)
class LtiPlant:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        n = A.shape[0] if A.ndim == 2 else 0
        A = _mat(A, n, n, "A")
        B = np.array(self.B, dtype=float)
        m = B.shape[1] if B.ndim == 2 else 0
        B = _mat(B, n, m, "B")
        C = np.array(self.C, dtype=float)
        p = C.shape[0] if C.ndim == 2 else 0
        C = _mat(C, p, n, "C")
        D = _mat(self.D, p, m, "D")
        for name, val in zip("ABCD", (A, B, C, D)):
            if not np.all(np.isfinite(val)):
                raise ValueError(f"{name} must be finite")
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def step(self, x, u, t: int = 0):
        return lti_step(self, x, u)

    def at(self, t: int) -> "LtiPlant":
        return self


def lti_step(plant: LtiPlant, x, u):
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.size != plant.n or u.size != plant.m:
        raise DimensionMismatch(f"x has size {x.size} (n={plant.n}), u has size {u.size} (m={plant.m})")
    return plant.A @ x + plant.B @ u, plant.C @ x + plant.D @ u


def is_controllable(A, B, tol: float = 1e-9) -> bool:
    from hdeepc.densekit import rank_of

    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return rank_of(np.hstack(blocks), tol) == n


def observability_matrix(A, C, N: int) -> np.ndarray:
    """col(C, CA, ..., CA^(N-1))."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    rows = []
    M = C
    for _ in range(N):
        rows.append(M)
        M = M @ A
    return np.vstack(rows)


def toeplitz_matrix(A, B, C, D, N: int) -> np.ndarray:
    """Lower block-triangular Toeplitz map from stacked inputs to stacked outputs."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    p, m = D.shape
    markov = [D]
    M = B
    for _ in range(1, N):
        markov.append(C @ M)
        M = A @ M
    T = np.zeros((p * N, m * N))
    for i in range(N):
        for j in range(i + 1):
            T[i * p:(i + 1) * p, j * m:(j + 1) * m] = markov[i - j]
    return T


def rollout(plant, x0, inputs, t0: int = 0):
    """Simulate ``len(inputs)`` steps. Returns (states (N+1, n), outputs (N, p))."""
    x = np.asarray(x0, dtype=float).reshape(-1)
    xs, ys = [x], []
    for k, u in enumerate(np.atleast_2d(inputs)):
        x, y = plant.step(x, u, t0 + k)
        xs.append(x)
        ys.append(y)
    return np.array(xs), np.array(ys).reshape(len(ys), -1)


@dataclass(frozen=True)
class TimeVaryingPlant:
    """Nominal LTI plant whose selected rows of ``A`` are scaled by ``1 + delta``.

    ``delta ~ N(0, perturbation_sd^2)`` is drawn independently per entry and
    per step, deterministically from ``(rng_seed, t)``.
    """

    nominal: LtiPlant
    perturbation_sd: float = 0.10
    perturbed_rows: tuple[int, ...] = ()
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "perturbed_rows", tuple(int(r) for r in self.perturbed_rows))

    @property
    def n(self) -> int:
        return self.nominal.n

    @property
    def m(self) -> int:
        return self.nominal.m

    @property
    def p(self) -> int:
        return self.nominal.p

    def at(self, t: int) -> LtiPlant:
        return perturb_time_varying(self, t)

    def step(self, x, u, t: int = 0):
        return lti_step(self.at(t), x, u)


def perturb_time_varying(tv: TimeVaryingPlant, t: int) -> LtiPlant:
    rows = list(tv.perturbed_rows)
    if tv.perturbation_sd == 0 or not rows:
        return tv.nominal
    rng = np.random.default_rng([tv.rng_seed, int(t) + 1])
    A = np.array(tv.nominal.A)
    delta = rng.normal(0.0, tv.perturbation_sd, size=(len(rows), A.shape[1]))
    A[rows, :] *= 1.0 + delta
    return replace(tv.nominal, A=A)


class BessMode(str, Enum):
    LINEAR = "Linear"
    EFFICIENCY_NONLINEAR = "EfficiencyNonlinear"
    STRONG_NONLINEAR = "StrongNonlinear"


def bess_matrices(tau_q: float) -> LtiPlant:
    """DC-microgrid node with a battery: states (voltage, line current, SoC)."""
    A = [[0.98, 1.0, 0.0], [-0.2, 0.6, 0.0], [0.0, 0.0, 1.0]]
    B = [[1.0, 1.0], [0.0, 0.0], [-1e-3 / tau_q, 0.0]]
    C = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
    return LtiPlant(A, B, C, np.zeros((2, 2)))


@dataclass(frozen=True)
class BessPlant:
    """Battery/microgrid plant in one of three modes.

    Inputs are (battery current, disturbance current); outputs are
    (node voltage deviation, state of charge).
    """

    tau_q: float = 1e3
    eta: float = 1.0
    mode: BessMode = BessMode.LINEAR
    a: float = 0.9
    b: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "mode", BessMode(self.mode))
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")

    n = 3
    m = 2
    p = 2

    @property
    def linear(self) -> LtiPlant:
        return bess_matrices(self.tau_q)

    def alpha(self, u1: float) -> float:
        return 1.0 / self.eta if u1 >= 0 else self.eta

    def soc_step(self, soc, u1):
        return soc - 1e-3 * self.alpha(u1) / self.tau_q * u1

    def step(self, x, u, t: int = 0):
        return nl_step(self, x, u)


def nl_step(plant, x, u, t: int = 0):
    """Step a BessPlant in its configured mode, or any object with ``step``."""
    if not isinstance(plant, BessPlant):
        return plant.step(x, u, t)
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.size != 3 or u.size != 2:
        raise DimensionMismatch(f"BESS expects x of size 3 and u of size 2, got {x.size}, {u.size}")
    lin = plant.linear
    y = lin.C @ x
    if plant.mode is BessMode.LINEAR:
        return lin.A @ x + lin.B @ u, y
    if plant.mode is BessMode.EFFICIENCY_NONLINEAR:
        x_next = lin.A @ x + lin.B @ u
        x_next[2] = plant.soc_step(x[2], u[0])
        return x_next, y
    a, b = plant.a, plant.b
    x_next = np.array([
        a * np.sin(x[0]) + b * x[0] * u[0] + u[0] + u[1],
        a * np.sin(x[1]) + b * x[1] * u[1] + u[1],
        plant.soc_step(x[2], u[0]),
    ])
    return x_next, y


@dataclass(frozen=True)
class NoiseSpec:
    """Additive measurement noise. ``scale`` is the standard deviation for
    Gaussian noise and the half-width for uniform noise."""

    kind: str = "None"
    scale: float | Sequence[float] = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("Gaussian", "Uniform", "None"):
            raise ValueError(f"unknown noise kind {self.kind!r}")

    def generator(self, stream: int = 0) -> "NoiseSource":
        return NoiseSource(self, np.random.default_rng([self.rng_seed, stream]))


@dataclass
class NoiseSource:
    spec: NoiseSpec
    rng: np.random.Generator = field(repr=False)

    def draw(self, p: int) -> np.ndarray:
        scale = np.broadcast_to(np.asarray(self.spec.scale, dtype=float), (p,))
        if self.spec.kind == "Gaussian":
            return self.rng.normal(0.0, 1.0, p) * scale
        if self.spec.kind == "Uniform":
            return self.rng.uniform(-1.0, 1.0, p) * scale
        return np.zeros(p)


def generate_pe_input(
    m: int,
    T: int,
    L: int,
    rng_seed: int = 0,
    scale: float | Sequence[float] = 1.0,
    max_attempts: int = 10,
    tol: float = 1e-9,
) -> np.ndarray:
    """Gaussian input sequence of shape (T, m), persistently exciting of order L."""
    from hdeepc.behavior import check_pe

    if T < (m + 1) * L - 1:
        raise LengthTooShort(f"T={T} is shorter than (m+1)L-1={(m + 1) * L - 1}")
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (m,))
    for attempt in range(max_attempts):
        rng = np.random.default_rng([rng_seed, attempt])
        u = rng.normal(size=(T, m)) * scale
        ok, _ = check_pe(u, L, tol)
        if ok:
            return u
    raise ExcitationFailed(f"no PE sequence of order {L} after {max_attempts} attempts")


def smoothed_disturbance(steps: int, window: int = 10, sd: float = 1.0, rng_seed: int = 0) -> np.ndarray:
    """N(0, sd^2) samples passed through a causal moving average."""
    rng = np.random.default_rng(rng_seed)
    raw = rng.normal(0.0, sd, steps + window - 1)
    return np.convolve(raw, np.ones(window) / window, mode="valid")


def coupled8_plant(outputs: str = "triple", seed: int = 7) -> LtiPlant:
    """Coupled 8-state, 2-input surrogate of a triple-mass drive.

    States are (motor angle, motor speed) for the two drive-side states followed
    by six coupled mass states. ``outputs="triple"`` measures x1, x2 and one
    combination of the known states; ``"full"`` measures every state.
    """
    rng = np.random.default_rng(seed)
    n, m = 8, 2
    A = np.zeros((n, n))
    # three masses in a chain, discretized spring/damper coupling
    dt, k, c = 0.1, 1.0, 0.2
    for i in range(4):
        pos, vel = 2 * i, 2 * i + 1
        A[pos, pos] = 1.0
        A[pos, vel] = dt
        A[vel, vel] = 1.0 - dt * c
        for j in (i - 1, i + 1):
            if 0 <= j < 4:
                A[vel, pos] -= dt * k
                A[vel, 2 * j] += dt * k
    A += 0.01 * rng.normal(size=(n, n))
    A *= 0.97 / max(abs(np.linalg.eigvals(A)))
    B = np.zeros((n, m))
    B[1, 0] = dt
    B[7, 1] = dt
    B[3, 0] = 0.02
    if outputs == "full":
        C = np.eye(n)
    elif outputs == "triple":
        C = np.zeros((3, n))
        C[0, 0] = 1.0
        C[1, 1] = 1.0
        C[2, 4] = 1.0
    else:
        raise ValueError(f"unknown output set {outputs!r}")
    return LtiPlant(A, B, C, np.zeros((C.shape[0], m)))


@dataclass(frozen=True)
class FunctionPlant:
    """Plant defined by user callables ``f(x, u) -> x_next`` and ``h(x, u) -> y``."""

    f: Callable
    h: Callable
    n: int
    m: int
    p: int

    def step(self, x, u, t: int = 0):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return np.asarray(self.f(x, u), dtype=float), np.asarray(self.h(x, u), dtype=float)
