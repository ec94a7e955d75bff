"""Hankel matrices, persistency of excitation and offline data collection.

Stacked vectors are time-major and channel-minor: ``(w(0)_1..w(0)_q,
w(1)_1..w(1)_q, ...)``, so the behavioral constraint is a plain matrix-vector
product against the block rows of the Hankel matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from hdeepc.densekit import rank_of
from hdeepc.errors import DimensionMismatch, TooShort

PE_TOL = 1e-9


def as_signal(signal) -> np.ndarray:
    """Coerce a sequence of q-vectors (or scalars) to a (T, q) array."""
    w = np.asarray(signal, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if w.ndim != 2:
        raise DimensionMismatch(f"signal must be 1-D or 2-D, got shape {w.shape}")
    return w


def build_hankel(signal, L: int) -> np.ndarray:
    w = as_signal(signal)
    T, q = w.shape
    if L < 1 or T < L:
        raise TooShort(f"signal of length {T} cannot fill a depth-{L} Hankel matrix")
    K = T - L + 1
    H = np.empty((q * L, K))
    for i in range(L):
        H[i * q:(i + 1) * q, :] = w[i:i + K, :].T
    return H


def check_pe(u_d, L: int, tol: float = PE_TOL) -> tuple[bool, int]:
    """Return (is persistently exciting of order L, achieved Hankel rank)."""
    w = as_signal(u_d)
    H = build_hankel(w, L)
    r = rank_of(H, tol)
    return r == w.shape[1] * L, r


def stack(rows) -> np.ndarray:
    return as_signal(rows).reshape(-1)


def unstack(v, q: int) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(-1, q) if q else np.zeros((np.size(v), 0))


@dataclass(frozen=True)
class DataLog:
    u_d: np.ndarray
    y_d: np.ndarray

    def __post_init__(self):
        u = as_signal(self.u_d)
        y = np.asarray(self.y_d, dtype=float)
        y = y.reshape(u.shape[0], -1) if y.size == 0 else as_signal(y)
        if u.shape[0] != y.shape[0]:
            raise DimensionMismatch("input and output logs differ in length")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise ValueError("data log contains non-finite values")
        object.__setattr__(self, "u_d", u)
        object.__setattr__(self, "y_d", y)

    @property
    def T(self) -> int:
        return self.u_d.shape[0]

    @property
    def m(self) -> int:
        return self.u_d.shape[1]

    @property
    def p(self) -> int:
        return self.y_d.shape[1]

    def restrict(self, channels: Sequence[int]) -> "DataLog":
        return DataLog(self.u_d, self.y_d[:, list(channels)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"u{i + 1}" for i in range(self.m)] + [f"y{i + 1}" for i in range(self.p)])
            for t in range(self.T):
                w.writerow([t] + [repr(float(v)) for v in self.u_d[t]] + [repr(float(v)) for v in self.y_d[t]])

    @classmethod
    def from_csv(cls, path) -> "DataLog":
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if not header or header[0] != "t":
            raise ValueError("data log CSV must start with a 't' column")
        ui = [i for i, h in enumerate(header) if h.startswith("u")]
        yi = [i for i, h in enumerate(header) if h.startswith("y")]
        data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
        return cls(data[:, ui], data[:, yi])


@dataclass(frozen=True)
class HankelBlocks:
    U_P: np.ndarray
    U_F: np.ndarray
    Y_P: np.ndarray
    Y_F: np.ndarray
    T_ini: int
    N: int
    m: int
    p_y: int

    @property
    def K(self) -> int:
        return self.U_P.shape[1]

    @property
    def T(self) -> int:
        return self.K + self.T_ini + self.N - 1


def partition_data(log: DataLog, T_ini: int, N: int, channels: Sequence[int] | None = None) -> HankelBlocks:
    """Split the depth-(T_ini+N) Hankel matrices into past and future blocks.

    ``channels`` restricts the output data to a subset (the unknown outputs).
    """
    L = T_ini + N
    if log.T < L:
        raise TooShort(f"data length {log.T} < T_ini + N = {L}")
    y = log.y_d if channels is None else log.y_d[:, list(channels)]
    m, p_y = log.m, y.shape[1]
    Hu = build_hankel(log.u_d, L)
    K = Hu.shape[1]
    Hy = build_hankel(y, L) if p_y else np.zeros((0, K))
    return HankelBlocks(
        U_P=Hu[:m * T_ini], U_F=Hu[m * T_ini:],
        Y_P=Hy[:p_y * T_ini], Y_F=Hy[p_y * T_ini:],
        T_ini=T_ini, N=N, m=m, p_y=p_y,
    )


@dataclass(frozen=True)
class InitWindow:
    u_ini: np.ndarray
    y_ini: np.ndarray
    x_kappa_hat: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "u_ini", np.asarray(self.u_ini, dtype=float).reshape(-1))
        object.__setattr__(self, "y_ini", np.asarray(self.y_ini, dtype=float).reshape(-1))
        if self.x_kappa_hat is not None:
            object.__setattr__(self, "x_kappa_hat", np.asarray(self.x_kappa_hat, dtype=float).reshape(-1))

    def check(self, blocks: HankelBlocks) -> None:
        if self.u_ini.size != blocks.m * blocks.T_ini or self.y_ini.size != blocks.p_y * blocks.T_ini:
            raise DimensionMismatch(
                f"window sizes ({self.u_ini.size}, {self.y_ini.size}) do not match "
                f"T_ini={blocks.T_ini} with m={blocks.m}, p_y={blocks.p_y}"
            )


def collect_data(
    plant,
    T: int,
    order: int,
    rng_seed: int = 0,
    scale=1.0,
    noise=None,
    output_filter: Sequence[int] | None = None,
    x0=None,
) -> DataLog:
    """Excite ``plant`` with a PE input of the given order and log the outputs.

    Noise (a ``NoiseSpec``) is added to the recorded outputs only.
    """
    from hdeepc.plantlab import generate_pe_input

    u_d = generate_pe_input(plant.m, T, order, rng_seed=rng_seed, scale=scale)
    x = np.zeros(plant.n) if x0 is None else np.asarray(x0, dtype=float)
    source = noise.generator(stream=1) if noise is not None else None
    ys = np.empty((T, plant.p))
    for t in range(T):
        x, y = plant.step(x, u_d[t], t)
        ys[t] = y + (source.draw(plant.p) if source is not None else 0.0)
    log = DataLog(u_d, ys)
    return log.restrict(output_filter) if output_filter is not None else log


def behavioral_residual(blocks: HankelBlocks, g, window: InitWindow, u, y) -> float:
    """||[U_P; Y_P; U_F; Y_F] g - [u_ini; y_ini; u; y]||_inf."""
    g = np.asarray(g, dtype=float).reshape(-1)
    if g.size != blocks.K:
        raise DimensionMismatch(f"g has size {g.size}, expected {blocks.K}")
    window.check(blocks)
    lhs = np.vstack([blocks.U_P, blocks.Y_P, blocks.U_F, blocks.Y_F]) @ g
    rhs = np.concatenate([window.u_ini, window.y_ini, stack(u) if np.size(u) else np.zeros(0),
                          np.asarray(y, dtype=float).reshape(-1)])
    if rhs.size != lhs.size:
        raise DimensionMismatch(f"trajectory has {rhs.size} entries, blocks expect {lhs.size}")
    return float(np.max(np.abs(lhs - rhs), initial=0.0))
