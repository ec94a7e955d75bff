"""Assemble a QpProblem from named decision-variable blocks."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import block_diag

from hdeepc.densekit import QpProblem, QpSettings, QpSolution, qp_solve
from hdeepc.predictors.spec import ConstraintSet, ControllerSpec, Norm, StepDecision


class QpBuilder:
    def __init__(self):
        self._slices: dict[str, slice] = {}
        self.n = 0
        self._rows: list[tuple[dict, np.ndarray, np.ndarray, str]] = []
        self._quad: list[tuple[np.ndarray, np.ndarray]] = []  # (operator, weight)
        self._q_terms: list[tuple[np.ndarray, np.ndarray]] = []  # (operator, linear coeff)
        self.constant = 0.0

    def var(self, name: str, size: int) -> slice:
        sl = slice(self.n, self.n + int(size))
        self._slices[name] = sl
        self.n += int(size)
        return sl

    def __getitem__(self, name: str) -> slice:
        return self._slices[name]

    def has(self, name: str) -> bool:
        return name in self._slices and self._slices[name].stop > self._slices[name].start

    def operator(self, terms: dict) -> np.ndarray:
        """Dense row operator sum_i M_i v_i over the full decision vector."""
        rows = {np.atleast_2d(M).shape[0] for M in terms.values()}
        if len(rows) != 1:
            raise ValueError(f"inconsistent row counts {rows}")
        op = np.zeros((rows.pop(), self.n))
        for name, M in terms.items():
            M = np.atleast_2d(np.asarray(M, dtype=float))
            sl = self._slices[name]
            if M.shape[1] != sl.stop - sl.start:
                raise ValueError(f"block for {name} has {M.shape[1]} columns, expected {sl.stop - sl.start}")
            op[:, sl] += M
        return op

    def constrain(self, terms: dict, lo, hi, tag: str) -> None:
        op = self.operator(terms)
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (op.shape[0],)).copy()
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (op.shape[0],)).copy()
        keep = np.isfinite(lo) | np.isfinite(hi)
        if np.any(keep):
            self._rows.append((op[keep], lo[keep], hi[keep], tag))

    def equal(self, terms: dict, rhs, tag: str) -> None:
        op = self.operator(terms)
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (op.shape[0],)).copy()
        if op.shape[0]:
            self._rows.append((op, rhs, rhs.copy(), tag))

    def least_squares(self, terms: dict, target, W) -> None:
        """Add ||sum_i M_i v_i - target||_W^2 to the objective."""
        op = self.operator(terms)
        target = np.asarray(target, dtype=float).reshape(-1)
        W = np.atleast_2d(np.asarray(W, dtype=float))
        self._quad.append((op, W))
        self._q_terms.append((op, -2.0 * W @ target))
        self.constant += float(target @ W @ target)

    def linear(self, name: str, c) -> None:
        sl = self._slices[name]
        op = np.zeros((sl.stop - sl.start, self.n))
        op[:, sl] = np.eye(sl.stop - sl.start)
        self._q_terms.append((op, np.broadcast_to(np.asarray(c, dtype=float), (op.shape[0],))))

    def _pad(self, op: np.ndarray) -> np.ndarray:
        # variables declared after a term was added extend the decision vector
        if op.shape[1] == self.n:
            return op
        return np.hstack([op, np.zeros((op.shape[0], self.n - op.shape[1]))])

    def build(self) -> QpProblem:
        P = np.zeros((self.n, self.n))
        for op, W in self._quad:
            op = self._pad(op)
            P += 2.0 * op.T @ W @ op
        P = 0.5 * (P + P.T)
        q = np.zeros(self.n)
        for op, c in self._q_terms:
            q += self._pad(op).T @ c
        if self._rows:
            A = np.vstack([self._pad(r[0]) for r in self._rows])
            lo = np.concatenate([r[1] for r in self._rows])
            hi = np.concatenate([r[2] for r in self._rows])
        else:
            A, lo, hi = np.zeros((0, self.n)), np.zeros(0), np.zeros(0)
        return QpProblem(P, q, A, lo, hi)

    def row_counts(self) -> Counter:
        c = Counter()
        for op, _, _, tag in self._rows:
            c[tag] += op.shape[0]
        return c

    def equality_count(self) -> int:
        return int(sum(op.shape[0] for op, lo, hi, _ in self._rows if np.all(lo == hi)))


@dataclass
class EncodedQp:
    """A predictive-control QP plus the decoder back to a StepDecision."""

    qp: QpProblem
    decoder: Callable[[QpSolution], StepDecision]
    constant: float
    row_counts: Counter
    equality_rows: int

    def decode(self, sol: QpSolution) -> StepDecision:
        return self.decoder(sol)

    def solve(self, settings: QpSettings | None = None) -> StepDecision:
        return self.decode(qp_solve(self.qp, settings))


def blkdiag_rep(M: np.ndarray, N: int) -> np.ndarray:
    M = np.atleast_2d(M)
    if M.size == 0:
        return np.zeros((M.shape[0] * N, M.shape[1] * N))
    return block_diag(*([M] * N))


def add_input_terms(b: QpBuilder, spec: ControllerSpec, m: int, u_known=None, boxes: bool = True) -> None:
    """Input cost and input box rows on the ``u`` block. ``u_known`` is an
    (N, m) array whose non-NaN entries pin the corresponding inputs."""
    N = spec.N
    b.least_squares({"u": np.eye(N * m)}, np.zeros(N * m), blkdiag_rep(spec.R, N))
    if not boxes:
        return
    box = spec.u_box or ConstraintSet.unbounded(m)
    lo = np.tile(box.lower, N)
    hi = np.tile(box.upper, N)
    if u_known is not None:
        fixed = np.asarray(u_known, dtype=float).reshape(-1)
        pin = ~np.isnan(fixed)
        lo[pin] = fixed[pin]
        hi[pin] = fixed[pin]
    b.constrain({"u": np.eye(N * m)}, lo, hi, "u_box")


def add_output_terms(b: QpBuilder, spec: ControllerSpec, y_terms: dict, r, boxes: bool = True) -> None:
    """Tracking cost and output boxes on the full output ``sum_i M_i v_i``."""
    N, p = spec.N, spec.p
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.size != N * p:
        raise ValueError(f"reference has {r.size} entries, expected N*p = {N * p}")
    b.least_squares(y_terms, r, blkdiag_rep(spec.Q, N))
    if boxes and spec.y_box is not None and spec.y_box.active:
        b.constrain(y_terms, np.tile(spec.y_box.lower, N), np.tile(spec.y_box.upper, N), "y_box")


def add_regularizers(b: QpBuilder, spec: ControllerSpec) -> None:
    reg = spec.reg
    if b.has("g") and reg.lambda_g > 0:
        K = b["g"].stop - b["g"].start
        if reg.g_norm is Norm.L2SQ:
            b.least_squares({"g": np.eye(K)}, np.zeros(K), reg.lambda_g * np.eye(K))
        else:
            b.var("g_abs", K)
            b.constrain({"g_abs": np.eye(K), "g": -np.eye(K)}, 0.0, np.inf, "l1_epigraph")
            b.constrain({"g_abs": np.eye(K), "g": np.eye(K)}, 0.0, np.inf, "l1_epigraph")
            b.linear("g_abs", reg.lambda_g)
    if b.has("sigma") and reg.lambda_y > 0:
        S = b["sigma"].stop - b["sigma"].start
        if reg.slack_norm is Norm.L2SQ:
            b.least_squares({"sigma": np.eye(S)}, np.zeros(S), reg.lambda_y * np.eye(S))
        else:
            b.var("sigma_abs", S)
            b.constrain({"sigma_abs": np.eye(S), "sigma": -np.eye(S)}, 0.0, np.inf, "l1_epigraph")
            b.constrain({"sigma_abs": np.eye(S), "sigma": np.eye(S)}, 0.0, np.inf, "l1_epigraph")
            b.linear("sigma_abs", reg.lambda_y)


def output_selectors(p: int, unknown: tuple, kappa: tuple, N: int):
    """Stacked selectors mapping (y_u, y_kappa) back to original output order."""
    Su = np.zeros((p, len(unknown)))
    Sk = np.zeros((p, len(kappa)))
    for j, i in enumerate(unknown):
        Su[i, j] = 1.0
    for j, i in enumerate(kappa):
        Sk[i, j] = 1.0
    return blkdiag_rep(Su, N), blkdiag_rep(Sk, N)


def finish(b: QpBuilder, decoder) -> EncodedQp:
    qp = b.build()
    const = b.constant
    return EncodedQp(qp, lambda sol: decoder(sol, const), const, b.row_counts(), b.equality_count())
