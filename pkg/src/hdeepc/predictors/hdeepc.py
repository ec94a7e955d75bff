"""Hybrid DeePC: data for the unknown outputs, state equations for the known part."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from hdeepc.behavior import HankelBlocks, InitWindow
from hdeepc.errors import DimensionMismatch, MissingTransform
from hdeepc.predictors.qpbuild import (
    EncodedQp, QpBuilder, add_input_terms, add_output_terms, add_regularizers, finish,
    output_selectors,
)
from hdeepc.predictors.spec import ControllerSpec, StepDecision
from hdeepc.splitmodel import KnownModel, PartitionedPlant, TransformPair


@dataclass(frozen=True)
class KnownStep:
    """Affine known dynamics for one prediction step::

        x_k(k+1) = A_y y_u(k) + A_kappa x_k(k) + B_kappa u(k) + c_x
        y_k(k)   = C_y y_u(k) + C_kappa x_k(k) + D_kappa u(k) + c_y
    """

    A_kappa: np.ndarray
    A_y: np.ndarray
    B_kappa: np.ndarray
    C_kappa: np.ndarray
    C_y: np.ndarray
    D_kappa: np.ndarray
    c_x: np.ndarray | None = None
    c_y: np.ndarray | None = None


@dataclass(frozen=True)
class HybridLayout:
    m: int
    unknown_outputs: tuple[int, ...]
    kappa_outputs: tuple[int, ...]
    n_kappa: int
    use_data: bool = True

    @property
    def p_u(self) -> int:
        return len(self.unknown_outputs)

    @property
    def p_kappa(self) -> int:
        return len(self.kappa_outputs)

    @property
    def p(self) -> int:
        return self.p_u + self.p_kappa

    @classmethod
    def of(cls, pp: PartitionedPlant) -> "HybridLayout":
        return cls(pp.m, pp.unknown_outputs, pp.kappa_outputs, pp.n_kappa, pp.n_u > 0 or pp.p_u > 0)


def known_step(known: KnownModel, tp: TransformPair) -> KnownStep:
    return KnownStep(known.A_kappa, tp.A_y, known.B_kappa, known.C_kappa, tp.C_y, known.D_kappa)


def _transform_or_zero(pp: PartitionedPlant, tp: TransformPair | None) -> TransformPair:
    if tp is not None:
        return tp
    coupled = np.any(pp.A_c != 0) or np.any(pp.C_c != 0)
    if coupled:
        raise MissingTransform("known part is coupled to unknown states but no transform pair was given")
    return TransformPair(np.zeros((pp.n_kappa, pp.p_u)), np.zeros((pp.p_kappa, pp.p_u)))


def build_hdeepc(
    pp: PartitionedPlant,
    tp: TransformPair | None,
    blocks: HankelBlocks | None,
    spec: ControllerSpec,
    window: InitWindow,
    r,
    u_known=None,
    steps: Sequence[KnownStep] | None = None,
) -> EncodedQp:
    """Encode hybrid DeePC for a partitioned LTI plant.

    Only the known blocks of ``pp`` are read. ``steps`` overrides the known
    dynamics per prediction step (time-varying or linearized models).
    """
    layout = HybridLayout.of(pp)
    if steps is None:
        steps = [known_step(pp.known(), _transform_or_zero(pp, tp))] * spec.N
    return build_hybrid(layout, steps, blocks, spec, window, r, u_known)


def build_hybrid(
    layout: HybridLayout,
    steps: Sequence[KnownStep],
    blocks: HankelBlocks | None,
    spec: ControllerSpec,
    window: InitWindow,
    r,
    u_known=None,
    extra: Callable[[QpBuilder], None] | None = None,
) -> EncodedQp:
    N, T_ini = spec.N, spec.T_ini
    m, p_u, p_k, n_k = layout.m, layout.p_u, layout.p_kappa, layout.n_kappa
    if len(steps) != N:
        raise DimensionMismatch(f"need {N} known-dynamics steps, got {len(steps)}")
    if (spec.m, spec.p) != (m, layout.p):
        raise DimensionMismatch(f"spec is for (m, p) = {(spec.m, spec.p)}, split has {(m, layout.p)}")
    x0 = np.zeros(0) if window.x_kappa_hat is None else window.x_kappa_hat
    if x0.size != n_k:
        raise DimensionMismatch(f"known-state estimate has size {x0.size}, expected {n_k}")
    use_data = layout.use_data
    if use_data:
        if blocks is None:
            raise DimensionMismatch("the data-driven part needs Hankel blocks")
        if (blocks.N, blocks.T_ini) != (N, T_ini):
            raise DimensionMismatch("Hankel blocks were built for a different (T_ini, N)")
        if blocks.p_y != p_u or blocks.m != m:
            raise DimensionMismatch(f"blocks carry (m, p_y) = {(blocks.m, blocks.p_y)}, expected {(m, p_u)}")
        window.check(blocks)
    slack = use_data and spec.reg.slack_enabled and p_u > 0

    b = QpBuilder()
    if use_data:
        b.var("g", blocks.K)
    b.var("u", N * m)
    b.var("y_u", N * p_u)
    if slack:
        b.var("sigma", p_u * T_ini)
    b.var("x_kappa", (N + 1) * n_k)
    b.var("y_kappa", N * p_k)

    if use_data:
        b.equal({"g": blocks.U_P}, window.u_ini, "data_past_u")
        if slack:
            b.equal({"g": blocks.Y_P, "sigma": -np.eye(p_u * T_ini)}, window.y_ini, "data_past_y")
        else:
            b.equal({"g": blocks.Y_P}, window.y_ini, "data_past_y")
        b.equal({"g": blocks.U_F, "u": -np.eye(N * m)}, 0.0, "data_future_u")
        b.equal({"g": blocks.Y_F, "y_u": -np.eye(N * p_u)}, 0.0, "data_future_y")

    if n_k:
        E0 = np.zeros((n_k, (N + 1) * n_k))
        E0[:, :n_k] = np.eye(n_k)
        b.equal({"x_kappa": E0}, x0, "initial_state")
        Xk = np.zeros((N * n_k, (N + 1) * n_k))
        Yx = np.zeros((N * n_k, N * p_u))
        Ux = np.zeros((N * n_k, N * m))
        cx = np.zeros(N * n_k)
        for k, st in enumerate(steps):
            rows = slice(k * n_k, (k + 1) * n_k)
            Xk[rows, (k + 1) * n_k:(k + 2) * n_k] = np.eye(n_k)
            Xk[rows, k * n_k:(k + 1) * n_k] = -st.A_kappa
            Yx[rows, k * p_u:(k + 1) * p_u] = -np.asarray(st.A_y).reshape(n_k, p_u)
            Ux[rows, k * m:(k + 1) * m] = -st.B_kappa
            if st.c_x is not None:
                cx[rows] = st.c_x
        b.equal({"x_kappa": Xk, "y_u": Yx, "u": Ux}, cx, "known_dynamics")
    if p_k:
        Yk = np.eye(N * p_k)
        Xy = np.zeros((N * p_k, (N + 1) * n_k))
        Yy = np.zeros((N * p_k, N * p_u))
        Uy = np.zeros((N * p_k, N * m))
        cy = np.zeros(N * p_k)
        for k, st in enumerate(steps):
            rows = slice(k * p_k, (k + 1) * p_k)
            Xy[rows, k * n_k:(k + 1) * n_k] = -np.asarray(st.C_kappa).reshape(p_k, n_k)
            Yy[rows, k * p_u:(k + 1) * p_u] = -np.asarray(st.C_y).reshape(p_k, p_u)
            Uy[rows, k * m:(k + 1) * m] = -st.D_kappa
            if st.c_y is not None:
                cy[rows] = st.c_y
        b.equal({"y_kappa": Yk, "x_kappa": Xy, "y_u": Yy, "u": Uy}, cy, "known_outputs")

    Su, Sk = output_selectors(layout.p, layout.unknown_outputs, layout.kappa_outputs, N)
    add_input_terms(b, spec, m, u_known)
    add_output_terms(b, spec, {"y_u": Su, "y_kappa": Sk}, r)
    add_regularizers(b, spec)
    if extra is not None:
        extra(b)

    def decode(sol, const):
        z = sol.z_star
        y_full = Su @ z[b["y_u"]] + Sk @ z[b["y_kappa"]]
        return StepDecision(
            u_star=z[b["u"]].reshape(N, m),
            y_pred=y_full.reshape(N, layout.p),
            g_star=z[b["g"]] if use_data else None,
            objective=sol.objective + const,
            status=sol.status.value,
            x_kappa=z[b["x_kappa"]].reshape(N + 1, n_k),
            sigma=z[b["sigma"]] if slack else None,
            iterations=sol.iterations,
        )

    return finish(b, decode)
