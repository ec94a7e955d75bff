"""Condensed DeePC and hybrid DeePC: g is the only trajectory variable.

Input and output boxes are not supported in condensed form. The known outputs
of the hybrid variant are eliminated through the known dynamics driven by
``u = U_F g`` and ``y_u = Y_UF g``, so only known blocks are read.
"""

from __future__ import annotations

import numpy as np

from hdeepc.behavior import HankelBlocks, InitWindow
from hdeepc.errors import BoxesUnsupported, DimensionMismatch
from hdeepc.plantlab import observability_matrix, toeplitz_matrix
from hdeepc.predictors.hdeepc import _transform_or_zero
from hdeepc.predictors.qpbuild import EncodedQp, QpBuilder, add_regularizers, blkdiag_rep, finish, output_selectors
from hdeepc.predictors.spec import ControllerSpec, StepDecision
from hdeepc.splitmodel import PartitionedPlant, TransformPair


def _reject_boxes(spec: ControllerSpec, u_known) -> None:
    if (spec.u_box is not None and spec.u_box.active) or (spec.y_box is not None and spec.y_box.active):
        raise BoxesUnsupported("condensed formulations do not support input/output boxes")
    if u_known is not None and not np.all(np.isnan(np.asarray(u_known, dtype=float))):
        raise BoxesUnsupported("condensed formulations cannot pin inputs")


def _past_rows(b: QpBuilder, blocks: HankelBlocks, window: InitWindow, spec: ControllerSpec) -> bool:
    p_y, T_ini = blocks.p_y, blocks.T_ini
    b.equal({"g": blocks.U_P}, window.u_ini, "data_past_u")
    slack = spec.reg.slack_enabled and p_y > 0
    if slack:
        b.var("sigma", p_y * T_ini)
        b.equal({"g": blocks.Y_P, "sigma": -np.eye(p_y * T_ini)}, window.y_ini, "data_past_y")
    else:
        b.equal({"g": blocks.Y_P}, window.y_ini, "data_past_y")
    return slack


def build_condensed_deepc(blocks: HankelBlocks, spec: ControllerSpec, window: InitWindow, r, u_known=None) -> EncodedQp:
    _reject_boxes(spec, u_known)
    N, m, p = spec.N, blocks.m, blocks.p_y
    if (spec.m, spec.p) != (m, p):
        raise DimensionMismatch("spec and data dimensions differ")
    window.check(blocks)
    r = np.asarray(r, dtype=float).reshape(-1)
    b = QpBuilder()
    b.var("g", blocks.K)
    slack = _past_rows(b, blocks, window, spec)
    b.least_squares({"g": blocks.Y_F}, r, blkdiag_rep(spec.Q, N))
    b.least_squares({"g": blocks.U_F}, np.zeros(N * m), blkdiag_rep(spec.R, N))
    add_regularizers(b, spec)

    def decode(sol, const):
        g = sol.z_star[b["g"]]
        return StepDecision(
            u_star=(blocks.U_F @ g).reshape(N, m),
            y_pred=(blocks.Y_F @ g).reshape(N, p),
            g_star=g,
            objective=sol.objective + const,
            status=sol.status.value,
            sigma=sol.z_star[b["sigma"]] if slack else None,
            iterations=sol.iterations,
        )

    return finish(b, decode)


def known_output_map(pp: PartitionedPlant, tp: TransformPair, blocks: HankelBlocks, N: int):
    """Affine map g -> stacked y_kappa: returns (offset matrix on x_kappa_hat, matrix on g)."""
    m, p_u = pp.m, pp.p_u
    A = pp.A_kappa
    Bw = np.hstack([pp.B_kappa, tp.A_y])
    Cw = pp.C_kappa
    Dw = np.hstack([pp.D_kappa, tp.C_y])
    O = observability_matrix(A, Cw, N)
    T = toeplitz_matrix(A, Bw, Cw, Dw, N)
    # interleave (u(k), y_u(k)) per step
    W = np.zeros((N * (m + p_u), blocks.K))
    for k in range(N):
        W[k * (m + p_u):k * (m + p_u) + m] = blocks.U_F[k * m:(k + 1) * m]
        W[k * (m + p_u) + m:(k + 1) * (m + p_u)] = blocks.Y_F[k * p_u:(k + 1) * p_u]
    return O, T @ W


def build_condensed_hdeepc(
    pp: PartitionedPlant,
    tp: TransformPair | None,
    blocks: HankelBlocks,
    spec: ControllerSpec,
    window: InitWindow,
    r,
    u_known=None,
) -> EncodedQp:
    _reject_boxes(spec, u_known)
    tp = _transform_or_zero(pp, tp)
    N, m = spec.N, pp.m
    if blocks.p_y != pp.p_u or blocks.m != m:
        raise DimensionMismatch("blocks must carry the unknown outputs only")
    window.check(blocks)
    x0 = np.zeros(0) if window.x_kappa_hat is None else window.x_kappa_hat
    if x0.size != pp.n_kappa:
        raise DimensionMismatch("known-state estimate has the wrong size")
    r = np.asarray(r, dtype=float).reshape(-1)
    b = QpBuilder()
    b.var("g", blocks.K)
    slack = _past_rows(b, blocks, window, spec)
    Su, Sk = output_selectors(pp.p, pp.unknown_outputs, pp.kappa_outputs, N)
    if pp.p_kappa:
        O, H = known_output_map(pp, tp, blocks, N)
        y_off = Sk @ (O @ x0) if pp.n_kappa else np.zeros(N * pp.p)
        Yg = Su @ blocks.Y_F + Sk @ H
    else:
        y_off = np.zeros(N * pp.p)
        Yg = Su @ blocks.Y_F
    b.least_squares({"g": Yg}, r - y_off, blkdiag_rep(spec.Q, N))
    b.least_squares({"g": blocks.U_F}, np.zeros(N * m), blkdiag_rep(spec.R, N))
    add_regularizers(b, spec)

    def decode(sol, const):
        g = sol.z_star[b["g"]]
        return StepDecision(
            u_star=(blocks.U_F @ g).reshape(N, m),
            y_pred=(Yg @ g + y_off).reshape(N, pp.p),
            g_star=g,
            objective=sol.objective + const,
            status=sol.status.value,
            sigma=sol.z_star[b["sigma"]] if slack else None,
            iterations=sol.iterations,
        )

    return finish(b, decode)


def build_condensed(variant: str, *args, **kwargs) -> EncodedQp:
    """Dispatch on ``variant`` in {"DeePC", "HDeePC"}."""
    if variant in ("DeePC", "DeePC_Condensed"):
        return build_condensed_deepc(*args, **kwargs)
    if variant in ("HDeePC", "HDeePC_Condensed"):
        return build_condensed_hdeepc(*args, **kwargs)
    raise ValueError(f"unknown condensed variant {variant!r}")
