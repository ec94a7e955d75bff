"""Data-enabled predictive control over the full output vector."""

from __future__ import annotations

import numpy as np

from hdeepc.behavior import HankelBlocks, InitWindow
from hdeepc.errors import DimensionMismatch
from hdeepc.predictors.qpbuild import (
    EncodedQp, QpBuilder, add_input_terms, add_output_terms, add_regularizers, finish,
)
from hdeepc.predictors.spec import ControllerSpec, StepDecision


def build_deepc(blocks: HankelBlocks, spec: ControllerSpec, window: InitWindow, r, u_known=None) -> EncodedQp:
    """Encode DeePC over (g, u, y[, sigma, epigraph auxiliaries]).

    With the slack enabled the past-output rows read ``Y_P g - sigma = y_ini``.
    """
    N, T_ini = spec.N, spec.T_ini
    if (blocks.N, blocks.T_ini) != (N, T_ini):
        raise DimensionMismatch("Hankel blocks were built for a different (T_ini, N)")
    m, p = blocks.m, blocks.p_y
    if (spec.m, spec.p) != (m, p):
        raise DimensionMismatch(f"spec is for (m, p) = {(spec.m, spec.p)}, data has {(m, p)}")
    window.check(blocks)
    K = blocks.K

    b = QpBuilder()
    b.var("g", K)
    b.var("u", N * m)
    b.var("y", N * p)
    slack = spec.reg.slack_enabled
    if slack:
        b.var("sigma", p * T_ini)

    b.equal({"g": blocks.U_P}, window.u_ini, "data_past_u")
    if slack:
        b.equal({"g": blocks.Y_P, "sigma": -np.eye(p * T_ini)}, window.y_ini, "data_past_y")
    else:
        b.equal({"g": blocks.Y_P}, window.y_ini, "data_past_y")
    b.equal({"g": blocks.U_F, "u": -np.eye(N * m)}, 0.0, "data_future_u")
    b.equal({"g": blocks.Y_F, "y": -np.eye(N * p)}, 0.0, "data_future_y")

    add_input_terms(b, spec, m, u_known)
    add_output_terms(b, spec, {"y": np.eye(N * p)}, r)
    add_regularizers(b, spec)

    def decode(sol, const):
        z = sol.z_star
        return StepDecision(
            u_star=z[b["u"]].reshape(N, m),
            y_pred=z[b["y"]].reshape(N, p),
            g_star=z[b["g"]],
            objective=sol.objective + const,
            status=sol.status.value,
            sigma=z[b["sigma"]] if slack else None,
            iterations=sol.iterations,
        )

    return finish(b, decode)
