"""Model predictive control with the full state-space model."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from hdeepc.errors import DimensionMismatch
from hdeepc.plantlab import LtiPlant
from hdeepc.predictors.qpbuild import (
    EncodedQp, QpBuilder, add_input_terms, add_output_terms, finish,
)
from hdeepc.predictors.spec import ControllerSpec, StepDecision


def build_mpc(
    plant: LtiPlant | Sequence[LtiPlant],
    spec: ControllerSpec,
    x_hat,
    r,
    u_known=None,
) -> EncodedQp:
    """Encode the MPC problem over decision variables (u, x, y).

    ``plant`` may be a sequence of N plants for a time-varying prediction model.
    """
    N = spec.N
    plants = list(plant) if isinstance(plant, (list, tuple)) else [plant] * N
    if len(plants) != N:
        raise DimensionMismatch(f"need {N} prediction models, got {len(plants)}")
    n, m, p = plants[0].n, plants[0].m, plants[0].p
    x_hat = np.asarray(x_hat, dtype=float).reshape(-1)
    if x_hat.size != n:
        raise DimensionMismatch(f"x_hat has size {x_hat.size}, expected {n}")
    if (spec.m, spec.p) != (m, p):
        raise DimensionMismatch(f"spec is for (m, p) = {(spec.m, spec.p)}, plant has {(m, p)}")

    b = QpBuilder()
    b.var("u", N * m)
    b.var("x", (N + 1) * n)
    b.var("y", N * p)

    E0 = np.zeros((n, (N + 1) * n))
    E0[:, :n] = np.eye(n)
    b.equal({"x": E0}, x_hat, "initial_state")
    Ax = np.zeros((N * n, (N + 1) * n))
    Bu = np.zeros((N * n, N * m))
    Cx = np.zeros((N * p, (N + 1) * n))
    Du = np.zeros((N * p, N * m))
    for k, pk in enumerate(plants):
        Ax[k * n:(k + 1) * n, (k + 1) * n:(k + 2) * n] = np.eye(n)
        Ax[k * n:(k + 1) * n, k * n:(k + 1) * n] = -pk.A
        Bu[k * n:(k + 1) * n, k * m:(k + 1) * m] = -pk.B
        Cx[k * p:(k + 1) * p, k * n:(k + 1) * n] = -pk.C
        Du[k * p:(k + 1) * p, k * m:(k + 1) * m] = -pk.D
    b.equal({"x": Ax, "u": Bu}, 0.0, "dynamics")
    b.equal({"y": np.eye(N * p), "x": Cx, "u": Du}, 0.0, "outputs")

    add_input_terms(b, spec, m, u_known)
    add_output_terms(b, spec, {"y": np.eye(N * p)}, r)

    def decode(sol, const):
        z = sol.z_star
        return StepDecision(
            u_star=z[b["u"]].reshape(N, m),
            y_pred=z[b["y"]].reshape(N, p),
            g_star=None,
            objective=sol.objective + const,
            status=sol.status.value,
            x_kappa=z[b["x"]].reshape(N + 1, n),
            iterations=sol.iterations,
        )

    return finish(b, decode)
