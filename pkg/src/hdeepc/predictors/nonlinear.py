"""Hybrid DeePC with nonlinear known dynamics, solved by successive convexification.

Each iteration linearizes the known state and output maps about the previous
iterate's (x_kappa, y_u, u) trajectory and solves the resulting hybrid QP.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from hdeepc.behavior import HankelBlocks, InitWindow
from hdeepc.densekit import QpSettings, qp_solve
from hdeepc.plantlab import BessPlant
from hdeepc.predictors.hdeepc import HybridLayout, KnownStep, build_hybrid
from hdeepc.predictors.spec import ControllerSpec, StepDecision


def _fd_jacobian(fun, args, idx, h=1e-6):
    base = np.asarray(fun(*args), dtype=float)
    v = np.asarray(args[idx], dtype=float)
    J = np.zeros((base.size, v.size))
    for j in range(v.size):
        step = h * (1.0 + abs(v[j]))
        up = list(args)
        dn = list(args)
        vu, vd = v.copy(), v.copy()
        vu[j] += step
        vd[j] -= step
        up[idx], dn[idx] = vu, vd
        J[:, j] = (np.asarray(fun(*up)) - np.asarray(fun(*dn))) / (2 * step)
    return J


@dataclass(frozen=True)
class NonlinearKnownModel:
    """Known maps ``f(x_kappa, y_u, u) -> x_kappa_next`` and ``h(x_kappa, y_u, u) -> y_kappa``.

    Jacobian callables return ``(d/dx, d/dy_u, d/du)``; finite differences are
    used when they are absent.
    """

    f: Callable
    h: Callable
    n_kappa: int
    p_kappa: int
    jac_f: Callable | None = None
    jac_h: Callable | None = None

    def linearize(self, x, y, u) -> KnownStep:
        args = (np.asarray(x, float), np.asarray(y, float), np.asarray(u, float))
        if self.jac_f is not None:
            Fx, Fy, Fu = self.jac_f(*args)
        else:
            Fx, Fy, Fu = (_fd_jacobian(self.f, args, i) for i in range(3))
        if self.jac_h is not None:
            Hx, Hy, Hu = self.jac_h(*args)
        else:
            Hx, Hy, Hu = (_fd_jacobian(self.h, args, i) for i in range(3))
        Fx, Fy, Fu = (np.atleast_2d(M).reshape(self.n_kappa, -1) for M in (Fx, Fy, Fu))
        Hx, Hy, Hu = (np.atleast_2d(M).reshape(self.p_kappa, -1) for M in (Hx, Hy, Hu))
        x, y, u = args
        c_x = np.asarray(self.f(*args), float) - Fx @ x - Fy @ y - Fu @ u
        c_y = np.asarray(self.h(*args), float) - Hx @ x - Hy @ y - Hu @ u
        return KnownStep(Fx, Fy, Fu, Hx, Hy, Hu, c_x, c_y)


def bess_known_model(plant: BessPlant) -> NonlinearKnownModel:
    """State-of-charge equation with the sign-dependent efficiency factor.

    The slope in u1 is taken on the side of the linearization point's sign, so
    each iteration sees an exact linear slice of the piecewise dynamics.
    """

    def f(x, y, u):
        return np.array([plant.soc_step(x[0], u[0])])

    def jac_f(x, y, u):
        Fu = np.array([[-1e-3 * plant.alpha(u[0]) / plant.tau_q, 0.0]])
        return np.eye(1), np.zeros((1, np.size(y))), Fu

    def h(x, y, u):
        return np.array([x[0]])

    def jac_h(x, y, u):
        return np.eye(1), np.zeros((1, np.size(y))), np.zeros((1, 2))

    return NonlinearKnownModel(f, h, 1, 1, jac_f, jac_h)


@dataclass(frozen=True)
class ScpSettings:
    max_iters: int = 20
    tol: float = 1e-6
    dynamics_tol: float = 1e-9
    trust_region: float = np.inf


@dataclass
class ScpTrajectory:
    u: np.ndarray
    y_u: np.ndarray
    x_kappa: np.ndarray


def rollout_known(model: NonlinearKnownModel, x0, y_u, u):
    xs = [np.asarray(x0, float)]
    ys = []
    for k in range(u.shape[0]):
        ys.append(np.asarray(model.h(xs[-1], y_u[k], u[k]), float))
        xs.append(np.asarray(model.f(xs[-1], y_u[k], u[k]), float))
    return np.array(xs), np.array(ys).reshape(u.shape[0], model.p_kappa)


def dynamics_residual(model: NonlinearKnownModel, decision: StepDecision, layout: HybridLayout) -> float:
    """Max violation of the true known dynamics along a predicted trajectory."""
    y_u = decision.y_pred[:, list(layout.unknown_outputs)]
    y_k = decision.y_pred[:, list(layout.kappa_outputs)]
    x = decision.x_kappa
    res = 0.0
    for k in range(decision.u_star.shape[0]):
        res = max(res, float(np.max(np.abs(x[k + 1] - model.f(x[k], y_u[k], decision.u_star[k])), initial=0.0)))
        res = max(res, float(np.max(np.abs(y_k[k] - model.h(x[k], y_u[k], decision.u_star[k])), initial=0.0)))
    return res


def nl_hdeepc_step(
    model: NonlinearKnownModel,
    layout: HybridLayout,
    blocks: HankelBlocks,
    spec: ControllerSpec,
    window: InitWindow,
    r,
    scp: ScpSettings = ScpSettings(),
    initial: ScpTrajectory | None = None,
    u_known=None,
    qp_settings: QpSettings | None = None,
) -> StepDecision:
    """One receding-horizon decision. ``converged`` is False when the
    iteration cap is reached first; the last iterate is returned either way."""
    N, m, p_u = spec.N, layout.m, layout.p_u
    if initial is None:
        u0 = np.zeros((N, m))
        if u_known is not None:
            fixed = np.asarray(u_known, float).reshape(N, m)
            u0 = np.where(np.isnan(fixed), 0.0, fixed)
        y0 = np.zeros((N, p_u))
        x0, _ = rollout_known(model, window.x_kappa_hat, y0, u0)
        initial = ScpTrajectory(u0, y0, x0)
    traj = initial

    if scp.max_iters <= 0:
        x_traj, yk = rollout_known(model, traj.x_kappa[0], traj.y_u, traj.u)
        y_full = np.zeros((N, layout.p))
        y_full[:, list(layout.unknown_outputs)] = traj.y_u
        y_full[:, list(layout.kappa_outputs)] = yk
        return StepDecision(traj.u.copy(), y_full, None, np.nan, "NotConverged",
                            x_kappa=x_traj, iterations=0, converged=False)

    decision = None
    for it in range(1, scp.max_iters + 1):
        steps = [model.linearize(traj.x_kappa[k], traj.y_u[k], traj.u[k]) for k in range(N)]
        extra = None
        if np.isfinite(scp.trust_region):
            u_prev = traj.u.reshape(-1)

            def extra(b, u_prev=u_prev):
                b.constrain({"u": np.eye(N * m)}, u_prev - scp.trust_region, u_prev + scp.trust_region,
                            "trust_region")

        enc = build_hybrid(layout, steps, blocks, spec, window, r, u_known, extra)
        decision = enc.decode(qp_solve(enc.qp, qp_settings))
        decision.iterations = it
        if not decision.ok:
            decision.converged = False
            return decision
        du = float(np.max(np.abs(decision.u_star - traj.u), initial=0.0))
        scale = 1.0 + float(np.max(np.abs(decision.x_kappa), initial=0.0))
        dyn = dynamics_residual(model, decision, layout)
        traj = ScpTrajectory(decision.u_star, decision.y_pred[:, list(layout.unknown_outputs)], decision.x_kappa)
        if du <= scp.tol or dyn <= scp.dynamics_tol * scale:
            decision.converged = True
            return decision
    decision.converged = False
    return decision
