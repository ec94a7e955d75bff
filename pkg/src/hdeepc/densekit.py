"""Dense linear algebra helpers and an embedded convex QP solver.

The solver handles problems of the form::

    minimize    1/2 z' P z + q' z
    subject to  l <= A z <= u

with an operator-splitting (ADMM) iteration on a Ruiz-equilibrated copy of the
data, followed by a polish step that solves the KKT system on the detected
active set. Equality constraints are rows with ``l == u``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from hdeepc.errors import DimensionMismatch, NonConvex

Mat = np.ndarray


class QpStatus(str, Enum):
    OPTIMAL = "Optimal"
    MAX_ITERATIONS = "MaxIterations"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"


@dataclass(frozen=True)
class QpProblem:
    """Convex QP in standard form. Arrays are copied to float64 on creation."""

    P: Mat
    q: np.ndarray
    A: Mat
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float, ndmin=2)
        q = np.array(self.q, dtype=float).reshape(-1)
        n = q.size
        if P.shape != (n, n):
            raise DimensionMismatch(f"P has shape {P.shape}, expected {(n, n)}")
        A = np.array(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(-1, n) if A.ndim == 2 and A.shape[1] == n else np.zeros((0, n))
        if A.ndim != 2 or A.shape[1] != n:
            raise DimensionMismatch(f"A has shape {A.shape}, expected (*, {n})")
        m = A.shape[0]
        lo = np.array(self.l, dtype=float).reshape(-1)
        hi = np.array(self.u, dtype=float).reshape(-1)
        if lo.size != m or hi.size != m:
            raise DimensionMismatch(f"bounds have sizes {lo.size}, {hi.size}; expected {m}")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(q)) and np.all(np.isfinite(A))):
            raise ValueError("P, q and A must be finite")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("bounds must not be NaN")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        scale = max(1.0, float(np.max(np.abs(P), initial=0.0)))
        if np.max(np.abs(P - P.T), initial=0.0) > 1e-12 * scale:
            raise ValueError("P is not symmetric")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "l", lo)
        object.__setattr__(self, "u", hi)

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def equality_rows(self) -> np.ndarray:
        return self.l == self.u

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z)


@dataclass(frozen=True)
class QpSettings:
    eps_primal: float = 1e-8
    eps_dual: float = 1e-8
    max_iter: int = 50_000
    psd_shift: float = 1e-10
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iters: int = 15
    check_interval: int = 25
    adaptive_rho: bool = True
    polish: bool = True
    polish_threshold: float = 1e-3
    eps_infeasible: float = 1e-7
    # "auto" hands over to an interior-point pass when ADMM has not converged
    # after ``admm_budget`` iterations; "admm" never does.
    method: str = "auto"
    admm_budget: int = 50
    ipm_max_iter: int = 100
    max_polish_attempts: int = 4


@dataclass(frozen=True)
class QpSolution:
    """Solver output.

    Residuals are normalized: the primal residual is
    ``||Az - proj(Az)||_inf / (1 + max(||Az||_inf, ||z_c||_inf))`` and the dual
    residual ``||Pz + q + A'y||_inf / (1 + max(||Pz||, ||A'y||, ||q||))``.
    """

    z_star: np.ndarray
    objective: float
    status: QpStatus
    primal_residual: float
    dual_residual: float
    iterations: int
    y_star: np.ndarray = field(repr=False, default=None)
    polished: bool = False

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v), initial=0.0))


def _check_psd(P: Mat, shift: float) -> None:
    n = P.shape[0]
    if n == 0:
        return
    scale = max(1.0, float(np.max(np.abs(P))))
    try:
        np.linalg.cholesky(P + shift * scale * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise NonConvex("hessian is not positive semidefinite") from exc


def _ruiz(P, q, A, iters):
    n, m = q.size, A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    Ps, qs, As = P.copy(), q.copy(), A.copy()
    for _ in range(iters):
        col = np.abs(Ps).max(axis=0) if n else np.zeros(0)
        if m:
            col = np.maximum(col, np.abs(As).max(axis=0))
            row = np.abs(As).max(axis=1)
        else:
            row = np.zeros(0)
        col[col < 1e-4] = 1.0
        row[row < 1e-4] = 1.0
        d = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
        e = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
        Ps = d[:, None] * Ps * d[None, :]
        As = e[:, None] * As * d[None, :]
        qs = d * qs
        D *= d
        E *= e
        pnorm = float(np.mean(np.abs(Ps).max(axis=0))) if n else 0.0
        gamma = max(pnorm, _inf_norm(qs))
        gamma = 1.0 / np.clip(gamma, 1e-4, 1e4) if gamma > 1e-4 else 1.0
        Ps *= gamma
        qs *= gamma
        c *= gamma
    return Ps, qs, As, D, E, c


class _Residuals:
    """KKT residuals of an unscaled iterate (x, z, y)."""

    def __init__(self, p: QpProblem, x, z, y):
        Ax = p.A @ x
        Px = p.P @ x
        Aty = p.A.T @ y
        self.primal_abs = _inf_norm(Ax - z)
        self.primal_scale = max(_inf_norm(Ax), _inf_norm(z))
        self.dual_abs = _inf_norm(Px + p.q + Aty)
        self.dual_scale = max(_inf_norm(Px), _inf_norm(Aty), _inf_norm(p.q))

    @property
    def primal(self) -> float:
        return self.primal_abs / (1.0 + self.primal_scale)

    @property
    def dual(self) -> float:
        return self.dual_abs / (1.0 + self.dual_scale)


def _solve_kkt(P, A_act, rhs_x, rhs_y, delta=1e-9, refine=40):
    """Solve [[P, A'], [A, 0]] [x; y] = [rhs_x; rhs_y].

    Uses a regularized LU with iterative refinement; falls back to a
    minimum-norm least-squares solve when refinement stalls.
    """
    n, k = P.shape[0], A_act.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = P
    K[:n, n:] = A_act.T
    K[n:, :n] = A_act
    rhs = np.concatenate([rhs_x, rhs_y])
    reg = np.concatenate([np.full(n, delta), np.full(k, -delta)])
    tol = 1e-14 * (1.0 + _inf_norm(rhs)) * max(1.0, _inf_norm(K))
    try:
        lu = sla.lu_factor(K + np.diag(reg), check_finite=False)
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        res = _inf_norm(rhs - K @ sol)
        for _ in range(refine):
            if res <= tol:
                break
            cand = sol + sla.lu_solve(lu, rhs - K @ sol, check_finite=False)
            cres = _inf_norm(rhs - K @ cand)
            if cres >= 0.9 * res:
                sol, res = (cand, cres) if cres < res else (sol, res)
                break
            sol, res = cand, cres
    except (np.linalg.LinAlgError, ValueError):
        sol, res = None, np.inf
    if sol is None or not np.all(np.isfinite(sol)):
        lsq = np.linalg.lstsq(K, rhs, rcond=None)[0]
        lres = _inf_norm(rhs - K @ lsq)
        if sol is None or lres < res:
            sol = lsq
    return sol[:n], sol[n:]


def _polish(p: QpProblem, scaled, low, upp, settings):
    """Solve the KKT system with ``low``/``upp`` rows held at their bounds.

    Returns (x, y, residuals) in unscaled coordinates, or None when the
    candidate violates feasibility or multiplier signs.
    """
    Ps, qs, As, D, E, c, ls, us = scaled
    eq = p.equality_rows
    low = low & ~eq
    upp = upp & ~eq & ~low
    act = eq | low | upp
    idx = np.flatnonzero(act)
    target = np.where(upp[idx], us[idx], ls[idx])
    xs, ys_act = _solve_kkt(Ps, As[idx], -qs, target)
    ys = np.zeros(p.m)
    ys[idx] = ys_act
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        return None
    x = D * xs
    y = E * ys / c
    Ax = p.A @ x
    z = np.clip(Ax, p.l, p.u)
    r = _Residuals(p, x, z, y)
    sign_tol = settings.eps_dual * (1.0 + r.dual_scale)
    if np.any(y[low] > sign_tol) or np.any(y[upp] < -sign_tol):
        return None
    if r.primal > settings.eps_primal or r.dual > settings.eps_dual:
        return None
    return x, y, r


class _KktSolver:
    """Factorization of [[H, Aeq'], [Aeq, 0]].

    Tries a Schur complement on a Cholesky factor of H first and falls back
    to a regularized LU of the full matrix. Both paths refine against the
    unregularized system.
    """

    def __init__(self, H, Aeq, delta):
        n, k = H.shape[0], Aeq.shape[0]
        self.n, self.H, self.Aeq = n, H, Aeq
        self.mode = "lu"
        try:
            self.L = sla.cho_factor(H + delta * np.eye(n), lower=True, check_finite=False)
            if k:
                V = sla.solve_triangular(self.L[0], Aeq.T, lower=True, check_finite=False)
                S = V.T @ V + delta * np.eye(k)
                self.S = sla.cho_factor(S, lower=True, check_finite=False)
            self.mode = "schur"
        except (np.linalg.LinAlgError, ValueError):
            K = np.zeros((n + k, n + k))
            K[:n, :n] = H
            K[:n, n:] = Aeq.T
            K[n:, :n] = Aeq
            reg = np.concatenate([np.full(n, delta), np.full(k, -delta)])
            self.lu = sla.lu_factor(K + np.diag(reg), check_finite=False)

    def _raw(self, rx, ry):
        if self.mode == "lu":
            sol = sla.lu_solve(self.lu, np.concatenate([rx, ry]), check_finite=False)
            return sol[:self.n], sol[self.n:]
        hx = sla.cho_solve(self.L, rx, check_finite=False)
        if self.Aeq.shape[0] == 0:
            return hx, np.zeros(0)
        dy = sla.cho_solve(self.S, self.Aeq @ hx - ry, check_finite=False)
        dx = sla.cho_solve(self.L, rx - self.Aeq.T @ dy, check_finite=False)
        return dx, dy

    def solve(self, rx, ry, refine=2):
        dx, dy = self._raw(rx, ry)
        for _ in range(refine):
            ex = rx - self.H @ dx - self.Aeq.T @ dy
            ey = ry - self.Aeq @ dx
            cx, cy = self._raw(ex, ey)
            dx, dy = dx + cx, dy + cy
        return dx, dy


def _interior_point(p: QpProblem, scaled, settings):
    """Mehrotra predictor-corrector on the scaled problem.

    Returns (x, y, residuals, iterations, low, upp) in unscaled coordinates or
    None when it fails to reach the tolerances.
    """
    # infeasible problems drive slacks to zero; that is a failure, not a warning
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return _interior_point_impl(p, scaled, settings)


def _interior_point_impl(p: QpProblem, scaled, settings):
    Ps, qs, As, D, E, c, ls, us = scaled
    n = qs.size
    eq = p.equality_rows
    up = ~eq & np.isfinite(us)
    lo = ~eq & np.isfinite(ls)
    Aeq, beq = As[eq], ls[eq]
    G = sp.csr_matrix(np.vstack([As[up], -As[lo]]))
    h = np.concatenate([us[up], -ls[lo]])
    mi, nu = h.size, int(up.sum())
    if mi == 0:
        return None
    delta = 1e-11 * max(1.0, float(np.max(np.abs(Ps), initial=0.0)))

    x, yeq = _KktSolver(Ps + (G.T @ G).toarray(), Aeq, delta).solve(-qs + G.T @ h, beq)
    sl = np.maximum(h - G @ x, 1.0)
    z = np.ones(mi)

    def unscale(x, yeq, z):
        y = np.zeros(p.m)
        y[eq] = yeq
        y[up] += z[:nu]
        y[lo] -= z[nu:]
        xu = D * x
        yu = E * y / c
        return xu, yu

    def step_to_boundary(v, dv):
        neg = dv < 0
        return min(1.0, float(np.min(-v[neg] / dv[neg]))) if np.any(neg) else 1.0

    for it in range(1, settings.ipm_max_iter + 1):
        rd = Ps @ x + qs + G.T @ z + Aeq.T @ yeq
        rp = Aeq @ x - beq
        rg = G @ x + sl - h
        mu = float(sl @ z) / mi

        xu, yu = unscale(x, yeq, z)
        r = _Residuals(p, xu, np.clip(p.A @ xu, p.l, p.u), yu)
        gap = float(sl @ z) / c
        if (r.primal <= settings.eps_primal and r.dual <= settings.eps_dual
                and gap <= settings.eps_dual * (1.0 + abs(p.objective(xu)))):
            act = z > sl
            low = np.zeros(p.m, dtype=bool)
            upp = np.zeros(p.m, dtype=bool)
            low[lo] = act[nu:]
            upp[up] = act[:nu]
            return xu, yu, r, it, low, upp

        W = z / sl
        H = Ps + (G.T @ sp.diags(W) @ G).toarray()
        try:
            kkt = _KktSolver(H, Aeq, delta)
        except (np.linalg.LinAlgError, ValueError):
            return None

        def direction(r_sz):
            rhs_x = -rd - G.T @ ((z * rg - r_sz) / sl)
            dx, dy = kkt.solve(rhs_x, -rp)
            Gdx = G @ dx
            dz = W * Gdx + (z * rg - r_sz) / sl
            ds = -rg - Gdx
            return dx, dy, dz, ds

        dx, dy, dz, ds = direction(sl * z)
        a = min(step_to_boundary(sl, ds), step_to_boundary(z, dz))
        mu_aff = float((sl + a * ds) @ (z + a * dz)) / mi
        sig = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, dy, dz, ds = direction(sl * z + ds * dz - sig * mu)
        a = 0.99 * min(step_to_boundary(sl, ds), step_to_boundary(z, dz))
        x, yeq, z, sl = x + a * dx, yeq + a * dy, z + a * dz, sl + a * ds
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            return None
    return None


EQ_INCONSISTENT_TOL = 1e-8


def qp_solve(p: QpProblem, settings: QpSettings | None = None, z0: np.ndarray | None = None) -> QpSolution:
    """Solve a convex QP. Infeasibility is reported through the status field."""
    s = settings or QpSettings()
    if not isinstance(p, QpProblem):
        raise TypeError("expected a QpProblem")
    _check_psd(p.P, s.psd_shift)
    n, m = p.n, p.m

    Ps, qs, As, D, E, c = _ruiz(p.P, p.q, p.A, s.scaling_iters)
    ls = E * p.l
    us = E * p.u
    scaled = (Ps, qs, As, D, E, c, ls, us)
    eq = p.equality_rows

    def finish(x, y, r, status, iters, polished=False):
        return QpSolution(
            z_star=x,
            objective=p.objective(x),
            status=status,
            primal_residual=r.primal,
            dual_residual=r.dual,
            iterations=iters,
            y_star=y,
            polished=polished,
        )

    # inconsistent equality rows: ADMM would only certify this slowly
    if np.any(eq):
        Aeq, beq = p.A[eq], p.l[eq]
        xe = np.linalg.lstsq(Aeq, beq, rcond=None)[0]
        scale = 1.0 + max(_inf_norm(beq), _inf_norm(Aeq) * _inf_norm(xe))
        if _inf_norm(Aeq @ xe - beq) > EQ_INCONSISTENT_TOL * scale:
            x = xe
            r = _Residuals(p, x, np.clip(p.A @ x, p.l, p.u), np.zeros(m))
            return finish(x, np.zeros(m), r, QpStatus.PRIMAL_INFEASIBLE, 0)

    # Equality-only candidate: exact whenever no inequality ends up active.
    # skipped when some variable is touched by neither the cost nor an equality
    # row, since the KKT matrix is then singular
    pinned = np.any(p.P != 0, axis=0) | np.any(p.A[eq] != 0, axis=0) if n else np.zeros(0, bool)
    if s.polish and np.all(pinned):
        none = np.zeros(m, dtype=bool)
        cand = _polish(p, scaled, none, none, s)
        if cand is not None:
            return finish(*cand, QpStatus.OPTIMAL, 0, polished=True)

    rho_base = np.full(m, s.rho)
    free = np.isinf(ls) & np.isinf(us)
    rho_base[eq] *= 1e3
    rho_base[free] = 1e-6
    rho_scale = 1.0

    def factor(scale):
        rho = np.clip(rho_base * scale, 1e-6, 1e6)
        M = Ps + s.sigma * np.eye(n) + As.T @ (rho[:, None] * As)
        return rho, sla.cho_factor(M, check_finite=False)

    rho, chol = factor(rho_scale)

    xs = np.zeros(n) if z0 is None else np.asarray(z0, dtype=float) / D
    zs = np.clip(As @ xs, ls, us)
    ys = np.zeros(m)
    last_active = None
    best = None
    polish_attempts = 0
    tried_ipm = s.method != "auto"

    for it in range(1, s.max_iter + 1):
        x_prev, y_prev = xs, ys
        rhs = s.sigma * xs - qs + As.T @ (rho * zs - ys)
        xt = sla.cho_solve(chol, rhs, check_finite=False)
        zt = As @ xt
        xs = s.alpha * xt + (1.0 - s.alpha) * xs
        zr = s.alpha * zt + (1.0 - s.alpha) * zs
        zs_new = np.clip(zr + ys / rho, ls, us)
        ys = ys + rho * (zr - zs_new)
        zs = zs_new

        if it % s.check_interval and it != s.max_iter:
            continue

        x = D * xs
        z = zs / E
        y = E * ys / c
        r = _Residuals(p, x, z, y)
        if best is None or max(r.primal, r.dual) < max(best[2].primal, best[2].dual):
            best = (x, y, r)
        if r.primal <= s.eps_primal and r.dual <= s.eps_dual:
            return finish(x, y, r, QpStatus.OPTIMAL, it)

        if not tried_ipm and it >= s.admm_budget:
            tried_ipm = True
            ipm = _interior_point(p, scaled, s)
            if ipm is not None:
                x_i, y_i, r_i, k_i, low, upp = ipm
                cand = _polish(p, scaled, low, upp, s) if s.polish else None
                if cand is not None:
                    return finish(*cand, QpStatus.OPTIMAL, it + k_i, polished=True)
                return finish(x_i, y_i, r_i, QpStatus.OPTIMAL, it + k_i)

        if (s.polish and max(r.primal, r.dual) <= s.polish_threshold
                and polish_attempts < s.max_polish_attempts):
            low = (zs - ls) < -ys
            upp = (us - zs) < ys
            key = (low.tobytes(), upp.tobytes())
            if key != last_active:
                last_active = key
                polish_attempts += 1
                cand = _polish(p, scaled, low, upp, s)
                if cand is not None:
                    return finish(*cand, QpStatus.OPTIMAL, it, polished=True)

        status = _infeasibility(p, D * (xs - x_prev), E * (ys - y_prev), s.eps_infeasible)
        if status is not None:
            return finish(x, y, r, status, it)

        if s.adaptive_rho:
            Axs = As @ xs
            prim_s = _inf_norm(Axs - zs) / (max(_inf_norm(Axs), _inf_norm(zs)) + 1e-30)
            Pxs = Ps @ xs
            Atys = As.T @ ys
            dual_s = _inf_norm(Pxs + qs + Atys) / (
                max(_inf_norm(Pxs), _inf_norm(Atys), _inf_norm(qs)) + 1e-30
            )
            ratio = np.sqrt(prim_s / (dual_s + 1e-30)) if dual_s > 0 else 1.0
            if ratio > 5.0 or ratio < 0.2:
                rho_scale = float(np.clip(rho_scale * ratio, 1e-6, 1e6))
                rho, chol = factor(rho_scale)

    x, y, r = best
    return finish(x, y, r, QpStatus.MAX_ITERATIONS, s.max_iter)


def _infeasibility(p: QpProblem, dx, dy, eps):
    ndy = _inf_norm(dy)
    if ndy > 1e-30:
        hi = np.where(dy > 0, p.u, 0.0)
        lo = np.where(dy < 0, p.l, 0.0)
        support = float(np.sum(np.where(dy > 0, hi * dy, 0.0)) + np.sum(np.where(dy < 0, lo * dy, 0.0)))
        if _inf_norm(p.A.T @ dy) <= eps * ndy and support <= -eps * ndy:
            return QpStatus.PRIMAL_INFEASIBLE
    ndx = _inf_norm(dx)
    if ndx > 1e-30:
        Adx = p.A @ dx
        tol = eps * ndx
        if _inf_norm(p.P @ dx) <= tol and p.q @ dx <= -tol:
            ok_hi = np.isinf(p.u) | (Adx <= tol)
            ok_lo = np.isinf(p.l) | (Adx >= -tol)
            if np.all(ok_hi & ok_lo):
                return QpStatus.DUAL_INFEASIBLE
    return None


def least_squares_solve(A: Mat, b: np.ndarray) -> np.ndarray:
    """Minimizer of ||Ax - b||_2; minimum-norm when A is rank deficient."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    if A.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"A has {A.shape[0]} rows but b has {b.shape[0]}")
    return np.linalg.lstsq(A, b, rcond=None)[0]


def rank_of(A: Mat, tol: float = 1e-9) -> int:
    """Numerical rank: number of singular values >= tol * sigma_max."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv >= tol * sv[0]))
