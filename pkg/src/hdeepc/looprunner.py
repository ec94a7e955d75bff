"""Receding-horizon simulation, partial observers, cost accounting and
cross-controller equivalence checks."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_discrete_are

from hdeepc.behavior import HankelBlocks, InitWindow, collect_data, partition_data
from hdeepc.errors import DimensionMismatch, InfeasibleTransform, SolverAbort
from hdeepc.plantlab import LtiPlant, NoiseSpec, generate_pe_input
from hdeepc.predictors.condensed import build_condensed_deepc, build_condensed_hdeepc
from hdeepc.predictors.deepc import build_deepc
from hdeepc.predictors.hdeepc import HybridLayout, build_hdeepc, known_step
from hdeepc.predictors.mpc import build_mpc
from hdeepc.predictors.nonlinear import (
    NonlinearKnownModel, ScpSettings, ScpTrajectory, nl_hdeepc_step, rollout_known,
)
from hdeepc.predictors.spec import ControllerSpec, StepDecision
from hdeepc.splitmodel import (
    PartitionedPlant, TransformPair, random_assumption1_plant, solve_transform, split_plant,
    validate_assumptions,
)
from hdeepc.densekit import QpSettings


# --------------------------------------------------------------------------- controllers

class Controller:
    """Base class. ``decide`` sees the full window; subclasses pick what they use."""

    name = "controller"
    known_states: tuple[int, ...] = ()

    def __init__(self, spec: ControllerSpec, qp_settings: QpSettings | None = None):
        self.spec = spec
        self.qp_settings = qp_settings

    def reset(self) -> None:
        pass

    def equality_rows(self) -> int:
        """Window equality rows of the condensed form of this controller."""
        return 0

    def decide(self, t: int, u_ini, y_ini, x, x_kappa_hat, r, u_known=None) -> StepDecision:
        raise NotImplementedError


class MpcController(Controller):
    """Full-model MPC; ``model`` may be a callable t -> LtiPlant."""

    name = "MPC"

    def __init__(self, model, spec, qp_settings=None):
        super().__init__(spec, qp_settings)
        self.model = model

    def decide(self, t, u_ini, y_ini, x, x_kappa_hat, r, u_known=None):
        if callable(self.model):
            plants = [self.model(t + k) for k in range(self.spec.N)]
        else:
            plants = self.model
        return build_mpc(plants, self.spec, x, r, u_known).solve(self.qp_settings)


class DeepcController(Controller):
    name = "DeePC"

    def __init__(self, blocks: HankelBlocks, spec, condensed: bool = False, qp_settings=None):
        super().__init__(spec, qp_settings)
        self.blocks = blocks
        self.condensed = condensed
        if condensed:
            self.name = "DeePC_Condensed"

    def equality_rows(self):
        return (self.blocks.m + self.blocks.p_y) * self.blocks.T_ini

    def decide(self, t, u_ini, y_ini, x, x_kappa_hat, r, u_known=None):
        window = InitWindow(u_ini, y_ini)
        build = build_condensed_deepc if self.condensed else build_deepc
        return build(self.blocks, self.spec, window, r, u_known).solve(self.qp_settings)


class HdeepcController(Controller):
    """Hybrid DeePC. ``model_at`` (t -> PartitionedPlant) supplies time-varying
    known rows; only the known blocks of the returned splits are read."""

    name = "HDeePC"

    def __init__(self, pp: PartitionedPlant, tp: TransformPair | None, blocks: HankelBlocks | None, spec,
                 condensed: bool = False, model_at: Callable[[int], PartitionedPlant] | None = None,
                 qp_settings=None):
        super().__init__(spec, qp_settings)
        self.pp, self.tp, self.blocks = pp, tp, blocks
        self.condensed = condensed
        self.model_at = model_at
        self.known_states = tuple(pp.state_perm[pp.n_u:]) if pp.state_perm else tuple(range(pp.n_u, pp.n))
        if condensed:
            self.name = "HDeePC_Condensed"

    def equality_rows(self):
        return (self.pp.m + self.pp.p_u) * self.spec.T_ini

    def _steps(self, t):
        if self.model_at is None:
            return None
        out = []
        for k in range(self.spec.N):
            pk = self.model_at(t + k)
            out.append(known_step(pk.known(), solve_transform(pk)))
        return out

    def decide(self, t, u_ini, y_ini, x, x_kappa_hat, r, u_known=None):
        y_u = np.asarray(y_ini)[:, list(self.pp.unknown_outputs)]
        window = InitWindow(u_ini, y_u, x_kappa_hat)
        if self.condensed:
            enc = build_condensed_hdeepc(self.pp, self.tp, self.blocks, self.spec, window, r, u_known)
        else:
            enc = build_hdeepc(self.pp, self.tp, self.blocks, self.spec, window, r, u_known, self._steps(t))
        return enc.solve(self.qp_settings)


class NlHdeepcController(Controller):
    """Hybrid DeePC with nonlinear known dynamics; warm-starts each solve from
    the previous plan shifted by one step."""

    name = "NL_HDeePC"

    def __init__(self, model: NonlinearKnownModel, layout: HybridLayout, blocks: HankelBlocks, spec,
                 known_states: Sequence[int], scp: ScpSettings = ScpSettings(), qp_settings=None):
        super().__init__(spec, qp_settings)
        self.model, self.layout, self.blocks, self.scp = model, layout, blocks, scp
        self.known_states = tuple(known_states)
        self._last: StepDecision | None = None

    def reset(self):
        self._last = None

    def equality_rows(self):
        return (self.layout.m + self.layout.p_u) * self.spec.T_ini

    def _initial(self, x_kappa_hat, u_known):
        if self._last is None:
            return None
        u = np.vstack([self._last.u_star[1:], self._last.u_star[-1:]])
        if u_known is not None:
            fixed = np.asarray(u_known, float).reshape(u.shape)
            u = np.where(np.isnan(fixed), u, fixed)
        yu = self._last.y_pred[:, list(self.layout.unknown_outputs)]
        yu = np.vstack([yu[1:], yu[-1:]])
        xk, _ = rollout_known(self.model, x_kappa_hat, yu, u)
        return ScpTrajectory(u, yu, xk)

    def decide(self, t, u_ini, y_ini, x, x_kappa_hat, r, u_known=None):
        y_u = np.asarray(y_ini)[:, list(self.layout.unknown_outputs)]
        window = InitWindow(u_ini, y_u, x_kappa_hat)
        d = nl_hdeepc_step(self.model, self.layout, self.blocks, self.spec, window, r, self.scp,
                           self._initial(window.x_kappa_hat, u_known), u_known, self.qp_settings)
        self._last = d if d.ok else None
        return d


# --------------------------------------------------------------------------- observer

@dataclass(frozen=True)
class ObserverSpec:
    """Gain ``L_obs`` (n_kappa x p_kappa) and initial estimate for the known states."""

    L_obs: np.ndarray
    x_hat0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "L_obs", np.atleast_2d(np.asarray(self.L_obs, dtype=float)))
        object.__setattr__(self, "x_hat0", np.asarray(self.x_hat0, dtype=float).reshape(-1))

    def error_matrix(self, pp: PartitionedPlant) -> np.ndarray:
        L = self.L_obs.reshape(pp.n_kappa, pp.p_kappa)
        return pp.A_kappa - L @ pp.C_kappa

    def check(self, pp: PartitionedPlant) -> float:
        """Validate dimensions and stability; returns the error-dynamics spectral radius."""
        if self.L_obs.size != pp.n_kappa * pp.p_kappa or self.x_hat0.size != pp.n_kappa:
            raise DimensionMismatch(
                f"observer gain must be {pp.n_kappa}x{pp.p_kappa} and x_hat0 of size {pp.n_kappa}")
        E = self.error_matrix(pp)
        rho = float(max(abs(np.linalg.eigvals(E)))) if E.size else 0.0
        if rho >= 1.0:
            raise ValueError(f"observer error dynamics unstable (spectral radius {rho:.4g})")
        return rho


def design_observer_gain(pp: PartitionedPlant, q: float = 1.0, r: float = 1e-2) -> np.ndarray:
    """Steady-state Kalman gain for (A_kappa, C_kappa) with isotropic covariances."""
    A, C = pp.A_kappa, pp.C_kappa
    P = solve_discrete_are(A.T, C.T, q * np.eye(A.shape[0]), r * np.eye(C.shape[0]))
    return A @ P @ C.T @ np.linalg.inv(C @ P @ C.T + r * np.eye(C.shape[0]))


def observer_step(obs: ObserverSpec, pp: PartitionedPlant, tp: TransformPair, x_hat, y_u, y_kappa, u) -> np.ndarray:
    """x_hat+ = A_k x_hat + A_y y_u + B_k u + L (y_k - (C_y y_u + C_k x_hat + D_k u))."""
    x_hat = np.asarray(x_hat, dtype=float).reshape(-1)
    y_u = np.asarray(y_u, dtype=float).reshape(-1)
    y_kappa = np.asarray(y_kappa, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if (x_hat.size, y_u.size, y_kappa.size, u.size) != (pp.n_kappa, pp.p_u, pp.p_kappa, pp.m):
        raise DimensionMismatch("observer inputs do not match the split dimensions")
    L = obs.L_obs.reshape(pp.n_kappa, pp.p_kappa)
    innov = y_kappa - (tp.C_y @ y_u + pp.C_kappa @ x_hat + pp.D_kappa @ u)
    return pp.A_kappa @ x_hat + tp.A_y @ y_u + pp.B_kappa @ u + L @ innov


# --------------------------------------------------------------------------- loop

@dataclass
class LoopConfig:
    """``reference`` is a callable k -> p-vector or a (steps + N, p) array indexed
    by control step. ``disturbance`` is a (T_ini + steps + N, m) array over the
    whole run (warm-fill first) whose non-NaN entries are imposed inputs."""

    steps: int
    s: int = 1
    noise: NoiseSpec | None = None
    reference: Callable[[int], np.ndarray] | np.ndarray | None = None
    disturbance: np.ndarray | None = None
    state_source: str = "FullMeasurement"
    observer: ObserverSpec | None = None
    warm_fill: str = "excitation"
    warm_scale: float | Sequence[float] = 1.0
    seed: int = 0
    failure_policy: str = "hold"
    t0: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.state_source not in ("FullMeasurement", "Observer"):
            raise ValueError(f"unknown state source {self.state_source!r}")
        if self.state_source == "Observer" and self.observer is None:
            raise ValueError("observer state source needs an ObserverSpec")
        if self.warm_fill not in ("excitation", "zeros"):
            raise ValueError(f"unknown warm-fill mode {self.warm_fill!r}")
        if self.failure_policy not in ("hold", "abort"):
            raise ValueError(f"unknown failure policy {self.failure_policy!r}")

    def check_s(self, N: int) -> None:
        if not 1 <= self.s <= max(N - 1, 1):
            raise ValueError(f"s={self.s} outside [1, N-1] for N={N}")

    def ref(self, k: int, p: int) -> np.ndarray:
        if self.reference is None:
            return np.zeros(p)
        if callable(self.reference):
            return np.asarray(self.reference(k), dtype=float).reshape(p)
        R = np.asarray(self.reference, dtype=float)
        if R.ndim == 1:
            return R.reshape(p)
        if k >= R.shape[0]:
            raise IndexError(f"reference undefined at step {k}")
        return R[k].reshape(p)


@dataclass
class ClosedLoopResult:
    u_applied: np.ndarray
    y_measured: np.ndarray
    x_true: np.ndarray
    x_hat_kappa: np.ndarray
    references: np.ndarray
    stage_costs: np.ndarray
    solve_times: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    warm_u: np.ndarray | None = None
    warm_y: np.ndarray | None = None
    predictions: list = field(default_factory=list)
    variant: str = ""

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.stage_costs))

    @property
    def mean_solve_time(self) -> float:
        return float(np.mean(self.solve_times)) if self.solve_times else 0.0

    def summary(self, scenario: str = "") -> dict:
        counts: dict[str, int] = {}
        for s in self.statuses:
            counts[s] = counts.get(s, 0) + 1
        return {
            "scenario": scenario,
            "variant": self.variant,
            "total_cost": self.total_cost,
            "mean_solve_time": self.mean_solve_time,
            "statuses": counts,
        }

    def to_csv(self, path) -> None:
        m, p = self.u_applied.shape[1], self.y_measured.shape[1]
        n = self.x_true.shape[1]
        header = (["k"] + [f"u{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(p)]
                  + [f"r{i + 1}" for i in range(p)] + [f"x{i + 1}" for i in range(n)] + ["stage_cost"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.u_applied.shape[0]):
                w.writerow([k] + [repr(float(v)) for v in np.concatenate([
                    self.u_applied[k], self.y_measured[k], self.references[k], self.x_true[k],
                    [self.stage_costs[k]]])])

    def write_summary(self, path, scenario: str = "") -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(scenario), fh, indent=2, sort_keys=True)


def evaluate_cost(y, u, Q, R, r) -> float:
    """sum_k ||y(k) - r(k)||_Q^2 + ||u(k)||_R^2 over row-wise trajectories."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    e = y - np.atleast_2d(np.asarray(r, dtype=float))
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    return float(np.einsum("ki,ij,kj->", e, Q, e) + np.einsum("ki,ij,kj->", u, R, u))


def run_receding_horizon(plant, controller: Controller, loop: LoopConfig, x0=None,
                         pp_observer: tuple[PartitionedPlant, TransformPair] | None = None) -> ClosedLoopResult:
    """Simulate ``controller`` against the true ``plant`` (anything with
    ``step(x, u, t)`` and n, m, p). The first T_ini steps warm-fill the window."""
    spec = controller.spec
    N, T_ini, m, p = spec.N, spec.T_ini, plant.m, plant.p
    loop.check_s(N)
    x = np.zeros(plant.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    noise = loop.noise.generator(stream=2) if loop.noise is not None else None
    state_noise = loop.noise.generator(stream=3) if loop.noise is not None else None
    dist = None if loop.disturbance is None else np.asarray(loop.disturbance, dtype=float)

    def imposed(i):
        if dist is None or i >= dist.shape[0]:
            return None
        return dist[i]

    def apply(u, i):
        d = imposed(i)
        if d is not None:
            u = np.where(np.isnan(d), u, d)
        return u

    obs_on = loop.state_source == "Observer"
    if obs_on:
        if pp_observer is None:
            pp_observer = (controller.pp, controller.tp)
        opp, otp = pp_observer
        loop.observer.check(opp)
        x_hat = loop.observer.x_hat0.copy()
    known = list(controller.known_states)

    def measure_state(xv):
        # state measurements share the output noise model
        return xv + state_noise.draw(xv.size) if state_noise is not None else xv

    def kappa_est(xv):
        return x_hat.copy() if obs_on else xv[known]

    # warm fill
    if loop.warm_fill == "excitation":
        u_warm = generate_pe_input(m, max(T_ini, m), 1, rng_seed=loop.seed, scale=loop.warm_scale)[:T_ini]
    else:
        u_warm = np.zeros((T_ini, m))
    t = loop.t0
    hist_u, hist_y = [], []
    for i in range(T_ini):
        u = apply(u_warm[i], i)
        x_next, y = plant.step(x, u, t)
        if noise is not None:
            y = y + noise.draw(p)
        if obs_on:
            x_hat = observer_step(loop.observer, opp, otp, x_hat, y[list(opp.unknown_outputs)],
                                  y[list(opp.kappa_outputs)], u)
        hist_u.append(u)
        hist_y.append(y)
        x = x_next
        t += 1
    warm_u, warm_y = np.array(hist_u).reshape(T_ini, m), np.array(hist_y).reshape(T_ini, p)

    controller.reset()
    steps = loop.steps
    U = np.zeros((steps, m))
    Y = np.zeros((steps, p))
    Xs = [x.copy()]
    Xh = [kappa_est(x)]
    refs = np.zeros((steps, p))
    result = ClosedLoopResult(U, Y, None, None, refs, np.zeros(steps), warm_u=warm_u, warm_y=warm_y,
                              variant=controller.name)
    last_u = hist_u[-1] if hist_u else np.zeros(m)
    k = 0
    while k < steps:
        u_ini = np.array(hist_u[-T_ini:])
        y_ini = np.array(hist_y[-T_ini:])
        r_h = np.concatenate([loop.ref(k + j, p) for j in range(N)])
        u_known = None
        if dist is not None:
            rows = [imposed(T_ini + k + j) for j in range(N)]
            u_known = np.array([np.full(m, np.nan) if rw is None else rw for rw in rows])
        x_meas = measure_state(x)
        Xh[-1] = kappa_est(x_meas)
        t_start = time.perf_counter()
        d = controller.decide(t, u_ini, y_ini, x_meas, Xh[-1], r_h, u_known)
        result.solve_times.append(time.perf_counter() - t_start)
        result.statuses.append(d.status)
        result.objectives.append(d.objective)
        result.iterations.append(d.iterations)
        result.predictions.append(d.y_pred[0].copy() if d.y_pred is not None else None)
        if d.ok:
            plan = d.u_star[:loop.s]
        else:
            if loop.failure_policy == "abort":
                raise SolverAbort(f"{controller.name} returned {d.status} at step {k}")
            plan = np.tile(last_u, (loop.s, 1))
        for j in range(loop.s):
            if k >= steps:
                break
            u = apply(np.asarray(plan[j], dtype=float), T_ini + k)
            x_next, y = plant.step(x, u, t)
            if noise is not None:
                y = y + noise.draw(p)
            if obs_on:
                x_hat = observer_step(loop.observer, opp, otp, x_hat, y[list(opp.unknown_outputs)],
                                      y[list(opp.kappa_outputs)], u)
            refs[k] = loop.ref(k, p)
            U[k], Y[k] = u, y
            result.stage_costs[k] = evaluate_cost(y, u, spec.Q, spec.R, refs[k])
            hist_u.append(u)
            hist_y.append(y)
            last_u = u
            x = x_next
            Xs.append(x.copy())
            Xh.append(kappa_est(x))
            t += 1
            k += 1
    result.x_true = np.array(Xs)
    result.x_hat_kappa = np.array(Xh).reshape(len(Xh), -1)
    return result


# --------------------------------------------------------------------------- equivalence

@dataclass
class SplitReport:
    n_kappa: int
    kappa_outputs: tuple
    assumptions_ok: bool
    dev_hdeepc: float
    dev_deepc: float
    passed: bool
    note: str = ""


@dataclass
class EquivalenceReport:
    splits: list
    tol: float

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.splits)

    @property
    def max_deviation(self) -> float:
        vals = [max(s.dev_hdeepc, s.dev_deepc) for s in self.splits if s.assumptions_ok]
        return max(vals, default=0.0)


def equivalence_check(plant: LtiPlant, spec: ControllerSpec, splits: Sequence, steps: int = 20,
                      tol: float = 1e-6, T: int | None = None, seed: int = 0, x0=None,
                      reference=None, s: int = 1, qp_settings: QpSettings | None = None) -> EquivalenceReport:
    """Closed-loop comparison of hybrid DeePC and DeePC against MPC on a
    noiseless plant. Each split is ``n_kappa`` or ``(n_kappa, kappa_outputs)``."""
    n, m, p = plant.n, plant.m, plant.p
    order = spec.T_ini + spec.N + n
    if T is None:
        T = (m + 1) * order - 1 + 10
    log = collect_data(plant, T, order, rng_seed=seed)
    rng = np.random.default_rng([seed, 99])
    if x0 is None:
        x0 = rng.standard_normal(n)
    if reference is None:
        reference = rng.standard_normal(p)
    loop = LoopConfig(steps=steps, s=s, reference=np.asarray(reference), seed=seed)

    def run(ctrl):
        return run_receding_horizon(plant, ctrl, loop, x0).u_applied

    u_mpc = run(MpcController(plant, spec, qp_settings))
    u_dpc = run(DeepcController(partition_data(log, spec.T_ini, spec.N), spec, qp_settings=qp_settings))
    dev_d = float(np.max(np.abs(u_dpc - u_mpc)))
    reports = []
    for sp in splits:
        nk, kappa = (sp, ()) if np.isscalar(sp) else (int(sp[0]), tuple(sp[1]))
        pp = split_plant(plant, nk, kappa)
        blocks = partition_data(log, spec.T_ini, spec.N, pp.unknown_outputs)
        try:
            tp = solve_transform(pp) if (pp.n_kappa or pp.p_kappa) else None
            rep = validate_assumptions(pp, tp, blocks)
            ok = rep["assumption_1"].status != "fail"
            note = "" if ok else "assumption 1 fails"
        except InfeasibleTransform as exc:
            tp, ok, note = None, False, f"assumption 1 fails (residual {exc.residual:.3g})"
        if not ok:
            reports.append(SplitReport(nk, kappa, False, np.nan, dev_d, False, note))
            continue
        u_h = run(HdeepcController(pp, tp, blocks, spec, qp_settings=qp_settings))
        dev_h = float(np.max(np.abs(u_h - u_mpc)))
        reports.append(SplitReport(nk, kappa, True, dev_h, dev_d, dev_h <= tol and dev_d <= tol))
    return EquivalenceReport(reports, tol)


def suite_instances(seed: int, n_max: int = 6, m_max: int = 2, p_max: int = 3, N: int = 5):
    """Random plant sizes for one seed and one Assumption-1 plant per split.

    Yields (n_kappa, plant, kappa_outputs, spec); n_kappa = n comes with every
    output known.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    p = int(rng.integers(1, p_max + 1))
    for nk in range(n + 1):
        pk = 0 if nk == 0 else (p if nk == n else int(rng.integers(0, p)))
        plant, kappa = random_assumption1_plant(n, m, p, nk, pk, rng)
        yield nk, plant, kappa, ControllerSpec(N, n, np.eye(p), 0.1 * np.eye(m))


def random_equivalence_suite(seeds: Sequence[int], n_max: int = 6, m_max: int = 2, p_max: int = 3,
                             N: int = 5, steps: int = 20, tol: float = 1e-6):
    """Yield (seed, n_kappa, SplitReport) over random plants, one per split."""
    for seed in seeds:
        for nk, plant, kappa, spec in suite_instances(seed, n_max, m_max, p_max, N):
            rep = equivalence_check(plant, spec, [(nk, kappa)], steps=steps, tol=tol, seed=seed)
            yield seed, nk, rep.splits[0]
