"""Turn a validated ScenarioConfig into a plant, controller and loop settings."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from hdeepc.behavior import HankelBlocks, collect_data, partition_data
from hdeepc.config import MatrixSpec, ScenarioConfig
from hdeepc.densekit import QpSettings
from hdeepc.errors import ConfigInvalid, InfeasibleTransform
from hdeepc.looprunner import (
    ClosedLoopResult, Controller, DeepcController, HdeepcController, LoopConfig, MpcController,
    NlHdeepcController, ObserverSpec, design_observer_gain, run_receding_horizon,
)
from hdeepc.plantlab import (
    BessMode, BessPlant, LtiPlant, NoiseSpec, TimeVaryingPlant, coupled8_plant, smoothed_disturbance,
)
from hdeepc.predictors.hdeepc import HybridLayout
from hdeepc.predictors.nonlinear import ScpSettings, bess_known_model
from hdeepc.predictors.spec import ConstraintSet, ControllerSpec, RegularizationSpec
from hdeepc.splitmodel import (
    AssumptionCheck, AssumptionReport, PartitionedPlant, TransformPair, solve_transform, split_plant,
    validate_assumptions,
)

BESS_DEFAULTS = {
    "bess_1a": dict(tau_q=1e4, eta=1.0, mode=BessMode.LINEAR),
    "bess_1b": dict(tau_q=10.0, eta=0.9, mode=BessMode.EFFICIENCY_NONLINEAR),
    "bess_1c": dict(tau_q=10.0, eta=0.9, mode=BessMode.STRONG_NONLINEAR),
}


@dataclass
class Scenario:
    name: str
    plant: object
    nominal: LtiPlant
    spec: ControllerSpec
    loop: LoopConfig
    x0: np.ndarray
    data_log: object
    pp: PartitionedPlant | None
    tp: TransformPair | None
    controller: Controller
    blocks: HankelBlocks | None


def _matrix_file(path) -> dict:
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{path}: matrix file must be a mapping", "plant.matrix_file")
    out = {}
    for k in ("A", "B", "C", "D"):
        if k in data:
            try:
                out[k] = MatrixSpec.model_validate(data[k]).array()
            except Exception as exc:
                raise ConfigInvalid(f"{path}: bad matrix {k}: {exc}", f"plant.matrix_file.{k}") from exc
    return out


def build_plant(cfg: ScenarioConfig, seed: int):
    """Return (true plant, nominal LTI model)."""
    pb = cfg.plant
    if pb.builtin in BESS_DEFAULTS:
        d = dict(BESS_DEFAULTS[pb.builtin])
        if pb.tau_q is not None:
            d["tau_q"] = pb.tau_q
        if pb.eta is not None:
            d["eta"] = pb.eta
        plant = BessPlant(d["tau_q"], d["eta"], d["mode"], pb.a, pb.b)
        return plant, plant.linear
    if pb.builtin == "coupled8":
        nominal = coupled8_plant(pb.outputs, pb.model_seed)
    else:
        mats = _matrix_file(pb.matrix_file) if pb.matrix_file else {}
        for k in ("A", "B", "C", "D"):
            spec = getattr(pb, k)
            if spec is not None:
                mats[k] = spec.array()
        if not {"A", "B", "C"} <= set(mats):
            raise ConfigInvalid("file plant needs A, B and C", "plant.matrix_file")
        if "D" not in mats:
            mats["D"] = np.zeros((mats["C"].shape[0], mats["B"].shape[1]))
        try:
            nominal = LtiPlant(mats["A"], mats["B"], mats["C"], mats["D"])
        except ValueError as exc:
            raise ConfigInvalid(f"plant matrices inconsistent: {exc}", "plant") from exc
    if pb.time_varying is not None:
        tv = TimeVaryingPlant(nominal, pb.time_varying.sd, tuple(pb.time_varying.rows), rng_seed=seed)
        return tv, nominal
    return nominal, nominal


def controller_spec(cfg: ScenarioConfig, m: int, p: int) -> ControllerSpec:
    c = cfg.controller
    if len(c.Q) != p:
        raise ConfigInvalid(f"Q diagonal has {len(c.Q)} entries, plant has {p} outputs", "controller.Q")
    if len(c.R) != m:
        raise ConfigInvalid(f"R diagonal has {len(c.R)} entries, plant has {m} inputs", "controller.R")

    def box(b, size, key):
        if b is None:
            return None
        lo, hi = b.arrays()
        if lo.size != size or hi.size != size:
            raise ConfigInvalid(f"{key} needs {size} entries per bound", key)
        return ConstraintSet(lo, hi)

    reg = RegularizationSpec(c.lambda_g, c.lambda_y, c.g_norm, c.slack_norm, c.slack)
    return ControllerSpec(c.N, c.T_ini, np.diag(c.Q), np.diag(c.R), box(c.u_box, m, "controller.u_box"),
                          box(c.y_box, p, "controller.y_box"), reg, c.variant)


def default_x0(cfg: ScenarioConfig, n: int) -> np.ndarray:
    if cfg.plant.x0 is not None:
        if len(cfg.plant.x0) != n:
            raise ConfigInvalid(f"x0 has {len(cfg.plant.x0)} entries, plant has {n} states", "plant.x0")
        return np.asarray(cfg.plant.x0, dtype=float)
    return np.zeros(n)


def partition(cfg: ScenarioConfig, nominal: LtiPlant) -> tuple[PartitionedPlant, TransformPair | None]:
    pb = cfg.partition
    try:
        pp = split_plant(nominal, pb.n_kappa, pb.kappa_outputs, pb.known_states)
    except IndexError as exc:
        raise ConfigInvalid(str(exc), "partition") from exc
    if pb.A_y is not None or pb.C_y is not None:
        A_y = pb.A_y.array() if pb.A_y is not None else np.zeros((pp.n_kappa, pp.p_u))
        C_y = pb.C_y.array() if pb.C_y is not None else np.zeros((pp.p_kappa, pp.p_u))
        return pp, TransformPair(A_y, C_y)
    if pp.n_kappa == 0 and pp.p_kappa == 0:
        return pp, None
    try:
        return pp, solve_transform(pp)
    except InfeasibleTransform:
        return pp, None


def _disturbance(cfg: ScenarioConfig, total: int, m: int, seed: int):
    d = cfg.plant.disturbance
    if d is None:
        return None
    if not 0 <= d.channel < m:
        raise ConfigInvalid(f"disturbance channel {d.channel} out of range", "plant.disturbance.channel")
    out = np.full((total, m), np.nan)
    out[:, d.channel] = smoothed_disturbance(total, d.window, d.sd, rng_seed=seed + 1000)
    return out


def _reference(cfg: ScenarioConfig, p: int):
    ref = cfg.loop.reference
    if not ref:
        return np.zeros(p)
    arr = np.asarray(ref, dtype=float)
    if arr.ndim == 1 and arr.size != p:
        raise ConfigInvalid(f"reference has {arr.size} entries, plant has {p} outputs", "loop.reference")
    if arr.ndim == 2 and arr.shape[1] != p:
        raise ConfigInvalid("reference rows must have p entries", "loop.reference")
    return arr


def qp_settings(cfg: ScenarioConfig) -> QpSettings:
    return QpSettings(eps_primal=cfg.controller.eps, eps_dual=cfg.controller.eps, max_iter=cfg.controller.max_iter)


def build_scenario(cfg: ScenarioConfig, seed: int, variant: str | None = None) -> Scenario:
    """Assemble everything needed for one closed-loop run."""
    if variant is not None:
        cfg = cfg.model_copy(update={"controller": cfg.controller.model_copy(update={"variant": variant})})
    c = cfg.controller
    plant, nominal = build_plant(cfg, seed)
    n, m, p = nominal.n, nominal.m, nominal.p
    spec = controller_spec(cfg, m, p)
    x0 = default_x0(cfg, n)
    noise = NoiseSpec(cfg.loop.noise.kind, cfg.loop.noise.scale, rng_seed=seed)
    pp, tp = partition(cfg, nominal)
    order = c.T_ini + c.N + n
    scale = c.excitation_scale
    log = collect_data(plant, c.T, min(order, max(1, (c.T + 1) // (m + 1))), rng_seed=seed, scale=scale,
                       noise=noise if noise.kind != "None" else None, x0=x0)
    qs = qp_settings(cfg)
    exact = c.model_knowledge == "exact"
    tv = isinstance(plant, TimeVaryingPlant)

    blocks = None
    if c.variant == "MPC":
        model = plant.at if (tv and exact) else nominal
        ctrl = MpcController(model, spec, qs)
    elif c.variant in ("DeePC", "DeePC_Condensed"):
        blocks = partition_data(log, c.T_ini, c.N)
        ctrl = DeepcController(blocks, spec, condensed=c.variant == "DeePC_Condensed", qp_settings=qs)
    elif c.variant in ("HDeePC", "HDeePC_Condensed"):
        blocks = partition_data(log, c.T_ini, c.N, pp.unknown_outputs)
        model_at = None
        if tv and exact and pp.n_kappa:
            pb = cfg.partition
            model_at = lambda t: split_plant(plant.at(t), pb.n_kappa, pb.kappa_outputs, pb.known_states)  # noqa: E731
        ctrl = HdeepcController(pp, tp, blocks, spec, condensed=c.variant == "HDeePC_Condensed",
                                model_at=model_at, qp_settings=qs)
    else:
        if not isinstance(plant, BessPlant):
            raise ConfigInvalid("NL_HDeePC is available for the BESS scenarios only", "controller.variant")
        if pp.n_kappa != 1 or pp.kappa_outputs != (1,):
            raise ConfigInvalid("NL_HDeePC on the BESS expects the state of charge as the known part",
                                "partition")
        blocks = partition_data(log, c.T_ini, c.N, pp.unknown_outputs)
        layout = HybridLayout(m, pp.unknown_outputs, pp.kappa_outputs, 1, True)
        scp = ScpSettings(c.scp.max_iters, c.scp.tol,
                          trust_region=np.inf if c.scp.trust_region is None else c.scp.trust_region)
        ctrl = NlHdeepcController(bess_known_model(plant), layout, blocks, spec,
                                  known_states=pp.state_perm[pp.n_u:], scp=scp, qp_settings=qs)

    observer = None
    lb = cfg.loop
    if lb.state_source == "Observer":
        if pp.n_kappa == 0 or not isinstance(ctrl, HdeepcController):
            raise ConfigInvalid("the observer state source needs a hybrid controller with known states",
                                "loop.state_source")
        ob = lb.observer
        if ob is not None and ob.gain is not None:
            L = ob.gain.array()
        else:
            L = design_observer_gain(pp, ob.q if ob else 1.0, ob.r if ob else 1e-2)
        x_hat0 = np.asarray(ob.x_hat0, dtype=float) if ob is not None and ob.x_hat0 is not None \
            else np.zeros(pp.n_kappa)
        observer = ObserverSpec(L, x_hat0)

    total = c.T_ini + lb.steps + c.N
    loop = LoopConfig(
        steps=lb.steps, s=lb.s, noise=noise if noise.kind != "None" else None,
        reference=_reference(cfg, p), disturbance=_disturbance(cfg, total, m, seed),
        state_source=lb.state_source, observer=observer, warm_fill=lb.warm_fill,
        warm_scale=lb.warm_scale, seed=seed, failure_policy=lb.failure_policy, t0=c.T,
    )
    return Scenario(cfg.plant.builtin, plant, nominal, spec, loop, x0, log, pp, tp, ctrl, blocks)


def run_scenario(sc: Scenario, abort: bool = False) -> ClosedLoopResult:
    loop = replace(sc.loop, failure_policy="abort") if abort else sc.loop
    return run_receding_horizon(sc.plant, sc.controller, loop, sc.x0)


def audit_scenario(cfg: ScenarioConfig, seed: int) -> AssumptionReport:
    """Assumption report for the configured split and data."""
    plant, nominal = build_plant(cfg, seed)
    c = cfg.controller
    n, m = nominal.n, nominal.m
    noise = NoiseSpec(cfg.loop.noise.kind, cfg.loop.noise.scale, rng_seed=seed)
    x0 = default_x0(cfg, n)
    order = c.T_ini + c.N + n
    log = collect_data(plant, c.T, min(order, max(1, (c.T + 1) // (m + 1))), rng_seed=seed,
                       scale=c.excitation_scale, noise=noise if noise.kind != "None" else None, x0=x0)
    if c.variant in ("DeePC", "DeePC_Condensed"):
        pp = split_plant(nominal, 0, ())
        tp = None
    else:
        pp, tp = partition(cfg, nominal)
    blocks = partition_data(log, c.T_ini, c.N, pp.unknown_outputs) if c.variant != "MPC" else None
    if c.variant == "MPC":
        pp_mpc = split_plant(nominal, n, tuple(range(nominal.p)))
        return validate_assumptions(pp_mpc, solve_transform(pp_mpc), None)
    if tp is None and (pp.n_kappa or pp.p_kappa):
        # report the failing residual rather than raising
        try:
            solve_transform(pp)
        except InfeasibleTransform as exc:
            rep = validate_assumptions(pp, None, blocks)
            checks = [AssumptionCheck("assumption_1", "fail",
                                      f"no transform pair (residual {exc.residual:.3g})", residual=exc.residual)]
            checks += [ch for ch in rep.checks if ch.name != "assumption_1"]
            return AssumptionReport(checks)
    return validate_assumptions(pp, tp, blocks)
