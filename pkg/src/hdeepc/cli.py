"""Command-line front end: ``hdeepc run|audit|sweep CONFIG``.

Exit codes: 0 ok, 2 invalid config, 3 solver abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from hdeepc.config import ScenarioConfig, load_config
from hdeepc.errors import ConfigInvalid, SolverAbort

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_IO = 0, 2, 3, 4

SUMMARY_KEYS = ("scenario", "variant", "seeds", "total_cost", "mean_solve_time", "runs")
SWEEP_COLUMNS = ("value", "total_cost", "total_solve_time", "equality_constraint_count")


def _seeds(cfg: ScenarioConfig, seed: int | None) -> list[int]:
    return [seed] if seed is not None else list(cfg.loop.seeds)


def _out_dir(cfg: ScenarioConfig, out_dir: str | None) -> Path:
    return Path(out_dir if out_dir is not None else cfg.output.dir)


def run_config(cfg: ScenarioConfig, seeds, out_dir: Path, abort: bool = False) -> dict:
    """Run every seed, write one trajectory CSV per seed and a summary JSON."""
    from hdeepc.scenarios import build_scenario, run_scenario

    prefix, variant = cfg.output.prefix, cfg.controller.variant
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = []
    for seed in seeds:
        sc = build_scenario(cfg, seed)
        res = run_scenario(sc, abort=abort)
        res.to_csv(out_dir / f"{prefix}_{variant}_seed{seed}.csv")
        entry = res.summary(sc.name)
        entry["seed"] = seed
        runs.append(entry)
    summary = {
        "scenario": cfg.plant.builtin,
        "variant": variant,
        "seeds": list(seeds),
        "total_cost": float(np.mean([r["total_cost"] for r in runs])),
        "mean_solve_time": float(np.mean([r["mean_solve_time"] for r in runs])),
        "runs": runs,
    }
    with open(out_dir / f"{prefix}_{variant}_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def cmd_run(path, seed=None, out_dir=None, abort=False) -> int:
    cfg = load_config(path)
    run_config(cfg, _seeds(cfg, seed), _out_dir(cfg, out_dir), abort)
    return EXIT_OK


def cmd_audit(path, seed=None, out_dir=None) -> tuple[int, dict]:
    from hdeepc.scenarios import audit_scenario

    cfg = load_config(path)
    seed = _seeds(cfg, seed)[0]
    report = audit_scenario(cfg, seed)
    for ch in report.checks:
        extra = []
        if ch.residual is not None:
            extra.append(f"residual={ch.residual:.3g}")
        if ch.achieved_rank is not None:
            extra.append(f"rank={ch.achieved_rank}/{ch.required_rank}")
        print(f"{ch.name}: {ch.status} {ch.detail} {' '.join(extra)}".rstrip())
    for w in report.warnings:
        print(f"warning: {w}")
    data = report.as_dict()
    if out_dir is not None:
        d = _out_dir(cfg, out_dir)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / f"{cfg.output.prefix}_audit.json", "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
    return EXIT_OK, data


def _known_outputs(C: np.ndarray, known_states) -> list[int]:
    """Outputs whose rows touch only known states."""
    unknown = np.setdiff1d(np.arange(C.shape[1]), known_states)
    return [j for j in range(C.shape[0]) if not np.any(C[j, unknown])]


def sweep_config(cfg: ScenarioConfig, kind: str, value: float) -> ScenarioConfig:
    """Return ``cfg`` with one swept parameter replaced."""
    from hdeepc.scenarios import build_plant

    c = cfg.controller
    if kind == "lambda":
        return cfg.model_copy(update={"controller": c.model_copy(update={"lambda_g": float(value)})})
    if kind == "tau_q":
        if not cfg.plant.builtin.startswith("bess"):
            raise ConfigInvalid("tau_q sweeps need a BESS plant", "plant.builtin")
        if value <= 0:
            raise ConfigInvalid("tau_q must be positive", "plant.tau_q")
        return cfg.model_copy(update={"plant": cfg.plant.model_copy(update={"tau_q": float(value)})})
    if kind == "split":
        _, nominal = build_plant(cfg, 0)
        nk = int(value)
        if nk != value or not 0 <= nk <= nominal.n:
            raise ConfigInvalid(f"split value {value} outside 0..{nominal.n}", "partition.n_kappa")
        known = list(range(nominal.n - nk, nominal.n))
        part = cfg.partition.model_copy(update={
            "n_kappa": nk, "known_states": None, "A_y": None, "C_y": None,
            "kappa_outputs": _known_outputs(nominal.C, known),
        })
        variant = c.variant if c.variant.startswith("HDeePC") else "HDeePC"
        return cfg.model_copy(update={"partition": part,
                                      "controller": c.model_copy(update={"variant": variant})})
    raise ConfigInvalid(f"unknown sweep kind '{kind}'", "sweep")


def _sweep_row(args) -> dict:
    from hdeepc.scenarios import build_scenario, run_scenario

    cfg, value, seeds, abort = args
    costs, times, rows = [], [], 0
    for seed in seeds:
        sc = build_scenario(cfg, seed)
        rows = sc.controller.equality_rows()
        res = run_scenario(sc, abort=abort)
        costs.append(res.total_cost)
        times.append(float(np.sum(res.solve_times)))
    return {"value": value, "total_cost": float(np.mean(costs)),
            "total_solve_time": float(np.mean(times)), "equality_constraint_count": rows}


def run_sweep(cfg: ScenarioConfig, kind: str, values, seeds, out_dir: Path,
              abort: bool = False, jobs: int = 1) -> list[dict]:
    """One row per value; independent runs may fan out over ``jobs`` processes."""
    tasks = [(sweep_config(cfg, kind, v), v, list(seeds), abort) for v in values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_row, tasks))
    else:
        rows = [_sweep_row(t) for t in tasks]
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{cfg.output.prefix}_sweep_{kind}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in SWEEP_COLUMNS})
    return rows


def _default_values(cfg: ScenarioConfig, kind: str) -> list[float]:
    if kind == "split":
        from hdeepc.scenarios import build_plant

        return list(range(build_plant(cfg, 0)[1].n + 1))
    if kind == "lambda":
        return [cfg.controller.lambda_g]
    return [1e3, 1e4]


def cmd_sweep(path, kind, values=None, seed=None, out_dir=None, abort=False, jobs=1) -> int:
    cfg = load_config(path)
    vals = list(values) if values else _default_values(cfg, kind)
    run_sweep(cfg, kind, vals, _seeds(cfg, seed), _out_dir(cfg, out_dir), abort, jobs)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdeepc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="scenario YAML file")
        p.add_argument("--seed", type=int, default=None, help="override the config's seed list")
        p.add_argument("--out-dir", default=None, help="override output.dir")

    p_run = sub.add_parser("run", help="closed-loop run")
    common(p_run)
    p_run.add_argument("--abort-on-solver-failure", action="store_true")

    p_audit = sub.add_parser("audit", help="check the modelling assumptions")
    common(p_audit)

    p_sweep = sub.add_parser("sweep", help="sweep a split, regularization or capacity")
    common(p_sweep)
    p_sweep.add_argument("kind", choices=["split", "lambda", "tau_q"])
    p_sweep.add_argument("--values", type=float, nargs="+", default=None)
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--abort-on-solver-failure", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.seed, args.out_dir, args.abort_on_solver_failure)
        if args.command == "audit":
            return cmd_audit(args.config, args.seed, args.out_dir)[0]
        values = args.values
        if values is not None and args.kind == "split":
            values = [int(v) for v in values]
        return cmd_sweep(args.config, args.kind, values, args.seed, args.out_dir,
                         args.abort_on_solver_failure, args.jobs)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverAbort as exc:
        print(f"solver abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
