"""Shared builders for predictor and loop tests."""

import numpy as np

from hdeepc.behavior import InitWindow, collect_data, partition_data, stack
from hdeepc.predictors import ControllerSpec
from hdeepc.splitmodel import random_assumption1_plant, solve_transform, split_plant


def random_instance(seed, n=4, m=2, p=3, nk=2, pk=1, T_ini=None, N=5):
    """Assumption-1 plant, noiseless PE data and a consistent initial window."""
    rng = np.random.default_rng(seed)
    plant, kappa = random_assumption1_plant(n, m, p, nk, pk, rng)
    T_ini = n if T_ini is None else T_ini
    order = T_ini + N + n
    log = collect_data(plant, (m + 1) * order - 1 + 10, order, rng_seed=seed)
    x = rng.normal(size=n)
    u_ini = rng.normal(size=(T_ini, m))
    ys = []
    for k in range(T_ini):
        x, y = plant.step(x, u_ini[k])
        ys.append(y)
    ys = np.array(ys)
    pp = split_plant(plant, nk, kappa)
    tp = solve_transform(pp) if (nk or pk) else None
    spec = ControllerSpec(N, T_ini, np.eye(p), 0.1 * np.eye(m))
    r = np.tile(rng.normal(size=p), N)
    return dict(
        plant=plant, pp=pp, tp=tp, spec=spec, log=log, x=x, r=r,
        full_blocks=partition_data(log, T_ini, N),
        blocks=partition_data(log, T_ini, N, pp.unknown_outputs),
        window_full=InitWindow(stack(u_ini), stack(ys)),
        window=InitWindow(stack(u_ini), stack(ys[:, list(pp.unknown_outputs)]), x[n - nk:]),
    )
