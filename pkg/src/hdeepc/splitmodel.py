"""Partition of a plant into unknown and known parts, and the coupling transform.

States are ordered unknown-first, known-last. Outputs keep their original
indices; ``unknown_outputs`` and ``kappa_outputs`` record which rows of ``C``
belong to each part.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hdeepc.behavior import HankelBlocks, check_pe
from hdeepc.errors import IndexOutOfRange, InfeasibleTransform
from hdeepc.plantlab import LtiPlant, is_controllable

log = logging.getLogger(__name__)

TRANSFORM_TOL = 1e-6


@dataclass(frozen=True)
class KnownModel:
    """The blocks a hybrid controller is allowed to read."""

    A_c: np.ndarray
    A_kappa: np.ndarray
    B_kappa: np.ndarray
    C_c: np.ndarray
    C_kappa: np.ndarray
    D_kappa: np.ndarray

    @property
    def n_kappa(self) -> int:
        return self.A_kappa.shape[0]

    @property
    def p_kappa(self) -> int:
        return self.C_kappa.shape[0]


@dataclass(frozen=True)
class PartitionedPlant:
    A_u: np.ndarray
    A_f: np.ndarray
    A_c: np.ndarray
    A_kappa: np.ndarray
    B_u: np.ndarray
    B_kappa: np.ndarray
    C_u: np.ndarray
    C_f: np.ndarray
    C_c: np.ndarray
    C_kappa: np.ndarray
    D_u: np.ndarray
    D_kappa: np.ndarray
    unknown_outputs: tuple[int, ...]
    kappa_outputs: tuple[int, ...]
    state_perm: tuple[int, ...] = ()
    known_flags: frozenset = field(
        default=frozenset({"A_c", "A_kappa", "B_kappa", "C_c", "C_kappa", "D_kappa"})
    )

    @property
    def n_u(self) -> int:
        return self.A_u.shape[0]

    @property
    def n_kappa(self) -> int:
        return self.A_kappa.shape[0]

    @property
    def n(self) -> int:
        return self.n_u + self.n_kappa

    @property
    def m(self) -> int:
        return self.B_u.shape[1]

    @property
    def p_u(self) -> int:
        return len(self.unknown_outputs)

    @property
    def p_kappa(self) -> int:
        return len(self.kappa_outputs)

    @property
    def p(self) -> int:
        return self.p_u + self.p_kappa

    def known(self) -> KnownModel:
        return KnownModel(self.A_c, self.A_kappa, self.B_kappa, self.C_c, self.C_kappa, self.D_kappa)

    def read(self, name: str) -> np.ndarray:
        """Guarded block access: only blocks flagged as known are readable."""
        if name not in self.known_flags:
            raise PermissionError(f"block {name} is not part of the known model")
        return getattr(self, name)


def split_plant(
    plant: LtiPlant,
    n_kappa: int,
    kappa_outputs: Sequence[int] = (),
    known_states: Sequence[int] | None = None,
) -> PartitionedPlant:
    """Partition ``plant``; the last ``n_kappa`` states are known unless
    ``known_states`` names them explicitly (they are then permuted to the end)."""
    n, p = plant.n, plant.p
    if not 0 <= n_kappa <= n:
        raise IndexOutOfRange(f"n_kappa={n_kappa} outside [0, {n}]")
    kappa = tuple(sorted(int(i) for i in kappa_outputs))
    if any(i < 0 or i >= p for i in kappa) or len(set(kappa)) != len(kappa):
        raise IndexOutOfRange(f"kappa outputs {kappa_outputs} invalid for p={p}")
    unknown = tuple(i for i in range(p) if i not in kappa)
    if known_states is None:
        perm = tuple(range(n))
    else:
        ks = [int(i) for i in known_states]
        if len(ks) != n_kappa or any(i < 0 or i >= n for i in ks) or len(set(ks)) != len(ks):
            raise IndexOutOfRange(f"known states {known_states} invalid for n={n}, n_kappa={n_kappa}")
        perm = tuple([i for i in range(n) if i not in ks] + ks)
    P = list(perm)
    A = plant.A[np.ix_(P, P)]
    B = plant.B[P, :]
    C = plant.C[:, P]
    nu = n - n_kappa
    Cu, Ck = C[list(unknown), :], C[list(kappa), :]
    return PartitionedPlant(
        A_u=A[:nu, :nu], A_f=A[:nu, nu:], A_c=A[nu:, :nu], A_kappa=A[nu:, nu:],
        B_u=B[:nu], B_kappa=B[nu:],
        C_u=Cu[:, :nu], C_f=Cu[:, nu:], C_c=Ck[:, :nu], C_kappa=Ck[:, nu:],
        D_u=plant.D[list(unknown), :], D_kappa=plant.D[list(kappa), :],
        unknown_outputs=unknown, kappa_outputs=kappa, state_perm=perm,
    )


def compose(pp: PartitionedPlant) -> LtiPlant:
    A = np.block([[pp.A_u, pp.A_f], [pp.A_c, pp.A_kappa]])
    B = np.vstack([pp.B_u, pp.B_kappa])
    C = np.zeros((pp.p, pp.n))
    D = np.zeros((pp.p, pp.m))
    C[list(pp.unknown_outputs), :] = np.hstack([pp.C_u, pp.C_f])
    C[list(pp.kappa_outputs), :] = np.hstack([pp.C_c, pp.C_kappa])
    D[list(pp.unknown_outputs), :] = pp.D_u
    D[list(pp.kappa_outputs), :] = pp.D_kappa
    if pp.state_perm and list(pp.state_perm) != list(range(pp.n)):
        inv = np.argsort(pp.state_perm)
        A, B, C = A[np.ix_(inv, inv)], B[inv], C[:, inv]
    return LtiPlant(A, B, C, D)


@dataclass(frozen=True)
class TransformPair:
    A_y: np.ndarray
    C_y: np.ndarray
    residual_A: float = 0.0
    residual_C: float = 0.0


def _solve_rows(target: np.ndarray, pp: PartitionedPlant):
    """Least-squares X with X [C_u C_f D_u] = [target 0 0]; returns (X, residual per row)."""
    M = np.hstack([pp.C_u, pp.C_f, pp.D_u])
    R = np.hstack([target, np.zeros((target.shape[0], pp.n_kappa + pp.m))])
    if pp.p_u == 0:
        X = np.zeros((target.shape[0], 0))
    else:
        X = np.linalg.lstsq(M.T, R.T, rcond=None)[0].T
    res = np.max(np.abs(X @ M - R), axis=1, initial=0.0) if R.size else np.zeros(target.shape[0])
    return X, res


def solve_transform(pp: PartitionedPlant, tol: float = TRANSFORM_TOL) -> TransformPair:
    """Find (A_y, C_y) with A_c = A_y C_u, A_y C_f = 0, A_y D_u = 0 and likewise
    for C_y.

    This reads C_u, C_f and D_u, which belong to the otherwise unknown part of
    the plant.
    """
    A_y, res_a = _solve_rows(pp.A_c, pp)
    C_y, res_c = _solve_rows(pp.C_c, pp)
    ra = float(np.max(res_a, initial=0.0))
    rc = float(np.max(res_c, initial=0.0))
    bound_a = tol * (1.0 + float(np.max(np.abs(pp.A_c), initial=0.0)))
    bound_c = tol * (1.0 + float(np.max(np.abs(pp.C_c), initial=0.0)))
    if ra > bound_a:
        raise InfeasibleTransform(f"no A_y satisfies the state coupling (residual {ra:.3g})", ra)
    if rc > bound_c:
        raise InfeasibleTransform(f"no C_y satisfies the output coupling (residual {rc:.3g})", rc)
    return TransformPair(A_y, C_y, ra, rc)


@dataclass
class ResplitResult:
    plant: PartitionedPlant
    transform: TransformPair
    moved_outputs: list[int]
    warnings: list[str]


def resplit_for_outputs(plant: LtiPlant, n_kappa: int, kappa_outputs: Sequence[int],
                        known_states: Sequence[int] | None = None,
                        tol: float = TRANSFORM_TOL) -> ResplitResult:
    """Split and solve the transform, moving known outputs whose coupling cannot
    be expressed through the unknown outputs into the data-driven part."""
    kappa = sorted(int(i) for i in kappa_outputs)
    moved, warnings = [], []
    while True:
        pp = split_plant(plant, n_kappa, kappa, known_states)
        _, res_c = _solve_rows(pp.C_c, pp)
        bound = tol * (1.0 + float(np.max(np.abs(pp.C_c), initial=0.0)))
        bad = [pp.kappa_outputs[i] for i in range(pp.p_kappa) if res_c[i] > bound]
        if not bad:
            break
        out = bad[0]
        kappa.remove(out)
        moved.append(out)
        msg = f"output {out} moved to the data-driven part (output coupling not expressible)"
        warnings.append(msg)
        log.warning(msg)
    return ResplitResult(pp, solve_transform(pp, tol), moved, warnings)


@dataclass
class AssumptionCheck:
    name: str
    status: str  # "pass", "fail" or "not applicable"
    detail: str = ""
    residual: float | None = None
    achieved_rank: int | None = None
    required_rank: int | None = None

    @property
    def ok(self) -> bool:
        return self.status != "fail"


@dataclass
class AssumptionReport:
    checks: list[AssumptionCheck]
    warnings: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [c.__dict__ for c in self.checks],
            "warnings": list(self.warnings),
        }


def inputs_from_blocks(blocks: HankelBlocks) -> np.ndarray:
    """Recover the raw input sequence u^d from its Hankel blocks."""
    H = np.vstack([blocks.U_P, blocks.U_F])
    m, L, K = blocks.m, blocks.T_ini + blocks.N, blocks.K
    first = H[:m, :].T
    tail = H[:, -1].reshape(L, m)[1:]
    return np.vstack([first, tail])


def validate_assumptions(
    pp: PartitionedPlant,
    tp: TransformPair | None,
    data: HankelBlocks | None,
    x_kappa_hat=None,
    tol: float = TRANSFORM_TOL,
    pe_tol: float = 1e-9,
) -> AssumptionReport:
    checks = []
    if pp.n_kappa == 0 and pp.p_kappa == 0:
        checks.append(AssumptionCheck("assumption_1", "not applicable", "no known blocks"))
    elif tp is None:
        checks.append(AssumptionCheck("assumption_1", "fail", "no transform pair supplied"))
    else:
        ra = float(np.max(np.abs(np.hstack([
            pp.A_c - tp.A_y @ pp.C_u, tp.A_y @ pp.C_f, tp.A_y @ pp.D_u])), initial=0.0))
        rc = float(np.max(np.abs(np.hstack([
            pp.C_c - tp.C_y @ pp.C_u, tp.C_y @ pp.C_f, tp.C_y @ pp.D_u])), initial=0.0))
        bound = tol * (1.0 + max(float(np.max(np.abs(pp.A_c), initial=0.0)),
                                 float(np.max(np.abs(pp.C_c), initial=0.0))))
        res = max(ra, rc)
        checks.append(AssumptionCheck(
            "assumption_1", "pass" if res <= bound else "fail",
            f"state coupling residual {ra:.3g}, output coupling residual {rc:.3g}", residual=res))

    if pp.n_u == 0 and pp.p_u == 0:
        checks.append(AssumptionCheck("assumption_2", "not applicable", "no data-driven part"))
    elif data is None:
        checks.append(AssumptionCheck("assumption_2", "fail", "no data supplied"))
    else:
        order = data.T_ini + data.N + pp.n
        u_d = inputs_from_blocks(data)
        required = data.m * order
        if u_d.shape[0] < order:
            checks.append(AssumptionCheck("assumption_2", "fail",
                                          f"data length {u_d.shape[0]} shorter than order {order}",
                                          achieved_rank=0, required_rank=required))
        else:
            ok, rank = check_pe(u_d, order, pe_tol)
            checks.append(AssumptionCheck(
                "assumption_2", "pass" if ok else "fail",
                f"PE of order T_ini + N + n = {order}", achieved_rank=rank, required_rank=required))

    if pp.n_kappa == 0:
        checks.append(AssumptionCheck("assumption_3", "not applicable", "no known states"))
    elif x_kappa_hat is None:
        checks.append(AssumptionCheck("assumption_3", "pass", "known-state estimate supplied at run time"))
    else:
        ok = np.size(x_kappa_hat) == pp.n_kappa and np.all(np.isfinite(x_kappa_hat))
        checks.append(AssumptionCheck("assumption_3", "pass" if ok else "fail", "known-state estimate"))
    return AssumptionReport(checks)


def random_assumption1_plant(
    n: int, m: int, p: int, n_kappa: int, p_kappa: int, rng: np.random.Generator,
    radius: float = 0.9, max_tries: int = 50,
) -> tuple[LtiPlant, tuple[int, ...]]:
    """Random controllable plant satisfying the coupling assumption for the split
    (last ``n_kappa`` states known, ``p_kappa`` randomly placed known outputs).

    The couplings are built as A_c = A_y C_u, C_c = C_y C_u with C_f = 0, D_u = 0.
    """
    if not (0 <= n_kappa <= n and 0 <= p_kappa <= p):
        raise IndexOutOfRange("split sizes out of range")
    n_u, p_u = n - n_kappa, p - p_kappa
    for _ in range(max_tries):
        A_u = rng.normal(size=(n_u, n_u))
        A_f = rng.normal(size=(n_u, n_kappa))
        A_k = rng.normal(size=(n_kappa, n_kappa))
        C_u = rng.normal(size=(p_u, n_u))
        A_y = rng.normal(size=(n_kappa, p_u))
        C_y = rng.normal(size=(p_kappa, p_u))
        C_k = rng.normal(size=(p_kappa, n_kappa))
        A = np.block([[A_u, A_f], [A_y @ C_u, A_k]]) if n else np.zeros((0, 0))
        rho = max(abs(np.linalg.eigvals(A))) if n else 0.0
        if rho < 1e-6:
            continue
        # uniform scaling keeps A_c = (scaled A_y) C_u
        A = A * (radius / rho)
        B = rng.normal(size=(n, m))
        if not is_controllable(A, B):
            continue
        kappa = tuple(sorted(rng.choice(p, size=p_kappa, replace=False).tolist()))
        unknown = [i for i in range(p) if i not in kappa]
        C = np.zeros((p, n))
        D = np.zeros((p, m))
        C[unknown, :n_u] = C_u
        C[list(kappa), :n_u] = C_y @ C_u
        C[list(kappa), n_u:] = C_k
        D[list(kappa), :] = rng.normal(size=(p_kappa, m))
        return LtiPlant(A, B, C, D), kappa
    raise RuntimeError("could not generate a controllable plant")
