import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdeepc.behavior import build_hankel, check_pe
from hdeepc.densekit import rank_of
from hdeepc.errors import DimensionMismatch, LengthTooShort
from hdeepc.plantlab import (
    BessMode, BessPlant, LtiPlant, NoiseSpec, TimeVaryingPlant, bess_matrices, coupled8_plant,
    generate_pe_input, is_controllable, lti_step, nl_step, observability_matrix, perturb_time_varying,
    rollout, toeplitz_matrix,
)
from oracles import free_response


def test_identity_step():
    pl = LtiPlant(np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2)))
    x_next, y = lti_step(pl, [1, 0], [0, 1])
    np.testing.assert_array_equal(x_next, [1, 1])
    np.testing.assert_array_equal(y, [1, 0])


def test_bess_soc_row():
    x_next, _ = lti_step(bess_matrices(1e3), [0, 0, 1], [1, 0])
    assert x_next[2] == pytest.approx(0.999999, abs=1e-15)


def test_zero_state_zero_input():
    pl = coupled8_plant()
    x_next, y = lti_step(pl, np.zeros(8), np.zeros(2))
    assert not np.any(x_next) and not np.any(y)


def test_step_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        lti_step(bess_matrices(10.0), [0, 0], [0, 0])


@pytest.mark.parametrize("u1, alpha", [(1.0, 1 / 0.9), (-1.0, 0.9), (0.0, 1 / 0.9)])
def test_efficiency_factor(u1, alpha):
    assert BessPlant(eta=0.9).alpha(u1) == pytest.approx(alpha)


def test_unit_efficiency_matches_linear(rng):
    lin = BessPlant(tau_q=10.0, eta=1.0, mode=BessMode.EFFICIENCY_NONLINEAR)
    x_nl = x_lin = np.array([0.1, -0.2, 0.6])
    for u in rng.normal(size=(30, 2)):
        x_nl, y_nl = nl_step(lin, x_nl, u)
        x_lin, y_lin = lti_step(bess_matrices(10.0), x_lin, u)
        np.testing.assert_allclose(x_nl, x_lin, atol=1e-15)
        np.testing.assert_allclose(y_nl, y_lin, atol=1e-15)


def test_efficiency_loss_asymmetry():
    pl = BessPlant(tau_q=10.0, eta=0.9, mode=BessMode.EFFICIENCY_NONLINEAR)
    x = np.array([0.0, 0.0, 0.5])
    x1, _ = nl_step(pl, x, [2.0, 0.0])
    x2, _ = nl_step(pl, x1, [-2.0, 0.0])
    # discharging then charging the same current leaves the battery lower
    assert x2[2] < 0.5


def test_pe_length_boundary():
    assert generate_pe_input(1, 3, 2).shape == (3, 1)
    with pytest.raises(LengthTooShort):
        generate_pe_input(1, 2, 2)


def test_pe_full_row_rank():
    u = generate_pe_input(1, 100, 12, rng_seed=1)
    assert rank_of(build_hankel(u, 12)) == 12


def test_pe_two_inputs():
    u = generate_pe_input(2, 200, 60)
    assert check_pe(u, 60)[0]


def test_time_varying_degenerate_cases():
    nom = coupled8_plant()
    for tv in (TimeVaryingPlant(nom, 0.0, (2, 3)), TimeVaryingPlant(nom, 0.1, ())):
        pl = perturb_time_varying(tv, 5)
        np.testing.assert_array_equal(pl.A, nom.A)
        np.testing.assert_array_equal(pl.B, nom.B)


def test_time_varying_deterministic():
    tv = TimeVaryingPlant(coupled8_plant(), 0.1, (2, 3, 4), rng_seed=3)
    a, b = perturb_time_varying(tv, 7), perturb_time_varying(tv, 7)
    np.testing.assert_array_equal(a.A, b.A)
    c = perturb_time_varying(tv, 8)
    assert not np.array_equal(a.A, c.A)
    # only the designated rows move
    np.testing.assert_array_equal(a.A[[0, 1, 5, 6, 7]], tv.nominal.A[[0, 1, 5, 6, 7]])


def test_noise_streams_independent_and_reproducible():
    spec = NoiseSpec("Gaussian", 1e-3, rng_seed=4)
    a = spec.generator(1).draw(5)
    b = spec.generator(1).draw(5)
    c = spec.generator(2).draw(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    u = NoiseSpec("Uniform", 2e-5).generator().draw(1000)
    assert np.max(np.abs(u)) <= 2e-5


def test_coupled8_controllable():
    pl = coupled8_plant()
    assert is_controllable(pl.A, pl.B)
    assert max(abs(np.linalg.eigvals(pl.A))) == pytest.approx(0.97)


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 2), st.integers(1, 3), st.integers(1, 6))
def test_rollout_operator_form(seed, n, m, p, N):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(n, n)) * 0.5, rng.normal(size=(n, m))
    C, D = rng.normal(size=(p, n)), rng.normal(size=(p, m))
    x0, u = rng.normal(size=n), rng.normal(size=(N, m))
    y_loop = free_response(A, B, C, D, x0, u)
    y_op = observability_matrix(A, C, N) @ x0 + toeplitz_matrix(A, B, C, D, N) @ u.reshape(-1)
    np.testing.assert_allclose(y_op, y_loop.reshape(-1), atol=1e-10)
    _, ys = rollout(LtiPlant(A, B, C, D), x0, u)
    np.testing.assert_allclose(ys, y_loop, atol=1e-12)
