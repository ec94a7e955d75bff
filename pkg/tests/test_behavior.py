import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdeepc.behavior import (
    DataLog, InitWindow, behavioral_residual, build_hankel, check_pe, collect_data, partition_data, stack,
)
from hdeepc.errors import DimensionMismatch, TooShort
from hdeepc.plantlab import LtiPlant, NoiseSpec, bess_matrices, coupled8_plant


def test_scalar_hankel():
    H = build_hankel([1, 2, 3, 4, 5], 2)
    np.testing.assert_array_equal(H, [[1, 2, 3, 4], [2, 3, 4, 5]])


def test_depth_equal_length_gives_column():
    w = np.arange(12.0).reshape(6, 2)
    H = build_hankel(w, 6)
    np.testing.assert_array_equal(H[:, 0], w.reshape(-1))


def test_block_stacking():
    H = build_hankel([(1, 10), (2, 20), (3, 30)], 2)
    np.testing.assert_array_equal(H, [[1, 2], [10, 20], [2, 3], [20, 30]])


def test_hankel_too_short():
    with pytest.raises(TooShort):
        build_hankel([1, 2], 3)


def test_pe_examples():
    assert check_pe(np.ones(10), 2) == (False, 1)
    assert check_pe([1, 2, 3, 4, 5], 2) == (True, 2)
    assert not check_pe(np.zeros(10), 3)[0]


def test_partition_scalar():
    log = DataLog([1, 2, 3, 4, 5], [1, 2, 3, 4, 5])
    b = partition_data(log, 1, 1)
    np.testing.assert_array_equal(b.U_P, [[1, 2, 3, 4]])
    np.testing.assert_array_equal(b.U_F, [[2, 3, 4, 5]])
    np.testing.assert_array_equal(b.Y_P, b.U_P)


def test_partition_boundary_single_column():
    log = DataLog(np.arange(5.0), np.arange(5.0))
    assert partition_data(log, 2, 3).K == 1
    with pytest.raises(TooShort):
        partition_data(log, 3, 3)


def test_restricted_outputs_rows():
    log = DataLog(np.ones((20, 2)), np.arange(60.0).reshape(20, 3))
    b = partition_data(log, 4, 2, channels=[1])
    assert b.Y_P.shape[0] == 1 * 4
    assert b.Y_F.shape[0] == 1 * 2


def test_zero_input_free_response():
    pl = LtiPlant(np.eye(2) * 0.5, np.zeros((2, 1)), np.eye(2), np.zeros((2, 1)))
    log = collect_data(pl, 20, 3)
    assert not np.any(log.y_d)


def test_collect_deterministic_and_length():
    noise = NoiseSpec("Gaussian", 1e-3, rng_seed=2)
    a = collect_data(bess_matrices(1e4), 200, 63, rng_seed=5, noise=noise)
    b = collect_data(bess_matrices(1e4), 200, 63, rng_seed=5, noise=noise)
    assert a.T == 200
    np.testing.assert_array_equal(a.u_d, b.u_d)
    np.testing.assert_array_equal(a.y_d, b.y_d)


def test_data_log_validation(tmp_path):
    with pytest.raises(DimensionMismatch):
        DataLog(np.ones(5), np.ones(4))
    with pytest.raises(ValueError):
        DataLog([1.0, np.nan], [0.0, 0.0])
    log = DataLog(np.arange(6.0).reshape(3, 2), np.arange(3.0))
    log.to_csv(tmp_path / "log.csv")
    back = DataLog.from_csv(tmp_path / "log.csv")
    np.testing.assert_array_equal(back.u_d, log.u_d)
    np.testing.assert_array_equal(back.y_d, log.y_d)


def test_residual_zero_cases():
    log = DataLog(np.arange(8.0), 2 * np.arange(8.0))
    b = partition_data(log, 2, 2)
    w0 = InitWindow(np.zeros(2), np.zeros(2))
    assert behavioral_residual(b, np.zeros(b.K), w0, np.zeros(2), np.zeros(2)) == 0.0
    j = 3
    col = np.vstack([b.U_P, b.Y_P, b.U_F, b.Y_F])[:, j]
    e = np.zeros(b.K)
    e[j] = 1.0
    w = InitWindow(col[:2], col[2:4])
    assert behavioral_residual(b, e, w, col[4:6], col[6:8]) == 0.0


def test_window_size_check():
    b = partition_data(DataLog(np.arange(8.0), np.arange(8.0)), 2, 2)
    with pytest.raises(DimensionMismatch):
        InitWindow(np.zeros(3), np.zeros(2)).check(b)


@given(st.integers(0, 5000))
def test_fundamental_lemma_residual(seed):
    rng = np.random.default_rng(seed)
    n, m, p, T_ini, N = 3, 1, 2, 3, 4
    A = rng.normal(size=(n, n))
    A *= 0.9 / max(abs(np.linalg.eigvals(A)))
    pl = LtiPlant(A, rng.normal(size=(n, m)), rng.normal(size=(p, n)), np.zeros((p, m)))
    L = T_ini + N
    log = collect_data(pl, (m + 1) * (L + n) + 10, L + n, rng_seed=seed)
    blocks = partition_data(log, T_ini, N)
    # a fresh trajectory of the same plant
    x = rng.normal(size=n)
    u = rng.normal(size=(L, m))
    ys = []
    for k in range(L):
        x, y = pl.step(x, u[k])
        ys.append(y)
    ys = np.array(ys)
    w = InitWindow(stack(u[:T_ini]), stack(ys[:T_ini]))
    H = np.vstack([blocks.U_P, blocks.Y_P, blocks.U_F, blocks.Y_F])
    rhs = np.concatenate([w.u_ini, w.y_ini, stack(u[T_ini:]), stack(ys[T_ini:])])
    g = np.linalg.lstsq(H, rhs, rcond=None)[0]
    assert behavioral_residual(blocks, g, w, u[T_ini:], ys[T_ini:]) <= 1e-8


@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 6))
def test_window_roll(T_ini, m, steps):
    # rolling a stacked window by one sample drops the oldest block
    rng = np.random.default_rng(T_ini * 100 + m * 10 + steps)
    stream = rng.normal(size=(T_ini + steps, m))
    window = stack(stream[:T_ini])
    for k in range(steps):
        window = np.concatenate([window[m:], stream[T_ini + k]])
        np.testing.assert_array_equal(window, stack(stream[k + 1:k + 1 + T_ini]))
