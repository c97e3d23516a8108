import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gevadapt import linalg
from gevadapt.errors import (FormatError, InvalidConfigError, InvalidInputError, ShapeError,
                             SingularCovarianceError)

from .oracles import char_poly_eigvals, crandn, herm_psd


def test_qr_identity():
    f = linalg.qr_decompose(np.eye(4))
    np.testing.assert_allclose(f.q, np.eye(4), atol=1e-15)
    np.testing.assert_allclose(f.r, np.eye(4), atol=1e-15)


def test_qr_reconstruction_3x3():
    a = crandn(np.random.default_rng(0), 3, 3)
    f = linalg.qr_decompose(a)
    assert np.linalg.norm(a - f.q @ f.r) / np.linalg.norm(a) < 1e-12
    assert np.allclose(np.tril(f.r, -1), 0)
    d = np.diag(f.r)
    assert np.all(d.imag == 0) and np.all(d.real >= 0)


def test_qr_positive_diagonal_is_fixed():
    f = linalg.qr_decompose(np.diag([2.0, 3.0]))
    np.testing.assert_allclose(f.q, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(f.r, np.diag([2.0, 3.0]), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 8), seed=st.integers(0, 2 ** 31 - 1))
def test_qr_unitarity(n, seed):
    a = crandn(np.random.default_rng(seed), n, n)
    f = linalg.qr_decompose(a)
    assert np.linalg.norm(f.q.conj().T @ f.q - np.eye(n)) < 1e-10 * n
    assert np.linalg.norm(a - f.q @ f.r) < 1e-10 * n * np.linalg.norm(a)


def test_qr_batched_matches_loop():
    a = crandn(np.random.default_rng(1), 5, 3, 3)
    f = linalg.qr_decompose(a)
    for i in range(5):
        g = linalg.qr_decompose(a[i])
        np.testing.assert_allclose(f.q[i], g.q, atol=1e-14)
        np.testing.assert_allclose(f.r[i], g.r, atol=1e-14)


def test_qr_rejects_bad_input():
    with pytest.raises(ShapeError):
        linalg.qr_decompose(np.zeros((2, 3)))
    with pytest.raises(InvalidInputError):
        linalg.qr_decompose(np.full((2, 2), np.inf))


@pytest.mark.parametrize("k", [1, 5, 20])
def test_diagonal_fixed_point(k):
    a0 = np.diag([4.0, 2.0, 0.5])
    res = linalg.qr_algorithm(a0, k)
    np.testing.assert_allclose(res.a_final, a0, atol=1e-14)
    np.testing.assert_allclose(res.accum_q, np.eye(3), atol=1e-14)


def test_symmetric_2x2_converges():
    res = linalg.qr_algorithm(np.array([[2.0, 1.0], [1.0, 2.0]]), 50)
    np.testing.assert_allclose(np.diag(res.a_final).real, [3.0, 1.0], atol=1e-12)
    assert abs(res.a_final[0, 1]) < 1e-12 and abs(res.a_final[1, 0]) < 1e-12


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 6), k=st.integers(1, 10), seed=st.integers(0, 2 ** 31 - 1))
def test_trace_and_similarity(n, k, seed):
    a0 = crandn(np.random.default_rng(seed), n, n)
    res = linalg.qr_algorithm(a0, k)
    assert res.k_iters == k and len(res.history) == k
    tr0 = np.trace(a0)
    assert abs(np.trace(res.a_final) - tr0) <= 1e-10 * max(abs(tr0), 1.0) * n
    p = res.accum_q
    np.testing.assert_allclose(res.a_final, p.conj().T @ a0 @ p, atol=1e-10 * np.linalg.norm(a0))


@pytest.mark.parametrize("n", [2, 3])
def test_eigenvalue_multiset_matches_char_poly(n):
    rng = np.random.default_rng(10 + n)
    for _ in range(20):
        a0 = np.linalg.solve(herm_psd(rng, n) + 0.1 * np.eye(n), herm_psd(rng, n))
        res = linalg.qr_algorithm(a0, 200)
        got = np.sort(np.diag(res.a_final).real)
        want = np.sort(char_poly_eigvals(a0).real)
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-9)


def test_k_iters_validated():
    with pytest.raises(InvalidConfigError):
        linalg.qr_algorithm(np.eye(2), 0)
    with pytest.raises(InvalidConfigError):
        linalg.principal_pair(np.eye(2), 0)


def test_principal_pair_diagonal():
    val, vec, _ = linalg.principal_pair(np.diag([5.0, 1.0, 0.1]))
    assert val == pytest.approx(5.0)
    np.testing.assert_allclose(vec, [1, 0, 0], atol=1e-12)


def test_principal_pair_default_k():
    _, _, res = linalg.principal_pair(np.diag([2.0, 1.0]))
    assert res.k_iters == 5


def test_principal_pair_rayleigh_consistency():
    rng = np.random.default_rng(4)
    for _ in range(30):
        m = int(rng.integers(2, 6))
        phi = np.linalg.solve(herm_psd(rng, m) + 0.1 * np.eye(m), herm_psd(rng, m))
        val, vec, _ = linalg.principal_pair(phi, 50)
        rq = np.vdot(vec, phi @ vec).real
        assert abs(rq - val) / val < 1e-3


def test_principal_pair_deterministic():
    phi = herm_psd(np.random.default_rng(5), 4)
    a = linalg.principal_pair(phi)
    b = linalg.principal_pair(phi)
    assert a[0] == b[0]
    assert np.array_equal(a[1], b[1])


def test_fix_phase_convention():
    v = crandn(np.random.default_rng(6), 7, 4)
    out = linalg.fix_phase(v)
    np.testing.assert_allclose(np.linalg.norm(out, axis=-1), 1.0)
    pivot = out[np.arange(7), np.argmax(np.abs(out), axis=-1)]
    assert np.all(np.abs(pivot.imag) < 1e-15) and np.all(pivot.real > 0)


def test_herm_solve_identity():
    b = crandn(np.random.default_rng(7), 3, 2)
    np.testing.assert_allclose(linalg.herm_solve(np.eye(3), b), b, atol=1e-15)


def test_herm_solve_residual():
    rng = np.random.default_rng(8)
    for _ in range(10):
        phi = herm_psd(rng, 4) + 0.5 * np.eye(4)
        b = crandn(rng, 4, 4)
        x = linalg.herm_solve(phi, b)
        assert np.linalg.norm(phi @ x - b) / np.linalg.norm(b) < 1e-10


def test_herm_solve_loading():
    phi = np.diag([2.0, 0.0])
    x = linalg.herm_solve(phi, np.eye(2), loading=0.5)
    # loading adds 0.5 * tr/n = 0.5 to the diagonal
    np.testing.assert_allclose(x, np.diag([1 / 2.5, 1 / 0.5]), atol=1e-14)


def test_herm_solve_singular():
    with pytest.raises(SingularCovarianceError):
        linalg.herm_solve(np.zeros((3, 3)), np.eye(3), loading=1e-3)


def test_herm_solve_validation():
    with pytest.raises(InvalidInputError):
        linalg.herm_solve(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2))
    with pytest.raises(ShapeError):
        linalg.herm_solve(np.eye(2), np.eye(3))
    with pytest.raises(InvalidConfigError):
        linalg.herm_solve(np.eye(2), np.eye(2), loading=-1)


@pytest.mark.parametrize("arr", [
    np.arange(6.0).reshape(2, 3),
    crandn(np.random.default_rng(9), 4, 2, 3),
    np.arange(5.0),
])
def test_matrix_dump_round_trip(tmp_path, arr):
    path = tmp_path / "m.bin"
    linalg.write_matrices(path, arr)
    mats = linalg.read_matrices(path)
    stack = np.asarray(arr).reshape((-1,) + np.atleast_2d(arr).shape[-2:])
    assert len(mats) == stack.shape[0]
    for got, want in zip(mats, stack):
        assert got.dtype == want.dtype
        assert np.array_equal(got, want)


def test_matrix_dump_truncated(tmp_path):
    path = tmp_path / "m.bin"
    linalg.write_matrices(path, np.eye(3))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError):
        linalg.read_matrices(path)
