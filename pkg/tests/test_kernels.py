import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bogodisp.grid import Field, GridError, gaussian, make_grid
from bogodisp.hartree import build_bump_potential
from bogodisp.kernels import (
    KernelError,
    KernelMatrix,
    build_k1,
    build_k2,
    build_projected_kernels,
    hs_norm,
    kernel_derivative_norms,
    kernel_norm_report,
    linf_l2_norm,
    matrix_op_norm,
    op_norm,
    power_iteration,
    project_orthogonal,
    rank_one,
    verify_kernel_bounds,
    write_norm_reports,
)


@pytest.fixture(scope="module")
def setup():
    g = make_grid(1, 128, 32.0)
    v = build_bump_potential(g, 0.5, 2.0)
    phi = gaussian(g, 1.2, k0=0.4)
    return g, v, phi


def test_symmetries(setup):
    g, v, phi = setup
    K1, K2 = build_k1(phi, v), build_k2(phi, v)
    assert np.allclose(K1.entries, K1.entries.conj().T)
    assert np.allclose(K2.entries, K2.entries.T)


def test_projection_annihilates_condensate(setup):
    g, v, phi = setup
    K1t, K2t = build_projected_kernels(phi, v)
    assert np.max(np.abs(K1t.apply(phi))) < 1e-12
    assert np.max(np.abs(K1t.adjoint().apply(phi))) < 1e-12
    assert np.max(np.abs(K2t.apply(phi))) < 1e-12
    # left factor is conj(q): conj(phi) is annihilated from the left
    assert np.max(np.abs(phi.values @ K2t.entries)) < 1e-12


def test_projection_needs_unit_norm(setup):
    g, v, phi = setup
    with pytest.raises(KernelError):
        project_orthogonal(build_k1(phi, v), Field(g, 2 * phi.values))
    with pytest.raises(KernelError):
        project_orthogonal(build_k1(phi, v), phi, "left")


def test_norms_match_dense(setup):
    g, v, phi = setup
    K = build_k2(phi, v)
    assert np.isclose(op_norm(K).value, np.linalg.norm(K.operator, 2), rtol=1e-7)
    assert np.isclose(hs_norm(K), np.linalg.norm(K.operator))


def test_rank_one_norms():
    g = make_grid(1, 64, 10.0)
    f = gaussian(g, 1.0).values
    h = gaussian(g, 0.5).values
    K = rank_one(f, h, g)
    # |f><h| has op and HS norm ||f|| ||h|| = 1; sup_x ||K(x, .)|| = ||f||_inf ||h||_2
    assert np.isclose(op_norm(K).value, 1.0, rtol=1e-8)
    assert np.isclose(hs_norm(K), 1.0)
    assert np.isclose(linf_l2_norm(K), np.max(np.abs(f)))


def test_derivative_norms_of_product_kernel():
    g = make_grid(1, 256, 30.0)
    a = 1.0
    f = gaussian(g, a).values
    K = rank_one(f, f, g)
    d = kernel_derivative_norms(K)
    assert np.isclose(d["grad_hs"], np.sqrt(1 / (2 * a * a)), rtol=1e-8)
    assert np.isclose(d["lap_hs"], np.sqrt(3 / (4 * a**4)), rtol=1e-8)


def test_delta_kernel_refuses_hs():
    g = make_grid(1, 16, 4.0)
    D = KernelMatrix.delta(g)
    assert np.allclose(D.operator, np.eye(16))
    with pytest.raises(KernelError):
        hs_norm(D)
    with pytest.raises(KernelError):
        kernel_derivative_norms(D)


def test_grid_mismatch(setup):
    g, v, phi = setup
    other = gaussian(make_grid(1, 128, 16.0), 1.0)
    with pytest.raises(GridError):
        build_k1(other, v)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_power_iteration_matches_svd(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    res = matrix_op_norm(M, tol=1e-12, seed=seed)
    assert np.isclose(res.value, np.linalg.norm(M, 2), rtol=1e-5)


def test_power_iteration_deterministic_and_warm_start():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((40, 40))
    a = matrix_op_norm(M, seed=7)
    b = matrix_op_norm(M, seed=7)
    assert a.value == b.value
    c = matrix_op_norm(M, seed=7, x0=a.vector)
    assert c.iterations < a.iterations
    assert np.isclose(c.value, a.value, rtol=1e-7)


def test_shifted_iteration_for_near_isometry():
    rng = np.random.default_rng(5)
    Q, _ = np.linalg.qr(rng.standard_normal((50, 50)) + 1j * rng.standard_normal((50, 50)))
    U = Q @ np.diag(1 + 0.01 * rng.random(50)) @ Q.conj().T
    res = matrix_op_norm(U, shift=1.0)
    assert np.isclose(res.value, np.linalg.norm(U, 2), rtol=1e-8)


def test_zero_operator():
    res = power_iteration(lambda x: 0 * x, 5)
    assert res.value == 0.0 and res.converged


def test_bounds_hold_and_detect_violation(setup):
    g, v, phi = setup
    K1t, K2t = build_projected_kernels(phi, v)
    cert = verify_kernel_bounds(K2t, v, phi, build_k2(phi, v), label="K2")
    assert cert.passed
    assert len(cert.checks) == 5
    inflated = KernelMatrix(g, 100 * K2t.entries)
    assert not verify_kernel_bounds(inflated, v, phi).passed


def test_norm_report_csv(tmp_path, setup):
    g, v, phi = setup
    K1t, _ = build_projected_kernels(phi, v)
    r = kernel_norm_report(K1t, t=1.5)
    write_norm_reports(tmp_path / "n.csv", [r, r])
    lines = (tmp_path / "n.csv").read_text().splitlines()
    assert lines[0] == "t,op,hs,linf_l2,grad_hs,lap_hs"
    assert len(lines) == 3
