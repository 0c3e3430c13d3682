from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bogodisp.fock import (
    FockError,
    FockState,
    LeakageError,
    QuadraticGenerator,
    apply_generator,
    basis_dimension,
    build_generator_matrix,
    check_wick_quartic,
    enumerate_basis,
    evolve_fock,
    galerkin_generator,
    mean_number,
    mode_flow,
    number_moments,
    random_generator,
    two_point_functions,
)
from bogodisp.grid import gaussian, make_grid
from bogodisp.hartree import build_bump_potential


@pytest.mark.parametrize("M,n_max", [(1, 0), (1, 7), (2, 5), (3, 4), (4, 6)])
def test_basis_dimension_and_grading(M, n_max):
    b = enumerate_basis(M, n_max)
    assert b.D == basis_dimension(M, n_max) == comb(M + n_max, M)
    assert len(set(b.states)) == b.D
    assert np.all(np.diff(b.total) >= 0)
    assert b.states[0] == (0,) * M


def test_basis_order_within_shell():
    b = enumerate_basis(2, 2)
    assert b.states == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


@pytest.mark.parametrize("M,n_max", [(0, 3), (5, 3), (2, 21), (2, -1)])
def test_basis_limits(M, n_max):
    with pytest.raises(FockError):
        enumerate_basis(M, n_max)


def test_commutators_below_cutoff():
    b = enumerate_basis(3, 5)
    a, ad = b.annihilators, b.creators
    below = b.total < b.n_max
    for i in range(3):
        for j in range(3):
            c = (a[i] @ ad[j] - ad[j] @ a[i]).toarray()
            target = np.eye(b.D) if i == j else np.zeros((b.D, b.D))
            assert np.allclose(c[np.ix_(below, below)], target[np.ix_(below, below)])
            assert np.allclose((a[i] @ a[j] - a[j] @ a[i]).toarray(), 0)


def test_generator_validation():
    with pytest.raises(FockError):
        QuadraticGenerator(np.array([[0, 1], [2, 0]]), np.zeros((2, 2)))
    with pytest.raises(FockError):
        QuadraticGenerator(np.zeros((2, 2)), np.array([[0, 1], [2, 0]]))
    with pytest.raises(FockError):
        QuadraticGenerator(np.zeros((2, 2)), np.zeros((3, 3)))


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_generator_hermitian_and_matrix_free(M, seed):
    gen = random_generator(M, 1.0, 0.5, seed)
    b = enumerate_basis(M, 4)
    H = build_generator_matrix(gen, b).toarray()
    assert np.allclose(H, H.conj().T)
    psi = np.random.default_rng(seed).standard_normal(b.D) + 0j
    assert np.allclose(apply_generator(gen, b, psi), H @ psi)


def test_pairing_matrix_element():
    # <2| 1/2 kappa a*^2 |0> = kappa / sqrt(2)
    kappa = 0.37
    b = enumerate_basis(1, 4)
    H = build_generator_matrix(QuadraticGenerator(np.zeros((1, 1)), np.array([[kappa]])), b).toarray()
    assert np.isclose(H[b.index[(2,)], b.index[(0,)]], kappa / np.sqrt(2))


def test_number_conserving_evolution():
    gen = QuadraticGenerator(np.array([[1.0, 0.3], [0.3, -0.5]]), np.zeros((2, 2)))
    b = enumerate_basis(2, 6)
    st0 = FockState.number_state(b, (2, 1))
    run = evolve_fock(st0, gen, 1.0, 1e-3)
    assert np.isclose(mean_number(run.state), 3.0)
    assert run.leakage < 1e-20
    vac = evolve_fock(FockState.vacuum(b), gen, 1.0, 1e-3)
    assert np.isclose(abs(vac.state.amplitudes[0]), 1.0)


def test_single_mode_squeezing_closed_form():
    # constant pairing kappa: <N>(t) = sinh^2(|kappa| t); the cutoff costs ~tanh(r)^20
    kappa, T = 0.4, 1.5
    gen = QuadraticGenerator(np.zeros((1, 1)), np.array([[kappa]]))
    gam, sig = mode_flow(gen, T, 1e-3)
    assert np.isclose(np.linalg.norm(sig) ** 2, np.sinh(kappa * T) ** 2, rtol=1e-9)
    run = evolve_fock(FockState.vacuum(enumerate_basis(1, 20)), gen, T, 1e-3)
    assert np.isclose(mean_number(run.state), np.sinh(kappa * T) ** 2, rtol=1e-4)


def test_mode_flow_symplectic():
    gen = random_generator(3, 1.0, 0.4, 11)
    gam, sig = mode_flow(gen, 2.0, 1e-3)
    assert np.allclose(gam.conj().T @ gam - sig.conj().T @ sig, np.eye(3), atol=1e-9)
    P = sig.T @ gam
    assert np.allclose(P, P.T, atol=1e-9)


def test_quasi_free_two_point_and_wick():
    gen = random_generator(2, 1.0, 0.15, 7)
    b = enumerate_basis(2, 16)
    w = np.array([[1.0, 0.5], [0.5, 2.0]])
    run = evolve_fock(FockState.vacuum(b), gen, 1.0, 1e-3, weights=w, sample_every=100)
    tp = two_point_functions(run.state)
    gam, sig = run.gamma, run.sigma
    assert np.allclose(tp["G"], sig.conj() @ sig.T, atol=1e-8)
    assert np.allclose(tp["P"], gam @ sig.conj().T, atol=1e-8)
    assert np.isclose(mean_number(run.state), np.linalg.norm(sig) ** 2, rtol=1e-6)
    chk = check_wick_quartic(run.state, gam, sig, w)
    assert chk.residual < 1e-4
    assert len(run.samples) == 11
    with pytest.raises(FockError):
        check_wick_quartic(run.state, gam, sig, -w)


def test_cutoff_convergence_monotone():
    gen = random_generator(2, 1.0, 0.15, 7)
    res = []
    for n_max in (8, 12, 16):
        run = evolve_fock(FockState.vacuum(enumerate_basis(2, n_max)), gen, 1.0, 1e-3, sample_every=1000)
        res.append(run.samples[-1].residual)
    assert res[0] > res[1] > res[2]


def test_strict_leakage_raises():
    gen = random_generator(2, 1.0, 0.8, 3)
    with pytest.raises(LeakageError):
        evolve_fock(FockState.vacuum(enumerate_basis(2, 2)), gen, 1.0, 1e-2, strict=True)


def test_moments_and_state_checks():
    b = enumerate_basis(2, 3)
    st0 = FockState.number_state(b, (1, 1))
    assert np.allclose(number_moments(st0, 3), [3, 9, 27])
    with pytest.raises(FockError):
        FockState(b, np.ones(b.D))
    with pytest.raises(FockError):
        evolve_fock(st0, random_generator(2, 1, 0.1, 0), 1.0005, 1e-3)


def test_run_csv(tmp_path):
    run = evolve_fock(FockState.vacuum(enumerate_basis(2, 6)), random_generator(2, 1, 0.1, 0), 0.1, 1e-2,
                      sample_every=5)
    run.write_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "t,leakage,N1,N2,N3,wick_lhs,wick_rhs,residual"
    assert len(lines) == 1 + len(run.samples)


def test_galerkin_generator_is_valid():
    g = make_grid(1, 64, 16.0)
    v = build_bump_potential(g, 0.2, 2.0)
    gen = galerkin_generator(g, gaussian(g, 1.0).values, v, 3)
    assert gen.M == 3
    assert np.allclose(gen.h, gen.h.conj().T)
    assert np.allclose(gen.k, gen.k.T)
