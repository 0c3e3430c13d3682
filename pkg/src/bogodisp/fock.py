"""Exact propagation of few-mode quadratic Hamiltonians on a truncated Fock space.

The generator is ``sum h_ij a*_i a_j + 1/2 sum (k_ij a*_i a*_j + conj(k_ij) a_i a_j)``
restricted to states with at most ``n_max`` particles in total. The vacuum
evolves into a quasi-free state whose correlations are fixed by the
``2M x 2M`` symplectic flow ``i gamma' = h gamma + k sigma``,
``i sigma' = -conj(k) gamma - conj(h) sigma``; the functions here compare the
two descriptions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

MAX_DIM = 200_000
NORM_DRIFT_PER_TIME = 1e-9
LEAKAGE_TOL = 1e-6


class FockError(ValueError):
    pass


def _compositions(N: int, M: int):
    """Occupation tuples of total ``N`` over ``M`` modes in descending lexicographic order."""
    if M == 1:
        yield (N,)
        return
    for first in range(N, -1, -1):
        for rest in _compositions(N - first, M - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class FockBasis:
    M: int
    n_max: int
    states: tuple[tuple[int, ...], ...]

    @property
    def D(self) -> int:
        return len(self.states)

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def occupations(self) -> np.ndarray:
        return np.array(self.states, dtype=np.int64).reshape(self.D, self.M)

    @cached_property
    def total(self) -> np.ndarray:
        return self.occupations.sum(axis=1)

    @cached_property
    def annihilators(self) -> list[sp.csr_matrix]:
        """Sparse ``a_i``; annihilation never leaves the truncated space."""
        ops = []
        for i in range(self.M):
            rows, cols, vals = [], [], []
            for col, s in enumerate(self.states):
                if s[i] > 0:
                    t = s[:i] + (s[i] - 1,) + s[i + 1 :]
                    rows.append(self.index[t])
                    cols.append(col)
                    vals.append(np.sqrt(s[i]))
            ops.append(sp.csr_matrix((vals, (rows, cols)), shape=(self.D, self.D)))
        return ops

    @cached_property
    def creators(self) -> list[sp.csr_matrix]:
        """``P a*_i P``: creation with out-of-cutoff images dropped."""
        return [ai.T.tocsr() for ai in self.annihilators]


def basis_dimension(M: int, n_max: int) -> int:
    return comb(M + n_max, M)


def enumerate_basis(M: int, n_max: int) -> FockBasis:
    """Graded lexicographic basis: by total particle number, then descending lex."""
    if not 1 <= M <= 4:
        raise FockError(f"number of modes must lie in [1, 4], got {M}")
    if not 0 <= n_max <= 20:
        raise FockError(f"cutoff n_max must lie in [0, 20], got {n_max}")
    D = basis_dimension(M, n_max)
    if D > MAX_DIM:
        raise FockError(f"Fock dimension {D} exceeds {MAX_DIM}")
    states = tuple(s for N in range(n_max + 1) for s in _compositions(N, M))
    return FockBasis(M, n_max, states)


@dataclass(frozen=True)
class QuadraticGenerator:
    h: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        k = np.asarray(self.k, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1] or k.shape != h.shape:
            raise FockError("h and k must be square matrices of equal size")
        if np.max(np.abs(h - h.conj().T), initial=0.0) > 1e-12:
            raise FockError("one-body part h must be self-adjoint")
        if np.max(np.abs(k - k.T), initial=0.0) > 1e-12:
            raise FockError("pairing part k must be symmetric")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "k", k)

    @property
    def M(self) -> int:
        return self.h.shape[0]


GeneratorOfT = Callable[[float], QuadraticGenerator]


def _as_generator_of_t(gen) -> GeneratorOfT:
    if isinstance(gen, QuadraticGenerator):
        return lambda t: gen
    return gen


def build_generator_matrix(gen: QuadraticGenerator, basis: FockBasis) -> sp.csr_matrix:
    """Sparse ``P H P`` on the truncated space (self-adjoint by construction).

    Pair creations that would exceed the cutoff are dropped; they are the
    leakage channels tracked by :func:`evolve_fock`.
    """
    if gen.M != basis.M:
        raise FockError(f"generator has {gen.M} modes, basis has {basis.M}")
    a = basis.annihilators
    ad = basis.creators
    H = sp.csr_matrix((basis.D, basis.D), dtype=complex)
    for i in range(basis.M):
        for j in range(basis.M):
            if gen.h[i, j] != 0:
                H = H + gen.h[i, j] * (ad[i] @ a[j])
            if gen.k[i, j] != 0:
                H = H + 0.5 * gen.k[i, j] * (ad[i] @ ad[j]) + 0.5 * np.conj(gen.k[i, j]) * (a[i] @ a[j])
    return H.tocsr()


def apply_generator(gen: QuadraticGenerator, basis: FockBasis, psi: np.ndarray) -> np.ndarray:
    """Matrix-free ``P H P psi``, equal to ``build_generator_matrix(gen, basis) @ psi``."""
    a = basis.annihilators
    ad = basis.creators
    ap = [ai @ psi for ai in a]
    adp = [ci @ psi for ci in ad]
    out = np.zeros_like(psi, dtype=complex)
    for i in range(basis.M):
        inner = sum(gen.h[i, j] * ap[j] + 0.5 * gen.k[i, j] * adp[j] for j in range(basis.M))
        out += ad[i] @ inner
        out += a[i] @ sum(0.5 * np.conj(gen.k[i, j]) * ap[j] for j in range(basis.M))
    return out


@dataclass
class FockState:
    basis: FockBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape != (self.basis.D,):
            raise FockError("amplitude vector does not match the basis")
        nrm = np.linalg.norm(self.amplitudes)
        if nrm > 1 + 1e-9:
            raise FockError(f"state norm {nrm} exceeds 1")

    @classmethod
    def vacuum(cls, basis: FockBasis) -> "FockState":
        psi = np.zeros(basis.D, complex)
        psi[0] = 1.0
        return cls(basis, psi)

    @classmethod
    def number_state(cls, basis: FockBasis, occupation: Sequence[int]) -> "FockState":
        psi = np.zeros(basis.D, complex)
        psi[basis.index[tuple(occupation)]] = 1.0
        return cls(basis, psi)


def two_point_functions(state: FockState) -> dict[str, np.ndarray]:
    """``G[i, j] = <a*_j a_i>`` and ``P[i, j] = <a_i a_j>``."""
    a = state.basis.annihilators
    psi = state.amplitudes
    ap = np.array([ai @ psi for ai in a])  # rows a_i psi
    G = ap.conj() @ ap.T  # G[j, i] = <a_j psi, a_i psi>, transposed below
    P = np.array([[np.vdot(psi, ai @ (aj @ psi)) for aj in a] for ai in a])
    return {"G": G.T, "P": P}


def number_moments(state: FockState, kmax: int = 3) -> np.ndarray:
    """``<(N + 1)^k>`` for ``k = 1..kmax``."""
    prob = np.abs(state.amplitudes) ** 2
    N1 = state.basis.total + 1.0
    return np.array([float(np.sum(prob * N1**k)) for k in range(1, kmax + 1)])


def mean_number(state: FockState) -> float:
    return float(np.sum(np.abs(state.amplitudes) ** 2 * state.basis.total))


@dataclass(frozen=True)
class WickCheck:
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs) / (abs(self.lhs) + 1e-15)


def wick_rhs(gamma: np.ndarray, sigma: np.ndarray, weights: np.ndarray) -> float:
    """Quasi-free prediction of ``sum w_ij <a*_j a*_i a_j a_i>`` from the blocks.

    With ``gamma_i``, ``sigma_i`` the conjugated rows of the blocks, the
    expectation is ``|<s_j, s_i>|^2 + |s_i|^2 |s_j|^2 + <s_i, g_j><g_i, s_j>``.
    """
    gv = gamma.conj()
    sv = sigma.conj()
    M = gamma.shape[0]
    total = 0.0
    for i in range(M):
        for j in range(M):
            t1 = abs(np.vdot(sv[j], sv[i])) ** 2
            t2 = np.vdot(sv[i], sv[i]).real * np.vdot(sv[j], sv[j]).real
            t3 = np.vdot(sv[i], gv[j]) * np.vdot(gv[i], sv[j])
            total += weights[i, j] * (t1 + t2 + t3.real)
    return float(total)


def wick_lhs(state: FockState, weights: np.ndarray) -> float:
    a = state.basis.annihilators
    psi = state.amplitudes
    ap = [ai @ psi for ai in a]
    total = 0.0
    for i in range(len(a)):
        for j in range(len(a)):
            if weights[i, j]:
                v = a[j] @ ap[i]
                total += weights[i, j] * float(np.vdot(v, v).real)
    return total


def check_wick_quartic(state: FockState, gamma: np.ndarray, sigma: np.ndarray, weights: np.ndarray) -> WickCheck:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise FockError("Wick weights must be nonnegative")
    return WickCheck(wick_lhs(state, w), wick_rhs(gamma, sigma, w))


def _rk4(f, y, t, dt):
    k1 = f(t, y)
    k2 = f(t + dt / 2, y + dt / 2 * k1)
    k3 = f(t + dt / 2, y + dt / 2 * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def mode_flow_rhs(gen: QuadraticGenerator, X: np.ndarray) -> np.ndarray:
    M = gen.M
    g, s = X[:M], X[M:]
    return -1j * np.vstack([gen.h @ g + gen.k @ s, -gen.k.conj() @ g - gen.h.conj() @ s])


def mode_flow(generator_of_t, T: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """RK4 for the ``2M x 2M`` symplectic flow from ``(1, 0)`` at ``t = 0``."""
    gen_t = _as_generator_of_t(generator_of_t)
    M = gen_t(0.0).M
    X = np.vstack([np.eye(M), np.zeros((M, M))]).astype(complex)
    nsteps = int(round(T / dt))
    for n in range(nsteps):
        X = _rk4(lambda t, Y: mode_flow_rhs(gen_t(t), Y), X, n * dt, dt)
    return X[:M], X[M:]


@dataclass(frozen=True)
class FockSample:
    t: float
    leakage: float
    moments: np.ndarray
    wick_lhs: float
    wick_rhs: float

    @property
    def residual(self) -> float:
        return abs(self.wick_lhs - self.wick_rhs) / (abs(self.wick_lhs) + 1e-15)


@dataclass
class FockRun:
    state: FockState
    gamma: np.ndarray
    sigma: np.ndarray
    leakage: float
    norm_drift: float
    samples: list[FockSample] = field(default_factory=list)
    knorm_integral: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def accepted(self) -> bool:
        return self.leakage <= LEAKAGE_TOL

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t", "leakage", "N1", "N2", "N3", "wick_lhs", "wick_rhs", "residual"))
            for s in self.samples:
                m = list(s.moments[:3]) + [np.nan] * (3 - len(s.moments[:3]))
                w.writerow([repr(float(x)) for x in (s.t, s.leakage, *m, s.wick_lhs, s.wick_rhs, s.residual)])


class LeakageError(RuntimeError):
    pass


def evolve_fock(
    state: FockState,
    generator_of_t,
    T: float,
    dt: float,
    *,
    weights: np.ndarray | None = None,
    sample_every: int = 0,
    strict: bool = False,
) -> FockRun:
    """RK4 on the truncated space alongside the matching mode flow.

    ``leakage`` is ``E^2`` with ``E = int ||(1 - P) H P psi|| dt``, the Duhamel
    bound on the distance between the truncated and the untruncated
    evolution; it is evaluated on a basis with two more particles, which is
    a superset of the truncated one. With ``strict`` a leakage above
    ``LEAKAGE_TOL`` raises.
    """
    gen_t = _as_generator_of_t(generator_of_t)
    basis = state.basis
    ext = enumerate_basis(basis.M, min(basis.n_max + 2, 20)) if basis.n_max + 2 <= 20 else _extended(basis)
    D = basis.D
    nsteps = int(round(T / dt))
    if nsteps < 1 or abs(nsteps * dt - T) > 1e-9 * max(T, 1):
        raise FockError(f"T={T} is not a positive multiple of dt={dt}")
    M = basis.M
    w = np.ones((M, M)) if weights is None else np.asarray(weights, float)
    cache: dict[float, QuadraticGenerator] = {}

    def gen(t):
        if t not in cache:
            if len(cache) > 4:
                cache.clear()
            cache[t] = gen_t(t)
        return cache[t]

    pad = np.zeros(ext.D, complex)

    def leak_rate(t, psi):
        pad[:D] = psi
        return float(np.linalg.norm(apply_generator(gen(t), ext, pad)[D:]))

    psi = state.amplitudes.astype(complex).copy()
    X = np.vstack([np.eye(M), np.zeros((M, M))]).astype(complex)
    n0 = np.linalg.norm(psi)
    E = 0.0
    r_prev = leak_rate(0.0, psi)
    kint = [0.0]
    kn_prev = np.linalg.norm(gen(0.0).k)
    samples = []

    def sample(t, psi, X):
        st = FockState(basis, psi / max(np.linalg.norm(psi), 1e-300) * min(np.linalg.norm(psi), 1.0))
        gam, sig = X[:M], X[M:]
        samples.append(FockSample(t, E * E, number_moments(st, 3), wick_lhs(st, w), wick_rhs(gam, sig, w)))

    if sample_every:
        sample(0.0, psi, X)
    for n in range(nsteps):
        t = n * dt
        psi = _rk4(lambda tt, y: -1j * apply_generator(gen(tt), basis, y), psi, t, dt)
        X = _rk4(lambda tt, Y: mode_flow_rhs(gen(tt), Y), X, t, dt)
        r = leak_rate(t + dt, psi)
        E += 0.5 * dt * (r_prev + r)
        r_prev = r
        kn = np.linalg.norm(gen(t + dt).k)
        kint.append(kint[-1] + 0.5 * dt * (kn_prev + kn))
        kn_prev = kn
        if sample_every and ((n + 1) % sample_every == 0 or n == nsteps - 1):
            sample(t + dt, psi, X)

    drift = abs(np.linalg.norm(psi) - n0)
    if drift > NORM_DRIFT_PER_TIME * max(T, 1.0):
        raise FockError(f"norm drift {drift:.3e} exceeds the RK4 guard; reduce dt")
    leakage = E * E
    if strict and leakage > LEAKAGE_TOL:
        raise LeakageError(f"leakage {leakage:.3e} exceeds {LEAKAGE_TOL}; increase n_max")
    psi = psi / max(np.linalg.norm(psi) / n0, 1.0)
    return FockRun(FockState(basis, psi), X[:M], X[M:], leakage, drift, samples, np.array(kint))


def _extended(basis: FockBasis) -> FockBasis:
    """Basis with two more particles, allowed past the public cutoff limit."""
    states = tuple(s for N in range(basis.n_max + 3) for s in _compositions(N, basis.M))
    return FockBasis(basis.M, basis.n_max + 2, states)


def gronwall_constants(t: np.ndarray, moments: np.ndarray, knorm_integral: np.ndarray) -> np.ndarray:
    """Smallest ``c_k`` with ``<(N+1)^k>(t) <= <(N+1)^k>(0) exp(c_k int_0^t ||k||_F)``."""
    m = np.asarray(moments)
    I = np.asarray(knorm_integral)
    ok = I > 0
    ratio = np.log(m[ok] / m[0])
    return np.max(ratio / I[ok, None], axis=0) if ok.any() else np.zeros(m.shape[1])


def random_generator(M: int, scale_h: float, scale_k: float, seed: int) -> QuadraticGenerator:
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    B = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    h = scale_h * (A + A.conj().T) / 2
    k = scale_k * (B + B.T) / 2
    return QuadraticGenerator(h, k)


def galerkin_generator(grid, phi: np.ndarray, v, modes: int) -> QuadraticGenerator:
    """Project ``H = -Delta + v*|phi|^2 + qK1q`` and ``K = conj(q) K2 q`` onto the lowest plane waves.

    Modes are ordered by ``|k|`` (ties: nonnegative first); ``e_m(x) =
    exp(i k_m x) / sqrt(L)``. ``h_ab = <e_a, H e_b>`` and ``k_ab = <e_a, K conj(e_b)>``,
    so that the pairing term matches ``1/2 int K(x;y) a*_x a*_y``.
    """
    from .grid import Field
    from .hartree import mean_field
    from .kernels import build_projected_kernels

    ks = grid.k
    order = sorted(range(grid.n), key=lambda i: (abs(ks[i]), ks[i] < 0))[:modes]
    E = np.exp(1j * np.outer(grid.x, ks[order])) / np.sqrt(grid.L)  # columns e_m
    f = Field(grid, phi)
    K1, K2 = build_projected_kernels(f, v)
    V = mean_field(phi, v)
    w = grid.w
    lapE = E * (ks[order] ** 2)[None, :]
    HE = lapE + V[:, None] * E + K1.operator @ E
    h = w * E.conj().T @ HE
    k = w * E.conj().T @ (K2.operator @ E.conj())
    h = (h + h.conj().T) / 2
    k = (k + k.T) / 2
    return QuadraticGenerator(h, k)
