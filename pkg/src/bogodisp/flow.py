"""Forward propagation of the symplectic pair ``(gamma, sigma)`` on a 1-D grid.

The pair solves

    i d/dt gamma =  H_t gamma + K_t sigma
    i d/dt sigma = -conj(K_t) gamma - conj(H_t) sigma

with ``H_t = -Delta + v*|phi_t|^2 + qK1q`` and ``K_t = conj(q) K2 q``, starting
from ``gamma = delta``, ``sigma = 0`` at ``t = s``. Internally the state is kept
as operator matrices (kernel entries times the weight ``w``) stacked as
``Y = [G | S]`` in Fortran order, so ``G = I`` at the anchor.

A step is Strang: half free step (Fourier phases ``exp(-+i dt/2 k^2)`` on the
first index of ``G`` and ``S``), an implicit-midpoint step for the bounded
part with coefficients frozen at ``t + dt/2``, and another half free step.
Consecutive free half steps are merged between samples.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.fft as sfft
from scipy.linalg import circulant

from ._fastops import BoundedOperator
from ._fft import ColumnFFT, aligned_state
from .grid import Field, GridError, GridSpec
from .hartree import INSTABILITY_LIMIT, HartreeInstabilityError, HartreeTrajectory, Potential, mean_field
from .kernels import KernelMatrix, displacement_matrix, matrix_op_norm, project_orthogonal

logger = logging.getLogger(__name__)

MAX_FLOW_N = 2048
MIDPOINT_TOL = 1e-9
MIDPOINT_MAX_ITER = 12
DIAG_COLUMNS = (
    "sigma_hs",
    "sigma_linf_l2",
    "sigma_grad_hs",
    "sigma_lap_hs",
    "eta_hs",
    "gamma_op",
    "defect",
    "M_value",
)


class CoverageError(ValueError):
    pass


@dataclass
class BogoliubovState:
    grid: GridSpec
    Y: np.ndarray  # (n, 2n) operator matrices [G | S], Fortran order
    s: float
    t: float

    @property
    def G(self) -> np.ndarray:
        return self.Y[:, : self.grid.n]

    @property
    def S(self) -> np.ndarray:
        return self.Y[:, self.grid.n :]

    @property
    def gamma(self) -> KernelMatrix:
        return KernelMatrix.from_operator(self.grid, self.G, has_delta=True)

    @property
    def sigma(self) -> KernelMatrix:
        return KernelMatrix.from_operator(self.grid, self.S)

    def copy(self) -> "BogoliubovState":
        return BogoliubovState(self.grid, np.asfortranarray(self.Y.copy()), self.s, self.t)


def _check_grid(grid: GridSpec) -> None:
    if grid.d != 1:
        raise GridError("the pair flow is implemented for d = 1 only")
    if grid.n > MAX_FLOW_N:
        raise GridError(f"n = {grid.n} exceeds the pair-flow limit {MAX_FLOW_N}")


def init_theta(grid: GridSpec, s: float = 0.0) -> BogoliubovState:
    _check_grid(grid)
    n = grid.n
    Y = np.zeros((n, 2 * n), dtype=complex, order="F")
    Y[:, :n] = np.eye(n)
    return BogoliubovState(grid, Y, float(s), float(s))


def _free_phases(grid: GridSpec, tau: float) -> np.ndarray:
    """Column of phases for [G | S]: exp(-i tau k^2) on G, exp(+i tau k^2) on S."""
    return np.exp(-1j * tau * grid.k2)


def free_propagate(Y: np.ndarray, grid: GridSpec, tau: float) -> np.ndarray:
    """Apply the block-diagonal free flow over time ``tau`` (in place, returns Y)."""
    n = grid.n
    ph = _free_phases(grid, tau)[:, None]
    Yh = sfft.fft(Y, axis=0, overwrite_x=True)
    Yh[:, :n] *= ph
    Yh[:, n:] *= ph.conj()
    out = sfft.ifft(Yh, axis=0, overwrite_x=True)
    return np.asfortranarray(out)


def free_propagator_matrix(grid: GridSpec, tau: float) -> np.ndarray:
    """Operator matrix of ``exp(i tau Delta)``: a circulant with first column ifft(phases)."""
    return circulant(np.fft.ifft(_free_phases(grid, tau)))


def _coefficient_phi(traj: HartreeTrajectory, t: float) -> np.ndarray:
    if not traj.covers(t, t):
        raise CoverageError(f"Hartree trajectory [{traj.times[0]}, {traj.times[-1]}] does not cover t={t}")
    phi = np.asarray(traj.phi_at(t), dtype=complex)
    nrm = np.sqrt(traj.grid.w * np.sum(np.abs(phi) ** 2))
    return phi / nrm if nrm > 0 else phi


class FlowIntegrator:
    """Strang stepper bound to a Hartree trajectory and a potential."""

    def __init__(self, grid: GridSpec, traj: HartreeTrajectory, v: Potential, dt: float,
                 tol: float = MIDPOINT_TOL, max_iter: int = MIDPOINT_MAX_ITER):
        _check_grid(grid)
        if traj.grid != grid or v.grid != grid:
            raise GridError("trajectory, potential and state live on different grids")
        if not 0 < dt <= 1e-2 + 1e-15:
            raise ValueError(f"dt must lie in (0, 1e-2], got {dt}")
        self.grid = grid
        self.traj = traj
        self.v = v
        self.dt = float(dt)
        self.tol = tol
        self.max_iter = max_iter
        self.half = _free_phases(grid, 0.5 * dt)[:, None]
        self.full = self.half * self.half
        # phases carrying the 1/n of the inverse transform
        self.half_n = self.half / grid.n
        self.full_n = self.full / grid.n
        self._free = not np.any(v.values)
        self.midpoint_iterations = 0
        self._buf = None
        self._fft = None

    def _phase(self, Yh: np.ndarray, ph: np.ndarray) -> None:
        n = self.grid.n
        Yh[:, :n] *= ph
        Yh[:, n:] *= ph.conj()

    def _buffer(self) -> tuple[np.ndarray, ColumnFFT]:
        if self._buf is None:
            n = self.grid.n
            self._buf = aligned_state(n, 2 * n)
            self._fft = ColumnFFT(self._buf)
        return self._buf, self._fft

    def bounded_step(self, Y: np.ndarray, t_mid: float) -> np.ndarray:
        """Implicit midpoint ``Y <- Y + Z`` with ``Z = -i dt B (Y + Z/2)``, by fixed point, in place.

        The stopping rule uses ``sqrt(n)`` as the size of ``Y``, a lower bound
        for ``||Y||_F`` along the flow since ``||G||_F^2 - ||S||_F^2 = n``.
        """
        if self._free:
            return Y
        phi = _coefficient_phi(self.traj, t_mid)
        if not np.any(phi):
            return Y
        g = self.grid
        B = BoundedOperator(phi, self.v.values, g.w, self.v.R, g.h)
        self.midpoint_iterations += B.midpoint(Y, -1j * self.dt, self.tol, self.max_iter, scale=np.sqrt(g.n))
        return Y

    def advance(self, state: BogoliubovState, nsteps: int) -> BogoliubovState:
        """Apply ``nsteps`` Strang steps; ``state`` is updated in place."""
        if nsteps <= 0:
            return state
        dt = self.dt
        t0 = state.t
        Y, fft = self._buffer()
        Y[...] = state.Y
        fft.forward()
        if self._free:
            self._phase(Y, _free_phases(self.grid, nsteps * dt)[:, None] / self.grid.n)
            fft.backward_unscaled()
        else:
            self._phase(Y, self.half_n)
            fft.backward_unscaled()
            for k in range(nsteps):
                self.bounded_step(Y, t0 + (k + 0.5) * dt)
                fft.forward()
                self._phase(Y, self.half_n if k == nsteps - 1 else self.full_n)
                fft.backward_unscaled()
        state.Y[...] = Y
        state.t = t0 + nsteps * dt
        return state


def flow_step(state: BogoliubovState, t: float, dt: float, traj: HartreeTrajectory, v: Potential) -> BogoliubovState:
    """One Strang step ``t -> t + dt`` returning a new state."""
    if not traj.covers(t, t + dt):
        raise CoverageError(f"Hartree trajectory does not cover [{t}, {t + dt}]")
    new = state.copy()
    new.t = t
    return FlowIntegrator(state.grid, traj, v, dt).advance(new, 1)


def eta_of(state: BogoliubovState) -> KernelMatrix:
    """``gamma(t;s)`` minus the exact free propagator over ``t - s``."""
    U0 = free_propagator_matrix(state.grid, state.t - state.s)
    return KernelMatrix.from_operator(state.grid, state.G - U0)


def symplectic_defect(state: BogoliubovState) -> float:
    """Largest Frobenius norm of the two independent blocks of ``Theta* J Theta - J``.

    The Frobenius norm bounds the operator norm from above; the third block
    is ``-conj`` of the second and has the same norm.
    """
    G, S = state.G, state.S
    n = state.grid.n
    D1 = G.conj().T @ G - S.conj().T @ S
    D1[np.diag_indices(n)] -= 1.0
    P = S.T @ G
    D3 = P - P.T
    return float(max(np.linalg.norm(D1), np.linalg.norm(D3)))


@dataclass
class FlowDiagnostics:
    t: np.ndarray
    series: dict[str, np.ndarray]
    gamma_op_converged: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    def __getitem__(self, key: str) -> np.ndarray:
        if key == "t":
            return self.t
        return self.series[key]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t",) + DIAG_COLUMNS)
            for i, t in enumerate(self.t):
                w.writerow([repr(float(t))] + [repr(float(self.series[c][i])) for c in DIAG_COLUMNS])


def sigma_norms(state: BogoliubovState) -> dict[str, float]:
    S = state.S
    g = state.grid
    Sh = sfft.fft(S, axis=0, norm="ortho")
    col = np.abs(Sh) ** 2
    k2 = g.k2[:, None]
    return {
        "sigma_hs": float(np.linalg.norm(S)),
        "sigma_linf_l2": float(np.sqrt(np.max(np.sum(np.abs(S) ** 2, axis=1)) / g.w)),
        "sigma_grad_hs": float(np.sqrt(np.sum(k2 * col))),
        "sigma_lap_hs": float(np.sqrt(np.sum(k2**2 * col))),
    }


class _Diagnoser:
    def __init__(self, seed: int, defect_every: int):
        self.seed = seed
        self.defect_every = max(1, int(defect_every))
        self.count = 0
        self.x0 = None

    def __call__(self, state: BogoliubovState) -> tuple[dict[str, float], bool]:
        out = sigma_norms(state)
        out["eta_hs"] = float(np.linalg.norm(eta_of(state).operator))
        # gamma* gamma - 1 is positive semidefinite along the flow, so the shifted
        # iteration converges to the top of the spectrum.
        res = matrix_op_norm(state.G, seed=self.seed, shift=1.0, x0=self.x0)
        self.x0 = res.vector
        out["gamma_op"] = res.value
        if self.count % self.defect_every == 0:
            out["defect"] = symplectic_defect(state)
        else:
            out["defect"] = np.nan
        self.count += 1
        return out, res.converged


def bootstrap_m(t: np.ndarray, series: dict[str, Sequence[float]], s: float) -> np.ndarray:
    """Running ``sup`` over ``[max(s, t-1), t]`` of ``sigma_hs + grad + lap + eta_hs + 1``."""
    q = (
        np.asarray(series["sigma_hs"])
        + np.asarray(series["sigma_grad_hs"])
        + np.asarray(series["sigma_lap_hs"])
        + np.asarray(series["eta_hs"])
        + 1.0
    )
    out = np.empty_like(q)
    for i, ti in enumerate(t):
        lo = max(s, ti - 1.0)
        mask = (t >= lo - 1e-12) & (t <= ti + 1e-12)
        out[i] = q[mask].max()
    return out


def _check_instability(t: float, d: dict[str, float]) -> None:
    bad = [k for k, val in d.items() if not np.isnan(val) and (not np.isfinite(val) or abs(val) > INSTABILITY_LIMIT)]
    if bad:
        raise HartreeInstabilityError(f"pair flow unstable at t={t:.6g}: {', '.join(bad)}")


@dataclass
class FlowRun:
    state: BogoliubovState
    diagnostics: FlowDiagnostics
    snapshots: dict[float, BogoliubovState]
    free_residuals: dict[float, dict[str, np.ndarray]]


def _residual(state: BogoliubovState, ref: BogoliubovState, seed: int, x0=None) -> tuple[float, float, np.ndarray]:
    tau = state.t - ref.t
    Yf = free_propagate(ref.Y.copy(order="F"), state.grid, tau)
    n = state.grid.n
    D = state.Y - Yf
    sig = float(np.linalg.norm(D[:, n:]))
    res = matrix_op_norm(D[:, :n], seed=seed, x0=x0)
    return sig, res.value, res.vector


def evolve_theta(
    s: float,
    T: float,
    dt: float,
    traj: HartreeTrajectory,
    v: Potential,
    sample_every: int = 1,
    *,
    snapshot_times: Iterable[float] = (),
    compare_from: Iterable[float] = (),
    seed: int = 12345,
    defect_every: int = 1,
    tol: float = MIDPOINT_TOL,
    t_wrap: float | None = None,
) -> FlowRun:
    """Evolve ``Theta(t; s)`` from ``s`` to ``T`` and record diagnostics.

    ``snapshot_times`` and ``compare_from`` must be sample times. For every
    ``t0`` in ``compare_from`` the run also records ``r(t)``, the distance of
    ``Theta(t; s)`` from the free evolution of ``Theta(t0; s)``, at every later
    sample.
    """
    grid = traj.grid
    if t_wrap is not None and T > t_wrap + 1e-9:
        raise ValueError(f"T={T} exceeds the wrap-around horizon {t_wrap:.6g}")
    nsteps = int(round((T - s) / dt))
    if nsteps <= 0 or abs(s + nsteps * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"T - s = {T - s} is not a positive multiple of dt={dt}")
    if not traj.covers(s, T):
        raise CoverageError(f"Hartree trajectory does not cover [{s}, {T}]")
    sample_every = max(1, int(sample_every))
    integ = FlowIntegrator(grid, traj, v, dt, tol=tol)
    state = init_theta(grid, s)
    diag = _Diagnoser(seed, defect_every)

    def sample_index(t: float) -> int:
        k = (t - s) / dt
        if abs(k - round(k)) > 1e-6 or round(k) % sample_every and round(k) != nsteps:
            raise ValueError(f"time {t} is not a sample time")
        return int(round(k))

    snap_steps = {sample_index(t): float(t) for t in snapshot_times}
    cmp_steps = {sample_index(t): float(t) for t in compare_from}
    refs: dict[float, BogoliubovState] = {}
    warm: dict[float, np.ndarray] = {}
    free_res: dict[float, dict[str, list]] = {t0: {"t": [], "sigma_hs": [], "gamma_op": [], "r": []} for t0 in cmp_steps.values()}
    snapshots: dict[float, BogoliubovState] = {}

    times: list[float] = []
    rows: dict[str, list[float]] = {c: [] for c in DIAG_COLUMNS if c != "M_value"}
    converged: list[bool] = []

    def record(step: int) -> None:
        d, ok = diag(state)
        _check_instability(state.t, d)
        times.append(state.t)
        for k, val in d.items():
            rows[k].append(val)
        converged.append(ok)
        if step in snap_steps:
            snapshots[snap_steps[step]] = state.copy()
        if step in cmp_steps:
            refs[cmp_steps[step]] = state.copy()
        for t0, ref in refs.items():
            sig, gam, warm[t0] = _residual(state, ref, seed, warm.get(t0))
            fr = free_res[t0]
            fr["t"].append(state.t)
            fr["sigma_hs"].append(sig)
            fr["gamma_op"].append(gam)
            fr["r"].append(sig + gam)

    record(0)
    done = 0
    while done < nsteps:
        m = min(sample_every, nsteps - done)
        integ.advance(state, m)
        done += m
        state.t = s + done * dt
        record(done)
    logger.debug("evolve_theta: %d steps, %d midpoint corrections", nsteps, integ.midpoint_iterations)

    t_arr = np.array(times)
    series = {k: np.array(vals) for k, vals in rows.items()}
    series["M_value"] = bootstrap_m(t_arr, series, s)
    return FlowRun(
        state=state,
        diagnostics=FlowDiagnostics(t_arr, series, np.array(converged)),
        snapshots=snapshots,
        free_residuals={t0: {k: np.array(v_) for k, v_ in fr.items()} for t0, fr in free_res.items()},
    )


def free_comparison(state_at_t0: BogoliubovState, later: Sequence[BogoliubovState], seed: int = 12345) -> dict[str, np.ndarray]:
    """Residual of later states against free evolution of ``state_at_t0``."""
    out = {"t": [], "sigma_hs": [], "gamma_op": [], "r": []}
    for st in [state_at_t0, *later]:
        if st.t < state_at_t0.t - 1e-12:
            raise ValueError("later states must not precede t0")
        sig, gam, _ = _residual(st, state_at_t0, seed)
        out["t"].append(st.t)
        out["sigma_hs"].append(sig)
        out["gamma_op"].append(gam)
        out["r"].append(sig + gam)
    return {k: np.array(v) for k, v in out.items()}


class _DenseGenerator:
    """Dense ``2n x 2n`` generator ``[[H, K], [-conj K, -conj H]]`` on operator matrices."""

    def __init__(self, grid: GridSpec, v: Potential):
        self.grid = grid
        self.v = v
        self.lap = circulant(np.fft.ifft(grid.k2))
        self.C = grid.w * displacement_matrix(v.field)

    def __call__(self, phi: np.ndarray) -> np.ndarray:
        g = self.grid
        n = g.n
        V = mean_field(phi, self.v)
        if np.any(phi):
            f = Field(g, phi)
            K1 = KernelMatrix.from_operator(g, self.C * np.outer(phi, phi.conj()))
            K2 = KernelMatrix.from_operator(g, self.C * np.outer(phi, phi))
            K1o = project_orthogonal(K1, f, "qKq").operator
            K2o = project_orthogonal(K2, f, "qbarKq").operator
        else:
            K1o = K2o = np.zeros((n, n), complex)
        H = self.lap + np.diag(V) + K1o
        return np.block([[H, K2o], [-K2o.conj(), -H.conj()]])


def generator_matrix(grid: GridSpec, phi: np.ndarray, v: Potential) -> np.ndarray:
    return _DenseGenerator(grid, v)(phi)


def matrix_ode_oracle(
    grid: GridSpec,
    s: float,
    T: float,
    traj: HartreeTrajectory,
    v: Potential,
    dt: float,
    refine: int = 20,
) -> BogoliubovState:
    """Classical RK4 on the dense linear system ``i Y' = T_t Y`` at step ``dt/refine``."""
    if grid.n > 64:
        raise GridError("the dense oracle is limited to n <= 64")
    n = grid.n
    h = dt / refine
    nsteps = int(round((T - s) / h))
    if abs(s + nsteps * h - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError("T - s must be a multiple of dt/refine")
    X = np.zeros((2 * n, n), complex)
    X[:n] = np.eye(n)

    gen = _DenseGenerator(grid, v)

    def A(t):
        return -1j * gen(_coefficient_phi(traj, t))

    A0 = A(s)
    for k in range(nsteps):
        t = s + k * h
        Am, A1 = A(t + h / 2), A(t + h)
        k1 = A0 @ X
        k2 = Am @ (X + h / 2 * k1)
        k3 = Am @ (X + h / 2 * k2)
        k4 = A1 @ (X + h * k3)
        X = X + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        A0 = A1
    Y = np.asfortranarray(np.concatenate([X[:n], X[n:]], axis=1))
    return BogoliubovState(grid, Y, s, float(T))
