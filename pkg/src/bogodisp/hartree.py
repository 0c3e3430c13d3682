"""Strang split-step solver for i phi_t = (-Delta + v*|phi|^2) phi."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .grid import Field, GridError, GridSpec, convolve, field_norms

logger = logging.getLogger(__name__)

INSTABILITY_LIMIT = 1e6


class HartreeInstabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class Potential:
    """Nonnegative even C^2 bump ``g (1 - |x|^2/R^2)^3`` on ``|x| <= R``."""

    field: Field
    g: float
    R: float

    @property
    def grid(self) -> GridSpec:
        return self.field.grid

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    def l1(self) -> float:
        return float(self.grid.w * np.sum(np.abs(self.values)))

    def l2(self) -> float:
        return float(np.sqrt(self.grid.w * np.sum(self.values**2)))

    def grad_l2(self) -> float:
        """Spectral ||grad v||_2."""
        g = self.grid
        vhat = sfft.fftn(self.values, norm="ortho")
        return float(np.sqrt(g.w * np.sum(g.k2 * np.abs(vhat) ** 2)))

    def lap_l2(self) -> float:
        g = self.grid
        vhat = sfft.fftn(self.values, norm="ortho")
        return float(np.sqrt(g.w * np.sum(g.k2**2 * np.abs(vhat) ** 2)))


def bump_profile(r2: np.ndarray, g: float, R: float) -> np.ndarray:
    u = 1.0 - r2 / (R * R)
    return np.where(u > 0, g * np.clip(u, 0, None) ** 3, 0.0)


def build_bump_potential(grid: GridSpec, g: float, R: float) -> Potential:
    if g < 0:
        raise ValueError(f"coupling g must be nonnegative, got {g}")
    if not 0 < R < grid.L / 4:
        raise GridError(f"support radius R={R} must lie in (0, L/4) for L={grid.L}")
    return Potential(Field(grid, bump_profile(grid.r2, g, R)), float(g), float(R))


def zero_potential(grid: GridSpec) -> Potential:
    return Potential(Field(grid, np.zeros(grid.shape)), 0.0, grid.L / 8)


def free_gaussian(x: np.ndarray, t: float, a: float = 1.0) -> np.ndarray:
    """Exact line solution of i u_t = -u_xx from the normalised Gaussian of width a (d=1)."""
    s = a * a + 2j * t
    return (np.pi ** -0.25) * np.sqrt(a) / np.sqrt(s) * np.exp(-(x**2) / (2 * s))


def free_gaussian_periodic(grid: GridSpec, t: float, a: float = 1.0, images: int = 4) -> np.ndarray:
    """Periodisation of :func:`free_gaussian`, the exact solution on the box."""
    x = grid.x
    return sum(free_gaussian(x + m * grid.L, t, a) for m in range(-images, images + 1))


def mean_field(phi: np.ndarray, v: Potential) -> np.ndarray:
    """Hartree potential ``v * |phi|^2``."""
    return convolve(v.field, Field(v.grid, np.abs(phi) ** 2)).values


def conserved_quantities(phi: Field, v: Potential) -> dict[str, float]:
    g = phi.grid
    rho = np.abs(phi.values) ** 2
    phat = sfft.fftn(phi.values, norm="ortho")
    kinetic = g.w * np.sum(g.k2 * np.abs(phat) ** 2)
    interaction = 0.5 * g.w * np.sum(mean_field(phi.values, v) * rho)
    return {"mass": float(g.w * np.sum(rho)), "energy": float(kinetic + interaction)}


class _Stepper:
    """Strang stepping with merged kinetic half steps between synchronisation points."""

    def __init__(self, grid: GridSpec, v: Potential, dt: float):
        self.grid = grid
        self.v = v
        self.dt = dt
        self.half = np.exp(-0.5j * dt * grid.k2)
        self.full = self.half * self.half
        self._vhat = sfft.fftn(np.fft.ifftshift(v.values)) * grid.w
        self._free = not np.any(v.values)

    def potential(self, phi: np.ndarray) -> np.ndarray:
        rho_hat = sfft.fftn(np.abs(phi) ** 2)
        return sfft.ifftn(self._vhat * rho_hat).real

    def advance(self, phi: np.ndarray, nsteps: int) -> np.ndarray:
        """Apply ``nsteps`` Strang steps; phi is in position space on entry and exit."""
        if nsteps == 0:
            return phi
        if self._free:
            phat = sfft.fftn(phi) * self.full**nsteps
            return sfft.ifftn(phat)
        phat = sfft.fftn(phi) * self.half
        for i in range(nsteps):
            phi = sfft.ifftn(phat)
            phi = phi * np.exp(-1j * self.dt * self.potential(phi))
            phat = sfft.fftn(phi)
            phat *= self.half if i == nsteps - 1 else self.full
        return sfft.ifftn(phat)


def strang_order(phi0: Field, v: Potential, T: float, dt: float) -> float:
    """Observed order ``log2(|u_dt - u_dt/2| / |u_dt/2 - u_dt/4|)`` at time ``T``."""
    ends = []
    for k in (1, 2, 4):
        h = dt / k
        ends.append(_Stepper(phi0.grid, v, h).advance(np.asarray(phi0.values, complex), int(round(T / h))))
    e1 = np.linalg.norm(ends[0] - ends[1])
    e2 = np.linalg.norm(ends[1] - ends[2])
    if e2 == 0.0:
        return float("inf")
    return float(np.log2(e1 / e2))


def hartree_step(phi: Field, t: float, dt: float, v: Potential) -> Field:
    """One Strang step ``t -> t + dt`` (the generator is autonomous, t is informational)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return Field(phi.grid, _Stepper(phi.grid, v, dt).advance(phi.values, 1))


@dataclass
class HartreeTrajectory:
    grid: GridSpec
    times: np.ndarray
    states: np.ndarray  # (n_samples,) + grid.shape
    diagnostics: dict[str, np.ndarray] = field(default_factory=dict)
    dt: float = 0.0

    def state(self, i: int) -> Field:
        return Field(self.grid, self.states[i])

    def phi_at(self, t: float) -> np.ndarray:
        """Linear interpolation between stored samples."""
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-9:
            raise ValueError(f"time {t} outside trajectory coverage [{times[0]}, {times[-1]}]")
        i = int(np.searchsorted(times, t, side="right")) - 1
        i = min(max(i, 0), len(times) - 2)
        t0, t1 = times[i], times[i + 1]
        lam = (t - t0) / (t1 - t0)
        if abs(lam) < 1e-12:
            return self.states[i]
        if abs(lam - 1) < 1e-12:
            return self.states[i + 1]
        return (1 - lam) * self.states[i] + lam * self.states[i + 1]

    def covers(self, t0: float, t1: float) -> bool:
        return self.times[0] - 1e-12 <= t0 and t1 <= self.times[-1] + 1e-9

    def write_csv(self, path: str | Path) -> None:
        cols = ("mass", "energy", "linf", "h1", "h2")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t",) + cols)
            for i, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(float(self.diagnostics[c][i])) for c in cols])


def _diagnose(phi: Field, v: Potential) -> dict[str, float]:
    norms = field_norms(phi)
    cq = conserved_quantities(phi, v)
    return {"mass": cq["mass"], "energy": cq["energy"], "linf": norms["linf"], "h1": norms["h1"], "h2": norms["h2"]}


def hartree_evolve(
    phi0: Field,
    v: Potential,
    T: float,
    dt: float,
    sample_every: int = 1,
    store_states: bool = True,
) -> HartreeTrajectory:
    """Evolve to ``T`` recording diagnostics every ``sample_every`` steps.

    ``T`` must be an integer multiple of ``dt`` (to 1e-9 relative).
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if not 0 < dt <= 1e-2 + 1e-15:
        raise ValueError(f"dt must lie in (0, 1e-2], got {dt}")
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * T:
        raise ValueError(f"T={T} is not a multiple of dt={dt}")
    sample_every = max(1, int(sample_every))

    stepper = _Stepper(phi0.grid, v, dt)
    phi = np.asarray(phi0.values, dtype=complex)
    times = [0.0]
    states = [phi.copy()] if store_states else []
    diag = {k: [val] for k, val in _diagnose(phi0, v).items()}
    done = 0
    while done < nsteps:
        m = min(sample_every, nsteps - done)
        phi = stepper.advance(phi, m)
        done += m
        f = Field(phi0.grid, phi)
        d = _diagnose(f, v)
        bad = [k for k in ("mass", "linf", "h1", "h2") if not np.isfinite(d[k]) or d[k] > INSTABILITY_LIMIT]
        if bad:
            raise HartreeInstabilityError(
                f"instability at t={done * dt:.6g}: {', '.join(f'{k}={d[k]:.3e}' for k in bad)}"
            )
        times.append(done * dt)
        if store_states:
            states.append(phi.copy())
        for k, val in d.items():
            diag[k].append(val)
    logger.debug("hartree_evolve: %d steps, %d samples", nsteps, len(times))
    return HartreeTrajectory(
        grid=phi0.grid,
        times=np.array(times),
        states=np.array(states) if store_states else np.empty((0,) + phi0.grid.shape, complex),
        diagnostics={k: np.array(vals) for k, vals in diag.items()},
        dt=dt,
    )
