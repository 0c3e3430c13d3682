"""Two-point kernels on a 1-D grid and the norms used to bound them.

A kernel ``A(x;y)`` is stored by its samples ``entries[i, j] = A(x_i; x_j)``.
It acts as ``(A f)(x_i) = w * sum_j A(x_i; x_j) f(x_j)``, so the matrix that
represents the operator on the weighted l2 space is ``w * entries``; operator
and Hilbert-Schmidt norms are the spectral and Frobenius norms of that
matrix. The grid delta is ``identity / w``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import scipy.fft as sfft

from .grid import Field, GridError, GridSpec

POWER_TOL = 1e-8
POWER_MAX_ITER = 10_000
DEFAULT_SEED = 12345


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelMatrix:
    grid: GridSpec
    entries: np.ndarray
    has_delta: bool = False

    def __post_init__(self):
        if self.grid.d != 1:
            raise KernelError("pair kernels are only supported in d = 1")
        n = self.grid.n
        if self.entries.shape != (n, n):
            raise KernelError(f"kernel entries must be {n}x{n}, got {self.entries.shape}")

    @classmethod
    def from_operator(cls, grid: GridSpec, matrix: np.ndarray, has_delta: bool = False) -> "KernelMatrix":
        return cls(grid, matrix / grid.w, has_delta)

    @classmethod
    def delta(cls, grid: GridSpec) -> "KernelMatrix":
        return cls(grid, np.eye(grid.n, dtype=complex) / grid.w, True)

    @property
    def w(self) -> float:
        return self.grid.w

    @property
    def operator(self) -> np.ndarray:
        return self.w * self.entries

    def apply(self, f: np.ndarray | Field) -> np.ndarray:
        vals = f.values if isinstance(f, Field) else f
        return self.w * (self.entries @ vals)

    def compose(self, other: "KernelMatrix") -> "KernelMatrix":
        return KernelMatrix(self.grid, self.w * (self.entries @ other.entries), self.has_delta and other.has_delta)

    def adjoint(self) -> "KernelMatrix":
        return KernelMatrix(self.grid, self.entries.conj().T, self.has_delta)

    def transpose(self) -> "KernelMatrix":
        return KernelMatrix(self.grid, self.entries.T, self.has_delta)

    def conj(self) -> "KernelMatrix":
        return KernelMatrix(self.grid, self.entries.conj(), self.has_delta)

    def __sub__(self, other: "KernelMatrix") -> "KernelMatrix":
        return KernelMatrix(self.grid, self.entries - other.entries, self.has_delta or other.has_delta)


def rank_one(f: np.ndarray, g: np.ndarray, grid: GridSpec) -> KernelMatrix:
    """Kernel ``f(x) conj(g(y))``."""
    return KernelMatrix(grid, np.outer(f, np.conj(g)))


def displacement_matrix(v: Field) -> np.ndarray:
    """``V[i, j] = v(x_i - x_j)`` with periodic wrap."""
    n = v.grid.n
    v0 = np.fft.ifftshift(v.values)
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return v0[idx]


def _check_same_grid(phi: Field, v: Field) -> None:
    if phi.grid != v.grid:
        raise GridError("phi and v live on different grids")


def _potential_field(v) -> Field:
    return v.field if hasattr(v, "field") else v


def build_k1(phi: Field, v) -> KernelMatrix:
    """``K1(x;y) = v(x-y) phi(x) conj(phi(y))``."""
    vf = _potential_field(v)
    _check_same_grid(phi, vf)
    p = phi.values
    return KernelMatrix(phi.grid, displacement_matrix(vf) * np.outer(p, p.conj()))


def build_k2(phi: Field, v) -> KernelMatrix:
    """``K2(x;y) = v(x-y) phi(x) phi(y)``."""
    vf = _potential_field(v)
    _check_same_grid(phi, vf)
    p = phi.values
    return KernelMatrix(phi.grid, displacement_matrix(vf) * np.outer(p, p))


def project_orthogonal(K: KernelMatrix, phi: Field, side: str = "qKq", norm_tol: float = 1e-8) -> KernelMatrix:
    """``q K q`` or ``conj(q) K q`` with ``q = 1 - |phi><phi|``, via rank-one updates."""
    g = K.grid
    p = phi.values
    nrm = np.sqrt(g.w * np.sum(np.abs(p) ** 2))
    if abs(nrm - 1) > norm_tol:
        raise KernelError(f"project_orthogonal needs a normalised phi, got ||phi|| = {nrm:.12g}")
    w = g.w
    A = K.entries
    # right factor q: A q = A - w (A phi) phi^*
    Ap = A @ p
    A = A - w * np.outer(Ap, p.conj())
    if side == "qKq":
        left = p
    elif side in ("qbarKq", "q̄Kq"):
        left = p.conj()
    else:
        raise KernelError(f"side must be 'qKq' or 'qbarKq', got {side!r}")
    # left factor: (1 - w l l^*) A
    lA = left.conj() @ A
    A = A - w * np.outer(left, lA)
    return KernelMatrix(g, A, K.has_delta)


def build_projected_kernels(phi: Field, v) -> tuple[KernelMatrix, KernelMatrix]:
    """Return ``(K1~, K2~) = (q K1 q, conj(q) K2 q)``."""
    return (
        project_orthogonal(build_k1(phi, v), phi, "qKq"),
        project_orthogonal(build_k2(phi, v), phi, "qbarKq"),
    )


@dataclass
class PowerIterationResult:
    value: float
    converged: bool
    iterations: int
    residual: float
    vector: np.ndarray = field(repr=False, default=None)

    def __float__(self) -> float:
        return self.value


def power_iteration(
    apply: Callable[[np.ndarray], np.ndarray],
    n: int,
    tol: float = POWER_TOL,
    max_iter: int = POWER_MAX_ITER,
    seed: int = DEFAULT_SEED,
    dtype=complex,
    x0: np.ndarray | None = None,
) -> PowerIterationResult:
    """Largest eigenvalue of a positive semidefinite Hermitian map given by ``apply``.

    The stopping rule compares successive Rayleigh quotients relative to the
    current estimate; ``residual`` is ``||B x - lam x|| / lam``. ``x0`` warm
    starts the iteration, e.g. from the previous sample of a slowly varying map.
    """
    if x0 is not None and np.linalg.norm(x0) > 0:
        x = np.array(x0, dtype=complex)
    else:
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(n) + (1j * rng.standard_normal(n) if np.issubdtype(dtype, np.complexfloating) else 0)
    x /= np.linalg.norm(x)
    lam_old = None
    lam = 0.0
    y = apply(x)
    for it in range(1, max_iter + 1):
        lam = float(np.real(np.vdot(x, y)))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return PowerIterationResult(0.0, True, it, 0.0, x)
        if lam_old is not None and abs(lam - lam_old) <= tol * abs(lam):
            res = np.linalg.norm(y - lam * x) / max(abs(lam), 1e-300)
            return PowerIterationResult(lam, True, it, float(res), x)
        lam_old = lam
        x = y / ny
        y = apply(x)
    res = np.linalg.norm(y - lam * x) / max(abs(lam), 1e-300)
    return PowerIterationResult(lam, False, max_iter, float(res), x)


def matrix_op_norm(
    M: np.ndarray,
    tol: float = POWER_TOL,
    max_iter: int = POWER_MAX_ITER,
    seed: int = DEFAULT_SEED,
    shift: float = 0.0,
    x0: np.ndarray | None = None,
) -> PowerIterationResult:
    """Spectral norm of ``M`` by power iteration on ``M^* M - shift``.

    A shift of 1 is meant for near-isometries, whose Gram matrix has a dense
    cluster at 1 that stalls the unshifted iteration; the shifted Gram
    matrix must stay positive semidefinite.
    """
    MH = M.conj().T
    if shift:
        res = power_iteration(lambda x: MH @ (M @ x) - shift * x, M.shape[1], tol, max_iter, seed, x0=x0)
        lam = max(res.value + shift, 0.0)
    else:
        res = power_iteration(lambda x: MH @ (M @ x), M.shape[1], tol, max_iter, seed, x0=x0)
        lam = max(res.value, 0.0)
    res.value = float(np.sqrt(lam))
    return res


def op_norm(K: KernelMatrix, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER, seed: int = DEFAULT_SEED,
            shift: float = 0.0) -> PowerIterationResult:
    return matrix_op_norm(K.operator, tol, max_iter, seed, shift)


def hs_norm(K: KernelMatrix) -> float:
    if K.has_delta:
        raise KernelError("kernel carries a grid delta; its HS norm is not grid-stable")
    return float(K.w * np.linalg.norm(K.entries))


def linf_l2_norm(K: KernelMatrix) -> float:
    """``sup_x ||A(x, .)||_2``."""
    rows = np.sqrt(K.w * np.sum(np.abs(K.entries) ** 2, axis=1))
    return float(rows.max())


def kernel_derivative_norms(K: KernelMatrix) -> dict[str, float]:
    """HS norms of the first-argument gradient and Laplacian of ``K``."""
    if K.has_delta:
        raise KernelError("kernel_derivative_norms: kernel contains a discrete delta")
    k = K.grid.k
    # unitary along x keeps the Frobenius norm
    Ahat = sfft.fft(K.entries, axis=0, norm="ortho")
    col = np.abs(Ahat) ** 2
    grad = K.w * np.sqrt(np.sum(k[:, None] ** 2 * col))
    lap = K.w * np.sqrt(np.sum(k[:, None] ** 4 * col))
    return {"grad_hs": float(grad), "lap_hs": float(lap)}


@dataclass(frozen=True)
class KernelNormReport:
    t: float
    op: float
    hs: float
    linf_l2: float
    grad_hs: float
    lap_hs: float


def kernel_norm_report(K: KernelMatrix, t: float = 0.0, seed: int = DEFAULT_SEED) -> KernelNormReport:
    d = kernel_derivative_norms(K)
    return KernelNormReport(t, op_norm(K, seed=seed).value, hs_norm(K), linf_l2_norm(K), d["grad_hs"], d["lap_hs"])


def write_norm_reports(path: str | Path, reports: Iterable[KernelNormReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t", "op", "hs", "linf_l2", "grad_hs", "lap_hs"))
        for r in reports:
            w.writerow([repr(float(x)) for x in (r.t, r.op, r.hs, r.linf_l2, r.grad_hs, r.lap_hs)])


@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1 + self.slack)

    @property
    def margin(self) -> float:
        return self.rhs * (1 + self.slack) - self.lhs


@dataclass(frozen=True)
class KernelCertificate:
    label: str
    checks: tuple[BoundCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def verify_kernel_bounds(
    Kt: KernelMatrix,
    v,
    phi: Field,
    K_unprojected: KernelMatrix | None = None,
    label: str = "K",
    slack: float = 1e-6,
    seed: int = DEFAULT_SEED,
) -> KernelCertificate:
    """Evaluate both sides of the op/HS/gradient/Laplacian kernel bounds.

    When the unprojected kernel is supplied, the projection contraction
    ``||q K q||_op <= ||K||_op`` is checked as well.
    """
    vf = _potential_field(v)
    g = phi.grid
    p = phi.values
    phat = sfft.fft(p, norm="ortho")
    vhat = sfft.fft(np.asarray(vf.values, dtype=float), norm="ortho")
    k2 = g.k2
    w = g.w

    phi_inf = float(np.max(np.abs(p))) if p.size else 0.0
    phi_l2 = float(np.sqrt(w * np.sum(np.abs(p) ** 2)))
    dphi_l2 = float(np.sqrt(w * np.sum(k2 * np.abs(phat) ** 2)))
    lphi_l2 = float(np.sqrt(w * np.sum(k2**2 * np.abs(phat) ** 2)))
    v_l1 = float(w * np.sum(np.abs(vf.values)))
    v_l2 = float(np.sqrt(w * np.sum(np.abs(vf.values) ** 2)))
    dv_l2 = float(np.sqrt(w * np.sum(k2 * np.abs(vhat) ** 2)))
    lv_l2 = float(np.sqrt(w * np.sum(k2**2 * np.abs(vhat) ** 2)))

    opn = op_norm(Kt, seed=seed).value
    hsn = hs_norm(Kt)
    der = kernel_derivative_norms(Kt)
    checks = [
        BoundCheck(f"{label}.op", opn, v_l1 * phi_inf**2, slack),
        BoundCheck(f"{label}.hs", hsn, v_l2 * phi_inf * phi_l2, slack),
        BoundCheck(f"{label}.grad_hs", der["grad_hs"], phi_inf * (dphi_l2 * v_l2 + dv_l2 * phi_l2), slack),
        BoundCheck(
            f"{label}.lap_hs", der["lap_hs"], phi_inf * (lv_l2 * phi_l2 + dv_l2 * dphi_l2 + v_l2 * lphi_l2), slack
        ),
    ]
    if K_unprojected is not None:
        checks.append(BoundCheck(f"{label}.proj_op", opn, op_norm(K_unprojected, seed=seed).value, slack))
    return KernelCertificate(label, tuple(checks))
