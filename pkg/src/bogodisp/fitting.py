"""Power-law fits, Gronwall-bound certificates and the periodic-box horizon."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_FIT_POINTS = 10
ADVISORY_R2 = 0.95
CERT_SLACK = 0.05


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class DecayFit:
    series: str
    exponent: float
    prefactor: float
    r2: float
    t_lo: float
    t_hi: float
    npoints: int

    @property
    def advisory(self) -> bool:
        return self.r2 < ADVISORY_R2


def fit_decay(t, y, window: tuple[float, float] | None = None, series: str = "y") -> DecayFit:
    """Least squares of ``log y`` against ``log(1 + t)``; the exponent is minus the slope."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape:
        raise FitError("t and y must have the same length")
    if window is not None:
        lo, hi = window
        if not lo < hi:
            raise FitError(f"empty fit window [{lo}, {hi}]")
        sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
        t, y = t[sel], y[sel]
    if t.size < MIN_FIT_POINTS:
        raise FitError(f"fit needs at least {MIN_FIT_POINTS} points, got {t.size}")
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise FitError(f"series {series!r} has nonpositive values in the fit window")
    X = np.log1p(t)
    Y = np.log(y)
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    if ss_tot <= 1e-24 * max(1.0, float(np.sum(Y**2))):
        r2 = 1.0
    else:
        r2 = float(min(max(1.0 - ss_res / ss_tot, 0.0), 1.0))
    return DecayFit(series, float(-slope), float(np.exp(intercept)), r2, float(t[0]), float(t[-1]), int(t.size))


def default_window(transient: float, t_wrap: float) -> tuple[float, float]:
    return max(5.0, 2.0 * transient), 0.9 * t_wrap


def wrap_time(grid, phi0: np.ndarray, percentile: float = 0.95) -> float:
    """``L / (4 k95)`` with ``k95`` the |k| below which 95% of the spectral mass lies."""
    phat = np.fft.fftn(np.asarray(phi0).reshape(grid.shape))
    mass = np.abs(phat).ravel() ** 2
    kabs = np.sqrt(grid.k2).ravel()
    order = np.argsort(kabs, kind="stable")
    cum = np.cumsum(mass[order]) / mass.sum()
    k95 = float(kabs[order][np.searchsorted(cum, percentile)])
    if k95 <= 0:
        raise FitError("initial datum has no spectral spread; wrap time undefined")
    return grid.L / (4.0 * k95)


def _cumtrapz(t: np.ndarray, f: np.ndarray) -> np.ndarray:
    out = np.zeros_like(f, dtype=float)
    out[1:] = np.cumsum(0.5 * np.diff(t) * (f[1:] + f[:-1]))
    return out


@dataclass(frozen=True)
class Certificate:
    kind: str
    t: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    slack: float

    @property
    def margins(self) -> np.ndarray:
        return self.rhs * (1 + self.slack) - self.lhs

    @property
    def margin(self) -> float:
        return float(np.min(self.margins))

    @property
    def relative_margin(self) -> float:
        """``min (1 + slack) - lhs / rhs`` over samples with ``rhs > 0``; violations at ``rhs = 0`` count as ``-lhs``."""
        pos = self.rhs > 0
        rel = (1 + self.slack) - self.lhs[pos] / self.rhs[pos]
        bad = -self.lhs[~pos & (self.lhs > 0)]
        return float(min(np.min(rel, initial=np.inf), np.min(bad, initial=np.inf)))

    @property
    def passed(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs * (1 + self.slack)))


def gronwall_rhs(kind: str, t, k_op, k_hs=None) -> np.ndarray:
    """Right-hand sides of the Gronwall bounds by trapezoid quadrature.

    ``gamma_op`` (squared): ``1 + 2 int_s^t ||K||_op exp(int_tau^t ||K||_op)``;
    ``sigma_hs``: ``2 int_s^t ||K||_HS exp(int_tau^t ||K||_op)``.
    """
    t = np.asarray(t, float)
    op = np.asarray(k_op, float)
    C = _cumtrapz(t, op)
    if kind == "gamma_op":
        f = op
    elif kind == "sigma_hs":
        if k_hs is None:
            raise FitError("sigma_hs certificate needs the HS norm series of K")
        f = np.asarray(k_hs, float)
    else:
        raise FitError(f"unknown certificate kind {kind!r}")
    out = np.empty_like(t)
    for i in range(t.size):
        integrand = f[: i + 1] * np.exp(C[i] - C[: i + 1])
        out[i] = 2.0 * np.trapezoid(integrand, t[: i + 1]) if i else 0.0
    return 1.0 + out if kind == "gamma_op" else out


def bound_certificate(kind: str, t, flow_norm, k_op, k_hs=None, slack: float = CERT_SLACK) -> Certificate:
    """Check a measured flow norm against its Gronwall bound at every sample.

    For ``gamma_op`` the measured ``||gamma||_op`` is squared before comparison.
    """
    t = np.asarray(t, float)
    lhs = np.asarray(flow_norm, float)
    if lhs.shape != t.shape or np.shape(k_op) != t.shape or (k_hs is not None and np.shape(k_hs) != t.shape):
        raise FitError("certificate series are not aligned on the same time grid")
    if kind == "gamma_op":
        lhs = lhs**2
    rhs = gronwall_rhs(kind, t, k_op, k_hs)
    return Certificate(kind, t, lhs, rhs, slack)
