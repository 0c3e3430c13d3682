"""Compiled column kernels for the bounded part of the pair flow.

The state is an ``(n, 2n)`` Fortran-ordered array ``Y = [G | S]`` of operator
matrices. For column ``j`` the bounded right-hand side ``R = B Y`` is

    R_g = V g + qK1q g + q'K2q s
    R_s = -conj(q'K2q) g - (V + conj(qK1q)) s

with ``K1 = diag(phi) C diag(conj phi)``, ``K2 = diag(phi) C diag(phi)`` and
``C`` the circulant with taps ``w v(m h)``. Expanding the rank-one
projections leaves two stencil convolutions per column:

    R_g = V g + phi (A + S' - V c1 - W cs - (al - c1 PV)) - conj(phi) (be - cs PW)
    R_s = -conj(phi) (A + S' - conj(W) d1 - V ds - (bp - ds PV))
          + phi (ap - d1 conj(PW)) - V s

where ``A = C(conj(phi) g)``, ``S' = C(phi s)``, ``W = C(phi^2)`` and the
scalars are weighted column sums (see :func:`bounded_apply_reference`).

Since ``A + S' = C(conj(phi) g + phi s)`` only one convolution per column is
needed; the sums against ``A`` and ``S'`` are moved onto ``V`` and ``W``.
The stencil of an even potential is symmetric, so taps ``m`` and ``-m``
share one multiply.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft
from numba import njit

MAX_TAPS = 129


@njit(cache=True, fastmath=True)
def _column_pass(Yt, Zt, half, outt, cr, ci, pr, pi, ar_, ai_, qr_, qi_, fVr, fVi, V, Wr, Wi, taps, accumulate):
    """Assemble ``out = f B (Y + half Z)`` column by column for a step factor ``f``.

    Arrays arrive as ``Y.T.view(float64)``: row ``j`` holds column ``j`` of the
    complex matrix with real and imaginary parts interleaved. ``cr, ci`` hold
    per column ``[c1, d1, a, f, cs, ds, b, e]`` (see :class:`BoundedOperator`);
    ``ar_ + i ai_ = f phi``, ``qr_ + i qi_ = f conj(phi)`` and
    ``fVr + i fVi = f V``. ``taps`` is the nonnegative half of the symmetric
    stencil, centre first. With ``accumulate`` the routine returns
    ``sum |out_new - out_old|^2``; ``outt`` may alias ``Zt`` because each
    column is read before it is written.
    """
    n = Yt.shape[0] // 2
    M = taps.shape[0] - 1
    L = n + 2 * M
    ur = np.empty(L)
    ui = np.empty(L)
    Tr = np.empty(n)
    Ti = np.empty(n)
    gr = np.empty(n)
    gi = np.empty(n)
    sr = np.empty(n)
    si = np.empty(n)
    diff = 0.0
    for j in range(n):
        yg = Yt[j]
        ys = Yt[n + j]
        if half == 0.0:
            for i in range(n):
                gr[i] = yg[2 * i]
                gi[i] = yg[2 * i + 1]
                sr[i] = ys[2 * i]
                si[i] = ys[2 * i + 1]
        else:
            zg = Zt[j]
            zs = Zt[n + j]
            for i in range(n):
                gr[i] = yg[2 * i] + half * zg[2 * i]
                gi[i] = yg[2 * i + 1] + half * zg[2 * i + 1]
                sr[i] = ys[2 * i] + half * zs[2 * i]
                si[i] = ys[2 * i + 1] + half * zs[2 * i + 1]
        ur_ = ur[M : M + n]
        ui_ = ui[M : M + n]
        for i in range(n):
            a = pr[i]
            c = pi[i]
            ur_[i] = a * (gr[i] + sr[i]) + c * (gi[i] - si[i])
            ui_[i] = a * (gi[i] + si[i]) - c * (gr[i] - sr[i])
        for i in range(M):
            ur[i] = ur[n + i]
            ui[i] = ui[n + i]
            ur[n + M + i] = ur[M + i]
            ui[n + M + i] = ui[M + i]
        t = taps[0]
        for i in range(n):
            Tr[i] = t * ur_[i]
            Ti[i] = t * ui_[i]
        for m in range(1, M + 1):
            t = taps[m]
            lr = ur[M - m : M - m + n]
            hr = ur[M + m : M + m + n]
            li = ui[M - m : M - m + n]
            hi = ui[M + m : M + m + n]
            for i in range(n):
                Tr[i] += t * (lr[i] + hr[i])
                Ti[i] += t * (li[i] + hi[i])
        c1r, c1i = cr[0, j], ci[0, j]
        d1r, d1i = cr[1, j], ci[1, j]
        a0r, a0i = cr[2, j], ci[2, j]
        f_r, f_i = cr[3, j], ci[3, j]
        csr, csi = cr[4, j], ci[4, j]
        dsr, dsi = cr[5, j], ci[5, j]
        br, bi = cr[6, j], ci[6, j]
        er, ei = cr[7, j], ci[7, j]
        og = outt[j]
        os = outt[n + j]
        for i in range(n):
            v = V[i]
            wr = Wr[i]
            wi = Wi[i]
            Xr = Tr[i] - v * c1r - (wr * csr - wi * csi) - a0r
            Xi = Ti[i] - v * c1i - (wr * csi + wi * csr) - a0i
            Qr = Tr[i] - (wr * d1r + wi * d1i) - v * dsr - er
            Qi = Ti[i] - (wr * d1i - wi * d1r) - v * dsi - ei
            A1r = ar_[i]
            A1i = ai_[i]
            A2r = qr_[i]
            A2i = qi_[i]
            A3r = fVr[i]
            A3i = fVi[i]
            # f R_g = fV g + f phi X - f conj(phi) b
            ogr = (A3r * gr[i] - A3i * gi[i]) + (A1r * Xr - A1i * Xi) - (A2r * br - A2i * bi)
            ogi = (A3r * gi[i] + A3i * gr[i]) + (A1r * Xi + A1i * Xr) - (A2r * bi + A2i * br)
            # f R_s = -f conj(phi) Q + f phi fcoef - fV s
            osr = -(A2r * Qr - A2i * Qi) + (A1r * f_r - A1i * f_i) - (A3r * sr[i] - A3i * si[i])
            osi = -(A2r * Qi + A2i * Qr) + (A1r * f_i + A1i * f_r) - (A3r * si[i] + A3i * sr[i])
            if accumulate:
                d0 = ogr - og[2 * i]
                d1_ = ogi - og[2 * i + 1]
                d2 = osr - os[2 * i]
                d3 = osi - os[2 * i + 1]
                diff += d0 * d0 + d1_ * d1_ + d2 * d2 + d3 * d3
            og[2 * i] = ogr
            og[2 * i + 1] = ogi
            os[2 * i] = osr
            os[2 * i + 1] = osi
    return diff


def stencil_taps(v_values: np.ndarray, w: float, R: float, h: float) -> np.ndarray:
    """Taps ``w v(m h)`` for ``|m| <= ceil(R/h)`` from a centred sample array."""
    n = v_values.shape[0]
    M = min(int(np.ceil(R / h)), n // 2 - 1)
    c = n // 2
    while M > 0 and v_values[c - M] == 0 and v_values[c + M] == 0:
        M -= 1
    return np.ascontiguousarray(w * np.real(v_values[c - M : c + M + 1]), dtype=np.float64)


def circ_conv_fft(v_values: np.ndarray, w: float, f: np.ndarray) -> np.ndarray:
    """``C f`` along axis 0 via FFT, for any support."""
    vhat = sfft.fft(np.fft.ifftshift(v_values)) * w
    shape = (-1,) + (1,) * (f.ndim - 1)
    return sfft.ifft(vhat.reshape(shape) * sfft.fft(f, axis=0), axis=0)


def _tview(A: np.ndarray) -> np.ndarray:
    """Float view of a Fortran-ordered complex matrix, one column per row."""
    if not A.flags.f_contiguous:
        raise ValueError("state arrays must be Fortran ordered")
    return A.T.view(np.float64)


class BoundedOperator:
    """The bounded generator ``B`` frozen at one condensate ``phi``.

    The eight weighted column sums that multiply rank-one pieces are computed
    with two ``4 x n`` matrix products; since ``C`` is real symmetric,
    ``sum f C(u) = sum C(f) u`` turns the sums over convolved vectors into
    plain sums against ``V``, ``W`` and ``conj(W)``.
    """

    def __init__(self, phi: np.ndarray, v_values: np.ndarray, w: float, R: float, h: float):
        n = phi.shape[0]
        self.n = n
        self.phi = np.ascontiguousarray(phi, dtype=np.complex128)
        self.v_values = v_values
        self.w = float(w)
        a2 = np.abs(phi) ** 2
        self.V = np.ascontiguousarray(circ_conv_fft(v_values, w, a2).real.astype(np.complex128))
        self.W = np.ascontiguousarray(circ_conv_fft(v_values, w, phi * phi))
        self.PV = complex(w * np.sum(a2 * self.V))
        self.PW = complex(w * np.sum(phi * phi * self.W))
        self.taps = stencil_taps(v_values, w, R, h)
        M = (self.taps.shape[0] - 1) // 2
        self.half_taps = np.ascontiguousarray(self.taps[M:])
        symmetric = np.array_equal(self.taps, self.taps[::-1])
        self.compiled = symmetric and self.taps.shape[0] <= MAX_TAPS
        self._factor = None
        self._pr = np.ascontiguousarray(self.phi.real)
        self._pi = np.ascontiguousarray(self.phi.imag)
        self._Vr = np.ascontiguousarray(self.V.real)
        self._Wr = np.ascontiguousarray(self.W.real)
        self._Wi = np.ascontiguousarray(self.W.imag)
        pc = self.phi.conj()
        p = self.phi
        # rows give c1, d1, al, ap on G and cs, ds, be, bp on S
        self.Lg = self.w * np.array([pc, p, self.V * pc, self.W.conj() * pc])
        self.Ls = self.w * np.array([pc, p, self.W * p, self.V * p])

    def _coef(self, Sg: np.ndarray, Ss: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c1, d1, al, ap = Sg
        cs, ds, be, bp = Ss
        PV, PW = self.PV, self.PW
        c = np.array([c1, d1, al - c1 * PV, ap - d1 * np.conj(PW), cs, ds, be - cs * PW, bp - ds * PV])
        return np.ascontiguousarray(c.real), np.ascontiguousarray(c.imag)

    def _factor_arrays(self, factor: complex) -> tuple:
        if self._factor is None or self._factor[0] != factor:
            fp = factor * self.phi
            fq = factor * self.phi.conj()
            fV = factor * self._Vr
            arrs = tuple(np.ascontiguousarray(a) for a in (fp.real, fp.imag, fq.real, fq.imag, fV.real, fV.imag))
            self._factor = (factor, arrs)
        return self._factor[1]

    def _pass(self, Y, Z, half, factor, out, coef, accumulate):
        cr, ci = coef
        return _column_pass(_tview(Y), _tview(Z), half, _tview(out), cr, ci, self._pr, self._pi,
                            *self._factor_arrays(factor), self._Vr, self._Wr, self._Wi, self.half_taps, accumulate)

    def _sums(self, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.n
        return self.Lg @ Y[:, :n], self.Ls @ Y[:, n:]

    def apply(self, Y: np.ndarray, out: np.ndarray, factor: complex = 1.0) -> np.ndarray:
        """``out = factor * B Y``."""
        if self.compiled:
            self._pass(Y, Y, 0.0, complex(factor), out, self._coef(*self._sums(Y)), False)
        else:
            out[...] = factor * bounded_apply_reference(Y, self.phi, self.v_values, self.w)
        return out

    def midpoint(self, Y: np.ndarray, factor: complex, tol: float, max_iter: int, scale: float | None = None) -> int:
        """In place ``Y <- Y + Z`` with ``Z = factor * B (Y + Z/2)``; returns the correction count.

        Iterates until the Frobenius norm of the last correction drops below
        ``tol * ||Y||_F``.
        """
        if not self.compiled:
            return self._midpoint_reference(Y, factor, tol, max_iter, scale)
        factor = complex(factor)
        if scale is None:
            scale = float(np.linalg.norm(Y))
        SgY, SsY = self._sums(Y)
        Z = np.empty_like(Y, order="F")
        self._pass(Y, Y, 0.0, factor, Z, self._coef(SgY, SsY), False)
        count = 0
        for _ in range(max_iter):
            SgZ, SsZ = self._sums(Z)
            coef = self._coef(SgY + 0.5 * SgZ, SsY + 0.5 * SsZ)
            diff = self._pass(Y, Z, 0.5, factor, Z, coef, True)
            count += 1
            if np.sqrt(diff) <= tol * scale:
                break
        Y += Z
        return count

    def _midpoint_reference(self, Y, factor, tol, max_iter, scale=None):
        Z = factor * bounded_apply_reference(Y, self.phi, self.v_values, self.w)
        if scale is None:
            scale = np.linalg.norm(Y)
        count = 0
        for _ in range(max_iter):
            Znew = factor * bounded_apply_reference(Y + 0.5 * Z, self.phi, self.v_values, self.w)
            diff = np.linalg.norm(Znew - Z)
            Z = Znew
            count += 1
            if diff <= tol * scale:
                break
        Y += Z
        return count


def bounded_apply_reference(Y, phi, v_values, w):
    """Vectorised ``B Y`` with FFT convolutions; independent of the stencil path."""
    n = Y.shape[0]
    G, S = Y[:, :n], Y[:, n:]
    pc = phi.conj()
    a2 = np.abs(phi) ** 2

    def conv(f):
        return circ_conv_fft(v_values, w, f)

    V = conv(a2).real
    W = conv(phi * phi)
    PV = w * np.sum(a2 * V)
    PW = w * np.sum(phi * phi * W)
    c1 = w * pc @ G
    d1 = w * phi @ G
    cs = w * pc @ S
    ds = w * phi @ S
    A = conv(pc[:, None] * G)
    Sp = conv(phi[:, None] * S)
    al = w * a2 @ A
    be = w * (phi * phi) @ Sp
    ap = w * (pc * pc) @ A
    bp = w * a2 @ Sp
    t = A + Sp
    Vc, Wc = V[:, None], W[:, None]
    p, q = phi[:, None], pc[:, None]
    Rg = Vc * G + p * (t - Vc * c1 - Wc * cs - (al - c1 * PV)) - q * (be - cs * PW)
    Rs = -(q * (t - Wc.conj() * d1 - Vc * ds - (bp - ds * PV)) - p * (ap - d1 * np.conj(PW))) - Vc * S
    return np.concatenate([Rg, Rs], axis=1)
