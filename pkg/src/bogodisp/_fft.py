"""In-place column FFTs of Fortran-ordered ``(n, m)`` complex matrices.

FFTW (through pyFFTW) with ``FFTW_ESTIMATE`` plans is used when available:
estimate-mode plans do not depend on timing measurements, so repeated runs
are bitwise reproducible. Otherwise scipy's pocketfft is used.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

try:
    import pyfftw
except ImportError:  # pragma: no cover - exercised only without pyFFTW
    pyfftw = None


def aligned_state(n: int, m: int) -> np.ndarray:
    """Zeroed Fortran-ordered complex ``(n, m)`` array suitable for in-place transforms."""
    if pyfftw is not None:
        buf = pyfftw.zeros_aligned((m, n), dtype=np.complex128)
    else:
        buf = np.zeros((m, n), dtype=np.complex128)
    return buf.T


class ColumnFFT:
    """Forward/backward transforms along axis 0 of one fixed array, in place.

    ``backward_unscaled`` omits the ``1/n`` of the inverse transform so that
    callers can fold it into a multiplier they apply anyway.
    """

    def __init__(self, A: np.ndarray):
        if not A.flags.f_contiguous:
            raise ValueError("ColumnFFT needs a Fortran-ordered array")
        self.A = A
        At = A.T
        if pyfftw is not None:
            flags = ("FFTW_ESTIMATE", "FFTW_DESTROY_INPUT")
            if not pyfftw.is_byte_aligned(At):
                flags += ("FFTW_UNALIGNED",)
            self._fwd = pyfftw.FFTW(At, At, axes=(1,), direction="FFTW_FORWARD", flags=flags, threads=1)
            self._bwd = pyfftw.FFTW(
                At, At, axes=(1,), direction="FFTW_BACKWARD", flags=flags, threads=1, normalise_idft=False
            )
        else:
            self._fwd = self._bwd = None

    def forward(self) -> None:
        if self._fwd is not None:
            self._fwd()
        else:
            self.A[...] = sfft.fft(self.A, axis=0)

    def backward_unscaled(self) -> None:
        if self._bwd is not None:
            self._bwd()
        else:
            self.A[...] = sfft.ifft(self.A, axis=0, norm="forward")

    def backward(self) -> None:
        self.backward_unscaled()
        self.A *= 1.0 / self.A.shape[0]
