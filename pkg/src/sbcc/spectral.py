"""Frequency-domain primitives shared by every correlator.

Windows and spectra are plain numpy arrays indexed ``[row, column]``
(``[y, x]``).  The forward transform is unnormalized; the ``1/N`` factor
lives in :func:`inverse_transform`.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError, ParameterError

__all__ = [
    "GaussianSpec",
    "forward_transform",
    "inverse_transform",
    "gaussian_kernel",
    "gaussian_spectrum",
    "power_spectrum",
    "circular_shift",
    "reflect",
    "is_hermitian",
    "phase_ramp",
]


@dataclass(frozen=True)
class GaussianSpec:
    """Spectrum of a wrap-around spatial Gaussian ``exp(-|x|^2 / 2 sigma^2)``."""

    sigma_spatial: float
    spectrum: np.ndarray

    @property
    def shape(self):
        return self.spectrum.shape


def _check_finite(a, what):
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{what} contains non-finite values")
    return a


def forward_transform(w):
    """Unnormalized 2D DFT over the last two axes.

    Leading axes, if any, are treated as a batch of windows.
    """
    w = _check_finite(w, "window")
    return np.fft.fft2(w, axes=(-2, -1))


def inverse_transform(s, return_residual=False):
    """Inverse 2D DFT (with ``1/N`` scaling) returning the real part.

    Parameters
    ----------
    s : array_like, complex
        Spectrum, batch axes allowed in front.
    return_residual : bool
        Also return the largest imaginary magnitude that was discarded.
    """
    s = _check_finite(s, "spectrum")
    z = np.fft.ifft2(s, axes=(-2, -1))
    if return_residual:
        return z.real, float(np.max(np.abs(z.imag), initial=0.0))
    return z.real


def _signed_offsets(n):
    # 0, 1, ..., n/2 - 1, -n/2, ..., -1
    return np.fft.fftfreq(n, d=1.0 / n)


def gaussian_kernel(width, height, sigma_spatial):
    """Periodized, origin-centred spatial Gaussian on a ``height x width`` torus.

    The value at ``[0, 0]`` is the peak.  Periodic images are summed until
    their contribution falls below double precision.
    """
    if not sigma_spatial > 0:
        raise ParameterError(f"sigma_spatial must be positive, got {sigma_spatial}")
    width, height = int(width), int(height)
    if width < 1 or height < 1:
        raise ParameterError("grid dimensions must be positive")

    def axis_profile(n):
        base = _signed_offsets(n)
        reps = int(np.ceil(9.0 * sigma_spatial / n)) + 1
        shifts = np.arange(-reps, reps + 1) * n
        d = base[None, :] + shifts[:, None]
        return np.exp(-(d * d) / (2.0 * sigma_spatial ** 2)).sum(axis=0)

    # exp(-(x^2 + y^2)/2s^2) separates, and so does its periodization.
    return np.outer(axis_profile(height), axis_profile(width))


@lru_cache(maxsize=64)
def _cached_gaussian(width, height, sigma_spatial):
    spec = np.fft.fft2(gaussian_kernel(width, height, sigma_spatial)).real
    spec = np.maximum(spec, 0.0)
    spec.setflags(write=False)
    return spec


def gaussian_spectrum(width, height, sigma_spatial):
    """Forward transform of :func:`gaussian_kernel`.

    The result is real (the kernel is even on the torus) and is returned as
    a read-only float array inside a :class:`GaussianSpec`.  Tiny negative
    round-off values are clipped to zero.
    """
    if not sigma_spatial > 0:
        raise ParameterError(f"sigma_spatial must be positive, got {sigma_spatial}")
    spec = _cached_gaussian(int(width), int(height), float(sigma_spatial))
    return GaussianSpec(float(sigma_spatial), spec)


def power_spectrum(s):
    """Element-wise ``s * conj(s)`` as a real array."""
    s = np.asarray(s)
    return s.real ** 2 + s.imag ** 2


def circular_shift(w, dx, dy):
    """Translate ``w`` circularly by ``dx`` columns and ``dy`` rows."""
    return np.roll(np.asarray(w), (int(dy), int(dx)), axis=(-2, -1))


def reflect(a):
    """Index reflection ``a[-k]`` over the last two axes (periodic)."""
    a = np.asarray(a)
    return np.roll(np.flip(a, axis=(-2, -1)), (1, 1), axis=(-2, -1))


def is_hermitian(s, rtol=1e-10):
    """True when ``s[-k] == conj(s[k])`` to within ``rtol`` of ``max |s|``."""
    s = np.asarray(s)
    scale = np.max(np.abs(s), initial=0.0)
    if scale == 0:
        return True
    return bool(np.max(np.abs(reflect(s) - np.conj(s))) <= rtol * scale)


def phase_ramp(shape, dx, dy):
    """Multiplier that translates a spectrum by ``(dx, dy)`` pixels.

    ``forward_transform(circular_shift(w, dx, dy)) ==
    forward_transform(w) * phase_ramp(w.shape, dx, dy)`` for integer shifts;
    fractional shifts give the band-limited translation.
    """
    h, w = shape
    ky = np.fft.fftfreq(h)[:, None]
    kx = np.fft.fftfreq(w)[None, :]
    return np.exp(-2j * np.pi * (kx * dx + ky * dy))
