"""Correlation peak location, sub-pixel refinement and peak-shape metrics."""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import NoPeakError

__all__ = [
    "PeakEstimate",
    "find_peak",
    "subpixel_gauss3",
    "fit_peak_width",
    "secondary_ratio",
    "local_maxima",
    "analyze_peak",
    "gauss3_offset",
    "parabolic_offset",
]

# Denominators below this are treated as flat: no sub-pixel correction.
FLAT_TOL = 1e-12
# Samples below this fraction of the peak are round-off, not peak shape.
WIDTH_FLOOR = 1e-8


@dataclass(frozen=True)
class PeakEstimate:
    ix: int
    iy: int
    dx: float
    dy: float
    peak_value: float
    secondary_ratio: float
    fitted_sigma: float = None
    method: str = "gauss3"


def _data(p):
    return np.asarray(getattr(p, "data", p), dtype=float)


def find_peak(p):
    """Global maximum of a plane as ``(ix, iy, value)``.

    Ties go to the candidate closest to the plane centre, then to the first
    in row-major order.
    """
    a = _data(p)
    if not np.all(np.isfinite(a)):
        raise NoPeakError("plane contains non-finite values")
    top = a.max()
    if top == a.min():
        raise NoPeakError("plane is constant")
    h, w = a.shape
    cand = np.argwhere(a == top)
    if len(cand) == 1:
        iy, ix = cand[0]
    else:
        d2 = (cand[:, 0] - h // 2) ** 2 + (cand[:, 1] - w // 2) ** 2
        # argmin returns the first minimum, argwhere is row-major
        iy, ix = cand[np.argmin(d2)]
    return int(ix), int(iy), float(top)


def _vertex(m, z, p):
    den = 2 * m - 4 * z + 2 * p
    if abs(den) < FLAT_TOL:
        return None
    return (m - p) / den


def gauss3_offset(rm, r0, rp):
    """Three-point Gaussian vertex offset.

    None when a sample is non-positive or the log-samples are flat.
    """
    if rm <= 0 or r0 <= 0 or rp <= 0:
        return None
    return _vertex(np.log(rm), np.log(r0), np.log(rp))


def parabolic_offset(rm, r0, rp):
    """Parabola vertex offset; None for a flat neighbourhood."""
    return _vertex(rm, r0, rp)


def _axis_offset(rm, r0, rp):
    if rm > 0 and r0 > 0 and rp > 0:
        d, kind = gauss3_offset(rm, r0, rp), "gauss3"
    else:
        d, kind = parabolic_offset(rm, r0, rp), "parabolic"
    if d is None:
        return 0.0, "integer_only"
    return float(np.clip(d, -0.5, 0.5)), kind


_RANK = {"gauss3": 0, "parabolic": 1, "integer_only": 2}


def local_maxima(a):
    """Boolean map of 3x3 (periodic) local maxima over the last two axes."""
    a = np.asarray(a, float)
    size = (1,) * (a.ndim - 2) + (3, 3)
    return a == maximum_filter(a, size=size, mode="wrap")


def secondary_ratio(p, ix, iy, local=None):
    """Second-highest local maximum outside the 3x3 block around the peak,
    divided by the peak value; 0 when there is none.

    ``local`` may pass a precomputed :func:`local_maxima` map.
    """
    a = _data(p)
    top = a[iy, ix]
    if top <= 0:
        return 0.0
    local = local_maxima(a) if local is None else np.array(local, bool)
    h, w = a.shape
    rows = (iy + np.arange(-1, 2)) % h
    cols = (ix + np.arange(-1, 2)) % w
    local[np.ix_(rows, cols)] = False
    if not local.any():
        return 0.0
    second = a[local].max()
    return float(np.clip(second / top, 0.0, 1.0))


def subpixel_gauss3(p, ix, iy, local=None):
    """Refine an integer peak with independent three-point fits per axis.

    Falls back to a parabola when a sample is non-positive and to the
    integer position on the plane border or for a flat neighbourhood.
    """
    a = _data(p)
    h, w = a.shape
    r0 = a[iy, ix]
    kinds = []
    if 0 < ix < w - 1:
        ox, k = _axis_offset(a[iy, ix - 1], r0, a[iy, ix + 1])
    else:
        ox, k = 0.0, "integer_only"
    kinds.append(k)
    if 0 < iy < h - 1:
        oy, k = _axis_offset(a[iy - 1, ix], r0, a[iy + 1, ix])
    else:
        oy, k = 0.0, "integer_only"
    kinds.append(k)
    cy, cx = h // 2, w // 2
    return PeakEstimate(
        ix=int(ix), iy=int(iy),
        dx=float(ix - cx + ox), dy=float(iy - cy + oy),
        peak_value=float(r0),
        secondary_ratio=secondary_ratio(a, ix, iy, local),
        method=max(kinds, key=_RANK.__getitem__),
    )


_YY, _XX = np.mgrid[-2:3, -2:3]
_DESIGN = np.column_stack([np.ones(25), _XX.ravel(), _YY.ravel(),
                           (_XX * _XX + _YY * _YY).ravel()]).astype(float)
_FULL_PINV = np.linalg.pinv(_DESIGN)


def fit_peak_width(p, ix, iy):
    """Isotropic Gaussian width of the peak from a 5x5 log-quadratic fit.

    ``log r = c0 + c1 x + c2 y + c3 (x^2 + y^2)`` is fitted by least squares
    to the samples above ``WIDTH_FLOOR`` times the peak; the width is
    ``sqrt(-1 / (2 c3))``.  Returns None near the border, with fewer than six
    usable samples, or when the fitted curvature is not negative.
    """
    a = _data(p)
    h, w = a.shape
    if not (2 <= ix < w - 2 and 2 <= iy < h - 2):
        return None
    patch = a[iy - 2:iy + 3, ix - 2:ix + 3]
    keep = patch > WIDTH_FLOOR * a[iy, ix]
    if keep.sum() < 6:
        return None
    if keep.all():
        coef = _FULL_PINV @ np.log(patch.ravel())
    else:
        coef, *_ = np.linalg.lstsq(_DESIGN[keep.ravel()], np.log(patch[keep]), rcond=None)
    if not coef[3] < 0:
        return None
    return float(np.sqrt(-1.0 / (2.0 * coef[3])))


def analyze_peak(p, fit_width=True, local=None):
    """Peak search, sub-pixel refinement and (optionally) width fit."""
    ix, iy, _ = find_peak(p)
    est = subpixel_gauss3(p, ix, iy, local)
    if fit_width:
        sigma = fit_peak_width(p, ix, iy)
        est = PeakEstimate(est.ix, est.iy, est.dx, est.dy, est.peak_value,
                           est.secondary_ratio, sigma, est.method)
    return est
