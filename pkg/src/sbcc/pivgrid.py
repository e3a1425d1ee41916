"""From an image pair to a vector field.

The pipeline cuts both frames into interrogation windows, removes each
window's mean, builds the negative-context power spectrum ``Q`` for SBCC,
correlates every window pair with the configured estimator and refines the
peak.  Context building and the transforms run once over the whole window
stack; the per-window peak analysis after it is a pure map and may be split
across threads.
"""
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .correlators import (ContextBank, correlate, method_config, planes_from_response,
                          response_spectrum)
from .errors import ContextUnavailableError, InvalidInputError, NoPeakError, ParameterError
from .peakfit import analyze_peak, local_maxima
from .spectral import power_spectrum

__all__ = [
    "GridSpec",
    "ContextPolicy",
    "VectorField",
    "FLAG_VALID",
    "FLAG_OUTLIER",
    "FLAG_DEGENERATE",
    "FLAG_NAMES",
    "grid_shape",
    "grid_centers",
    "window_stack",
    "extract_windows",
    "preprocess_window",
    "build_context",
    "context_stack",
    "process_pair",
    "window_plane",
    "detect_outliers",
    "median_reference",
]

FLAG_VALID, FLAG_OUTLIER, FLAG_DEGENERATE = 0, 1, 2
FLAG_NAMES = ("valid", "outlier", "degenerate")


@dataclass(frozen=True)
class GridSpec:
    window: int = 32
    step: int = 16
    margin: str = "crop_incomplete"

    def __post_init__(self):
        if self.window < 8 or self.window % 2:
            raise ParameterError(f"window must be an even integer >= 8, got {self.window}")
        if not 1 <= self.step <= self.window:
            raise ParameterError(f"step must lie in [1, window], got {self.step}")
        if self.margin != "crop_incomplete":
            raise ParameterError(f"unsupported margin policy {self.margin!r}")


@dataclass(frozen=True)
class ContextPolicy:
    """How negative context windows are chosen for SBCC.

    ``sampling="global_average"`` averages the power spectra of every other
    window (``m`` is ignored); ``"random_excluding_self"`` draws ``m`` of
    them with an RNG seeded from ``rng_seed`` and the window index.
    ``source`` selects the candidate pool.
    """

    m: int = 8
    source: str = "both_frames"
    sampling: str = "global_average"
    rng_seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ParameterError("context size m must be >= 1")
        if self.source not in ("both_frames", "frame1", "frame2"):
            raise ParameterError(f"unknown context source {self.source!r}")
        if self.sampling not in ("global_average", "random_excluding_self"):
            raise ParameterError(f"unknown context sampling {self.sampling!r}")


@dataclass
class VectorField:
    """Displacement vectors on a regular grid of window centres.

    All arrays share the grid shape ``(ny, nx)``.  Degenerate vectors keep
    finite sentinel values (zero displacement, zero peak metadata); a
    ``sigma_fit`` of 0 means no width could be fitted.
    """

    xs: np.ndarray
    ys: np.ndarray
    u: np.ndarray
    v: np.ndarray
    flags: np.ndarray = None
    peak: np.ndarray = None
    secondary_ratio: np.ndarray = None
    sigma_fit: np.ndarray = None
    method: str = ""
    outlier_count: int = field(default=0)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, float)
        self.ys = np.asarray(self.ys, float)
        shape = self.xs.shape
        self.u = np.broadcast_to(np.asarray(self.u, float), shape).copy()
        self.v = np.broadcast_to(np.asarray(self.v, float), shape).copy()
        if self.ys.shape != shape:
            raise InvalidInputError("xs and ys shapes differ")
        self.flags = (np.zeros(shape, int) if self.flags is None
                      else np.asarray(self.flags, int).reshape(shape))
        for name in ("peak", "secondary_ratio", "sigma_fit"):
            arr = getattr(self, name)
            setattr(self, name, np.zeros(shape) if arr is None
                    else np.asarray(arr, float).reshape(shape))

    @property
    def shape(self):
        return self.xs.shape

    @property
    def valid(self):
        return self.flags != FLAG_DEGENERATE

    @property
    def degenerate_count(self):
        return int(np.sum(self.flags == FLAG_DEGENERATE))

    def same_grid(self, other, atol=1e-6):
        return (self.shape == other.shape
                and np.allclose(self.xs, other.xs, atol=atol)
                and np.allclose(self.ys, other.ys, atol=atol))


def grid_shape(image_shape, grid):
    h, w = image_shape[:2]
    if h < grid.window or w < grid.window:
        raise InvalidInputError(
            f"image {h}x{w} is smaller than one {grid.window}x{grid.window} window")
    return (h - grid.window) // grid.step + 1, (w - grid.window) // grid.step + 1


def grid_centers(image_shape, grid):
    """Window centre coordinates ``(xs, ys)`` in pixels, each of grid shape."""
    ny, nx = grid_shape(image_shape, grid)
    half = (grid.window - 1) / 2.0
    x = np.arange(nx) * grid.step + half
    y = np.arange(ny) * grid.step + half
    return np.meshgrid(x, y)


def window_stack(image, grid):
    """All complete windows as a read-only ``(ny, nx, window, window)`` view."""
    image = np.asarray(image, float)
    if image.ndim != 2:
        raise InvalidInputError("expected a 2D grayscale image")
    if not np.all(np.isfinite(image)):
        raise InvalidInputError("image contains non-finite values")
    ny, nx = grid_shape(image.shape, grid)
    view = sliding_window_view(image, (grid.window, grid.window))
    return view[::grid.step, ::grid.step][:ny, :nx]


def extract_windows(image, grid):
    """Row-major list of ``(window, (x_center, y_center))``."""
    stack = window_stack(image, grid)
    xs, ys = grid_centers(np.shape(image), grid)
    ny, nx = xs.shape
    return [(np.array(stack[j, i]), (float(xs[j, i]), float(ys[j, i])))
            for j in range(ny) for i in range(nx)]


def preprocess_window(w, subtract_mean=True):
    """Remove the window mean (no apodization)."""
    w = np.asarray(w, float)
    if not subtract_mean:
        return w.copy()
    return w - w.mean(axis=(-2, -1), keepdims=True)


def build_context(windows, policy, exclude_index, power=None):
    """Average power spectrum of context windows for one interrogation window.

    Parameters
    ----------
    windows : sequence of array_like
        Candidate (already preprocessed) windows.
    policy : ContextPolicy
    exclude_index : int or iterable of int
        Candidates that must not contribute (the window itself, and its
        partner in the other frame when both frames are pooled).
    power : array_like, optional
        Precomputed power spectra of ``windows``.
    """
    if power is None:
        power = power_spectrum(np.fft.fft2(np.asarray(windows, float), axes=(-2, -1)))
    power = np.asarray(power)
    n = len(power)
    excluded = {int(exclude_index)} if np.isscalar(exclude_index) else {int(i) for i in exclude_index}
    candidates = np.array([i for i in range(n) if i not in excluded], dtype=int)
    if len(candidates) == 0:
        raise ContextUnavailableError("no context windows available besides the excluded ones")
    if policy.sampling == "random_excluding_self" and len(candidates) > policy.m:
        rng = np.random.default_rng([policy.rng_seed, min(excluded) if excluded else 0])
        chosen = np.sort(rng.choice(candidates, policy.m, replace=False))
    else:
        chosen = candidates
    q = power[chosen].mean(axis=0)
    return ContextBank(q, len(chosen), tuple(int(i) for i in chosen))


def context_stack(P1, P2, policy):
    """Per-window context spectra ``(n, h, w)`` for power-spectrum stacks.

    Window ``i`` of either frame never contributes to its own ``Q``.
    """
    n = len(P1)
    if policy.source == "both_frames":
        pool = np.concatenate([P1, P2])
        excl = [(i, n + i) for i in range(n)]
    else:
        pool = P1 if policy.source == "frame1" else P2
        excl = [(i,) for i in range(n)]
    if len(pool) - len(excl[0]) < 1:
        raise ContextUnavailableError("context needs at least two interrogation windows")
    if policy.sampling == "random_excluding_self":
        return np.stack([build_context(None, policy, e, power=pool).q for e in excl])
    total = pool.sum(axis=0)
    own = P1 + P2 if policy.source == "both_frames" else pool
    count = len(pool) - len(excl[0])
    return np.maximum((total[None] - own) / count, 0.0)


def _spectra(img1, img2, grid, subtract_mean):
    img1 = np.asarray(img1, float)
    img2 = np.asarray(img2, float)
    if img1.shape != img2.shape:
        raise InvalidInputError(f"image shapes differ: {img1.shape} vs {img2.shape}")
    s1 = window_stack(img1, grid)
    s2 = window_stack(img2, grid)
    ny, nx = s1.shape[:2]
    w1 = preprocess_window(s1.reshape(ny * nx, grid.window, grid.window), subtract_mean)
    w2 = preprocess_window(s2.reshape(ny * nx, grid.window, grid.window), subtract_mean)
    F1 = np.fft.fft2(w1, axes=(-2, -1))
    F2 = np.fft.fft2(w2, axes=(-2, -1))
    return (ny, nx), w1, w2, F1, F2


def _contexts(cfg, F1, F2, policy):
    if not cfg.use_context:
        return None
    return context_stack(power_spectrum(F1), power_spectrum(F2), policy)


def _peaks(planes, local, flags, fit_width):
    n = len(planes)
    out = np.zeros((n, 5))
    flags = flags.copy()
    for k in range(n):
        if flags[k] == FLAG_DEGENERATE:
            continue
        try:
            est = analyze_peak(planes[k], fit_width=fit_width, local=local[k])
        except NoPeakError:
            flags[k] = FLAG_DEGENERATE
            continue
        out[k] = (est.dx, est.dy, est.peak_value, est.secondary_ratio, est.fitted_sigma or 0.0)
    return out, flags


def process_pair(img1, img2, grid=None, cfg=None, policy=None, subtract_mean=True,
                 threads=1, fit_width=True):
    """Correlate an image pair on an interrogation grid.

    Parameters
    ----------
    img1, img2 : array_like
        Frames of identical shape, intensities as floats.
    grid : GridSpec, optional
    cfg : MethodConfig, optional
        Defaults to the full SBCC preset.
    policy : ContextPolicy, optional
        Only used when ``cfg.nu > 0``.
    subtract_mean : bool
        Remove each window's mean before transforming.
    threads : int
        Number of worker threads for the per-window map.

    Returns
    -------
    VectorField
        Degenerate correlations are flagged, never raised.
    """
    grid = grid or GridSpec()
    cfg = cfg or method_config("sbcc")
    policy = policy or ContextPolicy()
    (ny, nx), _, _, F1, F2 = _spectra(img1, img2, grid, subtract_mean)
    Q = _contexts(cfg, F1, F2, policy)
    # Transforms run on the whole stack so results never depend on chunking.
    R, degenerate = response_spectrum(cfg, F1, F2, Q, strict=False)
    planes, _ = planes_from_response(R)
    local = local_maxima(planes)
    flags0 = np.where(degenerate, FLAG_DEGENERATE, FLAG_VALID)

    n = ny * nx
    threads = max(1, int(threads))
    bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
    chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]

    def work(sl):
        return _peaks(planes[sl], local[sl], flags0[sl], fit_width)

    if len(chunks) == 1:
        results = [work(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(work, chunks))
    out = np.concatenate([r[0] for r in results])
    flags = np.concatenate([r[1] for r in results])

    xs, ys = grid_centers(np.shape(img1), grid)
    shape = (ny, nx)
    return VectorField(
        xs, ys, out[:, 0].reshape(shape), out[:, 1].reshape(shape),
        flags=flags.reshape(shape), peak=out[:, 2], secondary_ratio=out[:, 3],
        sigma_fit=out[:, 4], method=cfg.label,
    )


def window_plane(img1, img2, grid, cfg, policy=None, ix=0, iy=0, subtract_mean=True):
    """Correlation plane of the window at grid column ``ix`` and row ``iy``."""
    policy = policy or ContextPolicy()
    (ny, nx), _, _, F1, F2 = _spectra(img1, img2, grid, subtract_mean)
    if not (0 <= ix < nx and 0 <= iy < ny):
        raise InvalidInputError(f"window index ({ix}, {iy}) outside the {nx}x{ny} grid")
    k = iy * nx + ix
    ctx = None
    if cfg.use_context:
        q = context_stack(power_spectrum(F1), power_spectrum(F2), policy)[k]
        ctx = ContextBank(q, 1)
    return correlate(cfg, F1[k], F2[k], ctx)


def detect_outliers(field, reference, threshold=4.0):
    """Flag vectors with ``|u - u_ref|^2 > threshold``.

    Returns ``(annotated_field, outlier_count)``.  Degenerate vectors keep
    their flag and are not counted.
    """
    if not field.same_grid(reference):
        raise InvalidInputError("vector field and reference are on different grids")
    dev = (field.u - reference.u) ** 2 + (field.v - reference.v) ** 2
    flags = field.flags.copy()
    live = flags != FLAG_DEGENERATE
    flags[live] = FLAG_VALID
    flags[live & (dev > threshold)] = FLAG_OUTLIER
    count = int(np.sum(flags == FLAG_OUTLIER))
    return replace(field, flags=flags, outlier_count=count), count


def median_reference(field):
    """Component-wise 3x3 median of the non-degenerate neighbours."""
    def med(a):
        a = np.where(field.valid, a, np.nan)
        padded = np.pad(a, 1, constant_values=np.nan)
        windows = sliding_window_view(padded, (3, 3)).reshape(a.shape + (9,))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out = np.nanmedian(windows, axis=-1)
        return np.where(np.isnan(out), 0.0, out)

    flags = np.where(field.valid, FLAG_VALID, FLAG_DEGENERATE)
    return VectorField(field.xs, field.ys, med(field.u), med(field.v), flags=flags,
                       method="median")
