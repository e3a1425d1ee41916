"""Correlation estimators built from a pair of window spectra.

All estimators share one shape: a frequency response ``R`` is formed from
``F1`` and ``F2`` (and, for SBCC, a context power spectrum ``Q``), then
turned into a spatial plane.  The plane is laid out so that the value at
``center + d`` scores the hypothesis "frame 2 equals frame 1 translated by
``d``", i.e. the argmax reads displacement directly.

Batched inputs (leading axes before the last two) are accepted by
:func:`response_spectrum` and :func:`planes_from_response`; the single-pair
functions raise on degenerate denominators instead of returning NaNs.
"""
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import DegenerateDenominatorError, DimensionError, ParameterError
from .spectral import gaussian_spectrum, power_spectrum

__all__ = [
    "METHODS",
    "PRESETS",
    "MethodConfig",
    "ContextBank",
    "CorrelationPlane",
    "SurrogatePair",
    "method_config",
    "response_spectrum",
    "planes_from_response",
    "gcc_correlate",
    "cfcc_correlate",
    "sbcc_correlate",
    "correlate",
    "correlate_windows",
    "mosse_filter",
    "sbcc_surrogates",
    "sbcc_oracle",
    "normalize_plane",
]

METHODS = ("scc", "pc", "spof", "rpc", "cspc", "cfcc", "sbcc")
GCC_METHODS = ("scc", "pc", "spof", "rpc", "cspc")

# Relative size of the denominator guard for PC, SPOF and RPC.
GUARD_SCALE = 1e-12


@dataclass(frozen=True)
class MethodConfig:
    """Estimator identity plus its parameters.

    ``lam``, ``mu`` and ``nu`` weight the regularization, difference and
    negative-context terms of SBCC; ``lam`` is also the CFCC regularizer.
    ``rho``/``epsilon`` belong to CSPC.  ``sigma`` and ``sigma_d`` are the
    spatial widths (pixels) of the desired response ``g`` and of the
    difference-term filter ``g_d``.  ``target="delta"`` replaces the
    Gaussian desired response by ``G = 1``.
    """

    method: str = "sbcc"
    lam: float = 1e-5
    mu: float = 1.0
    nu: float = 10.0
    rho: float = 1.0
    epsilon: float = 1e-5
    sigma: float = 2.0
    sigma_d: float = 2.0
    target: str = "gaussian"
    guard: bool = True
    name: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(
                f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        for key in ("lam", "mu", "nu", "epsilon"):
            value = getattr(self, key)
            if not (np.isfinite(value) and value >= 0):
                raise ParameterError(f"{key} must be a finite non-negative number, got {value}")
        if not 0 < self.rho <= 1:
            raise ParameterError(f"rho must lie in (0, 1], got {self.rho}")
        if not (self.sigma > 0 and self.sigma_d > 0):
            raise ParameterError("sigma and sigma_d must be positive")
        if self.target not in ("gaussian", "delta"):
            raise ParameterError(f"target must be 'gaussian' or 'delta', got {self.target!r}")

    @property
    def label(self):
        return self.name or self.method

    @property
    def use_context(self):
        return self.method == "sbcc" and self.nu > 0

    def with_params(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown MethodConfig keys: {sorted(unknown)}")
        return cls(**data)


PRESETS = {
    "scc": MethodConfig("scc", name="scc"),
    "pc": MethodConfig("pc", name="pc"),
    "spof": MethodConfig("spof", name="spof"),
    "rpc": MethodConfig("rpc", name="rpc"),
    "cspc": MethodConfig("cspc", name="cspc"),
    "cfcc": MethodConfig("cfcc", lam=0.1, name="cfcc"),
    "sbcc-b1": MethodConfig("sbcc", lam=1e-5, mu=0.0, nu=0.0, name="sbcc-b1"),
    "sbcc-b2": MethodConfig("sbcc", lam=0.1, mu=0.0, nu=0.0, name="sbcc-b2"),
    "sbcc-b3": MethodConfig("sbcc", lam=1e-5, mu=1.0, nu=0.0, name="sbcc-b3"),
    "sbcc": MethodConfig("sbcc", lam=1e-5, mu=1.0, nu=10.0, name="sbcc"),
}


def method_config(name, **overrides):
    """Look up a named preset (``"sbcc-b1"``, ``"rpc"``, ...) and override fields."""
    key = name.lower().replace("_", "-")
    if key not in PRESETS:
        raise ParameterError(
            f"unknown method {name!r}; valid names: {', '.join(PRESETS)}")
    cfg = PRESETS[key]
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides) if overrides else cfg


@dataclass(frozen=True)
class ContextBank:
    """Average power spectrum ``Q`` of negative context windows.

    ``members`` lists the candidate indices that contributed, which lets
    callers check that a window never appears in its own context.
    """

    q: np.ndarray
    m: int
    members: tuple = ()

    def __post_init__(self):
        q = np.asarray(self.q)
        if np.iscomplexobj(q):
            if np.max(np.abs(q.imag), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(q), initial=0.0)):
                raise ParameterError("context spectrum must be real")
            q = q.real
        if np.any(q < 0):
            raise ParameterError("context spectrum must be non-negative")
        object.__setattr__(self, "q", q)


@dataclass
class CorrelationPlane:
    """Real correlation response with displacement ``(0, 0)`` at ``center``."""

    data: np.ndarray
    normalized: np.ndarray = None
    method: str = ""
    guard: float = 0.0
    imag_residual: float = 0.0
    unnormalizable: bool = False
    response: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self):
        return self.data.shape

    @property
    def center(self):
        h, w = self.data.shape
        return h // 2, w // 2

    def displacement(self, iy, ix):
        cy, cx = self.center
        return ix - cx, iy - cy


@dataclass(frozen=True)
class SurrogatePair:
    s1: np.ndarray
    s2: np.ndarray


def _spectra(f1, f2):
    f1 = np.asarray(f1)
    f2 = np.asarray(f2)
    if f1.shape != f2.shape:
        raise DimensionError(f"spectrum shapes differ: {f1.shape} vs {f2.shape}")
    if f1.ndim < 2:
        raise DimensionError("spectra must be at least two-dimensional")
    return f1.astype(complex, copy=False), f2.astype(complex, copy=False)


def _target(cfg, shape):
    if cfg.target == "delta":
        return np.ones(shape[-2:])
    h, w = shape[-2:]
    return gaussian_spectrum(w, h, cfg.sigma).spectrum


def _difference_weight(cfg, shape):
    """``mu * |G_d|^2`` (zero when ``mu == 0``)."""
    if cfg.mu == 0:
        return np.zeros(shape[-2:])
    h, w = shape[-2:]
    return cfg.mu * power_spectrum(gaussian_spectrum(w, h, cfg.sigma_d).spectrum)


def _guard(cfg, cross_mag):
    if not cfg.guard:
        return np.zeros(cross_mag.shape[:-2] + (1, 1))
    return GUARD_SCALE * np.max(cross_mag, axis=(-2, -1), keepdims=True)


def _context(cfg, ctx, shape):
    if cfg.nu == 0:
        return 0.0
    if ctx is None:
        raise ParameterError("nu > 0 requires a ContextBank")
    q = ctx.q if isinstance(ctx, ContextBank) else np.asarray(ctx)
    if isinstance(ctx, ContextBank) and ctx.m < 1:
        raise ParameterError("ContextBank is empty")
    if q.shape[-2:] != tuple(shape[-2:]):
        raise DimensionError(f"context spectrum shape {q.shape} does not match {shape}")
    return q


def _terms(cfg, F1, F2, q=None):
    """Numerator, denominator and guard magnitude of ``R = num / den``."""
    X = F1 * np.conj(F2)
    m = cfg.method
    if m == "scc":
        return X, np.ones(X.shape), 0.0
    if m in ("pc", "spof", "rpc"):
        mag = np.abs(X)
        g = _guard(cfg, mag)
        den = (np.sqrt(mag) if m == "spof" else mag) + g
        num = _target(cfg, X.shape) * X if m == "rpc" else X
        return num, den, float(np.max(g, initial=0.0))
    if m == "cspc":
        mag = np.abs(X)
        den = mag ** cfg.rho + cfg.epsilon
        g = 0.0
        if cfg.epsilon == 0 and cfg.guard:
            garr = _guard(cfg, mag)
            den = den + garr
            g = float(np.max(garr, initial=0.0))
        return X, den, g
    if m == "cfcc":
        num = _target(cfg, X.shape) * X
        return num, power_spectrum(F1) + cfg.lam, 0.0
    # sbcc
    G = _target(cfg, X.shape)
    D = _difference_weight(cfg, X.shape)
    Q = _context(cfg, q, X.shape)
    num = 2.0 * (G + D) * X
    den = power_spectrum(F1) + power_spectrum(F2) + 2.0 * cfg.lam + 2.0 * D + 2.0 * cfg.nu * Q
    return num, den, 0.0


def response_spectrum(cfg, F1, F2, ctx=None, strict=True):
    """Frequency response ``R`` of estimator ``cfg`` for spectra ``F1, F2``.

    With ``strict=True`` a zero denominator bin raises
    :class:`DegenerateDenominatorError`.  With ``strict=False`` the return
    value is ``(R, degenerate)`` where ``degenerate`` is a boolean per batch
    element and offending bins of ``R`` are set to zero.
    """
    F1, F2 = _spectra(F1, F2)
    num, den, _ = _terms(cfg, F1, F2, ctx)
    den = np.broadcast_to(den, num.shape)
    bad = ~(den > 0)
    if strict:
        if np.any(bad):
            idx = np.argwhere(bad)[0]
            raise DegenerateDenominatorError(f"{cfg.label}: zero denominator", idx)
        return num / den
    safe = np.where(bad, 1.0, den)
    R = np.where(bad, 0.0, num / safe)
    degenerate = np.any(bad, axis=(-2, -1))
    return R, degenerate


def planes_from_response(R):
    """Spatial planes from frequency responses (batch axes allowed).

    Returns ``(planes, imag_residual)``; the residual is the largest
    discarded imaginary magnitude per plane.
    """
    # ifft(conj(R))[d] == conj(ifft(R)[-d]): the response F1 F2* peaks at -d,
    # this reads it at +d.
    z = np.fft.ifft2(np.conj(R), axes=(-2, -1))
    planes = np.fft.fftshift(z.real, axes=(-2, -1))
    resid = np.max(np.abs(z.imag), axis=(-2, -1))
    return planes, resid


def _finish(cfg, R, guard):
    planes, resid = planes_from_response(R)
    return CorrelationPlane(planes, method=cfg.label, guard=guard,
                            imag_residual=float(np.max(resid)), response=R)


def _correlate(cfg, f1, f2, ctx):
    F1, F2 = _spectra(f1, f2)
    num, den, guard = _terms(cfg, F1, F2, ctx)
    den = np.broadcast_to(den, num.shape)
    bad = ~(den > 0)
    if np.any(bad):
        raise DegenerateDenominatorError(f"{cfg.label}: zero denominator", np.argwhere(bad)[0])
    return _finish(cfg, num / den, guard)


def gcc_correlate(cfg, f1, f2):
    """SCC, PC, SPOF, RPC or CSPC plane for spectra ``f1, f2``."""
    if cfg.method not in GCC_METHODS:
        raise ParameterError(f"gcc_correlate does not handle {cfg.method!r}")
    return _correlate(cfg, f1, f2, None)


def cfcc_correlate(cfg, f1, f2):
    """``G F1 F2* / (F1 F1* + lam)``: ``f1`` is the filtered image, ``f2`` is untouched."""
    if cfg.method != "cfcc":
        raise ParameterError(f"cfcc_correlate called with method {cfg.method!r}")
    return _correlate(cfg, f1, f2, None)


def sbcc_correlate(cfg, f1, f2, ctx=None):
    """Closed-form SBCC plane.

    ``R = 2 (G + mu |G_d|^2) F1 F2* / (|F1|^2 + |F2|^2 + 2 lam + 2 mu |G_d|^2 + 2 nu Q)``.
    The context bank is only consulted when ``nu > 0``.
    """
    if cfg.method != "sbcc":
        raise ParameterError(f"sbcc_correlate called with method {cfg.method!r}")
    return _correlate(cfg, f1, f2, ctx)


def correlate(cfg, f1, f2, ctx=None):
    """Dispatch to the estimator named by ``cfg.method``."""
    if cfg.method == "sbcc":
        return sbcc_correlate(cfg, f1, f2, ctx)
    if cfg.method == "cfcc":
        return cfcc_correlate(cfg, f1, f2)
    return gcc_correlate(cfg, f1, f2)


def correlate_windows(cfg, w1, w2, ctx=None):
    """Transform two spatial windows and correlate them."""
    return correlate(cfg, np.fft.fft2(w1), np.fft.fft2(w2), ctx)


def mosse_filter(g, templates, lam):
    """MOSSE filter ``S`` with ``conj(S) = sum G T_i* / (sum T_i T_i* + lam)``.

    Parameters
    ----------
    g : GaussianSpec or array_like
        Desired response spectrum.
    templates : sequence of array_like
        Template spectra ``T_i``.
    lam : float
        Regularization weight.
    """
    templates = [np.asarray(t, dtype=complex) for t in templates]
    if not templates:
        raise ParameterError("mosse_filter needs at least one template")
    if lam < 0:
        raise ParameterError("lam must be non-negative")
    G = np.asarray(getattr(g, "spectrum", g))
    num = sum(G * np.conj(t) for t in templates)
    den = sum(power_spectrum(t) for t in templates) + lam
    den = np.broadcast_to(den, num.shape)
    if np.any(den <= 0):
        raise DegenerateDenominatorError("mosse: zero denominator", np.argwhere(den <= 0)[0])
    return np.conj(num / den)


def sbcc_surrogates(cfg, f1, f2, ctx=None):
    """Surrogate spectra ``(S1, S2)`` that accompany the closed-form response.

    ``S1 = (F2 R + conj(G) F1 + mu|G_d|^2 F1) / A`` and
    ``conj(S2) = (conj(F1) R + G conj(F2) + mu|G_d|^2 conj(F2)) / A`` with
    ``A = |F1|^2 + |F2|^2 + lam + mu|G_d|^2 + nu Q``.
    """
    if cfg.method != "sbcc":
        raise ParameterError("sbcc_surrogates requires an sbcc config")
    F1, F2 = _spectra(f1, f2)
    R = response_spectrum(cfg, F1, F2, ctx)
    G = _target(cfg, F1.shape)
    D = _difference_weight(cfg, F1.shape)
    Q = _context(cfg, ctx, F1.shape)
    A = power_spectrum(F1) + power_spectrum(F2) + cfg.lam + D + cfg.nu * Q
    A = np.broadcast_to(A, F1.shape)
    if np.any(A <= 0):
        raise DegenerateDenominatorError("sbcc surrogate: zero denominator", np.argwhere(A <= 0)[0])
    s1 = (F2 * R + np.conj(G) * F1 + D * F1) / A
    s2c = (np.conj(F1) * R + G * np.conj(F2) + D * np.conj(F2)) / A
    return SurrogatePair(s1, np.conj(s2c))


def _objective_rows(cfg, F1, F2, ctx):
    """Per-bin least-squares rows of the SBCC objective.

    Unknowns are ``u = (S1, conj(S2), R)``.  Each squared term of the
    objective is written as ``|b_k - a_k . u|^2`` (conjugating the term where
    needed so it is linear in ``u``); returns ``(A, b)`` with shapes
    ``(..., K, 3)`` and ``(..., K)``.
    """
    G = np.broadcast_to(_target(cfg, F1.shape), F1.shape).astype(complex)
    Gd = gaussian_spectrum(F1.shape[-1], F1.shape[-2], cfg.sigma_d).spectrum
    Gd = np.broadcast_to(Gd, F1.shape)
    Q = np.broadcast_to(_context(cfg, ctx, F1.shape), F1.shape)
    zero = np.zeros(F1.shape, complex)
    one = np.ones(F1.shape, complex)
    sl, sm = np.sqrt(cfg.lam), np.sqrt(cfg.mu)
    snq = np.sqrt(cfg.nu * Q)

    rows = [
        # |G - F1 S1*|^2 == |G* - F1* S1|^2
        ((np.conj(F1), zero, zero), np.conj(G)),
        ((sl * one, zero, zero), zero),
        # mu |Gd F1 - Gd S1|^2
        ((sm * Gd * one, zero, zero), sm * Gd * F1),
        # nu/m sum |P_i S1*|^2 == |sqrt(nu Q) S1|^2
        ((snq * one, zero, zero), zero),
        # |G - F2 S2*|^2
        ((zero, F2, zero), G),
        ((zero, sl * one, zero), zero),
        # mu |Gd F2 - Gd S2|^2 == mu |Gd F2* - Gd S2*|^2 for real Gd
        ((zero, sm * Gd * one, zero), sm * Gd * np.conj(F2)),
        ((zero, snq * one, zero), zero),
        # |R - S1 F2*|^2 and |R - F1 S2*|^2
        ((np.conj(F2), zero, -one), zero),
        ((zero, F1, -one), zero),
    ]
    A = np.stack([np.stack(coeffs, axis=-1) for coeffs, _ in rows], axis=-2)
    b = np.stack([rhs for _, rhs in rows], axis=-1)
    return A, b


def sbcc_oracle(cfg, f1, f2, ctx=None):
    """Solve the SBCC objective bin by bin with a dense linear solver.

    The normal equations of the per-bin least-squares problem are the three
    zero-partial conditions in ``(S1, conj(S2), R)``; they are assembled from
    the objective terms and solved with :func:`numpy.linalg.solve`.  No part of
    the closed form is used.
    """
    if cfg.method != "sbcc":
        raise ParameterError("sbcc_oracle requires an sbcc config")
    F1, F2 = _spectra(f1, f2)
    A, b = _objective_rows(cfg, F1, F2, ctx)
    AH = np.conj(np.swapaxes(A, -1, -2))
    M = AH @ A
    rhs = (AH @ b[..., None])[..., 0]
    singular = ~(np.linalg.cond(M) < 1e15)
    if np.any(singular):
        raise DegenerateDenominatorError("sbcc oracle: singular per-bin system", np.argwhere(singular)[0])
    u = np.linalg.solve(M, rhs[..., None])[..., 0]
    s1, s2c, R = u[..., 0], u[..., 1], u[..., 2]
    return _finish(cfg, R, 0.0), SurrogatePair(s1, np.conj(s2c))


def normalize_plane(plane, w1, w2):
    """Attach a correlation-coefficient map to ``plane``.

    The data are divided by ``||w1 - mean(w1)|| * ||w2 - mean(w2)||`` and
    clamped to ``[-1 - 1e-9, 1 + 1e-9]``.  A zero-variance window marks the
    plane as unnormalizable instead.
    """
    w1 = np.asarray(w1, float)
    w2 = np.asarray(w2, float)
    n1 = np.linalg.norm(w1 - w1.mean())
    n2 = np.linalg.norm(w2 - w2.mean())
    if n1 == 0 or n2 == 0:
        return replace(plane, normalized=None, unnormalizable=True)
    lim = 1.0 + 1e-9
    coeff = np.clip(plane.data / (n1 * n2), -lim, lim)
    return replace(plane, normalized=coeff, unnormalizable=False)
