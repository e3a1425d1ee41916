"""Synthetic particle image pairs for Monte Carlo assessment.

Particles are isotropic Gaussians with standard deviation ``d_p / 4``
(``d_p`` is the e^-2 diameter), either sampled at pixel centres or averaged
over the pixel footprint.  The image plane is treated as a
torus: particles leaving one edge re-enter on the opposite edge, so a
uniform displacement gives an exact periodic translation and every
interrogation window has a known partner.
"""
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import erf

from .errors import ParameterError
from .pivgrid import GridSpec, VectorField, grid_centers

__all__ = [
    "ParticleSpec",
    "FlowSpec",
    "NoiseSpec",
    "BackgroundSpec",
    "render_particles",
    "generate_pair",
    "particle_count",
]


@dataclass(frozen=True)
class ParticleSpec:
    d_p: float = 2.2
    c_p: float = 0.02
    intensity_peak: float = 1.0
    rng_seed: int = 0
    sampling: str = "integrated"

    def __post_init__(self):
        if self.sampling not in ("point", "integrated"):
            raise ParameterError(f"unknown particle sampling {self.sampling!r}")
        if not self.d_p > 0:
            raise ParameterError(f"particle diameter must be positive, got {self.d_p}")
        if not 0 < self.c_p < 1:
            raise ParameterError(f"seeding density must lie in (0, 1), got {self.c_p}")
        if not 0 < self.intensity_peak <= 1:
            raise ParameterError(f"intensity_peak must lie in (0, 1], got {self.intensity_peak}")

    @property
    def sigma(self):
        return self.d_p / 4.0


@dataclass(frozen=True)
class FlowSpec:
    """Analytic displacement field in pixels per frame.

    ``uniform`` uses ``(u, v)``; ``rotation`` is a solid-body rotation by
    ``omega`` radians about ``center``; ``shear`` is ``u = shear * (y - cy)``.
    ``center`` defaults to the image centre.
    """

    kind: str = "uniform"
    u: float = 0.0
    v: float = 0.0
    omega: float = 0.0
    shear: float = 0.0
    center: tuple = None

    def __post_init__(self):
        if self.kind not in ("uniform", "rotation", "shear"):
            raise ParameterError(f"unknown flow kind {self.kind!r}")

    def displacement(self, x, y, size):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if self.kind == "uniform":
            return np.full(x.shape, float(self.u)), np.full(y.shape, float(self.v))
        cx, cy = self.center if self.center is not None else ((size - 1) / 2.0,) * 2
        if self.kind == "rotation":
            return -self.omega * (y - cy), self.omega * (x - cx)
        return self.shear * (y - cy), np.zeros(y.shape)


@dataclass(frozen=True)
class BackgroundSpec:
    """Recipe for a static additive pattern shared by both frames.

    ``kind`` is ``"stripes"`` (a few random plane waves), ``"blobs"``
    (smoothed white noise) or ``"mixed"`` (their sum).  The pattern is scaled
    so that ``std(clean frame 1) / std(pattern) == snr``.
    """

    kind: str = "stripes"
    snr: float = 2.0
    seed: int = 12345

    def __post_init__(self):
        if self.kind not in ("stripes", "blobs", "mixed"):
            raise ParameterError(f"unknown background kind {self.kind!r}")
        if not self.snr > 0:
            raise ParameterError("background snr must be positive")

    def pattern(self, size):
        """Unit-variance, zero-mean pattern for a ``size x size`` image."""
        rng = np.random.default_rng(self.seed)
        yy, xx = np.mgrid[0:size, 0:size].astype(float)
        parts = []
        if self.kind in ("stripes", "mixed"):
            waves = np.zeros((size, size))
            for _ in range(3):
                theta = rng.uniform(0, np.pi)
                wavelength = rng.uniform(4.0, 10.0)
                phase = rng.uniform(0, 2 * np.pi)
                k = 2 * np.pi / wavelength
                waves += np.cos(k * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
            parts.append(waves)
        if self.kind in ("blobs", "mixed"):
            blobs = gaussian_filter(rng.standard_normal((size, size)), 2.0, mode="wrap")
            parts.append(blobs)
        out = np.zeros((size, size))
        for part in parts:
            part = part - part.mean()
            out += part / part.std()
        out -= out.mean()
        return out / out.std()

    def render(self, size, reference):
        """Scaled pattern, shifted to be non-negative so clamping at zero
        does not eat its lower half."""
        out = self.pattern(size) * (np.std(reference) / self.snr)
        return out - out.min()


@dataclass(frozen=True)
class NoiseSpec:
    """Contamination applied after rendering.

    ``background`` may be a :class:`BackgroundSpec` or a fixed array; either
    way the same pattern is added to both frames.
    """

    gaussian_sigma: float = 0.0
    background: object = None
    out_of_plane_loss: float = 0.0

    def __post_init__(self):
        if not self.gaussian_sigma >= 0:
            raise ParameterError("gaussian_sigma must be non-negative")
        if not 0 <= self.out_of_plane_loss < 1:
            raise ParameterError("out_of_plane_loss must lie in [0, 1)")

    def to_dict(self):
        bg = self.background
        if bg is not None and not isinstance(bg, BackgroundSpec):
            raise ParameterError("only BackgroundSpec backgrounds are serializable")
        return {
            "gaussian_sigma": self.gaussian_sigma,
            "background": asdict(bg) if bg is not None else None,
            "out_of_plane_loss": self.out_of_plane_loss,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        bg = data.get("background")
        if bg is not None:
            data["background"] = BackgroundSpec(**bg)
        return cls(**data)


def particle_count(size, c_p):
    return int(round(c_p * size * size))


def _profiles(coords, size, sigma, periodic, sampling):
    grid = np.arange(size, dtype=float)
    d = grid[None, :] - coords[:, None]
    if periodic:
        d = (d + size / 2.0) % size - size / 2.0
    if sampling == "point":
        return np.exp(-(d * d) / (2.0 * sigma * sigma))
    # Mean of the Gaussian over the pixel footprint, scaled so that a
    # particle centred on a pixel still gives that pixel its peak value.
    s = np.sqrt(2.0) * sigma
    cover = erf((d + 0.5) / s) - erf((d - 0.5) / s)
    return cover / (2.0 * erf(0.5 / s))


def render_particles(size, particles, d_p=2.2, periodic=True, sampling="point"):
    """Render Gaussian particles into a ``size x size`` image.

    Parameters
    ----------
    size : int
        Image edge length in pixels.
    particles : array_like, shape (n, 3)
        Rows of ``(x, y, peak)``; ``x`` is the column coordinate, pixel
        centres sit on integers.
    d_p : float
        Particle image diameter; the Gaussian standard deviation is ``d_p/4``.
    periodic : bool
        Wrap particle tails around the image edges.
    sampling : {"point", "integrated"}
        ``"point"`` samples ``exp(-r^2 / 2 sigma^2)`` at pixel centres;
        ``"integrated"`` averages it over each pixel (per axis), normalized so
        a pixel-centred particle keeps its peak value.  Point sampling loses
        particles that fall between pixel centres once ``d_p`` drops below
        about one pixel.
    """
    size = int(size)
    parts = np.asarray(particles, float).reshape(-1, 3)
    if len(parts) == 0:
        return np.zeros((size, size))
    sigma = d_p / 4.0
    gx = _profiles(parts[:, 0], size, sigma, periodic, sampling)
    gy = _profiles(parts[:, 1], size, sigma, periodic, sampling)
    # sum_p peak_p * gy_p[row] * gx_p[col]
    img = (gy * parts[:, 2:3]).T @ gx
    return np.clip(img, 0.0, 1.0)


def generate_pair(size, particle, flow, noise=None, grid=None):
    """Render a seeded image pair and the true displacement on a grid.

    Returns ``(image1, image2, truth)`` where ``truth`` samples the flow at
    the centres of ``grid`` (default 32/16).
    """
    noise = noise or NoiseSpec()
    grid = grid or GridSpec()
    size = int(size)
    rng = np.random.default_rng(particle.rng_seed)
    n = particle_count(size, particle.c_p)
    pos = rng.uniform(0.0, size, size=(n, 2))
    x1, y1 = pos[:, 0], pos[:, 1]
    u, v = flow.displacement(x1, y1, size)
    x2 = (x1 + u) % size
    y2 = (y1 + v) % size
    n_lost = int(round(noise.out_of_plane_loss * n))
    if n_lost:
        lost = rng.choice(n, n_lost, replace=False)
        fresh = rng.uniform(0.0, size, size=(n_lost, 2))
        x2[lost], y2[lost] = fresh[:, 0], fresh[:, 1]
    peak = np.full(n, particle.intensity_peak)
    img1 = render_particles(size, np.column_stack([x1, y1, peak]), particle.d_p,
                            sampling=particle.sampling)
    img2 = render_particles(size, np.column_stack([x2, y2, peak]), particle.d_p,
                            sampling=particle.sampling)

    if noise.gaussian_sigma > 0:
        img1 = img1 + rng.normal(0.0, noise.gaussian_sigma, img1.shape)
        img2 = img2 + rng.normal(0.0, noise.gaussian_sigma, img2.shape)
    bg = noise.background
    if bg is not None:
        pattern = bg.render(size, img1) if isinstance(bg, BackgroundSpec) else np.asarray(bg, float)
        img1 = img1 + pattern
        img2 = img2 + pattern
    img1 = np.clip(img1, 0.0, 1.0)
    img2 = np.clip(img2, 0.0, 1.0)

    xs, ys = grid_centers((size, size), grid)
    tu, tv = flow.displacement(xs, ys, size)
    truth = VectorField(xs, ys, tu, tv)
    return img1, img2, truth
