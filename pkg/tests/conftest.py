import numpy as np
import pytest

from sbcc.synth import render_particles


def dft2_direct(w):
    """O(N^2)-per-bin DFT by explicit summation, used as an oracle."""
    w = np.asarray(w, complex)
    h, wd = w.shape
    y = np.arange(h)[:, None]
    x = np.arange(wd)[None, :]
    out = np.empty((h, wd), complex)
    for ky in range(h):
        for kx in range(wd):
            out[ky, kx] = np.sum(w * np.exp(-2j * np.pi * (ky * y / h + kx * x / wd)))
    return out


def particle_window(rng, size=32, n=20, d_p=2.6):
    parts = np.column_stack([rng.uniform(0, size, n), rng.uniform(0, size, n), np.ones(n)])
    return render_particles(size, parts, d_p=d_p, periodic=True, sampling="integrated")


def random_spectra(rng, shape=(16, 16), real=True):
    """Spectra of two random real windows (or raw complex noise)."""
    if real:
        return (np.fft.fft2(rng.standard_normal(shape)), np.fft.fft2(rng.standard_normal(shape)))
    return tuple(rng.standard_normal(shape) + 1j * rng.standard_normal(shape) for _ in range(2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
VERDICTS = {}


def verdict(n, ok, detail):
    line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    VERDICTS[n] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
