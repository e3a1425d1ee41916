import numpy as np
import pytest

from sbcc.correlators import correlate_windows, method_config
from sbcc.errors import ParameterError
from sbcc.pivgrid import GridSpec
from sbcc.synth import (BackgroundSpec, FlowSpec, NoiseSpec, ParticleSpec, generate_pair,
                        particle_count, render_particles)


def test_single_particle_render():
    img = render_particles(33, [(16, 16, 0.8)], d_p=4.0)
    assert np.unravel_index(np.argmax(img), img.shape) == (16, 16)
    assert img[16, 16] == pytest.approx(0.8, abs=1e-15)
    np.testing.assert_allclose(img, img.T, atol=1e-12)
    np.testing.assert_allclose(img, img[::-1, :], atol=1e-12)
    # radial symmetry: values depend on the squared distance only
    assert img[16, 19] == pytest.approx(img[19, 16], abs=1e-12)
    assert img[16, 21] == pytest.approx(img[13, 12], abs=1e-12)  # 5^2 = 3^2 + 4^2


def test_integrated_sampling_keeps_peak_at_pixel_centre():
    img = render_particles(33, [(16, 16, 1.0)], d_p=2.2, sampling="integrated")
    assert img[16, 16] == pytest.approx(1.0)


def test_empty_and_half_integer_render():
    assert np.all(render_particles(16, []) == 0)
    img = render_particles(22, [(10.5, 10.5, 1.0)], d_p=3.0)
    assert np.ptp(img[10:12, 10:12]) < 1e-14
    # mirror images about the half-integer centre: y -> 21 - y, x -> 21 - x
    np.testing.assert_allclose(img, img[::-1, :], atol=1e-14)
    np.testing.assert_allclose(img, img[:, ::-1], atol=1e-14)
    np.testing.assert_allclose(img, img.T, atol=1e-14)


def test_particle_count():
    assert particle_count(256, 0.02) == 1311


def test_uniform_truth_and_bounds():
    img1, img2, truth = generate_pair(256, ParticleSpec(rng_seed=1), FlowSpec("uniform", 5.25, 0))
    assert truth.shape == (15, 15)
    assert np.all(truth.u == 5.25) and np.all(truth.v == 0)
    for img in (img1, img2):
        assert img.min() >= 0 and img.max() <= 1


def test_zero_flow_identical_frames():
    img1, img2, _ = generate_pair(128, ParticleSpec(rng_seed=3), FlowSpec())
    np.testing.assert_array_equal(img1, img2)


def test_determinism():
    spec = ParticleSpec(rng_seed=9)
    noise = NoiseSpec(0.05, BackgroundSpec("mixed"), 0.1)
    a = generate_pair(128, spec, FlowSpec("uniform", 1.5, 0.5), noise)
    b = generate_pair(128, spec, FlowSpec("uniform", 1.5, 0.5), noise)
    for x, y in zip(a[:2], b[:2]):
        np.testing.assert_array_equal(x, y)


def test_particle_conservation():
    """Total intensity is preserved by a torus translation without loss."""
    spec = ParticleSpec(rng_seed=4, c_p=0.01)
    img1, img2, _ = generate_pair(128, spec, FlowSpec("uniform", 3.3, -1.7))
    assert img2.sum() == pytest.approx(img1.sum(), rel=2e-3)


def test_single_particle_displacement_fidelity():
    for d in [(3.3, -1.6), (-5.4, 2.2), (0.2, 6.7)]:
        a = render_particles(64, [(30.0, 30.0, 1.0)], d_p=2.2)
        b = render_particles(64, [(30.0 + d[0], 30.0 + d[1], 1.0)], d_p=2.2)
        plane = correlate_windows(method_config("scc"), a, b).data
        iy, ix = np.unravel_index(np.argmax(plane), plane.shape)
        assert (ix - 32, iy - 32) == (round(d[0]), round(d[1]))


def test_out_of_plane_loss_decorrelates():
    spec = ParticleSpec(rng_seed=6)
    a1, a2, _ = generate_pair(128, spec, FlowSpec())
    b1, b2, _ = generate_pair(128, spec, FlowSpec(), NoiseSpec(out_of_plane_loss=0.5))
    np.testing.assert_array_equal(a1, b1)
    assert np.corrcoef(b1.ravel(), b2.ravel())[0, 1] < 0.8


def test_background_shared_and_scaled():
    spec = ParticleSpec(rng_seed=8)
    clean1, clean2, _ = generate_pair(128, spec, FlowSpec("uniform", 2.0, 0.0))
    bg = BackgroundSpec("stripes", snr=2.0)
    img1, img2, _ = generate_pair(128, spec, FlowSpec("uniform", 2.0, 0.0), NoiseSpec(background=bg))
    pattern = bg.render(128, clean1)
    assert np.std(clean1) / np.std(pattern) == pytest.approx(2.0)
    np.testing.assert_allclose(img1, np.clip(clean1 + pattern, 0, 1))
    np.testing.assert_allclose(img2, np.clip(clean2 + pattern, 0, 1))


def test_flows():
    rot = FlowSpec("rotation", omega=0.01, center=(0.0, 0.0))
    u, v = rot.displacement(np.array([10.0]), np.array([0.0]), 64)
    assert (u[0], v[0]) == (0.0, pytest.approx(0.1))
    sh = FlowSpec("shear", shear=0.1, center=(0.0, 0.0))
    u, v = sh.displacement(np.array([3.0]), np.array([20.0]), 64)
    assert u[0] == pytest.approx(2.0) and v[0] == 0.0
    _, _, truth = generate_pair(64, ParticleSpec(), rot, grid=GridSpec(32, 32))
    assert truth.shape == (2, 2)


def test_validation():
    for bad in ({"c_p": 1.5}, {"c_p": 0.0}, {"d_p": 0.0}, {"sampling": "area"},
                {"intensity_peak": 2.0}):
        with pytest.raises(ParameterError):
            ParticleSpec(**bad)
    with pytest.raises(ParameterError):
        NoiseSpec(out_of_plane_loss=1.0)
    with pytest.raises(ParameterError):
        BackgroundSpec("plaid")
    with pytest.raises(ParameterError):
        FlowSpec("vortex")


def test_noise_spec_round_trip():
    spec = NoiseSpec(0.1, BackgroundSpec("blobs", 1.5, 7), 0.2)
    assert NoiseSpec.from_dict(spec.to_dict()) == spec
