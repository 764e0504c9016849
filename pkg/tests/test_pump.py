import math

import numpy as np
import pytest

from biphoton.core import INFINITE, PumpParams, sigma_k_theory
from biphoton.errors import ConfigurationError
from biphoton.pump import (DiffuserSpec, FieldGrid, PumpMode, apply_phase_screen, degree_of_coherence,
                           ensemble_farfield_intensity, ensemble_statistics, far_field, gaussian_schell_farfield,
                           ground_truth_lc, make_ensemble, make_gaussian_beam)

W = 89e-6


def second_moment_std(image, pitch):
    h, w = image.shape
    x = (np.arange(w) - w // 2) * pitch
    p = image / image.sum()
    return math.sqrt(np.sum(p.sum(axis=0) * x**2))


@pytest.fixture(scope="module")
def beam256():
    return make_gaussian_beam(W, 256, 4e-6)


def test_gaussian_beam_peak_and_moment():
    beam = make_gaussian_beam(W, 512, 4e-6)
    inten = beam.intensity().values
    assert np.unravel_index(np.argmax(inten), inten.shape) == (256, 256)
    assert second_moment_std(inten, 4e-6) == pytest.approx(W, rel=0.01)


@pytest.mark.parametrize("waist", [8e-6, 600e-6])
def test_unresolvable_waist(waist):
    with pytest.raises(ConfigurationError):
        make_gaussian_beam(waist, 512, 4e-6)


def test_far_field_power_and_padding(beam256):
    p = beam256.power()
    assert far_field(beam256).power() == pytest.approx(p, rel=1e-10)
    padded = far_field(beam256, pad_to=512)
    assert padded.power() == pytest.approx(p, rel=1e-10)
    assert padded.pitch == pytest.approx(far_field(beam256).pitch / 2)


def test_far_field_width_of_coherent_gaussian(beam256):
    ff = far_field(beam256, pad_to=1024)
    std = second_moment_std(ff.intensity().values, ff.pitch)
    # intensity std 1/(2w): full width parameter sigma_p = 2 std = 1/w
    assert abs(2 * std - 1 / W) < ff.pitch


def test_far_field_camera_pitch_mapping(beam256):
    ff = far_field(beam256, 405e-9, 0.3)
    assert 2 * math.pi * ff.camera_pitch / (405e-9 * 0.3) == pytest.approx(ff.pitch, rel=1e-12)


def test_delta_gives_flat_magnitude():
    v = np.zeros((32, 32), complex)
    v[16, 16] = 1.0
    mag = np.abs(far_field(FieldGrid(v, 1e-6)).values)
    np.testing.assert_allclose(mag, mag[0, 0], rtol=1e-12)


def test_phase_screen_is_pure_phase(beam256):
    spec = DiffuserSpec(40e-6, 2.0, 2)
    out = apply_phase_screen(beam256, spec, 3)
    np.testing.assert_allclose(np.abs(out.values), np.abs(beam256.values), rtol=1e-12, atol=1e-300)
    assert not np.allclose(out.values, beam256.values)
    same = apply_phase_screen(beam256, DiffuserSpec(40e-6, 0.0), 3)
    np.testing.assert_array_equal(same.values, beam256.values)


def test_phase_screen_deterministic(beam256):
    spec = DiffuserSpec(40e-6, 2.0)
    np.testing.assert_array_equal(apply_phase_screen(beam256, spec, (1, 2)).values,
                                  apply_phase_screen(beam256, spec, (1, 2)).values)


def test_screen_correlation_must_be_resolved(beam256):
    with pytest.raises(ConfigurationError):
        apply_phase_screen(beam256, DiffuserSpec(6e-6, 1.0), 0)


def test_ensemble_size_rules(beam256):
    spec = DiffuserSpec(100e-6)
    with pytest.raises(ConfigurationError):
        make_ensemble(beam256, "coherent", realizations=2)
    with pytest.raises(ConfigurationError):
        make_ensemble(beam256, "rotating", spec, realizations=4)
    with pytest.raises(ConfigurationError):
        make_ensemble(beam256, "rotating")
    assert len(make_ensemble(beam256, "rotating", spec, realizations=4, allow_small=True)) == 4


def test_coherent_farfield_is_single_spot(beam256):
    img = ensemble_farfield_intensity(make_ensemble(beam256, PumpMode.COHERENT)).values
    c = img.shape[0] // 2
    assert np.argmax(img) == np.ravel_multi_index((c, c), img.shape)
    assert img[img > 0.5 * img.max()].size < 40


def test_single_rotating_realization_equals_static(beam256):
    spec = DiffuserSpec(60e-6, 2 * math.pi)
    rot = make_ensemble(beam256, "rotating", spec, realizations=1, seed=5, allow_small=True)
    static = make_ensemble(beam256, "static_speckle", spec, seed=5)
    np.testing.assert_array_equal(ensemble_farfield_intensity(rot).values,
                                  ensemble_farfield_intensity(static).values)


@pytest.fixture(scope="module")
def layered(beam256):
    out = {}
    for layers in (1, 2, 3):
        spec = DiffuserSpec(300e-6, 2 * math.pi / 3, layers)
        ens = make_ensemble(beam256, "rotating", spec, realizations=48, seed=11)
        out[layers] = ensemble_statistics(ens)
    return out


def test_rotating_spot_broadens_with_layers(layered):
    widths = [second_moment_std(layered[n][0].values, layered[n][0].pitch) for n in (1, 2, 3)]
    assert widths[0] < widths[1] < widths[2]


def test_ground_truth_lc_decreases_with_layers(layered):
    lcs = [layered[n][1] for n in (1, 2, 3)]
    assert lcs[0] > lcs[1] > lcs[2]
    for n, lc in zip((1, 2, 3), lcs):
        assert lc == pytest.approx(DiffuserSpec(300e-6, 2 * math.pi / 3, n).expected_lc, rel=0.25)


def test_ground_truth_lc_coherent_cases(beam256):
    assert ground_truth_lc(make_ensemble(beam256, "coherent")) == INFINITE
    ens = make_ensemble(beam256, "rotating", DiffuserSpec(100e-6, 0.0), realizations=32)
    assert ground_truth_lc(ens) == INFINITE


def test_degree_of_coherence_starts_at_one(beam256):
    ens = make_ensemble(beam256, "rotating", DiffuserSpec(60e-6), realizations=32)
    d, mu = degree_of_coherence(ens)
    assert d[0] == 0 and mu[0] == pytest.approx(1.0, rel=1e-9)
    assert mu[-1] < 0.2


def test_strong_diffuser_matches_expected_lc():
    beam = make_gaussian_beam(W, 256, 2e-6)
    spec = DiffuserSpec.for_coherence_length(59e-6)
    lc = ground_truth_lc(make_ensemble(beam, "rotating", spec, realizations=64, seed=2), pad_to=512)
    assert lc == pytest.approx(59e-6, rel=0.1)


def test_workers_do_not_change_result(beam256):
    ens = make_ensemble(beam256, "rotating", DiffuserSpec(60e-6), realizations=32, seed=4)
    a = ensemble_farfield_intensity(ens, workers=1).values
    b = ensemble_farfield_intensity(ens, workers=4).values
    np.testing.assert_array_equal(a, b)


def test_gaussian_schell_farfield_width():
    pump = PumpParams(W, 59e-6)
    img = gaussian_schell_farfield(pump, 512, 500.0)
    assert second_moment_std(img.values, img.pitch) == pytest.approx(sigma_k_theory(pump), rel=1e-3)
