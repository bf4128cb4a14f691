import math

import numpy as np
import pytest

from flareforge import (ContaminationSpec, OilSpec, ParameterError, TiltSpec,
                        apply_tilt, contaminate, diffract, make_clean_pupil,
                        tilt_shift)
from flareforge.diffraction import kernel_to_png16, load_kernel, save_kernel
from flareforge.pupil import PupilField

EXTENT = 5.0
LAM = 540.0


def tilt_for_bins(bins, wavelength_nm=LAM, extent_mm=EXTENT):
    """Incidence angle whose kernel shift is the given number of bins."""
    return math.asin(bins * wavelength_nm * 1e-6 / extent_mm)


def random_amplitude_pupil(seed, n=128):
    return contaminate(make_clean_pupil(n, EXTENT),
                       ContaminationSpec(seed=seed, oil=OilSpec(count=0)))


def random_pupil(seed, n=128):
    return contaminate(make_clean_pupil(n, EXTENT), ContaminationSpec(seed=seed))


def test_clean_pupil_peaks_at_center():
    k = diffract(make_clean_pupil(128, EXTENT), (LAM,), 35.0)
    assert np.unravel_index(k.intensity[0].argmax(), (128, 128)) == (64, 64)


def test_square_subaperture_matches_dirichlet():
    # oracle: closed-form Dirichlet kernel of a width-k box along the axis
    n, k = 128, 24
    grid = np.zeros((n, n), dtype=complex)
    lo = n // 2 - k // 2
    grid[lo:lo + k, lo:lo + k] = 1.0
    kern = diffract(PupilField(grid=grid, extent_mm=EXTENT), (LAM,), 35.0)
    row = kern.intensity[0][n // 2, :]

    u = np.arange(n) - n // 2
    with np.errstate(divide="ignore", invalid="ignore"):
        dirichlet = np.where(u == 0, k, np.sin(np.pi * u * k / n)
                             / np.sin(np.pi * u / n))
    analytic = dirichlet**2 * k**2 / n**2
    assert np.abs(row - analytic).max() / analytic.max() < 1e-6


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_parseval_energy(seed):
    p = random_pupil(seed)
    k = diffract(p, (LAM,), 35.0)
    # direct-sum oracle on both sides of the identity
    pupil_energy = sum(abs(v) ** 2 for v in p.grid.ravel())
    assert abs(k.intensity[0].sum() - pupil_energy) / pupil_energy < 1e-9


def test_diffract_validations():
    p = make_clean_pupil(64, EXTENT)
    with pytest.raises(ParameterError):
        diffract(p, (), 35.0)
    with pytest.raises(ParameterError):
        diffract(p, (300.0,), 35.0)
    with pytest.raises(ParameterError):
        diffract(p, (LAM,), -1.0)


def test_intensity_nonnegative_and_normalization_field():
    k = diffract(random_pupil(3), (610.0, 540.0, 470.0), 35.0)
    assert np.all(k.intensity >= 0)
    assert np.allclose(k.normalization, k.intensity.sum(axis=(1, 2)))
    # plane scale = lambda * f / extent, in mm per sample
    assert k.plane_scales_mm[1] == pytest.approx(540e-6 * 35.0 / EXTENT)


def test_zero_tilt_is_identity():
    k = diffract(random_pupil(4), (LAM,), 35.0)
    out = tilt_shift(k, TiltSpec(theta=(0.0, 0.0)))
    assert np.array_equal(out.intensity, k.intensity)


def test_integer_bin_shift_bit_exact_roll():
    k = diffract(random_pupil(5), (LAM,), 35.0)
    out = tilt_shift(k, TiltSpec(theta=(tilt_for_bins(7), tilt_for_bins(-3))))
    rolled = np.roll(k.intensity[0], (-3, 7), axis=(0, 1))
    assert np.array_equal(out.intensity[0], rolled)


@pytest.mark.parametrize("seed,bins", [(0, 2.31), (1, -6.77), (2, 11.5)])
def test_similarity_theorem_fractional(seed, bins):
    # physical route (tilt the pupil, then diffract) vs shifting the kernel
    p = random_pupil(seed)
    tilt = TiltSpec(theta=(tilt_for_bins(bins), tilt_for_bins(bins / 3)))
    direct = diffract(apply_tilt(p, tilt, LAM), (LAM,), 35.0)
    shifted = tilt_shift(diffract(p, (LAM,), 35.0), tilt)
    err = np.abs(direct.intensity[0] - shifted.intensity[0]).max()
    assert err / shifted.intensity[0].max() < 1e-6


def test_opposite_tilts_mirror_for_real_pupils():
    # real (amplitude-only) screens give centrosymmetric kernels, so +/- alpha
    # tilts land as point reflections of each other about the grid center
    k = diffract(random_amplitude_pupil(11), (LAM,), 35.0)
    theta = tilt_for_bins(7.3)
    plus = tilt_shift(k, TiltSpec(theta=(theta, 0.0)))
    minus = tilt_shift(k, TiltSpec(theta=(-theta, 0.0)))
    mirrored = np.roll(plus.intensity[0][::-1, ::-1], (1, 1), axis=(0, 1))
    assert np.abs(mirrored - minus.intensity[0]).max() < 1e-9


def test_diffract_quadratic_in_amplitude():
    p = random_pupil(6, n=64)
    scaled = PupilField(grid=0.5 * p.grid, extent_mm=p.extent_mm)
    k1 = diffract(p, (LAM,), 35.0)
    k2 = diffract(scaled, (LAM,), 35.0)
    assert np.allclose(k2.intensity, 0.25 * k1.intensity, rtol=1e-12, atol=1e-15)


def test_fractional_shift_preserves_energy():
    k = diffract(random_pupil(7), (LAM,), 35.0)
    out = tilt_shift(k, TiltSpec(theta=(tilt_for_bins(4.63), 0.0)))
    assert out.intensity[0].sum() == pytest.approx(k.intensity[0].sum(), rel=1e-12)
    assert np.all(out.intensity >= 0)


def test_chromatic_planes_shift_differently():
    k = diffract(random_pupil(8), (610.0, 470.0), 35.0)
    theta = tilt_for_bins(10, wavelength_nm=610.0)
    out = tilt_shift(k, TiltSpec(theta=(theta, 0.0)))
    # 610 nm moves exactly 10 bins; 470 nm moves 10 * 610/470 bins
    assert np.array_equal(out.intensity[0], np.roll(k.intensity[0], 10, axis=1))
    assert not np.array_equal(out.intensity[1], np.roll(k.intensity[1], 10, axis=1))


def test_pad_mode_zeroes_wrapped_strip():
    k = diffract(random_pupil(9, n=64), (LAM,), 35.0)
    out = tilt_shift(k, TiltSpec(theta=(tilt_for_bins(5), 0.0)), mode="pad")
    assert np.all(out.intensity[0][:, :5] == 0.0)
    assert out.intensity[0].sum() < k.intensity[0].sum()
    with pytest.raises(ParameterError):
        tilt_shift(k, TiltSpec(theta=(0.0, 0.0)), mode="bogus")


def test_u0_definition():
    tilt = TiltSpec(theta=(0.2, -0.1))
    u0x, u0y = tilt.u0(LAM)
    assert u0x == pytest.approx(math.sin(0.2) / (LAM * 1e-6))
    assert u0y == pytest.approx(math.sin(-0.1) / (LAM * 1e-6))


def test_png16_and_raw_export(tmp_path):
    from PIL import Image

    k = diffract(random_pupil(10, n=64), (610.0, 540.0, 470.0), 35.0)
    png = tmp_path / "kernel.png"
    kernel_to_png16(k, png, wavelength_index=1)
    img = Image.open(png)
    assert img.mode.startswith("I;16") or img.mode == "I"
    assert img.size == (64, 64)

    raw = tmp_path / "kernel.npz"
    save_kernel(k, raw)
    loaded = load_kernel(raw)
    assert loaded.wavelengths_nm == k.wavelengths_nm
    assert np.allclose(loaded.intensity, k.intensity, rtol=1e-6, atol=1e-4)
