"""Far-field propagation of pupil screens into scattering-flare kernels.

The image-plane field is the 2-D Fourier transform of the pupil field; its
squared modulus is the flare kernel. Intensities are normalized by N^2 so
total kernel energy equals the pupil's transmitted energy (Parseval), which
makes "a passive screen cannot amplify" hold literally for kernels too.

A tilted incident plane wave multiplies the pupil by a linear phase, which
translates the far-field pattern without changing its shape. tilt_shift
realizes that translation directly on a kernel: integral-bin shifts are
circular rolls (exact), sub-sample shifts re-apply the phase ramp in the
pupil domain so the result is identical to diffracting the tilted pupil.

Axis convention: theta = (theta_x, theta_y) where x is the column axis and
y is the row axis; positive angles shift the pattern toward larger indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ParameterError
from .pupil import PupilField

#: Default chromatic sampling, long-to-short wavelength = R, G, B.
RGB_WAVELENGTHS_NM = (610.0, 540.0, 470.0)

_VISIBLE_NM = (380.0, 780.0)
_INTEGER_BIN_TOL = 1e-9


@dataclass(frozen=True)
class TiltSpec:
    """Incidence tilt of a plane wave, signed per image axis, radians."""

    theta: tuple[float, float]

    def u0(self, wavelength_nm: float) -> tuple[float, float]:
        """Spatial-frequency shift in cycles/mm, recomputed from theta."""
        lam_mm = wavelength_nm * 1e-6
        return (np.sin(self.theta[0]) / lam_mm, np.sin(self.theta[1]) / lam_mm)

    def shift_bins(self, wavelength_nm: float, extent_mm: float) -> tuple[float, float]:
        """Kernel translation in grid bins, (dx, dy)."""
        u0x, u0y = self.u0(wavelength_nm)
        return (u0x * extent_mm, u0y * extent_mm)


@dataclass(frozen=True)
class FlareKernel:
    """Per-wavelength scattering-flare intensity on the image plane.

    intensity       -- (W, n, n) float64, >= 0, DC at bin (n/2, n/2)
    wavelengths_nm  -- sampled wavelengths, one plane each
    focal_length_mm -- lens focal length used for plane scaling
    pupil_extent_mm -- physical extent of the source pupil grid
    normalization   -- (W,) total energy per wavelength
    plane_scales_mm -- (W,) image-plane sample pitch, lambda*f/(N*dx)
    field           -- (W, n, n) complex image-plane field; carried so that
                       sub-sample shifts stay exact, not part of the
                       public intensity contract
    """

    intensity: np.ndarray
    wavelengths_nm: tuple[float, ...]
    focal_length_mm: float
    pupil_extent_mm: float
    normalization: np.ndarray
    plane_scales_mm: np.ndarray
    field: np.ndarray

    def __post_init__(self):
        self.intensity.setflags(write=False)
        self.field.setflags(write=False)

    @property
    def n(self) -> int:
        return self.intensity.shape[1]

    @property
    def n_wavelengths(self) -> int:
        return self.intensity.shape[0]


def _intensity_of(field: np.ndarray, n: int) -> np.ndarray:
    return (field.real**2 + field.imag**2) / (n * n)


def diffract(pupil: PupilField, wavelengths_nm=RGB_WAVELENGTHS_NM,
             focal_length_mm: float = 35.0) -> FlareKernel:
    """Far-field kernel of a pupil screen.

    Every wavelength shares the same grid pattern (the transform of the
    screen); wavelengths differ in the recorded image-plane scale and in
    how later tilts translate each plane.
    """
    wavelengths = tuple(float(w) for w in wavelengths_nm)
    if len(wavelengths) == 0:
        raise ParameterError("need at least one wavelength")
    for w in wavelengths:
        if not _VISIBLE_NM[0] <= w <= _VISIBLE_NM[1]:
            raise ParameterError(f"wavelength {w} nm outside {_VISIBLE_NM}")
    if focal_length_mm <= 0:
        raise ParameterError("focal length must be positive")

    n = pupil.n
    plane = np.fft.fftshift(np.fft.fft2(pupil.grid))
    field = np.broadcast_to(plane, (len(wavelengths), n, n)).copy()
    intensity = _intensity_of(field, n)
    scales = np.array([w * 1e-6 * focal_length_mm / pupil.extent_mm for w in wavelengths])
    return FlareKernel(
        intensity=intensity,
        wavelengths_nm=wavelengths,
        focal_length_mm=focal_length_mm,
        pupil_extent_mm=pupil.extent_mm,
        normalization=intensity.sum(axis=(1, 2)),
        plane_scales_mm=scales,
        field=field,
    )


def _tilt_ramp(n: int, dx_bins: float, dy_bins: float) -> np.ndarray:
    """Pupil-domain linear phase producing a (dx, dy)-bin image shift."""
    c = np.arange(n) - n / 2.0
    ramp_x = np.exp(2j * np.pi * dx_bins * c / n)
    ramp_y = np.exp(2j * np.pi * dy_bins * c / n)
    return ramp_y[:, None] * ramp_x[None, :]


def apply_tilt(pupil: PupilField, tilt: TiltSpec, wavelength_nm: float) -> PupilField:
    """Multiply a pupil by the plane-wave phase ramp of an oblique incidence."""
    dx, dy = tilt.shift_bins(wavelength_nm, pupil.extent_mm)
    grid = pupil.grid * _tilt_ramp(pupil.n, dx, dy)
    return PupilField(grid=grid, extent_mm=pupil.extent_mm,
                      wavelength_ref_nm=pupil.wavelength_ref_nm)


def _shift_plane(field_plane: np.ndarray, dx: float, dy: float, n: int,
                 mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Shift one complex plane by (dx, dy) bins; returns (field, intensity)."""
    rx, ry = round(dx), round(dy)
    if abs(dx - rx) < _INTEGER_BIN_TOL and abs(dy - ry) < _INTEGER_BIN_TOL:
        shifted = np.roll(field_plane, (ry % n, rx % n), axis=(0, 1))
        intensity = None  # caller rolls the stored intensity for bit-exactness
    else:
        p = np.fft.ifft2(np.fft.ifftshift(field_plane))
        shifted = np.fft.fftshift(np.fft.fft2(p * _tilt_ramp(n, dx, dy)))
        intensity = _intensity_of(shifted, n)
    if mode == "pad":
        shifted = shifted.copy() if intensity is None else shifted
        _zero_wrapped(shifted, dx, dy)
        intensity = _intensity_of(shifted, n)
    return shifted, intensity


def _zero_wrapped(plane: np.ndarray, dx: float, dy: float) -> None:
    """Erase the strips that wrapped around, emulating translation off-grid."""
    n = plane.shape[0]
    for axis, d in ((1, dx), (0, dy)):
        w = int(np.ceil(abs(d))) % n if abs(d) < n else n
        if w == 0:
            continue
        sl = [slice(None), slice(None)]
        sl[axis] = slice(0, w) if d > 0 else slice(n - w, n)
        plane[tuple(sl)] = 0.0


def tilt_shift(kernel: FlareKernel, tilt: TiltSpec, mode: str = "wrap") -> FlareKernel:
    """Translate a kernel by the image-plane displacement of a tilt.

    Each wavelength plane moves by its own bin count (longer wavelengths
    move less), so off-axis kernels acquire chromatic separation. mode
    "wrap" (default) is circular and energy-preserving; "pad" zeroes the
    wrapped-in strips for open-frame realism.
    """
    if mode not in ("wrap", "pad"):
        raise ParameterError(f"unknown shift mode {mode!r}")
    n = kernel.n
    new_field = np.empty_like(kernel.field)
    new_intensity = np.empty_like(kernel.intensity)
    for w, lam in enumerate(kernel.wavelengths_nm):
        dx, dy = tilt.shift_bins(lam, kernel.pupil_extent_mm)
        shifted, intensity = _shift_plane(kernel.field[w], dx, dy, n, mode)
        new_field[w] = shifted
        if intensity is None:
            rx, ry = round(dx) % n, round(dy) % n
            intensity = np.roll(kernel.intensity[w], (ry, rx), axis=(0, 1))
        new_intensity[w] = intensity
    return FlareKernel(
        intensity=new_intensity,
        wavelengths_nm=kernel.wavelengths_nm,
        focal_length_mm=kernel.focal_length_mm,
        pupil_extent_mm=kernel.pupil_extent_mm,
        normalization=new_intensity.sum(axis=(1, 2)),
        plane_scales_mm=kernel.plane_scales_mm.copy(),
        field=new_field,
    )


def kernel_to_png16(kernel: FlareKernel, path, wavelength_index: int = 0) -> None:
    """Tone-mapped 16-bit grayscale PNG of one wavelength plane.

    Normalizes to the plane maximum and applies gamma 1/2.2 for display.
    """
    plane = kernel.intensity[wavelength_index]
    peak = plane.max()
    mapped = (plane / peak) ** (1.0 / 2.2) if peak > 0 else plane
    img = (mapped * 65535.0 + 0.5).astype(np.uint16)
    Image.fromarray(img).save(path)


def save_kernel(kernel: FlareKernel, path) -> None:
    """Raw float32 export (npz) for pipeline use."""
    np.savez(
        path,
        intensity=kernel.intensity.astype(np.float32),
        wavelengths_nm=np.array(kernel.wavelengths_nm),
        focal_length_mm=kernel.focal_length_mm,
        pupil_extent_mm=kernel.pupil_extent_mm,
        plane_scales_mm=kernel.plane_scales_mm,
    )


def load_kernel(path) -> FlareKernel:
    """Rebuild a kernel from save_kernel output.

    The complex field is reconstructed as sqrt(intensity) with zero phase:
    good enough for compositing; sub-sample tilt_shift exactness only holds
    for kernels that kept their original field.
    """
    with np.load(path) as data:
        intensity = data["intensity"].astype(np.float64)
        wavelengths = tuple(float(w) for w in data["wavelengths_nm"])
        focal = float(data["focal_length_mm"])
        extent = float(data["pupil_extent_mm"])
        scales = data["plane_scales_mm"].copy()
    n = intensity.shape[1]
    field = np.sqrt(intensity * n * n).astype(np.complex128)
    return FlareKernel(
        intensity=intensity,
        wavelengths_nm=wavelengths,
        focal_length_mm=focal,
        pupil_extent_mm=extent,
        normalization=intensity.sum(axis=(1, 2)),
        plane_scales_mm=scales,
        field=field,
    )
