"""Entrance-pupil screens: clean apertures and their contamination.

A pupil is a complex transmission field sampled on an N x N grid spanning
the physical aperture. Dust and scratches attenuate the amplitude, oil film
perturbs the phase. The downstream far-field propagation treats this field
as the diffraction screen, so everything here is about producing physically
plausible, strictly passive (|t| <= 1) screens, reproducibly from a seed.

Seeding rule: each contamination category draws from its own generator,
seeded with ``SeedSequence((seed, CATEGORY_INDEX))`` where the index is
0 = dust, 1 = scratches, 2 = oil. This keeps streams independent, so e.g.
changing the dust count never reshuffles the oil film.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ParameterError

#: Stream-split indices, one per contamination category.
_DUST_STREAM = 0
_SCRATCH_STREAM = 1
_OIL_STREAM = 2

#: Magic bytes of the raw pupil file format (see save_pupil).
PUPIL_MAGIC = b"FPUP"


def _category_rng(seed: int, stream: int) -> np.random.Generator:
    """PCG64 generator for one contamination category of one seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, stream))))


@dataclass(frozen=True)
class PupilField:
    """Complex transmission of the entrance pupil.

    grid            -- (n, n) complex128, |grid| in [0, 1], zero outside the
                       inscribed circular aperture
    extent_mm       -- physical side length of the grid (aperture diameter)
    wavelength_ref_nm -- reference wavelength the screen was designed at
    """

    grid: np.ndarray
    extent_mm: float
    wavelength_ref_nm: float = 540.0

    def __post_init__(self):
        n = self.grid.shape[0]
        if self.grid.ndim != 2 or self.grid.shape[1] != n:
            raise ParameterError("pupil grid must be square")
        _check_grid_size(n)
        if self.extent_mm <= 0:
            raise ParameterError("extent_mm must be positive")
        self.grid.setflags(write=False)

    @property
    def n(self) -> int:
        return self.grid.shape[0]

    @property
    def sample_pitch_mm(self) -> float:
        return self.extent_mm / self.n

    def energy(self) -> float:
        """Total transmitted energy, sum of |amplitude|^2."""
        return float(np.sum(np.abs(self.grid) ** 2))


def _check_grid_size(n: int):
    if n < 64 or (n & (n - 1)) != 0:
        raise ParameterError(f"grid size must be a power of two >= 64, got {n}")


def aperture_mask(n: int) -> np.ndarray:
    """Boolean mask of the circle inscribed in an n x n grid.

    A sample (i, j) is inside when (i - n/2)^2 + (j - n/2)^2 <= (n/2)^2,
    i.e. the aperture center sits at the FFT center bin (n/2, n/2).
    """
    c = n / 2.0
    yy, xx = np.mgrid[0:n, 0:n]
    return (yy - c) ** 2 + (xx - c) ** 2 <= c**2


def make_clean_pupil(n: int, extent_mm: float, wavelength_ref_nm: float = 540.0) -> PupilField:
    """Uncontaminated circular aperture: unit amplitude, zero phase.

    n must be a power of two >= 64; extent_mm is the aperture diameter.
    """
    _check_grid_size(n)
    if extent_mm <= 0:
        raise ParameterError("extent_mm must be positive")
    grid = np.where(aperture_mask(n), 1.0 + 0.0j, 0.0 + 0.0j)
    return PupilField(grid=grid, extent_mm=extent_mm, wavelength_ref_nm=wavelength_ref_nm)


def _check_range(name: str, rng: tuple) -> tuple[float, float]:
    lo, hi = float(rng[0]), float(rng[1])
    if not lo <= hi:
        raise ParameterError(f"{name} range must be a non-empty closed interval, got {rng}")
    return lo, hi


@dataclass(frozen=True)
class DustSpec:
    """Opaque/semi-opaque disks; radii in grid samples."""

    count: int = 40
    radius_range: tuple[float, float] = (1.0, 4.0)
    opacity_range: tuple[float, float] = (0.3, 1.0)


@dataclass(frozen=True)
class ScratchSpec:
    """Elongated low-transmission capsules; widths/lengths in grid samples.

    depth_range is the amplitude drop inside a scratch; the default is a
    visual-tuning choice, not a measured value.
    """

    count: int = 6
    width_range: tuple[float, float] = (0.6, 2.0)
    length_range: tuple[float, float] = (20.0, 120.0)
    orientation_range: tuple[float, float] = (0.0, np.pi)
    depth_range: tuple[float, float] = (0.5, 0.9)


@dataclass(frozen=True)
class OilSpec:
    """Smooth phase film: low-pass-filtered noise inside soft blobs.

    smoothness is the Gaussian low-pass sigma in samples; amplitude_rad is
    the peak phase perturbation. Amplitude is never touched.
    """

    count: int = 3
    smoothness: float = 8.0
    amplitude_rad: float = 1.5
    radius_range: tuple[float, float] = (10.0, 60.0)


@dataclass(frozen=True)
class ContaminationSpec:
    """Seeded recipe for dust + scratches + oil on one pupil.

    The same (seed, spec) always produces a bit-identical screen.
    """

    seed: int = 0
    dust: DustSpec = field(default_factory=DustSpec)
    scratches: ScratchSpec = field(default_factory=ScratchSpec)
    oil: OilSpec = field(default_factory=OilSpec)

    def __post_init__(self):
        for count in (self.dust.count, self.scratches.count, self.oil.count):
            if count < 0:
                raise ParameterError("contamination counts must be >= 0")
        _check_range("dust radius", self.dust.radius_range)
        _check_range("dust opacity", self.dust.opacity_range)
        _check_range("scratch width", self.scratches.width_range)
        _check_range("scratch length", self.scratches.length_range)
        _check_range("scratch orientation", self.scratches.orientation_range)
        _check_range("scratch depth", self.scratches.depth_range)
        _check_range("oil radius", self.oil.radius_range)
        if self.oil.smoothness <= 0:
            raise ParameterError("oil smoothness must be positive")


def soft_disk(n: int, cy: float, cx: float, radius: float) -> np.ndarray:
    """Coverage of a disk with a one-sample cosine edge, in [0, 1]."""
    yy, xx = np.mgrid[0:n, 0:n]
    r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    # 1 inside r-0.5, cosine ramp over one sample, 0 outside r+0.5
    t = np.clip(r - (radius - 0.5), 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def soft_capsule(n: int, cy: float, cx: float, length: float, width: float,
                 angle: float) -> np.ndarray:
    """Coverage of a line segment dilated to the given width (a capsule)."""
    yy, xx = np.mgrid[0:n, 0:n]
    ux, uy = np.cos(angle), np.sin(angle)
    dx, dy = xx - cx, yy - cy
    # distance to the segment of half-length L/2 through (cx, cy)
    along = np.clip(dx * ux + dy * uy, -length / 2.0, length / 2.0)
    dist = np.sqrt((dx - along * ux) ** 2 + (dy - along * uy) ** 2)
    t = np.clip(dist - (width / 2.0 - 0.5), 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def dust_params(spec: ContaminationSpec, n: int) -> list[tuple[float, float, float, float]]:
    """Seeded (cy, cx, radius, opacity) for each dust disk.

    Exposed so tests can rasterize the same disks independently.
    """
    rng = _category_rng(spec.seed, _DUST_STREAM)
    out = []
    for _ in range(spec.dust.count):
        cy, cx = rng.uniform(0, n), rng.uniform(0, n)
        radius = rng.uniform(*spec.dust.radius_range)
        opacity = rng.uniform(*spec.dust.opacity_range)
        out.append((cy, cx, radius, opacity))
    return out


def scratch_params(spec: ContaminationSpec, n: int) -> list[tuple[float, float, float, float, float, float]]:
    """Seeded (cy, cx, length, width, angle, depth) per scratch."""
    rng = _category_rng(spec.seed, _SCRATCH_STREAM)
    out = []
    for _ in range(spec.scratches.count):
        cy, cx = rng.uniform(0, n), rng.uniform(0, n)
        length = rng.uniform(*spec.scratches.length_range)
        width = rng.uniform(*spec.scratches.width_range)
        angle = rng.uniform(*spec.scratches.orientation_range)
        depth = rng.uniform(*spec.scratches.depth_range)
        out.append((cy, cx, length, width, angle, depth))
    return out


def _oil_phase(spec: ContaminationSpec, n: int) -> np.ndarray:
    """Band-limited random phase field, nonzero only inside soft blobs."""
    rng = _category_rng(spec.seed, _OIL_STREAM)
    noise = rng.standard_normal((n, n))
    smooth = gaussian_filter(noise, sigma=spec.oil.smoothness, mode="wrap")
    peak = np.max(np.abs(smooth))
    if peak > 0:
        smooth = smooth / peak
    blobs = np.zeros((n, n))
    for _ in range(spec.oil.count):
        cy, cx = rng.uniform(0, n), rng.uniform(0, n)
        radius = rng.uniform(*spec.oil.radius_range)
        blobs = np.maximum(blobs, soft_disk(n, cy, cx, radius))
    return spec.oil.amplitude_rad * smooth * blobs


def contaminate(pupil: PupilField, spec: ContaminationSpec) -> PupilField:
    """Apply one seeded contamination recipe to a pupil.

    Dust and scratches multiply the amplitude (never above 1), oil adds
    phase. Order is dust, scratches, oil; with amplitude and phase kept
    separate the order cannot change the result, it is fixed purely so
    identical inputs give identical bits.
    """
    grid = pupil.grid.copy()
    n = pupil.n

    transmission = None
    for cy, cx, radius, opacity in dust_params(spec, n):
        if transmission is None:
            transmission = np.ones((n, n))
        transmission *= 1.0 - opacity * soft_disk(n, cy, cx, radius)
    for cy, cx, length, width, angle, depth in scratch_params(spec, n):
        if transmission is None:
            transmission = np.ones((n, n))
        transmission *= 1.0 - depth * soft_capsule(n, cy, cx, length, width, angle)
    if transmission is not None:
        grid = grid * transmission

    if spec.oil.count > 0:
        grid = grid * np.exp(1j * _oil_phase(spec, n))

    return PupilField(grid=grid, extent_mm=pupil.extent_mm,
                      wavelength_ref_nm=pupil.wavelength_ref_nm)


def save_pupil(pupil: PupilField, path) -> None:
    """Write the raw pupil format.

    Layout: 16-byte header = magic b"FPUP", uint32 N, float32 extent_mm,
    float32 wavelength_ref_nm (all little-endian), followed by N*N
    interleaved (re, im) float32 pairs in row-major order.
    """
    header = PUPIL_MAGIC + struct.pack("<Iff", pupil.n, pupil.extent_mm,
                                       pupil.wavelength_ref_nm)
    interleaved = np.empty((pupil.n, pupil.n, 2), dtype="<f4")
    interleaved[..., 0] = pupil.grid.real
    interleaved[..., 1] = pupil.grid.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(interleaved.tobytes())


def load_pupil(path) -> PupilField:
    """Read a file written by save_pupil."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != PUPIL_MAGIC:
            raise ParameterError(f"not a pupil file: {path}")
        n, extent_mm, wavelength_ref_nm = struct.unpack("<Iff", header[4:])
        data = np.frombuffer(fh.read(), dtype="<f4").reshape(n, n, 2)
    grid = data[..., 0].astype(np.complex128) + 1j * data[..., 1].astype(np.complex128)
    return PupilField(grid=grid, extent_mm=float(extent_mm),
                      wavelength_ref_nm=float(wavelength_ref_nm))
