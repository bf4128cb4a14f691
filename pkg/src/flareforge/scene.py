"""Night-scene light sources and per-source scattering-flare placement.

Every source in a scene reuses one flare kernel: its tilt (from the source
position) translates the kernel, its intensity scales it, its chromaticity
tints it. That is the similarity effect: one contaminated pupil, many
copies of the same pattern across the field.

Coordinates: positions are (u, v) in the unit square, u along columns,
v along rows, (0.5, 0.5) at image center. A pixel center sits at
(i + 0.5) / size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffraction import FlareKernel, TiltSpec, tilt_shift
from .errors import ParameterError

SOURCE_SHAPES = ("point", "disk", "streak")

#: Warm-to-cool LED chromaticities (each sums to 1).
DEFAULT_PALETTE = (
    (0.50, 0.33, 0.17),   # sodium-ish warm
    (0.44, 0.35, 0.21),   # warm white
    (0.36, 0.34, 0.30),   # neutral white
    (0.30, 0.33, 0.37),   # cool white
    (0.26, 0.32, 0.42),   # daylight LED
    (0.22, 0.28, 0.50),   # blue-heavy sign
)


@dataclass(frozen=True)
class LightSource:
    """One emitter: position in the unit square, linear intensity > 0,
    chromaticity summing to 1, angular radius in normalized image units."""

    position: tuple[float, float]
    intensity: float = 1.0
    color: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    radius: float = 0.0
    shape: str = "point"
    angle: float = 0.0  # streak orientation, radians

    def __post_init__(self):
        u, v = self.position
        if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
            raise ParameterError(f"position {self.position} outside unit square")
        if self.intensity <= 0:
            raise ParameterError("intensity must be > 0")
        if self.radius < 0:
            raise ParameterError("radius must be >= 0")
        if abs(sum(self.color) - 1.0) > 1e-6:
            raise ParameterError(f"color {self.color} must sum to 1")
        if self.shape not in SOURCE_SHAPES:
            raise ParameterError(f"shape must be one of {SOURCE_SHAPES}")

    def to_dict(self) -> dict:
        return {
            "position": list(self.position),
            "intensity": self.intensity,
            "color": list(self.color),
            "radius": self.radius,
            "shape": self.shape,
            "angle": self.angle,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LightSource":
        return cls(position=tuple(d["position"]), intensity=d["intensity"],
                   color=tuple(d["color"]), radius=d["radius"],
                   shape=d["shape"], angle=d.get("angle", 0.0))


@dataclass(frozen=True)
class SceneSpec:
    """A sampled scene: 1..K sources, the seed that produced them, and the
    full field of view in radians."""

    sources: tuple[LightSource, ...]
    seed: int
    fov: float

    def __post_init__(self):
        if len(self.sources) < 1:
            raise ParameterError("scene needs at least one source")
        if not 0.0 < self.fov < math.pi:
            raise ParameterError("fov must be in (0, pi)")

    def to_dict(self) -> dict:
        return {
            "sources": [s.to_dict() for s in self.sources],
            "seed": self.seed,
            "fov": self.fov,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(sources=tuple(LightSource.from_dict(s) for s in d["sources"]),
                   seed=d["seed"], fov=d["fov"])


@dataclass(frozen=True)
class SceneConfig:
    """Sampling distribution for sample_scene.

    Intensities are log-uniform (night scenes span orders of magnitude,
    an undocumented but stated default). Colors come from a small LED
    palette with jitter, renormalized to a chromaticity.
    """

    count_range: tuple[int, int] = (1, 8)
    position_range: tuple = ((0.0, 1.0), (0.0, 1.0))  # (u range, v range)
    intensity_range: tuple[float, float] = (0.2, 8.0)
    radius_range: tuple[float, float] = (0.0, 0.02)
    shape_weights: tuple[float, float, float] = (0.5, 0.4, 0.1)  # point, disk, streak
    palette: tuple = DEFAULT_PALETTE
    palette_jitter: float = 0.04
    fov: float = 0.0276  # matches a 256-sample, 5 mm pupil at 540 nm

    def __post_init__(self):
        lo, hi = self.count_range
        if not (1 <= lo <= hi):
            raise ParameterError(f"count range {self.count_range} is empty or < 1")
        if self.intensity_range[0] <= 0:
            raise ParameterError("intensities must be positive")
        for axis in self.position_range:
            if not 0.0 <= axis[0] <= axis[1] <= 1.0:
                raise ParameterError(f"position range {self.position_range} invalid")


def consistent_fov(n: int, extent_mm: float, wavelength_nm: float = 540.0) -> float:
    """Field of view for which the kernel grid and image grid coincide,
    i.e. a source's flare lands centered on the source."""
    lam_mm = wavelength_nm * 1e-6
    return 2.0 * math.atan(n * lam_mm / (2.0 * extent_mm))


def sample_scene(seed: int, config: SceneConfig = SceneConfig()) -> SceneSpec:
    """Draw a deterministic scene: K ~ uniform in count_range, positions
    uniform in the unit square, intensities log-uniform, palette colors."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    k = int(rng.integers(config.count_range[0], config.count_range[1] + 1))
    log_lo, log_hi = math.log(config.intensity_range[0]), math.log(config.intensity_range[1])
    weights = np.asarray(config.shape_weights, dtype=float)
    weights = weights / weights.sum()

    sources = []
    for _ in range(k):
        u = rng.uniform(*config.position_range[0])
        v = rng.uniform(*config.position_range[1])
        intensity = math.exp(rng.uniform(log_lo, log_hi))
        base = np.asarray(config.palette[rng.integers(0, len(config.palette))], dtype=float)
        jittered = np.clip(base + rng.uniform(-config.palette_jitter,
                                              config.palette_jitter, size=3), 1e-3, None)
        color = tuple(jittered / jittered.sum())
        radius = float(rng.uniform(*config.radius_range))
        shape = SOURCE_SHAPES[int(rng.choice(3, p=weights))]
        angle = float(rng.uniform(0.0, math.pi))
        sources.append(LightSource(position=(float(u), float(v)), intensity=intensity,
                                   color=color, radius=radius, shape=shape, angle=angle))
    return SceneSpec(sources=tuple(sources), seed=seed, fov=config.fov)


def position_to_tilt(source: LightSource, fov: float) -> TiltSpec:
    """Map a normalized position to per-axis incidence angles.

    theta = atan((coord - 0.5) * 2 * tan(fov/2)); the center is on-axis,
    the frame edge reaches +-fov/2 exactly.
    """
    if not 0.0 < fov < math.pi:
        raise ParameterError("fov must be in (0, pi)")
    half_tan = math.tan(fov / 2.0)
    u, v = source.position
    return TiltSpec(theta=(math.atan((u - 0.5) * 2.0 * half_tan),
                           math.atan((v - 0.5) * 2.0 * half_tan)))


@dataclass(frozen=True)
class FlareLayer:
    """One placed scattering flare: linear-light RGB image plus its source."""

    image: np.ndarray
    source: LightSource


def planes_to_rgb(intensity: np.ndarray, wavelengths_nm) -> np.ndarray:
    """Collapse per-wavelength planes to an (n, n, 3) RGB stack.

    Three planes map directly (stored long-to-short = R, G, B); other
    counts are grouped by wavelength into long/mid/short thirds.
    """
    planes = np.asarray(intensity)
    if planes.shape[0] == 3:
        return np.stack([planes[0], planes[1], planes[2]], axis=-1)
    order = np.argsort(wavelengths_nm)[::-1]  # longest first
    if planes.shape[0] == 1:
        return np.repeat(planes[0][..., None], 3, axis=-1)
    if planes.shape[0] == 2:
        top, bot = planes[order[0]], planes[order[1]]
        return np.stack([top, 0.5 * (top + bot), bot], axis=-1)
    groups = np.array_split(order, 3)
    return np.stack([planes[g].mean(axis=0) for g in groups], axis=-1)


def _circular_disk_blur(plane: np.ndarray, radius_px: float) -> np.ndarray:
    """Circularly convolve with a unit-sum soft disk (extended source)."""
    n = plane.shape[0]
    c = n / 2.0
    yy, xx = np.mgrid[0:n, 0:n]
    r = np.sqrt((yy - c) ** 2 + (xx - c) ** 2)
    disk = 0.5 * (1.0 + np.cos(np.pi * np.clip(r - (radius_px - 0.5), 0.0, 1.0)))
    disk /= disk.sum()
    out = np.fft.ifft2(np.fft.fft2(plane) * np.fft.fft2(np.fft.ifftshift(disk))).real
    return np.maximum(out, 0.0)


def place_flare(kernel: FlareKernel, source: LightSource, fov: float,
                mode: str = "wrap") -> FlareLayer:
    """Translate, blur, tint and scale the kernel for one source."""
    shifted = tilt_shift(kernel, position_to_tilt(source, fov), mode=mode)
    rgb = planes_to_rgb(shifted.intensity, shifted.wavelengths_nm)
    if source.radius > 0:
        radius_px = source.radius * kernel.n
        rgb = np.stack([_circular_disk_blur(rgb[..., c], radius_px) for c in range(3)],
                       axis=-1)
    rgb = rgb * (np.asarray(source.color) * source.intensity)
    return FlareLayer(image=rgb, source=source)


def instantiate_flares(scene: SceneSpec, kernel: FlareKernel,
                       mode: str = "wrap") -> list[FlareLayer]:
    """One flare layer per source, all derived from the same kernel."""
    return [place_flare(kernel, src, scene.fov, mode=mode) for src in scene.sources]


def render_light_cores(scene: SceneSpec, size: int) -> list[FlareLayer]:
    """Rasterize the bare light sources (no flare) in linear light.

    The ground-truth convention: a source is its sampled disk (or point,
    or streak) at its color and intensity, soft-edged by one pixel.
    """
    layers = []
    xs = (np.arange(size) + 0.5) / size
    uu, vv = np.meshgrid(xs, xs, indexing="xy")
    min_radius = 1.5 / size
    for src in scene.sources:
        u, v = src.position
        if src.shape == "streak":
            half_len = max(src.radius, min_radius) * 4.0
            width = max(src.radius, min_radius) * 0.8
            ux, uy = math.cos(src.angle), math.sin(src.angle)
            du, dv = uu - u, vv - v
            along = np.clip(du * ux + dv * uy, -half_len, half_len)
            dist = np.sqrt((du - along * ux) ** 2 + (dv - along * uy) ** 2)
            edge = width / 2.0
        else:
            radius = max(src.radius, min_radius) if src.shape == "disk" else min_radius
            dist = np.sqrt((uu - u) ** 2 + (vv - v) ** 2)
            edge = radius
        t = np.clip((dist - edge) * size + 0.5, 0.0, 1.0)
        coverage = 0.5 * (1.0 + np.cos(np.pi * t))
        rgb = coverage[..., None] * (np.asarray(src.color) * src.intensity)
        layers.append(FlareLayer(image=rgb, source=src))
    return layers


def ncc_peak(a: np.ndarray, b: np.ndarray) -> float:
    """Peak normalized circular cross-correlation between two arrays.

    1.0 iff b is a circular translation of a times a positive gain.
    """
    fa = np.fft.fft2(a)
    fb = np.fft.fft2(b)
    corr = np.fft.ifft2(fa * np.conj(fb)).real
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(corr.max() / denom)
