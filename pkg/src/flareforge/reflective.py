"""Reflective-flare ghost chains on the source-center symmetry axis.

Inter-surface reflections put ghost spots on the straight line through the
light source and the image center. A chain template stores each element as
a signed offset t along that axis: the element lands at c + t*(c - s), so
t = 0 is the center, t = +1 the point-reflection of the source. Templates
are parametric (disks, rings, arcs, iris polygons), which makes the
collinearity exact by construction and lets the whole template rotate its
shapes without leaving the axis.

Opacity follows the aperture-clipping rule: it grows linearly with the
source-element distance up to a threshold; beyond the threshold a
half-plane mask eats the far side of the element, producing the arcing
artifacts of a clipped light path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from .errors import DegenerateAxisError, ParameterError
from .scene import LightSource

GHOST_SHAPES = ("disk", "ring", "arc", "iris")

#: Shapes whose raster is invariant under rotation about their center.
_ROTATION_INVARIANT = ("disk", "ring")

TEMPLATE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class GhostElement:
    """One ghost in a chain.

    offset      -- signed position along the source-center axis; +1 is the
                   centrosymmetric point 2c - s
    radius      -- size in normalized image units, > 0
    color       -- linear RGB tint
    opacity     -- base opacity in [0, 1]
    shape       -- disk | ring | arc | iris
    orientation -- shape rotation relative to the placement axis, radians
    inner_frac  -- ring/arc inner radius as a fraction of radius
    arc_span    -- angular width of an arc, radians
    sides       -- vertex count of an iris polygon
    """

    offset: float
    radius: float
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    opacity: float = 0.5
    shape: str = "disk"
    orientation: float = 0.0
    inner_frac: float = 0.6
    arc_span: float = math.pi / 2
    sides: int = 6

    def __post_init__(self):
        if not 0.0 <= self.opacity <= 1.0:
            raise ParameterError("opacity must be in [0, 1]")
        if self.radius <= 0:
            raise ParameterError("radius must be > 0")
        if self.shape not in GHOST_SHAPES:
            raise ParameterError(f"shape must be one of {GHOST_SHAPES}")

    def rotation_invariant(self) -> bool:
        return self.shape in _ROTATION_INVARIANT

    def to_dict(self) -> dict:
        return {
            "offset": self.offset, "radius": self.radius, "color": list(self.color),
            "opacity": self.opacity, "shape": self.shape,
            "orientation": self.orientation, "inner_frac": self.inner_frac,
            "arc_span": self.arc_span, "sides": self.sides,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GhostElement":
        return cls(offset=d["offset"], radius=d["radius"], color=tuple(d["color"]),
                   opacity=d["opacity"], shape=d["shape"],
                   orientation=d.get("orientation", 0.0),
                   inner_frac=d.get("inner_frac", 0.6),
                   arc_span=d.get("arc_span", math.pi / 2),
                   sides=d.get("sides", 6))


@dataclass(frozen=True)
class GhostChain:
    """An ordered ghost template tied to one placement axis."""

    elements: tuple[GhostElement, ...]
    template_id: str
    rotation_free: bool = True

    def rotation_symmetric(self) -> bool:
        return all(e.rotation_invariant() for e in self.elements)

    def to_dict(self) -> dict:
        return {
            "id": self.template_id,
            "rotation_free": self.rotation_free,
            "elements": [e.to_dict() for e in self.elements],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GhostChain":
        return cls(elements=tuple(GhostElement.from_dict(e) for e in d["elements"]),
                   template_id=d["id"], rotation_free=d.get("rotation_free", True))


@dataclass(frozen=True)
class GhostLayer:
    """Rasterized ghost: premultiplied linear RGB plus its alpha and center."""

    image: np.ndarray
    alpha: np.ndarray
    center: tuple[float, float]  # normalized (u, v)
    element: GhostElement

    def center_px(self, size: int) -> tuple[float, float]:
        return (self.center[0] * size - 0.5, self.center[1] * size - 0.5)


def clip_opacity(element: GhostElement, source: LightSource,
                 threshold: float = 0.8) -> tuple[float, float]:
    """Aperture-clipping opacity rule for one placed element.

    Returns (effective opacity, clip fraction). Opacity ramps linearly
    from 0 at the source to the element's base opacity at distance =
    threshold (slope 1/threshold keeps it continuous there). Past the
    threshold a clip fraction in (0, 1] grows, later rendered as a
    half-plane mask removing the far side of the element.
    """
    if not 0.0 < threshold <= 1.0:
        raise ParameterError("threshold must be in (0, 1]")
    cx, cy = 0.5, 0.5
    sx, sy = source.position
    ex = cx + element.offset * (cx - sx)
    ey = cy + element.offset * (cy - sy)
    dist = math.hypot(ex - sx, ey - sy)
    opacity = element.opacity * min(dist / threshold, 1.0)
    clip_fraction = min(max(dist / threshold - 1.0, 0.0), 1.0)
    return min(max(opacity, 0.0), 1.0), clip_fraction


def _shape_coverage(element: GhostElement, size: int, center: tuple[float, float],
                    world_orientation: float) -> np.ndarray:
    """Anti-aliased coverage of an element, one-pixel soft edges."""
    xs = (np.arange(size) + 0.5) / size
    uu, vv = np.meshgrid(xs, xs, indexing="xy")
    du, dv = uu - center[0], vv - center[1]
    r = np.sqrt(du**2 + dv**2)
    px = 1.0 / size  # softening length

    def soft_inside(signed_dist):
        return np.clip(0.5 - signed_dist / px, 0.0, 1.0)

    if element.shape == "disk":
        return soft_inside(r - element.radius)
    if element.shape in ("ring", "arc"):
        outer = soft_inside(r - element.radius)
        inner = soft_inside(r - element.inner_frac * element.radius)
        cov = np.clip(outer - inner, 0.0, 1.0)
        if element.shape == "arc":
            ang = np.arctan2(dv, du) - world_orientation
            ang = (ang + np.pi) % (2 * np.pi) - np.pi
            # soften the angular cut over one pixel of arc length
            ang_soft = px / max(element.radius, px)
            cov = cov * np.clip(0.5 - (np.abs(ang) - element.arc_span / 2) / ang_soft,
                                0.0, 1.0)
        return cov
    if element.shape == "iris":
        k = max(element.sides, 3)
        sector = 2 * np.pi / k
        ang = np.arctan2(dv, du) - world_orientation
        local = (ang % sector) - sector / 2
        boundary = element.radius * math.cos(math.pi / k) / np.cos(local)
        return soft_inside(r - boundary)
    raise ParameterError(f"unknown shape {element.shape}")


def place_chain(chain: GhostChain, source: LightSource, image_size: int,
                clip_threshold: float | None = None) -> list[GhostLayer]:
    """Rasterize a chain for one source.

    Element t lands at c + t*(c - s); shapes are oriented relative to the
    source-center axis. With a clip_threshold, clip_opacity drives both
    the opacity ramp and the far-side half-plane mask.
    """
    sx, sy = source.position
    cx, cy = 0.5, 0.5
    ax, ay = cx - sx, cy - sy
    axis_len = math.hypot(ax, ay)
    if axis_len < 1e-12:
        if not (chain.rotation_symmetric() or chain.rotation_free):
            raise DegenerateAxisError(
                f"source at image center leaves template {chain.template_id!r} "
                "without an orientation axis")
        axis_angle, ax, ay = 0.0, 1.0, 0.0
    else:
        axis_angle = math.atan2(ay, ax)
        ax, ay = ax / axis_len, ay / axis_len

    layers = []
    for element in chain.elements:
        center = (cx + element.offset * (cx - sx), cy + element.offset * (cy - sy))
        if clip_threshold is not None:
            opacity, clip_fraction = clip_opacity(element, source, clip_threshold)
        else:
            opacity, clip_fraction = element.opacity, 0.0
        coverage = _shape_coverage(element, image_size, center,
                                   axis_angle + element.orientation)
        if clip_fraction > 0.0:
            coverage = coverage * _halfplane_keep(image_size, center, (ax, ay),
                                                  element.radius, clip_fraction)
        alpha = coverage * opacity
        image = alpha[..., None] * np.asarray(element.color, dtype=float)
        layers.append(GhostLayer(image=image, alpha=alpha, center=center,
                                 element=element))
    return layers


def _halfplane_keep(size: int, center: tuple[float, float], axis: tuple[float, float],
                    radius: float, clip_fraction: float) -> np.ndarray:
    """Soft mask keeping the near side of the cut line.

    The cut runs perpendicular to the placement axis at signed distance
    h = radius*(1 - 2*clip_fraction) from the element center; the far side
    (along +axis, away from the source) is removed.
    """
    xs = (np.arange(size) + 0.5) / size
    uu, vv = np.meshgrid(xs, xs, indexing="xy")
    proj = (uu - center[0]) * axis[0] + (vv - center[1]) * axis[1]
    h = radius * (1.0 - 2.0 * clip_fraction)
    return np.clip(0.5 - (proj - h) * size, 0.0, 1.0)


def clipped_disk_area(radius: float, clip_fraction: float) -> float:
    """Analytic area removed from a disk by the clipping half-plane."""
    h = radius * (1.0 - 2.0 * clip_fraction)
    if h >= radius:
        return 0.0
    if h <= -radius:
        return math.pi * radius**2
    return radius**2 * math.acos(h / radius) - h * math.sqrt(radius**2 - h**2)


def place_chain_uniform(chain: GhostChain, image_size: int, seed: int,
                        source: LightSource | None = None,
                        clip_threshold: float | None = None) -> list[GhostLayer]:
    """Random-placement baseline: element centers i.i.d. uniform in the frame.

    The opacity/clipping rule still applies (distances measured from the
    source to the random center; the clip axis points from the source to
    the element). Collinearity is deliberately absent.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    layers = []
    for element in chain.elements:
        center = (float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 1.0)))
        opacity, clip_fraction = element.opacity, 0.0
        ax, ay = 1.0, 0.0
        if clip_threshold is not None and source is not None:
            dx, dy = center[0] - source.position[0], center[1] - source.position[1]
            dist = math.hypot(dx, dy)
            opacity = element.opacity * min(dist / clip_threshold, 1.0)
            clip_fraction = min(max(dist / clip_threshold - 1.0, 0.0), 1.0)
            if dist > 1e-12:
                ax, ay = dx / dist, dy / dist
        coverage = _shape_coverage(element, image_size, center, element.orientation)
        if clip_fraction > 0.0:
            coverage = coverage * _halfplane_keep(image_size, center, (ax, ay),
                                                  element.radius, clip_fraction)
        alpha = coverage * opacity
        image = alpha[..., None] * np.asarray(element.color, dtype=float)
        layers.append(GhostLayer(image=image, alpha=alpha, center=center,
                                 element=element))
    return layers


def rotate_template(chain: GhostChain, angle: float) -> GhostChain:
    """Rotate every element's shape in place; positions stay on the axis."""
    rotated = tuple(replace(e, orientation=e.orientation + angle)
                    for e in chain.elements)
    return GhostChain(elements=rotated, template_id=chain.template_id,
                      rotation_free=chain.rotation_free)


def random_rotate_template(chain: GhostChain, seed: int) -> GhostChain:
    """Seeded uniform rotation of the whole template."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return rotate_template(chain, float(rng.uniform(0.0, 2.0 * math.pi)))


def perpendicular_deviation_px(centers, source_uv, size: int) -> float:
    """Largest distance (pixels) of placed centers from the source-center line."""
    sx, sy = source_uv
    ax, ay = 0.5 - sx, 0.5 - sy
    norm = math.hypot(ax, ay)
    if norm < 1e-12:
        return 0.0
    nx, ny = -ay / norm, ax / norm
    worst = 0.0
    for (ux, vy) in centers:
        worst = max(worst, abs((ux - sx) * nx + (vy - sy) * ny))
    return worst * size


# --- template library -------------------------------------------------------

def _chain(template_id, rotation_free, *elements) -> GhostChain:
    return GhostChain(elements=tuple(elements), template_id=template_id,
                      rotation_free=rotation_free)


def builtin_templates() -> list[GhostChain]:
    """Ten parametric chains: disk / ring / arc / iris mixes.

    Offsets, sizes and tints are visual-tuning defaults; collinearity and
    the opacity rule are the load-bearing structure.
    """
    e = GhostElement
    return [
        _chain("disk-train", True,
               e(0.30, 0.020, (0.4, 0.8, 1.0), 0.45),
               e(0.60, 0.032, (0.5, 0.7, 1.0), 0.40),
               e(1.00, 0.050, (0.7, 0.8, 1.0), 0.35)),
        _chain("cool-ring", True,
               e(0.55, 0.060, (0.3, 0.6, 1.0), 0.35, "ring", inner_frac=0.75),
               e(1.00, 0.028, (0.5, 0.9, 1.0), 0.50)),
        _chain("rainbow-arcs", False,
               e(0.45, 0.080, (1.0, 0.4, 0.4), 0.30, "arc", arc_span=1.8),
               e(0.50, 0.086, (0.4, 1.0, 0.4), 0.30, "arc", arc_span=1.8),
               e(0.55, 0.092, (0.4, 0.4, 1.0), 0.30, "arc", arc_span=1.8)),
        _chain("iris-train", False,
               e(0.25, 0.018, (1.0, 0.8, 0.5), 0.45, "iris", sides=6),
               e(0.55, 0.030, (1.0, 0.7, 0.4), 0.40, "iris", sides=6),
               e(0.85, 0.044, (1.0, 0.6, 0.4), 0.35, "iris", sides=6),
               e(1.20, 0.060, (1.0, 0.5, 0.3), 0.30, "iris", sides=6)),
        _chain("double-ring", True,
               e(0.70, 0.055, (0.6, 0.9, 0.8), 0.35, "ring", inner_frac=0.7),
               e(1.15, 0.080, (0.5, 0.8, 1.0), 0.28, "ring", inner_frac=0.8)),
        _chain("bead-spread", True,
               e(0.20, 0.012, (0.9, 0.9, 1.0), 0.50),
               e(0.40, 0.014, (0.8, 0.9, 1.0), 0.46),
               e(0.60, 0.016, (0.7, 0.9, 1.0), 0.42),
               e(0.80, 0.018, (0.6, 0.9, 1.0), 0.38),
               e(1.00, 0.020, (0.5, 0.9, 1.0), 0.34)),
        _chain("halo-pair", True,
               e(0.90, 0.110, (0.5, 0.7, 0.9), 0.18),
               e(1.00, 0.040, (0.9, 0.95, 1.0), 0.45, "ring", inner_frac=0.65)),
        _chain("arc-burst", False,
               e(0.65, 0.070, (1.0, 0.7, 0.3), 0.32, "arc", arc_span=2.4),
               e(0.95, 0.095, (1.0, 0.5, 0.5), 0.26, "arc", arc_span=2.0),
               e(1.30, 0.120, (0.9, 0.4, 0.7), 0.20, "arc", arc_span=1.6)),
        _chain("mixed-chain", False,
               e(0.35, 0.024, (0.9, 0.8, 1.0), 0.42),
               e(0.70, 0.048, (0.6, 0.8, 1.0), 0.34, "ring", inner_frac=0.7),
               e(1.00, 0.040, (1.0, 0.8, 0.5), 0.38, "iris", sides=8),
               e(1.35, 0.090, (0.8, 0.5, 1.0), 0.22, "arc", arc_span=2.2)),
        _chain("far-ghost", True,
               e(1.40, 0.100, (0.4, 0.9, 0.7), 0.30)),
    ]


def save_templates(chains, path) -> None:
    """Write a template file (JSON, one record per chain)."""
    payload = {
        "schema_version": TEMPLATE_SCHEMA_VERSION,
        "templates": [c.to_dict() for c in chains],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_templates(path=None) -> list[GhostChain]:
    """Read a template file; with no path, the packaged defaults."""
    if path is None:
        text = resources.files("flareforge.data").joinpath("ghost_templates.json").read_text()
        payload = json.loads(text)
    else:
        with open(path) as fh:
            payload = json.load(fh)
    if payload.get("schema_version") != TEMPLATE_SCHEMA_VERSION:
        raise ParameterError(f"unsupported template schema: {payload.get('schema_version')}")
    return [GhostChain.from_dict(d) for d in payload["templates"]]
