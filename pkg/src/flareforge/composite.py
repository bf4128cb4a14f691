"""Blending flare layers onto clean plates to form training pairs.

Stray light is additive in linear radiance, so the compositor decodes the
8-bit plate with a gamma 2.2 power law, sums the layers, clips, and
re-encodes. The ground truth is the same plate, optionally plus the bare
light-source cores (no flare), so a pair differs exactly by the flare.

Masks: a pixel belongs to a region mask when any channel of any layer of
that region exceeds tau = 1/255 in linear light, or (for the flare mask)
when the 8-bit input and ground truth differ at all; the gamma curve is
steep near black, so the second clause keeps "outside the flare mask the
pair agrees within one code value" literally true.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import ParameterError

GAMMA = 2.2
MASK_THRESHOLD = 1.0 / 255.0


def srgb_decode(img: np.ndarray) -> np.ndarray:
    """8-bit sRGB-ish to linear radiance via the gamma 2.2 power law."""
    return (np.asarray(img, dtype=np.float64) / 255.0) ** GAMMA


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    """Linear radiance to 8-bit, clipping to [0, 1] first."""
    x = np.clip(linear, 0.0, 1.0) ** (1.0 / GAMMA)
    return np.rint(x * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class NoiseSpec:
    """Poisson-Gaussian sensor noise, one shared realization per pair."""

    photon_scale: float = 1000.0   # linear 1.0 maps to this many photons
    read_sigma: float = 2.0 / 255  # Gaussian sigma in linear units
    seed: int = 0


@dataclass
class CompositeOptions:
    light_source_in_gt: bool = True
    light_layers: tuple = ()
    exposure: float = 1.0
    mask_threshold: float = MASK_THRESHOLD
    noise: NoiseSpec | None = None


@dataclass
class DataPair:
    """A training pair: degraded input, ground truth, region masks.

    masks maps {"flare", "light", "ghost"} to boolean arrays. The linear
    fields are the clipped linear-light images behind the 8-bit ones,
    kept for exact layer-recovery checks; they are not serialized.
    """

    input: np.ndarray
    gt: np.ndarray
    masks: dict
    meta: dict = dataclass_field(default_factory=dict)
    input_linear: np.ndarray | None = None
    gt_linear: np.ndarray | None = None


def _layer_image(layer) -> np.ndarray:
    return layer.image if hasattr(layer, "image") else np.asarray(layer)


def _support_mask(layers, shape, tau: float) -> np.ndarray:
    mask = np.zeros(shape[:2], dtype=bool)
    for layer in layers:
        mask |= (_layer_image(layer) > tau).any(axis=-1)
    return mask


def _noise_delta(linear: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    photons = np.clip(linear, 0.0, None) * spec.photon_scale
    shot = (rng.poisson(photons) - photons) / spec.photon_scale
    read = rng.normal(0.0, spec.read_sigma, size=linear.shape)
    return shot + read


def compose(clean: np.ndarray, scatter_layers, ghost_layers,
            options: CompositeOptions = CompositeOptions()) -> DataPair:
    """Build one (input, ground truth, masks) pair from a clean plate.

    input = clean + exposure * (scatter + ghosts + light cores), clipped;
    gt = clean (+ light cores when light_source_in_gt). Noise, when
    enabled, adds one shared realization to both images so the pair stays
    pixel-aligned.
    """
    clean = np.asarray(clean)
    if clean.ndim != 3 or clean.shape[2] != 3:
        raise ParameterError("clean plate must be H x W x 3")
    shape = clean.shape
    scatter_layers = list(scatter_layers)
    ghost_layers = list(ghost_layers)
    light_layers = list(options.light_layers)
    for layer in (*scatter_layers, *ghost_layers, *light_layers):
        if _layer_image(layer).shape != shape:
            raise ParameterError(
                f"layer shape {_layer_image(layer).shape} != clean shape {shape}")

    clean_lin = srgb_decode(clean)
    add = np.zeros(shape, dtype=np.float64)
    for layer in (*scatter_layers, *ghost_layers, *light_layers):
        add += _layer_image(layer)
    add *= options.exposure

    cores = np.zeros(shape, dtype=np.float64)
    for layer in light_layers:
        cores += _layer_image(layer)
    cores *= options.exposure

    input_lin = clean_lin + add
    gt_lin = clean_lin + cores if options.light_source_in_gt else clean_lin.copy()

    if options.noise is not None:
        delta = _noise_delta(input_lin, options.noise)
        input_lin = input_lin + delta
        gt_lin = gt_lin + delta

    input_clipped = np.clip(input_lin, 0.0, 1.0)
    gt_clipped = np.clip(gt_lin, 0.0, 1.0)
    input8 = srgb_encode(input_clipped)
    gt8 = srgb_encode(gt_clipped)

    # layers are stored pre-exposure; compare against tau in output radiance
    tau = options.mask_threshold / options.exposure if options.exposure > 0 else np.inf
    flare_mask = _support_mask(scatter_layers, shape, tau)
    flare_mask |= _support_mask(ghost_layers, shape, tau)
    flare_mask |= _support_mask(light_layers, shape, tau)
    flare_mask |= (input8 != gt8).any(axis=-1)
    ghost_mask = _support_mask(ghost_layers, shape, tau)
    light_mask = _support_mask(light_layers, shape, tau)

    return DataPair(
        input=input8,
        gt=gt8,
        masks={"flare": flare_mask, "light": light_mask, "ghost": ghost_mask},
        meta={"light_source_in_gt": options.light_source_in_gt,
              "exposure": options.exposure,
              "noise": options.noise is not None},
        input_linear=input_clipped,
        gt_linear=gt_clipped,
    )
