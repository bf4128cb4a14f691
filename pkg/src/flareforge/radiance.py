"""Desk-scale differentiable voxel radiance field.

A scene is a density grid sigma (per unit length) and an RGB color grid,
trilinearly interpolated. A ray accumulates color front to back:

    T_i = exp(-sum_{j<i} sigma_j * delta_j)
    C   = sum_i T_i * (1 - exp(-sigma_i * delta_i)) * c_i

The alpha weights plus the final transmittance are a partition of unity,
so the renderer conserves energy exactly. Fitting minimizes mean squared
photometric error by plain fixed-step gradient descent, with densities
living behind a softplus and colors behind a sigmoid; gradients are
analytic through the quadrature, no autodiff.

Ghosts injected into rendered views follow the centrosymmetric placement
of the reflective module, recomputed per view from the projected light
source. Because those placements move against the background flow, a
multi-view fit has no consistent voxel explanation for them and converges
to the ghost-free scene.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DivergenceError, ParameterError
from .reflective import GhostChain, place_chain
from .scene import LightSource

DEFAULT_BOUNDS = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
PSNR_CAP = 100.0


# --- core types -------------------------------------------------------------

@dataclass(frozen=True)
class Ray:
    """A view ray with unit direction and a sampling interval."""

    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        if o.shape != (3,) or d.shape != (3,):
            raise ParameterError("ray origin/direction must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ParameterError("ray direction must be unit length")
        if not self.t_near < self.t_far:
            raise ParameterError("degenerate ray: t_near must be < t_far")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass
class VoxelField:
    """Density and color grids on R^3 nodes spanning an axis-aligned box."""

    density: np.ndarray            # (R, R, R), >= 0
    color: np.ndarray              # (R, R, R, 3), in [0, 1]
    bounds: tuple = DEFAULT_BOUNDS

    def __post_init__(self):
        if self.density.ndim != 3 or self.color.shape != self.density.shape + (3,):
            raise ParameterError("density must be (R,R,R), color (R,R,R,3)")
        if np.any(self.density < 0):
            raise ParameterError("density must be >= 0")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise ParameterError("colors must be in [0, 1]")

    @property
    def resolution(self) -> int:
        return self.density.shape[0]

    @classmethod
    def zeros(cls, resolution: int = 32, bounds=DEFAULT_BOUNDS) -> "VoxelField":
        r = resolution
        return cls(density=np.zeros((r, r, r)),
                   color=np.full((r, r, r, 3), 0.5), bounds=bounds)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; rotation columns are (right, down, forward)."""

    position: np.ndarray
    rotation: np.ndarray
    width: int
    height: int
    focal_px: float

    @classmethod
    def look_at(cls, position, target, width: int, height: int,
                fov_deg: float = 40.0, up=(0.0, 1.0, 0.0)) -> "Camera":
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        forward /= np.linalg.norm(forward)
        right = np.cross(np.asarray(up, dtype=np.float64), forward)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward], axis=1)
        focal = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls(position=position, rotation=rot, width=width, height=height,
                   focal_px=focal)

    def ray_directions(self) -> np.ndarray:
        """(H*W, 3) unit directions through all pixel centers."""
        xs = (np.arange(self.width) + 0.5) - self.width / 2.0
        ys = (np.arange(self.height) + 0.5) - self.height / 2.0
        xx, yy = np.meshgrid(xs, ys, indexing="xy")
        cam = np.stack([xx / self.focal_px, yy / self.focal_px,
                        np.ones_like(xx)], axis=-1).reshape(-1, 3)
        world = cam @ self.rotation.T
        return world / np.linalg.norm(world, axis=1, keepdims=True)

    def project(self, point) -> tuple[float, float, float]:
        """Normalized (u, v) image position and camera-space depth."""
        p = self.rotation.T @ (np.asarray(point, dtype=np.float64) - self.position)
        depth = p[2]
        if depth <= 0:
            return (math.nan, math.nan, depth)
        u = (p[0] / depth * self.focal_px + self.width / 2.0) / self.width
        v = (p[1] / depth * self.focal_px + self.height / 2.0) / self.height
        return (u, v, depth)


@dataclass
class ViewSet:
    """Cameras plus their observed images and any injected-ghost records."""

    cameras: list
    images: np.ndarray                      # (V, H, W, 3) linear in [0, 1]
    ghost_records: list = dataclass_field(default_factory=list)

    def __post_init__(self):
        if len(self.cameras) < 8:
            raise ParameterError("a view set needs at least 8 views")
        if self.images.shape[0] != len(self.cameras):
            raise ParameterError("one image per camera required")
        if not self.ghost_records:
            self.ghost_records = [None] * len(self.cameras)


# --- sampling machinery ------------------------------------------------------

def _aabb_clip(origins, dirs, bounds):
    """Entry/exit distances of rays against the field box; inf where missed."""
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - origins) / dirs
        t1 = (hi - origins) / dirs
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    tmin = np.maximum(tmin, 1e-6)
    valid = tmax > tmin
    return tmin, tmax, valid


def _trilinear(points, resolution, bounds):
    """Node indices (S, 8) and weights (S, 8) for trilinear interpolation.

    Weights are zeroed for points outside the bounds, which makes outside
    space empty and gradient-free.
    """
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    g = (points - lo) / (hi - lo) * (resolution - 1)
    inside = np.all((g >= 0.0) & (g <= resolution - 1.0), axis=1)
    g = np.clip(g, 0.0, resolution - 1.0)
    i0 = np.minimum(g.astype(np.int64), resolution - 2)
    f = g - i0
    idx = np.empty((points.shape[0], 8), dtype=np.int64)
    w = np.empty((points.shape[0], 8), dtype=np.float64)
    r2 = resolution * resolution
    for corner, (cx, cy, cz) in enumerate(itertools.product((0, 1), repeat=3)):
        idx[:, corner] = ((i0[:, 0] + cx) * r2 + (i0[:, 1] + cy) * resolution
                          + (i0[:, 2] + cz))
        w[:, corner] = (np.where(cx, f[:, 0], 1 - f[:, 0])
                        * np.where(cy, f[:, 1], 1 - f[:, 1])
                        * np.where(cz, f[:, 2], 1 - f[:, 2]))
    w[~inside] = 0.0
    return idx, w


def _sample_times(t_near, t_far, n_samples: int, rng) -> np.ndarray:
    """Stratified (or midpoint, when rng is None) sample positions (Nr, n)."""
    t_near = np.atleast_1d(np.asarray(t_near, dtype=np.float64))
    t_far = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    frac = np.arange(n_samples) / n_samples
    if rng is None:
        jitter = np.full((t_near.shape[0], n_samples), 0.5)
    else:
        jitter = rng.uniform(0.0, 1.0, size=(t_near.shape[0], n_samples))
    span = (t_far - t_near)[:, None]
    return t_near[:, None] + (frac[None, :] + jitter / n_samples) * span


def _composite(sigma, color, deltas):
    """Front-to-back alpha compositing of per-sample density and color.

    Returns (C, weights, trans, trans_final) where trans[i] is the
    transmittance before sample i and trans_final after the last one.
    """
    alpha = 1.0 - np.exp(-sigma * deltas)
    keep = 1.0 - alpha
    inclusive = np.cumprod(keep, axis=-1)
    trans = np.concatenate([np.ones_like(inclusive[..., :1]),
                            inclusive[..., :-1]], axis=-1)
    weights = trans * alpha
    c = np.einsum("rn,rnc->rc", weights, color)
    return c, weights, trans, inclusive[..., -1]


def _field_samples(density_flat, color_flat, idx, w):
    sigma = np.einsum("sk,sk->s", density_flat[idx], w)
    col = np.einsum("skc,sk->sc", color_flat[idx], w)
    return sigma, col


def batch_render(field: VoxelField, origins, dirs, t_near, t_far,
                 n_samples: int, rng=None):
    """Render many rays; returns (colors (Nr, 3), final transmittance (Nr,))."""
    if n_samples < 2:
        raise ParameterError("n_samples must be >= 2")
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    t = _sample_times(t_near, t_far, n_samples, rng)
    t_far_arr = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    deltas = np.diff(np.concatenate([t, t_far_arr[:, None]], axis=1), axis=1)
    points = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    idx, w = _trilinear(points.reshape(-1, 3), field.resolution, field.bounds)
    sigma, col = _field_samples(field.density.reshape(-1),
                                field.color.reshape(-1, 3), idx, w)
    nr = origins.shape[0]
    c, _, _, t_final = _composite(sigma.reshape(nr, n_samples),
                                  col.reshape(nr, n_samples, 3), deltas)
    return c, t_final


def render(field: VoxelField, ray: Ray, n_samples: int, rng=None):
    """Render one ray; returns (rgb (3,), final transmittance)."""
    c, t_final = batch_render(field, ray.origin[None], ray.direction[None],
                              [ray.t_near], [ray.t_far], n_samples, rng)
    return c[0], float(t_final[0])


def render_image(field: VoxelField, camera: Camera, n_samples: int = 48,
                 rng=None) -> np.ndarray:
    """Render a full view, black where rays miss the field box."""
    dirs = camera.ray_directions()
    origins = np.broadcast_to(camera.position, dirs.shape)
    tn, tf, valid = _aabb_clip(origins, dirs, field.bounds)
    img = np.zeros((dirs.shape[0], 3))
    if valid.any():
        c, _ = batch_render(field, origins[valid], dirs[valid],
                            tn[valid], tf[valid], n_samples, rng)
        img[valid] = c
    return img.reshape(camera.height, camera.width, 3)


# --- analytic gradients -------------------------------------------------------

def _backward(gc, sigma, color, deltas, weights, trans):
    """Gradients of the loss wrt per-sample sigma and color.

    gc is dloss/dC per ray and channel. Uses
    dC/dsigma_s = delta_s * (T_{s+1} c_s - sum_{i>s} w_i c_i).
    """
    alpha_keep = trans * np.exp(-sigma * deltas)  # T_{s+1}
    wc = weights[..., None] * color
    suffix = np.flip(np.cumsum(np.flip(wc, axis=1), axis=1), axis=1) - wc
    g_sigma = deltas * np.einsum(
        "rnc,rc->rn", alpha_keep[..., None] * color - suffix, gc)
    g_color = weights[..., None] * gc[:, None, :]
    return g_sigma, g_color


def loss_gradients(field: VoxelField, origins, dirs, t_near, t_far, targets,
                   n_samples: int):
    """Mean squared photometric loss and gradients wrt the node grids.

    Deterministic midpoint sampling, so the result is a well-defined
    function of the field (central differences against it are meaningful).
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    nr = origins.shape[0]
    t = _sample_times(t_near, t_far, n_samples, rng=None)
    t_far_arr = np.atleast_1d(np.asarray(t_far, dtype=np.float64))
    deltas = np.diff(np.concatenate([t, t_far_arr[:, None]], axis=1), axis=1)
    points = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    res = field.resolution
    idx, w = _trilinear(points.reshape(-1, 3), res, field.bounds)
    sigma_s, col_s = _field_samples(field.density.reshape(-1),
                                    field.color.reshape(-1, 3), idx, w)
    sigma_s = sigma_s.reshape(nr, n_samples)
    col_s = col_s.reshape(nr, n_samples, 3)
    c, weights, trans, _ = _composite(sigma_s, col_s, deltas)
    resid = c - targets
    loss = float(np.mean(resid**2))
    gc = 2.0 * resid / resid.size
    g_sigma_s, g_color_s = _backward(gc, sigma_s, col_s, deltas, weights, trans)

    n_nodes = res**3
    flat_idx = idx.reshape(-1)
    g_density = np.bincount(flat_idx, weights=(g_sigma_s.reshape(-1, 1) * w).ravel(),
                            minlength=n_nodes)
    g_color = np.stack([
        np.bincount(flat_idx, weights=(g_color_s[..., ch].reshape(-1, 1) * w).ravel(),
                    minlength=n_nodes)
        for ch in range(3)], axis=-1)
    return loss, g_density.reshape(res, res, res), g_color.reshape(res, res, res, 3)


# --- fitting ------------------------------------------------------------------

def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _inv_softplus(y: float) -> float:
    return math.log(math.expm1(y)) if y < 30 else y


def _prepare_problem(views: ViewSet, resolution: int, bounds, n_samples: int):
    """Pooled sampling structure for every in-box ray of every view.

    Sample positions are fixed (midpoints), so trilinear interpolation is
    a constant sparse operator: forward sampling is A @ grid and the
    gradient scatter is A.T @ per-sample gradients.
    """
    from scipy import sparse

    all_deltas, all_targets, all_points = [], [], []
    for cam, image in zip(views.cameras, views.images):
        dirs = cam.ray_directions()
        origins = np.broadcast_to(cam.position, dirs.shape)
        tn, tf, valid = _aabb_clip(origins, dirs, bounds)
        if not valid.any():
            continue
        t = _sample_times(tn[valid], tf[valid], n_samples, rng=None)
        all_deltas.append(np.diff(np.concatenate([t, tf[valid][:, None]], axis=1),
                                  axis=1))
        all_targets.append(image.reshape(-1, 3)[valid])
        all_points.append(origins[valid][:, None, :]
                          + t[..., None] * dirs[valid][:, None, :])
    if not all_deltas:
        raise ParameterError("no view ray intersects the field bounds")
    deltas = np.concatenate(all_deltas)
    targets = np.concatenate(all_targets)
    points = np.concatenate(all_points).reshape(-1, 3)

    idx, w = _trilinear(points, resolution, bounds)
    n_samples_total = idx.shape[0]
    rows = np.repeat(np.arange(n_samples_total, dtype=np.int64), 8)
    interp = sparse.csr_matrix(
        (w.ravel(), (rows, idx.ravel())),
        shape=(n_samples_total, resolution**3))
    return interp, interp.T.tocsr(), deltas, targets


def fit(views: ViewSet, iterations: int = 250, lr: float = 3e6, *,
        resolution: int = 32, bounds=DEFAULT_BOUNDS, n_samples: int = 48,
        lr_color: float | None = None, init_sigma: float = 5e-3,
        callback=None) -> VoxelField:
    """Fit a voxel field to a view set by plain gradient descent.

    Densities are parameterized as softplus(rho), colors as
    sigmoid(gamma); both start near empty space (init_sigma, mid-gray).
    The loss is the mean squared error over all rays that cross the field
    box, all views pooled. callback(iteration, loss) is invoked per step.
    """
    if lr_color is None:
        lr_color = lr / 30.0
    interp, interp_t, deltas, targets = _prepare_problem(
        views, resolution, bounds, n_samples)
    nr, ns = deltas.shape
    denom = targets.size

    n_nodes = resolution**3
    rho = np.full(n_nodes, _inv_softplus(init_sigma))
    gamma = np.zeros((n_nodes, 3))

    for it in range(iterations):
        density = _softplus(rho)
        color = _sigmoid(gamma)
        sigma_s = (interp @ density).reshape(nr, ns)
        col_s = (interp @ color).reshape(nr, ns, 3)
        c, weights, trans, _ = _composite(sigma_s, col_s, deltas)
        resid = c - targets
        loss = float(np.sum(resid**2)) / denom
        if not math.isfinite(loss):
            raise DivergenceError("non-finite loss", iteration=it)
        if callback is not None:
            callback(it, loss)
        gc = 2.0 * resid / denom
        g_sig_s, g_col_s = _backward(gc, sigma_s, col_s, deltas, weights, trans)
        g_rho = (interp_t @ g_sig_s.reshape(-1)) * _sigmoid(rho)
        g_gamma = (interp_t @ g_col_s.reshape(-1, 3)) * (color * (1.0 - color))
        rho -= lr * g_rho
        gamma -= lr_color * g_gamma

    res = resolution
    return VoxelField(density=_softplus(rho).reshape(res, res, res),
                      color=_sigmoid(gamma).reshape(res, res, res, 3),
                      bounds=bounds)


# --- view-set serialization -----------------------------------------------------

VIEWSET_SCHEMA_VERSION = 1
VIEWSET_MANIFEST_NAME = "views_manifest.json"


def save_viewset(views: ViewSet, directory) -> None:
    """Write a view set: one 8-bit PNG per view plus a JSON manifest.

    Images are quantized to 8 bits on disk; everything else (poses,
    intrinsics, ghost records) round-trips exactly. Ghost masks are saved
    as PNGs next to their views.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    cameras = []
    image_paths = []
    for k, (cam, image) in enumerate(zip(views.cameras, views.images)):
        name = f"view_{k:03d}.png"
        arr = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(arr).save(directory / name)
        image_paths.append(name)
        cameras.append({
            "position": [float(v) for v in cam.position],
            "rotation": [[float(v) for v in row] for row in cam.rotation],
            "width": cam.width, "height": cam.height,
            "focal_px": cam.focal_px,
        })
        record = views.ghost_records[k]
        if record is None:
            records.append(None)
        else:
            mask_name = f"view_{k:03d}_ghost_mask.png"
            Image.fromarray(record["mask"].astype(np.uint8) * 255).save(
                directory / mask_name)
            records.append({
                "source_uv": list(record["source_uv"]),
                "template_id": record["template_id"],
                "centers": [list(c) for c in record["centers"]],
                "mask": mask_name,
            })
    payload = {
        "schema_version": VIEWSET_SCHEMA_VERSION,
        "cameras": cameras,
        "images": image_paths,
        "ghost_records": records,
    }
    with open(directory / VIEWSET_MANIFEST_NAME, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_viewset(directory) -> ViewSet:
    """Rebuild a ViewSet written by save_viewset."""
    directory = Path(directory)
    with open(directory / VIEWSET_MANIFEST_NAME) as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != VIEWSET_SCHEMA_VERSION:
        raise ParameterError(
            f"unsupported view-set schema {payload.get('schema_version')}")
    cameras = [Camera(position=np.array(c["position"]),
                      rotation=np.array(c["rotation"]),
                      width=c["width"], height=c["height"],
                      focal_px=c["focal_px"])
               for c in payload["cameras"]]
    images = np.stack([
        np.asarray(Image.open(directory / name), dtype=np.float64) / 255.0
        for name in payload["images"]])
    records = []
    for rec in payload["ghost_records"]:
        if rec is None:
            records.append(None)
        else:
            mask = np.asarray(Image.open(directory / rec["mask"])) > 127
            records.append({
                "source_uv": tuple(rec["source_uv"]),
                "template_id": rec["template_id"],
                "centers": [tuple(c) for c in rec["centers"]],
                "mask": mask,
            })
    return ViewSet(cameras=cameras, images=images, ghost_records=records)


# --- ghost injection and the rejection experiment -----------------------------

def inject_ghost(camera: Camera, image: np.ndarray, light_world, chain: GhostChain,
                 clip_threshold: float = 0.8, mask_threshold: float = 1.0 / 255.0):
    """Composite a centrosymmetric ghost chain onto one rendered view.

    The chain is placed from the light source's projection in this view,
    so camera motion moves the ghosts against the background. Returns the
    new image and a record with the placement and its mask.
    """
    u, v, depth = camera.project(light_world)
    if not (depth > 0 and 0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        raise ParameterError("light source not visible in this view")
    source = LightSource(position=(u, v))
    layers = place_chain(chain, source, camera.width, clip_threshold=clip_threshold)
    out = image.astype(np.float64, copy=True)
    mask = np.zeros(image.shape[:2], dtype=bool)
    for layer in layers:
        out += layer.image
        mask |= layer.alpha > mask_threshold
    out = np.clip(out, 0.0, 1.0)
    record = {
        "source_uv": (u, v),
        "template_id": chain.template_id,
        "centers": [layer.center for layer in layers],
        "mask": mask,
    }
    return out, record


def ring_cameras(count: int, image_size: int, radius: float = 2.6,
                 fov_deg: float = 40.0, elevation: float = 0.45) -> list:
    """Cameras on a circle around the origin, alternating two elevations."""
    cams = []
    for k in range(count):
        angle = 2.0 * math.pi * k / count
        y = elevation if k % 2 == 0 else -elevation
        pos = (radius * math.cos(angle), y, radius * math.sin(angle))
        cams.append(Camera.look_at(pos, (0.0, 0.0, 0.0), image_size, image_size,
                                   fov_deg=fov_deg))
    return cams


def make_box_field(resolution: int = 32, bounds=DEFAULT_BOUNDS) -> VoxelField:
    """Ground-truth scene: three colored boxes in otherwise empty space."""
    boxes = [
        ((-0.65, -0.35, -0.55), (-0.05, 0.45, 0.05), (0.85, 0.25, 0.20)),
        ((0.05, -0.55, -0.35), (0.60, 0.15, 0.30), (0.25, 0.80, 0.30)),
        ((-0.30, -0.15, 0.10), (0.25, 0.50, 0.60), (0.30, 0.40, 0.90)),
    ]
    r = resolution
    lo = np.asarray(bounds[0])
    hi = np.asarray(bounds[1])
    axes = [np.linspace(lo[i], hi[i], r) for i in range(3)]
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    density = np.zeros((r, r, r))
    color = np.full((r, r, r, 3), 0.5)
    for (blo, bhi, rgb) in boxes:
        inside = ((xx >= blo[0]) & (xx <= bhi[0]) & (yy >= blo[1]) & (yy <= bhi[1])
                  & (zz >= blo[2]) & (zz <= bhi[2]))
        density[inside] = 30.0
        color[inside] = rgb
    return VoxelField(density=density, color=color, bounds=bounds)


@dataclass
class RejectionResult:
    """Everything the multi-view ghost-rejection experiment produces."""

    clean_views: np.ndarray
    injected_views: np.ndarray
    refit_views: np.ndarray
    ghost_masks: np.ndarray
    injected_mse: list
    refit_mse: list
    background_psnr: float
    loss_history: list
    field: VoxelField
    views: ViewSet | None = None

    @property
    def mse_ratio(self) -> float:
        return float(np.mean(self.refit_mse) / np.mean(self.injected_mse))

    def to_dict(self) -> dict:
        return {
            "injected_mse_mean": float(np.mean(self.injected_mse)),
            "refit_mse_mean": float(np.mean(self.refit_mse)),
            "mse_ratio": self.mse_ratio,
            "background_psnr_db": self.background_psnr,
            "views": int(self.clean_views.shape[0]),
            "final_loss": self.loss_history[-1] if self.loss_history else None,
        }


def rejection_experiment(n_views: int = 16, resolution: int = 32,
                         image_size: int = 64, n_samples: int = 48,
                         iterations: int = 150, lr: float = 3e6,
                         seed: int = 0, light_world=(0.60, 0.30, 0.0),
                         chain: GhostChain | None = None,
                         progress=None) -> RejectionResult:
    """Inject per-view ghosts into a synthetic scene, fit, and measure
    how much of the ghost survives the multi-view reconstruction.

    The default light sits well off the orbit axis so its projection (and
    with it every ghost) sweeps across the frame from view to view; the
    default template uses small elements. Both choices decorrelate the
    per-view ghost positions, which is what the multi-view fit exploits.
    """
    from .reflective import builtin_templates, random_rotate_template

    gt_field = make_box_field(resolution)
    cameras = ring_cameras(n_views, image_size)
    clean = np.stack([render_image(gt_field, cam, n_samples) for cam in cameras])

    if chain is None:
        chain = next(c for c in builtin_templates() if c.template_id == "bead-spread")
    injected = np.empty_like(clean)
    masks = np.zeros(clean.shape[:3], dtype=bool)
    records = []
    for k, cam in enumerate(cameras):
        per_view = random_rotate_template(chain, seed=seed * 100003 + k)
        injected[k], record = inject_ghost(cam, clean[k], light_world, per_view)
        masks[k] = record["mask"]
        records.append(record)

    views = ViewSet(cameras=cameras, images=injected, ghost_records=records)
    history = []

    def track(it, loss):
        history.append(loss)
        if progress is not None:
            progress(it, loss)

    fitted = fit(views, iterations=iterations, lr=lr, resolution=resolution,
                 n_samples=n_samples, callback=track)
    refit = np.stack([render_image(fitted, cam, n_samples) for cam in cameras])

    injected_mse, refit_mse = [], []
    bg_sq, bg_n = 0.0, 0
    for k in range(n_views):
        m = masks[k]
        if m.any():
            injected_mse.append(float(np.mean((injected[k][m] - clean[k][m]) ** 2)))
            refit_mse.append(float(np.mean((refit[k][m] - clean[k][m]) ** 2)))
        bg = ~m
        bg_sq += float(np.sum((refit[k][bg] - clean[k][bg]) ** 2))
        bg_n += int(bg.sum()) * 3
    bg_mse = bg_sq / bg_n
    bg_psnr = PSNR_CAP if bg_mse == 0 else 10.0 * math.log10(1.0 / bg_mse)

    return RejectionResult(
        clean_views=clean, injected_views=injected, refit_views=refit,
        ghost_masks=masks, injected_mse=injected_mse, refit_mse=refit_mse,
        background_psnr=bg_psnr, loss_history=history, field=fitted,
        views=views)
