"""Dataset variants, generation, manifests, and validation.

The variant grid crosses five method configurations with a light-source
split, ten named configurations total:

    name   increase_scattering  reflective_in_input  similarity  centrosymmetry
    base          no                   no                no           no
    R             no                   yes               no           no
    RP            no                   yes               no           yes
    MR            yes                  yes               no           yes
    MRP           yes                  yes               yes          yes

Appending "-woL" to a name drops the light source from the ground truth.

All randomness is derived from (variant seed, pair index, purpose) through
SeedSequence, so a (seed, variant, clean list) triple determines every
output byte. The manifest is a JSON file with stable keys, one entry per
pair, carrying enough seeds to re-derive the deterministic pieces during
validation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np
from PIL import Image

from .composite import CompositeOptions, compose
from .diffraction import RGB_WAVELENGTHS_NM, TiltSpec, diffract, tilt_shift
from .errors import ParameterError
from .metrics import EvalReport, masked_reflective_eval
from .pupil import ContaminationSpec, contaminate, make_clean_pupil
from .reflective import (GhostChain, load_templates, place_chain,
                         place_chain_uniform, perpendicular_deviation_px,
                         random_rotate_template)
from .scene import (SceneConfig, SceneSpec, consistent_fov, instantiate_flares,
                    ncc_peak, place_flare, position_to_tilt,
                    render_light_cores, sample_scene)

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"

#: Method-flag grid; order: increase_scattering, reflective_in_input,
#: similarity, centrosymmetry.
VARIANT_FLAGS = {
    "base": (False, False, False, False),
    "R": (False, True, False, False),
    "RP": (False, True, False, True),
    "MR": (True, True, False, True),
    "MRP": (True, True, True, True),
}

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def variant_names() -> list[str]:
    """All ten configuration names, light-in-GT first."""
    bases = list(VARIANT_FLAGS)
    return bases + [f"{b}-woL" for b in bases]


@dataclass(frozen=True)
class VariantSpec:
    """One dataset configuration of the ablation grid."""

    name: str
    increase_scattering: bool
    reflective_in_input: bool
    similarity: bool
    centrosymmetry: bool
    light_source_in_gt: bool
    count: int
    seed: int

    def __post_init__(self):
        base = self.name[:-4] if self.name.endswith("-woL") else self.name
        if base not in VARIANT_FLAGS:
            raise ParameterError(f"unknown variant {self.name!r}")
        expected = VARIANT_FLAGS[base] + (not self.name.endswith("-woL"),)
        actual = (self.increase_scattering, self.reflective_in_input,
                  self.similarity, self.centrosymmetry, self.light_source_in_gt)
        if actual != expected:
            raise ParameterError(
                f"flags {actual} do not match the grid definition of {self.name!r}")
        if self.count < 1:
            raise ParameterError("count must be >= 1")

    @classmethod
    def from_name(cls, name: str, count: int = 100, seed: int = 0) -> "VariantSpec":
        base = name[:-4] if name.endswith("-woL") else name
        if base not in VARIANT_FLAGS:
            raise ParameterError(
                f"unknown variant {name!r}; expected one of {variant_names()}")
        inc, refl, sim, cen = VARIANT_FLAGS[base]
        return cls(name=name, increase_scattering=inc, reflective_in_input=refl,
                   similarity=sim, centrosymmetry=cen,
                   light_source_in_gt=not name.endswith("-woL"),
                   count=count, seed=seed)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "increase_scattering": self.increase_scattering,
            "reflective_in_input": self.reflective_in_input,
            "similarity": self.similarity,
            "centrosymmetry": self.centrosymmetry,
            "light_source_in_gt": self.light_source_in_gt,
            "count": self.count,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VariantSpec":
        return cls(**d)


@dataclass
class PipelineConfig:
    """Desk-scale generation knobs shared by all variants."""

    image_size: int = 256
    pupil_extent_mm: float = 5.0
    focal_length_mm: float = 35.0
    wavelengths_nm: tuple = RGB_WAVELENGTHS_NM
    max_sources: int = 8
    clip_threshold: float = 0.8
    shift_mode: str = "wrap"
    exposure: float = 1.0
    ghost_chains_per_source: int = 1  # reflection-template multiplicity

    def __post_init__(self):
        n = self.image_size
        if n < 64 or (n & (n - 1)) != 0:
            raise ParameterError(
                "image_size must be a power of two >= 64 (it doubles as the "
                f"pupil grid size), got {n}")

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "pupil_extent_mm": self.pupil_extent_mm,
            "focal_length_mm": self.focal_length_mm,
            "wavelengths_nm": list(self.wavelengths_nm),
            "max_sources": self.max_sources,
            "clip_threshold": self.clip_threshold,
            "shift_mode": self.shift_mode,
            "exposure": self.exposure,
            "ghost_chains_per_source": self.ghost_chains_per_source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d["wavelengths_nm"] = tuple(d["wavelengths_nm"])
        return cls(**d)

    def fov(self) -> float:
        return consistent_fov(self.image_size, self.pupil_extent_mm, 540.0)


@dataclass
class DatasetManifest:
    """Index of one generated variant: config, per-pair records, paths."""

    variant: VariantSpec
    config: PipelineConfig
    entries: list
    schema_version: int = MANIFEST_SCHEMA_VERSION
    root: Path | None = None

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "variant": self.variant.to_dict(),
            "config": self.config.to_dict(),
            "entries": self.entries,
        }


def _sub_seed(*key) -> int:
    """Stable unsigned integer seed derived from a mixed key."""
    return int(np.random.SeedSequence(tuple(int(k) for k in key)).generate_state(1)[0])


# purpose tags for per-pair seed derivation
_SCENE, _PUPIL, _TEMPLATE, _ROTATION, _PLACEMENT = range(5)


def _list_clean(clean_dir: Path) -> list[Path]:
    files = sorted(p for p in Path(clean_dir).iterdir()
                   if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not files:
        raise ParameterError(f"no clean plates found in {clean_dir}")
    return files


def _prepare_plate(path: Path, size: int) -> np.ndarray:
    """Load, center-crop square, and resize one clean plate."""
    img = Image.open(path).convert("RGB")
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    img = img.crop((left, top, left + side, top + side))
    if side != size:
        img = img.resize((size, size), Image.LANCZOS)
    return np.asarray(img)


def _scene_for(variant: VariantSpec, config: PipelineConfig, index: int) -> SceneSpec:
    count_range = (1, config.max_sources) if variant.increase_scattering else (1, 1)
    scene_cfg = SceneConfig(count_range=count_range, fov=config.fov())
    return sample_scene(_sub_seed(variant.seed, index, _SCENE), scene_cfg)


def _kernel_from_seed(pupil_seed: int, config: PipelineConfig):
    pupil = make_clean_pupil(config.image_size, config.pupil_extent_mm)
    dirty = contaminate(pupil, ContaminationSpec(seed=pupil_seed))
    return diffract(dirty, config.wavelengths_nm, config.focal_length_mm)


def _scatter_layers(variant: VariantSpec, config: PipelineConfig, index: int,
                    scene: SceneSpec):
    """Flare layers plus the pupil seeds they were derived from."""
    if variant.similarity:
        seed = _sub_seed(variant.seed, index, _PUPIL)
        kernel = _kernel_from_seed(seed, config)
        return instantiate_flares(scene, kernel, mode=config.shift_mode), [seed]
    layers, seeds = [], []
    for k, source in enumerate(scene.sources):
        seed = _sub_seed(variant.seed, index, _PUPIL, k)
        kernel = _kernel_from_seed(seed, config)
        layers.append(place_flare(kernel, source, scene.fov, mode=config.shift_mode))
        seeds.append(seed)
    return layers, seeds


def _ghost_plan(variant: VariantSpec, config: PipelineConfig, index: int,
                scene: SceneSpec, templates: list) -> list[dict]:
    """Deterministic ghost recipe per source; empty without reflective flag."""
    if not variant.reflective_in_input:
        return []
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((variant.seed, index, _TEMPLATE))))
    plan = []
    for k in range(len(scene.sources)):
        for j in range(config.ghost_chains_per_source):
            plan.append({
                "source_index": k,
                "template_id": templates[int(rng.integers(len(templates)))].template_id,
                "rotation_seed": _sub_seed(variant.seed, index, _ROTATION, k, j),
                "placement_seed": (None if variant.centrosymmetry
                                   else _sub_seed(variant.seed, index, _PLACEMENT, k, j)),
            })
    return plan


def _ghost_layers(plan: list[dict], scene: SceneSpec, config: PipelineConfig,
                  templates_by_id: dict, centrosymmetric: bool):
    layers = []
    for item in plan:
        chain = random_rotate_template(templates_by_id[item["template_id"]],
                                       item["rotation_seed"])
        source = scene.sources[item["source_index"]]
        if centrosymmetric:
            layers.extend(place_chain(chain, source, config.image_size,
                                      clip_threshold=config.clip_threshold))
        else:
            layers.extend(place_chain_uniform(chain, config.image_size,
                                              item["placement_seed"], source,
                                              clip_threshold=config.clip_threshold))
    return layers


def _save_png(arr: np.ndarray, path: Path) -> None:
    Image.fromarray(arr).save(path, format="PNG")


def _save_mask(mask: np.ndarray, path: Path) -> None:
    _save_png((mask.astype(np.uint8) * 255), path)


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path))


def load_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path)) > 127


def generate(variant: VariantSpec, clean_dir, out_dir,
             config: PipelineConfig | None = None,
             templates: list[GhostChain] | None = None) -> DatasetManifest:
    """Generate one variant: count pairs plus a manifest.json.

    Pairs land in out_dir/pairs; a failure mid-run removes everything this
    call wrote before re-raising.
    """
    config = config or PipelineConfig()
    templates = templates if templates is not None else load_templates()
    templates_by_id = {t.template_id: t for t in templates}
    clean_files = _list_clean(clean_dir)
    out_dir = Path(out_dir)
    pair_dir = out_dir / "pairs"
    pair_dir.mkdir(parents=True, exist_ok=True)

    plate_cache: dict[Path, np.ndarray] = {}
    written: list[Path] = []
    entries = []
    try:
        for i in range(variant.count):
            clean_path = clean_files[i % len(clean_files)]
            if clean_path not in plate_cache:
                plate_cache[clean_path] = _prepare_plate(clean_path, config.image_size)
            clean = plate_cache[clean_path]

            scene = _scene_for(variant, config, i)
            scatter, pupil_seeds = _scatter_layers(variant, config, i, scene)
            plan = _ghost_plan(variant, config, i, scene, templates)
            ghosts = _ghost_layers(plan, scene, config, templates_by_id,
                                   variant.centrosymmetry)
            cores = render_light_cores(scene, config.image_size)
            pair = compose(clean, scatter, ghosts, CompositeOptions(
                light_source_in_gt=variant.light_source_in_gt,
                light_layers=tuple(cores), exposure=config.exposure))

            stem = f"{variant.name}_{i:05d}"
            paths = {
                "input": f"pairs/{stem}_input.png",
                "gt": f"pairs/{stem}_gt.png",
                "mask_flare": f"pairs/{stem}_mask_flare.png",
                "mask_light": f"pairs/{stem}_mask_light.png",
                "mask_ghost": f"pairs/{stem}_mask_ghost.png",
            }
            _save_png(pair.input, out_dir / paths["input"])
            _save_png(pair.gt, out_dir / paths["gt"])
            _save_mask(pair.masks["flare"], out_dir / paths["mask_flare"])
            _save_mask(pair.masks["light"], out_dir / paths["mask_light"])
            _save_mask(pair.masks["ghost"], out_dir / paths["mask_ghost"])
            written.extend(out_dir / p for p in paths.values())

            entries.append({
                "index": i,
                "clean": clean_path.name,
                "paths": paths,
                "scene": scene.to_dict(),
                "pupil_seeds": pupil_seeds,
                "ghosts": plan,
            })

        manifest = DatasetManifest(variant=variant, config=config,
                                   entries=entries, root=out_dir)
        manifest_path = out_dir / MANIFEST_NAME
        with open(manifest_path, "w") as fh:
            json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(manifest_path)
        return manifest
    except Exception:
        for path in written:
            try:
                path.unlink()
            except OSError:
                pass
        raise


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    if data.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ParameterError(f"unsupported manifest schema {data.get('schema_version')}")
    return DatasetManifest(
        variant=VariantSpec.from_dict(data["variant"]),
        config=PipelineConfig.from_dict(data["config"]),
        entries=data["entries"],
        schema_version=data["schema_version"],
        root=path.parent,
    )


# --- validation ---------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: int = 0
    failed: int = 0
    not_applicable: bool = False
    details: list = dataclass_field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.not_applicable or self.failed == 0

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "failed": self.failed,
                "not_applicable": self.not_applicable, "details": self.details}


@dataclass
class ValidationReport:
    checks: list
    missing_files: list

    @property
    def ok(self) -> bool:
        return not self.missing_files and all(c.ok for c in self.checks)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "missing_files": self.missing_files,
                "checks": [c.to_dict() for c in self.checks]}

    def summary_lines(self) -> list[str]:
        lines = []
        for c in self.checks:
            if c.not_applicable:
                lines.append(f"{c.name}: not applicable")
            else:
                status = "ok" if c.ok else "FAIL"
                lines.append(f"{c.name}: {status} ({c.passed} passed, {c.failed} failed)")
        if self.missing_files:
            lines.append(f"missing files: {len(self.missing_files)}")
        return lines


def _check_pair_invariants(manifest: DatasetManifest, entry: dict,
                           result: CheckResult) -> None:
    root = manifest.root
    input8 = load_png(root / entry["paths"]["input"]).astype(np.int16)
    gt8 = load_png(root / entry["paths"]["gt"]).astype(np.int16)
    flare = load_mask(root / entry["paths"]["mask_flare"])
    ghost = load_mask(root / entry["paths"]["mask_ghost"])
    problems = []
    if input8.shape != gt8.shape or flare.shape != input8.shape[:2]:
        problems.append("shape mismatch")
    else:
        outside = ~flare
        if outside.any() and int(np.abs(input8 - gt8)[outside].max()) > 1:
            problems.append("input/gt differ by >1 code value outside flare mask")
        if np.any(ghost & ~flare):
            problems.append("ghost mask not contained in flare mask")
    if problems:
        result.failed += 1
        result.details.append({"index": entry["index"], "problems": problems})
    else:
        result.passed += 1


def _check_collinearity(manifest: DatasetManifest, entry: dict,
                        templates_by_id: dict, result: CheckResult) -> None:
    config = manifest.config
    scene = SceneSpec.from_dict(entry["scene"])
    worst = 0.0
    for item in entry["ghosts"]:
        chain = random_rotate_template(templates_by_id[item["template_id"]],
                                       item["rotation_seed"])
        source = scene.sources[item["source_index"]]
        layers = place_chain(chain, source, config.image_size,
                             clip_threshold=config.clip_threshold)
        centers = [layer.center for layer in layers]
        worst = max(worst, perpendicular_deviation_px(centers, source.position,
                                                      config.image_size))
    if worst < 0.5:
        result.passed += 1
    else:
        result.failed += 1
        result.details.append({"index": entry["index"], "deviation_px": worst})


def _check_similarity(manifest: DatasetManifest, entry: dict,
                      result: CheckResult) -> None:
    """Re-derive the entry's kernel, undo each layer's tilt, and correlate."""
    config = manifest.config
    scene = SceneSpec.from_dict(entry["scene"])
    kernel = _kernel_from_seed(entry["pupil_seeds"][0], config)
    base = kernel.intensity.sum(axis=0)
    ok = True
    for source in scene.sources:
        tilt = position_to_tilt(source, scene.fov)
        shifted = tilt_shift(kernel, tilt, mode=config.shift_mode)
        undone = tilt_shift(shifted, TiltSpec(theta=(-tilt.theta[0], -tilt.theta[1])),
                            mode=config.shift_mode)
        peak = ncc_peak(undone.intensity.sum(axis=0), base)
        if peak < 1.0 - 1e-4:
            ok = False
            result.details.append({"index": entry["index"], "ncc_peak": peak})
    if ok:
        result.passed += 1
    else:
        result.failed += 1


def validate(manifest: DatasetManifest | str | Path,
             templates: list[GhostChain] | None = None) -> ValidationReport:
    """Re-check module invariants over a generated dataset.

    Flag-gated checks report "not applicable" instead of passing
    vacuously (collinearity needs centrosymmetry, cross-correlation needs
    the similarity flag and wrap shifts).
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    if manifest.root is None:
        raise ParameterError("manifest has no root directory")
    templates = templates if templates is not None else load_templates()
    templates_by_id = {t.template_id: t for t in templates}
    referenced = {item["template_id"] for entry in manifest.entries
                  for item in entry["ghosts"]}
    unknown = referenced - set(templates_by_id)
    if unknown:
        raise ParameterError(
            f"dataset references templates {sorted(unknown)} not in the loaded "
            "set; pass the template file used at generation")
    variant = manifest.variant

    missing = []
    for entry in manifest.entries:
        for rel in entry["paths"].values():
            if not (manifest.root / rel).exists():
                missing.append(rel)

    count_check = CheckResult(name="entry_count")
    if len(manifest.entries) == variant.count:
        count_check.passed = 1
    else:
        count_check.failed = 1
        count_check.details.append(
            {"expected": variant.count, "actual": len(manifest.entries)})

    pair_check = CheckResult(name="pair_invariants")
    collinearity = CheckResult(
        name="ghost_collinearity",
        not_applicable=not (variant.reflective_in_input and variant.centrosymmetry))
    similarity = CheckResult(
        name="similarity_cross_correlation",
        not_applicable=not (variant.similarity
                            and manifest.config.shift_mode == "wrap"))

    missing_set = set(missing)
    for entry in manifest.entries:
        if any(rel in missing_set for rel in entry["paths"].values()):
            continue
        _check_pair_invariants(manifest, entry, pair_check)
        if not collinearity.not_applicable and entry["ghosts"]:
            _check_collinearity(manifest, entry, templates_by_id, collinearity)
        if not similarity.not_applicable:
            _check_similarity(manifest, entry, similarity)

    return ValidationReport(
        checks=[count_check, pair_check, collinearity, similarity],
        missing_files=missing,
    )


# --- restored-image evaluation --------------------------------------------------

class _PairView:
    """Just enough of a DataPair for masked_reflective_eval."""

    def __init__(self, gt, ghost_mask):
        self.gt = gt
        self.masks = {"ghost": ghost_mask}


def evaluate_manifest(manifest: DatasetManifest | str | Path,
                      restored_dir) -> EvalReport:
    """Score restored images (same filenames as the inputs) against GT."""
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    restored_dir = Path(restored_dir)
    scores = []
    for entry in manifest.entries:
        name = Path(entry["paths"]["input"]).name
        restored_path = restored_dir / name
        if not restored_path.exists():
            raise ParameterError(f"missing restored image {restored_path}")
        restored = load_png(restored_path)
        gt = load_png(manifest.root / entry["paths"]["gt"])
        ghost_mask = load_mask(manifest.root / entry["paths"]["mask_ghost"])
        scores.append(masked_reflective_eval(_PairView(gt, ghost_mask), restored))
    return EvalReport(per_pair=scores)
