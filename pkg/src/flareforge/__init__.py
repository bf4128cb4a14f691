"""flareforge: physics-based lens-flare synthesis and paired datasets.

Scattering flares come from far-field diffraction at a contaminated
entrance pupil; reflective ghosts sit on the source-center symmetry axis;
a small differentiable voxel radiance field demonstrates that multi-view
fitting rejects the view-inconsistent ghosts.
"""

from .composite import CompositeOptions, DataPair, NoiseSpec, compose
from .diffraction import (FlareKernel, RGB_WAVELENGTHS_NM, TiltSpec, apply_tilt,
                          diffract, tilt_shift)
from .errors import DegenerateAxisError, DivergenceError, ParameterError
from .metrics import EvalReport, PairScores, masked_reflective_eval, psnr, ssim
from .pipeline import (DatasetManifest, PipelineConfig, VariantSpec, generate,
                       load_manifest, validate, variant_names)
from .pupil import (ContaminationSpec, DustSpec, OilSpec, PupilField,
                    ScratchSpec, contaminate, load_pupil, make_clean_pupil,
                    save_pupil)
from .radiance import (Camera, Ray, RejectionResult, ViewSet, VoxelField, fit,
                       inject_ghost, load_viewset, loss_gradients,
                       make_box_field, rejection_experiment, render,
                       render_image, ring_cameras, save_viewset)
from .reflective import (GhostChain, GhostElement, builtin_templates,
                         clip_opacity, load_templates, place_chain,
                         place_chain_uniform, random_rotate_template,
                         rotate_template, save_templates)
from .scene import (LightSource, SceneConfig, SceneSpec, consistent_fov,
                    instantiate_flares, ncc_peak, place_flare, position_to_tilt,
                    render_light_cores, sample_scene)

__version__ = "0.1.0"
