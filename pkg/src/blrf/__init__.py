"""Band-limited factorized radiance fields for dynamic 3D scenes."""

__version__ = "0.1.0"

from .basis import (BasisKind, TimeBasisEvaluator, eval_basis, highpass_penalty,
                    init_neural_basis, make_basis, positional_embed)
from .errors import (CheckpointError, ConfigurationError, ContractError,
                     OutOfBoundsError, TrainingError)
from .field import (ComponentTriple, FactorizedField, FieldConfig, FieldGradients,
                    FieldKind, SincKind, activate_color, activate_density,
                    backward_field, eval_component, init_field, materialize_dense,
                    query_field_raw, tv_penalty, window_weights)
from .metrics import MetricReport, psnr, ssim
from .model import ModelGradients, SceneModel
from .render import (Camera, Ray, SamplingSpec, composite, rays_for_pixels,
                     render_image, sample_along_ray)
from .training import (AdamState, LossBreakdown, TrainConfig, adam_step,
                       cyclic_lr, photometric_loss, train_loop, train_step)

__all__ = [name for name in dir() if not name.startswith("_")]
