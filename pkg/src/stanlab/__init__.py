"""Space-time attention for audio-visual event recognition.

A trainable attention head over precomputed per-segment audio and visual
features, plus the tooling to judge its explanations: perturbation
robustness curves, pointing games against grounding masks, and attention
export. Ships with a planted-event synthetic data generator so every
mechanism can be verified end to end at desk scale.
"""

from .data import (ClipRecord, DatasetManifest, ManifestEntry, SynthConfig,
                   generate_synthetic, load_dataset, read_feature_file,
                   read_manifest, write_feature_file, write_manifest)
from .errors import (ConfigurationError, ContractError, DataLoadError,
                     DimensionError, FormatError, StanlabError)
from .estimator import AttentionMaps, StanEventClassifier
from .explain import (AttentionModel, PerturbConfig, PerturbCurve,
                      StanAttentionModel, bilinear_resize,
                      dataset_perturbation_curve, export_attention,
                      perturbation_test_general, perturbation_test_stan,
                      pointing_game_mae, relevance_mask, tvd, write_pgm)
from .metrics import (MetricReport, compute_all, f_score,
                      mean_average_precision, top1_accuracy)
from .model import (AttentionBundle, ForwardOutput, StanConfig, StanParams,
                    classify_with_attention, compose_spacetime, forward,
                    load_checkpoint, predict_proba, save_checkpoint,
                    space_attention, time_attention, time_features)
from .tensor import (GradCheckReport, ParamTensor, Tensor, add,
                     avg_pool_spatial, avg_pool_temporal, check_gradients,
                     concat_channels, conv2d, elementwise_mul, flat_index,
                     linear_map, multi_index, no_grad, outer_product_st,
                     relu, reshape, sigmoid, stack_time, tile_spatial,
                     tile_temporal)
from .training import (Adam, EpochLog, LossBreakdown, TrainConfig,
                       TrainResult, bce_multilabel, clamp_event_count,
                       reset_clamp_events, stan_loss, train)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
