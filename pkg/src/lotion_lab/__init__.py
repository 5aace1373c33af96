"""lotion-lab: quantized-training experiments with smoothed objectives.

Library layers, bottom up: `tensorcore` (float64 arrays, keyed random
streams), `quant` (formats, shared scales, round-to-nearest), `rounding`
(unbiased randomized rounding and its noise statistics), `smooth` (expected
losses under rounding noise), `testbeds` (synthetic regression problems),
`trainers` (ptq / qat / rat / lotion training loops), `harness` (sweep
driver and results files), `report` (figures from results).
"""

__version__ = "0.1.0"

from .quant import FP4_E2M1_LEVELS, QuantFormat, QuantView, cast_rtn, compute_scale, partition, quant_view
from .rounding import (
    NoiseStats,
    Rr,
    RTN,
    Rtn,
    apply_rounding,
    rr_sample,
    rr_sample_many,
    rr_variance,
    rr_variance_grad,
)
from .smooth import FisherDiag, fisher_update, lotion_gn_grad, lotion_gn_loss, mc_smoothed_loss, smoothed_quadratic_exact
from .tensorcore import RngStream
from .testbeds import PowerLawTask, TwoLayerTask, gt_rounded_loss, quadratic_loss_grad, twolayer_loss_grads
from .trainers import Method, RunRecord, TrainConfig, best_of_sweep, cosine_lr, sgd_step, train

__all__ = [
    "__version__",
    "QuantFormat",
    "QuantView",
    "FP4_E2M1_LEVELS",
    "partition",
    "compute_scale",
    "cast_rtn",
    "quant_view",
    "Rtn",
    "Rr",
    "RTN",
    "NoiseStats",
    "apply_rounding",
    "rr_sample",
    "rr_sample_many",
    "rr_variance",
    "rr_variance_grad",
    "FisherDiag",
    "fisher_update",
    "smoothed_quadratic_exact",
    "lotion_gn_loss",
    "lotion_gn_grad",
    "mc_smoothed_loss",
    "RngStream",
    "PowerLawTask",
    "TwoLayerTask",
    "quadratic_loss_grad",
    "twolayer_loss_grads",
    "gt_rounded_loss",
    "Method",
    "TrainConfig",
    "RunRecord",
    "cosine_lr",
    "sgd_step",
    "train",
    "best_of_sweep",
]
