"""Validity-calibrated reasoning distillation on tabular toy policies."""

from .divergence import kl, skl, srkl
from .objective import TrainConfig, lv_skl_loss, lv_srkl_loss, validity_weights
from .policy import TabularPolicy, Vocab
from .tasks import TaskSpec, fit_teacher, generate
from .trainer import distill
from .trust_region import solve_trust_region

__all__ = [
    "kl", "skl", "srkl", "TrainConfig", "lv_skl_loss", "lv_srkl_loss", "validity_weights",
    "TabularPolicy", "Vocab", "TaskSpec", "fit_teacher", "generate", "distill",
    "solve_trust_region",
]
