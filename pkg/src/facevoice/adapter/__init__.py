"""Face-to-voice adapter: model, losses, gradients and training."""

from .estimator import VoiceAdapter
from .finite_diff import GradcheckReport, check_gradients
from .losses import CenterBank, loss_cen, loss_con, loss_rec, update_centers
from .model import (
    AdapterModel,
    decode,
    encode,
    generate,
    init_adapter,
    load_checkpoint,
    sample_latent,
    save_checkpoint,
    zero_adapter,
)
from .objective import GradientBundle, Stage1Head, value_and_grad
from .training import Adam, Stage1Config, gradcheck, train_stage1

__all__ = [
    "AdapterModel",
    "Adam",
    "CenterBank",
    "GradcheckReport",
    "GradientBundle",
    "Stage1Config",
    "Stage1Head",
    "VoiceAdapter",
    "check_gradients",
    "decode",
    "encode",
    "generate",
    "gradcheck",
    "init_adapter",
    "load_checkpoint",
    "loss_cen",
    "loss_con",
    "loss_rec",
    "sample_latent",
    "save_checkpoint",
    "train_stage1",
    "update_centers",
    "value_and_grad",
    "zero_adapter",
]
