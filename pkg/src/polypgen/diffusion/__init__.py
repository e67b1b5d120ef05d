from .schedule import Schedule, forward_diffuse, make_schedule
from .model import DenoiserModel, ModelSpec, load_checkpoint, save_checkpoint
from .loss import compute_loss, loss_output_grad
from .optim import OptimizerParams, TrainState, optimizer_step
from .train import TrainConfig, train
from .sample import ddim_sample, ddpm_sample

__all__ = [
    "Schedule",
    "make_schedule",
    "forward_diffuse",
    "DenoiserModel",
    "ModelSpec",
    "save_checkpoint",
    "load_checkpoint",
    "compute_loss",
    "loss_output_grad",
    "OptimizerParams",
    "TrainState",
    "optimizer_step",
    "TrainConfig",
    "train",
    "ddim_sample",
    "ddpm_sample",
]
