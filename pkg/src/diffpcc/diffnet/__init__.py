"""Differentiable kernels, the set encoder, the noise predictor and Adam."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .models import denoise, denoise_eps, encode, time_embedding
from .optim import adam_step, clip_by_global_norm, global_norm
from .params import ModelConfig, ParamStore, init_params
from .tensor import Tensor, backward

__all__ = [
    "GradCheckReport",
    "ModelConfig",
    "ParamStore",
    "Tensor",
    "adam_step",
    "backward",
    "clip_by_global_norm",
    "denoise",
    "denoise_eps",
    "encode",
    "global_norm",
    "grad_check",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "time_embedding",
]
