"""Minimal differentiable-function substrate shared by every learnable model."""

from . import autodiff
from .autodiff import Tensor
from .gradcheck import GradCheckReport, grad_check
from .nets import (
    CategoricalDist,
    EncoderSpec,
    MlpSpec,
    anticausal_encode,
    build_windows,
    categorical_kl,
    encode_windows,
    gumbel_softmax,
    init_encoder,
    init_mlp,
    kl_from_logits,
    mlp_forward,
    sample_gumbel,
    stable_log_softmax,
    stable_softmax,
)
from .params import (
    NonFiniteError,
    ParamStore,
    adam_step,
    collect_grads,
    init_linear,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "Tensor",
    "autodiff",
    "ParamStore",
    "adam_step",
    "collect_grads",
    "init_linear",
    "save_checkpoint",
    "load_checkpoint",
    "NonFiniteError",
    "MlpSpec",
    "EncoderSpec",
    "init_mlp",
    "init_encoder",
    "mlp_forward",
    "anticausal_encode",
    "encode_windows",
    "build_windows",
    "CategoricalDist",
    "categorical_kl",
    "kl_from_logits",
    "gumbel_softmax",
    "sample_gumbel",
    "stable_softmax",
    "stable_log_softmax",
    "grad_check",
    "GradCheckReport",
]
