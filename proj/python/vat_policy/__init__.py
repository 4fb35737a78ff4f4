"""Python bindings for the VAT policy core.

The heavy lifting lives in the C++ extension; this package re-exports it.
"""

from vat_policy._core import (  # noqa: F401
    ConfigError,
    ContractError,
    Env,
    FormatError,
    ForwardRecord,
    Model,
    attention,
    cosine_lr,
    dataset_info,
    evaluate,
    export_ppm,
    gelu,
    gen_data,
    grad_check,
    layer_norm,
    load_model,
    matmul,
    minmax_normalize,
    overlay,
    softmax,
    train,
    upsample_bicubic,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "Env",
    "FormatError",
    "ForwardRecord",
    "Model",
    "attention",
    "cosine_lr",
    "dataset_info",
    "evaluate",
    "export_ppm",
    "gelu",
    "gen_data",
    "grad_check",
    "layer_norm",
    "load_model",
    "matmul",
    "minmax_normalize",
    "overlay",
    "softmax",
    "train",
    "upsample_bicubic",
]

__version__ = "0.1.0"
