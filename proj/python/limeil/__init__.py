"""Explanation-weighted incremental learning with EWC, C++ core."""

from ._core import (
    LimeilError,
    Model,
    Spectrogram,
    ewc_penalty,
    fisher_diagonal,
    gen_synthetic,
    kernel_weight,
    main,
    parameter_count,
    sample_weight,
    slic,
    split_by_speaker,
    train,
)

__all__ = [
    "LimeilError",
    "Model",
    "Spectrogram",
    "ewc_penalty",
    "fisher_diagonal",
    "gen_synthetic",
    "kernel_weight",
    "main",
    "parameter_count",
    "sample_weight",
    "slic",
    "split_by_speaker",
    "train",
]
