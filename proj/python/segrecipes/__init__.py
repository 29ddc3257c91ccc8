"""Python surface of the segrecipes toolkit.

The heavy lifting lives in the native ``_core`` module; this package just
re-exports the operations with their natural names.
"""

from ._core import (
    ce_loss,
    cyclic_lr,
    dataset_class_pixels,
    distill_kl,
    fuse,
    log_softmax,
    miou,
    mix_seed,
    ohem_ce_loss,
    ohem_select,
    pairwise_mean,
    resize_bilinear,
    softmax,
    zipf_masses,
)

__all__ = [
    "ce_loss",
    "cyclic_lr",
    "dataset_class_pixels",
    "distill_kl",
    "fuse",
    "log_softmax",
    "miou",
    "mix_seed",
    "ohem_ce_loss",
    "ohem_select",
    "pairwise_mean",
    "resize_bilinear",
    "softmax",
    "zipf_masses",
]
