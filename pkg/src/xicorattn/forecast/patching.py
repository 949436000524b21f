"""Overlapping patches of univariate lookback windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autograd import Tensor, as_tensor
from ..errors import ConfigError


@dataclass(frozen=True)
class PatchConfig:
    lookback: int = 96
    horizon: int = 24
    patch_len: int = 16
    stride: int = 8

    def __post_init__(self):
        if min(self.lookback, self.horizon, self.patch_len, self.stride) < 1:
            raise ConfigError("lookback, horizon, patch_len and stride must be positive")
        if self.patch_len > self.lookback:
            raise ConfigError(f"patch_len {self.patch_len} exceeds lookback {self.lookback}")
        if self.stride > self.patch_len:
            raise ConfigError(f"stride {self.stride} exceeds patch_len {self.patch_len}")

    @property
    def patch_count(self) -> int:
        return (self.lookback - self.patch_len) // self.stride + 2


def patch_index(cfg: PatchConfig) -> np.ndarray:
    """``(N, P)`` gather indices into the series padded with ``stride`` copies of its last value."""
    offsets = np.arange(cfg.patch_count) * cfg.stride
    return offsets[:, None] + np.arange(cfg.patch_len)[None, :]


def patchify(series, cfg: PatchConfig) -> Tensor:
    """Split ``series`` of shape ``(..., T)`` into ``(..., N, P)`` patches.

    The tail is padded by repeating the final value ``stride`` times before
    cutting windows at offsets ``0, S, 2S, ...``.
    """
    x = as_tensor(series).data
    if x.shape[-1] != cfg.lookback:
        raise ConfigError(f"series length {x.shape[-1]} does not match lookback {cfg.lookback}")
    pad = np.repeat(x[..., -1:], cfg.stride, axis=-1)
    padded = np.concatenate([x, pad], axis=-1)
    return Tensor(padded[..., patch_index(cfg)])
