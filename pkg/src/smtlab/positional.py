"""2D sinusoidal positional encoding and feature-map flattening.

The encoding splits the channel axis in half: channels [0, c/2) encode the
horizontal (width) position, channels [c/2, c) the vertical (height)
position. Within each half, channel pair (2i, 2i+1) holds
sin/cos(pos / 10000^(2i/c)) for i in [0, c/4), so positions along one image
axis share identical values along the other.
"""

from __future__ import annotations

import numpy as np
import torch

from .backbones import FeatureMap
from .errors import ChannelCountNotDivisibleBy4


def positional_encoding_2d(height: int, width: int, channels: int) -> np.ndarray:
    """Closed-form PE tensor of shape (height, width, channels), float64."""
    if channels % 4 != 0:
        raise ChannelCountNotDivisibleBy4(f"channels must be divisible by 4, got {channels}")
    quarter = channels // 4
    half = channels // 2
    denom = np.power(10000.0, 2.0 * np.arange(quarter) / channels)
    angle_w = np.arange(width)[:, None] / denom     # (width, quarter)
    angle_h = np.arange(height)[:, None] / denom    # (height, quarter)

    pe = np.zeros((height, width, channels), dtype=np.float64)
    pe[:, :, 0:half:2] = np.sin(angle_w)[None, :, :]
    pe[:, :, 1:half:2] = np.cos(angle_w)[None, :, :]
    pe[:, :, half::2] = np.sin(angle_h)[:, None, :]
    pe[:, :, half + 1 :: 2] = np.cos(angle_h)[:, None, :]
    return pe


def positional_encoding_2d_torch(
    height: int, width: int, channels: int, dtype: torch.dtype, device: torch.device
) -> torch.Tensor:
    return torch.from_numpy(positional_encoding_2d(height, width, channels)).to(
        dtype=dtype, device=device
    )


def add_2d_pe(fm: FeatureMap) -> FeatureMap:
    """Feature map plus its positional encoding (shape-determined, no params)."""
    pe = positional_encoding_2d_torch(
        fm.h_e, fm.w_e, fm.c_e, dtype=fm.values.dtype, device=fm.values.device
    )
    return FeatureMap(values=fm.values + pe, r_h=fm.r_h, r_w=fm.r_w)


def flatten_feature_map(fm: FeatureMap) -> torch.Tensor:
    """Row-major flattening to a sequence of h_e*w_e feature vectors."""
    return fm.values.reshape(fm.h_e * fm.w_e, fm.c_e)
