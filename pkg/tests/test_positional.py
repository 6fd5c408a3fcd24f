import math

import numpy as np
import pytest
import torch

from smtlab.backbones import FeatureMap
from smtlab.errors import ChannelCountNotDivisibleBy4
from smtlab.positional import add_2d_pe, flatten_feature_map, positional_encoding_2d


def reference_pe(height, width, channels):
    """Direct per-element evaluation, independent of the library path."""
    pe = np.zeros((height, width, channels))
    for y in range(height):
        for x in range(width):
            for i in range(channels // 4):
                scale = 10000.0 ** (2 * i / channels)
                pe[y, x, 2 * i] = math.sin(x / scale)
                pe[y, x, 2 * i + 1] = math.cos(x / scale)
                pe[y, x, channels // 2 + 2 * i] = math.sin(y / scale)
                pe[y, x, channels // 2 + 2 * i + 1] = math.cos(y / scale)
    return pe


class TestEncoding:
    def test_matches_reference_everywhere(self):
        pe = positional_encoding_2d(7, 11, 16)
        assert np.abs(pe - reference_pe(7, 11, 16)).max() < 1e-6

    def test_zero_position(self):
        pe = positional_encoding_2d(3, 3, 8)
        assert pe[0, 0, 0] == 0.0  # sin(0)
        assert pe[0, 0, 1] == 1.0  # cos(0)

    def test_unit_position_value(self):
        pe = positional_encoding_2d(1, 2, 256)
        assert pe[0, 1, 0] == pytest.approx(0.841471, abs=1e-6)

    def test_half_split_constancy(self):
        pe = positional_encoding_2d(5, 9, 32)
        assert np.all(pe[:, :, :16] == pe[:1, :, :16])  # width half: same down rows
        assert np.all(pe[:, :, 16:] == pe[:, :1, 16:])  # height half: same across cols

    def test_channel_divisibility(self):
        with pytest.raises(ChannelCountNotDivisibleBy4):
            positional_encoding_2d(4, 4, 10)

    def test_depends_only_on_shape(self):
        assert np.array_equal(positional_encoding_2d(4, 6, 8), positional_encoding_2d(4, 6, 8))


class TestAddAndFlatten:
    def _fm(self, h=2, w=3, c=8):
        torch.manual_seed(0)
        return FeatureMap(values=torch.randn(h, w, c), r_h=16, r_w=8)

    def test_add_is_elementwise_sum(self):
        fm = self._fm()
        out = add_2d_pe(fm)
        pe = torch.from_numpy(positional_encoding_2d(2, 3, 8)).to(fm.values.dtype)
        assert torch.equal(out.values, fm.values + pe)
        assert (out.r_h, out.r_w) == (16, 8)

    def test_flatten_row_major(self):
        fm = self._fm(2, 3, 4)
        seq = flatten_feature_map(fm)
        assert seq.shape == (6, 4)
        assert torch.equal(seq[3], fm.values[1, 0])  # element 3 is (row 1, col 0)

    def test_flatten_inverse(self):
        fm = self._fm(3, 5, 8)
        seq = flatten_feature_map(fm)
        assert torch.equal(seq.reshape(3, 5, 8), fm.values)

    def test_single_cell(self):
        fm = self._fm(1, 1, 4)
        seq = flatten_feature_map(fm)
        assert torch.equal(seq[0], fm.values[0, 0])
