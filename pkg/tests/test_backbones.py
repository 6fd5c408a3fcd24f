import math

import numpy as np
import pytest
import torch

from smtlab.backbones import BACKBONE_DOWNSCALE, build_backbone
from smtlab.errors import ImageTooSmall
from smtlab.model import SMT


def _expect(h, w, r):
    return math.ceil(h / r[0]), math.ceil(w / r[1])


@pytest.mark.parametrize("name", ["cnn", "swin", "convnext"])
class TestShapeContract:
    def test_random_sizes(self, name):
        module, r, c_e = build_backbone(name, "paper")
        assert r == BACKBONE_DOWNSCALE[name]
        assert c_e == 256
        rng = np.random.default_rng(hash(name) & 0xFFFF)
        module.eval()
        for _ in range(6):
            h = int(rng.integers(r[0], 150))
            w = int(rng.integers(r[1], 280))
            with torch.no_grad():
                out = module(torch.rand(1, 1, h, w))
            assert out.shape == (1, 256, *_expect(h, w, r)), (name, h, w)

    def test_micro_preset_shapes(self, name):
        module, r, c_e = build_backbone(name, "micro")
        assert c_e == 64
        with torch.no_grad():
            out = module(torch.rand(1, 1, 64, 96))
        assert out.shape == (1, 64, *_expect(64, 96, r))

    def test_gradients_flow(self, name):
        module, _, _ = build_backbone(name, "micro")
        out = module(torch.rand(2, 1, 32, 48))
        out.sum().backward()
        grads = [p.grad for p in module.parameters() if p.requires_grad]
        assert all(g is not None for g in grads)
        assert any(g.abs().sum() > 0 for g in grads)


class TestEncodeOp:
    def test_cnn_reference_shape(self):
        model = SMT.build(vocab_size=8, backbone="cnn", preset="paper")
        fm = model.encode(np.random.default_rng(0).random((128, 512), dtype=np.float32))
        assert (fm.h_e, fm.w_e, fm.c_e) == (8, 64, 256)
        assert (fm.r_h, fm.r_w) == (16, 8)

    def test_convnext_reference_shape(self):
        model = SMT.build(vocab_size=8, backbone="convnext", preset="paper")
        fm = model.encode(np.random.default_rng(0).random((128, 512), dtype=np.float32))
        assert (fm.h_e, fm.w_e, fm.c_e) == (8, 32, 256)

    def test_image_too_small(self):
        model = SMT.build(vocab_size=8, backbone="cnn", preset="micro")
        with pytest.raises(ImageTooSmall):
            model.encode(np.zeros((15, 512), dtype=np.float32))
        with pytest.raises(ImageTooSmall):
            model.encode(np.zeros((64, 7), dtype=np.float32))

    def test_unknown_backbone(self):
        with pytest.raises(ValueError):
            build_backbone("resnet", "paper")
