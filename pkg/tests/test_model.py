import numpy as np
import pytest
import torch

from smtlab.errors import PrefixTooLong, VocabularyMismatch
from smtlab.model import (
    SMT,
    DecoderConfig,
    ensure_vocab_match,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from smtlab.positional import positional_encoding_2d_torch
from smtlab.tokens import Vocabulary

VOCAB = Vocabulary.build([list("abcdefg")])


def micro_model(seed=0, vocab_size=None):
    torch.manual_seed(seed)
    return SMT.build(vocab_size=vocab_size or len(VOCAB), backbone="cnn", preset="micro")


def random_image(seed=0, h=64, w=96):
    return np.random.default_rng(seed).random((h, w)).astype(np.float32)


class TestDecodeStep:
    def test_distribution_normalized(self):
        model = micro_model()
        memory = model.memory_from_images(model._image_tensor(random_image()))
        dist = model.decode_step([model.sot_id, 5, 6], memory[0])
        assert dist.shape == (len(VOCAB),)
        assert abs(dist.sum() - 1.0) < 1e-6
        assert (dist >= 0).all()

    def test_zeroed_projection_uniform(self):
        model = micro_model()
        with torch.no_grad():
            model.decoder.out_proj.weight.zero_()
            model.decoder.out_proj.bias.zero_()
        memory = model.memory_from_images(model._image_tensor(random_image()))
        dist = model.decode_step([model.sot_id], memory[0])
        assert np.allclose(dist, 1.0 / len(VOCAB), atol=1e-7)

    def test_prefix_must_start_with_sot(self):
        model = micro_model()
        memory = model.memory_from_images(model._image_tensor(random_image()))
        with pytest.raises(ValueError):
            model.decode_step([3, 4], memory[0])

    def test_prefix_too_long(self):
        torch.manual_seed(0)
        cfg = DecoderConfig(layers=1, heads=2, width=64, ffn_width=64, dropout=0.0,
                            max_decode_len=4)
        model = SMT.build(vocab_size=len(VOCAB), backbone="cnn", preset="micro", decoder=cfg)
        memory = model.memory_from_images(model._image_tensor(random_image()))
        model.decode_step([model.sot_id, 3, 3, 3], memory[0])  # 3 generated: ok
        with pytest.raises(PrefixTooLong):
            model.decode_step([model.sot_id, 3, 3, 3, 3], memory[0])

    def test_shared_prefix_same_distribution(self):
        model = micro_model()
        model.eval()
        memory = model.memory_from_images(model._image_tensor(random_image()))
        with torch.no_grad():
            a = model.decoder(torch.tensor([[0, 5, 6, 7, 5]]), memory)
            b = model.decoder(torch.tensor([[0, 5, 6, 3, 4]]), memory)
        assert torch.equal(a[0, :2], b[0, :2])  # agree on first 3 tokens -> steps 0..2


class TestCausality:
    def test_future_perturbation_bitwise(self):
        model = micro_model()
        model.eval()
        rng = np.random.default_rng(3)
        memory = model.memory_from_images(model._image_tensor(random_image(1)))
        ids = [0] + [int(rng.integers(3, len(VOCAB))) for _ in range(14)]
        with torch.no_grad():
            base = model.decoder(torch.tensor([ids]), memory)
        for _ in range(10):
            j = int(rng.integers(1, len(ids)))
            mutated = list(ids)
            mutated[j] = (mutated[j] + 1) % len(VOCAB) or 3
            with torch.no_grad():
                out = model.decoder(torch.tensor([mutated]), memory)
            assert torch.equal(base[0, :j], out[0, :j])
            assert not torch.equal(base[0, j:], out[0, j:])


class TestGreedy:
    def test_length_cap(self):
        torch.manual_seed(0)
        cfg = DecoderConfig(layers=1, heads=2, width=64, ffn_width=64, dropout=0.0,
                            max_decode_len=4)
        model = SMT.build(vocab_size=len(VOCAB), backbone="cnn", preset="micro", decoder=cfg)
        with torch.no_grad():  # never emit <eot>
            model.decoder.out_proj.weight.zero_()
            model.decoder.out_proj.bias.zero_()
            model.decoder.out_proj.bias[3] = 10.0
        ids = model.greedy_ids(random_image())
        assert ids == [3, 3, 3, 3]

    def test_tie_break_lowest_id(self):
        model = micro_model()
        with torch.no_grad():  # all logits equal -> argmax must pick id 0
            model.decoder.out_proj.weight.zero_()
            model.decoder.out_proj.bias.zero_()
        ids = model.greedy_ids(random_image(), max_len=3)
        assert ids == [0, 0, 0]

    def test_deterministic(self):
        model = micro_model()
        img = random_image(7)
        assert model.greedy_ids(img, max_len=12) == model.greedy_ids(img, max_len=12)

    def test_eot_stops_and_is_excluded(self):
        model = micro_model()
        with torch.no_grad():
            model.decoder.out_proj.weight.zero_()
            model.decoder.out_proj.bias.zero_()
            model.decoder.out_proj.bias[model.eot_id] = 10.0
        assert model.greedy_ids(random_image()) == []

    def test_greedy_decode_returns_tokens(self):
        model = micro_model()
        seq = model.greedy_decode(random_image(), VOCAB)
        assert seq.tokens == [VOCAB.symbol_of(i) for i in seq.ids]


class TestPermutationSensitivity:
    def test_pre_pe_shuffle_changes_outputs(self):
        # positive control that the positional encoding is applied: permuting
        # feature-map cells BEFORE the encoding is added must change logits
        # (post-PE permutation is invisible to attention by design).
        model = micro_model()
        model.eval()
        img = model._image_tensor(random_image(5))
        with torch.no_grad():
            feats = model.backbone(img)
            b, c, h, w = feats.shape
            pe = positional_encoding_2d_torch(h, w, c, feats.dtype, feats.device)
            flat = feats.permute(0, 2, 3, 1).reshape(b, h * w, c)
            perm = torch.randperm(h * w, generator=torch.Generator().manual_seed(0))
            mem_a = model.bridge(flat + pe.reshape(1, h * w, c))
            mem_b = model.bridge(flat[:, perm] + pe.reshape(1, h * w, c))
            ids = torch.tensor([[0, 3, 4]])
            out_a = model.decoder(ids, mem_a)
            out_b = model.decoder(ids, mem_b)
        assert (out_a - out_b).abs().max() > 1e-3


class TestCheckpoint:
    def test_roundtrip_bitwise_state(self, tmp_path):
        model = micro_model(seed=1)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, vocab_hash=VOCAB.hash_hex, step=17)
        payload = load_checkpoint(path)
        assert payload["step"] == 17
        restored = model_from_checkpoint(payload)
        for (ka, va), (kb, vb) in zip(
            model.state_dict().items(), restored.state_dict().items()
        ):
            assert ka == kb
            assert torch.equal(va, vb)

    def test_vocab_hash_guard(self, tmp_path):
        model = micro_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, vocab_hash=VOCAB.hash_hex)
        payload = load_checkpoint(path)
        ensure_vocab_match(payload, VOCAB)
        other = Vocabulary.build([list("xyz")])
        with pytest.raises(VocabularyMismatch):
            ensure_vocab_match(payload, other)

    def test_save_bitwise_deterministic(self, tmp_path):
        model = micro_model(seed=2)
        save_checkpoint(tmp_path / "a.ckpt", model, vocab_hash=VOCAB.hash_hex, step=1)
        save_checkpoint(tmp_path / "b.ckpt", model, vocab_hash=VOCAB.hash_hex, step=1)
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_corrupt_file_rejected(self, tmp_path):
        from smtlab.errors import CheckpointError

        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "missing.ckpt")


class TestDoublePrecision:
    def test_model_runs_in_float64(self):
        torch.manual_seed(0)
        cfg = DecoderConfig(layers=1, heads=1, width=8, ffn_width=16, dropout=0.0,
                            max_decode_len=8)
        model = SMT.build(
            vocab_size=5, backbone="cnn", preset="micro", decoder=cfg,
            backbone_overrides={"channels": (4, 4, 8, 8)},
        ).double()
        img = torch.rand(1, 1, 16, 32, dtype=torch.float64)
        ids = torch.tensor([[0, 3, 4]])
        logits = model.forward_logits(img, ids)
        assert logits.dtype == torch.float64
