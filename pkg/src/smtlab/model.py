"""The image-to-sequence transcription model.

Pipeline: backbone features -> 2D positional encoding -> row-major
flattening -> autoregressive transformer decoder over the token vocabulary.
Decoding starts from <sot> and appends the argmax token (ties broken toward
the lowest id) until <eot> or the decode-length cap.

Attention is implemented directly (explicit matmul + additive -inf masks) so
causality is exact at the bit level: a masked position contributes a weight
of exactly zero, hence perturbing future tokens cannot change earlier
logits.
"""

from __future__ import annotations

import math
import os
import pickle
import tempfile
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbones import FeatureMap, build_backbone
from .errors import (
    CheckpointError,
    ImageTooSmall,
    PrefixTooLong,
    VocabularyMismatch,
)
from .positional import positional_encoding_2d_torch
from .tokens import TokenSequence, Granularity, Vocabulary


@dataclass(frozen=True)
class DecoderConfig:
    layers: int = 8
    heads: int = 4
    width: int = 256
    ffn_width: int = 256
    dropout: float = 0.1
    max_decode_len: int = 1024  # generated tokens per sample, <sot> excluded

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")
        if min(self.layers, self.heads, self.width, self.ffn_width, self.max_decode_len) < 1:
            raise ValueError("decoder dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


#: Shipped configurations. "paper" is the full-size default; "micro" is the
#: desk-scale preset used by fast tests and smoke training runs.
PRESETS: dict[str, DecoderConfig] = {
    "paper": DecoderConfig(),
    "micro": DecoderConfig(layers=2, heads=4, width=64, ffn_width=64, dropout=0.0,
                           max_decode_len=512),
}


def sinusoid_1d(length: int, width: int, dtype: torch.dtype, device: torch.device) -> torch.Tensor:
    """Standard 1D sinusoidal position table (length, width)."""
    position = np.arange(length)[:, None]
    denom = np.power(10000.0, 2.0 * (np.arange(width) // 2) / width)
    angles = position / denom
    table = np.zeros((length, width), dtype=np.float64)
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return torch.from_numpy(table).to(dtype=dtype, device=device)


class MultiHeadAttention(nn.Module):
    def __init__(self, width: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.q_proj = nn.Linear(width, width)
        self.k_proj = nn.Linear(width, width)
        self.v_proj = nn.Linear(width, width)
        self.out_proj = nn.Linear(width, width)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self,
        query: torch.Tensor,
        keys: torch.Tensor,
        values: torch.Tensor,
        additive_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        b, t_q, c = query.shape
        t_k = keys.shape[1]
        q = self.q_proj(query).view(b, t_q, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(keys).view(b, t_k, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(values).view(b, t_k, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if additive_mask is not None:
            scores = scores + additive_mask
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(b, t_q, c)
        return self.out_proj(out)


class DecoderBlock(nn.Module):
    """Pre-norm block: causal self-attention, cross-attention, feed-forward."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.norm_self = nn.LayerNorm(cfg.width)
        self.self_attn = MultiHeadAttention(cfg.width, cfg.heads, cfg.dropout)
        self.norm_cross = nn.LayerNorm(cfg.width)
        self.cross_attn = MultiHeadAttention(cfg.width, cfg.heads, cfg.dropout)
        self.norm_ffn = nn.LayerNorm(cfg.width)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.width, cfg.ffn_width), nn.GELU(), nn.Linear(cfg.ffn_width, cfg.width)
        )
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, memory: torch.Tensor, causal_mask: torch.Tensor) -> torch.Tensor:
        h = self.norm_self(x)
        x = x + self.drop(self.self_attn(h, h, h, causal_mask))
        h = self.norm_cross(x)
        x = x + self.drop(self.cross_attn(h, memory, memory))
        x = x + self.drop(self.ffn(self.norm_ffn(x)))
        return x


class TokenDecoder(nn.Module):
    def __init__(self, vocab_size: int, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(vocab_size, cfg.width)
        self.drop = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.width)
        self.out_proj = nn.Linear(cfg.width, vocab_size)

    def forward(self, token_ids: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        _, t = token_ids.shape
        x = self.embed(token_ids) * math.sqrt(self.cfg.width)
        x = x + sinusoid_1d(t, self.cfg.width, x.dtype, x.device)
        x = self.drop(x)
        causal = torch.full((t, t), float("-inf"), dtype=x.dtype, device=x.device).triu(1)
        for block in self.blocks:
            x = block(x, memory, causal)
        return self.out_proj(self.norm(x))


class SMT(nn.Module):
    """Sheet-music transcription model: encoder, 2D PE, decoder."""

    def __init__(
        self,
        backbone: nn.Module,
        downscale: tuple[int, int],
        c_e: int,
        decoder_cfg: DecoderConfig,
        vocab_size: int,
        build_spec: dict | None = None,
    ):
        super().__init__()
        self.backbone = backbone
        self.r_h, self.r_w = downscale
        self.c_e = c_e
        self.decoder_cfg = decoder_cfg
        self.vocab_size = vocab_size
        # ids follow the reserved-token layout of Vocabulary
        self.sot_id, self.eot_id = 0, 1
        self.bridge = nn.Linear(c_e, decoder_cfg.width) if c_e != decoder_cfg.width else nn.Identity()
        self.decoder = TokenDecoder(vocab_size, decoder_cfg)
        self.build_spec = build_spec or {}

    @classmethod
    def build(
        cls,
        vocab_size: int,
        backbone: str = "cnn",
        preset: str = "paper",
        decoder: DecoderConfig | None = None,
        backbone_overrides: dict | None = None,
    ) -> "SMT":
        backbone_overrides = backbone_overrides or {}
        module, downscale, c_e = build_backbone(backbone, preset, **backbone_overrides)
        decoder_cfg = decoder if decoder is not None else PRESETS[preset]
        spec = {
            "backbone": backbone,
            "preset": preset,
            "decoder": asdict(decoder_cfg),
            "backbone_overrides": dict(backbone_overrides),
            "vocab_size": vocab_size,
        }
        return cls(module, downscale, c_e, decoder_cfg, vocab_size, build_spec=spec)

    # --- encoding ---------------------------------------------------------

    def _check_size(self, h: int, w: int) -> None:
        if h < self.r_h or w < self.r_w:
            raise ImageTooSmall(
                f"image {h}x{w} below one downscale step ({self.r_h}x{self.r_w})"
            )

    def _image_tensor(self, image: np.ndarray) -> torch.Tensor:
        if image.ndim != 2:
            raise ValueError("expected a 2D grayscale image")
        dtype = next(self.parameters()).dtype
        return torch.from_numpy(np.ascontiguousarray(image)).to(dtype)[None, None]

    def encode(self, image: np.ndarray) -> FeatureMap:
        """Backbone features for one image, channels last, PE not yet added."""
        self._check_size(*image.shape)
        with torch.no_grad():
            feats = self.backbone(self._image_tensor(image))[0]
        return FeatureMap(values=feats.permute(1, 2, 0), r_h=self.r_h, r_w=self.r_w)

    def memory_from_images(self, images: torch.Tensor) -> torch.Tensor:
        """(B,1,H,W) -> (B, h_e*w_e, width): features + 2D PE, flattened row-major."""
        self._check_size(images.shape[-2], images.shape[-1])
        feats = self.backbone(images)  # (B, C, h_e, w_e)
        b, c, h_e, w_e = feats.shape
        pe = positional_encoding_2d_torch(h_e, w_e, c, feats.dtype, feats.device)
        feats = feats.permute(0, 2, 3, 1) + pe
        return self.bridge(feats.reshape(b, h_e * w_e, c))

    # --- decoding ---------------------------------------------------------

    def forward_logits(self, images: torch.Tensor, token_ids: torch.Tensor) -> torch.Tensor:
        """Teacher-forced decoder logits (B, T, vocab)."""
        return self.decoder(token_ids, self.memory_from_images(images))

    def logits_for_prefix(self, prefix_ids: list[int], memory: torch.Tensor) -> torch.Tensor:
        if not prefix_ids or prefix_ids[0] != self.sot_id:
            raise ValueError("prefix must begin with <sot>")
        if len(prefix_ids) - 1 >= self.decoder_cfg.max_decode_len:
            raise PrefixTooLong(
                f"prefix holds {len(prefix_ids) - 1} generated tokens; "
                f"cap is {self.decoder_cfg.max_decode_len}"
            )
        ids = torch.tensor([prefix_ids], dtype=torch.long, device=memory.device)
        return self.decoder(ids, memory[None] if memory.ndim == 2 else memory)[0, -1]

    def decode_step(self, prefix_ids: list[int], memory: torch.Tensor) -> np.ndarray:
        """Next-token distribution over the vocabulary for a <sot>-prefix."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                logits = self.logits_for_prefix(prefix_ids, memory)
                return torch.softmax(logits, dim=-1).cpu().numpy()
        finally:
            self.train(was_training)

    def greedy_ids(self, image: np.ndarray, max_len: int | None = None) -> list[int]:
        """Greedy decode; returns generated ids without <sot>/<eot>."""
        cap = self.decoder_cfg.max_decode_len if max_len is None else max_len
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                memory = self.memory_from_images(self._image_tensor(image))
                prefix = [self.sot_id]
                out: list[int] = []
                while len(out) < cap:
                    logits = self.decoder(
                        torch.tensor([prefix], dtype=torch.long), memory
                    )[0, -1]
                    nxt = int(np.argmax(logits.detach().cpu().numpy()))  # first max: lowest id
                    if nxt == self.eot_id:
                        break
                    out.append(nxt)
                    prefix.append(nxt)
                return out
        finally:
            self.train(was_training)

    def greedy_decode(self, image: np.ndarray, vocabulary: Vocabulary) -> TokenSequence:
        ids = self.greedy_ids(image)
        return TokenSequence(
            tokens=vocabulary.decode(ids), granularity=Granularity.CHARACTER, ids=ids
        )


# --- checkpointing --------------------------------------------------------

CHECKPOINT_FORMAT = 1


def _tree_to_numpy(obj):
    if isinstance(obj, torch.Tensor):
        return {"__tensor__": obj.detach().cpu().numpy()}
    if isinstance(obj, dict):
        return {k: _tree_to_numpy(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        converted = [_tree_to_numpy(v) for v in obj]
        return converted if isinstance(obj, list) else tuple(converted)
    return obj


def _tree_to_torch(obj):
    if isinstance(obj, dict):
        if set(obj) == {"__tensor__"}:
            return torch.from_numpy(np.ascontiguousarray(obj["__tensor__"])).clone()
        return {k: _tree_to_torch(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        converted = [_tree_to_torch(v) for v in obj]
        return converted if isinstance(obj, list) else tuple(converted)
    return obj


def save_checkpoint(
    path,
    model: SMT,
    *,
    vocab_hash: str,
    step: int = 0,
    optimizer: torch.optim.Optimizer | None = None,
    best_val_ser: float | None = None,
    extra: dict | None = None,
) -> None:
    """Atomically write a self-describing checkpoint (pickle of numpy trees).

    The format deliberately avoids archive containers so identical training
    runs produce byte-identical files.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "build_spec": model.build_spec,
        "vocab_hash": vocab_hash,
        "step": step,
        "best_val_ser": best_val_ser,
        "state": _tree_to_numpy(model.state_dict()),
        "optimizer": _tree_to_numpy(optimizer.state_dict()) if optimizer is not None else None,
        "torch_rng": torch.get_rng_state().numpy(),
        "extra": extra or {},
    }
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            pickle.dump(payload, fh, protocol=4)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> dict:
    try:
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except Exception as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a format-{CHECKPOINT_FORMAT} checkpoint")
    return payload


def model_from_checkpoint(payload: dict) -> SMT:
    spec = payload["build_spec"]
    model = SMT.build(
        vocab_size=spec["vocab_size"],
        backbone=spec["backbone"],
        preset=spec["preset"],
        decoder=DecoderConfig(**spec["decoder"]),
        backbone_overrides=spec["backbone_overrides"],
    )
    state = _tree_to_torch(payload["state"])
    model.load_state_dict(state)
    return model


def ensure_vocab_match(payload: dict, vocabulary: Vocabulary) -> None:
    if payload["vocab_hash"] != vocabulary.hash_hex:
        raise VocabularyMismatch(
            "checkpoint was trained with a different vocabulary "
            f"({payload['vocab_hash'][:12]}... vs {vocabulary.hash_hex[:12]}...)"
        )
