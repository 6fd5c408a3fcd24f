"""Image encoders: a convolutional stack, a hierarchical windowed-attention
backbone, and a ConvNeXt-style stack.

Every backbone maps a grayscale image (B, 1, H, W) to features
(B, c_e, h_e, w_e) with h_e = ceil(H / r_h) and w_e = ceil(W / r_w) for its
fixed downscale (r_h, r_w): the conv stack uses (16, 8) — width resolution
is kept twice as fine to preserve horizontal symbol detail — the other two
use (16, 16) via a 4px patch stem and two 2x merges. Strided layers are
preceded by padding so the ceil-formula holds exactly for any input size.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

_BACKGROUND = 1.0  # white; used when padding raw images


@dataclass
class FeatureMap:
    """Encoder output (channels last) with its producing downscale factors."""

    values: torch.Tensor  # (h_e, w_e, c_e)
    r_h: int
    r_w: int

    @property
    def h_e(self) -> int:
        return self.values.shape[0]

    @property
    def w_e(self) -> int:
        return self.values.shape[1]

    @property
    def c_e(self) -> int:
        return self.values.shape[2]


def _pad_image_to_multiple(x: torch.Tensor, mult_h: int, mult_w: int) -> torch.Tensor:
    pad_h = (mult_h - x.shape[-2] % mult_h) % mult_h
    pad_w = (mult_w - x.shape[-1] % mult_w) % mult_w
    if pad_h or pad_w:
        x = F.pad(x, (0, pad_w, 0, pad_h), value=_BACKGROUND)
    return x


# --- convolutional backbone, downscale (16, 8) ---------------------------


def _group_norm(channels: int) -> nn.GroupNorm:
    for groups in (8, 4, 2, 1):
        if channels % groups == 0:
            return nn.GroupNorm(groups, channels)
    raise AssertionError("unreachable")


class ConvBackbone(nn.Module):
    """Four conv stages with ceil-mode pooling: (2,2)x3 then (2,1)."""

    downscale = (16, 8)

    def __init__(self, channels: tuple[int, ...] = (32, 64, 128, 256), in_channels: int = 1):
        super().__init__()
        if len(channels) != 4:
            raise ValueError("ConvBackbone needs exactly 4 stage widths")
        stages = []
        prev = in_channels
        pools = [(2, 2), (2, 2), (2, 2), (2, 1)]
        for width, pool in zip(channels, pools):
            stages.append(
                nn.Sequential(
                    nn.Conv2d(prev, width, 3, padding=1),
                    _group_norm(width),
                    nn.GELU(),
                    nn.Conv2d(width, width, 3, padding=1),
                    _group_norm(width),
                    nn.GELU(),
                    nn.MaxPool2d(pool, pool, ceil_mode=True),
                )
            )
            prev = width
        self.stages = nn.Sequential(*stages)
        self.out_channels = channels[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.stages(x)


# --- windowed-attention backbone, downscale (16, 16) ---------------------


def _window_partition(x: torch.Tensor, ws_h: int, ws_w: int) -> torch.Tensor:
    b, h, w, c = x.shape
    x = x.view(b, h // ws_h, ws_h, w // ws_w, ws_w, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws_h * ws_w, c)


def _window_reverse(windows: torch.Tensor, ws_h: int, ws_w: int, h: int, w: int, b: int) -> torch.Tensor:
    x = windows.view(b, h // ws_h, w // ws_w, ws_h, ws_w, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, -1)


class WindowAttention(nn.Module):
    """Multi-head attention within windows, with relative position bias.

    The bias table is sized for the configured window; smaller effective
    windows (inputs narrower than the window) index a sub-block of it.
    """

    def __init__(self, dim: int, heads: int, max_window: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.max_window = max_window
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.bias_table = nn.Parameter(torch.zeros((2 * max_window - 1) ** 2, heads))
        nn.init.trunc_normal_(self.bias_table, std=0.02)

    def _relative_bias(self, ws_h: int, ws_w: int, device: torch.device) -> torch.Tensor:
        coords = torch.stack(
            torch.meshgrid(
                torch.arange(ws_h, device=device),
                torch.arange(ws_w, device=device),
                indexing="ij",
            )
        ).flatten(1)
        rel = coords[:, :, None] - coords[:, None, :]
        idx = (rel[0] + self.max_window - 1) * (2 * self.max_window - 1) + (
            rel[1] + self.max_window - 1
        )
        n = ws_h * ws_w
        return self.bias_table[idx.reshape(-1)].reshape(n, n, self.heads).permute(2, 0, 1)

    def forward(self, windows: torch.Tensor, ws: tuple[int, int], mask: torch.Tensor | None) -> torch.Tensor:
        bw, n, c = windows.shape
        qkv = (
            self.qkv(windows)
            .reshape(bw, n, 3, self.heads, c // self.heads)
            .permute(2, 0, 3, 1, 4)
        )
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn + self._relative_bias(ws[0], ws[1], windows.device).to(attn.dtype)
        if mask is not None:
            num_windows = mask.shape[0]
            attn = attn.view(bw // num_windows, num_windows, self.heads, n, n)
            attn = attn + mask[None, :, None].to(attn.dtype)
            attn = attn.view(bw, self.heads, n, n)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(bw, n, c)
        return self.proj(out)


class SwinBlock(nn.Module):
    def __init__(self, dim: int, heads: int, window: int, shifted: bool, mlp_ratio: float = 4.0):
        super().__init__()
        self.window = window
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    @staticmethod
    def _attn_mask(hp, wp, ws_h, ws_w, shift_h, shift_w, device):
        canvas = torch.zeros(1, hp, wp, 1, device=device)
        h_slices = (
            [slice(0, -ws_h), slice(-ws_h, -shift_h), slice(-shift_h, None)]
            if shift_h
            else [slice(None)]
        )
        w_slices = (
            [slice(0, -ws_w), slice(-ws_w, -shift_w), slice(-shift_w, None)]
            if shift_w
            else [slice(None)]
        )
        label = 0
        for hs in h_slices:
            for wsl in w_slices:
                canvas[:, hs, wsl, :] = label
                label += 1
        windows = _window_partition(canvas, ws_h, ws_w).squeeze(-1)
        diff = windows[:, None, :] - windows[:, :, None]
        mask = torch.zeros_like(diff)
        mask[diff != 0] = float("-inf")
        return mask

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, _ = x.shape
        ws_h, ws_w = min(self.window, h), min(self.window, w)
        shift_h = ws_h // 2 if self.shifted and h > ws_h else 0
        shift_w = ws_w // 2 if self.shifted and w > ws_w else 0

        shortcut = x
        x = self.norm1(x)
        pad_b = (ws_h - h % ws_h) % ws_h
        pad_r = (ws_w - w % ws_w) % ws_w
        if pad_b or pad_r:
            x = F.pad(x, (0, 0, 0, pad_r, 0, pad_b))
        hp, wp = h + pad_b, w + pad_r
        if shift_h or shift_w:
            x = torch.roll(x, (-shift_h, -shift_w), dims=(1, 2))
            mask = self._attn_mask(hp, wp, ws_h, ws_w, shift_h, shift_w, x.device)
        else:
            mask = None
        windows = _window_partition(x, ws_h, ws_w)
        attended = self.attn(windows, (ws_h, ws_w), mask)
        x = _window_reverse(attended, ws_h, ws_w, hp, wp, b)
        if shift_h or shift_w:
            x = torch.roll(x, (shift_h, shift_w), dims=(1, 2))
        if pad_b or pad_r:
            x = x[:, :h, :w]
        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class PatchMerging(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _, h, w, _ = x.shape
        if h % 2 or w % 2:
            x = F.pad(x, (0, 0, 0, w % 2, 0, h % 2))
        quads = [x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]]
        return self.reduction(self.norm(torch.cat(quads, dim=-1)))


class SwinBackbone(nn.Module):
    """First three hierarchical stages of a windowed-attention encoder."""

    downscale = (16, 16)

    def __init__(
        self,
        dims: tuple[int, ...] = (64, 128, 256),
        depths: tuple[int, ...] = (2, 2, 6),
        heads: tuple[int, ...] = (2, 4, 8),
        window: int = 7,
        in_channels: int = 1,
    ):
        super().__init__()
        if len(dims) != 3 or len(depths) != 3 or len(heads) != 3:
            raise ValueError("three stages required")
        if dims[1] != 2 * dims[0] or dims[2] != 2 * dims[1]:
            raise ValueError("stage dims must double (patch merging halves 4C to 2C)")
        self.patch_proj = nn.Conv2d(in_channels, dims[0], kernel_size=4, stride=4)
        self.patch_norm = nn.LayerNorm(dims[0])
        self.stages = nn.ModuleList(
            nn.ModuleList(
                SwinBlock(dims[i], heads[i], window, shifted=bool(b % 2))
                for b in range(depths[i])
            )
            for i in range(3)
        )
        self.merges = nn.ModuleList([PatchMerging(dims[0]), PatchMerging(dims[1])])
        self.norm = nn.LayerNorm(dims[-1])
        self.out_channels = dims[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = _pad_image_to_multiple(x, 4, 4)
        x = self.patch_proj(x).permute(0, 2, 3, 1)
        x = self.patch_norm(x)
        for i, stage in enumerate(self.stages):
            for block in stage:
                x = block(x)
            if i < 2:
                x = self.merges[i](x)
        x = self.norm(x)
        return x.permute(0, 3, 1, 2)


# --- ConvNeXt-style backbone, downscale (16, 16) --------------------------


class LayerNorm2d(nn.Module):
    """LayerNorm over the channel axis of (B, C, H, W)."""

    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x.permute(0, 2, 3, 1)
        x = F.layer_norm(x, (x.shape[-1],), self.weight, self.bias, self.eps)
        return x.permute(0, 3, 1, 2)


class ConvNeXtBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dwconv = nn.Conv2d(dim, dim, kernel_size=7, padding=3, groups=dim)
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self.pwconv1 = nn.Linear(dim, 4 * dim)
        self.act = nn.GELU()
        self.pwconv2 = nn.Linear(4 * dim, dim)
        self.gamma = nn.Parameter(1e-6 * torch.ones(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        shortcut = x
        x = self.dwconv(x).permute(0, 2, 3, 1)
        x = self.pwconv2(self.act(self.pwconv1(self.norm(x))))
        x = (self.gamma * x).permute(0, 3, 1, 2)
        return shortcut + x


class ConvNeXtBackbone(nn.Module):
    """First three ConvNeXt stages behind a 4px patch stem."""

    downscale = (16, 16)

    def __init__(
        self,
        dims: tuple[int, ...] = (64, 128, 256),
        depths: tuple[int, ...] = (3, 3, 9),
        in_channels: int = 1,
    ):
        super().__init__()
        if len(dims) != 3 or len(depths) != 3:
            raise ValueError("three stages required")
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, dims[0], kernel_size=4, stride=4), LayerNorm2d(dims[0])
        )
        self.downsamples = nn.ModuleList(
            nn.Sequential(LayerNorm2d(dims[i]), nn.Conv2d(dims[i], dims[i + 1], 2, 2))
            for i in range(2)
        )
        self.stages = nn.ModuleList(
            nn.Sequential(*(ConvNeXtBlock(dims[i]) for _ in range(depths[i]))) for i in range(3)
        )
        self.norm = LayerNorm2d(dims[-1])
        self.out_channels = dims[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = _pad_image_to_multiple(x, 4, 4)
        x = self.stem(x)
        for i in range(3):
            x = self.stages[i](x)
            if i < 2:
                if x.shape[-2] % 2 or x.shape[-1] % 2:
                    x = F.pad(x, (0, x.shape[-1] % 2, 0, x.shape[-2] % 2))
                x = self.downsamples[i](x)
        return self.norm(x)


# --- registry -------------------------------------------------------------

BACKBONE_DOWNSCALE = {"cnn": (16, 8), "swin": (16, 16), "convnext": (16, 16)}

_PRESETS: dict[tuple[str, str], dict] = {
    ("cnn", "paper"): dict(channels=(32, 64, 128, 256)),
    ("cnn", "micro"): dict(channels=(8, 16, 32, 64)),
    ("swin", "paper"): dict(dims=(64, 128, 256), depths=(2, 2, 6), heads=(2, 4, 8), window=7),
    ("swin", "micro"): dict(dims=(16, 32, 64), depths=(1, 1, 2), heads=(1, 2, 4), window=4),
    ("convnext", "paper"): dict(dims=(64, 128, 256), depths=(3, 3, 9)),
    ("convnext", "micro"): dict(dims=(16, 32, 64), depths=(1, 1, 2)),
}

_FACTORIES = {"cnn": ConvBackbone, "swin": SwinBackbone, "convnext": ConvNeXtBackbone}


def build_backbone(name: str, preset: str = "paper", **overrides) -> tuple[nn.Module, tuple[int, int], int]:
    """Backbone module plus its (r_h, r_w) and output channel count."""
    if name not in _FACTORIES:
        raise ValueError(f"unknown backbone {name!r}; choose from {sorted(_FACTORIES)}")
    if (name, preset) not in _PRESETS:
        raise ValueError(f"unknown preset {preset!r} for backbone {name}")
    kwargs = dict(_PRESETS[(name, preset)])
    kwargs.update(overrides)
    module = _FACTORIES[name](**kwargs)
    return module, module.downscale, module.out_channels
