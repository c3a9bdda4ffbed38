"""Conditional noise-prediction network.

The network eats the side-information image concatenated with the noisy
image (4 input channels), embeds the step index with interleaved sinusoids,
and runs a fully convolutional 4-level UNet whose blocks are residual
conv blocks with a time bias plus self-attention over the flattened spatial
axis. Parameter count therefore never depends on the image size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


def time_embedding(t: float, c_time: int) -> np.ndarray:
    """Interleaved sinusoidal embedding [sin(w0 t), cos(w0 t), sin(w1 t), ...].

    Frequencies w_i = 10000^(-2i/c_time), i = 0..c_time/2 - 1.
    """
    if c_time % 2:
        raise ValueError("c_time must be even")
    if t < 0:
        raise ValueError("t must be >= 0")
    i = np.arange(c_time // 2, dtype=np.float64)
    w = 10000.0 ** (-2.0 * i / c_time)
    out = np.empty(c_time, dtype=np.float64)
    out[0::2] = np.sin(w * t)
    out[1::2] = np.cos(w * t)
    return out


def time_shift_matrix(dt: float, c_time: int) -> np.ndarray:
    """Block-diagonal rotations D with TE_{t+dt} = D @ TE_t for every t."""
    if c_time % 2:
        raise ValueError("c_time must be even")
    i = np.arange(c_time // 2, dtype=np.float64)
    w = 10000.0 ** (-2.0 * i / c_time)
    d = np.zeros((c_time, c_time), dtype=np.float64)
    cos, sin = np.cos(w * dt), np.sin(w * dt)
    d[0::2, 0::2][np.diag_indices(c_time // 2)] = cos
    d[0::2, 1::2][np.diag_indices(c_time // 2)] = sin
    d[1::2, 0::2][np.diag_indices(c_time // 2)] = -sin
    d[1::2, 1::2][np.diag_indices(c_time // 2)] = cos
    return d


def sinusoidal_embedding(t: torch.Tensor, c_time: int) -> torch.Tensor:
    """Torch twin of time_embedding for batched steps; t shape (B,)."""
    i = torch.arange(c_time // 2, dtype=t.dtype, device=t.device)
    w = torch.pow(torch.tensor(10000.0, dtype=t.dtype, device=t.device), -2.0 * i / c_time)
    args = t[:, None] * w[None, :]
    out = torch.empty(t.shape[0], c_time, dtype=t.dtype, device=t.device)
    out[:, 0::2] = torch.sin(args)
    out[:, 1::2] = torch.cos(args)
    return out


def attention(z: torch.Tensor, w_q: torch.Tensor, w_k: torch.Tensor, w_v: torch.Tensor) -> torch.Tensor:
    """Scaled dot-product self-attention over patch rows.

    z: (..., d_m, d_n); w_q/w_k: (d_n, d_k) with shared d_k; w_v: (d_n, d_n).
    Returns softmax(z w_q (z w_k)^T / sqrt(d_k)) @ (z w_v).
    """
    if w_q.shape[1] != w_k.shape[1]:
        raise ValueError("query and key projections must share their width")
    q = z @ w_q
    k = z @ w_k
    v = z @ w_v
    am = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(w_k.shape[1]), dim=-1)
    return am @ v


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 64
    channel_mult: tuple[int, int, int, int] = (1, 2, 2, 2)
    n_resblocks: int = 3
    dropout: float = 0.1
    time_dim: int | None = None  # default 4 * base_channels
    attention: tuple[bool, bool, bool, bool] = (True, True, True, True)
    in_channels: int = 4  # side image + noisy image, 2 channels each
    out_channels: int = 2

    def __post_init__(self) -> None:
        if len(self.channel_mult) != 4 or len(self.attention) != 4:
            raise ValueError("channel_mult and attention need exactly 4 entries")
        if self.base_channels < 1 or self.n_resblocks < 1:
            raise ValueError("base_channels and n_resblocks must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.embed_dim % 2:
            raise ValueError("time_dim must be even")

    @property
    def embed_dim(self) -> int:
        return 4 * self.base_channels if self.time_dim is None else self.time_dim

    @property
    def level_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_mult)


def _norm_groups(channels: int) -> int:
    g = min(8, channels)
    while channels % g:
        g -= 1
    return g


class ResnetPlus(nn.Module):
    """Residual conv block with an additive time bias.

    branch = conv(drop(silu(gn(conv(silu(gn(x))) + silu(lin(temb))))))
    output = branch + x, through a 1x1 conv when channel counts differ.
    Zeroing the final conv makes the block an exact identity at c_in = c_out.
    """

    def __init__(self, c_in: int, c_out: int, time_dim: int, dropout: float) -> None:
        super().__init__()
        self.norm1 = nn.GroupNorm(_norm_groups(c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, c_out)
        self.norm2 = nn.GroupNorm(_norm_groups(c_out), c_out)
        self.dropout = nn.Dropout(dropout)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + torch.nn.functional.silu(self.time_proj(temb))[:, :, None, None]
        h = self.conv2(self.dropout(torch.nn.functional.silu(self.norm2(h))))
        return h + self.skip(x)


class AttentionBlock(nn.Module):
    """Self-attention over the flattened h*w axis with d_n = channels.

    A residual connection wraps the attention output; the block diagram
    leaves this open and the wrap is the composable choice.
    """

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.norm = nn.GroupNorm(_norm_groups(channels), channels)
        self.w_q = nn.Parameter(torch.randn(channels, channels) / math.sqrt(channels))
        self.w_k = nn.Parameter(torch.randn(channels, channels) / math.sqrt(channels))
        self.w_v = nn.Parameter(torch.randn(channels, channels) / math.sqrt(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        z = self.norm(x).reshape(b, c, h * w).transpose(1, 2)  # (B, h*w, C)
        out = attention(z, self.w_q, self.w_k, self.w_v)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class Downsample(nn.Module):
    def __init__(self, channels: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(torch.nn.functional.interpolate(x, scale_factor=2.0, mode="nearest"))


class _LevelBlocks(nn.Module):
    """n paired (resblock, optional attention) stages."""

    def __init__(self, c_in: int, c_out: int, n_blocks: int, time_dim: int, dropout: float, attn: bool) -> None:
        super().__init__()
        self.res = nn.ModuleList(
            [ResnetPlus(c_in if i == 0 else c_out, c_out, time_dim, dropout) for i in range(n_blocks)]
        )
        self.attn = nn.ModuleList([AttentionBlock(c_out) if attn else nn.Identity() for _ in range(n_blocks)])

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        for res, attn in zip(self.res, self.attn):
            x = attn(res(x, temb))
        return x


class ConditionalDenoiser(nn.Module):
    """4-level UNet predicting the injected noise from (side, noisy, step)."""

    LEVELS = 4

    def __init__(self, cfg: DenoiserConfig) -> None:
        super().__init__()
        self.cfg = cfg
        ch = cfg.level_channels
        tdim = cfg.embed_dim

        self.time_mlp = nn.Sequential(nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        self.stem = nn.Conv2d(cfg.in_channels, ch[0], 3, padding=1)

        self.down = nn.ModuleList(
            [
                _LevelBlocks(
                    ch[i - 1] if i else ch[0], ch[i], cfg.n_resblocks, tdim, cfg.dropout, cfg.attention[i]
                )
                for i in range(self.LEVELS)
            ]
        )
        self.downsample = nn.ModuleList([Downsample(ch[i]) for i in range(self.LEVELS - 1)])

        self.mid_res1 = ResnetPlus(ch[-1], ch[-1], tdim, cfg.dropout)
        self.mid_attn = AttentionBlock(ch[-1])
        self.mid_res2 = ResnetPlus(ch[-1], ch[-1], tdim, cfg.dropout)

        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for i in range(self.LEVELS - 1, -1, -1):
            c_incoming = ch[-1] if i == self.LEVELS - 1 else ch[i + 1]
            self.up.append(
                _LevelBlocks(
                    c_incoming + ch[i], ch[i], cfg.n_resblocks, tdim, cfg.dropout, cfg.attention[i]
                )
            )
            if i:
                self.upsample.append(Upsample(ch[i]))

        self.head_norm = nn.GroupNorm(_norm_groups(ch[0]), ch[0])
        self.head = nn.Conv2d(ch[0], cfg.out_channels, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, side: torch.Tensor, h_t: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if h_t.shape != side.shape:
            raise ValueError(f"side {tuple(side.shape)} and noisy {tuple(h_t.shape)} shapes differ")
        height, width = h_t.shape[-2:]
        factor = 2 ** (self.LEVELS - 1)
        if height % factor or width % factor:
            raise ValueError(f"spatial dims must be divisible by {factor}, got {height}x{width}")
        if height < 2 * factor or width < 2 * factor:
            # the bottleneck map must keep >= 2x2 support for its normalization
            raise ValueError(f"spatial dims must be at least {2 * factor}, got {height}x{width}")
        if not torch.is_tensor(t):
            t = torch.tensor([float(t)], device=h_t.device)
        t = t.to(h_t.dtype).reshape(-1)
        if t.shape[0] == 1 and h_t.shape[0] > 1:
            t = t.expand(h_t.shape[0])

        temb = self.time_mlp(sinusoidal_embedding(t, self.cfg.embed_dim))
        x = self.stem(torch.cat([side, h_t], dim=1))

        skips = []
        for i in range(self.LEVELS):
            x = self.down[i](x, temb)
            skips.append(x)
            if i < self.LEVELS - 1:
                x = self.downsample[i](x)

        x = self.mid_res2(self.mid_attn(self.mid_res1(x, temb)), temb)

        for idx, i in enumerate(range(self.LEVELS - 1, -1, -1)):
            x = torch.cat([x, skips[i]], dim=1)
            x = self.up[idx](x, temb)
            if i:
                x = self.upsample[idx](x)

        return self.head(torch.nn.functional.silu(self.head_norm(x)))


def denoise(
    model: ConditionalDenoiser,
    side: torch.Tensor,
    h_t: torch.Tensor,
    t,
    mode: str = "eval",
) -> torch.Tensor:
    """Run the network in the requested mode (dropout active only in train)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train":
        model.train()
        return model(side, h_t, t)
    model.eval()
    with torch.no_grad():
        return model(side, h_t, t)


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
