"""Hierarchical windowed-attention backbone.

Four stages of window-attention blocks with alternating regular/shifted
partitioning, separated by 2x2 patch merging (channels double, spatial side
halves). Window grids that do not tile the token map evenly are padded and
the padded keys masked out of attention, so valid tokens never attend to
padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ConfigurationError, ModelConfig


@dataclass
class FeaturePyramid:
    """Ordered multi-scale feature maps, finest (largest side) first."""

    levels: list[torch.Tensor]

    @property
    def channels(self) -> list[int]:
        return [lvl.shape[1] for lvl in self.levels]

    @property
    def spatial_sides(self) -> list[int]:
        return [lvl.shape[-1] for lvl in self.levels]


def window_partition(x: torch.Tensor, ws: int) -> torch.Tensor:
    """(B, H, W, C) -> (B*nW, ws*ws, C)."""
    B, H, W, C = x.shape
    x = x.view(B, H // ws, ws, W // ws, ws, C)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws * ws, C)


def window_reverse(windows: torch.Tensor, ws: int, H: int, W: int) -> torch.Tensor:
    """(B*nW, ws*ws, C) -> (B, H, W, C)."""
    B = windows.shape[0] // ((H // ws) * (W // ws))
    x = windows.view(B, H // ws, W // ws, ws, ws, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(B, H, W, -1)


class WindowAttention(nn.Module):
    """Multi-head self-attention within a window, with learned relative position bias."""

    def __init__(self, dim: int, window_size: int, num_heads: int):
        super().__init__()
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5

        self.relative_position_bias_table = nn.Parameter(
            torch.zeros((2 * window_size - 1) ** 2, num_heads)
        )
        coords = torch.stack(torch.meshgrid(
            torch.arange(window_size), torch.arange(window_size), indexing="ij"))
        flat = torch.flatten(coords, 1)
        rel = flat[:, :, None] - flat[:, None, :]
        rel = rel.permute(1, 2, 0).contiguous()
        rel[:, :, 0] += window_size - 1
        rel[:, :, 1] += window_size - 1
        rel[:, :, 0] *= 2 * window_size - 1
        self.register_buffer("relative_position_index", rel.sum(-1))

        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)
        nn.init.trunc_normal_(self.relative_position_bias_table, std=0.02)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        B_, N, C = x.shape
        qkv = self.qkv(x).reshape(B_, N, 3, self.num_heads, C // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)

        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.relative_position_bias_table[self.relative_position_index.view(-1)]
        bias = bias.view(N, N, -1).permute(2, 0, 1)
        attn = attn + bias.unsqueeze(0)

        if mask is not None:
            nW = mask.shape[0]
            attn = attn.view(B_ // nW, nW, self.num_heads, N, N) + mask[None, :, None]
            attn = attn.view(-1, self.num_heads, N, N)
        attn = attn.softmax(dim=-1)

        x = (attn @ v).transpose(1, 2).reshape(B_, N, C)
        return self.proj(x)


def _build_attn_mask(H: int, W: int, Hp: int, Wp: int, ws: int, shift: int) -> torch.Tensor | None:
    """Combined shifted-window + padding mask on the padded (Hp, Wp) grid.

    Entry (w, i, j) is 0 when token i may attend to token j in window w and
    -100 otherwise. Attention is allowed when i and j share a shift region
    and j is a valid (non-padded) token; self-attention is always allowed so
    padded query rows stay finite under softmax.
    """
    padded = (Hp, Wp) != (H, W)
    if shift == 0 and not padded:
        return None

    # Region ids follow the canonical 3x3 slicing, which describes the grid
    # after the cyclic shift; the validity map is defined pre-shift and rolled.
    region = torch.zeros((1, Hp, Wp, 1))
    if shift > 0:
        slices = (slice(0, -ws), slice(-ws, -shift), slice(-shift, None))
        cnt = 0
        for h in slices:
            for w in slices:
                region[:, h, w, :] = cnt
                cnt += 1

    valid = torch.zeros((1, Hp, Wp, 1))
    valid[:, :H, :W, :] = 1.0
    if shift > 0:
        valid = torch.roll(valid, shifts=(-shift, -shift), dims=(1, 2))

    region_w = window_partition(region, ws).squeeze(-1)  # (nW, ws*ws)
    valid_w = window_partition(valid, ws).squeeze(-1)
    same_region = region_w.unsqueeze(1) == region_w.unsqueeze(2)
    key_valid = valid_w.unsqueeze(1) > 0
    allowed = same_region & key_valid
    n = ws * ws
    allowed |= torch.eye(n, dtype=torch.bool).unsqueeze(0)
    return torch.where(allowed, 0.0, -100.0)


class SwinBlock(nn.Module):
    """Pre-norm transformer block with (shifted-)window attention and an MLP."""

    def __init__(self, dim: int, resolution: tuple[int, int], num_heads: int,
                 window_size: int, shift: bool, mlp_ratio: float = 4.0):
        super().__init__()
        H, W = resolution
        self.resolution = resolution
        ws = min(window_size, H, W)
        self.window_size = ws
        self.shift_size = ws // 2 if (shift and ws < min(H, W)) else 0
        # Pad the token grid up to a multiple of the window size.
        self.Hp = (H + ws - 1) // ws * ws
        self.Wp = (W + ws - 1) // ws * ws

        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, ws, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

        mask = _build_attn_mask(H, W, self.Hp, self.Wp, ws, self.shift_size)
        self.register_buffer("attn_mask", mask, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        H, W = self.resolution
        B, L, C = x.shape
        if L != H * W:
            raise ConfigurationError(f"token count {L} != {H}x{W}")

        shortcut = x
        x = self.norm1(x).view(B, H, W, C)
        if (self.Hp, self.Wp) != (H, W):
            x = F.pad(x, (0, 0, 0, self.Wp - W, 0, self.Hp - H))
        if self.shift_size > 0:
            x = torch.roll(x, shifts=(-self.shift_size, -self.shift_size), dims=(1, 2))

        windows = window_partition(x, self.window_size)
        windows = self.attn(windows, mask=self.attn_mask)
        x = window_reverse(windows, self.window_size, self.Hp, self.Wp)

        if self.shift_size > 0:
            x = torch.roll(x, shifts=(self.shift_size, self.shift_size), dims=(1, 2))
        x = x[:, :H, :W].reshape(B, L, C)

        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class PatchMerging(nn.Module):
    """2x2 token aggregation: spatial side halves, channels double."""

    def __init__(self, resolution: tuple[int, int], dim: int):
        super().__init__()
        self.resolution = resolution
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        H, W = self.resolution
        B, L, C = x.shape
        x = x.view(B, H, W, C)
        x = torch.cat([x[:, 0::2, 0::2], x[:, 1::2, 0::2],
                       x[:, 0::2, 1::2], x[:, 1::2, 1::2]], dim=-1)
        x = x.view(B, (H // 2) * (W // 2), 4 * C)
        return self.reduction(self.norm(x))


class SwinStage(nn.Module):
    def __init__(self, dim: int, resolution: tuple[int, int], depth: int,
                 num_heads: int, window_size: int, mlp_ratio: float):
        super().__init__()
        self.blocks = nn.ModuleList([
            SwinBlock(dim, resolution, num_heads, window_size,
                      shift=(i % 2 == 1), mlp_ratio=mlp_ratio)
            for i in range(depth)
        ])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x


class SwinBackbone(nn.Module):
    """Patch embedding plus four window-attention stages.

    Produces a 4-level pyramid with channels ``stage_dims`` and spatial side
    ``input_size / (patch_size * 2**i)`` at level i.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        S, P = config.input_size, config.patch_size
        self.patch_embed = nn.Conv2d(3, config.stage_dims[0], kernel_size=P, stride=P)
        self.embed_norm = nn.LayerNorm(config.stage_dims[0])

        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        self.out_norms = nn.ModuleList()
        for i in range(4):
            side = S // (P * 2 ** i)
            res = (side, side)
            self.stages.append(SwinStage(
                config.stage_dims[i], res, config.stage_depths[i],
                config.stage_heads[i], config.window_size, config.mlp_ratio))
            self.out_norms.append(nn.LayerNorm(config.stage_dims[i]))
            if i < 3:
                self.merges.append(PatchMerging(res, config.stage_dims[i]))

        self.apply(_init_weights)

    def forward(self, image_batch: torch.Tensor) -> FeaturePyramid:
        B, C, H, W = image_batch.shape
        S = self.config.input_size
        if C != 3 or H != S or W != S:
            raise ConfigurationError(
                f"expected input of shape (B, 3, {S}, {S}), got {tuple(image_batch.shape)}")

        x = self.patch_embed(image_batch)  # (B, C0, S/P, S/P)
        side = x.shape[-1]
        x = x.flatten(2).transpose(1, 2)
        x = self.embed_norm(x)

        levels = []
        for i in range(4):
            x = self.stages[i](x)
            f = self.out_norms[i](x)
            f = f.transpose(1, 2).reshape(B, -1, side, side)
            levels.append(f)
            if i < 3:
                x = self.merges[i](x)
                side //= 2
        return FeaturePyramid(levels)


def _init_weights(m: nn.Module) -> None:
    if isinstance(m, nn.Linear):
        nn.init.trunc_normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.LayerNorm):
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)
