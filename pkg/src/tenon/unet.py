"""Conditional 1D U-Net noise predictor.

Temporal convolutions run along the action-horizon axis; the observation
vector and a sinusoidal embedding of the diffusion step are merged into one
conditioning vector injected into every residual block through feature-wise
affine modulation after group normalization.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = ["ConditionalUNet1D", "SinusoidalEmbedding"]


class SinusoidalEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        if dim % 2 != 0:
            raise ValueError("embedding dim must be even")
        self.dim = dim

    def forward(self, k: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0)
            * torch.arange(half, dtype=torch.float64, device=k.device)
            / (half - 1)
        )
        angles = k.double()[:, None] * freqs[None, :]
        return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class FiLMResBlock(nn.Module):
    """Conv-GN-FiLM-Mish x2 with a 1x1 skip projection."""

    def __init__(self, c_in: int, c_out: int, cond_dim: int, kernel: int, groups: int):
        super().__init__()
        g = math.gcd(groups, c_out)
        self.conv1 = nn.Conv1d(c_in, c_out, kernel, padding=kernel // 2)
        self.norm1 = nn.GroupNorm(g, c_out)
        self.film = nn.Linear(cond_dim, 2 * c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, kernel, padding=kernel // 2)
        self.norm2 = nn.GroupNorm(g, c_out)
        self.skip = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.norm1(self.conv1(x))
        scale, shift = self.film(cond).chunk(2, dim=-1)
        h = h * (1.0 + scale[:, :, None]) + shift[:, :, None]
        h = F.mish(h)
        h = F.mish(self.norm2(self.conv2(h)))
        return h + self.skip(x)


class ConditionalUNet1D(nn.Module):
    """Predicts the injected noise for a noisy action sequence.

    Input/output shape is ``(B, horizon, action_dim)``; the horizon must be
    even (one stride-2 resolution level).
    """

    def __init__(
        self,
        action_dim: int = 9,
        obs_dim: int = 15,
        channels: tuple[int, int] = (32, 64),
        kernel: int = 5,
        groups: int = 8,
        temb_dim: int = 64,
        cond_dim: int = 128,
    ):
        super().__init__()
        c1, c2 = channels
        self.action_dim = action_dim
        self.obs_dim = obs_dim
        self.time_embed = SinusoidalEmbedding(temb_dim)
        self.time_mlp = nn.Sequential(
            nn.Linear(temb_dim, temb_dim),
            nn.Mish(),
            nn.Linear(temb_dim, temb_dim),
        )
        self.cond_mlp = nn.Sequential(
            nn.Linear(obs_dim + temb_dim, cond_dim),
            nn.Mish(),
            nn.Linear(cond_dim, cond_dim),
        )
        self.enc1 = FiLMResBlock(action_dim, c1, cond_dim, kernel, groups)
        self.down = nn.Conv1d(c1, c1, 3, stride=2, padding=1)
        self.enc2 = FiLMResBlock(c1, c2, cond_dim, kernel, groups)
        self.mid = FiLMResBlock(c2, c2, cond_dim, kernel, groups)
        self.up = nn.ConvTranspose1d(c2, c2, 4, stride=2, padding=1)
        self.dec1 = FiLMResBlock(c2 + c1, c1, cond_dim, kernel, groups)
        self.head = nn.Conv1d(c1, action_dim, 1)

    def forward(self, actions: torch.Tensor, obs: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
        if actions.shape[-1] != self.action_dim or actions.shape[1] % 2 != 0:
            raise ValueError(f"bad action shape {tuple(actions.shape)}")
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation dim {obs.shape[-1]} != {self.obs_dim}")
        temb = self.time_mlp(self.time_embed(k).to(actions.dtype))
        cond = self.cond_mlp(torch.cat([obs, temb], dim=-1))

        x = actions.transpose(1, 2)  # (B, action_dim, horizon)
        h1 = self.enc1(x, cond)
        h = self.down(h1)
        h = self.enc2(h, cond)
        h = self.mid(h, cond)
        h = self.up(h)
        h = self.dec1(torch.cat([h, h1], dim=1), cond)
        return self.head(h).transpose(1, 2)
