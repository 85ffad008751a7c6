"""Shared building blocks: pooling, positional encodings, attention, conv."""

from __future__ import annotations

import math

import torch
from torch import nn

MAX_REL_DIST = 64


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Average over valid positions only. x: (B, L, C), mask: (B, L) bool."""
    m = mask.to(x.dtype).unsqueeze(-1)
    total = (x * m).sum(dim=1)
    count = m.sum(dim=1).clamp(min=1.0)
    return total / count


def last_valid(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Pick the hidden state at each sequence's last valid step."""
    lengths = mask.sum(dim=1).long()
    idx = (lengths - 1).clamp(min=0)
    return x[torch.arange(x.shape[0], device=x.device), idx]


def sinusoidal_encoding(length: int, width: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Absolute sine/cosine position table of shape (length, width)."""
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, width, 2, dtype=torch.float64) * (-math.log(10000.0) / width)
    )
    table = torch.zeros(length, width, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)[:, : width // 2]
    return table.to(dtype=dtype, device=device)


class SelfAttention(nn.Module):
    """Multi-head self-attention with key-padding masking.

    With relative_bias=True a learned per-head bias over clamped offsets
    j - i is added to the logits (zero-initialized), giving position
    awareness without absolute encodings.
    """

    def __init__(self, width, num_heads, dropout=0.0, relative_bias=False):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = width // num_heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out_proj = nn.Linear(width, width)
        self.attn_drop = nn.Dropout(dropout)
        self.out_drop = nn.Dropout(dropout)
        if relative_bias:
            self.rel_bias = nn.Embedding(2 * MAX_REL_DIST + 1, num_heads)
            nn.init.zeros_(self.rel_bias.weight)
        else:
            self.rel_bias = None

    def _bias(self, length, device):
        pos = torch.arange(length, device=device)
        offsets = (pos[None, :] - pos[:, None]).clamp(-MAX_REL_DIST, MAX_REL_DIST)
        bias = self.rel_bias(offsets + MAX_REL_DIST)
        return bias.permute(2, 0, 1).unsqueeze(0)

    def forward(self, x, mask):
        b, length, width = x.shape
        qkv = self.qkv(x).reshape(b, length, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        if self.rel_bias is not None:
            scores = scores + self._bias(length, x.device).to(scores.dtype)
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = self.attn_drop(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(b, length, width)
        return self.out_drop(self.out_proj(out))


class FeedForward(nn.Module):
    def __init__(self, width, expansion=4, activation=nn.GELU, dropout=0.0):
        super().__init__()
        self.fc1 = nn.Linear(width, expansion * width)
        self.act = activation()
        self.drop1 = nn.Dropout(dropout)
        self.fc2 = nn.Linear(expansion * width, width)
        self.drop2 = nn.Dropout(dropout)

    def forward(self, x):
        return self.drop2(self.fc2(self.drop1(self.act(self.fc1(x)))))


class ConvModule(nn.Module):
    """Pointwise expansion, GLU gate, depthwise conv, LayerNorm, SiLU, pointwise.

    Padded positions are zeroed before the depthwise convolution so padding
    never feeds content into valid frames.
    """

    def __init__(self, width, kernel_size, dropout=0.0):
        super().__init__()
        self.pointwise_in = nn.Conv1d(width, 2 * width, kernel_size=1)
        self.depthwise = nn.Conv1d(
            width, width, kernel_size=kernel_size, padding=kernel_size // 2, groups=width
        )
        self.norm = nn.LayerNorm(width)
        self.act = nn.SiLU()
        self.pointwise_out = nn.Conv1d(width, width, kernel_size=1)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask):
        y = self.pointwise_in(x.transpose(1, 2))
        y = nn.functional.glu(y, dim=1)
        y = y * mask[:, None, :].to(y.dtype)
        y = self.depthwise(y)
        y = self.norm(y.transpose(1, 2))
        y = self.act(y).transpose(1, 2)
        y = self.pointwise_out(y)
        return self.drop(y.transpose(1, 2))
