"""The six encoder architectures."""

from __future__ import annotations

import torch
from torch import nn

from ..seqdata import FEATURE_DIM
from . import EncoderConfig
from .layers import (
    ConvModule,
    FeedForward,
    SelfAttention,
    last_valid,
    masked_mean,
    sinusoidal_encoding,
)

GRU_STRIDES = (1, 2, 4)


class GRUEncoder(nn.Module):
    """Stacked unidirectional GRU, read out at the last valid step."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        dropout = cfg.dropout if cfg.num_blocks > 1 else 0.0
        self.rnn = nn.GRU(
            FEATURE_DIM,
            cfg.hidden_dim,
            num_layers=cfg.num_blocks,
            batch_first=True,
            dropout=dropout,
        )
        self.head = nn.Linear(cfg.hidden_dim, cfg.embed_dim)

    def forward(self, x, mask):
        states, _ = self.rnn(x)
        return self.head(last_valid(states, mask))


class MultiStrideGRUEncoder(nn.Module):
    """Parallel GRUs over stride-1/2/4 subsampled views, final states concatenated."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        dropout = cfg.dropout if cfg.num_blocks > 1 else 0.0
        self.branches = nn.ModuleList(
            nn.GRU(
                FEATURE_DIM,
                cfg.hidden_dim,
                num_layers=cfg.num_blocks,
                batch_first=True,
                dropout=dropout,
            )
            for _ in GRU_STRIDES
        )
        self.head = nn.Linear(len(GRU_STRIDES) * cfg.hidden_dim, cfg.embed_dim)

    def forward(self, x, mask):
        pooled = []
        for stride, branch in zip(GRU_STRIDES, self.branches):
            xs = x[:, ::stride]
            ms = mask[:, ::stride]
            states, _ = branch(xs)
            pooled.append(last_valid(states, ms))
        return self.head(torch.cat(pooled, dim=-1))


class TCNBlock(nn.Module):
    """Same-padded conv, LayerNorm, GELU, dropout, residual."""

    def __init__(self, in_ch, out_ch, kernel_size, dropout):
        super().__init__()
        self.conv = nn.Conv1d(in_ch, out_ch, kernel_size, padding=kernel_size // 2)
        self.norm = nn.LayerNorm(out_ch)
        self.act = nn.GELU()
        self.drop = nn.Dropout(dropout)
        self.residual = nn.Linear(in_ch, out_ch) if in_ch != out_ch else None

    def forward(self, x, mask):
        y = self.conv((x * mask.unsqueeze(-1).to(x.dtype)).transpose(1, 2))
        y = self.drop(self.act(self.norm(y.transpose(1, 2))))
        shortcut = x if self.residual is None else self.residual(x)
        return y + shortcut


class TCNEncoder(nn.Module):
    """Temporal-conv encoder; one branch per kernel size, concat, project, pool.

    A single-entry kernel list is the plain variant; several entries give the
    multi-kernel variant. Both share this implementation, so the single-kernel
    case degenerates exactly.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.branches = nn.ModuleList()
        for k in cfg.kernel_sizes:
            blocks = nn.ModuleList()
            in_ch = FEATURE_DIM
            for _ in range(cfg.num_blocks):
                blocks.append(TCNBlock(in_ch, cfg.hidden_dim, k, cfg.dropout))
                in_ch = cfg.hidden_dim
            self.branches.append(blocks)
        self.mixer = nn.Linear(len(cfg.kernel_sizes) * cfg.hidden_dim, cfg.hidden_dim)
        self.head = nn.Linear(cfg.hidden_dim, cfg.embed_dim)

    def frame_features(self, x, mask):
        """Per-frame features before pooling; handy for locality probes."""
        outs = []
        for blocks in self.branches:
            y = x
            for block in blocks:
                y = block(y, mask)
            outs.append(y)
        return self.mixer(torch.cat(outs, dim=-1))

    def forward(self, x, mask):
        return self.head(masked_mean(self.frame_features(x, mask), mask))


class TransformerBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.norm_attn = nn.LayerNorm(cfg.hidden_dim)
        self.attn = SelfAttention(cfg.hidden_dim, cfg.num_heads, cfg.dropout)
        self.norm_ff = nn.LayerNorm(cfg.hidden_dim)
        self.ff = FeedForward(cfg.hidden_dim, dropout=cfg.dropout)

    def forward(self, x, mask):
        x = x + self.attn(self.norm_attn(x), mask)
        return x + self.ff(self.norm_ff(x))


class TransformerEncoder(nn.Module):
    """Pre-norm transformer with absolute sinusoidal positions, mean-pooled."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.input_proj = nn.Linear(FEATURE_DIM, cfg.hidden_dim)
        self.blocks = nn.ModuleList(TransformerBlock(cfg) for _ in range(cfg.num_blocks))
        self.final_norm = nn.LayerNorm(cfg.hidden_dim)
        self.head = nn.Linear(cfg.hidden_dim, cfg.embed_dim)

    def forward(self, x, mask):
        h = self.input_proj(x)
        pe = sinusoidal_encoding(h.shape[1], h.shape[2], h.dtype, h.device)
        h = h + pe.unsqueeze(0)
        for block in self.blocks:
            h = block(h, mask)
        h = self.final_norm(h)
        return self.head(masked_mean(h, mask))


class ConformerBlock(nn.Module):
    """Macaron block: half-step FF, relative-bias attention, conv module,
    half-step FF. Pre-norm residuals with no trailing norm, so zeroing the
    branch output layers reduces the block to the identity.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        width = cfg.hidden_dim
        self.norm_ff1 = nn.LayerNorm(width)
        self.ff1 = FeedForward(width, activation=nn.SiLU, dropout=cfg.dropout)
        self.norm_attn = nn.LayerNorm(width)
        self.attn = SelfAttention(
            width, cfg.num_heads, cfg.dropout, relative_bias=True
        )
        self.norm_conv = nn.LayerNorm(width)
        self.conv = ConvModule(width, cfg.conv_kernel, cfg.dropout)
        self.norm_ff2 = nn.LayerNorm(width)
        self.ff2 = FeedForward(width, activation=nn.SiLU, dropout=cfg.dropout)

    def forward(self, x, mask):
        x = x + 0.5 * self.ff1(self.norm_ff1(x))
        x = x + self.attn(self.norm_attn(x), mask)
        x = x + self.conv(self.norm_conv(x), mask)
        x = x + 0.5 * self.ff2(self.norm_ff2(x))
        return x


class ConformerEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.input_proj = nn.Linear(FEATURE_DIM, cfg.hidden_dim)
        self.blocks = nn.ModuleList(ConformerBlock(cfg) for _ in range(cfg.num_blocks))
        self.final_norm = nn.LayerNorm(cfg.hidden_dim)
        self.head = nn.Linear(cfg.hidden_dim, cfg.embed_dim)

    def forward(self, x, mask):
        h = self.input_proj(x)
        for block in self.blocks:
            h = block(h, mask)
        h = self.final_norm(h)
        return self.head(masked_mean(h, mask))
