"""Temporal encoders mapping (B, L, 103) dynamics batches to embeddings.

All architectures share the contract: padded positions never influence the
embedding (masked attention, masked mean pooling, or readout at the last
valid step), normalization is LayerNorm throughout, and construction is
deterministic given a seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
from torch import nn

from ..seqdata import FEATURE_DIM

ARCHS = ("gru", "ms_gru", "tcn", "ms_tcn", "transformer", "conformer")

_ATTENTION_ARCHS = ("transformer", "conformer")


class EncoderConfigError(ValueError):
    """Invalid encoder configuration."""


@dataclass(frozen=True)
class EncoderConfig:
    arch: str
    embed_dim: int = 128
    hidden_dim: int = 256
    num_blocks: int = 4
    num_heads: int = 4
    kernel_sizes: Optional[tuple] = None
    conv_kernel: int = 15
    dropout: float = 0.1

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise EncoderConfigError(f"unknown arch {self.arch!r}, expected {ARCHS}")
        if self.embed_dim < 1 or self.hidden_dim < 1 or self.num_blocks < 1:
            raise EncoderConfigError("embed_dim, hidden_dim, num_blocks must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise EncoderConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

        kernels = self.kernel_sizes
        if kernels is None:
            kernels = (3,) if self.arch == "tcn" else (3, 5, 7)
        kernels = tuple(int(k) for k in kernels)
        object.__setattr__(self, "kernel_sizes", kernels)

        if self.arch in ("tcn", "ms_tcn"):
            if not kernels:
                raise EncoderConfigError("kernel_sizes must be non-empty")
            if self.arch == "tcn" and len(kernels) != 1:
                raise EncoderConfigError(
                    "tcn takes exactly one kernel size; use ms_tcn for several"
                )
            for k in kernels:
                if k < 1 or k % 2 == 0:
                    raise EncoderConfigError(f"kernel sizes must be odd, got {k}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise EncoderConfigError(
                f"conv_kernel must be odd and positive, got {self.conv_kernel}"
            )
        if self.arch in _ATTENTION_ARCHS:
            if self.num_heads < 1 or self.hidden_dim % self.num_heads != 0:
                raise EncoderConfigError(
                    f"num_heads must divide hidden_dim "
                    f"({self.num_heads} vs {self.hidden_dim})"
                )

    def to_json(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "EncoderConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise EncoderConfigError(f"unknown encoder config keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("kernel_sizes") is not None:
            d["kernel_sizes"] = tuple(d["kernel_sizes"])
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class Embedding:
    """A single utterance embedding with an explicit normalization flag."""

    vector: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float32).reshape(-1)
        if vec.ndim != 1 or vec.size < 1:
            raise ValueError("embedding vector must be a non-empty 1-d array")
        if self.normalized:
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"normalized embedding has norm {norm}")
        self.vector = vec

    @classmethod
    def from_vector(cls, vec, normalize: bool = True) -> "Embedding":
        vec = np.asarray(vec, dtype=np.float32).reshape(-1)
        if normalize:
            norm = np.linalg.norm(vec)
            if norm < 1e-12:
                raise ValueError("cannot normalize a zero embedding")
            vec = vec / norm
        return cls(vector=vec, normalized=normalize)


def build_encoder(cfg: EncoderConfig, seed: Optional[int] = None) -> nn.Module:
    """Construct an encoder; identical (cfg, seed) gives identical weights."""
    from .archs import (
        ConformerEncoder,
        GRUEncoder,
        MultiStrideGRUEncoder,
        TCNEncoder,
        TransformerEncoder,
    )

    if seed is not None:
        torch.manual_seed(seed)
    registry = {
        "gru": GRUEncoder,
        "ms_gru": MultiStrideGRUEncoder,
        "tcn": TCNEncoder,
        "ms_tcn": TCNEncoder,
        "transformer": TransformerEncoder,
        "conformer": ConformerEncoder,
    }
    encoder = registry[cfg.arch](cfg)
    encoder.config = cfg
    return encoder


def build_conformer_block(cfg: EncoderConfig):
    from .archs import ConformerBlock

    return ConformerBlock(cfg)


def build_ms_tcn(cfg: EncoderConfig):
    from .archs import TCNEncoder

    if cfg.arch not in ("tcn", "ms_tcn"):
        raise EncoderConfigError(f"arch {cfg.arch!r} is not a temporal-conv encoder")
    return TCNEncoder(cfg)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _as_tensors(sequences, mask, dtype, device):
    x = torch.as_tensor(np.asarray(sequences), dtype=dtype, device=device)
    m = torch.as_tensor(np.asarray(mask), dtype=torch.bool, device=device)
    if x.ndim != 3 or x.shape[-1] != FEATURE_DIM:
        raise EncoderConfigError(
            f"expected sequences of shape (B, L, {FEATURE_DIM}), got {tuple(x.shape)}"
        )
    if m.shape != x.shape[:2]:
        raise EncoderConfigError(
            f"mask shape {tuple(m.shape)} does not match sequences {tuple(x.shape[:2])}"
        )
    if not bool(m.any(dim=1).all()):
        raise EncoderConfigError("every sequence needs at least one valid frame")
    return x, m


def encode(encoder: nn.Module, sequences, mask, normalized: bool = False) -> np.ndarray:
    """Inference helper: run the encoder without gradients, return numpy.

    Accepts numpy arrays or tensors. With normalized=True the rows are
    L2-normalized (zero vectors are an error).
    """
    param = next(encoder.parameters())
    x, m = _as_tensors(sequences, mask, param.dtype, param.device)
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            emb = encoder(x, m)
    finally:
        encoder.train(was_training)
    out = emb.detach().cpu().numpy().astype(np.float32)
    if normalized:
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise ValueError("zero-norm embedding cannot be normalized")
        out = out / norms
    return out


__all__ = [
    "ARCHS",
    "EncoderConfig",
    "EncoderConfigError",
    "Embedding",
    "build_encoder",
    "build_conformer_block",
    "build_ms_tcn",
    "count_parameters",
    "encode",
]
