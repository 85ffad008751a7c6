"""Training objectives.

Supervised contrastive loss over unit-normalized embeddings with an optional
cross-batch FIFO memory queue, focal loss, label-smoothed cross entropy, and
a cosine-normalized classifier head.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
from torch import nn

NORM_TOLERANCE = 1e-4
ZERO_NORM_GUARD = 1e-12


class ObjectiveError(ValueError):
    """Input violates an objective's contract (shapes, normalization)."""


class NumericGuardError(ValueError):
    """A quantity that must be safely nonzero is numerically zero."""


@dataclass(frozen=True)
class SupConConfig:
    temperature: float = 0.07
    queue_capacity: int = 4096

    def __post_init__(self):
        if not self.temperature > 0:
            raise ObjectiveError(f"temperature must be > 0, got {self.temperature}")
        if self.queue_capacity < 0:
            raise ObjectiveError("queue_capacity must be >= 0")


class MemoryQueue:
    """FIFO store of recent embeddings and labels for positive/negative mining.

    Entries act as candidates only; they are never anchors and carry no
    gradient. Pushing past capacity evicts the oldest rows first.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 0:
            raise ObjectiveError("capacity must be >= 0")
        if dim < 1:
            raise ObjectiveError("dim must be >= 1")
        self.capacity = capacity
        self.dim = dim
        self._embeddings = torch.empty(0, dim)
        self._labels = torch.empty(0, dtype=torch.long)

    def __len__(self) -> int:
        return self._embeddings.shape[0]

    def push(self, embeddings: torch.Tensor, labels: torch.Tensor) -> None:
        if embeddings.ndim != 2 or embeddings.shape[1] != self.dim:
            raise ObjectiveError(
                f"queue expects (*, {self.dim}) embeddings, got {tuple(embeddings.shape)}"
            )
        if labels.shape != embeddings.shape[:1]:
            raise ObjectiveError("labels must align with embeddings")
        if self.capacity == 0:
            return
        emb = embeddings.detach().clone()
        lab = labels.detach().clone().long()
        if len(self) == 0:
            self._embeddings = emb[-self.capacity :]
            self._labels = lab[-self.capacity :]
            return
        self._embeddings = torch.cat([self._embeddings.to(emb.dtype), emb])[
            -self.capacity :
        ]
        self._labels = torch.cat([self._labels, lab])[-self.capacity :]

    def contents(self):
        return self._embeddings, self._labels


def supcon_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    cfg: SupConConfig,
    queue: Optional[MemoryQueue] = None,
) -> torch.Tensor:
    """Supervised contrastive loss.

    For each anchor i with positive set P(i) (same label, excluding i, drawn
    from the batch plus the queue) the per-anchor term is

        -(1 / |P(i)|) * sum_{p in P(i)} log( exp(z_i . z_p / t)
                                              / sum_{a in A(i)} exp(z_i . z_a / t) )

    where A(i) is every candidate except i itself. Anchors without positives
    are skipped and excluded from the averaging denominator; if no anchor has
    a positive the loss is zero and a RuntimeWarning is emitted. Embeddings
    must arrive unit-normalized. After the loss is computed the batch is
    pushed into the queue, detached.
    """
    if embeddings.ndim != 2 or embeddings.shape[0] < 1:
        raise ObjectiveError(
            f"embeddings must be (B, dim) with B >= 1, got {tuple(embeddings.shape)}"
        )
    if labels.shape != embeddings.shape[:1]:
        raise ObjectiveError("labels must be (B,) aligned with embeddings")
    norms = embeddings.norm(dim=1)
    worst = (norms - 1.0).abs().max().item()
    if worst > NORM_TOLERANCE:
        raise ObjectiveError(
            f"embeddings must be unit-normalized (max |norm - 1| = {worst:.2e})"
        )

    batch = embeddings.shape[0]
    cand = embeddings
    cand_labels = labels
    if queue is not None and len(queue) > 0:
        q_emb, q_lab = queue.contents()
        cand = torch.cat([embeddings, q_emb.to(embeddings.dtype)])
        cand_labels = torch.cat([labels, q_lab.to(labels.dtype)])

    positives = labels[:, None] == cand_labels[None, :]
    self_mask = torch.zeros(batch, cand.shape[0], dtype=torch.bool)
    self_mask[:, :batch] = torch.eye(batch, dtype=torch.bool)
    positives = positives & ~self_mask
    pos_counts = positives.sum(dim=1)
    valid = pos_counts > 0

    if queue is not None:
        queue.push(embeddings, labels)

    if not bool(valid.any()):
        warnings.warn(
            "supcon_loss: no anchor had a positive; returning zero loss",
            RuntimeWarning,
        )
        return (embeddings * 0.0).sum()

    logits = embeddings[valid] @ cand.T / cfg.temperature
    logits = logits.masked_fill(self_mask[valid], float("-inf"))
    log_prob = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    pos_sum = torch.where(
        positives[valid], log_prob, torch.zeros((), dtype=log_prob.dtype)
    ).sum(dim=1)
    per_anchor = -pos_sum / pos_counts[valid].to(log_prob.dtype)
    return per_anchor.mean()


@dataclass(frozen=True)
class FocalConfig:
    gamma: float = 2.0
    class_weights: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ObjectiveError(f"gamma must be >= 0, got {self.gamma}")


def focal_loss(
    logits: torch.Tensor, labels: torch.Tensor, cfg: FocalConfig
) -> torch.Tensor:
    """Focal loss, -(1 - p_t)^gamma * log p_t, averaged over the batch.

    gamma = 0 reduces to plain cross entropy. Optional class weights follow
    the usual weighted-mean convention.
    """
    if logits.ndim != 2:
        raise ObjectiveError(f"logits must be (B, C), got {tuple(logits.shape)}")
    if labels.shape != logits.shape[:1]:
        raise ObjectiveError("labels must be (B,) aligned with logits")
    log_probs = torch.log_softmax(logits, dim=1)
    log_pt = log_probs[torch.arange(logits.shape[0]), labels]
    pt = log_pt.exp()
    per_sample = -((1.0 - pt) ** cfg.gamma) * log_pt
    if cfg.class_weights is None:
        return per_sample.mean()
    weights = torch.as_tensor(
        list(cfg.class_weights), dtype=logits.dtype, device=logits.device
    )
    if weights.shape[0] != logits.shape[1]:
        raise ObjectiveError(
            f"class_weights has {weights.shape[0]} entries for {logits.shape[1]} classes"
        )
    w = weights[labels]
    return (per_sample * w).sum() / w.sum()


def smoothed_ce(
    logits: torch.Tensor, labels: torch.Tensor, alpha: float = 0.1
) -> torch.Tensor:
    """Cross entropy against targets (1 - alpha) * onehot + alpha / C.

    The true class therefore receives weight 1 - alpha + alpha / C. alpha = 0
    is plain cross entropy.
    """
    if not 0.0 <= alpha < 1.0:
        raise ObjectiveError(f"alpha must lie in [0, 1), got {alpha}")
    if logits.ndim != 2:
        raise ObjectiveError(f"logits must be (B, C), got {tuple(logits.shape)}")
    if labels.shape != logits.shape[:1]:
        raise ObjectiveError("labels must be (B,) aligned with logits")
    num_classes = logits.shape[1]
    log_probs = torch.log_softmax(logits, dim=1)
    uniform = -log_probs.mean(dim=1)
    true_term = -log_probs[torch.arange(logits.shape[0]), labels]
    per_sample = (1.0 - alpha) * true_term + alpha * uniform
    return per_sample.mean()


class ClassifierHead(nn.Module):
    """Cosine classifier: logits are scaled cosines against class prototypes."""

    def __init__(self, num_classes: int, embed_dim: int, scale: float = 16.0):
        super().__init__()
        if num_classes < 1 or embed_dim < 1:
            raise ObjectiveError("num_classes and embed_dim must be >= 1")
        if not scale > 0:
            raise ObjectiveError(f"scale must be > 0, got {scale}")
        self.num_classes = num_classes
        self.embed_dim = embed_dim
        self.scale = float(scale)
        self.weight = nn.Parameter(torch.empty(num_classes, embed_dim))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        return cosine_logits(self, embeddings)


def cosine_logits(head: ClassifierHead, embeddings: torch.Tensor) -> torch.Tensor:
    """Scaled cosine similarities between embeddings and class prototypes.

    Both sides are L2-normalized here, so callers can pass raw encoder
    output. Zero-norm rows on either side are a numeric-guard error.
    """
    if embeddings.ndim != 2 or embeddings.shape[1] != head.embed_dim:
        raise ObjectiveError(
            f"embeddings must be (B, {head.embed_dim}), got {tuple(embeddings.shape)}"
        )
    emb_norms = embeddings.norm(dim=1, keepdim=True)
    w_norms = head.weight.norm(dim=1, keepdim=True)
    if bool((emb_norms < ZERO_NORM_GUARD).any()):
        raise NumericGuardError("zero-norm embedding in cosine_logits")
    if bool((w_norms < ZERO_NORM_GUARD).any()):
        raise NumericGuardError("zero-norm class weight in cosine_logits")
    return head.scale * (embeddings / emb_norms) @ (head.weight / w_norms).T
