"""Training loops.

Stage 1 fits an encoder plus a small projection head with the supervised
contrastive objective. Stage 2 freezes the encoder (verified by hashing its
parameters) and fits a cosine classifier with label smoothing on top. The
joint baseline trains encoder and cosine head end to end with focal loss.

Determinism contract: identical data, config, and seed reproduce the run,
including the metrics log (wall-clock timing fields aside).
"""

from __future__ import annotations

import hashlib
import json
import random
import time
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from .checkpoint import label_map_sha256, params_sha256, save_checkpoint
from .encoders import EncoderConfig, build_encoder, count_parameters
from .evalkit import classification_scores
from .objectives import (
    ClassifierHead,
    FocalConfig,
    MemoryQueue,
    SupConConfig,
    cosine_logits,
    focal_loss,
    smoothed_ce,
    supcon_loss,
)
from .seqdata import (
    Batch,
    CropPadPolicy,
    UtteranceRecord,
    build_label_map,
    load_manifest,
    load_sequence_cache,
    records_to_batch,
    save_label_map,
)

STAGES = ("supcon", "classifier", "joint_focal")


class TrainerError(RuntimeError):
    """Training cannot start or finish under the stated contract."""


class TrainingDiverged(TrainerError):
    """Non-finite loss; partial state was dumped for inspection."""


class FreezeViolation(TrainerError):
    """Frozen encoder parameters changed during stage 2."""


class LabelMapMismatch(TrainerError):
    """Manifest speakers are not covered by the checkpoint label map."""


class TrainConfigError(ValueError):
    """Invalid training configuration."""


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "joint_focal"
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    max_length: int = 300
    patience: int = 10
    balanced: Optional[bool] = None
    samples_per_speaker: int = 8
    temperature: float = 0.07
    queue_capacity: int = 4096
    proj_hidden_dim: int = 128
    proj_dim: int = 128
    aux_ce_weight: float = 0.0
    label_smoothing: float = 0.1
    focal_gamma: float = 2.0
    cosine_scale: float = 16.0
    val_batch_size: int = 256

    def __post_init__(self):
        if self.stage not in STAGES:
            raise TrainConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.epochs < 0:
            raise TrainConfigError("epochs must be >= 0")
        if self.batch_size < 1 or self.val_batch_size < 1:
            raise TrainConfigError("batch sizes must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise TrainConfigError("lr and weight_decay must be >= 0")
        if self.max_length < 1:
            raise TrainConfigError("max_length must be >= 1")
        if self.patience < 1:
            raise TrainConfigError("patience must be >= 1")
        if self.samples_per_speaker < 2:
            raise TrainConfigError("samples_per_speaker must be >= 2")
        if self.samples_per_speaker > self.batch_size:
            raise TrainConfigError("samples_per_speaker cannot exceed batch_size")
        if self.aux_ce_weight < 0:
            raise TrainConfigError("aux_ce_weight must be >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise TrainConfigError("label_smoothing must lie in [0, 1)")
        if self.proj_hidden_dim < 1 or self.proj_dim < 1:
            raise TrainConfigError("projection dims must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise TrainConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def policy(self) -> CropPadPolicy:
        return CropPadPolicy(max_length=self.max_length)

    def use_balanced(self) -> bool:
        if self.balanced is not None:
            return self.balanced
        return self.stage == "supcon"


@dataclass
class RunArtifacts:
    run_dir: Path
    checkpoint_path: Path
    label_map_path: Path
    metrics_path: Path
    config_path: Path
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = float("nan")
    param_count: int = 0
    frozen_encoder_sha256: Optional[str] = None


class ProjectionHead(nn.Module):
    """Two-layer MLP used only during contrastive pretraining."""

    def __init__(self, in_dim, hidden_dim, out_dim):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden_dim)
        self.act = nn.ReLU()
        self.fc2 = nn.Linear(hidden_dim, out_dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


# ---------------------------------------------------------------------------
# Shared plumbing


def set_seed(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def _as_records(manifest: Union[str, Path, Sequence[UtteranceRecord]]):
    if isinstance(manifest, (str, Path)):
        return load_manifest(manifest)
    return list(manifest)


def _split(records):
    train = [r for r in records if r.split == "train"]
    val = [r for r in records if r.split == "val"]
    if not train:
        raise TrainerError("manifest has no train records")
    if not val:
        warnings.warn(
            "manifest has no val split; selecting on the train split instead",
            RuntimeWarning,
        )
        val = list(train)
    return train, val


def _sorted_for_val(records):
    return sorted(records, key=lambda r: (r.speaker_id, r.utterance_id))


def _epoch_rng(cfg: TrainConfig, epoch: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, 9001, epoch])


def _plain_order(n: int, batch_size: int, rng) -> list:
    perm = rng.permutation(n)
    return [perm[i : i + batch_size].tolist() for i in range(0, n, batch_size)]


def _balanced_order(records, batch_size: int, k: int, rng) -> list:
    """Groups of up to k same-speaker records packed into batches."""
    by_spk = defaultdict(list)
    for i, rec in enumerate(records):
        by_spk[rec.speaker_id].append(i)
    groups = []
    for spk in sorted(by_spk):
        idxs = np.array(by_spk[spk])
        rng.shuffle(idxs)
        for j in range(0, len(idxs), k):
            groups.append(idxs[j : j + k].tolist())
    order = rng.permutation(len(groups))
    batches, cur = [], []
    for gi in order:
        group = groups[int(gi)]
        if cur and len(cur) + len(group) > batch_size:
            batches.append(cur)
            cur = []
        cur.extend(group)
    if cur:
        batches.append(cur)
    return batches


def _batch_tensors(batch: Batch):
    x = torch.from_numpy(batch.sequences)
    m = torch.from_numpy(batch.mask)
    y = torch.from_numpy(batch.labels)
    return x, m, y


def _write_echo(path, stage, train_cfg, encoder_cfg, label_map, n_train, n_val, params):
    echo = {
        "stage": stage,
        "train_config": train_cfg.to_json(),
        "train_config_hash": train_cfg.config_hash(),
        "encoder_config": encoder_cfg.to_json(),
        "encoder_config_hash": encoder_cfg.config_hash(),
        "param_count": params,
        "num_train_records": n_train,
        "num_val_records": n_val,
        "num_classes": len(label_map),
        "label_map_sha256": label_map_sha256(label_map),
    }
    with open(path, "w") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True)


class _EpochLogger:
    def __init__(self, path):
        self.path = Path(path)
        self.path.write_text("")
        self.history = []

    def log(self, row: dict) -> None:
        self.history.append(row)
        with open(self.path, "a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _dump_divergence(run_dir, encoder, label_map, stage, head=None, extra_modules=None):
    dump = Path(run_dir) / "diverged_state.fckp"
    save_checkpoint(
        dump,
        encoder,
        head=head,
        label_map=label_map,
        stage=stage,
        extra={"diverged": True},
        extra_modules=extra_modules,
    )
    return dump


def _check_positive_supply(cfg: TrainConfig, num_classes: int) -> None:
    if cfg.use_balanced():
        return
    b = cfg.batch_size
    expected_pairs = b * (b - 1) / (2.0 * max(num_classes, 1))
    if expected_pairs < 1.0:
        warnings.warn(
            f"plain batches of {b} over {num_classes} classes expect "
            f"{expected_pairs:.2f} same-class pairs per batch; "
            "contrastive anchors may starve (enable balanced batching)",
            RuntimeWarning,
        )


# ---------------------------------------------------------------------------
# Stage 1: supervised contrastive pretraining


def train_stage1(
    manifest: Union[str, Path, Sequence[UtteranceRecord]],
    encoder_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    out_dir: Union[str, Path],
) -> RunArtifacts:
    """Contrastive pretraining; the checkpoint stores encoder + projection.

    Model selection minimizes the queue-free validation contrastive loss.
    epochs=0 writes the freshly initialized model, which is how a random
    frozen encoder baseline is produced.
    """
    cfg = replace(train_cfg, stage="supcon")
    records = _as_records(manifest)
    train_recs, val_recs = _split(records)
    val_recs = _sorted_for_val(val_recs)
    label_map = build_label_map(records)
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    set_seed(cfg.seed)
    encoder = build_encoder(encoder_cfg)
    proj = ProjectionHead(encoder_cfg.embed_dim, cfg.proj_hidden_dim, cfg.proj_dim)
    aux_head = None
    if cfg.aux_ce_weight > 0:
        aux_head = ClassifierHead(len(label_map), encoder_cfg.embed_dim, cfg.cosine_scale)
    modules = [encoder, proj] + ([aux_head] if aux_head is not None else [])
    opt = torch.optim.AdamW(
        [p for mod in modules for p in mod.parameters()],
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
    )
    supcon_cfg = SupConConfig(temperature=cfg.temperature, queue_capacity=cfg.queue_capacity)
    queue = MemoryQueue(cfg.queue_capacity, cfg.proj_dim)
    cache = load_sequence_cache(train_recs + val_recs)
    _check_positive_supply(cfg, len(label_map))

    def embed(x, m):
        return nn.functional.normalize(proj(encoder(x, m)), dim=1)

    def val_loss() -> float:
        for mod in modules:
            mod.eval()
        losses = []
        with torch.no_grad(), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for start in range(0, len(val_recs), cfg.val_batch_size):
                chunk = val_recs[start : start + cfg.val_batch_size]
                x, m, y = _batch_tensors(
                    records_to_batch(chunk, cfg.policy, label_map, cache)
                )
                losses.append(float(supcon_loss(embed(x, m), y, supcon_cfg, None)))
        for mod in modules:
            mod.train()
        return float(np.mean(losses))

    logger = _EpochLogger(run_dir / "metrics.jsonl")
    best = {"metric": float("inf"), "epoch": -1, "state": None}

    def snapshot():
        state = {
            "encoder": {k: v.detach().clone() for k, v in encoder.state_dict().items()},
            "proj": {k: v.detach().clone() for k, v in proj.state_dict().items()},
        }
        if aux_head is not None:
            state["aux"] = {k: v.detach().clone() for k, v in aux_head.state_dict().items()}
        return state

    best["state"] = snapshot()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        rng = _epoch_rng(cfg, epoch)
        if cfg.use_balanced():
            order = _balanced_order(train_recs, cfg.batch_size, cfg.samples_per_speaker, rng)
        else:
            order = _plain_order(len(train_recs), cfg.batch_size, rng)
        epoch_losses = []
        for idxs in order:
            chunk = [train_recs[i] for i in idxs]
            x, m, y = _batch_tensors(records_to_batch(chunk, cfg.policy, label_map, cache))
            z = embed(x, m)
            loss = supcon_loss(z, y, supcon_cfg, queue)
            if aux_head is not None:
                loss = loss + cfg.aux_ce_weight * smoothed_ce(
                    aux_head(encoder(x, m)), y, cfg.label_smoothing
                )
            if not torch.isfinite(loss):
                dump = _dump_divergence(
                    run_dir, encoder, label_map, "supcon", extra_modules={"proj": proj}
                )
                raise TrainingDiverged(
                    f"non-finite contrastive loss at epoch {epoch}; state dumped to {dump}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(loss.item())
        vloss = val_loss()
        logger.log(
            {
                "epoch": epoch,
                "stage": "supcon",
                "train_loss": float(np.mean(epoch_losses)),
                "val_loss": vloss,
                "val_accuracy": None,
                "val_macro_f1": None,
                "seconds": round(time.perf_counter() - t0, 3),
            }
        )
        if vloss < best["metric"]:
            best.update(metric=vloss, epoch=epoch, state=snapshot())
        elif epoch - best["epoch"] >= cfg.patience:
            break

    encoder.load_state_dict(best["state"]["encoder"])
    proj.load_state_dict(best["state"]["proj"])
    if aux_head is not None:
        aux_head.load_state_dict(best["state"]["aux"])

    params = count_parameters(encoder) + count_parameters(proj)
    ckpt_path = run_dir / "checkpoint.fckp"
    save_checkpoint(
        ckpt_path,
        encoder,
        head=None,
        label_map=label_map,
        stage="supcon",
        train_config=cfg.to_json(),
        extra={
            "best_epoch": best["epoch"],
            "best_val_metric": best["metric"] if best["epoch"] >= 0 else None,
            "param_count": params,
        },
        extra_modules={"proj": proj},
    )
    lm_path = run_dir / "label_map.json"
    save_label_map(label_map, lm_path)
    echo_path = run_dir / "train_config.json"
    _write_echo(
        echo_path, "supcon", cfg, encoder_cfg, label_map, len(train_recs), len(val_recs), params
    )
    return RunArtifacts(
        run_dir=run_dir,
        checkpoint_path=ckpt_path,
        label_map_path=lm_path,
        metrics_path=logger.path,
        config_path=echo_path,
        history=logger.history,
        best_epoch=best["epoch"],
        best_metric=best["metric"] if best["epoch"] >= 0 else float("nan"),
        param_count=params,
    )


# ---------------------------------------------------------------------------
# Stage 2: frozen encoder, cosine classifier


def _cache_embeddings(encoder, records, policy, label_map, cache, batch_size):
    encoder.eval()
    chunks = []
    labels = []
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            part = records[start : start + batch_size]
            x, m, y = _batch_tensors(records_to_batch(part, policy, label_map, cache))
            chunks.append(encoder(x, m))
            labels.append(y)
    return torch.cat(chunks), torch.cat(labels)


def train_stage2(
    manifest: Union[str, Path, Sequence[UtteranceRecord]],
    stage1_checkpoint: Union[str, Path],
    train_cfg: TrainConfig,
    out_dir: Union[str, Path],
) -> RunArtifacts:
    """Fit a cosine classifier on a frozen encoder.

    The encoder comes from the given checkpoint and is bit-frozen: its
    parameter digest is asserted unchanged after training. Embeddings are
    computed once up front (the encoder never changes), so epochs only
    touch the head.
    """
    from .checkpoint import load_checkpoint

    cfg = replace(train_cfg, stage="classifier")
    records = _as_records(manifest)
    train_recs, val_recs = _split(records)
    val_recs = _sorted_for_val(val_recs)
    ckpt = load_checkpoint(stage1_checkpoint)
    if not ckpt.label_map:
        raise LabelMapMismatch(f"{stage1_checkpoint} carries an empty label map")
    label_map = ckpt.label_map
    missing = sorted({r.speaker_id for r in records} - set(label_map))
    if missing:
        raise LabelMapMismatch(
            f"speakers missing from the checkpoint label map: {missing}"
        )

    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    set_seed(cfg.seed)

    encoder = ckpt.encoder
    encoder.requires_grad_(False)
    encoder.eval()
    sha_before = params_sha256(encoder)

    encoder_cfg = ckpt.encoder_config
    head = ClassifierHead(len(label_map), encoder_cfg.embed_dim, cfg.cosine_scale)
    opt = torch.optim.AdamW(head.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    cache = load_sequence_cache(train_recs + val_recs)
    train_emb, train_y = _cache_embeddings(
        encoder, train_recs, cfg.policy, label_map, cache, cfg.val_batch_size
    )
    val_emb, val_y = _cache_embeddings(
        encoder, val_recs, cfg.policy, label_map, cache, cfg.val_batch_size
    )

    def val_scores():
        head.eval()
        with torch.no_grad():
            preds = cosine_logits(head, val_emb).argmax(dim=1).numpy()
        head.train()
        scores = classification_scores(val_y.numpy(), preds, len(label_map))
        return scores["accuracy"], scores["macro_f1"]

    logger = _EpochLogger(run_dir / "metrics.jsonl")
    best = {
        "metric": -float("inf"),
        "epoch": -1,
        "state": {k: v.detach().clone() for k, v in head.state_dict().items()},
    }
    n = train_emb.shape[0]
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        rng = _epoch_rng(cfg, epoch)
        if cfg.use_balanced():
            order = _balanced_order(train_recs, cfg.batch_size, cfg.samples_per_speaker, rng)
        else:
            order = _plain_order(n, cfg.batch_size, rng)
        epoch_losses = []
        for idxs in order:
            sel = torch.as_tensor(idxs, dtype=torch.long)
            logits = cosine_logits(head, train_emb[sel])
            loss = smoothed_ce(logits, train_y[sel], cfg.label_smoothing)
            if not torch.isfinite(loss):
                dump = _dump_divergence(run_dir, encoder, label_map, "classifier", head=head)
                raise TrainingDiverged(
                    f"non-finite classifier loss at epoch {epoch}; state dumped to {dump}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(loss.item())
        acc, f1 = val_scores()
        logger.log(
            {
                "epoch": epoch,
                "stage": "classifier",
                "train_loss": float(np.mean(epoch_losses)),
                "val_loss": None,
                "val_accuracy": acc,
                "val_macro_f1": f1,
                "seconds": round(time.perf_counter() - t0, 3),
            }
        )
        if f1 > best["metric"]:
            best.update(
                metric=f1,
                epoch=epoch,
                state={k: v.detach().clone() for k, v in head.state_dict().items()},
            )
        elif epoch - best["epoch"] >= cfg.patience:
            break

    head.load_state_dict(best["state"])
    sha_after = params_sha256(encoder)
    if sha_after != sha_before:
        raise FreezeViolation(
            f"frozen encoder changed during stage 2 ({sha_before} -> {sha_after})"
        )

    params = count_parameters(encoder) + count_parameters(head)
    ckpt_path = run_dir / "checkpoint.fckp"
    save_checkpoint(
        ckpt_path,
        encoder,
        head=head,
        label_map=label_map,
        stage="classifier",
        train_config=cfg.to_json(),
        extra={
            "best_epoch": best["epoch"],
            "best_val_metric": best["metric"] if best["epoch"] >= 0 else None,
            "param_count": params,
            "frozen_encoder_sha256": sha_after,
            "stage1_checkpoint": str(stage1_checkpoint),
        },
    )
    lm_path = run_dir / "label_map.json"
    save_label_map(label_map, lm_path)
    echo_path = run_dir / "train_config.json"
    _write_echo(
        echo_path,
        "classifier",
        cfg,
        encoder_cfg,
        label_map,
        len(train_recs),
        len(val_recs),
        params,
    )
    return RunArtifacts(
        run_dir=run_dir,
        checkpoint_path=ckpt_path,
        label_map_path=lm_path,
        metrics_path=logger.path,
        config_path=echo_path,
        history=logger.history,
        best_epoch=best["epoch"],
        best_metric=best["metric"] if best["epoch"] >= 0 else float("nan"),
        param_count=params,
        frozen_encoder_sha256=sha_after,
    )


# ---------------------------------------------------------------------------
# Joint focal baseline


def train_joint_focal(
    manifest: Union[str, Path, Sequence[UtteranceRecord]],
    encoder_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    out_dir: Union[str, Path],
) -> RunArtifacts:
    """End-to-end baseline: encoder plus cosine head trained with focal loss."""
    cfg = replace(train_cfg, stage="joint_focal")
    records = _as_records(manifest)
    train_recs, val_recs = _split(records)
    val_recs = _sorted_for_val(val_recs)
    label_map = build_label_map(records)
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    set_seed(cfg.seed)
    encoder = build_encoder(encoder_cfg)
    head = ClassifierHead(len(label_map), encoder_cfg.embed_dim, cfg.cosine_scale)
    opt = torch.optim.AdamW(
        list(encoder.parameters()) + list(head.parameters()),
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
    )
    focal_cfg = FocalConfig(gamma=cfg.focal_gamma)
    cache = load_sequence_cache(train_recs + val_recs)

    def val_scores():
        encoder.eval()
        head.eval()
        preds = []
        ys = []
        with torch.no_grad():
            for start in range(0, len(val_recs), cfg.val_batch_size):
                chunk = val_recs[start : start + cfg.val_batch_size]
                x, m, y = _batch_tensors(
                    records_to_batch(chunk, cfg.policy, label_map, cache)
                )
                preds.append(head(encoder(x, m)).argmax(dim=1).numpy())
                ys.append(y.numpy())
        encoder.train()
        head.train()
        scores = classification_scores(
            np.concatenate(ys), np.concatenate(preds), len(label_map)
        )
        return scores["accuracy"], scores["macro_f1"]

    logger = _EpochLogger(run_dir / "metrics.jsonl")

    def snapshot():
        return {
            "encoder": {k: v.detach().clone() for k, v in encoder.state_dict().items()},
            "head": {k: v.detach().clone() for k, v in head.state_dict().items()},
        }

    best = {"metric": -float("inf"), "epoch": -1, "state": snapshot()}
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        rng = _epoch_rng(cfg, epoch)
        if cfg.use_balanced():
            order = _balanced_order(train_recs, cfg.batch_size, cfg.samples_per_speaker, rng)
        else:
            order = _plain_order(len(train_recs), cfg.batch_size, rng)
        epoch_losses = []
        for idxs in order:
            chunk = [train_recs[i] for i in idxs]
            x, m, y = _batch_tensors(records_to_batch(chunk, cfg.policy, label_map, cache))
            loss = focal_loss(head(encoder(x, m)), y, focal_cfg)
            if not torch.isfinite(loss):
                dump = _dump_divergence(run_dir, encoder, label_map, "joint_focal", head=head)
                raise TrainingDiverged(
                    f"non-finite focal loss at epoch {epoch}; state dumped to {dump}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(loss.item())
        acc, f1 = val_scores()
        logger.log(
            {
                "epoch": epoch,
                "stage": "joint_focal",
                "train_loss": float(np.mean(epoch_losses)),
                "val_loss": None,
                "val_accuracy": acc,
                "val_macro_f1": f1,
                "seconds": round(time.perf_counter() - t0, 3),
            }
        )
        if f1 > best["metric"]:
            best.update(metric=f1, epoch=epoch, state=snapshot())
        elif epoch - best["epoch"] >= cfg.patience:
            break

    encoder.load_state_dict(best["state"]["encoder"])
    head.load_state_dict(best["state"]["head"])

    params = count_parameters(encoder) + count_parameters(head)
    ckpt_path = run_dir / "checkpoint.fckp"
    save_checkpoint(
        ckpt_path,
        encoder,
        head=head,
        label_map=label_map,
        stage="joint_focal",
        train_config=cfg.to_json(),
        extra={
            "best_epoch": best["epoch"],
            "best_val_metric": best["metric"] if best["epoch"] >= 0 else None,
            "param_count": params,
        },
    )
    lm_path = run_dir / "label_map.json"
    save_label_map(label_map, lm_path)
    echo_path = run_dir / "train_config.json"
    _write_echo(
        echo_path,
        "joint_focal",
        cfg,
        encoder_cfg,
        label_map,
        len(train_recs),
        len(val_recs),
        params,
    )
    return RunArtifacts(
        run_dir=run_dir,
        checkpoint_path=ckpt_path,
        label_map_path=lm_path,
        metrics_path=logger.path,
        config_path=echo_path,
        history=logger.history,
        best_epoch=best["epoch"],
        best_metric=best["metric"] if best["epoch"] >= 0 else float("nan"),
        param_count=params,
    )
