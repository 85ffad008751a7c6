"""Evaluation: closed-set identification metrics, the drift-to-noise ratio
(DNR) diagnostic, and the binned analyses built on top of them.

DNR for a person p with per-session shape means mu_{p,s} and spreads
sigma_{p,s} is

    DNR(p) = median_{s != s'} ||mu_{p,s} - mu_{p,s'}||_2
             / ( mean_s ||sigma_{p,s}||_2 + eps )

High values mean the person's static shape moves more between sessions than
it wobbles within one, which is exactly when static information leaking into
the dynamics features helps within-session and hurts across sessions.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import stats as scipy_stats

from .checkpoint import LoadedCheckpoint, load_checkpoint
from .seqdata import CropPadPolicy, UtteranceRecord, make_batches

DNR_EPS = 1e-6


class EvalError(ValueError):
    """Evaluation cannot proceed (missing head, unknown speakers)."""


class DnrError(ValueError):
    """Shape statistics violate the DNR preconditions."""


class AnalysisError(ValueError):
    """Analysis inputs are unusable (too few persons, empty join)."""


# ---------------------------------------------------------------------------
# Basic classification metrics


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Counts with true labels on rows, predictions on columns."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise EvalError("y_true and y_pred must align")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def scores_from_confusion(cm: np.ndarray):
    """(accuracy, macro_f1, per_class_recall dict over supported classes).

    Macro-F1 averages over classes with at least one true sample; precision
    counts come from the same confusion, so predictions into unsupported
    classes still cost their true class a false negative.
    """
    total = cm.sum()
    if total == 0:
        raise EvalError("empty confusion matrix")
    accuracy = float(np.trace(cm) / total)
    support = cm.sum(axis=1)
    f1s = []
    recalls = {}
    for c in np.nonzero(support)[0]:
        tp = cm[c, c]
        fn = support[c] - tp
        fp = cm[:, c].sum() - tp
        f1s.append(2.0 * tp / (2.0 * tp + fp + fn))
        recalls[int(c)] = float(tp / support[c])
    return accuracy, float(np.mean(f1s)), recalls


def classification_scores(y_true, y_pred, num_classes: int) -> dict:
    cm = confusion_matrix(y_true, y_pred, num_classes)
    accuracy, macro_f1, recalls = scores_from_confusion(cm)
    return {
        "accuracy": accuracy,
        "macro_f1": macro_f1,
        "per_class_recall": recalls,
        "confusion": cm,
    }


# ---------------------------------------------------------------------------
# Closed-set evaluation


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    num_utterances: int
    num_speakers: int
    per_speaker_recall: dict
    group_metrics: dict
    confusion: np.ndarray
    labels: list
    max_length: int

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "num_utterances": self.num_utterances,
            "num_speakers": self.num_speakers,
            "per_speaker_recall": self.per_speaker_recall,
            "group_metrics": self.group_metrics,
            "labels": self.labels,
            "confusion": self.confusion.tolist(),
            "max_length": self.max_length,
        }


def _as_loaded(checkpoint) -> LoadedCheckpoint:
    if isinstance(checkpoint, LoadedCheckpoint):
        return checkpoint
    return load_checkpoint(checkpoint)


def default_policy(ckpt: LoadedCheckpoint) -> CropPadPolicy:
    train_cfg = ckpt.header.get("train_config") or {}
    return CropPadPolicy(max_length=int(train_cfg.get("max_length", 300)))


def evaluate(
    records: Sequence[UtteranceRecord],
    checkpoint,
    policy: Optional[CropPadPolicy] = None,
    batch_size: int = 256,
) -> MetricsReport:
    """Closed-set identification over the given records.

    Predictions are the argmax of the head's cosine logits. Speakers missing
    from the checkpoint's label map are a hard error. The policy defaults to
    the one the checkpoint was trained with.
    """
    if not records:
        raise EvalError("no records to evaluate")
    ckpt = _as_loaded(checkpoint)
    if ckpt.head is None:
        raise EvalError("checkpoint has no classifier head; train a classifier stage")
    label_map = ckpt.label_map
    unknown = sorted({r.speaker_id for r in records} - set(label_map))
    if unknown:
        raise EvalError(f"speakers not in the checkpoint label map: {unknown}")
    if policy is None:
        policy = default_policy(ckpt)

    encoder = ckpt.encoder.eval()
    head = ckpt.head.eval()
    preds = []
    targets = []
    with torch.no_grad():
        for batch in make_batches(records, policy, batch_size, label_map=label_map):
            x = torch.from_numpy(batch.sequences)
            m = torch.from_numpy(batch.mask)
            logits = head(encoder(x, m))
            preds.append(logits.argmax(dim=1).numpy())
            targets.append(batch.labels)
    y_pred = np.concatenate(preds)
    y_true = np.concatenate(targets)

    num_classes = len(label_map)
    cm = confusion_matrix(y_true, y_pred, num_classes)
    accuracy, macro_f1, recalls = scores_from_confusion(cm)
    index_to_speaker = {v: k for k, v in label_map.items()}
    labels = [index_to_speaker[i] for i in range(num_classes)]

    group_metrics = {}
    group_of = {}
    for rec in records:
        group_of.setdefault(rec.group, []).append(rec)
    for group in sorted(group_of):
        idx = [i for i, rec in enumerate(records) if rec.group == group]
        g_cm = confusion_matrix(y_true[idx], y_pred[idx], num_classes)
        g_acc, g_f1, _ = scores_from_confusion(g_cm)
        group_metrics[group] = {
            "accuracy": g_acc,
            "macro_f1": g_f1,
            "num_utterances": len(idx),
            "num_speakers": len({records[i].speaker_id for i in idx}),
        }

    return MetricsReport(
        accuracy=accuracy,
        macro_f1=macro_f1,
        num_utterances=len(records),
        num_speakers=len({r.speaker_id for r in records}),
        per_speaker_recall={labels[c]: r for c, r in recalls.items()},
        group_metrics=group_metrics,
        confusion=cm,
        labels=labels,
        max_length=policy.max_length,
    )


# ---------------------------------------------------------------------------
# Drift-to-noise ratio


@dataclass
class ShapeStatsRow:
    speaker_id: str
    session_id: str
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if self.mean.shape != self.std.shape:
            raise DnrError(
                f"{self.speaker_id}/{self.session_id}: mean and std lengths differ"
            )
        if np.any(self.std < 0):
            raise DnrError(f"{self.speaker_id}/{self.session_id}: negative std")


def load_shape_stats(path) -> list:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DnrError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                rows.append(
                    ShapeStatsRow(
                        speaker_id=obj["speaker_id"],
                        session_id=obj["session_id"],
                        mean=obj["mean"],
                        std=obj["std"],
                    )
                )
            except KeyError as exc:
                raise DnrError(f"{path}:{lineno}: missing key {exc}") from exc
    return rows


@dataclass
class DnrReport:
    per_speaker: dict
    eps: float
    excluded: list = field(default_factory=list)

    @property
    def median(self) -> float:
        return float(np.median(list(self.per_speaker.values())))

    def to_json(self) -> dict:
        return {
            "per_speaker": self.per_speaker,
            "eps": self.eps,
            "median": self.median,
            "num_speakers": len(self.per_speaker),
            "excluded": list(self.excluded),
        }


def compute_dnr(rows: Sequence[ShapeStatsRow], eps: float = DNR_EPS) -> DnrReport:
    """Per-person drift-to-noise ratio from per-session shape statistics.

    Persons with fewer than two sessions have no drift to measure; they are
    left out of per_speaker and listed under excluded. Duplicated
    (person, session) rows or inconsistent vector lengths are errors.
    """
    if eps <= 0:
        raise DnrError(f"eps must be > 0, got {eps}")
    by_speaker: dict = {}
    for row in rows:
        sessions = by_speaker.setdefault(row.speaker_id, {})
        if row.session_id in sessions:
            raise DnrError(f"duplicate session {row.session_id} for {row.speaker_id}")
        sessions[row.session_id] = row
    if not by_speaker:
        raise DnrError("no shape statistics given")

    per_speaker = {}
    excluded = []
    for spk in sorted(by_speaker):
        sessions = by_speaker[spk]
        if len(sessions) < 2:
            excluded.append(spk)
            continue
        dims = {row.mean.shape[0] for row in sessions.values()}
        if len(dims) > 1:
            raise DnrError(f"{spk}: inconsistent shape dimensions {sorted(dims)}")
        keys = sorted(sessions)
        dists = [
            float(np.linalg.norm(sessions[a].mean - sessions[b].mean))
            for a, b in combinations(keys, 2)
        ]
        numerator = float(np.median(dists))
        denom = float(np.mean([np.linalg.norm(sessions[k].std) for k in keys])) + eps
        per_speaker[spk] = numerator / denom
    if not per_speaker:
        raise DnrError("every person has a single session; DNR needs >= 2")
    return DnrReport(per_speaker=per_speaker, eps=eps, excluded=excluded)


# ---------------------------------------------------------------------------
# Binned DNR vs recall


def bootstrap_ci(
    values, iters: int = 1000, seed: int = 0, percentiles=(2.5, 97.5)
) -> tuple:
    """Percentile bootstrap CI for the mean of values."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise AnalysisError("cannot bootstrap an empty sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, vals.size, size=(iters, vals.size))
    means = vals[idx].mean(axis=1)
    lo, hi = np.percentile(means, percentiles)
    return float(lo), float(hi)


@dataclass
class DnrRecallResult:
    rows: list
    spearman_rho: float
    spearman_p: float
    num_persons: int
    num_bins_requested: int
    merged_bins: bool
    bootstrap_iters: int
    seed: int

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "spearman_rho": self.spearman_rho,
            "spearman_p": self.spearman_p,
            "num_persons": self.num_persons,
            "num_bins_requested": self.num_bins_requested,
            "merged_bins": self.merged_bins,
            "bootstrap_iters": self.bootstrap_iters,
            "seed": self.seed,
        }


def dnr_recall_analysis(
    dnr_per_speaker: dict,
    recall_per_speaker: dict,
    num_bins: int = 5,
    bootstrap_iters: int = 1000,
    seed: int = 0,
) -> DnrRecallResult:
    """Bin persons by DNR rank into equal-count bins and summarize recall.

    Bins that end up with fewer than two persons are merged into their left
    neighbor (flagged in the result). The Spearman rank correlation is
    computed over persons, not bins.
    """
    if num_bins < 1:
        raise AnalysisError("num_bins must be >= 1")
    common = sorted(set(dnr_per_speaker) & set(recall_per_speaker))
    if len(common) < 2:
        raise AnalysisError(
            f"need >= 2 persons with both DNR and recall, got {len(common)}"
        )
    dnr_vals = np.array([dnr_per_speaker[s] for s in common], dtype=np.float64)
    rec_vals = np.array([recall_per_speaker[s] for s in common], dtype=np.float64)

    order = np.argsort(dnr_vals, kind="stable")
    chunks = [c for c in np.array_split(order, num_bins) if c.size > 0]
    merged = False
    bins: list = []
    for chunk in chunks:
        if chunk.size < 2 and bins:
            bins[-1] = np.concatenate([bins[-1], chunk])
            merged = True
        else:
            bins.append(chunk)
    if len(bins) > 1 and bins[0].size < 2:
        bins[1] = np.concatenate([bins[0], bins[1]])
        bins = bins[1:]
        merged = True

    rows = []
    for b, idx in enumerate(bins):
        rec = rec_vals[idx]
        lo, hi = bootstrap_ci(rec, iters=bootstrap_iters, seed=seed + b)
        rows.append(
            {
                "bin": b,
                "count": int(idx.size),
                "dnr_min": float(dnr_vals[idx].min()),
                "dnr_max": float(dnr_vals[idx].max()),
                "dnr_mean": float(dnr_vals[idx].mean()),
                "recall_mean": float(rec.mean()),
                "ci_lo": lo,
                "ci_hi": hi,
            }
        )

    with warnings.catch_warnings():
        # Constant recall (tiny corpora, saturated models) is a legal
        # degenerate input; rho comes back nan and callers must cope.
        warnings.simplefilter("ignore", scipy_stats.ConstantInputWarning)
        rho, pval = scipy_stats.spearmanr(dnr_vals, rec_vals)
    return DnrRecallResult(
        rows=rows,
        spearman_rho=float(rho),
        spearman_p=float(pval),
        num_persons=len(common),
        num_bins_requested=num_bins,
        merged_bins=merged,
        bootstrap_iters=bootstrap_iters,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Length and enrollment analyses


def length_analysis(
    records: Sequence[UtteranceRecord],
    checkpoint,
    lengths: Sequence[int],
    batch_size: int = 256,
) -> list:
    """Re-evaluate the same records under different fixed-length policies."""
    if not lengths:
        raise AnalysisError("lengths must be non-empty")
    ckpt = _as_loaded(checkpoint)
    rows = []
    for length in lengths:
        report = evaluate(
            records, ckpt, policy=CropPadPolicy(int(length)), batch_size=batch_size
        )
        rows.append(
            {
                "max_length": int(length),
                "accuracy": report.accuracy,
                "macro_f1": report.macro_f1,
                "group_metrics": report.group_metrics,
            }
        )
    return rows


def enrollment_analysis(
    all_records: Sequence[UtteranceRecord],
    checkpoint,
    policy: Optional[CropPadPolicy] = None,
    batch_size: int = 256,
) -> list:
    """Mean per-person test accuracy grouped by training-utterance count.

    Speakers present in test but absent from train count as enrollment 0.
    Groups partition the evaluated speakers exactly.
    """
    train_counts = Counter(
        rec.speaker_id for rec in all_records if rec.split == "train"
    )
    test_records = [rec for rec in all_records if rec.split == "test"]
    if not test_records:
        raise AnalysisError("no test records in manifest")
    report = evaluate(test_records, checkpoint, policy=policy, batch_size=batch_size)

    groups: dict = {}
    for spk, recall in report.per_speaker_recall.items():
        groups.setdefault(train_counts.get(spk, 0), []).append(recall)
    rows = []
    for count in sorted(groups):
        vals = groups[count]
        rows.append(
            {
                "enrollment": int(count),
                "num_speakers": len(vals),
                "mean_per_person_accuracy": float(np.mean(vals)),
            }
        )
    return rows
