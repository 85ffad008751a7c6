"""Data model and on-disk formats for facial-dynamics sequences.

A dynamics sequence is a T x 103 float32 array: 100 expression coefficients
followed by 3 jaw-rotation channels per frame. Sequences live in FDYN binary
files and are indexed by a line-delimited JSON manifest whose rows carry
speaker, session, split and group assignments.

FDYN layout (little-endian throughout):

    bytes 0..3   magic "FDYN"
    byte  4      format version (0x01)
    bytes 5..8   u32 frame count T
    bytes 9..12  u32 channel count D (must be 103)
    bytes 13..   T * D float32 values, row-major (frame-major)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

EXPRESSION_DIM = 100
JAW_DIM = 3
FEATURE_DIM = EXPRESSION_DIM + JAW_DIM

SPLITS = ("train", "val", "test")
GROUPS = ("GA", "GB", "none")

_MAGIC = b"FDYN"
_VERSION = 1
_HEADER = struct.Struct("<4sBII")


class FormatError(ValueError):
    """Malformed FDYN container (magic, version, or byte count)."""


class DimensionError(ValueError):
    """Array shape disagrees with the 103-channel contract."""


class DataError(ValueError):
    """Content violates a data invariant (non-finite values, bad rows)."""


class ManifestError(ValueError):
    """Manifest row is malformed or references an unknown speaker."""


@dataclass
class DynSequence:
    """One utterance worth of dynamics.

    frames is normalized to contiguous float32 so FDYN round trips are
    byte-exact. fps is carried from the manifest; it never affects storage.
    """

    frames: np.ndarray
    fps: float = 30.0
    true_length: int = field(default=0)

    def __post_init__(self):
        arr = np.asarray(self.frames)
        if arr.ndim != 2 or arr.shape[1] != FEATURE_DIM:
            raise DimensionError(
                f"expected frames of shape (T, {FEATURE_DIM}), got {arr.shape}"
            )
        if arr.shape[0] < 1:
            raise DataError("sequence must contain at least one frame")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if not np.isfinite(arr).all():
            raise DataError("sequence contains non-finite values")
        if not self.fps > 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        self.frames = arr
        if self.true_length == 0:
            self.true_length = arr.shape[0]
        elif self.true_length != arr.shape[0]:
            raise DataError(
                f"true_length {self.true_length} != stored frames {arr.shape[0]}"
            )


@dataclass(frozen=True)
class CropPadPolicy:
    """Fixed-length protocol: right-pad short sequences, center-crop long ones."""

    max_length: int
    pad_value: float = 0.0

    def __post_init__(self):
        if self.max_length < 1:
            raise ValueError(f"max_length must be >= 1, got {self.max_length}")


@dataclass(frozen=True)
class UtteranceRecord:
    """One manifest row."""

    utterance_id: str
    speaker_id: str
    session_id: str
    split: str
    group: str
    path: str
    num_frames: int
    fps: float

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(
                f"{self.utterance_id}: split must be one of {SPLITS}, got {self.split!r}"
            )
        if self.group not in GROUPS:
            raise ManifestError(
                f"{self.utterance_id}: group must be one of {GROUPS}, got {self.group!r}"
            )

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Batch:
    """Fixed-length training batch: sequences (B, L, 103), mask (B, L), labels (B,)."""

    sequences: np.ndarray
    mask: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.sequences.shape[0]


# ---------------------------------------------------------------------------
# FDYN container


def write_sequence(seq: DynSequence, path) -> None:
    """Serialize a sequence to an FDYN file."""
    t, d = seq.frames.shape
    header = _HEADER.pack(_MAGIC, _VERSION, t, d)
    payload = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_sequence(path, fps: float = 30.0) -> DynSequence:
    """Read an FDYN file. fps is metadata supplied by the caller (manifest)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than FDYN header")
    magic, version, t, d = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if d != FEATURE_DIM:
        raise DimensionError(f"{path}: expected {FEATURE_DIM} channels, got {d}")
    if t == 0:
        raise FormatError(f"{path}: empty sequence")
    expected = _HEADER.size + 4 * t * d
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for T={t}, found {len(data)}"
        )
    frames = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    frames = frames.reshape(t, d).copy()
    if not np.isfinite(frames).all():
        raise DataError(f"{path}: non-finite values in payload")
    return DynSequence(frames=frames, fps=fps)


# ---------------------------------------------------------------------------
# Fixed-length protocol


def _pad_or_crop_frames(frames: np.ndarray, policy: CropPadPolicy):
    t = frames.shape[0]
    length = policy.max_length
    mask = np.zeros(length, dtype=bool)
    if t < length:
        out = np.full((length, frames.shape[1]), policy.pad_value, dtype=np.float32)
        out[:t] = frames
        mask[:t] = True
    elif t > length:
        start = (t - length) // 2
        out = frames[start : start + length].astype(np.float32, copy=True)
        mask[:] = True
    else:
        out = frames.astype(np.float32, copy=True)
        mask[:] = True
    return out, mask


def pad_or_crop(seq: DynSequence, policy: CropPadPolicy):
    """Return (frames (L, 103) float32, mask (L,) bool).

    T < L right-pads with pad_value and marks only the first T positions
    valid; T > L takes the center crop starting at floor((T - L) / 2);
    T == L is the identity.
    """
    return _pad_or_crop_frames(seq.frames, policy)


# ---------------------------------------------------------------------------
# Manifest


_REQUIRED_KEYS = (
    "utterance_id",
    "speaker_id",
    "session_id",
    "split",
    "group",
    "path",
    "num_frames",
    "fps",
)


def write_manifest(records: Sequence[UtteranceRecord], path) -> None:
    """Write records as line-delimited JSON. Paths are stored as given."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")


def load_manifest(path, resolve_paths: bool = True) -> list[UtteranceRecord]:
    """Load manifest rows.

    Relative sequence paths are resolved against the manifest's directory so
    corpora stay relocatable. Unknown keys are ignored; missing keys raise.
    """
    base = Path(path).parent
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            missing = [k for k in _REQUIRED_KEYS if k not in row]
            if missing:
                raise ManifestError(f"{path}:{lineno}: missing keys {missing}")
            rec = UtteranceRecord(**{k: row[k] for k in _REQUIRED_KEYS})
            if resolve_paths and not Path(rec.path).is_absolute():
                rec = UtteranceRecord(
                    **{**rec.to_json(), "path": str(base / rec.path)}
                )
            records.append(rec)
    return records


@dataclass
class ValidationReport:
    """Structured result of manifest validation; violations never raise."""

    num_records: int
    num_speakers: int
    per_speaker_counts: dict
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "num_records": self.num_records,
            "num_speakers": self.num_speakers,
            "per_speaker_counts": self.per_speaker_counts,
            "violations": self.violations,
            "ok": self.ok,
        }


def validate_manifest(
    records: Sequence[UtteranceRecord], check_files: bool = True
) -> ValidationReport:
    """Check manifest consistency and return a report instead of raising.

    Flags duplicate (speaker_id, utterance_id) pairs, group labels that
    disagree with observed session counts (GA needs exactly one session,
    GB at least two), speakers with inconsistent group labels, and missing
    sequence files.
    """
    if not records:
        raise ManifestError("manifest is empty")

    violations = []
    seen_ids = set()
    sessions: dict[str, set] = {}
    groups: dict[str, set] = {}
    counts: dict[str, int] = {}

    for rec in records:
        key = (rec.speaker_id, rec.utterance_id)
        if key in seen_ids:
            violations.append(
                {
                    "kind": "duplicate_id",
                    "subject": rec.utterance_id,
                    "detail": f"duplicate utterance for speaker {rec.speaker_id}",
                }
            )
        seen_ids.add(key)
        sessions.setdefault(rec.speaker_id, set()).add(rec.session_id)
        groups.setdefault(rec.speaker_id, set()).add(rec.group)
        counts[rec.speaker_id] = counts.get(rec.speaker_id, 0) + 1
        if check_files and not Path(rec.path).is_file():
            violations.append(
                {
                    "kind": "missing_file",
                    "subject": rec.utterance_id,
                    "detail": f"sequence file not found: {rec.path}",
                }
            )

    for spk in sorted(sessions):
        n_sessions = len(sessions[spk])
        labels = groups[spk]
        if len(labels) > 1:
            violations.append(
                {
                    "kind": "inconsistent_group",
                    "subject": spk,
                    "detail": f"mixed group labels {sorted(labels)}",
                }
            )
            continue
        label = next(iter(labels))
        if label == "GA" and n_sessions != 1:
            violations.append(
                {
                    "kind": "bad_group",
                    "subject": spk,
                    "detail": f"GA requires one session, found {n_sessions}",
                }
            )
        elif label == "GB" and n_sessions < 2:
            violations.append(
                {
                    "kind": "bad_group",
                    "subject": spk,
                    "detail": f"GB requires >= 2 sessions, found {n_sessions}",
                }
            )

    return ValidationReport(
        num_records=len(records),
        num_speakers=len(counts),
        per_speaker_counts=dict(sorted(counts.items())),
        violations=violations,
    )


# ---------------------------------------------------------------------------
# Labels and batching


def build_label_map(records: Sequence[UtteranceRecord]) -> dict:
    """Map speaker ids to dense indices in lexicographic order."""
    speakers = sorted({rec.speaker_id for rec in records})
    return {spk: idx for idx, spk in enumerate(speakers)}


def save_label_map(label_map: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(label_map, fh, indent=2, sort_keys=True)


def load_label_map(path) -> dict:
    with open(path) as fh:
        return {str(k): int(v) for k, v in json.load(fh).items()}


def load_sequence_cache(records: Sequence[UtteranceRecord]) -> dict:
    """Preload raw frame arrays keyed by path; trainers reuse this per epoch."""
    cache = {}
    for rec in records:
        if rec.path not in cache:
            cache[rec.path] = _fetch_frames(rec, None)
    return cache


def _fetch_frames(rec: UtteranceRecord, cache: Optional[dict]) -> np.ndarray:
    if cache is not None and rec.path in cache:
        return cache[rec.path]
    try:
        return read_sequence(rec.path, fps=rec.fps).frames
    except (OSError, ValueError) as exc:
        raise DataError(
            f"record {rec.utterance_id}: cannot read {rec.path}: {exc}"
        ) from exc


def records_to_batch(
    records: Sequence[UtteranceRecord],
    policy: CropPadPolicy,
    label_map: dict,
    cache: Optional[dict] = None,
) -> Batch:
    """Read, fix length, and stack the given records into one batch."""
    if not records:
        raise ValueError("cannot build an empty batch")
    seqs = np.empty((len(records), policy.max_length, FEATURE_DIM), np.float32)
    mask = np.zeros((len(records), policy.max_length), bool)
    labels = np.empty(len(records), np.int64)
    for j, rec in enumerate(records):
        frames, m = _pad_or_crop_frames(_fetch_frames(rec, cache), policy)
        seqs[j] = frames
        mask[j] = m
        if rec.speaker_id not in label_map:
            raise ManifestError(
                f"record {rec.utterance_id}: speaker {rec.speaker_id} "
                "not present in label map"
            )
        labels[j] = label_map[rec.speaker_id]
    return Batch(sequences=seqs, mask=mask, labels=labels)


def make_batches(
    records: Sequence[UtteranceRecord],
    policy: CropPadPolicy,
    batch_size: int,
    shuffle_seed: Optional[int] = None,
    label_map: Optional[dict] = None,
    cache: Optional[dict] = None,
) -> Iterator[Batch]:
    """Yield fixed-length batches covering every record exactly once.

    Order is deterministic: identity order when shuffle_seed is None, else a
    seeded permutation. Speakers absent from label_map are a hard error.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not records:
        return
    if label_map is None:
        label_map = build_label_map(records)

    order = np.arange(len(records))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(records))

    for start in range(0, len(records), batch_size):
        chunk = [records[int(i)] for i in order[start : start + batch_size]]
        yield records_to_batch(chunk, policy, label_map, cache)
