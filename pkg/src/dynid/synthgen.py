"""Synthetic corpus generator for the dynamics-identification pipeline.

Each speaker owns a small bank of sinusoidal oscillators (signature
frequencies plus a mixing matrix over the 103 dynamics channels). An
utterance is the mixed oscillator signal with fresh phases and noise:

    x_t = A_p sin(2 pi f_p t / fps + phi_{p,u}) + noise_std * eta_t
          + strength_p * drift_{p,s}

drift_{p,s} projects the speaker's per-session shape-mean offset into the
dynamics channels through a fixed orthonormal map, so static "who you are"
information can contaminate the "how you move" features in a controlled way.
Per-session shape summaries (mean and sigma of the 300 shape coefficients)
are emitted as ground truth for the drift-to-noise diagnostic.

Determinism: every speaker, session, and utterance draws from its own seeded
substream, so regenerating with a different leakage strength changes only the
drift term and leaves all other bytes identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .seqdata import (
    FEATURE_DIM,
    DynSequence,
    UtteranceRecord,
    write_manifest,
    write_sequence,
)

SHAPE_DIM = 300
FPS = 30.0

TRAIN_FRACTION = 0.70
VAL_FRACTION = 0.15

# Per-speaker drift magnitude spread; wide on purpose so the drift-to-noise
# ratio varies strongly across speakers even at a fixed leakage strength.
DRIFT_MAG_RANGE = (0.25, 4.0)
SIGMA_RANGE = (0.5, 1.0)
FREQ_RANGE_HZ = (0.25, 4.0)


class SynthConfigError(ValueError):
    """Invalid generator configuration."""


@dataclass(frozen=True)
class SynthConfig:
    num_speakers: int = 20
    utterances_per_speaker: int = 50
    sessions_per_speaker: int = 2
    frames_per_utterance: tuple = (120, 360)
    signature_dim: int = 8
    noise_std: float = 0.1
    shape_drift_scale: float = 0.5
    leakage_strength: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_speakers < 1:
            raise SynthConfigError("num_speakers must be >= 1")
        if self.utterances_per_speaker < 1:
            raise SynthConfigError("utterances_per_speaker must be >= 1")
        if self.sessions_per_speaker < 1:
            raise SynthConfigError("sessions_per_speaker must be >= 1")
        lo, hi = self.frames_per_utterance
        if lo < 1 or hi < lo:
            raise SynthConfigError(
                f"frames_per_utterance must be a valid range, got {self.frames_per_utterance}"
            )
        if self.signature_dim < 1:
            raise SynthConfigError("signature_dim must be >= 1")
        if self.noise_std < 0:
            raise SynthConfigError("noise_std must be >= 0")
        if self.shape_drift_scale < 0:
            raise SynthConfigError("shape_drift_scale must be >= 0")
        if not 0.0 <= self.leakage_strength <= 1.0:
            raise SynthConfigError(
                f"leakage_strength must lie in [0, 1], got {self.leakage_strength}"
            )

    def to_json(self) -> dict:
        d = asdict(self)
        d["frames_per_utterance"] = list(self.frames_per_utterance)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SynthConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "frames_per_utterance" in d:
            d["frames_per_utterance"] = tuple(d["frames_per_utterance"])
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class SpeakerProfile:
    """Generative parameters for one speaker (exposed for inspection)."""

    speaker_id: str
    freqs_hz: np.ndarray
    mixing: np.ndarray
    base_shape_mean: np.ndarray
    drift_magnitude: float
    session_shape_means: np.ndarray
    session_shape_sigmas: np.ndarray


@dataclass(frozen=True)
class CorpusPaths:
    root: Path
    manifest: Path
    shape_stats: Path
    config: Path


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def build_projection(cfg: SynthConfig) -> np.ndarray:
    """Fixed 103 x 300 map with orthonormal rows, shared by the whole corpus."""
    rng = _stream(cfg.seed, 4)
    gauss = rng.normal(0.0, 1.0, size=(SHAPE_DIM, FEATURE_DIM))
    q, _ = np.linalg.qr(gauss)
    return q.T.copy()


def build_profiles(cfg: SynthConfig) -> list:
    """Draw all per-speaker generative parameters deterministically."""
    profiles = []
    log_lo, log_hi = np.log(DRIFT_MAG_RANGE[0]), np.log(DRIFT_MAG_RANGE[1])
    sig_lo, sig_hi = np.log(SIGMA_RANGE[0]), np.log(SIGMA_RANGE[1])
    for p in range(cfg.num_speakers):
        rng = _stream(cfg.seed, 1, p)
        freqs = rng.uniform(*FREQ_RANGE_HZ, size=cfg.signature_dim)
        mixing = rng.normal(
            0.0, 1.0 / np.sqrt(cfg.signature_dim), size=(FEATURE_DIM, cfg.signature_dim)
        )
        base_mean = rng.normal(0.0, 1.0, size=SHAPE_DIM)
        drift_mag = float(np.exp(rng.uniform(log_lo, log_hi)))

        means = np.empty((cfg.sessions_per_speaker, SHAPE_DIM))
        sigmas = np.empty((cfg.sessions_per_speaker, SHAPE_DIM))
        for s in range(cfg.sessions_per_speaker):
            rng_s = _stream(cfg.seed, 3, p, s)
            offset = cfg.shape_drift_scale * drift_mag * rng_s.normal(0.0, 1.0, SHAPE_DIM)
            means[s] = base_mean + offset
            sigmas[s] = np.exp(rng_s.uniform(sig_lo, sig_hi, SHAPE_DIM))

        profiles.append(
            SpeakerProfile(
                speaker_id=f"spk{p:04d}",
                freqs_hz=freqs,
                mixing=mixing,
                base_shape_mean=base_mean,
                drift_magnitude=drift_mag,
                session_shape_means=means,
                session_shape_sigmas=sigmas,
            )
        )
    return profiles


def split_counts(total: int) -> tuple:
    """Per-speaker utterance split sizes (floor rule, remainder to test)."""
    n_train = int(TRAIN_FRACTION * total)
    n_val = int(VAL_FRACTION * total)
    return n_train, n_val, total - n_train - n_val


def _assignments(cfg: SynthConfig) -> list:
    """Per-utterance (split, session) pairs shared by every speaker.

    Train and val rotate over the first K-1 sessions; test takes the held-out
    last session, so cross-session drift lands on evaluation. Single-session
    corpora put everything in session 0.
    """
    u = cfg.utterances_per_speaker
    k = cfg.sessions_per_speaker
    n_train, n_val, n_test = split_counts(u)
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    out = []
    for i, split in enumerate(splits):
        if k == 1:
            session = 0
        elif split == "test":
            session = k - 1
        else:
            session = i % (k - 1)
        out.append((split, session))
    return out


def _synthesize_utterance(
    cfg: SynthConfig,
    profile: SpeakerProfile,
    projection: np.ndarray,
    speaker_idx: int,
    utt_idx: int,
    session: int,
    strength: float,
) -> np.ndarray:
    rng = _stream(cfg.seed, 2, speaker_idx, utt_idx)
    lo, hi = cfg.frames_per_utterance
    t_frames = int(rng.integers(lo, hi + 1))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=cfg.signature_dim)
    t = np.arange(t_frames)[:, None] / FPS
    angles = 2.0 * np.pi * profile.freqs_hz[None, :] * t + phases[None, :]
    signal = np.sin(angles) @ profile.mixing.T
    noise = rng.normal(0.0, 1.0, size=(t_frames, FEATURE_DIM)) * cfg.noise_std
    frames = signal + noise
    if strength != 0.0:
        offset = profile.session_shape_means[session] - profile.base_shape_mean
        frames = frames + strength * (projection @ offset)[None, :]
    return frames.astype(np.float32)


def _generate(
    cfg: SynthConfig, out_dir: Path, strength_by_speaker: Optional[dict] = None
) -> CorpusPaths:
    out_dir = Path(out_dir)
    seq_dir = out_dir / "sequences"
    seq_dir.mkdir(parents=True, exist_ok=True)

    profiles = build_profiles(cfg)
    projection = build_projection(cfg)
    assignments = _assignments(cfg)

    records = []
    for p, profile in enumerate(profiles):
        strength = cfg.leakage_strength
        if strength_by_speaker is not None:
            strength = strength_by_speaker[profile.speaker_id]
        observed = sorted({session for _, session in assignments})
        group = "GA" if len(observed) == 1 else "GB"
        for u, (split, session) in enumerate(assignments):
            frames = _synthesize_utterance(
                cfg, profile, projection, p, u, session, strength
            )
            utt_id = f"{profile.speaker_id}_u{u:04d}"
            rel_path = f"sequences/{utt_id}.fdyn"
            write_sequence(DynSequence(frames, fps=FPS), out_dir / rel_path)
            records.append(
                UtteranceRecord(
                    utterance_id=utt_id,
                    speaker_id=profile.speaker_id,
                    session_id=f"{profile.speaker_id}_s{session}",
                    split=split,
                    group=group,
                    path=rel_path,
                    num_frames=frames.shape[0],
                    fps=FPS,
                )
            )

    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(records, manifest_path)

    stats_path = out_dir / "shape_stats.jsonl"
    with open(stats_path, "w") as fh:
        for profile in profiles:
            for s in range(cfg.sessions_per_speaker):
                row = {
                    "speaker_id": profile.speaker_id,
                    "session_id": f"{profile.speaker_id}_s{s}",
                    "mean": profile.session_shape_means[s].tolist(),
                    "std": profile.session_shape_sigmas[s].tolist(),
                }
                fh.write(json.dumps(row) + "\n")

    config_path = out_dir / "synth_config.json"
    echo = {"config": cfg.to_json(), "config_hash": cfg.config_hash()}
    with open(config_path, "w") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True)

    return CorpusPaths(
        root=out_dir, manifest=manifest_path, shape_stats=stats_path, config=config_path
    )


def generate_corpus(cfg: SynthConfig, out_dir) -> CorpusPaths:
    """Materialize a corpus: FDYN files, manifest, shape stats, config echo."""
    return _generate(cfg, Path(out_dir))


def inject_leakage(corpus_dir, strengths: Sequence[float]) -> Path:
    """Re-emit a corpus with leakage strengths applied to speaker strata.

    Speakers are split into len(strengths) contiguous strata (near-equal
    sizes). Only the drift term changes: all other draws come from the same
    substreams, so a strength of 0 reproduces the original bytes. Writes
    leakage_strata.json mapping each speaker to its strength and returns its
    path.
    """
    corpus_dir = Path(corpus_dir)
    strengths = [float(s) for s in strengths]
    if not strengths:
        raise SynthConfigError("strengths must be non-empty")
    for s in strengths:
        if not 0.0 <= s <= 1.0:
            raise SynthConfigError(f"leakage strength must lie in [0, 1], got {s}")

    with open(corpus_dir / "synth_config.json") as fh:
        echo = json.load(fh)
    cfg = SynthConfig.from_json(echo["config"])
    if len(strengths) > cfg.num_speakers:
        raise SynthConfigError(
            f"{len(strengths)} strata for {cfg.num_speakers} speakers"
        )

    strata = np.array_split(np.arange(cfg.num_speakers), len(strengths))
    strength_by_speaker = {}
    stratum_of = {}
    for j, chunk in enumerate(strata):
        for p in chunk:
            spk = f"spk{int(p):04d}"
            strength_by_speaker[spk] = strengths[j]
            stratum_of[spk] = j

    _generate(cfg, corpus_dir, strength_by_speaker=strength_by_speaker)

    strata_path = corpus_dir / "leakage_strata.json"
    with open(strata_path, "w") as fh:
        json.dump(
            {
                "strengths": strengths,
                "speaker_strength": dict(sorted(strength_by_speaker.items())),
                "speaker_stratum": dict(sorted(stratum_of.items())),
            },
            fh,
            indent=2,
        )
    return strata_path


def load_leakage_strata(corpus_dir) -> dict:
    with open(Path(corpus_dir) / "leakage_strata.json") as fh:
        return json.load(fh)
