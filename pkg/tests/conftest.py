"""Shared fixtures: one tiny synthetic corpus reused by the fast tests."""

import numpy as np
import pytest

from dynid.seqdata import load_manifest
from dynid.synthgen import SynthConfig, generate_corpus


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 speakers x 10 utterances x 2 sessions, short clips. Cheap to train on."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    cfg = SynthConfig(
        num_speakers=4,
        utterances_per_speaker=10,
        sessions_per_speaker=2,
        frames_per_utterance=(18, 30),
        signature_dim=4,
        noise_std=0.05,
        seed=7,
    )
    paths = generate_corpus(cfg, out)
    return paths


@pytest.fixture(scope="session")
def tiny_records(tiny_corpus):
    return load_manifest(tiny_corpus.manifest)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One line per release criterion, collected by the acceptance module."""
    try:
        from test_acceptance import RECORD
    except ImportError:
        return
    if not RECORD:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(RECORD):
        terminalreporter.write_line(line)
