"""Metric oracles, drift-to-noise hand cases, and the analysis helpers."""

import numpy as np
import pytest
from scipy.stats import spearmanr

from dynid.encoders import EncoderConfig
from dynid.evalkit import (
    AnalysisError,
    DnrError,
    EvalError,
    ShapeStatsRow,
    bootstrap_ci,
    classification_scores,
    compute_dnr,
    confusion_matrix,
    dnr_recall_analysis,
    enrollment_analysis,
    evaluate,
    length_analysis,
    load_shape_stats,
)
from dynid.trainer import TrainConfig, train_joint_focal


def brute_force_scores(y_true, y_pred, num_classes):
    """Independent per-class tally; no shared code with the implementation."""
    correct = sum(int(t == p) for t, p in zip(y_true, y_pred))
    accuracy = correct / len(y_true)
    f1s = []
    for c in range(num_classes):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        if tp + fn == 0:
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        f1s.append(f1)
    return accuracy, float(np.mean(f1s))


def test_confusion_matrix_layout():
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 0], num_classes=3)
    np.testing.assert_array_equal(cm, [[1, 1, 0], [0, 1, 0], [1, 0, 0]])


def test_three_class_hand_case():
    # confusion [[2,0,0],[1,1,0],[0,0,2]]
    y_true = [0, 0, 1, 1, 2, 2]
    y_pred = [0, 0, 0, 1, 2, 2]
    scores = classification_scores(y_true, y_pred, num_classes=3)
    assert scores["accuracy"] == pytest.approx(5 / 6)
    assert scores["macro_f1"] == pytest.approx(0.8222, abs=1e-4)
    assert scores["macro_f1"] == pytest.approx((0.8 + 2 / 3 + 1.0) / 3, abs=1e-9)


def test_perfect_predictor():
    y = [0, 1, 2, 1, 0]
    scores = classification_scores(y, y, num_classes=3)
    assert scores["accuracy"] == 1.0
    assert scores["macro_f1"] == 1.0
    assert scores["per_class_recall"] == {0: 1.0, 1: 1.0, 2: 1.0}


@pytest.mark.parametrize("seed", range(30))
def test_scores_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    c = int(rng.integers(2, 8))
    y_true = rng.integers(0, c, size=n).tolist()
    y_pred = rng.integers(0, c, size=n).tolist()
    scores = classification_scores(y_true, y_pred, num_classes=c)
    acc, f1 = brute_force_scores(y_true, y_pred, c)
    assert scores["accuracy"] == pytest.approx(acc, abs=1e-12)
    assert scores["macro_f1"] == pytest.approx(f1, abs=1e-12)


def test_macro_f1_skips_unsupported_classes():
    # class 2 never appears in y_true; macro-F1 averages over classes 0 and 1
    y_true = [0, 0, 1]
    y_pred = [0, 2, 1]
    scores = classification_scores(y_true, y_pred, num_classes=3)
    f1_class0 = 2 * (1.0 * 0.5) / (1.0 + 0.5)
    assert scores["macro_f1"] == pytest.approx((f1_class0 + 1.0) / 2)


def test_random_predictor_near_chance():
    rng = np.random.default_rng(0)
    c = 1429
    n = 200_000
    y_true = rng.integers(0, c, size=n)
    y_pred = rng.integers(0, c, size=n)
    acc = float((y_true == y_pred).mean())
    # 6-sigma band around 1/1429
    p = 1.0 / c
    sigma = (p * (1 - p) / n) ** 0.5
    assert abs(acc - p) < 6 * sigma


# ---------------------------------------------------------------------------
# drift-to-noise


def _row(spk, sess, mean, std):
    return ShapeStatsRow(
        speaker_id=spk,
        session_id=sess,
        mean=np.asarray(mean, dtype=np.float64),
        std=np.asarray(std, dtype=np.float64),
    )


def test_dnr_zero_drift():
    rows = [
        _row("p", "s0", [1.0, 2.0], [0.5, 0.5]),
        _row("p", "s1", [1.0, 2.0], [0.7, 0.2]),
    ]
    report = compute_dnr(rows)
    assert report.per_speaker["p"] == 0.0


def test_dnr_two_session_hand_case():
    # one-dimensional: session means 2 and 5, both stds 1
    rows = [_row("p", "s0", [2.0], [1.0]), _row("p", "s1", [5.0], [1.0])]
    report = compute_dnr(rows)
    assert report.per_speaker["p"] == pytest.approx(2.999997, abs=1e-5)


def test_dnr_three_session_median():
    # pairwise drifts {1, 2, 4} -> median 2 in the numerator
    rows = [
        _row("p", "s0", [0.0], [1.0]),
        _row("p", "s1", [1.0], [1.0]),
        _row("p", "s2", [-3.0], [1.0]),
    ]
    drifts = sorted([1.0, 3.0, 4.0])
    assert np.median(drifts) == 3.0  # sanity on the construction below

    rows = [
        _row("p", "s0", [0.0], [1.0]),
        _row("p", "s1", [1.0], [1.0]),
        _row("p", "s2", [3.0], [1.0]),
    ]
    # drifts: |0-1|=1, |1-3|=2, |0-3|=3 -> median 2
    report = compute_dnr(rows)
    assert report.per_speaker["p"] == pytest.approx(2.0 / (1.0 + 1e-6), abs=1e-9)


def test_dnr_single_session_excluded_and_listed():
    rows = [
        _row("a", "s0", [2.0], [1.0]),
        _row("a", "s1", [5.0], [1.0]),
        _row("b", "s0", [1.0], [1.0]),
    ]
    report = compute_dnr(rows)
    assert sorted(report.per_speaker) == ["a"]
    assert report.excluded == ["b"]
    assert report.to_json()["excluded"] == ["b"]


def test_dnr_all_single_session_is_an_error():
    with pytest.raises(DnrError):
        compute_dnr([_row("a", "s0", [1.0], [1.0])])


def test_dnr_duplicate_session_rejected():
    rows = [
        _row("a", "s0", [1.0], [1.0]),
        _row("a", "s0", [2.0], [1.0]),
    ]
    with pytest.raises(DnrError):
        compute_dnr(rows)


def test_dnr_dimension_mismatch_rejected():
    rows = [
        _row("a", "s0", [1.0], [1.0]),
        _row("a", "s1", [1.0, 2.0], [1.0, 1.0]),
    ]
    with pytest.raises(DnrError):
        compute_dnr(rows)


def test_dnr_median_over_speakers():
    rows = []
    for i, drift in enumerate([1.0, 2.0, 10.0]):
        rows.append(_row(f"p{i}", "s0", [0.0], [1.0]))
        rows.append(_row(f"p{i}", "s1", [drift], [1.0]))
    report = compute_dnr(rows)
    assert report.median == pytest.approx(2.0 / (1.0 + 1e-6), abs=1e-9)


def test_shape_stats_loader(tiny_corpus):
    rows = load_shape_stats(tiny_corpus.shape_stats)
    assert len(rows) == 8
    report = compute_dnr(rows)
    assert len(report.per_speaker) == 4
    assert all(v >= 0 for v in report.per_speaker.values())


def test_shape_stats_row_validation():
    with pytest.raises(DnrError):
        _row("a", "s0", [1.0, 2.0], [1.0])
    with pytest.raises(DnrError):
        _row("a", "s0", [1.0], [-1.0])


# ---------------------------------------------------------------------------
# bootstrap and binning


def test_bootstrap_ci_contains_mean_for_tight_data():
    values = np.full(50, 3.3)
    lo, hi = bootstrap_ci(values, iters=200, seed=1)
    assert lo == pytest.approx(3.3)
    assert hi == pytest.approx(3.3)


def test_bootstrap_ci_is_seeded():
    rng = np.random.default_rng(2)
    values = rng.normal(0.0, 1.0, size=40)
    assert bootstrap_ci(values, iters=300, seed=5) == bootstrap_ci(
        values, iters=300, seed=5
    )
    assert bootstrap_ci(values, iters=300, seed=5) != bootstrap_ci(
        values, iters=300, seed=6
    )


def test_bootstrap_ci_narrows_with_sample_size():
    rng = np.random.default_rng(3)
    widths = []
    for n in (10, 1000):
        values = rng.normal(0.0, 1.0, size=n)
        lo, hi = bootstrap_ci(values, iters=500, seed=0)
        widths.append(hi - lo)
    assert widths[1] < widths[0]


def test_dnr_recall_monotone_decreasing_gives_minus_one():
    dnr = {f"p{i}": float(i) for i in range(10)}
    recall = {f"p{i}": 1.0 - 0.08 * i for i in range(10)}
    result = dnr_recall_analysis(dnr, recall, num_bins=3, bootstrap_iters=50)
    assert result.spearman_rho == pytest.approx(-1.0)
    bin_means = [row["recall_mean"] for row in result.rows]
    assert bin_means == sorted(bin_means, reverse=True)


def test_dnr_recall_constant_recall_is_uncorrelated():
    dnr = {f"p{i}": float(i) for i in range(8)}
    recall = {f"p{i}": 0.5 for i in range(8)}
    result = dnr_recall_analysis(dnr, recall, num_bins=2, bootstrap_iters=50)
    assert np.isnan(result.spearman_rho) or abs(result.spearman_rho) < 1e-9
    assert all(row["recall_mean"] == 0.5 for row in result.rows)


def test_dnr_recall_matches_scipy_spearman():
    rng = np.random.default_rng(4)
    dnr = {f"p{i}": float(v) for i, v in enumerate(rng.normal(size=20))}
    recall = {f"p{i}": float(v) for i, v in enumerate(rng.uniform(size=20))}
    result = dnr_recall_analysis(dnr, recall, num_bins=4, bootstrap_iters=10)
    keys = sorted(dnr)
    expected = spearmanr([dnr[k] for k in keys], [recall[k] for k in keys]).statistic
    assert result.spearman_rho == pytest.approx(expected, abs=1e-12)


def test_dnr_recall_small_bins_get_merged():
    dnr = {f"p{i}": float(i) for i in range(5)}
    recall = {f"p{i}": 1.0 for i in range(5)}
    result = dnr_recall_analysis(dnr, recall, num_bins=4, bootstrap_iters=10)
    assert result.merged_bins
    assert all(row["count"] >= 2 for row in result.rows)
    assert sum(row["count"] for row in result.rows) == 5


def test_dnr_recall_equal_bins_partition_persons():
    dnr = {f"p{i}": float(i) for i in range(12)}
    recall = {f"p{i}": 0.9 for i in range(12)}
    result = dnr_recall_analysis(dnr, recall, num_bins=3, bootstrap_iters=10)
    assert [row["count"] for row in result.rows] == [4, 4, 4]
    assert not result.merged_bins


def test_dnr_recall_requires_overlap():
    with pytest.raises(AnalysisError):
        dnr_recall_analysis({"a": 1.0}, {"b": 0.5}, num_bins=2)


# ---------------------------------------------------------------------------
# end-to-end evaluation on a trained tiny model


@pytest.fixture(scope="module")
def tiny_run(tiny_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_run")
    cfg = TrainConfig(
        epochs=6,
        batch_size=16,
        max_length=24,
        seed=0,
        proj_hidden_dim=16,
        proj_dim=16,
    )
    enc = EncoderConfig(arch="gru", embed_dim=16, hidden_dim=24, num_blocks=1, dropout=0.0)
    return train_joint_focal(tiny_corpus.manifest, enc, cfg, out)


def test_evaluate_reports_groups_and_recalls(tiny_records, tiny_run):
    test_recs = [r for r in tiny_records if r.split == "test"]
    report = evaluate(test_recs, str(tiny_run.checkpoint_path))
    assert 0.0 <= report.accuracy <= 1.0
    assert set(report.per_speaker_recall) == {r.speaker_id for r in test_recs}
    assert "GB" in report.group_metrics
    assert report.group_metrics["GB"]["num_utterances"] == len(test_recs)
    cm = np.asarray(report.confusion)
    assert cm.sum() == len(test_recs)


def test_evaluate_rejects_unknown_speaker(tiny_records, tiny_run):
    from dataclasses import replace

    stranger = replace(tiny_records[0], speaker_id="spk9999", utterance_id="x")
    with pytest.raises(EvalError):
        evaluate([stranger], str(tiny_run.checkpoint_path))


def test_evaluate_requires_head(tiny_corpus, tiny_records, tmp_path):
    from dynid.trainer import train_stage1, TrainConfig as TC

    s1 = train_stage1(
        tiny_corpus.manifest,
        EncoderConfig(arch="gru", embed_dim=16, hidden_dim=16, num_blocks=1, dropout=0.0),
        TC(epochs=0, proj_hidden_dim=16, proj_dim=16),
        tmp_path / "s1",
    )
    with pytest.raises(EvalError):
        evaluate(tiny_records[:2], str(s1.checkpoint_path))


def test_length_analysis_long_policy_matches_plain_eval(tiny_records, tiny_run):
    test_recs = [r for r in tiny_records if r.split == "test"]
    longest = max(r.num_frames for r in test_recs)
    rows = length_analysis(test_recs, str(tiny_run.checkpoint_path), lengths=[8, longest])
    from dynid.seqdata import CropPadPolicy
    from dynid.evalkit import evaluate as ev

    direct = ev(
        test_recs, str(tiny_run.checkpoint_path), policy=CropPadPolicy(longest)
    )
    by_len = {row["max_length"]: row for row in rows}
    assert by_len[longest]["accuracy"] == pytest.approx(direct.accuracy)
    assert by_len[longest]["macro_f1"] == pytest.approx(direct.macro_f1)


def test_enrollment_groups_partition_speakers(tiny_records, tiny_run):
    rows = enrollment_analysis(tiny_records, str(tiny_run.checkpoint_path))
    assert sum(row["num_speakers"] for row in rows) == 4
    # every speaker has the same per-speaker training count in this corpus
    assert len(rows) == 1
    assert rows[0]["enrollment"] == 7
