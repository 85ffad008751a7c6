"""Command-line surface: happy paths, exit codes, config precedence."""

import json

import pytest

from dynid.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_corpus")
    code = main(
        [
            "synth",
            "--out",
            str(out),
            "--speakers",
            "3",
            "--utterances",
            "8",
            "--frames-min",
            "16",
            "--frames-max",
            "24",
            "--signature-dim",
            "3",
            "--seed",
            "5",
        ]
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def cli_run(cli_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    code = main(
        [
            "train",
            "--manifest",
            str(cli_corpus / "manifest.jsonl"),
            "--out",
            str(out),
            "--stage",
            "joint",
            "--arch",
            "gru",
            "--embed-dim",
            "16",
            "--hidden-dim",
            "16",
            "--num-blocks",
            "1",
            "--dropout",
            "0.0",
            "--epochs",
            "2",
            "--batch-size",
            "8",
            "--max-length",
            "24",
            "--proj-hidden-dim",
            "16",
            "--proj-dim",
            "16",
        ]
    )
    assert code == 0
    return out


def test_synth_emits_summary(capsys, tmp_path):
    code, out, _ = run(
        capsys,
        "synth",
        "--out",
        str(tmp_path / "c"),
        "--speakers",
        "2",
        "--utterances",
        "4",
        "--frames-min",
        "10",
        "--frames-max",
        "12",
        "--signature-dim",
        "2",
    )
    assert code == 0
    summary = json.loads(out)
    assert summary["num_records"] == 8
    assert (tmp_path / "c" / "manifest.jsonl").exists()
    assert (tmp_path / "c" / "shape_stats.jsonl").exists()


def test_validate_ok(capsys, cli_corpus):
    code, out, _ = run(
        capsys, "validate", "--manifest", str(cli_corpus / "manifest.jsonl")
    )
    assert code == 0
    assert json.loads(out)["violations"] == []


def test_validate_reports_violations_with_exit_1(capsys, cli_corpus, tmp_path):
    manifest = cli_corpus / "manifest.jsonl"
    rows = manifest.read_text().splitlines()
    broken_dir = tmp_path / "broken"
    broken_dir.mkdir()
    row = json.loads(rows[0])
    row["path"] = "sequences/missing.fdyn"
    (broken_dir / "manifest.jsonl").write_text(json.dumps(row) + "\n")
    code, out, _ = run(
        capsys, "validate", "--manifest", str(broken_dir / "manifest.jsonl")
    )
    assert code == 1
    report = json.loads(out)
    assert any(v["kind"] == "missing_file" for v in report["violations"])


def test_validate_skip_files(capsys, cli_corpus, tmp_path):
    manifest = cli_corpus / "manifest.jsonl"
    row = json.loads(manifest.read_text().splitlines()[0])
    row["path"] = "sequences/missing.fdyn"
    row["group"] = "none"
    alt = tmp_path / "manifest.jsonl"
    alt.write_text(json.dumps(row) + "\n")
    code, _, _ = run(capsys, "validate", "--manifest", str(alt), "--skip-files")
    assert code == 0


def test_train_writes_artifacts(cli_run):
    assert (cli_run / "checkpoint.fckp").exists()
    assert (cli_run / "metrics.jsonl").exists()
    assert (cli_run / "label_map.json").exists()
    echo = json.load(open(cli_run / "train_config.json"))
    assert echo["stage"] == "joint_focal"
    assert echo["encoder_config"]["arch"] == "gru"


def test_eval_outputs_metrics(capsys, cli_corpus, cli_run):
    code, out, _ = run(
        capsys,
        "eval",
        "--manifest",
        str(cli_corpus / "manifest.jsonl"),
        "--checkpoint",
        str(cli_run / "checkpoint.fckp"),
        "--split",
        "test",
    )
    assert code == 0
    metrics = json.loads(out)
    assert 0.0 <= metrics["accuracy"] <= 1.0
    assert metrics["num_speakers"] == 3


def test_eval_split_all_covers_everything(capsys, cli_corpus, cli_run):
    code, out, _ = run(
        capsys,
        "eval",
        "--manifest",
        str(cli_corpus / "manifest.jsonl"),
        "--checkpoint",
        str(cli_run / "checkpoint.fckp"),
        "--split",
        "all",
    )
    assert code == 0
    assert json.loads(out)["num_utterances"] == 24


def test_dnr_command(capsys, cli_corpus):
    code, out, _ = run(
        capsys, "dnr", "--shape-stats", str(cli_corpus / "shape_stats.jsonl")
    )
    assert code == 0
    report = json.loads(out)
    assert report["num_speakers"] == 3
    assert report["median"] >= 0


def test_analyze_dnr_recall(capsys, cli_corpus, cli_run):
    code, out, _ = run(
        capsys,
        "analyze",
        "--kind",
        "dnr-recall",
        "--manifest",
        str(cli_corpus / "manifest.jsonl"),
        "--checkpoint",
        str(cli_run / "checkpoint.fckp"),
        "--shape-stats",
        str(cli_corpus / "shape_stats.jsonl"),
        "--bins",
        "2",
        "--bootstrap-iters",
        "50",
    )
    assert code == 0
    result = json.loads(out)
    assert result["num_persons"] == 3
    assert len(result["rows"]) >= 1


def test_analyze_dnr_recall_needs_shape_stats(capsys, cli_corpus, cli_run):
    code, _, err = run(
        capsys,
        "analyze",
        "--kind",
        "dnr-recall",
        "--manifest",
        str(cli_corpus / "manifest.jsonl"),
        "--checkpoint",
        str(cli_run / "checkpoint.fckp"),
    )
    assert code == 2
    assert "shape-stats" in err


def test_analyze_length(capsys, cli_corpus, cli_run):
    code, out, _ = run(
        capsys,
        "analyze",
        "--kind",
        "length",
        "--manifest",
        str(cli_corpus / "manifest.jsonl"),
        "--checkpoint",
        str(cli_run / "checkpoint.fckp"),
        "--lengths",
        "8,24",
    )
    assert code == 0
    rows = json.loads(out)["rows"]
    assert [r["max_length"] for r in rows] == [8, 24]


def test_analyze_enrollment(capsys, cli_corpus, cli_run):
    code, out, _ = run(
        capsys,
        "analyze",
        "--kind",
        "enrollment",
        "--manifest",
        str(cli_corpus / "manifest.jsonl"),
        "--checkpoint",
        str(cli_run / "checkpoint.fckp"),
    )
    assert code == 0
    rows = json.loads(out)["rows"]
    assert rows[0]["enrollment"] == 5


def test_report_bundle(cli_corpus, cli_run, tmp_path):
    out_dir = tmp_path / "report"
    code = main(
        [
            "report",
            "--manifest",
            str(cli_corpus / "manifest.jsonl"),
            "--checkpoint",
            str(cli_run / "checkpoint.fckp"),
            "--out",
            str(out_dir),
            "--shape-stats",
            str(cli_corpus / "shape_stats.jsonl"),
            "--lengths",
            "8,24",
            "--bins",
            "2",
            "--bootstrap-iters",
            "20",
        ]
    )
    assert code == 0
    names = sorted(p.name for p in out_dir.iterdir())
    assert any(n.startswith("metrics.") for n in names)
    assert any(n.startswith("dnr_recall.") and n.endswith(".png") for n in names)
    assert any(n.startswith("length_analysis.") and n.endswith(".txt") for n in names)
    assert any(n.startswith("summary.") for n in names)


# ---------------------------------------------------------------------------
# config files and precedence


def test_config_file_supplies_defaults(capsys, tmp_path):
    cfg = {"synth": {"num_speakers": 2, "utterances_per_speaker": 4,
                     "frames_per_utterance": [10, 12], "signature_dim": 2}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    code, out, _ = run(
        capsys, "synth", "--out", str(tmp_path / "c"), "--config", str(cfg_path)
    )
    assert code == 0
    assert json.loads(out)["num_records"] == 8


def test_flags_override_config_file(capsys, tmp_path):
    cfg = {"synth": {"num_speakers": 2, "utterances_per_speaker": 4,
                     "frames_per_utterance": [10, 12], "signature_dim": 2}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    code, out, _ = run(
        capsys,
        "synth",
        "--out",
        str(tmp_path / "c"),
        "--config",
        str(cfg_path),
        "--speakers",
        "3",
    )
    assert code == 0
    assert json.loads(out)["num_records"] == 12


def test_unknown_config_section_rejected(capsys, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"sync": {}}))
    code, _, err = run(
        capsys, "synth", "--out", str(tmp_path / "c"), "--config", str(cfg_path)
    )
    assert code == 2
    assert "sync" in err


def test_unknown_config_key_rejected(capsys, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"synth": {"speakers": 3}}))
    code, _, err = run(
        capsys, "synth", "--out", str(tmp_path / "c"), "--config", str(cfg_path)
    )
    assert code == 2


def test_frames_flags_must_pair(capsys, tmp_path):
    code, _, err = run(
        capsys, "synth", "--out", str(tmp_path / "c"), "--frames-min", "10"
    )
    assert code == 2
    assert "frames" in err


def test_classifier_stage_requires_checkpoint(capsys, cli_corpus, tmp_path):
    code, _, err = run(
        capsys,
        "train",
        "--manifest",
        str(cli_corpus / "manifest.jsonl"),
        "--out",
        str(tmp_path / "run"),
        "--stage",
        "classifier",
    )
    assert code == 2
    assert "checkpoint" in err


def test_bad_leakage_strengths(capsys, tmp_path):
    code, _, _ = run(
        capsys,
        "synth",
        "--out",
        str(tmp_path / "c"),
        "--speakers",
        "2",
        "--utterances",
        "4",
        "--frames-min",
        "10",
        "--frames-max",
        "12",
        "--signature-dim",
        "2",
        "--stratify-leakage",
        "0.5,oops",
    )
    assert code == 2


def test_missing_manifest_is_runtime_error(capsys, tmp_path):
    code, _, err = run(
        capsys, "validate", "--manifest", str(tmp_path / "nope.jsonl")
    )
    assert code in (1, 2)
    assert err


def test_no_subcommand_prints_help(capsys):
    code, _, _ = run(capsys)
    assert code == 2


def test_unknown_flag_exits_2(capsys, tmp_path):
    code = main(["synth", "--out", str(tmp_path / "c"), "--quantum"])
    assert code == 2


def test_out_flag_writes_file(capsys, cli_corpus, tmp_path):
    dest = tmp_path / "report.json"
    code, out, _ = run(
        capsys,
        "validate",
        "--manifest",
        str(cli_corpus / "manifest.jsonl"),
        "--out",
        str(dest),
    )
    assert code == 0
    assert json.loads(dest.read_text())["violations"] == []
