from __future__ import annotations

import json
from bundlekd.cli import main
from bundlekd.corpus import save_dataset
from helpers import synthetic_dataset


def write_corpus(tmp_path, n=12, seed=1) -> str:
    d = synthetic_dataset(n, seed=seed, domain="synthetic")
    path = tmp_path / "corpus.jsonl"
    save_dataset(d, path)
    return str(path)


def test_ingest_validate_roundtrip(tmp_path, capsys):
    src = write_corpus(tmp_path)
    out = tmp_path / "normalized.jsonl"
    assert main(["ingest", "--input", src, "--out", str(out), "--validate"]) == 0
    captured = capsys.readouterr().out
    assert '"sessions": 12' in captured
    assert out.exists()


def test_mine_cli(tmp_path):
    src = write_corpus(tmp_path)
    out = tmp_path / "patterns.json"
    assert main(["mine", "--dataset", src, "--min-support", "1",
                 "--out", str(out)]) == 0
    patterns = json.loads(out.read_text())
    assert patterns and all(set(p) == {"categories", "support"} for p in patterns)


def test_sample_cli(tmp_path):
    src = write_corpus(tmp_path)
    out = tmp_path / "sample.json"
    assert main(["sample", "--dataset", src, "--strategy", "length",
                 "--ratio", "0.5", "--seed", "3", "--out", str(out)]) == 0
    sample = json.loads(out.read_text())
    assert sample["strategy"] == "length"
    assert sample["session_ids"]


def test_distill_cli_with_mock_provider(tmp_path):
    src = write_corpus(tmp_path)
    provider = tmp_path / "provider.json"
    provider.write_text(json.dumps({
        "model": "mock-teacher", "kind": "mock", "mock": {"behavior": "teacher"}}))
    out_dir = tmp_path / "knowledge"
    traces = tmp_path / "traces"
    assert main(["distill", "--dataset", src, "--domain", "synthetic",
                 "--format", "rule", "--provider", str(provider),
                 "--out", str(out_dir), "--trace", str(traces)]) == 0
    stored = json.loads((out_dir / "synthetic.rule.json").read_text())
    assert stored["entries"]
    assert list(traces.glob("*.rule.json"))


def test_export_sft_cli(tmp_path):
    src = write_corpus(tmp_path)
    out = tmp_path / "sft.jsonl"
    assert main(["export-sft", "--dataset", src, "--augment", "--cap", "4",
                 "--seed", "1", "--out", str(out)]) == 0
    assert out.read_text().strip()


def test_generate_and_evaluate_cli(tmp_path, capsys):
    src = write_corpus(tmp_path)
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "dataset": src, "domain": "synthetic", "mode": "icl",
        "knowledge_formats": ["pattern"], "min_support": 1,
        "out_dir": str(tmp_path / "run"),
        "split": {"train_ratio": 0.7, "valid_ratio": 0.1, "test_ratio": 0.2,
                  "seed": 2},
    }))
    assert main(["generate", "--config", str(config)]) == 0
    predictions = tmp_path / "run" / "predictions.jsonl"
    assert predictions.exists()

    report_out = tmp_path / "manual_report.json"
    assert main(["evaluate", "--predictions", str(predictions),
                 "--dataset", src, "--out", str(report_out)]) == 0
    report = json.loads(report_out.read_text())
    assert set(report["macro"]) == {"precision", "recall", "coverage"}


def test_knowledge_accumulate_cli(tmp_path):
    src = write_corpus(tmp_path)
    provider = tmp_path / "provider.json"
    provider.write_text(json.dumps({
        "model": "mock-teacher", "kind": "mock", "mock": {"behavior": "teacher"}}))
    kdir = tmp_path / "knowledge"
    main(["distill", "--dataset", src, "--domain", "synthetic", "--format", "rule",
          "--provider", str(provider), "--out", str(kdir)])
    combined = tmp_path / "combined.json"
    assert main(["knowledge", "accumulate", "--knowledge-dir", str(kdir),
                 "--domains", "synthetic", "--formats", "rule",
                 "--out", str(combined)]) == 0
    assert json.loads(combined.read_text())["rules"]


def test_grid_cli(tmp_path):
    src = write_corpus(tmp_path)
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "dataset": src, "domain": "synthetic", "mode": "icl",
        "knowledge_formats": ["pattern"], "min_support": 1,
        "out_dir": str(tmp_path / "grid"),
        "grid": {"formats": ["raw", "pattern"]},
    }))
    assert main(["grid", "--config", str(config), "--rq", "rq1"]) == 0
    assert (tmp_path / "grid" / "summary.csv").exists()
