import hashlib
import json
import shutil
import subprocess
import sys

import pytest
import yaml

from helpers import FIXTURES
from lqaudit.cli import PipelineConfig, load_config, main
from lqaudit.errors import ValidationError
from lqaudit.manifest import read_manifest
from lqaudit.orchestrator import AuditConfig, RecordingClient, ScriptedClient, run_audit
from lqaudit.slicer import read_slices
from lqaudit.taxonomy import default_corpus

SMALL = {
    "seed": 3,
    "embedding": {"dim": 16, "max_len": 48},
    "dcn": {"D": 16, "d_h": 8, "N": 1, "heads": 2, "dropout_rate": 0.1},
    "train": {"lr": 0.005, "batch_size": 8, "max_epochs": 2, "patience": 5},
    "audit": {"in_flight": 1},
}


def generic_responder(request):
    u = request.user_text
    if u.startswith("PHASE 2-2"):
        return json.dumps({"findings": []})
    return json.dumps({"verdict": "valid", "reason": "confirmed by inspection", "suggestion": "add a guard"})


@pytest.fixture
def work(tmp_path):
    cfg = tmp_path / "config.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    contracts = tmp_path / "contracts"
    shutil.copytree(FIXTURES, contracts)
    return tmp_path, ["--config", str(cfg), "--workdir", str(tmp_path / "w")]


def _labels(path, slice_ids, codes):
    with open(path, "w") as fh:
        for sid in slice_ids:
            h = hashlib.sha256(sid.encode()).digest()
            fh.write(json.dumps({"slice_id": sid, "labels": {c: int(h[i] % 3 == 0) for i, c in enumerate(codes)}})
                     + "\n")


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_config_loading(tmp_path):
    assert load_config(None).filter.tau_high == 0.3
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(SMALL))
    cfg = load_config(str(p), seed=9)
    assert cfg.seed == 9 and cfg.embedding.seed == 9 and cfg.train.seed == 9 and cfg.dcn.D == 16
    with pytest.raises(ValidationError):
        PipelineConfig.from_dict({"bogus": {}})
    with pytest.raises(ValidationError):
        PipelineConfig.from_dict({"filter": {"tau_high": 2.0}})
    assert load_config(str(p)).hash() == load_config(str(p)).hash()


def test_slice_fixtures_deterministic(work, capsys):
    tmp, base = work
    src = tmp / "three"
    src.mkdir()
    for name in ("01_vault.sol", "02_pool_modifiers.sol", "05_overloads.sol"):
        shutil.copy(tmp / "contracts" / name, src / name)
    assert main(base + ["slice", str(src)]) == 0
    out = tmp / "w" / "slices.jsonl"
    first = out.read_bytes()
    assert {s.contract_id for s in read_slices(out)} == {"01_vault", "02_pool_modifiers", "05_overloads"}
    assert main(base + ["slice", str(src)]) == 0
    assert out.read_bytes() == first
    meta = json.loads((tmp / "w" / "slices.jsonl.meta.json").read_text())
    assert meta["command"] == "slice" and meta["seed"] == 3
    assert "slices\t" in capsys.readouterr().out


def test_slice_empty_directory_is_fatal(work):
    tmp, base = work
    (tmp / "empty").mkdir()
    assert main(base + ["slice", str(tmp / "empty")]) == 1
    assert main(base + ["slice", str(tmp / "missing")]) == 1


def test_unparseable_contract_gives_partial_exit(work):
    tmp, base = work
    (tmp / "contracts" / "zz_broken.sol").write_text("contract Broken { function f() { ")
    assert main(base + ["slice", str(tmp / "contracts")]) == 2
    meta = json.loads((tmp / "w" / "slices.jsonl.meta.json").read_text())
    assert any("zz_broken" in d for d in meta["diagnostics"])


def test_train_requires_labels(work):
    tmp, base = work
    assert main(base + ["train", "--labels", str(tmp / "nope.jsonl")]) == 1


def test_filter_all_noise(work, capsys):
    tmp, base = work
    w = tmp / "w"
    w.mkdir()
    codes = default_corpus().codes
    with open(w / "scores.jsonl", "w") as fh:
        for i in range(20):
            fh.write(json.dumps({"slice_id": f"c#f{i}", "scores": {c: 0.0004 for c in codes}}) + "\n")
    assert main(base + ["filter"]) == 0
    m = read_manifest(w / "manifest.json")
    assert len(m.entries) == 20 and all(e.is_clean for e in m.entries)
    assert "retained_flaws\t0\tclean_slices\t20" in capsys.readouterr().out


def test_audit_without_llm_is_fatal(work):
    tmp, base = work
    assert main(base + ["slice", str(tmp / "contracts")]) == 0
    (tmp / "w" / "manifest.json").write_text(json.dumps(
        {"config": {}, "model_fingerprint": "", "corpus_fingerprint": "", "entries": []}))
    assert main(base + ["audit"]) == 1


def test_full_pipeline(work, capsys):
    tmp, base = work
    w = tmp / "w"
    codes = default_corpus().codes
    assert main(base + ["slice", str(tmp / "contracts")]) == 0
    assert main(base + ["embed"]) == 0
    ids = sorted(s.slice_id for s in read_slices(w / "slices.jsonl"))
    _labels(tmp / "train.jsonl", ids[::2], codes)
    _labels(tmp / "val.jsonl", ids[1::2], codes)
    _labels(tmp / "all.jsonl", ids, codes)
    assert main(base + ["train", "--labels", str(tmp / "train.jsonl"), "--val-labels", str(tmp / "val.jsonl")]) == 0
    assert (w / "model.curves.png").stat().st_size > 0
    meta = json.loads((w / "model.lqck.meta.json").read_text())
    assert meta["last_epoch"] == 1 and "model_fingerprint" in meta

    # resume continues the epoch counter and the metrics log
    assert main(base + ["train", "--labels", str(tmp / "train.jsonl"), "--val-labels", str(tmp / "val.jsonl"),
                        "--resume", str(w / "model.lqck"), "-o", str(w / "model2.lqck")]) == 0
    meta2 = json.loads((w / "model2.lqck.meta.json").read_text())
    assert meta2["last_epoch"] == 3
    rows = (w / "model2.metrics.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["0", "1", "2", "3"]

    assert main(base + ["score"]) == 0
    assert main(base + ["filter", "--tau-high", "0.5"]) == 0
    manifest = read_manifest(w / "manifest.json")
    assert manifest.model_fingerprint == meta["model_fingerprint"]

    # record a transcript in-process, then replay it through the CLI twice
    rec = RecordingClient(ScriptedClient(generic_responder))
    run_audit(read_slices(w / "slices.jsonl"), manifest, default_corpus(), rec, AuditConfig(in_flight=1))
    rec.save(tmp / "transcript.json")
    assert main(base + ["--mock-llm", str(tmp / "transcript.json"), "audit"]) == 0
    first = (w / "reports.json").read_bytes()
    assert main(base + ["--mock-llm", str(tmp / "transcript.json"), "audit", "-o", str(w / "again.json")]) == 0
    assert (w / "again.json").read_bytes() == first

    capsys.readouterr()
    assert main(base + ["eval", "--labels", str(tmp / "all.jsonl"), "--reports", str(w / "reports.json")]) == 0
    out = capsys.readouterr().out
    assert "macro_f1" in out
    doc = json.loads((w / "metrics.json").read_text())
    assert set(doc["per_class"]) == set(codes)
    assert (w / "metrics.png").stat().st_size > 0 and (w / "metrics.csv").is_file()
    assert main(base + ["eval", "--labels", str(tmp / "all.jsonl"), "--scores", str(w / "scores.jsonl"),
                        "-o", str(w / "m2.json")]) == 0


def test_eval_perfect_report(work, capsys):
    tmp, base = work
    codes = default_corpus().codes
    truth = {"a#f0": {c: int(c == "LIF") for c in codes}, "b#f0": {c: 0 for c in codes}}
    truth["b#f0"]["GAR"] = 1
    with open(tmp / "labels.jsonl", "w") as fh:
        for sid, lab in truth.items():
            fh.write(json.dumps({"slice_id": sid, "labels": lab}) + "\n")
    findings = [{"slice_id": "a#f0", "flaw_code": "LIF", "status": "Confirmed"},
                {"slice_id": "b#f0", "flaw_code": "GAR", "status": "Suspicious"},
                {"slice_id": "b#f0", "flaw_code": "TLS", "status": "Rejected"}]
    (tmp / "reports.json").write_text(json.dumps({"reports": [{"findings": findings}]}))
    assert main(base + ["eval", "--labels", str(tmp / "labels.jsonl"), "--reports", str(tmp / "reports.json")]) == 0
    assert json.loads((tmp / "w" / "metrics.json").read_text())["macro_f1"] == 0.4  # BPF/LVD/TLS have no positives
    per = json.loads((tmp / "w" / "metrics.json").read_text())["per_class"]
    assert per["LIF"]["f1"] == per["GAR"]["f1"] == 1.0
    assert main(base + ["eval", "--labels", str(tmp / "labels.jsonl"), "--reports", str(tmp / "reports.json"),
                        "--suspicious", "negative"]) == 0
    assert json.loads((tmp / "w" / "metrics.json").read_text())["per_class"]["GAR"]["f1"] == 0.0


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "lqaudit", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()


def test_eval_perfect_report_all_classes(work):
    tmp, base = work
    codes = default_corpus().codes
    with open(tmp / "labels.jsonl", "w") as fh:
        for i, c in enumerate(codes):
            fh.write(json.dumps({"slice_id": f"s#f{i}", "labels": {k: int(k == c) for k in codes}}) + "\n")
        fh.write(json.dumps({"slice_id": "safe#f0", "labels": {k: 0 for k in codes}}) + "\n")
    findings = [{"slice_id": f"s#f{i}", "flaw_code": c, "status": "Confirmed"} for i, c in enumerate(codes)]
    (tmp / "reports.json").write_text(json.dumps({"reports": [{"findings": findings}]}))
    assert main(base + ["eval", "--labels", str(tmp / "labels.jsonl"), "--reports", str(tmp / "reports.json")]) == 0
    doc = json.loads((tmp / "w" / "metrics.json").read_text())
    assert doc["macro_f1"] == 1.0 and doc["weighted_f1"] == 1.0
