import csv
import json

import pytest

from edgeslam.cli import OUTPUT_ROOT_ENV, main

SCHED = {
    "seed": 3,
    "output_dir": "run",
    "scheduler": {"n_servers": 2, "service_ratio": 0.35, "link_kind": "gaussian", "episode_len": 60},
    "gp": {"T0": 50, "T1": 100, "window": 100},
    "train": {"variant": "constrained", "episodes": 4, "eval_episodes": 3, "hidden": [16]},
}

ADAPT = {
    "seed": 1,
    "output_dir": "adapt",
    "traces": {"kind": "congestion", "horizon": 60, "partitions": 3, "n_train": 2, "n_frames": 20},
    "tilesense": {"n_frames": 20},
    "adapt": {"episodes": 3, "hidden": [16], "evaluate": True},
}


@pytest.fixture
def root(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    return tmp_path


def write_cfg(root, cfg, name="c.json"):
    p = root / name
    p.write_text(json.dumps(cfg))
    return str(p)


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def test_sched_train_eval_report(root, capsys):
    cfg = write_cfg(root, SCHED)
    assert main(["train", "--stage", "sched", "--config", cfg]) == 0
    out = last_json(capsys.readouterr().out)
    assert out["status"] == "ok" and out["episodes"] == 4
    run = root / "run"
    for f in ("metrics.csv", "checkpoint.json", "manifest.json"):
        assert (run / f).exists()
    assert len((run / "metrics.csv").read_text().splitlines()) == 5

    assert main(["eval", "--config", cfg, "--checkpoint", str(run / "checkpoint.json")]) == 0
    rows = list(csv.reader(open(run / "eval_metrics.csv")))
    assert len(rows) == 1 + 3 + 1 and rows[-1][0] == "summary"

    assert main(["train", "--stage", "sched", "--config", cfg, "--output-dir", "rr"]) == 0
    assert main(["report", str(run), str(root / "rr")]) == 0
    rep = list(csv.reader(open(root / "report.csv")))
    assert rep[0] == ["run", "variant", "episode", "metric", "value"]
    assert len({r[0] for r in rep[1:]}) == 2


def test_identical_runs_identical_metrics(root):
    cfg = write_cfg(root, SCHED)
    assert main(["train", "--stage", "sched", "--config", cfg, "--output-dir", "a"]) == 0
    assert main(["train", "--stage", "sched", "--config", cfg, "--output-dir", "b"]) == 0
    assert (root / "a" / "metrics.csv").read_bytes() == (root / "b" / "metrics.csv").read_bytes()


def test_heuristic_eval(root):
    cfg = write_cfg(root, SCHED)
    assert main(["eval", "--config", cfg, "--variant", "round_robin"]) == 0
    rows = list(csv.reader(open(root / "run" / "eval_metrics.csv")))
    assert rows[1][1] == "round_robin"


def test_report_refuses_mixed_envs(root, capsys):
    cfg = write_cfg(root, SCHED)
    other = dict(SCHED, scheduler=dict(SCHED["scheduler"], n_servers=3), output_dir="three")
    cfg3 = write_cfg(root, other, "c3.json")
    assert main(["train", "--stage", "sched", "--config", cfg]) == 0
    assert main(["train", "--stage", "sched", "--config", cfg3]) == 0
    capsys.readouterr()
    assert main(["report", str(root / "run"), str(root / "three")]) == 2
    err = last_json(capsys.readouterr().err)
    assert err["error"] == "validation"
    assert main(["report", "--force", str(root / "run"), str(root / "three")]) == 0


def test_adapt_pipeline(root, capsys):
    cfg = write_cfg(root, ADAPT)
    assert main(["gen-traces", "--config", cfg]) == 0
    m = json.loads((root / "adapt" / "traces" / "manifest.json").read_text())
    assert len(m["train_files"]) == 2 and len(m["test_files"]) == 1
    assert main(["train", "--stage", "adapt", "--config", cfg]) == 0
    man = json.loads((root / "adapt" / "manifest.json").read_text())
    assert set(man["heldout_qoe"]) == {"agent", "random", "best_static"}
    assert len((root / "adapt" / "metrics.csv").read_text().splitlines()) == 4


@pytest.mark.parametrize(
    "cfg",
    [
        {"traces": {"foo": 1}},
        {"bogus": {}},
        {"train": {"episodes": "many"}},
        {"train": {"variant": "greedy"}},
        {"seed": -1},
    ],
)
def test_validation_errors_exit_2(root, capsys, cfg):
    path = write_cfg(root, cfg)
    assert main(["train", "--stage", "sched", "--config", path]) == 2
    assert last_json(capsys.readouterr().err)["error"] == "validation"


def test_bad_inputs_exit_2(root, capsys):
    bad = root / "bad.json"
    bad.write_text("garbage")
    assert main(["train", "--stage", "sched", "--config", str(bad)]) == 2
    assert main(["train", "--stage", "sched", "--config", str(root / "missing.json")]) == 2
    cfg = write_cfg(root, SCHED)
    assert main(["eval", "--config", cfg, "--checkpoint", str(root / "nope.json")]) == 2
    (root / "corrupt.json").write_text("{")
    assert main(["eval", "--config", cfg, "--checkpoint", str(root / "corrupt.json")]) == 2
    assert main(["train", "--stage", "adapt", "--config", write_cfg(root, ADAPT)]) == 2  # no traces yet
    assert main(["frobnicate"]) == 2


def test_checkpoint_arity_mismatch(root):
    cfg = write_cfg(root, SCHED)
    assert main(["train", "--stage", "sched", "--config", cfg]) == 0
    other = write_cfg(root, dict(SCHED, scheduler=dict(SCHED["scheduler"], n_servers=3)), "c3.json")
    assert main(["eval", "--config", other, "--checkpoint", str(root / "run" / "checkpoint.json")]) == 2


def test_audit_log_written(root):
    cfg = dict(SCHED, gp={"T0": 40, "T1": 50, "window": 100}, train=dict(SCHED["train"], audit=True, episodes=2))
    assert main(["train", "--stage", "sched", "--config", write_cfg(root, cfg)]) == 0
    audit = json.loads((root / "run" / "audit.json").read_text())
    assert len(audit) == 2
    probs = audit[0]["probs"]
    assert probs[0] is None and probs[-1] is not None
    assert set(audit[0]["phases"]) <= {"collect_and_fit", "periodic_update", "predict_only"}
