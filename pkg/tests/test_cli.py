import csv
import json

import numpy as np
import pytest

from scale_diar.cli import main, resolve_seed
from scale_diar.config import ExperimentConfig, config_from_dict, load_config
from scale_diar.errors import ConfigError
from scale_diar.pipeline import FeatureTable, Segment, make_windows, segments_to_jsonl
from scale_diar.scoring import RttmRecord, read_rttm, write_rttm

SMALL = {
    "corpus": {"n_speakers": 8, "utterances_per_speaker": 4, "feature_dim": 6},
    "meetings": {"n_dev": 2, "n_eval": 2, "segments_per_meeting": 8},
    "train": {"steps": 10, "batch_speakers": 4, "hidden_dim": 8, "embed_dim": 6},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def run(*argv):
    return main([str(a) for a in argv])


def test_generate_writes_all_files_and_is_reproducible(tmp_path, small_config):
    assert run("generate", "--config", small_config, "--out", tmp_path / "a") == 0
    assert run("generate", "--config", small_config, "--out", tmp_path / "b") == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert set(a) == {"corpus.json", "config.resolved.json", "dev/meetings.jsonl", "dev/features.jsonl",
                      "dev/reference.rttm", "eval/meetings.jsonl", "eval/features.jsonl", "eval/reference.rttm"}
    assert a == b
    dev = {r.meeting_id for r in read_rttm(tmp_path / "a/dev/reference.rttm")}
    evl = {r.meeting_id for r in read_rttm(tmp_path / "a/eval/reference.rttm")}
    assert dev == {"dev000", "dev001"} and evl == {"eval000", "eval001"}
    resolved = json.loads((tmp_path / "a/config.resolved.json").read_text())
    assert resolved["corpus"]["n_speakers"] == 8 and resolved["score"]["collar"] == 0.25


def test_seed_changes_output(tmp_path, small_config):
    run("generate", "--config", small_config, "--out", tmp_path / "a")
    run("generate", "--config", small_config, "--out", tmp_path / "b", "--seed", 5)
    assert tree_bytes(tmp_path / "a")["corpus.json"] != tree_bytes(tmp_path / "b")["corpus.json"]


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("SCALE_DIAR_SEED", raising=False)
    assert resolve_seed(None, 3) == 3
    monkeypatch.setenv("SCALE_DIAR_SEED", "7")
    assert resolve_seed(None, 3) == 7
    assert resolve_seed(11, 3) == 11
    monkeypatch.setenv("SCALE_DIAR_SEED", "x")
    with pytest.raises(ConfigError):
        resolve_seed(None, 3)


@pytest.mark.parametrize("doc, key", [
    ({"bogus": 1}, "bogus"),
    ({"train": {"lr": 0.1}}, "train.lr"),
    ({"train": {"loss": {"alfa": 0.5}}}, "train.loss.alfa"),
    ({"cluster": {"p": 90}}, "cluster.p"),
])
def test_unknown_key_exits_2(tmp_path, capsys, doc, key):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert run("generate", "--config", path, "--out", tmp_path / "x") == 2
    assert key in capsys.readouterr().err


def test_out_of_range_value_is_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"cluster": {"p_percentile": 100}}))
    assert run("generate", "--config", path, "--out", tmp_path / "x") == 2


def test_config_defaults_round_trip():
    cfg = load_config(None)
    again = config_from_dict(json.loads(cfg.to_json()))
    assert again.to_json() == cfg.to_json()
    assert cfg.train_config().loss.alpha == 0.5
    assert cfg.meeting_spec("dev").seed != cfg.meeting_spec("eval").seed
    assert isinstance(cfg, ExperimentConfig)


def _generated(tmp_path, small_config):
    run("generate", "--config", small_config, "--out", tmp_path / "g")
    return tmp_path / "g"


def test_train_writes_checkpoint_and_curve(tmp_path, small_config):
    g = _generated(tmp_path, small_config)
    assert run("train", "--config", small_config, "--corpus", g / "corpus.json", "--out", tmp_path / "t",
               "--steps", 1) == 0
    rows = list(csv.DictReader(open(tmp_path / "t/loss.csv")))
    assert len(rows) == 1
    assert (tmp_path / "t/checkpoint.json").exists()


def test_train_is_reproducible(tmp_path, small_config):
    g = _generated(tmp_path, small_config)
    for name in ("t1", "t2"):
        assert run("train", "--config", small_config, "--corpus", g / "corpus.json", "--out", tmp_path / name) == 0
    assert tree_bytes(tmp_path / "t1") == tree_bytes(tmp_path / "t2")


def test_train_alpha_zero_is_ap_only(tmp_path, small_config):
    g = _generated(tmp_path, small_config)
    run("train", "--config", small_config, "--corpus", g / "corpus.json", "--out", tmp_path / "t",
        "--alpha", 0, "--mask-mode", "none")
    rows = list(csv.DictReader(open(tmp_path / "t/loss.csv")))
    assert all(float(r["loss"]) == float(r["ap"]) for r in rows)
    resolved = json.loads((tmp_path / "t/config.resolved.json").read_text())
    assert resolved["train"]["loss"]["alpha"] == 0.0
    assert resolved["train"]["loss"]["mask_mode"] == "none"


def test_train_rejects_bad_override(tmp_path, small_config):
    g = _generated(tmp_path, small_config)
    assert run("train", "--config", small_config, "--corpus", g / "corpus.json", "--out", tmp_path / "t",
               "--alpha", 2) == 2


def test_diarise_and_score_round(tmp_path, small_config, capsys):
    g = _generated(tmp_path, small_config)
    run("train", "--config", small_config, "--corpus", g / "corpus.json", "--out", tmp_path / "t")
    args = ["diarise", "--config", small_config, "--meetings", g / "dev/meetings.jsonl",
            "--features", g / "dev/features.jsonl", "--checkpoint", tmp_path / "t/checkpoint.json"]
    assert run(*args, "--out", tmp_path / "d1") == 0
    assert run(*args, "--out", tmp_path / "d2") == 0
    assert tree_bytes(tmp_path / "d1") == tree_bytes(tmp_path / "d2")
    hyp = read_rttm(tmp_path / "d1/hypothesis.rttm")
    assert {r.meeting_id for r in hyp} == {"dev000", "dev001"}
    capsys.readouterr()
    assert run("score", "--ref", g / "dev/reference.rttm", "--hyp", tmp_path / "d1/hypothesis.rttm",
               "--out", tmp_path / "s") == 0
    assert "OVERALL" in capsys.readouterr().out
    rep = json.loads((tmp_path / "s/score.json").read_text())
    assert abs(rep["der_pct"] - rep["ser_pct"] - rep["ms_pct"] - rep["fa_pct"]) <= 1e-9


def test_diarise_empty_meeting_set(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    (tmp_path / "f.jsonl").write_text("")
    assert run("diarise", "--meetings", tmp_path / "m.jsonl", "--features", tmp_path / "f.jsonl",
               "--out", tmp_path / "d") == 0
    assert (tmp_path / "d/hypothesis.rttm").read_text() == ""


def write_fixture(root, directions, noise, seed, n_seg=12, seg_len=4.0):
    """Cyclic speakers along ``directions``; returns paths of the meeting, feature and reference files."""
    rng = np.random.default_rng(seed)
    segs, ref, rows = [], [], []
    for i in range(n_seg):
        spk = i % len(directions)
        seg = Segment("m", i * seg_len, (i + 1) * seg_len, f"S{spk}")
        segs.append(seg)
        ref.append(RttmRecord("m", seg.start, seg_len, seg.speaker))
        for w in make_windows(seg):
            f = np.asarray(directions[spk]) + noise * rng.normal(size=len(directions[0]))
            rows.append({"meeting_id": "m", "window_start": w.start, "window_end": w.end, "features": f.tolist()})
    root.mkdir(parents=True, exist_ok=True)
    (root / "meetings.jsonl").write_text(segments_to_jsonl(segs))
    (root / "features.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    (root / "reference.rttm").write_text(write_rttm(ref))
    return root


def test_diarise_antipodal_fixture_finds_two_speakers(tmp_path):
    fx = write_fixture(tmp_path / "fx", [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], 0.05, 0)
    assert run("diarise", "--meetings", fx / "meetings.jsonl", "--features", fx / "features.jsonl",
               "--out", tmp_path / "d") == 0
    hyp = read_rttm(tmp_path / "d/hypothesis.rttm")
    assert len({r.speaker for r in hyp}) == 2
    assert run("score", "--ref", fx / "reference.rttm", "--hyp", tmp_path / "d/hypothesis.rttm",
               "--out", tmp_path / "s") == 0
    assert json.loads((tmp_path / "s/score.json").read_text())["der_pct"] == 0.0


def test_diarise_missing_features_exit_1(tmp_path, capsys):
    fx = write_fixture(tmp_path / "fx", [[1.0, 0.0], [-1.0, 0.0]], 0.05, 0)
    lines = (fx / "features.jsonl").read_text().splitlines()
    (fx / "features.jsonl").write_text("\n".join(lines[:-1]) + "\n")
    assert run("diarise", "--meetings", fx / "meetings.jsonl", "--features", fx / "features.jsonl",
               "--out", tmp_path / "d") == 1
    assert "meeting 'm' window" in capsys.readouterr().err


def three_speaker_fixture(tmp_path):
    th = np.deg2rad(20.0)
    return write_fixture(tmp_path / "fx3", [[1.0, 0.0, 0.0], [np.cos(th), np.sin(th), 0.0], [-1.0, 0.0, 0.0]],
                         0.05, 0)


def _sweep(tmp_path, fx, out, *grid):
    return run("sweep", "--meetings", fx / "meetings.jsonl", "--features", fx / "features.jsonl",
               "--reference", fx / "reference.rttm", "--out", tmp_path / out, *grid)


def test_sweep_finds_planted_optimum(tmp_path):
    fx = three_speaker_fixture(tmp_path)
    assert _sweep(tmp_path, fx, "s", "--p-grid", "95,80,50,0", "--sigma-grid", "3,1,0") == 0
    rows = list(csv.DictReader(open(tmp_path / "s/grid.csv")))
    zero = [(float(r["p"]), float(r["sigma"])) for r in rows if float(r["ser_pct"]) == 0.0]
    # the fixture has exactly one perfect grid point, and it is not the first one visited
    assert zero == [(80.0, 0.0)]
    best = json.loads((tmp_path / "s/best.json").read_text())
    assert (best["p_percentile"], best["sigma_blur"], best["dev_ser_pct"]) == (80.0, 0.0, 0.0)
    assert [(float(r["p"]), float(r["sigma"])) for r in rows] == \
        [(p, s) for p in (0.0, 50.0, 80.0, 95.0) for s in (0.0, 1.0, 3.0)]


def test_sweep_single_point_and_ties(tmp_path):
    fx = write_fixture(tmp_path / "fx", [[1.0, 0.0], [-1.0, 0.0]], 0.05, 0)
    assert _sweep(tmp_path, fx, "one", "--p-grid", "85", "--sigma-grid", "0.5") == 0
    best = json.loads((tmp_path / "one/best.json").read_text())
    assert (best["p_percentile"], best["sigma_blur"]) == (85.0, 0.5)
    # every point is perfect on this fixture, so the smallest p and sigma win
    assert _sweep(tmp_path, fx, "tie", "--p-grid", "90,80", "--sigma-grid", "1,0.5") == 0
    best = json.loads((tmp_path / "tie/best.json").read_text())
    assert (best["p_percentile"], best["sigma_blur"]) == (80.0, 0.5)


def test_sweep_empty_grid_is_config_error(tmp_path):
    fx = write_fixture(tmp_path / "fx", [[1.0, 0.0], [-1.0, 0.0]], 0.05, 0)
    assert _sweep(tmp_path, fx, "e", "--p-grid", "", "--sigma-grid", "0") == 2


def test_gradcheck_command(tmp_path, capsys):
    assert run("gradcheck", "--out", tmp_path / "gc") == 0
    out = capsys.readouterr().out
    assert out.count("max_rel_err=") == 108
    report = json.loads((tmp_path / "gc/gradcheck.json").read_text())
    assert report["passed"] and len(report["results"]) == 108
    assert run("gradcheck", "--corrupt") == 1
    assert "FAIL" in capsys.readouterr().out


def test_missing_out_dir_is_config_error(tmp_path):
    assert run("generate") == 2
