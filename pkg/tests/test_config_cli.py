import json

import pytest

from tensorgnn.cli import main
from tensorgnn.config import (
    SCHEMA,
    ConfigError,
    expand_sweep,
    parse_config_text,
    parse_manifest,
    render_config,
    render_manifest,
    resolve,
)
from tensorgnn.experiment import render_report, split_indices
from tensorgnn.model import ModelConfig, model_param_count


def test_defaults_fill_every_key():
    cfg = parse_config_text("")
    assert set(cfg.values) == set(SCHEMA)
    assert cfg["train.patience"] == 25 and cfg["encoding.k"] == 20


def test_parse_values_and_comments():
    cfg = parse_config_text("# header\nencoder.kind = concat  # inline\nrun.seeds = 0, 1, 2\nencoder.joint = false\n")
    assert cfg["encoder.kind"] == "concat"
    assert cfg["run.seeds"] == [0, 1, 2]
    assert cfg["encoder.joint"] is False


@pytest.mark.parametrize("text,match", [
    ("model.colour = red", "unknown config key"),
    ("encoder.kind = tensorish", "not one of"),
    ("mp.layers = four", "cannot parse"),
    ("mp.layers", "expected 'key = value'"),
    ("mp.K = 1\nmp.K = 2", "duplicate"),
    ("sweep.regime = sparse, full", "bad regime"),
])
def test_strict_parsing(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text, "c.cfg")


def test_render_parse_round_trip():
    cfg = parse_config_text("train.lr = 0.003\ndata.split = 0.7, 0.2, 0.1\nrun.name = x")
    again = parse_config_text(render_config(cfg.values))
    assert again.values == cfg.values


def test_manifest_round_trip():
    m = {"config": parse_config_text("").values, "seed": 1, "dataset": {"sha256": "ab"},
         "artifacts": {}, "substitutions": []}
    text = render_manifest(m)
    assert parse_manifest(text) == m
    assert render_manifest(parse_manifest(text)) == text


def test_resolve_substitutes_328():
    res = resolve(parse_config_text("encoder.kind = tensor\nencoder.d_hidden = 328"))
    assert res.values["encoder.d_hidden"] == 324
    assert res.substitutions[0]["requested"] == 328 and res.substitutions[0]["used"] == 324


def test_resolve_sparse_concat_needs_even_square():
    res = resolve(parse_config_text("encoder.kind = concat\nmp.regime = sparse\nencoder.d_hidden = 30"))
    assert res.values["encoder.d_hidden"] == 16


def test_resolve_none_forces_zero_layers():
    res = resolve(parse_config_text("mp.regime = none"))
    assert res.values["mp.layers"] == 0
    assert res.substitutions[0]["key"] == "mp.layers"


def test_sweep_expansion_order():
    cfg = parse_config_text("sweep.encoder.kind = concat, tensor\nsweep.regime = full, sparse10, sparse1, none")
    points = expand_sweep(cfg)
    assert len(points) == 8
    assert points[0][0] == "kind=concat_regime=full"
    assert points[2][1]["mp.regime"] == "sparse" and points[2][1]["mp.K"] == 1


def test_split_indices_disjoint_and_deterministic():
    a = split_indices(50, [0.8, 0.1, 0.1], 3)
    b = split_indices(50, [0.8, 0.1, 0.1], 3)
    assert all((x == y).all() for x, y in zip(a, b))
    assert sorted(sum((list(x) for x in a), [])) == list(range(50))
    assert [len(x) for x in a] == [40, 5, 5]


def test_param_count_command(capsys):
    assert main(["param-count", "--layer", "gcn", "--regime", "full", "--layers", "4", "--d-hidden", "64"]) == 0
    lines = dict(l.split(": ") for l in capsys.readouterr().out.strip().splitlines())
    parts = [int(v) for k, v in lines.items() if k != "total"]
    assert sum(parts) == int(lines["total"]) == model_param_count(ModelConfig(d_in=1, d_hidden=64, L=4))
    assert lines["layer 0"] == "4096"


def test_wl_figure1_command(capsys):
    assert main(["wl-test", "--figure1"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "equivalent"
    assert "rw encodings differ" in out


def test_missing_files_reported(tmp_path, capsys):
    missing = tmp_path / "absent.cfg"
    assert main(["train", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err
    assert main(["encode", str(tmp_path / "nope.jsonl")]) == 2
    assert "nope.jsonl" in capsys.readouterr().err


def test_unknown_key_exit_status(tmp_path, capsys):
    p = tmp_path / "c.cfg"
    p.write_text("model.depth = 3\n")
    assert main(["train", "--config", str(p)]) == 1
    assert "unknown config key" in capsys.readouterr().err


@pytest.fixture
def sweep_dir(tmp_path):
    data = tmp_path / "toy.jsonl"
    assert main(["generate", "multiplicative_task", "-o", str(data), "--num-graphs", "20", "--n", "6",
                 "--p", "0.4", "--d-in", "2", "--k", "4"]) == 0
    cfg = tmp_path / "grid.cfg"
    cfg.write_text(
        f"run.name = grid\nrun.seeds = 0, 1\ndata.path = {data}\nencoding.k = 4\n"
        "encoder.d_hidden = 9\nencoder.kind = tensor\nmp.layers = 1\ntrain.max_epochs = 3\n"
        "sweep.encoder.kind = concat, tensor\nsweep.regime = full, sparse10, sparse1, none\n"
    )
    return tmp_path, data, cfg


def test_sweep_rows_and_rerun(sweep_dir, monkeypatch, capsys):
    tmp, data, cfg = sweep_dir
    monkeypatch.setenv("TENSORGNN_OUT", str(tmp / "runs"))
    assert main(["sweep", "--config", str(cfg)]) == 0
    text = (tmp / "runs" / "grid.csv").read_text()
    rows = text.strip().splitlines()[1:]
    assert len(rows) == 16  # 8 per seed
    manifests = sorted((tmp / "runs").rglob("manifest.json"))
    assert len(manifests) == 16
    for m in manifests:
        assert sorted(p.name for p in m.parent.iterdir()).count("manifest.json") == 1
        body = json.loads(m.read_text())
        assert set(body["config"]) == set(SCHEMA)
        assert any(s["key"] == "encoder.d_hidden" for s in body["substitutions"]) == (
            body["config"]["encoder.kind"] == "concat"
        )
    assert main(["sweep", "--rerun", str(tmp / "runs"), "--out", str(tmp / "again")]) == 0
    assert (tmp / "again" / "grid.csv").read_text() == text
    first = manifests[0].parent
    twin = tmp / "again" / first.relative_to(tmp / "runs")
    assert (twin / "checkpoint.bin").read_bytes() == (first / "checkpoint.bin").read_bytes()


def test_train_eval_report(sweep_dir, capsys):
    tmp, data, _ = sweep_dir
    cfg = tmp / "one.cfg"
    cfg.write_text(f"run.name = one\ndata.path = {data}\nencoding.k = 4\nencoder.d_hidden = 9\n"
                   "mp.layers = 1\ntrain.max_epochs = 2\nrun.record_time = true\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp / "r")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("dataset,encoder") and out.strip().split(",")[-1] != ""
    assert main(["eval", str(tmp / "r" / "one" / "0")]) == 0
    ev = capsys.readouterr().out.splitlines()
    assert ev[0] == "split,metric" and [l.split(",")[0] for l in ev[1:]] == ["train", "val", "test"]
    assert main(["train", "--manifest", str(tmp / "r" / "one" / "0" / "manifest.json"),
                 "--dest", str(tmp / "r2")]) == 0
    assert (tmp / "r2" / "checkpoint.bin").read_bytes() == (tmp / "r" / "one" / "0" / "checkpoint.bin").read_bytes()
    capsys.readouterr()
    assert main(["report", str(tmp / "r" / "one.csv"), "-o", str(tmp / "rep.md")]) == 0
    assert "RW-Tensor" in (tmp / "rep.md").read_text()


def test_train_refuses_sweep_config(sweep_dir, capsys):
    _, _, cfg = sweep_dir
    assert main(["train", "--config", str(cfg)]) == 1
    assert "sweep" in capsys.readouterr().err


def test_rerun_detects_changed_dataset(sweep_dir, capsys):
    tmp, data, _ = sweep_dir
    cfg = tmp / "one.cfg"
    cfg.write_text(f"data.path = {data}\nencoding.k = 4\nencoder.d_hidden = 9\nmp.layers = 1\ntrain.max_epochs = 1\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp / "r")]) == 0
    data.write_text(data.read_text() + "\n")  # same graphs, different bytes
    assert main(["train", "--manifest", str(tmp / "r" / "run" / "0" / "manifest.json"), "--dest", str(tmp / "x")]) == 1
    assert "checksum" in capsys.readouterr().err


def test_report_gain_row():
    rows = []
    for enc, tr in (("concat", 0.4), ("tensor", 0.2)):
        for reg, K in (("full", 0), ("sparse", 1), ("none", 0)):
            for seed in (0, 1, 2):
                rows.append({"dataset": "toy", "encoder": enc, "layer": "gcn", "regime": reg, "K": str(K),
                             "train_metric": str(tr), "test_metric": str(tr + 0.01 * seed)})
    text = render_report(rows)
    gain_line = next(l for l in text.splitlines() if "Gain" in l)
    assert gain_line.startswith("| gcn | Gain | 2.000 /")
    assert "| full | K=1 | no MP |" in text
    assert "0.410 ± 0.010" in text


def test_parallel_sweep_matches_serial(sweep_dir, capsys):
    tmp, _, cfg = sweep_dir
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp / "serial")]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp / "par"), "--jobs", "2"]) == 0
    assert (tmp / "serial" / "grid.csv").read_bytes() == (tmp / "par" / "grid.csv").read_bytes()


def test_budget_search_is_closest():
    from tensorgnn.experiment import admissible_hiddens, hidden_for_budget, model_config

    values = parse_config_text("encoder.kind = tensor\nmp.regime = full\nmp.layers = 2").values
    dh = hidden_for_budget(values, 3, 1, 5000, limit=200)
    counts = {h: model_param_count(model_config({**values, "encoder.d_hidden": h}, 3, 1, 0))
              for h in admissible_hiddens("tensor", "full", 200)}
    assert abs(counts[dh] - 5000) == min(abs(c - 5000) for c in counts.values())
    assert admissible_hiddens("concat", "sparse", 40) == [4, 16, 36]


def test_budget_recorded_in_manifest(sweep_dir):
    tmp, data, _ = sweep_dir
    cfg = tmp / "b.cfg"
    cfg.write_text(f"data.path = {data}\nencoding.k = 4\nencoder.param_budget = 3000\nmp.layers = 1\n"
                   "train.max_epochs = 1\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp / "r")]) == 0
    body = json.loads((tmp / "r" / "run" / "0" / "manifest.json").read_text())
    sub = [s for s in body["substitutions"] if "budget" in s["reason"]]
    assert sub and body["config"]["encoder.d_hidden"] == sub[0]["used"]
    assert main(["train", "--manifest", str(tmp / "r" / "run" / "0" / "manifest.json"), "--dest", str(tmp / "x")]) == 0
    assert json.loads((tmp / "x" / "manifest.json").read_text()) == body
