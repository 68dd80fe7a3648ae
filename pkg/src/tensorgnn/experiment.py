"""Run orchestration: one run per (config, seed), sweeps over config grids,
and markdown reports in the train / test grid layout."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import (
    SCHEMA,
    RunConfig,
    expand_sweep,
    parse_manifest,
    render_manifest,
    resolve,
    sha256_file,
)
from .encodings import encode_graph
from .graph import Dataset, read_jsonl
from .model import ModelConfig, ModelParams, init_model, model_param_count, save_checkpoint
from .rng import stream
from .training import (
    REPORT_COLUMNS,
    Split,
    TrainConfig,
    aggregate_seeds,
    evaluate,
    gain,
    read_csv_rows,
    report_row,
    rows_to_csv,
    train,
)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
INDEX_SUFFIX = ".runs.json"


def split_indices(n: int, fractions: Sequence[float], seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint train/val/test index sets from a seeded permutation."""
    order = stream(seed, "data", "split").permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    tr = np.sort(order[:n_train])
    va = np.sort(order[n_train : n_train + n_val])
    te = np.sort(order[n_train + n_val :])
    return tr, va, te


def model_config(values: dict, d_in: int, out_dim: int, seed: int) -> ModelConfig:
    return ModelConfig(
        d_in=d_in,
        k=values["encoding.k"],
        encoder_kind=values["encoder.kind"],
        d_hidden=values["encoder.d_hidden"],
        joint=values["encoder.joint"],
        encoder_mlp_depth=values["encoder.mlp_depth"],
        mp_kind=values["mp.kind"],
        regime=values["mp.regime"],
        K=values["mp.K"],
        L=values["mp.layers"],
        epsilon=values["mp.epsilon"],
        gin_depth=values["mp.gin_depth"],
        decoder_hidden=values["decoder.hidden"],
        task=values["task.kind"],
        out_dim=out_dim,
        readout=values["model.readout"],
        seed=seed,
    )


def train_config(values: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        lr=values["train.lr"],
        patience=values["train.patience"],
        factor=values["train.factor"],
        lr_floor=values["train.lr_floor"],
        max_epochs=values["train.max_epochs"],
        batch_size=values["train.batch_size"],
        monitor=values["train.monitor"],
        seed=seed,
    )


def _encodings(ds: Dataset, values: dict) -> list:
    kw = {}
    if values["encoding.kind"] == "laplacian_eig":
        kw = {"skip_trivial": values["encoding.skip_trivial"], "descending": values["encoding.descending"]}
    return [encode_graph(g, values["encoding.kind"], values["encoding.k"], **kw) for g in ds]


def prepare_splits(ds: Dataset, values: dict) -> tuple[Split, Split, Split]:
    encs = _encodings(ds, values)
    parts = split_indices(len(ds), values["data.split"], values["data.split_seed"])
    return tuple(Split([ds.graphs[i] for i in idx], [encs[i] for i in idx]) for idx in parts)


def admissible_hiddens(encoder_kind: str, regime: str, limit: int) -> list[int]:
    """Every d_hidden in [1, limit] the encoder (and sparse projections) accept."""
    out = []
    for dh in range(1, limit + 1):
        if encoder_kind == "concat" and dh % 2:
            continue
        if (encoder_kind == "tensor" or regime == "sparse") and math.isqrt(dh) ** 2 != dh:
            continue
        out.append(dh)
    return out


def hidden_for_budget(values: dict, d_in: int, out_dim: int, budget: int, limit: int = 1024) -> int:
    """Admissible d_hidden whose total parameter count is closest to ``budget``
    (ties go to the smaller width)."""
    best = None
    for dh in admissible_hiddens(values["encoder.kind"], values["mp.regime"], limit):
        n = model_param_count(model_config({**values, "encoder.d_hidden": dh}, d_in, out_dim, 0))
        key = (abs(n - budget), dh)
        if best is None or key < best:
            best = key
    return best[1]


def apply_budget(values: dict, substitutions: list) -> tuple[dict, list]:
    """Replace d_hidden by the budget search result when ``encoder.param_budget`` is set."""
    budget = values["encoder.param_budget"]
    if budget <= 0:
        return values, substitutions
    data = Path(values["data.path"])
    if not data.exists():
        raise FileNotFoundError(f"dataset not found: {data}")
    g = read_jsonl(data).graphs[0]
    dh = hidden_for_budget(values, g.feature_dim, g.target.size, budget)
    subs = list(substitutions)
    if dh != values["encoder.d_hidden"]:
        subs.append({"key": "encoder.d_hidden", "requested": values["encoder.d_hidden"], "used": dh,
                     "reason": f"closest parameter count to budget {budget}"})
    return {**values, "encoder.d_hidden": dh}, subs


def dataset_name(values: dict) -> str:
    return values["data.name"] or Path(values["data.path"]).stem


def run_single(values: dict, seed: int, out_dir: str | Path, substitutions: list | None = None) -> dict:
    """Train one model and write manifest, checkpoint, history and metrics.

    ``values`` must be a resolved configuration. Returns the report row.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_path = Path(values["data.path"])
    if not data_path.exists():
        raise FileNotFoundError(f"dataset not found: {data_path}")
    checksum = sha256_file(data_path)
    ds = read_jsonl(data_path)
    if not len(ds):
        raise ValueError(f"{data_path}: dataset is empty")
    d_in = ds.graphs[0].feature_dim
    out_dim = ds.graphs[0].target.size
    cfg = model_config(values, d_in, out_dim, seed)
    manifest = {
        "config": {k: values[k] for k in SCHEMA},
        "derived": {"d_in": d_in, "out_dim": out_dim},
        "seed": seed,
        "substitutions": list(substitutions or []),
        "dataset": {"path": str(data_path), "sha256": checksum, "num_graphs": len(ds)},
        "artifacts": {
            "checkpoint": "checkpoint.json",
            "parameters": "checkpoint.bin",
            "metrics": "metrics.csv",
            "history": "history.csv",
        },
    }
    (out_dir / MANIFEST).write_text(render_manifest(manifest))

    tr, va, te = prepare_splits(ds, values)
    params = init_model(cfg)
    t0 = time.perf_counter()
    state = train(params, tr, va, train_config(values, seed))
    wall = time.perf_counter() - t0
    train_metric = evaluate(params, tr.batch())
    test_metric = evaluate(params, te.batch()) if len(te) else float("nan")
    save_checkpoint(out_dir, params, {"epochs": state.epoch, "final_lr": state.lr})
    row = report_row(
        dataset_name(values),
        params,
        state,
        train_metric,
        test_metric,
        wall if values["run.record_time"] else None,
    )
    (out_dir / "metrics.csv").write_text(rows_to_csv([row]))
    hist = ["epoch,train_loss,train_metric,monitor_metric,lr"]
    hist += [f"{e},{l!r},{m!r},{v!r},{lr!r}" for e, l, m, v, lr in state.history]
    (out_dir / "history.csv").write_text("\n".join(hist) + "\n")
    (out_dir / "timing.json").write_text(json.dumps({"wall_time_s": wall}) + "\n")
    log.info("run %s seed %d: train %.4g test %.4g (%d epochs)", out_dir, seed, train_metric, test_metric, state.epoch)
    return row


def run_from_manifest(manifest_path: str | Path, out_dir: str | Path) -> dict:
    """Re-run exactly what a manifest describes into ``out_dir``."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    m = parse_manifest(manifest_path.read_text())
    data = Path(m["dataset"]["path"])
    if not data.exists():
        raise FileNotFoundError(f"dataset not found: {data}")
    if sha256_file(data) != m["dataset"]["sha256"]:
        raise ValueError(f"{data}: checksum differs from the one recorded in {manifest_path}")
    return run_single(m["config"], m["seed"], out_dir, m["substitutions"])


def _job(args):
    values, seed, out_dir, subs = args
    return run_single(values, seed, out_dir, subs)


def run_config(cfg: RunConfig, out_root: str | Path, jobs: int = 1) -> tuple[list[dict], Path]:
    """Expand sweep axes and seeds into runs under ``out_root/<name>/<seed>/``.

    Writes ``out_root/<run.name>.csv`` with every row in grid order and
    returns the rows and that path.
    """
    out_root = Path(out_root)
    base = cfg["run.name"]
    tasks = []
    for tag, point in expand_sweep(cfg):
        res = resolve(point)
        values, subs = apply_budget(res.values, res.substitutions)
        name = f"{base}__{tag}" if tag else base
        for seed in values["run.seeds"]:
            tasks.append((values, seed, out_root / name / str(seed), subs))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_job, tasks))
    else:
        rows = [_job(t) for t in tasks]
    out_root.mkdir(parents=True, exist_ok=True)
    csv_path = out_root / f"{base}.csv"
    csv_path.write_text(rows_to_csv(rows))
    index = [str(Path(t[2]).relative_to(out_root)) for t in tasks]
    (out_root / f"{base}{INDEX_SUFFIX}").write_text(json.dumps(index, indent=1) + "\n")
    return rows, csv_path


def rerun_manifests(run_root: str | Path, out_root: str | Path, order: Sequence[Path] | None = None) -> list[dict]:
    """Re-run every manifest below ``run_root`` into the mirrored path below ``out_root``."""
    run_root, out_root = Path(run_root), Path(out_root)
    manifests = list(order) if order is not None else sorted(run_root.rglob(MANIFEST))
    rows = []
    for mpath in manifests:
        rel = mpath.parent.relative_to(run_root)
        rows.append(run_from_manifest(mpath, out_root / rel))
    return rows


def rerun_sweeps(run_root: str | Path, out_root: str | Path) -> list[Path]:
    """Replay every sweep recorded under ``run_root`` in its original row order.

    Each ``<name>.runs.json`` index yields ``out_root/<name>.csv``, which is
    byte-identical to the original CSV when the runs reproduce. Manifests
    not listed in any index are re-run too and collected in ``rerun.csv``.
    """
    run_root, out_root = Path(run_root), Path(out_root)
    if not run_root.is_dir():
        raise FileNotFoundError(f"run directory not found: {run_root}")
    written, seen = [], set()
    for idx in sorted(run_root.glob(f"*{INDEX_SUFFIX}")):
        rels = json.loads(idx.read_text())
        rows = rerun_manifests(run_root, out_root, [run_root / r / MANIFEST for r in rels])
        seen.update(rels)
        out_root.mkdir(parents=True, exist_ok=True)
        path = out_root / (idx.name[: -len(INDEX_SUFFIX)] + ".csv")
        path.write_text(rows_to_csv(rows))
        written.append(path)
    loose = [m for m in sorted(run_root.rglob(MANIFEST)) if str(m.parent.relative_to(run_root)) not in seen]
    if loose:
        rows = rerun_manifests(run_root, out_root, loose)
        out_root.mkdir(parents=True, exist_ok=True)
        path = out_root / "rerun.csv"
        path.write_text(rows_to_csv(rows))
        written.append(path)
    return written


# -- reports ------------------------------------------------------------------------


def _regime_label(row: dict) -> str:
    if row["regime"] == "full":
        return "full"
    if row["regime"] == "none":
        return "no MP"
    return f"K={row['K']}"


def _regime_order(label: str) -> tuple:
    if label == "full":
        return (0, 0)
    if label == "no MP":
        return (2, 0)
    return (1, -int(label[2:]))


def render_report(rows: Sequence[dict], task: str = "regression") -> str:
    """Markdown train / test grid with a gain row per layer kind, plus a
    test mean +/- std table."""
    cells: dict = {}
    for r in rows:
        key = (r["dataset"], r["layer"], r["encoder"], _regime_label(r))
        cells.setdefault(key, []).append((float(r["train_metric"]), float(r["test_metric"])))
    datasets = sorted({k[0] for k in cells})
    out = []
    for ds in datasets:
        regimes = sorted({k[3] for k in cells if k[0] == ds}, key=_regime_order)
        layers = sorted({k[1] for k in cells if k[0] == ds})
        out.append(f"### {ds}\n")
        out.append("| layer | encoding | " + " | ".join(regimes) + " |")
        out.append("|---|---|" + "---|" * len(regimes))
        for layer in layers:
            means = {}
            for enc in ("concat", "tensor"):
                line = []
                for reg in regimes:
                    vals = cells.get((ds, layer, enc, reg))
                    if not vals:
                        line.append("-")
                        continue
                    tr = float(np.mean([v[0] for v in vals]))
                    te = float(np.mean([v[1] for v in vals]))
                    means[(enc, reg)] = (tr, te)
                    line.append(f"{tr:.3f} / {te:.3f}")
                out.append(f"| {layer} | RW-{enc.capitalize()} | " + " | ".join(line) + " |")
            gains = []
            for reg in regimes:
                c, t = means.get(("concat", reg)), means.get(("tensor", reg))
                if c and t:
                    gains.append(f"{gain(task, c[0], t[0]):.3f} / {gain(task, c[1], t[1]):.3f}")
                else:
                    gains.append("-")
            out.append(f"| {layer} | Gain | " + " | ".join(gains) + " |")
        out.append("")
        out.append("| layer | encoding | " + " | ".join(regimes) + " |")
        out.append("|---|---|" + "---|" * len(regimes))
        for layer in layers:
            for enc in ("concat", "tensor"):
                line = []
                for reg in regimes:
                    vals = cells.get((ds, layer, enc, reg))
                    if not vals:
                        line.append("-")
                        continue
                    mean, std = aggregate_seeds([v[1] for v in vals])
                    line.append(f"{mean:.3f} ± {std:.3f}")
                out.append(f"| {layer} | RW-{enc.capitalize()} (test) | " + " | ".join(line) + " |")
        out.append("")
    return "\n".join(out)


def load_rows(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"report CSV not found: {path}")
    rows = read_csv_rows(path.read_text())
    if rows and set(rows[0]) != set(REPORT_COLUMNS):
        raise ValueError(f"{path}: unexpected columns {list(rows[0])}")
    return rows


def load_params_for_run(run_dir: str | Path) -> ModelParams:
    from .model import load_checkpoint

    return load_checkpoint(run_dir)
