"""Command-line entry point: ``tensorgnn <command> [flags]``.

The only environment variable consulted is ``TENSORGNN_OUT``, the default
output root for ``train`` and ``sweep``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, parse_manifest, resolve
from .encoder import DimensionError
from .encodings import encode_graph, rw_diag_encoding, write_encodings
from .experiment import (
    MANIFEST,
    hidden_for_budget,
    load_rows,
    model_config,
    prepare_splits,
    render_report,
    rerun_sweeps,
    run_config,
    run_from_manifest,
)
from .graph import GraphError, figure1_pair, read_jsonl, write_jsonl
from .model import ConfigError as ModelConfigError
from .model import ModelConfig, load_checkpoint, param_breakdown
from .synthetic import generate_synthetic
from .training import evaluate, rows_to_csv
from .wl import wl_report

log = logging.getLogger("tensorgnn")


def _out_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get("TENSORGNN_OUT") or "runs")


def cmd_generate(a) -> int:
    if a.kind == "figure1":
        left, right = figure1_pair()
        write_jsonl(a.output, [left, right], {"kind": "figure1"})
        print(f"wrote 2 graphs to {a.output}")
        return 0
    if a.kind == "multiplicative_task":
        ds = generate_synthetic(a.kind, a.seed, n=a.n, p=a.p, d_in=a.d_in, num_graphs=a.num_graphs, k=a.k)
        write_jsonl(a.output, ds.graphs, ds.meta)
        print(f"wrote {len(ds)} graphs to {a.output}")
        return 0
    if a.kind == "erdos_renyi":
        rng = np.random.default_rng(a.seed)
        seeds = rng.integers(0, 2**63 - 1, size=a.num_graphs)
        graphs = [generate_synthetic(a.kind, int(s), n=a.n, p=a.p, d_in=a.d_in) for s in seeds]
    elif a.kind == "fused_cycles":
        graphs = [generate_synthetic(a.kind, a=a.a, b=a.b)]
    else:
        graphs = [generate_synthetic(a.kind, n=a.n)]
    write_jsonl(a.output, graphs, {"kind": a.kind, "seed": a.seed})
    print(f"wrote {len(graphs)} graphs to {a.output}")
    return 0


def cmd_encode(a) -> int:
    ds = read_jsonl(a.input)
    kw = {}
    if a.kind == "laplacian_eig":
        kw = {"skip_trivial": not a.keep_trivial, "descending": a.descending}
    encs = [encode_graph(g, a.kind, a.k, **kw) for g in ds]
    out = a.output or str(Path(a.input).with_suffix(f".{a.kind}.jsonl"))
    write_encodings(out, encs)
    print(f"wrote {len(encs)} encodings to {out}")
    return 0


def cmd_train(a) -> int:
    out = _out_root(a.out)
    if a.manifest:
        dest = Path(a.dest) if a.dest else out / "rerun"
        row = run_from_manifest(a.manifest, dest)
        sys.stdout.write(rows_to_csv([row]))
        return 0
    cfg = load_config(a.config)
    if cfg.sweep:
        raise ConfigError(f"{a.config}: declares sweep axes; use the sweep command")
    rows, csv_path = run_config(cfg, out)
    sys.stdout.write(rows_to_csv(rows))
    log.info("rows written to %s", csv_path)
    return 0


def cmd_eval(a) -> int:
    run = Path(a.run)
    mpath = run / MANIFEST
    if not mpath.exists():
        raise FileNotFoundError(f"manifest not found: {mpath}")
    m = parse_manifest(mpath.read_text())
    values = dict(m["config"])
    if a.data:
        values["data.path"] = a.data
    data = Path(values["data.path"])
    if not data.exists():
        raise FileNotFoundError(f"dataset not found: {data}")
    params = load_checkpoint(run)
    ds = read_jsonl(data)
    parts = dict(zip(("train", "val", "test"), prepare_splits(ds, values)))
    lines = ["split,metric"]
    for name in parts if a.split == "all" else [a.split]:
        s = parts[name]
        val = evaluate(params, s.batch()) if len(s) else float("nan")
        lines.append(f"{name},{val!r}")
    text = "\n".join(lines) + "\n"
    (run / "eval.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_sweep(a) -> int:
    out = _out_root(a.out)
    if a.rerun:
        for path in rerun_sweeps(a.rerun, out):
            print(f"re-ran {path}")
        return 0
    rows, path = run_config(load_config(a.config), out, jobs=a.jobs)
    print(f"{len(rows)} runs, rows in {path}")
    return 0


def _rw_rows(g, k: int) -> list[list[float]]:
    rows = rw_diag_encoding(g, k).rows
    return sorted(np.round(rows, 12).tolist())


def cmd_wl_test(a) -> int:
    if a.figure1:
        g1, g2 = figure1_pair()
    else:
        if not (a.left and a.right):
            raise ValueError("wl-test needs --figure1 or both LEFT and RIGHT dataset paths")
        g1 = read_jsonl(a.left).graphs[a.index]
        g2 = read_jsonl(a.right).graphs[a.index]
    rep = wl_report(g1, g2)
    print("equivalent" if rep["equivalent"] else "distinguishable")
    print(f"rounds: {rep['rounds']}")
    r1, r2 = _rw_rows(g1, a.k), _rw_rows(g2, a.k)
    diff = max(
        (float(np.max(np.abs(np.subtract(x, y)))) for x, y in zip(r1, r2)),
        default=float("inf"),
    ) if len(r1) == len(r2) else float("inf")
    if diff > 1e-6:
        print(f"rw encodings differ (k={a.k}, max sorted-row gap {diff:.6f})")
        for name, rows in (("left", r1), ("right", r2)):
            print(f"{name}:")
            for row in sorted({tuple(np.round(r[: a.show], 6)) for r in map(tuple, rows)}):
                print("  " + " ".join(f"{v:.6f}" for v in row))
    else:
        print(f"rw encodings agree (k={a.k})")
    return 0


def cmd_param_count(a) -> int:
    if a.config:
        res = resolve(load_config(a.config))
        cfg = model_config(res.values, a.d_in, a.out_dim, 0)
    else:
        cfg = ModelConfig(
            d_in=a.d_in,
            k=a.k,
            encoder_kind=a.encoder,
            d_hidden=a.d_hidden,
            joint=not a.no_joint,
            mp_kind=a.layer,
            regime=a.regime,
            K=a.K,
            L=0 if a.regime == "none" else a.layers,
            gin_depth=a.gin_depth,
            decoder_hidden=a.decoder_hidden,
            out_dim=a.out_dim,
        )
    if a.budget:
        values = {
            "encoder.kind": cfg.encoder_kind, "encoder.d_hidden": cfg.d_hidden, "encoder.joint": cfg.joint,
            "encoder.mlp_depth": cfg.encoder_mlp_depth, "encoding.k": cfg.k, "mp.kind": cfg.mp_kind,
            "mp.regime": cfg.regime, "mp.K": cfg.K, "mp.layers": cfg.L, "mp.epsilon": cfg.epsilon,
            "mp.gin_depth": cfg.gin_depth, "decoder.hidden": cfg.decoder_hidden, "task.kind": cfg.task,
            "model.readout": cfg.readout,
        }
        dh = hidden_for_budget(values, cfg.d_in, cfg.out_dim, a.budget)
        cfg = replace(cfg, d_hidden=dh)
        print(f"d_hidden: {dh} (budget {a.budget})")
    b = param_breakdown(cfg)
    print(f"encoder: {b['encoder']}")
    for i, n in enumerate(b["layers"]):
        print(f"layer {i}: {n}")
    print(f"decoder: {b['decoder']}")
    print(f"total: {b['total']}")
    return 0


def cmd_report(a) -> int:
    rows = []
    for p in a.csv:
        rows.extend(load_rows(p))
    text = render_report(rows, a.task)
    if a.output:
        Path(a.output).write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tensorgnn", description="Tensor-product structural encodings for MPNNs")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic JSONL dataset")
    g.add_argument("kind", choices=["multiplicative_task", "erdos_renyi", "cycle", "path", "fused_cycles", "figure1"])
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=15)
    g.add_argument("--p", type=float, default=0.2)
    g.add_argument("--d-in", type=int, default=4)
    g.add_argument("--num-graphs", type=int, default=500)
    g.add_argument("--k", type=int, default=20)
    g.add_argument("--a", type=int, default=6)
    g.add_argument("--b", type=int, default=6)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("encode", help="write structural encodings for a dataset")
    e.add_argument("input")
    e.add_argument("-o", "--output")
    e.add_argument("--kind", choices=["rw_diag", "laplacian_eig"], default="rw_diag")
    e.add_argument("--k", type=int, default=20)
    e.add_argument("--keep-trivial", action="store_true")
    e.add_argument("--descending", action="store_true")
    e.set_defaults(func=cmd_encode)

    t = sub.add_parser("train", help="train from a config or re-run a manifest")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--manifest")
    t.add_argument("--out")
    t.add_argument("--dest", help="run directory when re-running a manifest")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="evaluate a trained run directory")
    v.add_argument("run")
    v.add_argument("--data")
    v.add_argument("--split", choices=["train", "val", "test", "all"], default="all")
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="expand a grid config into runs")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--rerun", help="re-run every manifest under this directory")
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    w = sub.add_parser("wl-test", help="1-WL equivalence of two graphs")
    w.add_argument("--figure1", action="store_true")
    w.add_argument("left", nargs="?")
    w.add_argument("right", nargs="?")
    w.add_argument("--index", type=int, default=0)
    w.add_argument("--k", type=int, default=20)
    w.add_argument("--show", type=int, default=6, help="encoding columns to print")
    w.set_defaults(func=cmd_wl_test)

    c = sub.add_parser("param-count", help="per-block parameter counts")
    c.add_argument("--config")
    c.add_argument("--d-in", type=int, default=1)
    c.add_argument("--out-dim", type=int, default=1)
    c.add_argument("--k", type=int, default=20)
    c.add_argument("--encoder", choices=["concat", "tensor"], default="tensor")
    c.add_argument("--d-hidden", type=int, default=64)
    c.add_argument("--no-joint", action="store_true")
    c.add_argument("--layer", choices=["gcn", "gin", "sage"], default="gcn")
    c.add_argument("--regime", choices=["full", "sparse", "none"], default="full")
    c.add_argument("--K", type=int, default=1)
    c.add_argument("--layers", type=int, default=4)
    c.add_argument("--gin-depth", type=int, default=1)
    c.add_argument("--decoder-hidden", type=int, default=0)
    c.add_argument("--budget", type=int, default=0, help="pick the d_hidden closest to this parameter count")
    c.set_defaults(func=cmd_param_count)

    r = sub.add_parser("report", help="render markdown tables from run CSVs")
    r.add_argument("csv", nargs="+")
    r.add_argument("-o", "--output")
    r.add_argument("--task", choices=["regression", "multilabel"], default="regression")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        msg = str(exc) if exc.filename is None else f"file not found: {exc.filename}"
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except (ConfigError, ModelConfigError, DimensionError, GraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
