"""End-to-end graph model: encoder -> L message-passing layers -> readout ->
two-layer MLP decoder."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .encoder import ENCODER_KINDS, DimensionError, EncoderParams, embed_dim, encode, parameter_budget
from .encodings import EncodingMatrix
from .graph import AdjacencyView, Graph, build_adjacency
from .mpnn import (
    LAYER_KINDS,
    LayerParams,
    ProjectionParams,
    Propagation,
    apply_layer,
    factor_dim,
    num_projections,
    projection_param_count,
    propagation,
)
from .rng import stream

TASKS = ("regression", "multilabel")
READOUTS = ("sum", "mean", "max")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_in: int
    k: int = 20
    encoder_kind: str = "tensor"
    d_hidden: int = 16
    joint: bool = True
    encoder_mlp_depth: int = 1
    mp_kind: str = "gcn"
    regime: str = "full"
    K: int = 1
    L: int = 4
    epsilon: float = 0.0
    gin_depth: int = 1
    decoder_hidden: int = 0  # 0 means "same as d_hidden"
    task: str = "regression"
    out_dim: int = 1
    readout: str = "sum"
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    @property
    def dec_hidden(self) -> int:
        return self.decoder_hidden or self.d_hidden

    def validate(self) -> None:
        if self.encoder_kind not in ENCODER_KINDS:
            raise ConfigError(f"encoder_kind must be one of {ENCODER_KINDS}, got {self.encoder_kind!r}")
        if self.mp_kind not in LAYER_KINDS:
            raise ConfigError(f"mp_kind must be one of {LAYER_KINDS}, got {self.mp_kind!r}")
        if self.regime not in ("full", "sparse", "none"):
            raise ConfigError(f"regime must be full, sparse or none, got {self.regime!r}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.readout not in READOUTS:
            raise ConfigError(f"readout must be one of {READOUTS}, got {self.readout!r}")
        for name in ("d_in", "k", "d_hidden", "out_dim", "encoder_mlp_depth", "gin_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.decoder_hidden < 0:
            raise ConfigError("decoder_hidden must be >= 0")
        if self.L < 0:
            raise ConfigError(f"L must be >= 0, got {self.L}")
        if (self.L == 0) != (self.regime == "none"):
            raise ConfigError(f"L == 0 exactly when regime is none (got L={self.L}, regime={self.regime})")
        if self.regime == "sparse" and self.K < 1:
            raise ConfigError(f"sparse regime needs K >= 1, got {self.K}")
        if not math.isfinite(self.epsilon):
            raise ConfigError("epsilon must be finite")
        try:
            embed_dim(self.encoder_kind, self.d_hidden)
            if self.regime == "sparse":
                factor_dim(self.d_hidden)
        except DimensionError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# -- parameter layout -----------------------------------------------------------


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every parameter block as ``(name, shape)``, in declaration order."""
    h = cfg.d_hidden
    e = embed_dim(cfg.encoder_kind, h)
    out: list[tuple[str, tuple[int, ...]]] = [("encoder.W_h", (e, cfg.d_in)), ("encoder.W_p", (e, cfg.k))]
    if cfg.joint:
        out += [(f"encoder.joint.{i}", (h, h)) for i in range(cfg.encoder_mlp_depth)]
    for li in range(cfg.L):
        for pi in range(num_projections(cfg.mp_kind, cfg.gin_depth)):
            base = f"layers.{li}.proj.{pi}"
            if cfg.regime == "full":
                out.append((f"{base}.weight", (h, h)))
            else:
                d = factor_dim(h)
                out += [(f"{base}.W", (cfg.K, d, d)), (f"{base}.Q", (cfg.K, d, d))]
    dh = cfg.dec_hidden
    out += [
        ("decoder.W1", (dh, h)),
        ("decoder.b1", (dh,)),
        ("decoder.W2", (cfg.out_dim, dh)),
        ("decoder.b2", (cfg.out_dim,)),
    ]
    return out


def param_breakdown(cfg: ModelConfig) -> dict:
    """Scalar parameter counts per block, computed from the architecture alone."""
    enc = parameter_budget(cfg.encoder_kind, cfg.d_in, cfg.k, cfg.d_hidden, cfg.joint, cfg.encoder_mlp_depth)
    per_layer = 0
    if cfg.L:
        per_layer = num_projections(cfg.mp_kind, cfg.gin_depth) * projection_param_count(
            cfg.regime, cfg.d_hidden, cfg.K
        )
    dh = cfg.dec_hidden
    dec = dh * cfg.d_hidden + dh + cfg.out_dim * dh + cfg.out_dim
    layers = [per_layer] * cfg.L
    return {"encoder": enc, "layers": layers, "decoder": dec, "total": enc + sum(layers) + dec}


def model_param_count(cfg: ModelConfig) -> int:
    return param_breakdown(cfg)["total"]


@dataclass
class ModelParams:
    """Configuration plus named parameter arrays in declaration order."""

    cfg: ModelConfig
    arrays: dict

    def flat(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.arrays[n], dtype=np.float64).ravel() for n, _ in param_shapes(self.cfg)])

    @classmethod
    def from_flat(cls, cfg: ModelConfig, vec: np.ndarray) -> ModelParams:
        vec = np.asarray(vec, dtype=np.float64)
        arrays, pos = {}, 0
        for name, shape in param_shapes(cfg):
            size = int(np.prod(shape))
            arrays[name] = vec[pos : pos + size].reshape(shape).copy()
            pos += size
        if pos != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, model needs {pos}")
        return cls(cfg, arrays)

    def num_params(self) -> int:
        return int(sum(np.asarray(a).size for a in self.arrays.values()))

    def bind(self, tape: Tape) -> dict:
        """Attach every array to ``tape`` as a variable."""
        return {n: tape.variable(a) for n, a in self.arrays.items()}

    def encoder_params(self, values: dict | None = None) -> EncoderParams:
        v = self.arrays if values is None else values
        joint = [v[f"encoder.joint.{i}"] for i in range(self.cfg.encoder_mlp_depth)] if self.cfg.joint else []
        return EncoderParams(self.cfg.encoder_kind, v["encoder.W_h"], v["encoder.W_p"], joint)

    def layer_params(self, values: dict | None = None) -> list[LayerParams]:
        v = self.arrays if values is None else values
        cfg = self.cfg
        layers = []
        for li in range(cfg.L):
            projs = []
            for pi in range(num_projections(cfg.mp_kind, cfg.gin_depth)):
                base = f"layers.{li}.proj.{pi}"
                if cfg.regime == "full":
                    projs.append(ProjectionParams("full", weight=v[f"{base}.weight"]))
                else:
                    projs.append(ProjectionParams("sparse", W=v[f"{base}.W"], Q=v[f"{base}.Q"]))
            layers.append(LayerParams(cfg.mp_kind, projs, cfg.epsilon))
        return layers


def bind_flat(cfg: ModelConfig, flat: Tensor) -> dict:
    """Split one flat tensor into named parameter tensors (differentiable)."""
    values, pos = {}, 0
    for name, shape in param_shapes(cfg):
        values[name] = ad.slice_flat(flat, pos, shape)
        pos += int(np.prod(shape))
    return values


def init_model(cfg: ModelConfig) -> ModelParams:
    """Deterministic initialisation from ``cfg.seed``.

    Encoder and dense projection weights use U(+-1/sqrt(fan_in)); each
    Kronecker factor uses U(+-1/sqrt(d)) so one factor pair has the same
    scale as the dense map; decoder weights and biases use U(+-1/sqrt(fan_in)).
    """
    cfg.validate()
    arrays = {}
    for name, shape in param_shapes(cfg):
        rng = stream(cfg.seed, "model", "init", name)
        if name.endswith((".W", ".Q")):
            fan_in = shape[-1]
        elif name.startswith("decoder.b"):
            fan_in = cfg.d_hidden if name == "decoder.b1" else cfg.dec_hidden
        else:
            fan_in = shape[-1]
        bound = 1.0 / math.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(cfg, arrays)


# -- batching ---------------------------------------------------------------------


@dataclass(frozen=True)
class GraphBatch:
    """Several graphs stacked into one block-diagonal graph."""

    features: np.ndarray
    encodings: np.ndarray
    prop: Propagation
    pool: sp.csr_matrix
    offsets: np.ndarray
    targets: np.ndarray

    @property
    def num_graphs(self) -> int:
        return len(self.offsets) - 1


def make_batch(
    graphs: Sequence[Graph],
    encs: Sequence[EncodingMatrix | np.ndarray],
    adjs: Sequence[AdjacencyView] | None = None,
) -> GraphBatch:
    """Stack graphs block-diagonally. ``adjs`` may pass cached adjacency views."""
    if len(graphs) != len(encs):
        raise ValueError(f"{len(graphs)} graphs but {len(encs)} encodings")
    rows = []
    for g, e in zip(graphs, encs):
        r = np.asarray(e.rows if isinstance(e, EncodingMatrix) else e, dtype=np.float64)
        if r.shape[0] != g.num_nodes:
            raise DimensionError(f"encoding has {r.shape[0]} rows for a graph with {g.num_nodes} nodes")
        rows.append(r)
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    n = int(offsets[-1])
    seg = np.repeat(np.arange(len(graphs)), sizes)
    # columns in node-index order, so readout sums run in that order
    pool = sp.csr_matrix((np.ones(n), (seg, np.arange(n))), shape=(len(graphs), n))
    feats = np.concatenate([g.node_features for g in graphs]) if graphs else np.zeros((0, 1))
    targets = np.stack([g.target for g in graphs]) if graphs and graphs[0].target.size else np.zeros((len(graphs), 0))
    return GraphBatch(
        features=feats,
        encodings=np.concatenate(rows) if rows else np.zeros((0, 1)),
        prop=propagation(list(adjs) if adjs is not None else [build_adjacency(g) for g in graphs]),
        pool=pool,
        offsets=offsets,
        targets=targets,
    )


# -- forward ------------------------------------------------------------------------


def _readout(kind: str, h: Tensor, batch: GraphBatch) -> Tensor:
    if kind == "sum":
        return ad.spmm(batch.pool, h)
    if kind == "mean":
        sizes = np.diff(batch.offsets).astype(np.float64)
        inv = np.divide(1.0, sizes, out=np.zeros_like(sizes), where=sizes > 0)
        return ad.spmm(sp.diags(inv) @ batch.pool, h)
    return ad.segment_max(h, batch.offsets)


def node_states(params: ModelParams, batch: GraphBatch, values: dict | None = None) -> Tensor:
    """Final hidden states of every node in the batch."""
    cfg = params.cfg
    if batch.features.shape[1] != cfg.d_in:
        raise DimensionError(f"features have width {batch.features.shape[1]}, model expects d_in={cfg.d_in}")
    if batch.encodings.shape[1] != cfg.k:
        raise DimensionError(f"encodings have width {batch.encodings.shape[1]}, model expects k={cfg.k}")
    h = encode(params.encoder_params(values), batch.features, batch.encodings)
    for layer in params.layer_params(values):
        h = apply_layer(layer, h, batch.prop)
    return h


def forward_batch(params: ModelParams, batch: GraphBatch, values: dict | None = None) -> Tensor:
    """Predictions of shape (num_graphs, out_dim): raw values or logits."""
    v = params.arrays if values is None else values
    t = lambda x: x if isinstance(x, Tensor) else Tensor(x)  # noqa: E731
    h = node_states(params, batch, values)
    hg = _readout(params.cfg.readout, h, batch)
    z = ad.relu(hg @ ad.transpose(t(v["decoder.W1"])) + t(v["decoder.b1"]))
    return z @ ad.transpose(t(v["decoder.W2"])) + t(v["decoder.b2"])


def forward(params: ModelParams, g: Graph, enc: EncodingMatrix | np.ndarray) -> np.ndarray:
    """Prediction vector for a single graph."""
    return forward_batch(params, make_batch([g], [enc])).numpy()[0]


def flat_objective(params: ModelParams, batch: GraphBatch, loss_fn: Callable) -> Callable[[Tensor], Tensor]:
    """``f(flat_params) -> scalar loss`` for gradient checking the whole model."""
    cfg = params.cfg

    def f(flat: Tensor) -> Tensor:
        values = bind_flat(cfg, flat)
        return loss_fn(forward_batch(params, batch, values), batch.targets)

    return f


# -- checkpoints --------------------------------------------------------------------


def save_checkpoint(directory: str | Path, params: ModelParams, extra: dict | None = None) -> Path:
    """Write ``checkpoint.json`` (config, seed, shapes) and ``checkpoint.bin``
    (all parameters as little-endian float64, declaration order)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": params.cfg.to_dict(),
        "seed": params.cfg.seed,
        "shapes": [[n, list(s)] for n, s in param_shapes(params.cfg)],
        "dtype": "<f8",
    }
    if extra:
        manifest.update(extra)
    (directory / "checkpoint.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (directory / "checkpoint.bin").write_bytes(params.flat().astype("<f8").tobytes())
    return directory / "checkpoint.json"


def load_checkpoint(directory: str | Path) -> ModelParams:
    directory = Path(directory)
    mpath = directory / "checkpoint.json"
    if not mpath.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {mpath}")
    manifest = json.loads(mpath.read_text())
    cfg = ModelConfig.from_dict(manifest["config"])
    expected = [[n, list(s)] for n, s in param_shapes(cfg)]
    if manifest["shapes"] != expected:
        raise ValueError(f"{mpath}: parameter shapes do not match the configuration")
    vec = np.frombuffer((directory / "checkpoint.bin").read_bytes(), dtype="<f8")
    return ModelParams.from_flat(cfg, vec)
