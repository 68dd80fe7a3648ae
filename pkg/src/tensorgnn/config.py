"""Strict flat key-value run configuration and run manifests.

Grammar, one entry per line::

    # comment
    section.key = value
    sweep.section.key = v1, v2, v3

Blank lines and ``#`` comments are ignored. Keys are dotted names from
:data:`SCHEMA`; anything else is rejected. Values are parsed with the key's
declared type. ``true``/``false`` for booleans, comma-separated lists for
list-typed keys. ``sweep.``-prefixed keys declare grid axes over any schema
key; the extra axis ``sweep.regime`` takes values ``full``, ``none`` or
``sparse<K>`` (e.g. ``sparse10``) and sets ``mp.regime``/``mp.K`` together.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import admissible_hidden
from .mpnn import LAYER_KINDS


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


_TYPES = {"int": int, "float": float, "str": str, "bool": _bool, "ints": _ints, "floats": _floats}

# key -> (type, default)
SCHEMA: dict[str, tuple[str, object]] = {
    "run.name": ("str", "run"),
    "run.seeds": ("ints", [0]),
    "run.record_time": ("bool", False),
    "data.path": ("str", ""),
    "data.name": ("str", ""),
    "data.split": ("floats", [0.8, 0.1, 0.1]),
    "data.split_seed": ("int", 0),
    "encoding.kind": ("str", "rw_diag"),
    "encoding.k": ("int", 20),
    "encoding.skip_trivial": ("bool", True),
    "encoding.descending": ("bool", False),
    "encoder.kind": ("str", "tensor"),
    "encoder.d_hidden": ("int", 16),
    "encoder.joint": ("bool", True),
    "encoder.mlp_depth": ("int", 1),
    "encoder.param_budget": ("int", 0),
    "mp.kind": ("str", "gcn"),
    "mp.regime": ("str", "full"),
    "mp.K": ("int", 1),
    "mp.layers": ("int", 4),
    "mp.epsilon": ("float", 0.0),
    "mp.gin_depth": ("int", 1),
    "decoder.hidden": ("int", 0),
    "model.readout": ("str", "sum"),
    "task.kind": ("str", "regression"),
    "train.lr": ("float", 1e-3),
    "train.patience": ("int", 25),
    "train.factor": ("float", 0.5),
    "train.lr_floor": ("float", 1e-5),
    "train.max_epochs": ("int", 1000),
    "train.batch_size": ("int", 0),
    "train.monitor": ("str", "val"),
}

CHOICES = {
    "encoding.kind": ("rw_diag", "laplacian_eig"),
    "encoder.kind": ("concat", "tensor"),
    "mp.kind": LAYER_KINDS,
    "mp.regime": ("full", "sparse", "none"),
    "model.readout": ("sum", "mean", "max"),
    "task.kind": ("regression", "multilabel"),
    "train.monitor": ("val", "train"),
}

_REGIME_RE = re.compile(r"^(full|none|sparse(\d+))$")


def parse_value(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    kind = SCHEMA[key][0]
    try:
        value = _TYPES[kind](raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind} ({exc})") from None
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"{key}: {value!r} is not one of {CHOICES[key]}")
    return value


@dataclass
class RunConfig:
    values: dict
    sweep: dict = field(default_factory=dict)  # key -> list of raw strings

    def __getitem__(self, key: str):
        return self.values[key]

    def copy_with(self, **updates) -> RunConfig:
        v = dict(self.values)
        v.update(updates)
        return RunConfig(v, {})


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    values = {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in SCHEMA.items()}
    sweep: dict[str, list[str]] = {}
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        if key.startswith("sweep."):
            axis = key[len("sweep."):]
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if not items:
                raise ConfigError(f"{origin}:{lineno}: empty sweep axis {axis!r}")
            if axis == "regime":
                for it in items:
                    if not _REGIME_RE.match(it):
                        raise ConfigError(f"{origin}:{lineno}: bad regime value {it!r}")
            else:
                try:
                    for it in items:
                        parse_value(axis, it)
                except ConfigError as exc:
                    raise ConfigError(f"{origin}:{lineno}: {exc}") from None
            sweep[axis] = items
            continue
        try:
            values[key] = parse_value(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{origin}:{lineno}: {exc}") from None
    return RunConfig(values, sweep)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), str(path))


def render_config(values: dict) -> str:
    lines = []
    for key in SCHEMA:
        v = values[key]
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, list):
            s = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append(f"{key} = {s}")
    return "\n".join(lines) + "\n"


def _apply_regime(values: dict, item: str) -> None:
    m = _REGIME_RE.match(item)
    if m.group(2):
        values["mp.regime"] = "sparse"
        values["mp.K"] = int(m.group(2))
    else:
        values["mp.regime"] = item


def expand_sweep(cfg: RunConfig) -> list[tuple[str, RunConfig]]:
    """Cartesian product of sweep axes, in declaration order.

    Returns ``(tag, config)`` pairs, where the tag names the grid point.
    """
    if not cfg.sweep:
        return [("", RunConfig(dict(cfg.values)))]
    axes = list(cfg.sweep.items())
    out = []
    for combo in itertools.product(*(items for _, items in axes)):
        values = dict(cfg.values)
        parts = []
        for (axis, _), item in zip(axes, combo):
            if axis == "regime":
                _apply_regime(values, item)
            else:
                values[axis] = parse_value(axis, item)
            parts.append(f"{axis.split('.')[-1]}={item}")
        out.append(("_".join(parts), RunConfig(values)))
    return out


@dataclass
class Resolved:
    values: dict
    substitutions: list


def resolve(cfg: RunConfig) -> Resolved:
    """Fill in coupled knobs and admissible dimensions.

    * regime ``none`` forces ``mp.layers = 0``
    * a d_hidden the encoder or sparse projections cannot use is replaced by
      the largest admissible value below it; every replacement is recorded.
    """
    v = dict(cfg.values)
    subs = []
    if v["mp.regime"] == "none":
        if v["mp.layers"] != 0:
            subs.append({"key": "mp.layers", "requested": v["mp.layers"], "used": 0, "reason": "regime none has no layers"})
        v["mp.layers"] = 0
    elif v["mp.layers"] < 1:
        raise ConfigError(f"mp.regime={v['mp.regime']} needs mp.layers >= 1")
    req = v["encoder.d_hidden"]
    used = admissible_hidden(v["encoder.kind"], req)
    if v["mp.regime"] == "sparse":
        while used > 0:
            r = int(round(used**0.5))
            if r * r == used and admissible_hidden(v["encoder.kind"], used) == used:
                break
            used -= 1
    if used < 1:
        raise ConfigError(f"no admissible d_hidden <= {req}")
    if used != req:
        subs.append(
            {
                "key": "encoder.d_hidden",
                "requested": req,
                "used": used,
                "reason": f"largest d_hidden <= {req} admissible for encoder={v['encoder.kind']}, regime={v['mp.regime']}",
            }
        )
        v["encoder.d_hidden"] = used
    if abs(sum(v["data.split"]) - 1.0) > 1e-9 or len(v["data.split"]) != 3 or min(v["data.split"]) < 0:
        raise ConfigError(f"data.split must be three non-negative fractions summing to 1, got {v['data.split']}")
    return Resolved(v, subs)


# -- manifests -----------------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def render_manifest(manifest: dict) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def parse_manifest(text: str) -> dict:
    m = json.loads(text)
    for key in ("config", "seed", "dataset", "artifacts", "substitutions"):
        if key not in m:
            raise ConfigError(f"manifest is missing {key!r}")
    unknown = set(m["config"]) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"manifest config has unknown keys {sorted(unknown)}")
    return m
