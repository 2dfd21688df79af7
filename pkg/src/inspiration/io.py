"""Line-oriented text formats for demonstrations, parameters, configs and metrics.

Every real is written with 17 significant digits, which round-trips any
finite double exactly; identical values always produce identical bytes.
"""

from __future__ import annotations

import csv
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .approximator import Layout, ModelParams
from .core import ExpertTrajectory, InvalidInputError, TrainConfig

DEMO_MAGIC = "# inspiration-demos v1"
PARAMS_MAGIC = "# inspiration-params v1"
ACTIONS_MAGIC = "# inspiration-actions v1"


class ParseError(InvalidInputError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_row(values) -> str:
    return " ".join(fmt(v) for v in values)


def _parse_reals(tokens, path, lineno) -> list[float]:
    try:
        out = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(path, lineno, f"non-numeric token in {' '.join(tokens)!r}") from None
    if not all(math.isfinite(v) for v in out):
        raise ParseError(path, lineno, "non-finite value")
    return out


def _write(path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _header(lines, path, keys: Sequence[str], start: int = 1) -> tuple[dict, int]:
    """Read ``key value`` header lines until the first blank line."""
    meta, i = {}, start
    while i < len(lines) and lines[i].strip():
        parts = lines[i].split(None, 1)
        # a key alone means an empty value, e.g. a grid without walls
        meta[parts[0]] = parts[1].strip() if len(parts) == 2 else ""
        i += 1
    missing = [k for k in keys if k not in meta]
    if missing:
        raise ParseError(path, i + 1, f"header lacks {', '.join(missing)}")
    return meta, i


def _env_lines(env: dict) -> list[str]:
    from .envs import format_env_config

    lines = (line.split("=", 1) for line in format_env_config(env).splitlines())
    return [f"env.{k.strip()} {v.strip()}".rstrip() for k, v in lines]


def _env_from_meta(meta: dict) -> dict | None:
    from .envs import parse_env_config

    lines = [f"{k[4:]} = {v}" for k, v in meta.items() if k.startswith("env.")]
    return parse_env_config("\n".join(lines)) if lines else None


# -- demonstrations ---------------------------------------------------------------


def save_demos(path, demos: Sequence[ExpertTrajectory], env_id: str = "unknown", stack_k: int = 1, env: dict | None = None):
    if not demos:
        raise InvalidInputError("nothing to save")
    dim = demos[0].obs_dim
    if any(d.obs_dim != dim for d in demos):
        raise InvalidInputError("demonstrations differ in state dimension")
    lines = [
        DEMO_MAGIC,
        f"env {env_id}",
        f"obs_dim {dim}",
        f"stack_k {stack_k}",
        f"trajectories {len(demos)}",
    ]
    if env:
        lines += _env_lines(env)
    for d in demos:
        lines.append("")
        lines += [_fmt_row(s) for s in d.states]
    _write(path, "\n".join(lines) + "\n")


def load_demos_file(path) -> tuple[list[ExpertTrajectory], dict]:
    """Parse a demo file; returns trajectories and header metadata."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != DEMO_MAGIC:
        raise ParseError(path, 1, "not a demonstration file")
    meta, i = _header(lines, path, ("env", "obs_dim", "stack_k", "trajectories"))
    try:
        dim, count, k = int(meta["obs_dim"]), int(meta["trajectories"]), int(meta["stack_k"])
    except ValueError:
        raise ParseError(path, i, "non-integer header field") from None
    groups: list[list[tuple[int, list[float]]]] = []
    current = None
    for lineno in range(i + 1, len(lines) + 1):
        text = lines[lineno - 1].strip()
        if not text:
            current = None
            continue
        if current is None:
            current = []
            groups.append(current)
        vals = _parse_reals(text.split(), path, lineno)
        if len(vals) != dim:
            raise ParseError(path, lineno, f"expected {dim} values, found {len(vals)}")
        current.append((lineno, vals))
    if len(groups) != count:
        raise ParseError(path, len(lines), f"header promises {count} trajectories, found {len(groups)}")
    demos = []
    for g in groups:
        if len(g) < 2:
            raise ParseError(path, g[0][0], "trajectory has fewer than two states")
        demos.append(ExpertTrajectory(tuple(np.array(v) for _, v in g)))
    info = {"env_id": meta["env"], "obs_dim": dim, "stack_k": k, "env": _env_from_meta(meta)}
    return demos, info


def load_demos(path) -> list[ExpertTrajectory]:
    return load_demos_file(path)[0]


# -- action logs and centroids ------------------------------------------------------


def save_actions(path, actions: Iterable):
    rows = [np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in actions]
    _write(path, "\n".join([ACTIONS_MAGIC] + [_fmt_row(r) for r in rows]) + "\n")


def load_actions(path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != ACTIONS_MAGIC:
        raise ParseError(path, 1, "not an action file")
    rows = []
    for lineno, text in enumerate(lines[1:], 2):
        if text.strip():
            rows.append(_parse_reals(text.split(), path, lineno))
            if len(rows[-1]) != len(rows[0]):
                raise ParseError(path, lineno, "rows differ in length")
    if not rows:
        raise ParseError(path, len(lines), "no actions")
    return np.array(rows)


# -- parameters ---------------------------------------------------------------------


def save_params(path, p: ModelParams, extra: dict | None = None):
    """Write layout header, optional ``key value`` metadata, then one value per line."""
    lay = p.layout
    lines = [
        PARAMS_MAGIC,
        f"obs_dim {lay.obs_dim}",
        f"hidden {' '.join(str(h) for h in lay.hidden) or '-'}",
        f"n_actions {lay.n_actions}",
        f"shared {int(lay.shared)}",
        f"clf_hidden {lay.clf_hidden}",
        f"policy {lay.policy}",
        f"count {lay.size}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key} {value}".rstrip())
    lines.append("")
    lines += [fmt(v) for v in p.values]
    _write(path, "\n".join(lines) + "\n")


def load_params_file(path) -> tuple[ModelParams, dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != PARAMS_MAGIC:
        raise ParseError(path, 1, "not a parameter file")
    keys = ("obs_dim", "hidden", "n_actions", "shared", "clf_hidden", "policy", "count")
    meta, i = _header(lines, path, keys)
    try:
        hidden = () if meta["hidden"] == "-" else tuple(int(h) for h in meta["hidden"].split())
        layout = Layout(
            int(meta["obs_dim"]),
            hidden,
            int(meta["n_actions"]),
            bool(int(meta["shared"])),
            int(meta["clf_hidden"]),
            meta["policy"],
        )
        count = int(meta["count"])
    except ValueError as exc:
        raise ParseError(path, i, f"bad layout header: {exc}") from None
    if count != layout.size:
        raise ParseError(path, i, f"count {count} does not match layout size {layout.size}")
    values = []
    for lineno in range(i + 2, len(lines) + 1):
        text = lines[lineno - 1].strip()
        if text:
            values += _parse_reals(text.split(), path, lineno)
    if len(values) != count:
        raise ParseError(path, len(lines), f"expected {count} values, found {len(values)}")
    extra = {k: v for k, v in meta.items() if k not in keys}
    return ModelParams(layout, np.array(values)), extra


def load_params(path) -> ModelParams:
    return load_params_file(path)[0]


def check_compatible(p: ModelParams, obs_dim: int, n_actions: int):
    lay = p.layout
    if lay.obs_dim != obs_dim or lay.n_actions != n_actions:
        raise InvalidInputError(
            f"parameters expect obs_dim={lay.obs_dim}, n_actions={lay.n_actions}; "
            f"environment provides obs_dim={obs_dim}, n_actions={n_actions}"
        )


# -- configs --------------------------------------------------------------------------


def parse_config(text: str) -> dict:
    """Flat ``key = value`` lines with ``#`` comments; keys are TrainConfig fields."""
    fields = TrainConfig.__dataclass_fields__
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"line {lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in fields:
            raise InvalidInputError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value, lineno)
    return out


def _coerce(key, value, lineno):
    default = TrainConfig.__dataclass_fields__[key].default
    try:
        if isinstance(default, bool):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(int(v) for v in value.replace(",", " ").split())
        return value
    except ValueError:
        raise InvalidInputError(f"line {lineno}: bad value for {key}: {value!r}") from None


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for name in TrainConfig.__dataclass_fields__:
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            v = " ".join(str(x) for x in v)
        elif hasattr(v, "value"):
            v = v.value
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"


# -- metrics ---------------------------------------------------------------------------


def _metric_cell(v) -> str:
    return str(v) if isinstance(v, int) else fmt(v)


def append_metrics(path, row):
    """Append one row, writing the header first if the file is new; flushes every call."""
    from .trainer import MetricsRow

    cols = MetricsRow.columns()
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if new:
            w.writerow(cols)
        w.writerow([_metric_cell(getattr(row, c)) for c in cols])
        f.flush()
        os.fsync(f.fileno())


class MetricsWriter:
    """Keeps the file open for long runs; one flush per row."""

    def __init__(self, path):
        from .trainer import MetricsRow

        self.cols = MetricsRow.columns()
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        self._f = open(path, "a", encoding="utf-8", newline="")
        self._w = csv.writer(self._f, lineterminator="\n")
        if new:
            self._w.writerow(self.cols)
            self._f.flush()

    def __call__(self, row, *_):
        self._w.writerow([_metric_cell(getattr(row, c)) for c in self.cols])
        self._f.flush()

    def close(self):
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list:
    from .trainer import MetricsRow

    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != MetricsRow.columns():
        raise InvalidInputError(f"{path}: unexpected metrics header")
    out = []
    for lineno, r in enumerate(rows[1:], 2):
        if len(r) != len(rows[0]):
            raise ParseError(path, lineno, "wrong column count")
        try:
            out.append(MetricsRow(int(r[0]), *(float(x) for x in r[1:])))
        except ValueError:
            raise ParseError(path, lineno, "non-numeric cell") from None
    return out


# -- env and action descriptors carried in parameter headers ------------------------


def model_header(env_desc: dict, actions) -> dict:
    """Metadata that lets a parameter file rebuild its environment and action set."""
    out = dict((line.split(" ", 1) + [""])[:2] for line in _env_lines(env_desc))
    if actions is None:
        out["actions"] = "continuous"
        return out
    out["actions"] = actions.kind
    for a in actions:
        if actions.kind == "macro":
            out[f"action.{a.id}"] = " ".join(str(x) for x in a.steps)
        elif actions.kind == "centroid":
            out[f"action.{a.id}"] = _fmt_row(a.vector)
    return out


def actions_from_header(meta: dict, n_primitive: int):
    from .core import primitive_actionset
    from .envs import make_centroid_actionset, make_macro_actionset

    kind = meta.get("actions", "primitive")
    rows = sorted(
        ((int(k.split(".", 1)[1]), v) for k, v in meta.items() if k.startswith("action.")),
        key=lambda kv: kv[0],
    )
    if kind == "continuous":
        return None
    if kind == "primitive":
        return primitive_actionset(n_primitive)
    if kind == "macro":
        return make_macro_actionset(primitive_actionset(n_primitive), [[int(x) for x in v.split()] for _, v in rows])
    if kind == "centroid":
        return make_centroid_actionset([[float(x) for x in v.split()] for _, v in rows])
    raise InvalidInputError(f"unknown action kind {kind!r}")


def env_from_header(meta: dict):
    """Rebuild the environment (with its action set) recorded by ``model_header``."""
    from .envs import make_env

    desc = _env_from_meta(meta)
    if desc is None:
        raise InvalidInputError("file does not describe its environment")
    if meta.get("actions", "primitive") in ("primitive", "continuous"):
        return desc, make_env(desc)
    return desc, make_env(desc, actions_from_header(meta, 4))
