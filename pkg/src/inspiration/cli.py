"""Command-line front end: one subcommand per pipeline stage.

Exit codes: 0 success, 1 invalid arguments or input files, 2 runtime failure.
Every command prints its fully resolved configuration before doing any work.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import approximator as ax
from . import io
from .core import STAGE_DEFAULTS, InvalidInputError, TrainConfig, primitive_actionset
from .envs import env_macros, make_centroid_actionset, make_env, make_macro_actionset, parse_env_config, resolve_env
from .trainer import MetricsRow, evaluate, kmeans_actions, lloyd, record_demos, train_expert, train_inspiration

# columns of export-plotdata output; append only, never reorder
PLOT_COLUMNS = ["run"] + MetricsRow.columns()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config_flags(p: argparse.ArgumentParser):
    """One flag per TrainConfig field, spelled with dashes or underscores."""
    for f in dataclasses.fields(TrainConfig):
        names = [f"--{f.name.replace('_', '-')}"]
        if "_" in f.name:
            names.append(f"--{f.name}")
        if f.name == "reward_mode":
            names.append("--reward")
            p.add_argument(*names, dest=f.name, choices=["basic", "pref", "soft"], default=None)
        elif f.name == "hidden":
            p.add_argument(*names, dest=f.name, type=int, nargs="+", default=None)
        elif f.name == "shared_trunk":
            p.add_argument(*names, dest=f.name, type=_bool, default=None)
        elif isinstance(f.default, (int, float, str)):
            p.add_argument(*names, dest=f.name, type=type(f.default), default=None)
    p.add_argument("--config", help="key = value file of TrainConfig fields")


def _bool(text: str) -> bool:
    low = text.lower()
    if low not in ("true", "false", "1", "0", "yes", "no"):
        raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")
    return low in ("true", "1", "yes")


def _resolve_config(args, stage: str) -> TrainConfig:
    kw = dict(STAGE_DEFAULTS[stage])
    if args.config:
        kw.update(io.parse_config(Path(args.config).read_text(encoding="utf-8")))
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            kw[f.name] = v
    return TrainConfig(**kw)


def _env_desc(arg: str) -> dict:
    path = Path(arg)
    if path.is_file():
        return parse_env_config(path.read_text(encoding="utf-8"))
    return resolve_env(arg)


def _actionset(kind: str, desc: dict, centroids: str | None):
    if kind == "primitive":
        if desc["kind"] != "gridworld":
            raise InvalidInputError("primitive actions exist only for grid worlds")
        return None
    if kind == "macro":
        if desc["kind"] != "gridworld":
            raise InvalidInputError("macro actions exist only for grid worlds")
        return make_macro_actionset(primitive_actionset(4), env_macros(desc))
    if kind == "centroids":
        if not centroids:
            raise UsageError("--actions centroids requires --centroids FILE")
        return make_centroid_actionset(io.load_actions(centroids))
    if kind == "continuous":
        if desc["kind"] != "pointmass":
            raise InvalidInputError("continuous actions exist only for the point mass")
        return None
    raise UsageError(f"unknown action kind {kind!r}")


def _print_resolved(command: str, cfg: TrainConfig | None = None, **extra):
    print(f"# command = {command}")
    for k, v in extra.items():
        print(f"# {k} = {v}")
    if cfg is not None:
        for line in io.format_config(cfg).splitlines():
            print(f"# {line}")
    sys.stdout.flush()


def _metrics_sink(path):
    if not path:
        return None, None
    Path(path).unlink(missing_ok=True)
    w = io.MetricsWriter(path)
    return w, w


# -- subcommands ---------------------------------------------------------------------


def cmd_train_expert(args) -> int:
    cfg = _resolve_config(args, "expert")
    desc = _env_desc(args.env)
    default_kind = "continuous" if desc["kind"] == "pointmass" else "primitive"
    kind = args.actions or default_kind
    actions = _actionset(kind, desc, None)
    env = make_env(desc, actions)
    _print_resolved("train-expert", cfg, env=args.env, actions=kind, out=args.out, metrics=args.metrics)
    writer, sink = _metrics_sink(args.metrics)
    try:
        res = train_expert(env, cfg, on_metrics=sink)
    finally:
        if writer:
            writer.close()
    io.save_params(args.out, res.params, io.model_header(desc, env.actions))
    ret, succ = evaluate(res.params, env, cfg.eval_episodes, seed=cfg.seed + 1_000_003, stack_k=cfg.stack_k)
    print(f"final mean_return={io.fmt(ret)} success_rate={io.fmt(succ)}")
    return 0


def cmd_record(args) -> int:
    p, meta = io.load_params_file(args.params)
    desc, env = io.env_from_header(meta)
    k = p.layout.obs_dim // env.obs_dim
    _print_resolved("record", params=args.params, n=args.n, seed=args.seed, stack_k=k, out=args.out)
    demos, acts = record_demos(p, env, args.n, seed=args.seed, stack_k=k)
    io.save_demos(args.out, demos, env_id=desc["kind"], stack_k=k, env=desc)
    if args.actions_out:
        io.save_actions(args.actions_out, acts)
    print(f"recorded {len(demos)} trajectories, {sum(len(d) for d in demos)} states, {len(acts)} actions")
    return 0


def cmd_cluster(args) -> int:
    x = io.load_actions(args.demos_actions)
    _print_resolved("cluster-actions", input=args.demos_actions, k=args.k, seed=args.seed, out=args.out)
    c = kmeans_actions(x, args.k, seed=args.seed)
    _, _, sse = lloyd(x, args.k, seed=args.seed)
    io.save_actions(args.out, c)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["iteration", "sse"])
            for i, v in enumerate(sse):
                w.writerow([i, io.fmt(v)])
    for row in c:
        print(" ".join(io.fmt(v) for v in row))
    return 0


def cmd_train_agent(args) -> int:
    cfg = _resolve_config(args, "agent")
    demos, info = io.load_demos_file(args.demos)
    if args.env:
        desc = _env_desc(args.env)
    elif info["env"] is not None:
        desc = info["env"]
    else:
        raise UsageError("demonstration file names no environment; pass --env")
    if info["stack_k"] != 1:
        raise InvalidInputError("demonstrations must hold raw (unstacked) observations")
    actions = _actionset(args.actions, desc, args.centroids)
    env = make_env(desc, actions)
    if env.actions is None:
        raise InvalidInputError("the agent needs a discrete action set")
    if demos[0].obs_dim != env.obs_dim:
        raise InvalidInputError(f"demonstrations have obs_dim {demos[0].obs_dim}, environment {env.obs_dim}")
    demos = demos[: cfg.n_demos]
    _print_resolved("train-agent", cfg, demos=args.demos, actions=args.actions, out=args.out, metrics=args.metrics)
    writer, sink = _metrics_sink(args.metrics)
    try:
        res = train_inspiration(env, demos, cfg, on_metrics=sink)
    finally:
        if writer:
            writer.close()
    io.save_params(args.out, res.params, io.model_header(desc, env.actions))
    ret, succ = evaluate(res.params, env, cfg.eval_episodes, seed=cfg.seed + 1_000_003, stack_k=cfg.stack_k)
    print(f"final mean_return={io.fmt(ret)} success_rate={io.fmt(succ)}")
    return 0


def cmd_eval(args) -> int:
    p, meta = io.load_params_file(args.params)
    _, env = io.env_from_header(meta)
    k = p.layout.obs_dim // env.obs_dim
    n_out = env.action_dim if env.actions is None else len(env.actions)
    io.check_compatible(p, env.obs_dim * k, n_out)
    _print_resolved("eval", params=args.params, episodes=args.episodes, seed=args.seed, greedy=not args.stochastic)
    ret, succ = evaluate(p, env, args.episodes, seed=args.seed, stack_k=k, greedy=not args.stochastic)
    if args.metrics:
        Path(args.metrics).unlink(missing_ok=True)
        io.append_metrics(args.metrics, MetricsRow(total_steps=0, episode_return=ret, success_rate=succ))
    print(f"mean_return={io.fmt(ret)} success_rate={io.fmt(succ)}")
    return 0


def cmd_gradcheck(args) -> int:
    _print_resolved("gradcheck", seeds=args.seeds, epsilon=args.epsilon)
    worst = 0.0
    for seed in range(args.seeds):
        for shared in (True, False):
            for policy in ("categorical", "gaussian"):
                worst = max(worst, ax.grad_check(seed, args.epsilon, shared=shared, policy=policy))
    print(f"max_relative_error={worst:.3e}")
    return 0 if worst < 1e-4 else 2


def cmd_export(args) -> int:
    labels = args.labels or [Path(m).stem for m in args.metrics]
    if len(labels) != len(args.metrics):
        raise UsageError("--labels must match --metrics in number")
    _print_resolved("export-plotdata", metrics=" ".join(args.metrics), out=args.out)
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for label, path in zip(labels, args.metrics):
            for row in io.read_metrics(path):
                w.writerow([label] + [io._metric_cell(getattr(row, c)) for c in MetricsRow.columns()])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="inspiration", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-expert", help="A2C on the task reward")
    p.add_argument("--env", required=True, help="preset name or env config file")
    p.add_argument("--actions", choices=["primitive", "macro", "continuous"])
    p.add_argument("--out", required=True)
    p.add_argument("--metrics")
    _config_flags(p)
    p.set_defaults(func=cmd_train_expert)

    p = sub.add_parser("record", help="roll out greedy demonstrations")
    p.add_argument("--params", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--actions-out", help="also write the executed action log")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("cluster-actions", help="k-means over a logged action file")
    p.add_argument("--demos-actions", required=True)
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="write the per-iteration SSE history")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train-agent", help="learn from state-only demonstrations")
    p.add_argument("--demos", required=True)
    p.add_argument("--env", help="override the environment named in the demo file")
    p.add_argument("--actions", choices=["primitive", "macro", "centroids"], default="primitive")
    p.add_argument("--centroids", help="centroid file for --actions centroids")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics")
    _config_flags(p)
    p.set_defaults(func=cmd_train_agent)

    p = sub.add_parser("eval", help="greedy evaluation of saved parameters")
    p.add_argument("--params", required=True)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stochastic", action="store_true", help="sample instead of acting greedily")
    p.add_argument("--metrics")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-plotdata", help="merge metrics files into one long-format CSV")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "n", 1) < 1 or getattr(args, "k", 1) < 1 or getattr(args, "episodes", 1) < 1:
            raise UsageError("counts must be positive")
        return args.func(args)
    except (UsageError, InvalidInputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
