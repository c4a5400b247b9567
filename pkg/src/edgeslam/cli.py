"""Experiment harness: ``edgeslam gen-traces | train | eval | report``.

One JSON config file describes a run.  Blocks: ``traces``, ``tilesense``,
``codec``, ``adapt``, ``gp``, ``scheduler``, ``train``, plus a global
``seed`` and ``output_dir``.  Flags only override the seed and the output
directory.  A relative ``output_dir`` is resolved against ``$EDGESLAM_OUTPUT_ROOT``
(default: the working directory).

Exit codes: 0 ok, 1 runtime failure, 2 validation failure.  Every failure
prints one JSON line on stderr: ``{"error": ..., "message": ...}``.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .codec import QoeWeights
from .schedsim import SchedConfig, SchedEnv, calibrate_base_rate

OUTPUT_ROOT_ENV = "EDGESLAM_OUTPUT_ROOT"
REPORT_HEADER = ("run", "variant", "episode", "metric", "value")
HEURISTIC_FORMAT = "edgeslam-heuristic"

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2

_NUM = (int, float)

# Every block with its keys, defaults and accepted types.  None in the type
# slot means "the default's type, or null".
SCHEMA: dict[str, dict[str, tuple]] = {
    "traces": {
        "kind": ("congestion", str),
        "source": (None, str),
        "horizon": (9000, int),
        "partitions": (1, int),
        "n_train": (None, int),
        "dt": (1.0, _NUM),
        "mean_throughput": (1e6, _NUM),
        "mean_latency": (0.02, _NUM),
        "std_throughput": (0.0, _NUM),
        "std_latency": (0.0, _NUM),
        "low_throughput": (1.5e5, _NUM),
        "high_throughput": (5e6, _NUM),
        "p_stay": (0.97, _NUM),
        "jitter": (0.15, _NUM),
        "congestion_latency": (0.08, _NUM),
        "n_frames": (563, int),
        "fps": (30.0, _NUM),
        "frame_mean_size": (80000.0, _NUM),
        "frame_rel_std": (0.2, _NUM),
    },
    "tilesense": {
        "source": ("synthetic", str),
        "frames_dir": (None, str),
        "n_frames": (563, int),
        "height": (72, int),
        "width": (120, int),
        "n_objects": (40, int),
        "contrast": ([15.0, 80.0], list),
        "motion": (0.3, _NUM),
        "noise": (2.0, _NUM),
        "drift_every": (None, int),
    },
    "codec": {
        "alpha": (1.0, _NUM),
        "beta": (1.0, _NUM),
    },
    "adapt": {
        "episodes": (300, int),
        "workers": (1, int),
        "hidden": ([128], list),
        "lr_policy": (1e-3, _NUM),
        "lr_critic": (1e-3, _NUM),
        "gamma": (0.99, _NUM),
        "entropy_coef": (0.01, _NUM),
        "k": (8, int),
        "full_map": (False, bool),
        "reward_center": (True, bool),
        "traces_dir": (None, str),
        "evaluate": (False, bool),
    },
    "gp": {
        "mode": ("laplace", str),
        "window": (2000, int),
        "lengthscale": (None, _NUM),
        "signal_var": (1.0, _NUM),
        "noise_var": (0.1, _NUM),
        "threshold": (0.5, _NUM),
        "T0": (500, int),
        "T1": (200, int),
    },
    "scheduler": {
        **{
            k: (list(v.default) if isinstance(v.default, tuple) else v.default, None)
            for k, v in SchedConfig.__dataclass_fields__.items()
            if k not in ("frame_trace", "seed")
        },
        "service_ratio": (None, _NUM),
    },
    "train": {
        "variant": ("constrained", str),
        "episodes": (300, int),
        "workers": (1, int),
        "hidden": ([200, 128], list),
        "gamma": (0.99, _NUM),
        "lr": (1e-3, _NUM),
        "entropy_coef": (0.0, _NUM),
        "reward_center": (True, bool),
        "baseline_rollouts": (4, int),
        "audit": (False, bool),
        "eval_episodes": (100, int),
    },
}


class CliError(Exception):
    code = EXIT_RUNTIME
    kind = "runtime"


class ValidationError(CliError):
    code = EXIT_VALIDATION
    kind = "validation"


# ---------------------------------------------------------------------------
# Config loading and validation
# ---------------------------------------------------------------------------


def _type_ok(value, default, typ) -> bool:
    if value is None:
        return default is None
    if typ is None:
        typ = type(default) if default is not None else object
        if isinstance(default, list):
            typ = list
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            typ = _NUM
    if typ is bool:
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    if typ is int:
        return isinstance(value, int) or (isinstance(value, float) and value.is_integer())
    return isinstance(value, typ)


def validate_block(name: str, block) -> dict:
    """Defaults merged with ``block``; rejects unknown keys and wrong types."""
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ValidationError(f"config block {name!r} must be an object")
    schema = SCHEMA[name]
    unknown = sorted(set(block) - set(schema))
    if unknown:
        raise ValidationError(f"config block {name!r}: unknown keys {unknown}")
    out = {}
    for key, (default, typ) in schema.items():
        value = block.get(key, copy.deepcopy(default))
        if not _type_ok(value, default, typ):
            raise ValidationError(f"config block {name!r}: key {key!r} has invalid value {value!r}")
        if typ is int and isinstance(value, float):
            value = int(value)
        out[key] = value
    return out


def load_config(path=None, seed: int | None = None, output_dir: str | None = None) -> dict:
    """Read, merge with defaults, resolve paths and build every module object once."""
    raw: dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise ValidationError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValidationError(f"config file {path}: invalid JSON: {e}") from None
        if not isinstance(raw, dict):
            raise ValidationError(f"config file {path}: top level must be an object")
    unknown = sorted(set(raw) - set(SCHEMA) - {"seed", "output_dir"})
    if unknown:
        raise ValidationError(f"unknown top-level config keys {unknown}")
    cfg = {name: validate_block(name, raw.get(name)) for name in SCHEMA}
    cfg["seed"] = raw.get("seed", 0) if seed is None else seed
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ValidationError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    out = output_dir if output_dir is not None else raw.get("output_dir", "run")
    if not isinstance(out, str) or not out:
        raise ValidationError("output_dir must be a non-empty string")
    root = os.environ.get(OUTPUT_ROOT_ENV, "")
    cfg["output_dir"] = os.path.abspath(os.path.join(root, out) if root and not os.path.isabs(out) else out)
    # building the module objects validates their own invariants up front
    build_weights(cfg)
    build_train_config(cfg)
    tr = cfg["traces"]
    if tr["kind"] not in ("congestion", "fixed", "gaussian"):
        raise ValidationError(f"traces.kind must be congestion, fixed or gaussian, got {tr['kind']!r}")
    if tr["horizon"] < 1 or tr["partitions"] < 1 or tr["n_frames"] < 1:
        raise ValidationError("traces.horizon, traces.partitions and traces.n_frames must be >= 1")
    if tr["n_train"] is not None and not 0 < tr["n_train"] <= tr["partitions"]:
        raise ValidationError("traces.n_train must lie in [1, partitions]")
    ts = cfg["tilesense"]
    if ts["source"] not in ("synthetic", "pgm"):
        raise ValidationError(f"tilesense.source must be synthetic or pgm, got {ts['source']!r}")
    if ts["source"] == "pgm" and not ts["frames_dir"]:
        raise ValidationError("tilesense.frames_dir is required when source is pgm")
    if len(ts["contrast"]) != 2:
        raise ValidationError("tilesense.contrast must be [low, high]")
    ad = cfg["adapt"]
    if ad["episodes"] < 1 or ad["workers"] < 1 or ad["k"] < 1:
        raise ValidationError("adapt.episodes, adapt.workers and adapt.k must be >= 1")
    if cfg["train"]["eval_episodes"] < 1:
        raise ValidationError("train.eval_episodes must be >= 1")
    return cfg


def build_weights(cfg: dict) -> QoeWeights:
    try:
        return QoeWeights(cfg["codec"]["alpha"], cfg["codec"]["beta"])
    except ValueError as e:
        raise ValidationError(f"codec: {e}") from None


def build_sched_config(cfg: dict) -> SchedConfig:
    block = dict(cfg["scheduler"])
    ratio = block.pop("service_ratio")
    try:
        env = SchedConfig(**block, seed=cfg["seed"])
    except (ValueError, TypeError) as e:
        raise ValidationError(f"scheduler: {e}") from None
    if ratio is not None:
        if ratio <= 0:
            raise ValidationError("scheduler.service_ratio must be > 0")
        env.base_rate = calibrate_base_rate(env, ratio)
    return env


def build_train_config(cfg: dict):
    from .schedtrain import TrainConfig

    tb, gp = cfg["train"], cfg["gp"]
    try:
        return TrainConfig(
            variant=tb["variant"],
            T0=gp["T0"],
            T1=gp["T1"],
            gp_mode=gp["mode"],
            gp_window=gp["window"],
            gp_lengthscale=gp["lengthscale"],
            gp_signal_var=gp["signal_var"],
            gp_noise_var=gp["noise_var"],
            gp_threshold=gp["threshold"],
            hidden=tuple(tb["hidden"]),
            episodes=tb["episodes"],
            workers=tb["workers"],
            seed=cfg["seed"],
            gamma=tb["gamma"],
            lr=tb["lr"],
            entropy_coef=tb["entropy_coef"],
            reward_center=tb["reward_center"],
            baseline_rollouts=tb["baseline_rollouts"],
            audit=tb["audit"],
            env=build_sched_config(cfg),
        )
    except (ValueError, TypeError) as e:
        raise ValidationError(f"train: {e}") from None


def _ensure_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise CliError(f"cannot create output directory {path}: {e.strerror}") from None
    if not os.access(path, os.W_OK):
        raise CliError(f"output directory not writable: {path}")
    return path


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _audit_record(rec: dict) -> dict:
    """Per-episode GP audit as JSON: arrays become lists, NaN probabilities become null."""
    out = {}
    for k, v in rec.items():
        v = np.asarray(v)
        if v.dtype.kind == "f":
            out[k] = [None if x != x else float(x) for x in v]
        else:
            out[k] = v.tolist()
    return out


def _public_config(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k != "output_dir"}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_traces(cfg: dict) -> dict:
    """Network-trace CSVs (partitioned), a frame-trace CSV and a manifest under ``<out>/traces``."""
    from . import traces as T

    tr = cfg["traces"]
    out = _ensure_dir(os.path.join(cfg["output_dir"], "traces"))
    seed = cfg["seed"]
    try:
        if tr["source"]:
            if not os.path.exists(tr["source"]):
                raise ValidationError(f"trace source not found: {tr['source']}")
            full = T.load_network_trace(tr["source"])
        elif tr["kind"] == "congestion":
            full = T.gen_congestion_trace(
                tr["horizon"],
                low_throughput=tr["low_throughput"],
                high_throughput=tr["high_throughput"],
                p_stay=tr["p_stay"],
                jitter=tr["jitter"],
                mean_latency=tr["congestion_latency"],
                seed=seed,
                dt=tr["dt"],
                id="network",
            )
        else:
            model = T.LinkModel(
                tr["kind"], tr["mean_throughput"], tr["mean_latency"], tr["std_throughput"], tr["std_latency"], seed
            )
            full = T.gen_link_trace(model, tr["horizon"], tr["dt"], id="network")
        parts = T.partition_trace(full, tr["partitions"]) if tr["partitions"] > 1 else [full]
        frames = T.gen_frame_trace(tr["n_frames"], tr["fps"], tr["frame_mean_size"], tr["frame_rel_std"], seed, id="frames")
    except (T.TraceFormatError, T.TraceValidationError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise
        raise ValidationError(f"traces: {e}") from None
    files = []
    for i, p in enumerate(parts):
        name = "network.csv" if len(parts) == 1 else f"network-part{i:02d}.csv"
        T.save_network_trace(p, os.path.join(out, name))
        files.append(name)
    T.save_frame_trace(frames, os.path.join(out, "frames.csv"))
    n_train = tr["n_train"] if tr["n_train"] is not None else len(files)
    manifest = {
        "stage": "traces",
        "code_version": __version__,
        "config": _public_config(cfg),
        "network_files": files,
        "train_files": files[:n_train],
        "test_files": files[n_train:],
        "frame_file": "frames.csv",
        "fps": tr["fps"],
        "samples": len(full),
    }
    _write_json(manifest, os.path.join(out, "manifest.json"))
    return {"dir": out, "files": files + ["frames.csv"]}


def _load_trace_set(cfg: dict):
    from . import traces as T

    d = cfg["adapt"]["traces_dir"] or os.path.join(cfg["output_dir"], "traces")
    mpath = os.path.join(d, "manifest.json")
    if not os.path.exists(mpath):
        raise ValidationError(f"trace manifest not found: {mpath}")
    with open(mpath) as fh:
        m = json.load(fh)
    for name in m["network_files"] + [m["frame_file"]]:
        if not os.path.exists(os.path.join(d, name)):
            raise ValidationError(f"trace file not found: {os.path.join(d, name)}")
    try:
        train = [T.load_network_trace(os.path.join(d, n)) for n in m["train_files"]]
        test = [T.load_network_trace(os.path.join(d, n)) for n in m["test_files"]]
        frames = T.load_frame_trace(os.path.join(d, m["frame_file"]), m["fps"])
    except (T.TraceFormatError, T.TraceValidationError) as e:
        raise ValidationError(str(e)) from None
    return train, test, frames


def _importance_stream(cfg: dict, n_frames: int):
    from .adapt import ImportanceStream
    from .tilesense import load_frames_dir

    ts = cfg["tilesense"]
    if ts["source"] == "pgm":
        if not os.path.isdir(ts["frames_dir"]):
            raise ValidationError(f"frames directory not found: {ts['frames_dir']}")
        frames = list(load_frames_dir(ts["frames_dir"]))
        if not frames:
            raise ValidationError(f"no PGM frames in {ts['frames_dir']}")
        return ImportanceStream(frames, predictor_seed=cfg["seed"])
    return ImportanceStream.synthetic(
        min(ts["n_frames"], n_frames),
        seed=cfg["seed"],
        height=ts["height"],
        width=ts["width"],
        n_objects=ts["n_objects"],
        contrast=tuple(ts["contrast"]),
        motion=ts["motion"],
        noise=ts["noise"],
        drift_every=ts["drift_every"],
    )


def cmd_train_adapt(cfg: dict) -> dict:
    from .adapt import agent_policy, random_policy, static_baselines, train_adapt, evaluate_policy, write_curve_csv
    from .neural import save_checkpoint

    train, test, frames = _load_trace_set(cfg)
    if not train:
        raise ValidationError("no training traces listed in the trace manifest")
    ad = cfg["adapt"]
    weights = build_weights(cfg)
    stream = _importance_stream(cfg, len(frames))
    out = _ensure_dir(cfg["output_dir"])
    t0 = time.perf_counter()
    ac, curve = train_adapt(
        frames,
        train,
        stream,
        episodes=ad["episodes"],
        workers=ad["workers"],
        hidden=tuple(ad["hidden"]),
        lr_policy=ad["lr_policy"],
        lr_critic=ad["lr_critic"],
        gamma=ad["gamma"],
        entropy_coef=ad["entropy_coef"],
        weights=weights,
        k=ad["k"],
        full_map=ad["full_map"],
        reward_center=ad["reward_center"],
        seed=cfg["seed"],
    )
    wall = time.perf_counter() - t0
    write_curve_csv(curve, os.path.join(out, "metrics.csv"))
    save_checkpoint(ac, os.path.join(out, "checkpoint.json"), extra={"stage": "adapt"})
    manifest = {
        "stage": "adapt",
        "code_version": __version__,
        "config": _public_config(cfg),
        "seed": cfg["seed"],
        "wall_clock_s": wall,
        "train_traces": [t.id for t in train],
    }
    if ad["evaluate"] and test:
        agent, _ = evaluate_policy(agent_policy(ac), frames, test, stream, weights, ad["k"], ad["full_map"])
        rand, _ = evaluate_policy(random_policy, frames, test, stream, weights, ad["k"], ad["full_map"], seed=cfg["seed"])
        statics = {} if ad["full_map"] else static_baselines(frames, test, stream, weights, ad["k"])
        best = max(statics.items(), key=lambda kv: kv[1]) if statics else None
        manifest["heldout_qoe"] = {
            "agent": agent,
            "random": rand,
            "best_static": None if best is None else {"res": best[0].res, "qp": best[0].qp, "qoe": best[1]},
        }
    _write_json(manifest, os.path.join(out, "manifest.json"))
    return {"dir": out, "episodes": len(curve)}


def cmd_train_sched(cfg: dict) -> dict:
    from .neural import save_checkpoint
    from .schedtrain import train_scheduler, write_manifest, write_metrics_csv

    tc = build_train_config(cfg)
    out = _ensure_dir(cfg["output_dir"])
    res = train_scheduler(tc)
    write_metrics_csv(res.metrics, os.path.join(out, "metrics.csv"))
    ckpt = os.path.join(out, "checkpoint.json")
    if res.ac is not None:
        save_checkpoint(res.ac, ckpt, extra={"stage": "sched", "variant": tc.variant})
    else:
        _write_json({"format": HEURISTIC_FORMAT, "variant": tc.variant}, ckpt)
    if res.gp is not None:
        res.gp.dump(os.path.join(out, "gp.json"))
    if res.audit:
        _write_json([_audit_record(a) for a in res.audit], os.path.join(out, "audit.json"))
    write_manifest(res, os.path.join(out, "manifest.json"), extra={"stage": "sched", "run_config": _public_config(cfg)})
    return {"dir": out, "episodes": len(res.metrics)}


def _eval_policy_from(cfg: dict, checkpoint: str | None, variant: str | None, env_dims: tuple[int, int]):
    from .neural import load_checkpoint
    from .schedtrain import make_shortest_queue_policy, round_robin_policy

    heuristics = {"round_robin": lambda: round_robin_policy, "shortest_queue": lambda: make_shortest_queue_policy(cfg["seed"])}
    if variant in heuristics:
        return variant, heuristics[variant]()
    if checkpoint is None:
        raise ValidationError("eval needs --checkpoint unless --variant names a heuristic")
    if not os.path.exists(checkpoint):
        raise ValidationError(f"checkpoint not found: {checkpoint}")
    try:
        with open(checkpoint) as fh:
            head = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ValidationError(f"corrupt checkpoint {checkpoint}: {e}") from None
    if isinstance(head, dict) and head.get("format") == HEURISTIC_FORMAT:
        if head.get("variant") not in heuristics:
            raise ValidationError(f"corrupt checkpoint {checkpoint}: unknown heuristic {head.get('variant')!r}")
        return head["variant"], heuristics[head["variant"]]()
    try:
        ac, extra = load_checkpoint(checkpoint)
    except ValueError as e:
        raise ValidationError(str(e)) from None
    state_dim, n_actions = env_dims
    if ac.policy_in != state_dim or ac.n_actions != n_actions:
        raise ValidationError(
            f"checkpoint arity mismatch: policy expects state dim {ac.policy_in} and {ac.n_actions} actions, "
            f"env has state dim {state_dim} and {n_actions} actions"
        )
    return variant or extra.get("variant", "policy"), ac


EVAL_METRICS = ("mean_cost", "indicator_mean", "deadline_misses", "gp_accuracy", "queue_std")


def cmd_eval(cfg: dict, checkpoint: str | None, variant: str | None) -> dict:
    """Frozen-policy test episodes plus one summary row (means, and stds in the ``*_std`` columns)."""
    from .schedtrain import METRICS_HEADER, _fmt, default_env_factory, evaluate

    env_cfg = build_sched_config(cfg)
    probe = SchedEnv(env_cfg, seed=0)
    name, policy = _eval_policy_from(cfg, checkpoint, variant, (probe.state_dim, probe.n_actions))
    out = _ensure_dir(cfg["output_dir"])
    n = cfg["train"]["eval_episodes"]
    rows = evaluate(policy, default_env_factory(env_cfg), episodes=n, seed=cfg["seed"], variant=name)
    header = METRICS_HEADER + tuple(f"{m}_std" for m in EVAL_METRICS)
    path = os.path.join(out, "eval_metrics.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRICS_HEADER] + [""] * len(EVAL_METRICS))
        means = [_fmt(float(np.mean([r[m] for r in rows]))) for m in EVAL_METRICS]
        stds = [_fmt(float(np.std([r[m] for r in rows]))) for m in EVAL_METRICS]
        w.writerow(["summary", name, *means, *stds])
    return {"path": path, "episodes": len(rows)}


def _run_env_signature(manifest: dict):
    if manifest.get("stage") == "sched":
        env = dict(manifest["config"]["env"])
        env.pop("seed", None)
        return ("sched", json.dumps(env, sort_keys=True))
    if manifest.get("stage") == "adapt":
        c = manifest["config"]
        return ("adapt", json.dumps({k: c[k] for k in ("codec", "tilesense")}, sort_keys=True))
    raise ValidationError(f"unknown run stage {manifest.get('stage')!r}")


def cmd_report(run_dirs, out_path: str, force: bool = False) -> dict:
    """Merge run metrics into one long-format CSV ``run,variant,episode,metric,value``."""
    from .adapt import CURVE_HEADER
    from .schedtrain import METRICS_HEADER

    if not run_dirs:
        raise ValidationError("report needs at least one run directory")
    runs, sigs = [], {}
    for d in run_dirs:
        mpath, cpath = os.path.join(d, "manifest.json"), os.path.join(d, "metrics.csv")
        for p in (mpath, cpath):
            if not os.path.exists(p):
                raise ValidationError(f"run file not found: {p}")
        with open(mpath) as fh:
            manifest = json.load(fh)
        sig = _run_env_signature(manifest)
        sigs.setdefault(sig, []).append(d)
        runs.append((d, manifest, cpath))
    if len({s[0] for s in sigs}) > 1:
        raise ValidationError("cannot mix adapt and sched runs in one report")
    if len(sigs) > 1 and not force:
        groups = "; ".join(",".join(v) for v in sigs.values())
        raise ValidationError(f"incompatible env configs across runs ({groups}); pass --force to merge anyway")
    names = [os.path.basename(os.path.normpath(d)) for d, *_ in runs]
    if len(set(names)) != len(names):
        names = [os.path.normpath(d) for d, *_ in runs]
    rows = []
    for name, (d, manifest, cpath) in zip(names, runs):
        expected = METRICS_HEADER if manifest["stage"] == "sched" else CURVE_HEADER
        with open(cpath, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != expected:
                raise ValidationError(f"{cpath}: schema drift, header {reader.fieldnames} != {list(expected)}")
            for r in reader:
                variant = r.get("variant", manifest["stage"])
                for metric in expected:
                    if metric in ("episode", "variant"):
                        continue
                    rows.append((name, variant, r["episode"], metric, r[metric]))
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        w.writerows(rows)
    return {"path": out_path, "rows": len(rows), "runs": len(runs)}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgeslam", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"edgeslam {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON run config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--output-dir", default=None, help="override the config output_dir")

    common(sub.add_parser("gen-traces", help="write network and frame traces"))
    sp = sub.add_parser("train", help="train the adaptation agent or a scheduler variant")
    common(sp)
    sp.add_argument("--stage", choices=("adapt", "sched"), required=True)
    sp = sub.add_parser("eval", help="frozen-policy scheduler test episodes")
    common(sp)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--variant", default=None, help="round_robin or shortest_queue evaluates a heuristic")
    sp = sub.add_parser("report", help="merge run metrics into a long-format CSV")
    sp.add_argument("runs", nargs="+", help="run directories")
    sp.add_argument("--output-dir", default=None, help="where report.csv goes (default: $%s or cwd)" % OUTPUT_ROOT_ENV)
    sp.add_argument("--force", action="store_true", help="merge runs with different env configs")
    return p


def _fail(err: CliError) -> int:
    print(json.dumps({"error": err.kind, "message": " ".join(str(err).split())}), file=sys.stderr)
    return err.code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse already printed usage; map its status 2 onto ours
        return EXIT_OK if e.code in (0, None) else EXIT_VALIDATION
    try:
        if args.command == "report":
            root = args.output_dir or os.environ.get(OUTPUT_ROOT_ENV) or os.getcwd()
            out = _ensure_dir(os.path.abspath(root))
            result = cmd_report(args.runs, os.path.join(out, "report.csv"), force=args.force)
        else:
            cfg = load_config(args.config, args.seed, args.output_dir)
            if args.command == "gen-traces":
                result = cmd_gen_traces(cfg)
            elif args.command == "train":
                result = cmd_train_adapt(cfg) if args.stage == "adapt" else cmd_train_sched(cfg)
            else:
                result = cmd_eval(cfg, args.checkpoint, args.variant)
    except CliError as e:
        return _fail(e)
    except (OSError, ArithmeticError, RuntimeError, ValueError, KeyError) as e:
        return _fail(CliError(f"{type(e).__name__}: {e}"))
    print(json.dumps({"status": "ok", "command": args.command, **result}, default=str))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
