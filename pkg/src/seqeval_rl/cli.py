"""Command-line front end: ``make-datasets``, ``run`` and ``report``.

A single YAML file configures all three commands (see ``configs/`` for a
complete example). Flags override the matching config fields, and the fully
resolved config is echoed into every output file.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
import traceback
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from .algorithms import ALGORITHMS, Hyperparams
from .curves import CurveWriter, atomic_write_text, read_curve
from .dataset import TIERS, load_dataset, save_dataset
from .engine import RunConfig, increment_and_k, run_minibatch, run_seqeval
from .errors import ConfigError, InputError, UndefinedMetric
from .mdp import load_mdp, mdp_from_config, save_mdp
from .metrics import (AggregateReport, average_curves, build_model_card, finetune_uplift, fmt, perf_at,
                      write_model_card)
from .tiers import build_tiers

log = logging.getLogger("seqeval_rl")

MODES = ("seqeval", "minibatch")

DEFAULTS = {
    "env": {"kind": "chain", "length": 10, "step_reward": -1.0, "goal_reward": 0.0, "slip": 0.1},
    "datasets": {
        "dir": "datasets",
        "size": 30000,
        "seed": 0,
        "tiers": list(TIERS),
        "discount": 0.99,
        "data_epsilon": 0.1,
        "ref_episodes": 1000,
        "online": {},
    },
    "run": {
        "out_dir": "runs",
        "algorithms": ["cql", "bc"],
        "datasets": ["medium"],
        "seeds": [0],
        "rr": [1.0],
        "mode": "seqeval",
        "finetune_steps": 0,
        "t0": None,
        "eval_every": None,
        "eval_episodes": 10,
        "metric": "return",
        "fqe_iterations": 1000,
        "shuffle": True,
        "hyper": {},
        "workers": 1,
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key == "env":
            out[key] = copy.deepcopy(value)   # environments are replaced whole, never mixed
        elif isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    with open(path) as fh:
        user = yaml.safe_load(fh) or {}
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}")
    return _merge(DEFAULTS, user)


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def apply_overrides(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    run = cfg["run"]
    if getattr(args, "seeds", None) is not None:
        run["seeds"] = args.seeds
    if getattr(args, "rr", None) is not None:
        run["rr"] = args.rr
    if getattr(args, "mode", None) is not None:
        run["mode"] = args.mode
    if getattr(args, "finetune_steps", None) is not None:
        run["finetune_steps"] = args.finetune_steps
    if getattr(args, "workers", None) is not None:
        run["workers"] = args.workers
    return cfg


def validate_config(cfg: dict) -> None:
    ds, run = cfg["datasets"], cfg["run"]
    bad_tiers = [t for t in ds["tiers"] if t not in TIERS]
    if bad_tiers:
        raise ConfigError(f"unknown tier(s) {bad_tiers}; expected a subset of {list(TIERS)}")
    bad_algs = [a for a in run["algorithms"] if a not in ALGORITHMS]
    if bad_algs:
        raise ConfigError(f"unknown algorithm(s) {bad_algs}; expected a subset of {list(ALGORITHMS)}")
    if run["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if run["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    if not run["seeds"] or not run["rr"]:
        raise ConfigError("at least one seed and one replay ratio are required")
    for rr in run["rr"]:
        increment_and_k(rr)
    Hyperparams(**run["hyper"])


# ---------------------------------------------------------------- make-datasets

def cmd_make_datasets(cfg: dict, out_dir=None) -> list:
    validate_config(cfg)
    ds = cfg["datasets"]
    target = Path(out_dir or ds["dir"])
    target.mkdir(parents=True, exist_ok=True)
    mdp = mdp_from_config(cfg["env"])
    datasets, info = build_tiers(mdp, ds["size"], seed=ds["seed"], tiers=tuple(ds["tiers"]),
                                 discount=ds["discount"], data_epsilon=ds["data_epsilon"],
                                 ref_episodes=ds["ref_episodes"], online_kwargs=ds["online"] or None)
    save_mdp(mdp, target / "env.yaml")
    written = []
    for tier, d in datasets.items():
        path = target / f"{tier}.txt"
        save_dataset(d, path)
        written.append(path)
        log.info("wrote %s (%d transitions)", path, len(d))
    summary = {k: v for k, v in info.items() if k not in ("medium_checkpoint", "online_history")}
    summary["config"] = cfg
    summary["dataset_policy_scores"] = {t: d.meta.dataset_policy_score for t, d in datasets.items()}
    atomic_write_text(target / "info.json", json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n")
    if "medium_checkpoint" in info:
        info["medium_checkpoint"].save(target / "medium_checkpoint.json")
    return written


# ---------------------------------------------------------------- run

def _rr_tag(rr: float) -> str:
    return f"{rr:g}"


def curve_name(alg: str, dataset: str, mode: str, rr: float, seed: int) -> str:
    return f"{alg}__{dataset}__{mode}__rr{_rr_tag(rr)}__seed{seed}.csv"


@lru_cache(maxsize=None)
def _load_env(path: str):
    return load_mdp(path)


@lru_cache(maxsize=None)
def _load_data(path: str):
    return load_dataset(path)


def run_cell(cell: dict) -> dict:
    """Run one (algorithm, dataset, rr, seed) cell and stream its curve to disk."""
    mdp = _load_env(cell["env_path"])
    data = _load_data(cell["dataset_path"])
    r = cell["run"]
    gamma, k = increment_and_k(cell["rr"])
    cfg = RunConfig(mdp=mdp, dataset=data, algorithm=cell["algorithm"], hyper=Hyperparams(**r["hyper"]),
                    t0=r["t0"], gamma_increment=gamma, k_steps=k, eval_every=r["eval_every"],
                    eval_episodes=r["eval_episodes"], online_steps=r["finetune_steps"], seed=cell["seed"],
                    shuffle=r["shuffle"], metric=r["metric"], fqe_iterations=r["fqe_iterations"],
                    run_id=Path(cell["out_path"]).stem)
    header = cfg.describe()
    header.update(dataset=cell["dataset"], mode=cell["mode"], env_config=cell["env_config"])
    writer = CurveWriter(cell["out_path"], header, cfg.seed, len(data), data.segments)
    try:
        if cell["mode"] == "minibatch":
            n = len(data)
            total = math.ceil((n - cfg.t0) / gamma) * (1 + k)
            curve = run_minibatch(cfg, total, on_point=writer.write)
        else:
            curve = run_seqeval(cfg, on_point=writer.write)
    except BaseException:
        writer.abort()
        raise
    writer.close()
    return {"cell": cell["name"], "path": cell["out_path"], "stats": curve.stats}


def _cell_safe(cell: dict) -> dict:
    try:
        return {"ok": True, **run_cell(cell)}
    except Exception as exc:  # reported in the manifest; the matrix keeps going
        return {"ok": False, "cell": cell["name"], "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc()}


def build_cells(cfg: dict, out_dir: Path) -> list:
    run = cfg["run"]
    data_dir = Path(cfg["datasets"]["dir"])
    env_path = data_dir / "env.yaml"
    if not env_path.exists():
        raise ConfigError(f"{env_path} not found; run make-datasets first")
    cells = []
    for dataset in run["datasets"]:
        path = data_dir / f"{dataset}.txt"
        if not path.exists():
            raise ConfigError(f"dataset file {path} not found; run make-datasets first")
        for alg in run["algorithms"]:
            for rr in run["rr"]:
                for seed in run["seeds"]:
                    name = curve_name(alg, dataset, run["mode"], rr, seed)
                    cells.append({
                        "name": name, "algorithm": alg, "dataset": dataset, "rr": float(rr), "seed": int(seed),
                        "mode": run["mode"], "env_path": str(env_path), "dataset_path": str(path),
                        "out_path": str(out_dir / "curves" / name), "run": run, "env_config": cfg["env"],
                    })
    return cells


def cmd_run(cfg: dict, out_dir=None) -> int:
    validate_config(cfg)
    run = cfg["run"]
    out = Path(out_dir or run["out_dir"])
    (out / "curves").mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.resolved.yaml", yaml.safe_dump(cfg, sort_keys=True))
    cells = build_cells(cfg, out)
    log.info("running %d cells with %d worker(s)", len(cells), run["workers"])
    if run["workers"] > 1:
        with ProcessPoolExecutor(max_workers=run["workers"]) as pool:
            results = list(pool.map(_cell_safe, cells))
    else:
        results = [_cell_safe(c) for c in cells]
    completed = [r for r in results if r["ok"]]
    failed = [r for r in results if not r["ok"]]
    for r in failed:
        log.error("cell %s failed: %s", r["cell"], r["error"])
    manifest = {
        "config": cfg,
        "completed": sorted(r["cell"] for r in completed),
        "failed": sorted(({"cell": r["cell"], "error": r["error"]} for r in failed), key=lambda r: r["cell"]),
        "stats": {r["cell"]: r["stats"] for r in sorted(completed, key=lambda r: r["cell"])},
    }
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    write_aggregates(out)
    return 1 if failed else 0


# ---------------------------------------------------------------- aggregation and report

def load_run_dir(run_dir) -> dict:
    """Group curves as ``{(mode, rr, algorithm, dataset): [curves sorted by seed]}``."""
    groups = defaultdict(list)
    for path in sorted(Path(run_dir, "curves").glob("*.csv")):
        curve, config = read_curve(path)
        key = (config["mode"], float(config["replay_ratio"]), config["algorithm"], config["dataset"])
        groups[key].append(curve)
    return {k: sorted(v, key=lambda c: c.seed) for k, v in sorted(groups.items())}


def _group_stem(mode: str, rr: float, alg: str, dataset=None) -> str:
    parts = [alg] + ([dataset] if dataset else []) + [mode, f"rr{_rr_tag(rr)}"]
    return "__".join(parts)


def write_aggregates(run_dir) -> list:
    """Seed-averaged plot-ready curves plus one model card per (mode, rr, algorithm)."""
    run_dir = Path(run_dir)
    groups = load_run_dir(run_dir)
    (run_dir / "aggregate").mkdir(exist_ok=True)
    (run_dir / "cards").mkdir(exist_ok=True)
    written = []
    by_alg = defaultdict(dict)
    for (mode, rr, alg, dataset), curves in groups.items():
        by_alg[(mode, rr, alg)][dataset] = curves
        try:
            mean = average_curves(curves)
        except Exception as exc:
            log.warning("cannot average %s/%s: %s", alg, dataset, exc)
            continue
        norm = np.array([[p.norm_score for p in c.points] for c in curves])
        std = norm.std(axis=0, ddof=1) if len(curves) > 1 else np.zeros(norm.shape[1])
        lines = ["data_count,grad_steps,phase,raw_score,norm_score,norm_std,n_seeds"]
        for p, s in zip(mean.points, std):
            lines.append(f"{p.data_count},{p.grad_steps},{p.phase},{p.raw_score!r},{p.norm_score!r},"
                         f"{float(s)!r},{len(curves)}")
        path = run_dir / "aggregate" / f"{_group_stem(mode, rr, alg, dataset)}.csv"
        atomic_write_text(path, "\n".join(lines) + "\n")
        written.append(path)
    for (mode, rr, alg), per_dataset in sorted(by_alg.items()):
        try:
            card = build_model_card(alg, per_dataset)
        except Exception as exc:
            log.warning("no model card for %s: %s", alg, exc)
            continue
        written.extend(write_model_card(card, run_dir / "cards" / _group_stem(mode, rr, alg)))
    return written


def _final_offline(curve) -> float:
    pts = curve.offline_points
    return pts[-1].norm_score if pts else math.nan


def _mean_std(values) -> str:
    x = np.array([v for v in values if not math.isnan(v)])
    if x.size == 0:
        return "n/a"
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    return f"{x.mean():.2f} ± {sd:.2f}"


def _table(title: str, head: list, rows: list) -> list:
    lines = [f"## {title}", "", "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return lines + [""]


def build_report(run_dir) -> str:
    run_dir = Path(run_dir)
    groups = load_run_dir(run_dir)
    manifest_path = run_dir / "manifest.json"
    expected = set()
    if manifest_path.exists():
        cfg = json.loads(manifest_path.read_text())["config"]
        r = cfg["run"]
        expected = {(r["mode"], float(rr), a, d) for rr in r["rr"] for a in r["algorithms"] for d in r["datasets"]}
    keys = sorted(set(groups) | expected, key=lambda k: (k[3], k[2], k[0], k[1]))
    head = ["dataset", "algorithm", "mode", "RR"]
    lines = [f"# Report for {run_dir}", ""]

    def ident(k):
        return [k[3], k[2], k[0], _rr_tag(k[1])]

    rows = [ident(k) + ([_mean_std(_final_offline(c) for c in groups[k]), str(len(groups[k]))]
                       if k in groups else ["n/a", "0"]) for k in keys]
    lines += _table("Final normalized score (mean ± std over seeds)", head + ["final", "seeds"], rows)

    tuned = [k for k in keys if k in groups and any(c.online_points for c in groups[k])]
    if tuned:
        rows = []
        for k in tuned:
            curves = groups[k]
            online = [c.online_points[-1].norm_score if c.online_points else math.nan for c in curves]
            try:
                uplift = fmt(finetune_uplift(curves))
            except (UndefinedMetric, InputError):
                uplift = "n/a"
            rows.append(ident(k) + [_mean_std(_final_offline(c) for c in curves), _mean_std(online), uplift])
        lines += _table("Fine-tuning", head + ["offline final", "online final", "uplift"], rows)
    else:
        lines += ["## Fine-tuning", "", "_No online phase in this run directory; fine-tuning table omitted._", ""]

    mixed = [k for k in keys if k in groups and len(groups[k][0].segments) > 1]
    if mixed:
        labels = max((tuple(s.label for s in groups[k][0].segments) for k in mixed), key=len)
        rows = []
        for k in mixed:
            curves = groups[k]
            cells = []
            for seg in curves[0].segments:
                try:
                    cells.append(fmt(perf_at(curves, seg.end / curves[0].dataset_size)))
                except UndefinedMetric:
                    cells.append("n/a")
            cells += ["n/a"] * (len(labels) - len(cells))
            rows.append(ident(k) + cells)
        lines += _table("Mixed datasets: score at the end of each segment",
                        head + [f"end of {lab}" for lab in labels], rows)
    else:
        lines += ["## Mixed datasets", "", "_No multi-segment dataset in this run directory._", ""]

    by_alg = defaultdict(list)
    for k in keys:
        if k in groups:
            by_alg[(k[2], k[0], k[1])].append(_final_offline(average_curves(groups[k])))
    rows = []
    for (alg, mode, rr), finals in sorted(by_alg.items()):
        agg = AggregateReport.of(finals)
        rows.append([alg, mode, _rr_tag(rr), fmt(agg.mean), fmt(agg.median), fmt(agg.iqm),
                     fmt(agg.optimality_gap), str(agg.n)])
    lines += _table("Aggregate over datasets (final normalized scores; point estimates)",
                    ["algorithm", "mode", "RR", "mean", "median", "IQM", "optimality gap", "datasets"], rows)
    return "\n".join(lines)


def cmd_report(run_dir) -> str:
    text = build_report(run_dir)
    atomic_write_text(Path(run_dir) / "report.md", text + "\n")
    return text


# ---------------------------------------------------------------- entry point

def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqeval", description="Sequential evaluation of offline RL learners.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    mk = sub.add_parser("make-datasets", help="generate the dataset tiers for the configured environment")
    mk.add_argument("--config", required=True)
    mk.add_argument("--out-dir", help="dataset directory (overrides datasets.dir)")

    rn = sub.add_parser("run", help="run the algorithm x dataset x RR x seed matrix")
    rn.add_argument("--config", required=True)
    rn.add_argument("--seeds", type=_int_list, help="comma-separated seeds")
    rn.add_argument("--rr", type=_float_list, help="comma-separated replay ratios (K / increment)")
    rn.add_argument("--mode", choices=MODES)
    rn.add_argument("--finetune-steps", type=int, dest="finetune_steps")
    rn.add_argument("--workers", type=int)
    rn.add_argument("--out-dir", help="run directory (overrides run.out_dir)")

    rp = sub.add_parser("report", help="tabulate a finished run directory")
    rp.add_argument("run_dir", nargs="?")
    rp.add_argument("--out-dir", help="run directory (alternative to the positional argument)")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "make-datasets":
            cfg = load_config(args.config)
            if args.out_dir:
                cfg["datasets"]["dir"] = args.out_dir
            for path in cmd_make_datasets(cfg):
                print(path)
            return 0
        if args.command == "run":
            cfg = apply_overrides(load_config(args.config), args)
            if args.out_dir:
                cfg["run"]["out_dir"] = args.out_dir
            status = cmd_run(cfg)
            print(f"run directory: {cfg['run']['out_dir']}" + ("" if status == 0 else " (with failures)"))
            return status
        run_dir = args.run_dir or args.out_dir
        if run_dir is None:
            print("report needs a run directory", file=sys.stderr)
            return 2
        print(cmd_report(run_dir))
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
