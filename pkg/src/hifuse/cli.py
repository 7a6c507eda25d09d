"""``hifuse`` command line: simulate, extract, train, fuse, evaluate, sweep.

Settings are layered as defaults < ``--config`` file < ``HIFUSE_*`` environment
< command-line flags, and every command writes the resolved settings to
``run_config.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from hifuse import dataset, embedding, features, fusion, metrics, synth
from hifuse.config import RunConfig
from hifuse.errors import ConfigError, DataError, HifuseError
from hifuse.pipeline import METHODS, make_split, run_method

log = logging.getLogger("hifuse")

# short grid names accepted by ``sweep --grid``
GRID_KEYS = {
    "beta": "fusion.beta",
    "k": "network.k",
    "lambda": "train.lambda_div",
    "lambda_div": "train.lambda_div",
}
REALTIME_OF = {"ads": "rads", "a2ds": "ra2ds", "rads": "rads", "ra2ds": "ra2ds"}


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, float).ravel()]


def _resolve_paths(args, cfg: RunConfig, model: bool = False) -> None:
    """Flags win; otherwise fall back to the paths recorded in the config."""
    if args.train:
        cfg.set("paths.train", [str(p) for p in args.train])
    if args.test:
        cfg.set("paths.test", str(args.test))
    if model and args.model:
        cfg.set("paths.model", str(args.model))
    if not cfg.data["paths"]["train"]:
        raise ConfigError("no training trajectories: pass --train or set paths.train")
    if model and not cfg.data["paths"]["model"]:
        raise ConfigError("no model: pass --model or set paths.model")


def _load_trajs(paths: Sequence) -> list:
    trajs = [dataset.load_trajectory(p) for p in paths]
    ids = [t.id for t in trajs]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise DataError(f"duplicate trajectory ids {dup}")
    return trajs


# --- simulate ---------------------------------------------------------------


def cmd_simulate(args, cfg: RunConfig) -> int:
    for key, flag in (("synth.T", args.T), ("synth.F", args.F), ("synth.n_units", args.n_units)):
        if flag is not None:
            cfg.set(key, flag)
    out = _out_dir(args.out)
    s = cfg.data["synth"]
    fleet = synth.generate_fleet(cfg.synth_config(), s["n_units"], s["lifetime_jitter"])
    for traj, hi in fleet:
        dataset.write_feature_csv(traj, out / f"{traj.id}.csv")
        dataset.write_truth_csv(traj.times, hi, out / f"{traj.id}_truth.csv")
    cfg.write(out)
    print(f"wrote {len(fleet)} units to {out}")
    return 0


# --- extract ----------------------------------------------------------------


def read_pass_boundaries(path) -> list[tuple[int, int]]:
    """Pass ranges in frames from a CSV with ``start,stop`` columns (stop exclusive)."""
    cols = dataset._read_columns(path, ("start", "stop"))
    out = []
    for a, b in zip(cols["start"], cols["stop"]):
        if a != int(a) or b != int(b):
            raise DataError(f"{path}: pass boundaries must be integers")
        out.append((int(a), int(b)))
    return out


def cmd_extract(args, cfg: RunConfig) -> int:
    signals, sr = dataset.load_raw_channels(args.signals)
    mel = cfg.mel_config(sr)
    cfg.set("mel.sample_rate_hz", sr)
    bounds = read_pass_boundaries(args.passes) if args.passes else None
    X = features.extract(signals, mel, bounds)
    name = args.name or Path(args.signals).stem
    out = _out_dir(args.out)
    traj = dataset.Trajectory(name, X)
    dataset.write_feature_csv(traj, out / f"{name}.csv")
    cfg.write(out)
    print(f"wrote {X.shape[0]} x {X.shape[1]} features to {out / (name + '.csv')}")
    return 0


# --- train ------------------------------------------------------------------


def cmd_train(args, cfg: RunConfig) -> int:
    for key, flag in (
        ("train.lambda_div", args.lambda_div),
        ("train.mu", args.mu),
        ("train.nu", args.nu),
        ("train.epochs", args.epochs),
        ("network.k", args.k),
        ("seed", args.seed),
    ):
        if flag is not None:
            cfg.set(key, flag)
    _resolve_paths(args, cfg)
    paths = cfg.data["paths"]
    train = _load_trajs(paths["train"])
    test = dataset.load_trajectory(paths["test"]) if paths["test"] else None
    split = make_split(train, test, cfg.label_config())
    model = embedding.train(split, cfg.network_spec(train[0].F), cfg.train_config())
    out = _out_dir(args.out)
    model.save(out / "model.json")
    cfg.write(out)
    print(f"trained K={model.spec.K} model, final loss {model.loss_trace[-1] if model.loss_trace else float('nan'):.6g}")
    return 0


# --- fuse -------------------------------------------------------------------


def _resolve_method(method: str, realtime: bool) -> str:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    if not realtime:
        return method
    if method not in REALTIME_OF:
        raise ConfigError(f"--realtime needs an APAIC method, not {method!r}")
    return REALTIME_OF[method]


def cmd_fuse(args, cfg: RunConfig) -> int:
    if args.method is not None:
        cfg.set("method", args.method)
    if args.tau is not None:
        cfg.set("fusion.tau", args.tau)
    if args.no_isotonic:
        cfg.set("fusion.isotonic", False)
    cfg.set("method", _resolve_method(cfg.data["method"], args.realtime))
    _resolve_paths(args, cfg, model=True)
    paths = cfg.data["paths"]
    method = cfg.data["method"]

    model = embedding.EmbeddingModel.load(paths["model"])
    train = _load_trajs(paths["train"])
    test = dataset.load_trajectory(paths["test"]) if paths["test"] else None
    if METHODS[method][1] and test is None:
        raise ConfigError(f"method {method!r} needs a --test trajectory")
    split = make_split(train, test, cfg.label_config())
    result = run_method(method, model, split, cfg.fusion_config())

    out = _out_dir(args.out)
    trajs = train + ([test] if test is not None else [])
    for traj, h, z in zip(trajs, result.h, result.z):
        hi = dataset.HealthIndex(traj.id, traj.times, h, z, method)
        dataset.write_hi_csv(hi, out / f"{traj.id}_hi.csv")
    report = {"method": method, "ids": result.ids, "roles": result.roles}
    if result.state is not None:
        st = result.state
        report.update(
            w=_floats(st.w),
            n_iter=st.n_iter,
            objective_trace=_floats(st.objective_trace),
            window_ends=[int(t) for t in result.window_ends],
        )
    _write_json(out / "fusion_report.json", report)
    cfg.write(out)
    print(f"{method}: wrote {len(trajs)} health indices to {out}")
    return 0


# --- evaluate ---------------------------------------------------------------


def _truth_id(path) -> str:
    stem = Path(path).stem
    return stem[: -len("_truth")] if stem.endswith("_truth") else stem


def cmd_evaluate(args, cfg: RunConfig) -> int:
    if args.align_window is not None:
        cfg.set("align_window", list(args.align_window))
    his = [dataset.read_hi_csv(p) for p in args.hi]
    ids = [h.id for h in his]
    hs = [h.z if args.column == "z_hi" else h.h_raw for h in his]

    truths = None
    if args.truth:
        by_id = {_truth_id(p): dataset.read_truth_csv(p) for p in args.truth}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DataError(f"no truth file for {missing}")
        truths = [by_id[i] for i in ids]
        for i, h, t in zip(ids, hs, truths):
            if h.size != t.size:
                raise DataError(f"{i}: health index has {h.size} rows, truth has {t.size}")

    onsets = None
    if args.fault_onset is not None:
        onsets = list(args.fault_onset)
        if len(onsets) == 1:
            onsets = onsets * len(hs)
        if len(onsets) != len(hs):
            raise ConfigError("give one --fault-onset or one per health index")

    report = metrics.evaluate(
        hs, ids, truths, cfg.align_window, onsets, args.threshold, args.reference
    )
    out = _out_dir(args.out)
    (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    report.write_csv(out / "metrics.csv")
    cfg.write(out)
    for row in report.rows():
        print(",".join(f"{k}={v}" for k, v in row.items() if v != ""))
    return 0


# --- sweep ------------------------------------------------------------------


def parse_grid(specs: Sequence[str]) -> dict:
    """``["beta=0.01,0.05", "k=4"]`` -> ``{"fusion.beta": [0.01, 0.05], "network.k": [4]}``."""
    grid = {}
    for spec in specs:
        name, sep, values = spec.partition("=")
        name = name.strip().lower()
        if not sep or name not in GRID_KEYS:
            raise ConfigError(f"bad --grid entry {spec!r}; use one of {sorted(GRID_KEYS)}=v1,v2,...")
        try:
            vals = [float(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad --grid values in {spec!r}") from None
        if not vals:
            raise ConfigError(f"--grid {name} has no values")
        grid[GRID_KEYS[name]] = vals
    return grid


def _sweep_job(job: tuple) -> list[dict]:
    """Train once for (seed, K, lambda), then fuse for every beta."""
    data, seed, betas = job
    cfg = RunConfig(data)
    cfg.set("seed", seed)
    s = cfg.data["synth"]
    fleet = synth.generate_fleet(cfg.synth_config(), s["n_units"], s["lifetime_jitter"])
    trajs = [t for t, _ in fleet]
    truths = [h for _, h in fleet]
    split = make_split(trajs[:-1], trajs[-1], cfg.label_config())
    model = embedding.train(split, cfg.network_spec(trajs[0].F), cfg.train_config())
    method = "a2ds" if model.uses_diversity else "ads"
    Ys = [embedding.embed(model, t) for t in trajs]
    rows = []
    for beta in betas:
        cfg.set("fusion.beta", beta)
        res = run_method(method, model, split, cfg.fusion_config())
        rep = metrics.evaluate(res.z, res.ids, truths, cfg.align_window)
        rows.append(
            {
                "beta": float(beta),
                "k": int(cfg.data["network"]["k"]),
                "lambda": float(cfg.data["train"]["lambda_div"]),
                "seed": int(seed),
                "isotonic": bool(cfg.data["fusion"]["isotonic"]),
                "method": method,
                "rank": embedding.embedding_rank(np.vstack(Ys)),
                "correlation": rep.correlation[-1],
                "adjusted_rmse": rep.adjusted_rmse[-1],
                "mk_monotonicity": rep.mk_monotonicity[-1],
                "trendability": rep.trendability,
                "prognosability": rep.prognosability,
                "n_iter": res.state.n_iter,
            }
        )
    return rows


SWEEP_METRICS = ("correlation", "adjusted_rmse", "mk_monotonicity", "trendability", "prognosability", "rank")


def summarize_sweep(rows: list[dict]) -> list[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["beta"], r["k"], r["lambda"], r["isotonic"]), []).append(r)
    out = []
    for (beta, k, lam, iso), rs in groups.items():
        row = {"beta": beta, "k": k, "lambda": lam, "isotonic": iso, "n_seeds": len(rs)}
        for m in SWEEP_METRICS:
            vals = np.array([np.nan if r[m] is None else r[m] for r in rs], float)
            row[f"{m}_mean"] = float(np.mean(vals))
            row[f"{m}_std"] = float(np.std(vals))
        out.append(row)
    return out


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def cmd_sweep(args, cfg: RunConfig) -> int:
    if args.no_isotonic:
        cfg.set("fusion.isotonic", False)
    grid = parse_grid(args.grid or [])
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    betas = grid.pop("fusion.beta", [cfg.data["fusion"]["beta"]])
    ks = grid.pop("network.k", [cfg.data["network"]["k"]])
    lams = grid.pop("train.lambda_div", [cfg.data["train"]["lambda_div"]])

    jobs = []
    for k, lam, seed in itertools.product(ks, lams, seeds):
        point = RunConfig(cfg.data)
        point.set("network.k", k)
        point.set("train.lambda_div", lam)
        jobs.append((point.data, seed, betas))

    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            chunks = list(pool.map(_sweep_job, jobs))
    else:
        chunks = [_sweep_job(j) for j in jobs]
    rows = sorted(
        itertools.chain.from_iterable(chunks),
        key=lambda r: (r["lambda"], r["k"], r["beta"], r["seed"]),
    )
    summary = sorted(summarize_sweep(rows), key=lambda r: (r["lambda"], r["k"], r["beta"]))

    out = _out_dir(args.out)
    _write_rows(out / "sweep_runs.csv", rows)
    _write_rows(out / "sweep_summary.csv", summary)
    _write_json(
        out / "sweep.json",
        {"grid": {"beta": betas, "k": ks, "lambda": lams}, "seeds": seeds, "runs": rows, "summary": summary},
    )
    cfg.write(out)
    for r in summary:
        print(
            f"lambda={r['lambda']:g} k={r['k']} beta={r['beta']:g}: "
            f"corr={r['correlation_mean']:.3f}+-{r['correlation_std']:.3f} "
            f"mk={r['mk_monotonicity_mean']:.3f} trend={r['trendability_mean']:.3f} "
            f"prog={r['prognosability_mean']:.3f}"
        )
    return 0


# --- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON or YAML settings file")
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hifuse", description="Health-index estimation from run-to-failure data.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write a synthetic fleet with ground truth")
    s.add_argument("--T", type=int)
    s.add_argument("--F", type=int)
    s.add_argument("--n-units", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("extract", parents=[common], help="log-mel features from raw channel files")
    s.add_argument("--signals", type=Path, required=True, help="channel file or directory of channel files")
    s.add_argument("--passes", type=Path, help="CSV of start,stop frame ranges to average")
    s.add_argument("--name", help="trajectory id (default: signals file or directory name)")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", parents=[common], help="train the embedding network")
    s.add_argument("--train", type=Path, nargs="+", help="feature CSVs (default: paths.train)")
    s.add_argument("--test", type=Path, help="test feature CSV (default: paths.test)")
    s.add_argument("--lambda-div", type=float)
    s.add_argument("--mu", type=float)
    s.add_argument("--nu", type=float)
    s.add_argument("--k", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("fuse", parents=[common], help="fuse embeddings into health indices")
    s.add_argument("--model", type=Path, help="model file (default: paths.model)")
    s.add_argument("--train", type=Path, nargs="+", help="feature CSVs (default: paths.train)")
    s.add_argument("--test", type=Path, help="test feature CSV (default: paths.test)")
    s.add_argument("--method", choices=sorted(METHODS))
    s.add_argument("--realtime", action="store_true", help="use the real-time variant of the method")
    s.add_argument("--tau", type=int)
    s.add_argument("--no-isotonic", action="store_true")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("evaluate", parents=[common], help="health-index quality metrics")
    s.add_argument("--hi", type=Path, nargs="+", required=True)
    s.add_argument("--truth", type=Path, nargs="+")
    s.add_argument("--column", choices=("z_hi", "h_raw"), default="z_hi")
    s.add_argument("--align-window", type=int, nargs=2, metavar=("START", "STOP"))
    s.add_argument("--fault-onset", type=int, nargs="+", help="0-based fault onset index per HI")
    s.add_argument("--threshold", type=float, default=1.0)
    s.add_argument("--reference", type=int, help="index of the prognosability reference unit")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[common], help="grid over beta, K and lambda on synthetic fleets")
    s.add_argument("--grid", action="append", metavar="KEY=V1,V2", help="KEY is beta, k or lambda")
    s.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    s.add_argument("--no-isotonic", action="store_true")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = RunConfig.load(args.config)
        seed = getattr(args, "seed", None)
        if seed is not None:
            cfg.set("seed", seed)
        return args.func(args, cfg)
    except HifuseError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
