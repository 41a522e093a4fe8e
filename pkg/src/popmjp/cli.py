"""Command line front end.

Subcommands ``simulate``, ``infer``, ``compare``, ``diagnose`` and ``verify``.
Exit codes: 0 ok, 1 usage, 2 config, 3 runtime, 4 verification failure.

Random streams: for a run seed ``s`` the dataset uses child 0 of
``SeedSequence(s)`` and sampler ``k`` uses child ``k + 1``.  Comparison
replicate ``r`` uses the same layout under ``SeedSequence([s, r])``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, build_model, build_sampler, load_config
from .diagnostics import (Trace, autocorrelation, effective_sample_size, format_report,
                          integrated_autocorrelation_time)
from .estimator import paths_on_grid, run_chain
from .ffbs import InfeasibleError
from .models import ObservationSet, SIRModel, sir_mh_baseline_sweep
from .samplers import MemoryBudgetExceeded
from .simulate import InvariantViolation, split_streams
from .verify import SUITES, format_details

__all__ = ["main"]

log = logging.getLogger("popmjp")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3, 4
RUNTIME_ERRORS = (InfeasibleError, MemoryBudgetExceeded, InvariantViolation, RuntimeError, OSError,
                  FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- datasets -----------------------------------------------------------------

def _resolve(cfg: RunConfig, config_file: Path | None) -> RunConfig:
    """Make a relative data path absolute (relative to the config file)."""
    if cfg.data.path is not None and config_file is not None:
        p = Path(cfg.data.path)
        if not p.is_absolute():
            cfg.data.path = str((config_file.parent / p).resolve())
    return cfg


def simulate_dataset(cfg: RunConfig, rng):
    """Ground-truth path and observations drawn from the configured model."""
    data = cfg.data
    if cfg.model.kind == "sir":
        model = build_model(cfg.model, data)
        path, removals = model.simulate_epidemic(rng, data.final_removed)
        return model, path, [ObservationSet("jump", removals, detection={"removal": 1.0})]
    model = build_model(cfg.model, data)
    truth = model.simulate(model.params, rng)
    n = data.count
    coords = tuple(range(model.space.dimension))
    times = model.horizon * np.arange(1, n + 1) / n if n else np.zeros(0)
    template = ObservationSet("noisy" if data.kind == "noisy" else "exact", times,
                              np.zeros((n, len(coords))), data.sigma, coords)
    return model, truth, [template.simulate(truth, rng)]


def load_dataset(cfg: RunConfig):
    data = cfg.data
    if data.kind == "removals":
        obs = ObservationSet.from_csv(data.path, detection={"removal": 1.0})
        if obs.kind != "jump":
            raise ConfigError("removal files must contain jump rows")
        return [obs]
    obs = ObservationSet.from_csv(data.path, sigma=data.sigma)
    if obs.kind != data.kind:
        raise ConfigError(f"data file holds {obs.kind!r} rows, config says {data.kind!r}")
    return [obs]


def prepare(cfg: RunConfig, data_rng):
    """Model and observations for inference, loading or simulating the data."""
    if cfg.data.path is not None:
        obs = load_dataset(cfg)
        removals = obs[0].times if cfg.model.kind == "sir" else None
        model = build_model(cfg.model, cfg.data, removals)
    else:
        model, _, obs = simulate_dataset(cfg, data_rng)
        if cfg.model.kind == "sir":
            model.removal_times = np.sort(obs[0].times)
    if isinstance(model, SIRModel):
        if model.removal_times is None or len(model.removal_times) == 0:
            raise ConfigError("SIR inference needs at least one removal")
        return model, []
    return model, obs


def _center(model, obs, sampler_cfg):
    if sampler_cfg.envelope is None:
        return
    if isinstance(model, SIRModel):
        model.calibrate_mean()
    elif hasattr(model, "calibrate_mean"):
        model.calibrate_mean(obs[0])
    else:
        model.set_mean_path()


def _run_one(cfg: RunConfig, block, model, obs, rng, keep_paths=True):
    sampler = build_sampler(block)
    _center(model, obs, sampler)
    sweep_fn = None
    chain = None
    if block.variant == "mh":
        def sweep_fn(c, r):
            return sir_mh_baseline_sweep(c, model, r)
    if isinstance(model, SIRModel):
        chain = model.initial_chain()
    return run_chain(model, sampler, obs, cfg.run.sweeps, rng, cfg.run.burn_in, cfg.run.thin, chain,
                     sweep_fn, keep_paths)


# -- output -------------------------------------------------------------------

def _band_csv(res, model, cfg: RunConfig) -> str:
    if isinstance(model, SIRModel):
        start = min(t[0] for t in res.times)
        grid = np.linspace(start, model.removal_times[-1], cfg.run.grid)
    else:
        grid = np.linspace(0.0, model.horizon, cfg.run.grid)
    samples = paths_on_grid(res.times, res.states, grid)
    tail = (1 - cfg.run.level) / 2
    mean = samples.mean(axis=0)
    lo = np.quantile(samples, tail, axis=0)
    hi = np.quantile(samples, 1 - tail, axis=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = mean.shape[1]
    w.writerow(["time"] + [f"{k}_{c}" for c in range(d) for k in ("mean", "lower", "upper")])
    for g in range(len(grid)):
        w.writerow([repr(float(grid[g]))] + [repr(float(a[g, c])) for c in range(d) for a in (mean, lo, hi)])
    return buf.getvalue()


def _versions() -> dict:
    import numba
    import scipy
    import sklearn
    return {"popmjp": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "scikit-learn": sklearn.__version__}


def _effective(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out is not None:
        cfg.run.output = args.out
    return cfg


# -- commands -----------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args) -> int:
    out = Path(cfg.run.output)
    out.mkdir(parents=True, exist_ok=True)
    data_rng = split_streams(cfg.run.seed, 1)[0]
    _, truth, obs = simulate_dataset(cfg, data_rng)
    truth.to_csv(out / "trajectory.csv")
    obs[0].to_csv(out / "observations.csv")
    print(f"seed: {cfg.run.seed}")
    print(f"trajectory: {out / 'trajectory.csv'}")
    print(f"observations: {out / 'observations.csv'} ({len(obs[0])} rows)")
    return EXIT_OK


def cmd_infer(cfg: RunConfig, args) -> int:
    start = time.perf_counter()
    out = Path(cfg.run.output)
    out.mkdir(parents=True, exist_ok=True)
    blocks = cfg.all_samplers()
    streams = split_streams(cfg.run.seed, 1 + len(blocks))
    files = []
    if cfg.run.sweeps > 0:
        model, obs = prepare(cfg, streams[0])
        for k, block in enumerate(blocks):
            suffix = "" if len(blocks) == 1 else f"_{block.label}"
            res = _run_one(cfg, block, model, obs, streams[1 + k])
            trace_file = out / f"trace{suffix}.csv"
            res.trace.to_csv(trace_file, res.sweeps)
            files.append(trace_file.name)
            if len(res.trace):
                band_file = out / f"band{suffix}.csv"
                band_file.write_text(_band_csv(res, model, cfg))
                files.append(band_file.name)
            log.info("%s: %d samples", block.label, len(res.trace))
    manifest = {"command": "infer", "config": cfg.model_dump(mode="json"), "seed": cfg.run.seed,
                "versions": _versions(), "elapsed_seconds": time.perf_counter() - start, "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"manifest: {out / 'manifest.json'}")
    return EXIT_OK


def _free_names(model):
    return [n for n, f in zip(model.param_names, model.free) if f]


def compare_replicate(cfg_dict: dict, replicate: int) -> list[dict]:
    """All sampler runs on one replicate dataset; rows of ESS figures."""
    cfg = RunConfig.model_validate(cfg_dict)
    blocks = cfg.all_samplers()
    streams = split_streams([cfg.run.seed, replicate], 1 + len(blocks))
    model, obs = prepare(cfg, streams[0])
    rows = []
    for k, block in enumerate(blocks):
        try:
            res = _run_one(cfg, block, model, obs, streams[1 + k], keep_paths=False)
            status = "ok"
        except (InfeasibleError, MemoryBudgetExceeded) as err:
            res, status = None, f"failed: {type(err).__name__}: {err}"
        for name in _free_names(model):
            ess = seconds = float("nan")
            if res is not None:
                x = res.trace.column(name)
                seconds = float(np.sum(res.trace.seconds))
                ess = effective_sample_size(x) if len(x) >= 100 else float("nan")
            rows.append({"replicate": replicate, "sampler": block.label, "parameter": name, "ess": ess,
                         "seconds": seconds, "ess_per_second": ess / seconds if seconds > 0 else float("nan"),
                         "status": status})
    return rows


def cmd_compare(cfg: RunConfig, args) -> int:
    if not cfg.samplers or len(cfg.samplers) < 2:
        raise ConfigError("compare needs a 'samplers' list with at least two entries")
    if cfg.compare is None:
        raise ConfigError("compare needs a 'compare' block naming the benchmark")
    out = Path(cfg.run.output)
    out.mkdir(parents=True, exist_ok=True)
    payload = cfg.model_dump(mode="json")
    reps = range(cfg.compare.replicates)
    if args.threads > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(compare_replicate, [payload] * len(reps), reps))
    else:
        results = [compare_replicate(payload, r) for r in reps]
    rows = [row for rep in results for row in rep]
    bench = {(r["replicate"], r["parameter"]): r["ess_per_second"] for r in rows
             if r["sampler"] == cfg.compare.benchmark}
    for r in rows:
        b = bench.get((r["replicate"], r["parameter"]), float("nan"))
        r["ratio"] = r["ess_per_second"] / b if b and math.isfinite(b) and b > 0 else float("nan")
    fields = ["replicate", "sampler", "parameter", "ess", "seconds", "ess_per_second", "ratio", "status"]
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    summary = []
    for block in cfg.samplers:
        for name in sorted({r["parameter"] for r in rows}):
            ratios = np.array([r["ratio"] for r in rows if r["sampler"] == block.label and r["parameter"] == name])
            ok = ratios[np.isfinite(ratios)]
            med, lo, hi = (np.percentile(ok, [50, 2.5, 97.5]) if len(ok) else (np.nan,) * 3)
            summary.append({"sampler": block.label, "parameter": name, "median_ratio": med,
                            "lower": lo, "upper": hi, "replicates_ok": len(ok)})
    with open(out / "compare_summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    for s in summary:
        print(f"{s['sampler']} {s['parameter']}: ratio {s['median_ratio']:.4g} "
              f"[{s['lower']:.4g}, {s['upper']:.4g}] over {s['replicates_ok']} replicates")
    return EXIT_OK


def diagnose_trace(trace: Trace) -> tuple[dict, str]:
    """Summary statistics per column and an autocorrelation CSV."""
    report = {"samples": len(trace)}
    columns = list(trace.param_names) + ["log_density", "n_jumps"]
    total = float(np.sum(trace.seconds))
    max_lag = max(1, min(200, len(trace) // 2 - 1))
    acfs = {}
    for name in columns:
        x = trace.column(name)
        report[f"{name}.mean"] = float(np.mean(x)) if len(x) else float("nan")
        report[f"{name}.sd"] = float(np.std(x, ddof=1)) if len(x) > 1 else float("nan")
        if len(x) >= 100 and np.ptp(x) > 0:
            ess = effective_sample_size(x)
            report[f"{name}.tau"] = integrated_autocorrelation_time(x)
            report[f"{name}.ess"] = ess
            report[f"{name}.ess_per_second"] = ess / total if total > 0 else float("nan")
            acfs[name] = autocorrelation(x, max_lag)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(acfs)
    w.writerow(["lag"] + names)
    for lag in range(max_lag + 1 if names else 0):
        w.writerow([lag] + [repr(float(acfs[n][lag])) for n in names])
    return report, buf.getvalue()


def cmd_diagnose(cfg: RunConfig, args) -> int:
    out = Path(cfg.run.output)
    traces = sorted(out.glob("trace*.csv"))
    if not traces:
        raise RuntimeError(f"no trace files in {out}")
    text = []
    for path in traces:
        report, acf = diagnose_trace(Trace.from_csv(path))
        stem = path.stem
        (out / f"acf{stem[len('trace'):]}.csv").write_text(acf)
        block = f"[{stem}]\n" + format_report(report)
        text.append(block)
    (out / "diagnostics.txt").write_text("\n".join(text))
    print("\n".join(text), end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    seed = 0 if args.seed is None else args.seed
    streams = split_streams(seed, len(names))
    ok = True
    for name, rng in zip(names, streams):
        res = SUITES[name](rng)
        print(format_details(res))
        ok &= res.passed
    return EXIT_OK if ok else EXIT_VERIFY


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run configuration (YAML, JSON or an infer manifest)")
    common.add_argument("--seed", type=int, help="override run.seed (unsigned 64-bit)")
    common.add_argument("--out", help="override run.output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes for compare")
    parser = _Parser(prog="popmjp", description="Auxiliary-variable samplers for population jump processes")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="simulate a ground-truth path and observations")
    sub.add_parser("infer", parents=[common], help="run the configured sampler(s)")
    sub.add_parser("compare", parents=[common], help="ESS per second ratios against a benchmark sampler")
    sub.add_parser("diagnose", parents=[common], help="ESS and autocorrelation of traces in the output dir")
    v = sub.add_parser("verify", parents=[common], help="run exactness suites")
    v.add_argument("suite", choices=sorted(SUITES) + ["all"])
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        if args.command != "verify" and not args.config:
            raise UsageError(f"{args.command} needs --config")
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as err:  # --help / --version
        return int(err.code or 0)
    if args.command == "verify":
        return cmd_verify(args)
    try:
        cfg_file = Path(args.config)
        cfg = _effective(_resolve(load_config(cfg_file), cfg_file), args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    commands = {"simulate": cmd_simulate, "infer": cmd_infer, "compare": cmd_compare,
                "diagnose": cmd_diagnose}
    try:
        return commands[args.command](cfg, args)
    except (ConfigError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as err:
        print(f"runtime error: infeasible constraints at epoch {err.epoch}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except RUNTIME_ERRORS as err:
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
