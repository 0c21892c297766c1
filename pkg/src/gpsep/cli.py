"""Command-line interface.

Every command writes ``manifest.json`` into its output directory. The
manifest records the resolved configuration, seeds, thread count and
library versions, and ``gpsep replay`` reruns a command from it.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 missing input
file, 4 malformed matrix header, 5 matrix size mismatch, 6 non-finite
matrix values, 7 replay produced different output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, _kernels
from .evaluation import (
    evaluate_recovery,
    ica_comparison,
    mean_sources,
    model_selection_sweep,
    write_sweep_csv,
)
from .io import MatrixFileError, read_matrix, write_array, write_matrix
from .model import DataMatrix, Hyperparams, save_checkpoint
from .optim import GRADCHECK_INSTANCES, FitConfig, fit, gradcheck, gradcheck_instance
from .synth import SynthConfig, generate, load_truth, save_truth

log = logging.getLogger("gpsep")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_REPLAY_DIFF = 7

MANIFEST = "manifest.json"
MANIFEST_FORMAT = "gpsep-manifest"


class UsageError(Exception):
    """Invalid combination of arguments detected after parsing."""


# ---------------------------------------------------------------- helpers


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {v}")
    return v


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=True) + "\n")


def _load_config(path):
    """Experiment config: JSON with optional ``synth``, ``hyperparams``, ``fit`` and ``seeds`` keys."""
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {path} not found")
    doc = json.loads(p.read_text())
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    unknown = set(doc) - {"synth", "hyperparams", "fit", "seeds"}
    if unknown:
        raise UsageError(f"{path}: unknown config sections {sorted(unknown)}")
    return doc


def _versions():
    return {
        "gpsep": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
        "backend": _kernels.backend(),
    }


def _write_manifest(out, command, args, resolved, inputs=None):
    doc = {
        "format": MANIFEST_FORMAT,
        "command": command,
        "args": args,
        "resolved": resolved,
        "inputs": inputs or {},
        "threads": _kernels.get_threads(),
        "versions": _versions(),
    }
    _dump_json(Path(out) / MANIFEST, doc)


def _write_rows_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v))


# ---------------------------------------------------------------- commands


def cmd_simulate(args, config):
    cfg = SynthConfig(**config.get("synth", {}))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    data, truth = generate(cfg)
    out = Path(args.out)
    write_matrix(data, out / "data.gpm")
    save_truth(out / "truth.json", truth)
    _write_manifest(out, "simulate", {"seed": args.seed}, {"synth": cfg.to_dict()})
    print(f"wrote {data.n_subjects}x{data.n_features} data to {out / 'data.gpm'}")


def _fit_settings(args, config):
    hp_doc = dict(config.get("hyperparams", {}))
    for key, attr in (("n_sources", "sources"), ("n_features_rff", "features"), ("lam", "lam"),
                      ("sigma", "sigma"), ("n_mc", "n_mc")):
        if getattr(args, attr, None) is not None:
            hp_doc[key] = getattr(args, attr)
    if getattr(args, "control_points", None) is not None:
        hp_doc["control_points"] = np.linspace(0.0, 1.0, args.control_points).tolist()
    hp = Hyperparams.from_dict(hp_doc)
    fit_doc = dict(config.get("fit", {}))
    for key, attr in (("max_iters", "iters"), ("learning_rate", "lr"), ("lr_final", "lr_final"),
                      ("seed", "seed"), ("window", "window"), ("tol", "tol"), ("patience", "patience")):
        if getattr(args, attr, None) is not None:
            fit_doc[key] = getattr(args, attr)
    if getattr(args, "learn_sigma", False):
        fit_doc["learn_sigma"] = True
    cfg = FitConfig(**fit_doc)
    return hp, cfg


def cmd_fit(args, config):
    path = Path(args.data)
    if not path.exists():
        raise FileNotFoundError(f"data file {path} not found")
    data = read_matrix(path)
    if args.times:
        if data.observed_times is None:
            raise UsageError(f"--times given but {path} carries no times")
    elif data.observed_times is not None:
        # times present but not requested: treat them as unknown
        data = DataMatrix(data.values, grid=data.grid)
    hp, cfg = _fit_settings(args, config)
    cfg = replace(cfg, fix_times=bool(args.times))
    trace = fit(data, hp, cfg)
    out = Path(args.out)
    st = trace.state
    save_checkpoint(out / "checkpoint.json", st, hp)
    trace.write_csv(out / "trace.csv")
    write_array(st.spatial.mu, out / "maps.gpm", grid=data.grid)
    grid = np.linspace(0.0, 1.0, 100)
    s, _ = mean_sources(st, grid)
    _write_rows_csv(
        out / "sources.csv",
        ["time"] + [f"source_{n}" for n in range(hp.n_sources)],
        [[_fmt(t)] + [_fmt(v) for v in s[:, i]] for i, t in enumerate(grid)],
    )
    _write_rows_csv(out / "times.csv", ["subject", "time"], [[p, _fmt(t)] for p, t in enumerate(st.shifts.times)])
    summary = {
        "final_elbo": {k: getattr(trace.final, k) for k in trace.final.FIELDS},
        "iterations": len(trace.breakdowns),
        "converged": trace.converged,
        "degeneracies": trace.degeneracies,
        "map_norms": np.linalg.norm(st.spatial.mu, axis=1).tolist(),
    }
    inputs = {"data": {"path": str(path), "sha256": _sha256(path)}}
    if args.truth is not None:
        tpath = Path(args.truth)
        if not tpath.exists():
            raise FileNotFoundError(f"truth file {tpath} not found")
        truth = load_truth(tpath)
        summary["recovery"] = evaluate_recovery(st, truth).to_dict()
        inputs["truth"] = {"path": str(tpath), "sha256": _sha256(tpath)}
    _dump_json(out / "summary.json", summary)
    _write_manifest(
        out, "fit", _replayable(args), {"hyperparams": hp.to_dict(), "fit": cfg.to_dict()}, inputs
    )
    print(f"fit finished after {summary['iterations']} iterations, ELBO {trace.final.total:.6g}")


def cmd_select(args, config):
    if args.sources_min > args.sources_max:
        raise UsageError("--sources-min exceeds --sources-max")
    synth = SynthConfig(**config.get("synth", {}))
    hp, cfg = _fit_settings(args, config)
    rows = model_selection_sweep(synth, args.folds, list(range(args.sources_min, args.sources_max + 1)), hp, cfg)
    out = Path(args.out)
    write_sweep_csv(out / "sweep.csv", rows)
    _write_manifest(
        out, "select", _replayable(args),
        {"synth": synth.to_dict(), "hyperparams": hp.to_dict(), "fit": cfg.to_dict()},
    )
    failed = sum(1 for r in rows if r["error"])
    print(f"sweep finished: {len(rows)} cells, {failed} failed")


def cmd_compare_ica(args, config):
    synth = replace(SynthConfig(**config.get("synth", {})), hide_times=False)
    hp, cfg = _fit_settings(args, config)
    seeds = config.get("seeds", list(range(args.datasets)))
    rows = []
    for seed in seeds:
        data, truth = generate(replace(synth, seed=int(seed)))
        cmp_ = ica_comparison(data, truth, hp, replace(cfg, seed=int(seed)), ica_seed=int(seed))
        d = cmp_.to_dict()
        rows.append([seed, _fmt(d["model_mean"]), _fmt(d["ica_mean"]),
                     ";".join(_fmt(v) for v in d["model_temporal"]),
                     ";".join(_fmt(v) for v in d["ica_temporal"]),
                     ";".join(_fmt(v) for v in d["model_maps"]),
                     ";".join(_fmt(v) for v in d["ica_maps"]), int(d["ica_converged"])])
    out = Path(args.out)
    _write_rows_csv(
        out / "comparison.csv",
        ["seed", "model_mean", "ica_mean", "model_temporal", "ica_temporal", "model_maps", "ica_maps",
         "ica_converged"],
        rows,
    )
    _write_manifest(
        out, "compare-ica", _replayable(args),
        {"synth": synth.to_dict(), "hyperparams": hp.to_dict(), "fit": cfg.to_dict(), "seeds": list(seeds)},
    )
    wins = sum(1 for r in rows if float(r[1]) >= float(r[2]))
    print(f"model mean correlation >= ICA on {wins} of {len(rows)} datasets")


def cmd_gradcheck(args, config):
    state, data, hp, draws = gradcheck_instance(args.instance, seed=args.seed)
    gc = gradcheck(state, data, hp, draws, h=args.step)
    out = Path(args.out)
    _write_rows_csv(
        out / "gradcheck.csv",
        ["coordinate", "analytic", "numeric", "abs_err", "rel_err"],
        [[n, _fmt(a), _fmt(b), _fmt(e), _fmt(r)]
         for n, a, b, e, r in zip(gc.names, gc.analytic, gc.numeric, gc.abs_err, gc.rel_err)],
    )
    report = {"max_rel_err": gc.max_rel_err, "passed": gc.passed(), "per_block": gc.per_block()}
    _dump_json(out / "report.json", report)
    _write_manifest(out, "gradcheck", _replayable(args), {})
    print(f"max relative error {gc.max_rel_err:.3e} ({'pass' if gc.passed() else 'FAIL'})")
    return EXIT_OK if gc.passed() else EXIT_RUNTIME


def cmd_replay(args, config):
    """Rerun the command recorded in a manifest and compare outputs with the original directory."""
    src = Path(args.manifest)
    mpath = src / MANIFEST if src.is_dir() else src
    if not mpath.exists():
        raise FileNotFoundError(f"manifest {mpath} not found")
    doc = json.loads(mpath.read_text())
    if doc.get("format") != MANIFEST_FORMAT:
        raise UsageError(f"{mpath} is not a manifest")
    for name, info in doc.get("inputs", {}).items():
        if not Path(info["path"]).exists():
            raise FileNotFoundError(f"input {name} ({info['path']}) not found")
        if _sha256(info["path"]) != info["sha256"]:
            raise UsageError(f"input {name} ({info['path']}) changed since the original run")
    out = Path(args.out)
    argv = _argv_from_manifest(doc, out)
    # the resolved config stands in for the original config file
    cfg_path = out / "replay_config.json"
    out.mkdir(parents=True, exist_ok=True)
    resolved = {k: v for k, v in doc["resolved"].items() if k in ("synth", "hyperparams", "fit", "seeds")}
    _dump_json(cfg_path, resolved)
    argv += ["--config", str(cfg_path)]
    code = main(argv)
    cfg_path.unlink()
    if code != EXIT_OK:
        return code
    original = mpath.parent
    diffs = [
        f.name for f in sorted(original.iterdir())
        if f.is_file() and (not (out / f.name).exists() or (out / f.name).read_bytes() != f.read_bytes())
    ]
    if diffs:
        print(f"replay differs in: {', '.join(diffs)}")
        return EXIT_REPLAY_DIFF
    print("replay reproduced every output file")
    return EXIT_OK


# ---------------------------------------------------------------- plumbing

_REPLAY_SKIP = {"out", "config", "func", "verbose", "threads", "command"}


def _replayable(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _REPLAY_SKIP}


def _argv_from_manifest(doc, out):
    argv = ["--threads", str(doc["threads"]), doc["command"], "--out", str(out)]
    for key, value in doc["args"].items():
        flag = "--" + key.replace("_", "-")
        if value is None or value is False:
            continue
        if value is True:
            argv.append(flag)
        else:
            argv += [flag, str(value)]
    return argv


def _add_fit_options(p, with_counts):
    if with_counts:
        p.add_argument("--sources", type=_positive_int, help="number of sources Ns")
        p.add_argument("--features", type=_positive_int, help="random features per source J")
    p.add_argument("--seed", type=int, help="initialization and noise seed")
    p.add_argument("--iters", type=_positive_int, help="maximum iterations")
    p.add_argument("--lr", type=_positive_float, help="initial learning rate")
    p.add_argument("--lr-final", type=_positive_float, help="learning rate reached at the last iteration")
    p.add_argument("--lam", type=_positive_float, help="monotonicity sharpness")
    p.add_argument("--sigma", type=_positive_float, help="observation noise std")
    p.add_argument("--n-mc", type=_positive_int, help="noise draws per iteration")
    p.add_argument("--control-points", type=_positive_int, help="number of uniform control points")
    p.add_argument("--window", type=_positive_int, help="convergence window")
    p.add_argument("--tol", type=float, help="relative convergence tolerance")
    p.add_argument("--patience", type=_positive_int, help="stalled windows before declaring convergence")
    p.add_argument("--learn-sigma", action="store_true", help="also optimize the noise level")


def build_parser():
    parser = argparse.ArgumentParser(prog="gpsep", description=__doc__.split("\n\n")[0])
    parser.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                        help="threads for the compiled kernels (default: all cores)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON config (section 'synth')")
    p.add_argument("--seed", type=int, help="override the generator seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the model to a data matrix")
    p.add_argument("--data", required=True, help="matrix file (.gpm binary or .csv)")
    p.add_argument("--times", action="store_true", help="use the file's observation times and keep them fixed")
    p.add_argument("--truth", help="ground-truth JSON from 'simulate' to score the fit against")
    p.add_argument("--config", help="JSON config (sections 'hyperparams' and 'fit')")
    _add_fit_options(p, with_counts=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="model-selection sweep over the number of sources")
    p.add_argument("--config", help="JSON config (sections 'synth', 'hyperparams', 'fit')")
    p.add_argument("--folds", type=_positive_int, default=10)
    p.add_argument("--sources-min", type=_positive_int, default=1)
    p.add_argument("--sources-max", type=_positive_int, default=4)
    _add_fit_options(p, with_counts=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("compare-ica", help="compare with FastICA on data with known times")
    p.add_argument("--config", help="JSON config (sections 'synth', 'hyperparams', 'fit', 'seeds')")
    p.add_argument("--datasets", type=_positive_int, default=10, help="datasets when the config lists no seeds")
    _add_fit_options(p, with_counts=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare_ica)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradient")
    p.add_argument("--instance", choices=sorted(GRADCHECK_INSTANCES), default="tiny")
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--step", type=_positive_float, default=1e-5, help="finite-difference step")
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("replay", help="rerun a previous command from its manifest")
    p.add_argument("--manifest", required=True, help="manifest.json or the directory holding it")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    _kernels.set_threads(args.threads)
    try:
        config = _load_config(args.config)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        code = args.func(args, config)
    except UsageError as exc:
        print(f"gpsep {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"gpsep {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except MatrixFileError as exc:
        print(f"gpsep {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"gpsep {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
