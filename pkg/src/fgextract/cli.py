"""Command-line entry point: ``fgextract <command> [options]``.

Commands
    gen      synthesize bags (one file pair per bag and SNR level)
    fit      run one extraction algorithm on a bag file
    sweep    run a full benchmark grid and write records, medians and curves
    oracle   reference foreground signature of a labeled cube
    patches  cut a labeled cube into label-pure windows
    eval     recompute medians and curves from saved records

Exit status: 0 success, 1 I/O or format error, 2 usage or configuration
error, 3 empty data, 4 numeric failure (including failed sweep cells).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .baseline import NmfConfig, minvol_nmf
from .datagen import SynthConfig, generate_bag, snr_grid
from .epfit import EPFitConfig, epfit_detailed
from .errors import ConfigError, EmptyDataError, FGExtractError, NumericError
from .io import BagFile, RunConfig, load_run_config, read_bag, read_cube, run_config_from_dict, write_bag
from .metrics import median_by, signature_error
from .minvolfit import MinVolConfig, minvolfit
from .scene import LabeledCube, oracle_reference, sample_patches
from .sweep import derive_seed, evaluation_floor, read_records, run_sweep, write_results, write_summary

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_EMPTY, EXIT_NUMERIC = 0, 1, 2, 3, 4
ALGORITHMS = ("minvolfit", "epfit", "minvolnmf")


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None


def _flat(groups):
    return None if groups is None else [x for g in groups for x in g]


def _emit(obj, out, name):
    text = json.dumps(obj, indent=1) + "\n"
    if out:
        p = Path(out)
        p.mkdir(parents=True, exist_ok=True)
        (p / name).write_text(text)
    sys.stdout.write(text)


# ------------------------------------------------------------------ gen

def _base_config(args) -> RunConfig:
    if args.config:
        cfg = load_run_config(args.config)
    else:
        cfg = RunConfig(grids={"epfit": [0]}, snr=list(snr_grid()))
    d = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "snr", None):
        d["snr"] = _flat(args.snr)
    if getattr(args, "out", None):
        d["out"] = args.out
    return run_config_from_dict(d)


def cmd_gen(args):
    cfg = _base_config(args)
    out = Path(cfg.out or ".")
    n = 0
    for si, snr in enumerate(cfg.snr):
        for b in range(cfg.n_bags):
            sc = SynthConfig(seed=derive_seed(cfg.seed, 0, b), noise_seed=derive_seed(cfg.seed, 1, b, si),
                             snr=snr, **cfg.synth)
            bag, truth = generate_bag(sc)
            write_bag(out / f"bag{b:03d}_snr{si:02d}", bag, truth.params)
            n += 1
    print(f"wrote {n} bags to {out}", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------------ fit

def _fit_one(bf: BagFile, algorithm, hp, seed, iters):
    t0 = time.perf_counter()
    diag = {}
    if algorithm == "minvolfit":
        res = minvolfit(bf.bag, MinVolConfig(lam=hp, n_iters=iters or 100_000, seed=seed, normalize_data=True))
        f = res.params.f
        diag = {"objective_first": float(res.objective_trace[0]), "objective_last": res.objective,
                "residual": res.final_residual, "iterations": res.iterations_run}
    elif algorithm == "epfit":
        # stop early once noiseless data is reproduced to rounding level
        inner = MinVolConfig(n_iters=iters or 200_000, seed=seed, objective_rtol=1e-20)
        r = epfit_detailed(bf.bag, EPFitConfig(inner=inner, removal_count=int(hp)))
        f = r.f
        diag = {"objective_first": float(r.inner.objective_trace[0]), "objective_last": r.inner.objective,
                "residual": r.inner.final_residual, "iterations": r.inner.iterations_run,
                "pair": list(r.pair), "pair_cosine": r.pair_cosine}
    else:
        ncfg = NmfConfig(lam=hp, n_iters=iters or 50_000, seed=seed)
        res = minvol_nmf(bf.bag.concat(), ncfg)
        W = np.maximum(res.W, ncfg.delta)
        f = W[:, 0] / W[:, 1]
        diag = {"objective_first": float(res.objective_trace[0]), "objective_last": res.objective,
                "iterations": len(res.objective_trace) - 1, "clamped_entries": res.clamped_entries}
    ms = 1000 * (time.perf_counter() - t0)
    key = "alpha" if algorithm == "epfit" else "lambda"
    rec = {"algorithm": algorithm, "hyperparams": {key: hp}, "seed": seed, "f_est": [float(x) for x in f],
           "diagnostics": diag, "runtime_ms": ms}
    if bf.truth is not None:
        rec["signature_error"] = signature_error(evaluation_floor(f), bf.truth.f)
    return rec


def cmd_fit(args):
    if args.algorithm is None:
        raise UsageError("fit needs --algorithm")
    bf = read_bag(args.bagfile)
    if args.algorithm == "epfit":
        values = [args.alpha if args.alpha is not None else 0]
    else:
        values = _flat(args.lam) or [0.0 if args.algorithm == "minvolfit" else 0.1]
    seed = args.seed if args.seed is not None else 0
    results = [_fit_one(bf, args.algorithm, hp, seed, args.iters) for hp in values]
    _emit(results[0] if len(results) == 1 else results, args.out, "fit.json")
    return EXIT_OK


# ------------------------------------------------------------------ sweep

def cmd_sweep(args):
    if args.config:
        cfg = load_run_config(args.config)
        d = cfg.to_dict()
    else:
        if args.algorithm is None:
            raise UsageError("sweep needs --config or --algorithm")
        d = {"grids": {}, "snr": list(snr_grid())}
    if args.algorithm:
        if args.algorithm == "epfit":
            vals = [args.alpha] if args.alpha is not None else d["grids"].get("epfit", [0])
        else:
            vals = _flat(args.lam) or d["grids"].get(args.algorithm)
            if vals is None:
                raise UsageError(f"--lambda is required for {args.algorithm}")
        d["grids"] = {args.algorithm: vals}
    if args.snr:
        d["snr"] = _flat(args.snr)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out:
        d["out"] = args.out
    cfg = run_config_from_dict(d)
    out = Path(cfg.out or "sweep_out")

    tty = sys.stderr.isatty()

    def progress(n, total):
        if tty:
            print(f"\r{n}/{total} cells", end="" if n < total else "\n", file=sys.stderr, flush=True)
        elif n == total or n % max(1, total // 10) == 0:
            print(f"{n}/{total} cells", file=sys.stderr, flush=True)

    result = run_sweep(cfg, jobs=args.jobs, progress=progress)
    write_results(result, out)
    print(f"{len(result.records)} records, {len(result.summary)} summary rows -> {out}", file=sys.stderr)
    if result.failures:
        print(f"{len(result.failures)} cell(s) failed; see {out / 'failures.json'}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ------------------------------------------------------------------ cubes

def _normalize_cube(cube: LabeledCube, how):
    if how == "none":
        return cube
    scale = float(np.max(cube.image))
    if not scale > 0:
        raise EmptyDataError("cube has no positive values to normalize by")
    return LabeledCube(cube.image / scale, cube.labels, cube.foreground, cube.label_names)


def cmd_oracle(args):
    cube = _normalize_cube(read_cube(args.cubefile), args.normalize)
    r = oracle_reference(cube, max_dist=args.max_dist, top_k=args.top_k, detailed=True)
    _emit({"f_ref": [float(x) for x in r.f_ref], "n_candidates": r.n_candidates,
           "flooring_events": r.flooring_events}, args.out, "oracle.json")
    return EXIT_OK


def cmd_patches(args):
    cube = _normalize_cube(read_cube(args.cubefile), args.normalize)
    W, H, _ = cube.shape
    if args.window < 1 or args.stride < 1:
        raise UsageError("--window and --stride must be positive")
    if args.window > min(W, H):
        raise UsageError(f"--window {args.window} exceeds the {W} x {H} image")
    bag, info = sample_patches(cube, args.window, args.stride, return_info=True)
    dest = Path(args.out or ".") / "patches"
    write_bag(dest, bag)
    print(f"kept {len(info['kept'])} windows, discarded {len(info['discarded'])}")
    return EXIT_OK


# ------------------------------------------------------------------ eval

def cmd_eval(args):
    src = Path(args.records)
    if src.is_dir():
        src = src / "records.csv"
    records = read_records(src)
    if not records:
        raise EmptyDataError(f"{src} holds no records")
    rows = write_summary(records, Path(args.out)) if args.out else median_by(records)
    for r in rows:
        print(f"{r['algorithm']:10s} {r['hyperparam']:<10g} snr={r['snr']:<10g} median={r['median']:.6g} "
              f"n={r['count']} failed={r['failed']}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="fgextract", description="Foreground signature extraction from bags of patches.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, out=True):
        if seed:
            sp.add_argument("--seed", type=int, help="master seed (nonnegative)")
        if out:
            sp.add_argument("--out", help="output directory")

    g = sub.add_parser("gen", help="synthesize bags")
    g.add_argument("--config", help="run configuration JSON (uses snr, n_bags, synth, seed)")
    g.add_argument("--snr", type=_floats, action="append", help="comma-separated SNR list")
    common(g)
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="fit one bag")
    f.add_argument("bagfile")
    f.add_argument("--algorithm", choices=ALGORITHMS)
    f.add_argument("--lambda", dest="lam", type=_floats, action="append", help="regularization weight(s)")
    f.add_argument("--alpha", type=int, help="endpoint removal count per side")
    f.add_argument("--iters", type=int, help="iteration budget")
    common(f)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("sweep", help="run a benchmark grid")
    s.add_argument("--config", help="run configuration JSON")
    s.add_argument("--algorithm", choices=ALGORITHMS, help="sweep one algorithm (overrides the config grids)")
    s.add_argument("--lambda", dest="lam", type=_floats, action="append", help="weight grid for --algorithm")
    s.add_argument("--alpha", type=int, help="endpoint removal count for --algorithm epfit")
    s.add_argument("--snr", type=_floats, action="append", help="comma-separated SNR list")
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    common(s)
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle", help="reference signature from a labeled cube")
    o.add_argument("cubefile")
    o.add_argument("--max-dist", type=float, default=10.0, help="pixel-pair distance limit (strict)")
    o.add_argument("--top-k", type=int, default=10, help="lowest-volume candidates to average")
    o.add_argument("--normalize", choices=("none", "max"), default="none",
                   help="divide the cube by its maximum before use")
    common(o, seed=False)
    o.set_defaults(func=cmd_oracle)

    w = sub.add_parser("patches", help="cut a labeled cube into label-pure windows")
    w.add_argument("cubefile")
    w.add_argument("--window", type=int, default=12, help="square window side in pixels")
    w.add_argument("--stride", type=int, default=1)
    w.add_argument("--normalize", choices=("none", "max"), default="none")
    common(w, seed=False)
    w.set_defaults(func=cmd_patches)

    e = sub.add_parser("eval", help="medians and curves from saved records")
    e.add_argument("records", help="records.csv / records.json or a sweep output directory")
    common(e, seed=False)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is not None and args.seed < 0:
        parser.error("--seed must be nonnegative")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"fgextract: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        print(f"fgextract: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except EmptyDataError as e:
        print(f"fgextract: {e}", file=sys.stderr)
        return EXIT_EMPTY
    except NumericError as e:
        print(f"fgextract: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FGExtractError, OSError) as e:
        print(f"fgextract: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
