"""Monte-Carlo sweep over algorithms, hyperparameters, SNR levels and bags.

The unit of work is one (SNR, bag) cell: the bag is generated once and every
algorithm setting runs on it. Cells share nothing, so they can run in worker
processes; results are sorted by key before they are written, which makes
the output independent of scheduling.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baseline import NmfConfig, minvol_nmf
from .datagen import SynthConfig, generate_bag
from .epfit import EPFitConfig, epfit_detailed
from .errors import FGExtractError
from .io import RunConfig
from .metrics import EvalRecord, median_by, signature_error
from .minvolfit import MinVolConfig, minvolfit

__all__ = [
    "derive_seed",
    "evaluation_floor",
    "run_cell",
    "run_sweep",
    "SweepOutput",
    "write_results",
    "records_to_csv",
    "read_records",
]

_ALGO_CODE = {"minvolfit": 1, "epfit": 2, "minvolnmf": 3}


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed from a tuple of nonnegative integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def evaluation_floor(f):
    """Floor a nonnegative estimate at ``1e-12 * max`` so its inverse is defined.

    The regularized fit constrains ``f`` only to the closed orthant, so exact
    zeros are legitimate outputs; the error measure needs strict positivity.
    """
    f = np.asarray(f, dtype=float)
    return np.maximum(f, 1e-12 * max(float(f.max()), 1e-300))


@dataclass
class SweepOutput:
    records: list
    failures: list = field(default_factory=list)  # (algorithm, hyperparam, snr, bag_id, message)

    @property
    def summary(self):
        return median_by(self.records)


def _synth(cfg: RunConfig, b: int, snr_index: int, snr: float) -> SynthConfig:
    return SynthConfig(
        seed=derive_seed(cfg.seed, 0, b),
        noise_seed=derive_seed(cfg.seed, 1, b, snr_index),
        snr=snr,
        **cfg.synth,
    )


def _wants(cfg: RunConfig, algo: str, snr: float) -> bool:
    sub = cfg.snr_subsets.get(algo)
    return sub is None or any(math.isclose(snr, s, rel_tol=1e-9) for s in sub)


def run_cell(cfg: RunConfig, snr_index: int, b: int):
    """All algorithm settings on bag ``b`` at SNR index ``snr_index``."""
    snr = cfg.snr[snr_index]
    bag, truth = generate_bag(_synth(cfg, b, snr_index, snr))
    f_true = truth.params.f
    recs, fails = [], []

    def add(algo, hp, seed, fn):
        try:
            err = signature_error(evaluation_floor(fn()), f_true)
        except (FGExtractError, FloatingPointError, np.linalg.LinAlgError) as e:
            fails.append((algo, float(hp), snr, b, f"{type(e).__name__}: {e}"))
            err = float("nan")
        recs.append(EvalRecord(algo, float(hp), snr, b, seed, err))

    if "epfit" in cfg.grids and _wants(cfg, "epfit", snr):
        seed = derive_seed(cfg.seed, 2, b, snr_index, _ALGO_CODE["epfit"])
        inner_cfg = MinVolConfig(n_iters=cfg.iterations["epfit"], seed=seed, skip_rank_check=True)
        inner = None
        try:
            inner = minvolfit(bag, inner_cfg)
        except FGExtractError as e:
            for alpha in cfg.grids["epfit"]:
                fails.append(("epfit", float(alpha), snr, b, f"{type(e).__name__}: {e}"))
                recs.append(EvalRecord("epfit", float(alpha), snr, b, seed, float("nan")))
        if inner is not None:
            for alpha in cfg.grids["epfit"]:
                ecfg = EPFitConfig(inner=inner_cfg, removal_count=int(alpha))
                add("epfit", alpha, seed, lambda: epfit_detailed(bag, ecfg, inner=inner).f)

    if "minvolfit" in cfg.grids and _wants(cfg, "minvolfit", snr):
        seed = derive_seed(cfg.seed, 2, b, snr_index, _ALGO_CODE["minvolfit"])
        n_first = cfg.iterations["minvolfit"]
        n_next = cfg.continuation_iters or n_first
        lams = sorted(cfg.grids["minvolfit"], reverse=True)
        init = "uniform_random"
        for i, lam in enumerate(lams):
            mcfg = MinVolConfig(
                lam=lam,
                n_iters=n_first if (i == 0 or not cfg.minvolfit_continuation) else n_next,
                seed=seed,
                init=init,
                skip_rank_check=True,
                normalize_data=cfg.minvolfit_normalize,
            )
            box = {}

            def fit(mcfg=mcfg, box=box):
                box["res"] = minvolfit(bag, mcfg)
                return box["res"].params.f

            add("minvolfit", lam, seed, fit)
            if cfg.minvolfit_continuation and "res" in box:
                init = box["res"].params

    if "minvolnmf" in cfg.grids and _wants(cfg, "minvolnmf", snr):
        seed = derive_seed(cfg.seed, 2, b, snr_index, _ALGO_CODE["minvolnmf"])
        for lam in cfg.grids["minvolnmf"]:
            def nmf(lam=lam):
                best = None
                for s in range(cfg.nmf_seeds):
                    ncfg = NmfConfig(lam=lam, delta=cfg.nmf_delta, n_iters=cfg.iterations["minvolnmf"], seed=seed + s)
                    res = minvol_nmf(bag.concat(), ncfg)
                    if best is None or res.objective < best.objective:
                        best = res
                W = np.maximum(best.W, cfg.nmf_delta)
                return W[:, 0] / W[:, 1]

            add("minvolnmf", lam, seed, nmf)
    return recs, fails


def _cell_job(args):
    cfg_dict, si, b = args
    from .io import run_config_from_dict

    try:
        return run_cell(run_config_from_dict(cfg_dict), si, b)
    except Exception as e:  # keep the pool alive; report the cell
        return [], [("*", float("nan"), None, b, "".join(traceback.format_exception_only(type(e), e)).strip())]


def run_sweep(cfg: RunConfig, jobs: int = 1, progress=None) -> SweepOutput:
    """Run every (SNR, bag) cell; ``progress`` is called with (done, total)."""
    cells = [(si, b) for si in range(len(cfg.snr)) for b in range(cfg.n_bags)]
    recs, fails = [], []
    if jobs <= 1:
        for n, (si, b) in enumerate(cells, 1):
            r, f = run_cell(cfg, si, b)
            recs += r
            fails += f
            if progress:
                progress(n, len(cells))
    else:
        d = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for n, (r, f) in enumerate(pool.map(_cell_job, [(d, si, b) for si, b in cells]), 1):
                recs += r
                fails += f
                if progress:
                    progress(n, len(cells))
    recs.sort(key=lambda r: (r.algorithm, r.hyperparam, r.snr, r.bag_id))
    fails.sort(key=lambda x: tuple(str(v) for v in x))
    return SweepOutput(recs, fails)


# ------------------------------------------------------------------ output

_FIELDS = ["algorithm", "hyperparam", "snr", "bag_id", "seed", "angular_difference_deg"]


def records_to_csv(records) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_FIELDS)
    for r in records:
        w.writerow([r.algorithm, repr(r.hyperparam), repr(r.snr), r.bag_id, r.seed, repr(r.angular_difference_deg)])
    return buf.getvalue()


def read_records(path) -> list:
    """Load records written by :func:`write_results` (CSV or JSON)."""
    p = Path(path)
    if p.suffix == ".json":
        rows = json.loads(p.read_text())
        out = []
        for row in rows:
            err = row["angular_difference_deg"]
            out.append(EvalRecord(row["algorithm"], float(row["hyperparam"]), float(row["snr"]), int(row["bag_id"]),
                                  int(row["seed"]), float("nan") if err is None else float(err)))
        return out
    out = []
    with p.open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EvalRecord(row["algorithm"], float(row["hyperparam"]), float(row["snr"]),
                                  int(row["bag_id"]), int(row["seed"]), float(row["angular_difference_deg"])))
    return out


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def write_summary(records, out: Path):
    """Median table plus one two-column (SNR, median) file per curve."""
    out.mkdir(parents=True, exist_ok=True)
    rows = median_by(records)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["algorithm", "hyperparam", "snr", "median_deg", "count", "failed"])
    for r in rows:
        w.writerow([r["algorithm"], repr(r["hyperparam"]), repr(r["snr"]), repr(r["median"]), r["count"], r["failed"]])
    (out / "summary.csv").write_text(buf.getvalue())
    (out / "summary.json").write_text(json.dumps([{k: _json_safe(v) for k, v in r.items()} for r in rows], indent=1) + "\n")
    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    by_curve = {}
    for r in rows:
        by_curve.setdefault((r["algorithm"], r["hyperparam"]), []).append((r["snr"], r["median"]))
    for (algo, hp), pts in sorted(by_curve.items()):
        lines = ["snr,median_deg"] + [f"{s!r},{m!r}" for s, m in sorted(pts)]
        (curves / f"{algo}_{hp:g}.csv").write_text("\n".join(lines) + "\n")
    return rows


def write_results(result: SweepOutput, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(records_to_csv(result.records))
    (out / "records.json").write_text(
        json.dumps([{k: _json_safe(v) for k, v in r.as_dict().items()} for r in result.records], indent=1) + "\n"
    )
    write_summary(result.records, out)
    if result.failures:
        (out / "failures.json").write_text(json.dumps([list(f) for f in result.failures], indent=1) + "\n")
    return out
