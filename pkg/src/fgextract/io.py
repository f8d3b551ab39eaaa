"""On-disk formats: bag files, cube files and sweep run configurations.

A bag file is a JSON manifest ``<stem>.json`` next to a little-endian
float64 payload ``<stem>.bin``. The payload holds every patch column-major
(band index fastest), optionally followed by the ground truth: ``f``, then
``v_1 .. v_K``, then ``C_1 .. C_K`` each row-major ``2 x N_k``.

A cube file is a JSON header ``<stem>.json`` next to ``<stem>.bin`` holding,
in order: the image as little-endian float32 band-interleaved-by-pixel, one
little-endian uint16 label per pixel, and one uint8 foreground flag per
pixel. Pixels are stored scan line by scan line (x fastest).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .model import ModelParams, PatchSet
from .scene import LabeledCube

__all__ = [
    "BAG_FORMAT_VERSION",
    "CUBE_FORMAT_VERSION",
    "BagFile",
    "bag_payload_size",
    "write_bag",
    "read_bag",
    "write_cube",
    "read_cube",
    "RunConfig",
    "load_run_config",
    "run_config_from_dict",
]

BAG_FORMAT_VERSION = 1
CUBE_FORMAT_VERSION = 1
_F64 = np.dtype("<f8")
_F32 = np.dtype("<f4")
_U16 = np.dtype("<u2")


def _paths(path):
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".json", ".bin") else p
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


@dataclass
class BagFile:
    bag: PatchSet
    truth: ModelParams | None = None


def bag_payload_size(M, sizes, truth: bool) -> int:
    n = sum(sizes)
    count = M * n + ((M + len(sizes) * M + 2 * n) if truth else 0)
    return 8 * count


def write_bag(path, bag: PatchSet, truth: ModelParams | None = None):
    """Write ``bag`` (and optional truth) as ``<stem>.json`` + ``<stem>.bin``."""
    mpath, bpath = _paths(path)
    manifest = {
        "format_version": BAG_FORMAT_VERSION,
        "M": bag.M,
        "K": bag.K,
        "patch_sizes": bag.sizes,
        "ground_truth_present": truth is not None,
    }
    parts = [Y.T.ravel() for Y in bag]
    if truth is not None:
        if truth.K != bag.K or truth.M != bag.M or [c.shape[1] for c in truth.C] != bag.sizes:
            raise FormatError("ground truth does not match the bag shape")
        parts += [truth.f] + list(truth.v) + [c.ravel() for c in truth.C]
    payload = np.concatenate(parts).astype(_F64).tobytes()
    mpath.parent.mkdir(parents=True, exist_ok=True)
    mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    bpath.write_bytes(payload)
    return mpath, bpath


def _manifest(mpath):
    try:
        m = json.loads(Path(mpath).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{mpath}: manifest is not valid JSON ({e.msg})", offset=e.pos) from None
    if not isinstance(m, dict):
        raise FormatError(f"{mpath}: manifest must be a JSON object", offset=0)
    return m


def read_bag(path) -> BagFile:
    mpath, bpath = _paths(path)
    m = _manifest(mpath)
    for key in ("format_version", "M", "K", "patch_sizes", "ground_truth_present"):
        if key not in m:
            raise FormatError(f"{mpath}: manifest lacks {key!r}")
    if m["format_version"] != BAG_FORMAT_VERSION:
        raise FormatError(f"{mpath}: unsupported format_version {m['format_version']}")
    M, K, sizes, has_truth = int(m["M"]), int(m["K"]), [int(n) for n in m["patch_sizes"]], bool(m["ground_truth_present"])
    if len(sizes) != K or M < 1 or any(n < 1 for n in sizes):
        raise FormatError(f"{mpath}: inconsistent M, K or patch_sizes")
    raw = Path(bpath).read_bytes()
    want = bag_payload_size(M, sizes, has_truth)
    if len(raw) != want:
        raise FormatError(f"{bpath}: payload is {len(raw)} bytes, expected {want}", offset=min(len(raw), want))
    data = np.frombuffer(raw, dtype=_F64).astype(float)
    pos = 0
    patches = []
    for n in sizes:
        patches.append(data[pos : pos + M * n].reshape(n, M).T.copy())
        pos += M * n
    truth = None
    if has_truth:
        f = data[pos : pos + M].copy()
        pos += M
        v = []
        for _ in range(K):
            v.append(data[pos : pos + M].copy())
            pos += M
        C = []
        for n in sizes:
            C.append(data[pos : pos + 2 * n].reshape(2, n).copy())
            pos += 2 * n
        truth = ModelParams(f, v, C)
    return BagFile(PatchSet(patches), truth)


def write_cube(path, cube: LabeledCube):
    mpath, bpath = _paths(path)
    W, H, M = cube.image.shape
    names = list(cube.label_names) or [f"label{i}" for i in range(int(cube.labels.max()) + 1)]
    header = {
        "format_version": CUBE_FORMAT_VERSION,
        "width": W,
        "height": H,
        "bands": M,
        "label_names": names,
    }
    # (W, H, M) -> scan lines: y outer, x inner
    img = np.transpose(cube.image, (1, 0, 2)).astype(_F32).tobytes()
    lab = cube.labels.T.astype(_U16).tobytes()
    fg = cube.foreground.T.astype(np.uint8).tobytes()
    mpath.parent.mkdir(parents=True, exist_ok=True)
    mpath.write_text(json.dumps(header, indent=1) + "\n")
    bpath.write_bytes(img + lab + fg)
    return mpath, bpath


def read_cube(path) -> LabeledCube:
    mpath, bpath = _paths(path)
    h = _manifest(mpath)
    for key in ("format_version", "width", "height", "bands", "label_names"):
        if key not in h:
            raise FormatError(f"{mpath}: header lacks {key!r}")
    if h["format_version"] != CUBE_FORMAT_VERSION:
        raise FormatError(f"{mpath}: unsupported format_version {h['format_version']}")
    W, H, M = int(h["width"]), int(h["height"]), int(h["bands"])
    npx = W * H
    raw = Path(bpath).read_bytes()
    sizes = (4 * npx * M, 2 * npx, npx)
    if len(raw) != sum(sizes):
        raise FormatError(f"{bpath}: payload is {len(raw)} bytes, expected {sum(sizes)}", offset=min(len(raw), sum(sizes)))
    a, b = sizes[0], sizes[0] + sizes[1]
    img = np.frombuffer(raw[:a], dtype=_F32).reshape(H, W, M).transpose(1, 0, 2).copy()
    lab = np.frombuffer(raw[a:b], dtype=_U16).reshape(H, W).T.copy()
    flags = np.frombuffer(raw[b:], dtype=np.uint8).reshape(H, W).T
    if np.any(flags > 1):
        off = b + int(np.flatnonzero(flags.T.ravel() > 1)[0])
        raise FormatError(f"{bpath}: foreground flag must be 0 or 1", offset=off)
    if lab.size and int(lab.max()) >= len(h["label_names"]):
        raise FormatError(f"{bpath}: label id {int(lab.max())} has no name", offset=a)
    return LabeledCube(img, lab, flags.astype(bool), tuple(h["label_names"]))


# ---------------------------------------------------------------- run config

_ALGORITHMS = ("minvolfit", "epfit", "minvolnmf")


@dataclass
class RunConfig:
    """A full experiment grid.

    ``grids`` maps each algorithm to its hyperparameter list (``lam`` for the
    two regularized methods, the per-side removal count for ``epfit``).
    """

    grids: dict
    snr: list
    n_bags: int = 20
    seed: int = 0
    synth: dict = field(default_factory=lambda: dict(K=10, N=25, M=30, r=1.0, p=0.5, is_strict=True))
    iterations: dict = field(default_factory=lambda: dict(minvolfit=1_000_000, epfit=50_000, minvolnmf=50_000))
    nmf_delta: float = 0.1
    nmf_seeds: int = 1
    minvolfit_normalize: bool = True
    minvolfit_continuation: bool = True
    continuation_iters: int | None = None
    snr_subsets: dict = field(default_factory=dict)  # optional per-algorithm SNR restriction
    out: str | None = None

    def to_dict(self):
        return {
            "grids": self.grids,
            "snr": self.snr,
            "n_bags": self.n_bags,
            "seed": self.seed,
            "synth": self.synth,
            "iterations": self.iterations,
            "nmf_delta": self.nmf_delta,
            "nmf_seeds": self.nmf_seeds,
            "minvolfit_normalize": self.minvolfit_normalize,
            "minvolfit_continuation": self.minvolfit_continuation,
            "continuation_iters": self.continuation_iters,
            "snr_subsets": self.snr_subsets,
            "out": self.out,
        }


def _num_list(val, path, integer=False):
    if not isinstance(val, list) or not val:
        raise ConfigError("must be a nonempty list", path)
    out = []
    for i, x in enumerate(val):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x) and not x == math.inf:
            raise ConfigError("must be a number", f"{path}[{i}]")
        if integer and int(x) != x:
            raise ConfigError("must be an integer", f"{path}[{i}]")
        out.append(int(x) if integer else float(x))
    return out


def run_config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("run configuration must be a JSON object", "$")
    known = set(RunConfig.__dataclass_fields__)
    for key in d:
        if key not in known:
            raise ConfigError("unknown field", f"$.{key}")
    for key in ("grids", "snr"):
        if key not in d:
            raise ConfigError("required field missing", f"$.{key}")
    grids = d["grids"]
    if not isinstance(grids, dict) or not grids:
        raise ConfigError("must be a nonempty object", "$.grids")
    clean = {}
    for name, vals in grids.items():
        if name not in _ALGORITHMS:
            raise ConfigError(f"unknown algorithm (expected one of {', '.join(_ALGORITHMS)})", f"$.grids.{name}")
        clean[name] = _num_list(vals, f"$.grids.{name}", integer=(name == "epfit"))
        if any(x < 0 for x in clean[name]):
            raise ConfigError("values must be nonnegative", f"$.grids.{name}")
    snr = _num_list(d["snr"], "$.snr")
    if any(s <= 0 for s in snr):
        raise ConfigError("SNR values must be positive", "$.snr")
    kw = dict(grids=clean, snr=snr)
    for key in ("n_bags", "seed", "nmf_seeds"):
        if key in d:
            v = d[key]
            if isinstance(v, bool) or not isinstance(v, int) or v < (0 if key == "seed" else 1):
                raise ConfigError("must be a positive integer" if key != "seed" else "must be a nonnegative integer", f"$.{key}")
            kw[key] = v
    if "synth" in d:
        s = d["synth"]
        if not isinstance(s, dict):
            raise ConfigError("must be an object", "$.synth")
        allowed = {"K", "N", "M", "r", "p", "is_strict"}
        for key in s:
            if key not in allowed:
                raise ConfigError("unknown field", f"$.synth.{key}")
        kw["synth"] = {**RunConfig.__dataclass_fields__["synth"].default_factory(), **s}
    if "iterations" in d:
        it = d["iterations"]
        if not isinstance(it, dict):
            raise ConfigError("must be an object", "$.iterations")
        merged = RunConfig.__dataclass_fields__["iterations"].default_factory()
        for key, v in it.items():
            if key not in _ALGORITHMS:
                raise ConfigError("unknown algorithm", f"$.iterations.{key}")
            if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 1 or int(v) != v:
                raise ConfigError("must be a positive integer", f"$.iterations.{key}")
            merged[key] = int(v)
        kw["iterations"] = merged
    if "nmf_delta" in d:
        if not isinstance(d["nmf_delta"], (int, float)) or d["nmf_delta"] <= 0:
            raise ConfigError("must be positive", "$.nmf_delta")
        kw["nmf_delta"] = float(d["nmf_delta"])
    for key in ("minvolfit_normalize", "minvolfit_continuation"):
        if key in d:
            if not isinstance(d[key], bool):
                raise ConfigError("must be true or false", f"$.{key}")
            kw[key] = d[key]
    if d.get("continuation_iters") is not None:
        v = d["continuation_iters"]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError("must be a positive integer", "$.continuation_iters")
        kw["continuation_iters"] = v
    if "snr_subsets" in d:
        sub = d["snr_subsets"]
        if not isinstance(sub, dict):
            raise ConfigError("must be an object", "$.snr_subsets")
        for key, vals in sub.items():
            if key not in _ALGORITHMS:
                raise ConfigError("unknown algorithm", f"$.snr_subsets.{key}")
            _num_list(vals, f"$.snr_subsets.{key}")
        kw["snr_subsets"] = {k: [float(x) for x in v] for k, v in sub.items()}
    if d.get("out") is not None:
        if not isinstance(d["out"], str):
            raise ConfigError("must be a string", "$.out")
        kw["out"] = d["out"]
    return RunConfig(**kw)


def load_run_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno} column {e.colno}", str(path)) from None
    return run_config_from_dict(d)
