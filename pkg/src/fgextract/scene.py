"""Labeled hyperspectral cubes: window sampling and the label-based reference signature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionError, EmptyDataError, EmptyOracleError, InvalidInputError
from .model import PatchSet

__all__ = ["LabeledCube", "OracleResult", "sample_patches", "oracle_reference"]


@dataclass
class LabeledCube:
    """Image of shape ``(W, H, M)`` with a background label and a foreground
    flag per pixel. The label names the background material under the pixel;
    the flag marks pixels that contain any amount of foreground material."""

    image: np.ndarray
    labels: np.ndarray
    foreground: np.ndarray
    label_names: tuple = ()

    def __post_init__(self):
        self.image = np.asarray(self.image)
        self.labels = np.asarray(self.labels)
        self.foreground = np.asarray(self.foreground, dtype=bool)
        if self.image.ndim != 3:
            raise DimensionError("image must be W x H x M")
        if self.labels.shape != self.image.shape[:2] or self.foreground.shape != self.image.shape[:2]:
            raise DimensionError("labels and foreground flags must match the image grid")

    @property
    def shape(self):
        return self.image.shape


def _window_origins(W, H, window, stride):
    xs = range(0, W - window + 1, stride)
    ys = range(0, H - window + 1, stride)
    return [(x, y) for x in xs for y in ys]


def sample_patches(cube: LabeledCube, window: int = 12, stride: int = 1, return_info: bool = False):
    """Slide a square window over the scene and keep label-pure windows.

    Each kept window becomes one ``M x window**2`` patch whose columns are the
    window's pixels in row-major order. With ``return_info=True`` the result
    is ``(bag, info)`` where ``info`` lists kept and discarded window origins.
    """
    W, H, M = cube.image.shape
    if window < 1 or stride < 1:
        raise InvalidInputError("window and stride must be positive")
    if window > min(W, H):
        raise DimensionError(f"window {window} exceeds the {W} x {H} image")
    kept, dropped, patches = [], [], []
    for x, y in _window_origins(W, H, window, stride):
        lab = cube.labels[x : x + window, y : y + window]
        if np.any(lab != lab.flat[0]):
            dropped.append((x, y))
            continue
        block = cube.image[x : x + window, y : y + window, :].astype(float)
        patches.append(block.reshape(-1, M).T)
        kept.append((x, y))
    if not patches:
        raise EmptyDataError("every window straddles a background boundary")
    bag = PatchSet(patches)
    if return_info:
        return bag, {"kept": kept, "discarded": dropped}
    return bag


@dataclass
class OracleResult:
    f_ref: np.ndarray
    n_candidates: int
    flooring_events: int


_CHUNK = 100_000


def _candidates(pix, fi, bj, floor):
    den = pix[bj]
    low = den < floor
    return pix[fi] / np.where(low, floor, den), int(low.sum())


def _volumes(X):
    # rows are candidate vectors; zero rows get volume nan
    s = X.sum(axis=1)
    n2 = np.einsum("ij,ij->i", X, X)
    with np.errstate(invalid="ignore", divide="ignore"):
        return 1.0 - s * s / (X.shape[1] * n2)


def oracle_reference(cube: LabeledCube, max_dist: float = 10.0, top_k: int = 10,
                     floor: float = 1e-12, detailed: bool = False):
    """Reference foreground signature from labeled pixels.

    For every foreground pixel ``i`` and background pixel ``j`` closer than
    ``max_dist`` on the pixel grid, the candidate is ``X_i / X_j``. The
    ``top_k`` candidates with the lowest volume are averaged. Background
    entries below ``floor`` are floored and counted.
    """
    if top_k < 1:
        raise InvalidInputError("top_k must be at least 1")
    W, H, M = cube.image.shape
    grid = np.stack(np.meshgrid(np.arange(W), np.arange(H), indexing="ij"), axis=-1).reshape(-1, 2)
    pix = cube.image.reshape(-1, M).astype(float)
    fg = np.flatnonzero(cube.foreground.ravel())
    bg = np.flatnonzero(~cube.foreground.ravel())
    if fg.size == 0 or bg.size == 0:
        raise EmptyOracleError("the cube needs both foreground and background pixels")
    # query_ball_tree is inclusive, so shrink the radius by one ulp for "<"
    radius = np.nextafter(float(max_dist), -np.inf)
    near = cKDTree(grid[fg]).query_ball_tree(cKDTree(grid[bg]), radius)
    pairs = [(fg[a], bg[b]) for a, lst in enumerate(near) for b in sorted(lst)]
    if not pairs:
        raise EmptyOracleError(f"no foreground/background pair closer than {max_dist}")
    fi = np.array([p[0] for p in pairs])
    bj = np.array([p[1] for p in pairs])
    vol = np.empty(fi.size)
    n_floor = 0
    for a in range(0, fi.size, _CHUNK):
        cand, low = _candidates(pix, fi[a : a + _CHUNK], bj[a : a + _CHUNK], floor)
        vol[a : a + _CHUNK] = _volumes(cand)
        n_floor += low
    ok = np.isfinite(vol)
    if not np.any(ok):
        raise EmptyOracleError("every candidate is the zero vector")
    order = np.flatnonzero(ok)[np.argsort(vol[ok], kind="stable")][:top_k]
    cand, _ = _candidates(pix, fi[order], bj[order], floor)
    f_ref = cand.mean(axis=0)
    res = OracleResult(f_ref, int(ok.sum()), n_floor)
    return res if detailed else res.f_ref
