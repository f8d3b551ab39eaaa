"""Angular error measures and median summaries for the evaluation protocol."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, InvalidInputError

__all__ = [
    "EvalRecord",
    "angular_difference",
    "nmse",
    "angle_from_nmse",
    "signature_error",
    "lower_median",
    "median_by",
]


def _unit(u):
    u = np.asarray(u, dtype=float)
    n = np.linalg.norm(u)
    if n == 0 or not np.isfinite(n):
        raise DomainError("angle is undefined for a zero or non-finite vector")
    return u / n


def angular_difference(u, v) -> float:
    """Angle between two vectors in degrees.

    Uses ``2 atan2(|a - b|, |a + b|)`` on the unit vectors. It agrees with
    ``arccos`` of the clamped cosine but keeps full relative precision for
    nearly parallel inputs, where ``arccos`` bottoms out near 1e-6 degrees.
    """
    a, b = _unit(u), _unit(v)
    return float(np.degrees(2.0 * np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b))))


def nmse(u, v) -> float:
    """``||u/||u|| - v/||v|| ||^2``, between 0 and 4."""
    d = _unit(u) - _unit(v)
    return float(d @ d)


def angle_from_nmse(m) -> float:
    """Angle in degrees from a normalized MSE: ``2 arcsin(sqrt(m) / 2)``."""
    m = float(m)
    if not 0.0 <= m <= 4.0:
        raise DomainError(f"normalized MSE must lie in [0, 4], got {m}")
    return float(np.degrees(2.0 * np.arcsin(np.sqrt(m) / 2.0)))


def signature_error(f_est, f_true) -> float:
    """Smaller of the angles from ``f_true`` to ``f_est`` and to ``1 / f_est``."""
    f_est = np.asarray(f_est, dtype=float)
    f_true = np.asarray(f_true, dtype=float)
    if np.any(f_est <= 0) or np.any(f_true <= 0):
        raise DomainError("signature_error needs strictly positive vectors")
    return min(angular_difference(f_est, f_true), angular_difference(1.0 / f_est, f_true))


@dataclass(frozen=True)
class EvalRecord:
    algorithm: str
    hyperparam: float
    snr: float
    bag_id: int
    seed: int
    angular_difference_deg: float

    def __post_init__(self):
        a = self.angular_difference_deg
        if not (np.isnan(a) or 0.0 <= a <= 180.0):
            raise InvalidInputError(f"angle {a} outside [0, 180]")

    def as_dict(self):
        return asdict(self)


def lower_median(values: Sequence[float]) -> float:
    """Median that picks the lower middle element for even counts."""
    vals = sorted(values)
    if not vals:
        raise InvalidInputError("median of an empty group")
    return float(vals[(len(vals) - 1) // 2])


def median_by(records: Iterable[EvalRecord], keys=("algorithm", "hyperparam", "snr")):
    """Group records by ``keys`` and summarize each group.

    Returns a list of dicts (sorted by key) holding the key fields, ``median``
    (lower-middle convention) and ``count``. NaN angles mark failed cells and
    are excluded from the median but counted under ``failed``.
    """
    groups = defaultdict(list)
    for r in records:
        groups[tuple(getattr(r, k) for k in keys)].append(r.angular_difference_deg)
    rows = []
    for key in sorted(groups):
        vals = groups[key]
        ok = [x for x in vals if not np.isnan(x)]
        row = dict(zip(keys, key))
        row["median"] = lower_median(ok) if ok else float("nan")
        row["count"] = len(ok)
        row["failed"] = len(vals) - len(ok)
        rows.append(row)
    return rows
