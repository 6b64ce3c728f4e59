"""Input validation helpers shared across the package."""

from __future__ import annotations

import zlib

import numpy as np


def freeze_array(a, dtype=float) -> np.ndarray:
    """Copy `a` into a read-only ndarray so value objects stay immutable."""
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def check_returns(X) -> np.ndarray:
    """Coerce a returns panel to a finite float64 (n, m) array.

    Accepts a :class:`~portlearn.core.ReturnsMatrix` or anything array-like.
    """
    from .core import ReturnsMatrix

    if isinstance(X, ReturnsMatrix):
        return X.data
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2:
        raise ValueError("returns must be a 2-d array of shape (n_periods, n_assets)")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("returns need at least one period and one asset")
    if not np.all(np.isfinite(arr)):
        raise ValueError("returns must be finite")
    return arr


def labels_of(X):
    """Asset labels of a ReturnsMatrix, or None for plain arrays."""
    from .core import ReturnsMatrix

    if isinstance(X, ReturnsMatrix):
        return X.asset_labels
    return None


def canonical_seed(*parts) -> list[int]:
    """Map an integer seed path to the nonnegative entropy numpy expects."""
    return [int(p) % (2**63) for p in parts]


def rng_from(*parts) -> np.random.Generator:
    """Deterministic generator derived from a seed path of integers.

    Results depend only on the path values, never on call order, so work
    split across replications/windows can run in any schedule.
    """
    return np.random.default_rng(canonical_seed(*parts))


def derive_seed(*parts) -> int:
    """Collapse a seed path into one nonnegative int seed."""
    ss = np.random.SeedSequence(canonical_seed(*parts))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def label_key(label: str) -> int:
    """Stable integer key for a strategy label, for seed derivation."""
    return zlib.crc32(label.encode("utf-8"))
