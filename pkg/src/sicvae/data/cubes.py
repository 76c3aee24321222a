"""Forecast-aligned hindcast and observation cubes plus temporal splitting.

Months are integers counted from January of ``EPOCH_YEAR`` (month 0), so
``m % 12`` is the calendar month with 0 = January.  A forecast initialized
at month ``t`` verifies at ``t + l`` for leads ``l = 1..n_lead``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..grid import PolarGrid

EPOCH_YEAR = 1980


def month_index(year: int, month: int) -> int:
    """Month counter for calendar ``year``/``month`` (1-based month)."""
    return (year - EPOCH_YEAR) * 12 + (month - 1)


def month_label(m: int) -> str:
    return f"{EPOCH_YEAR + m // 12:04d}-{m % 12 + 1:02d}"


@dataclass(eq=False)
class HindcastCube:
    """Ensemble forecasts shaped (init, lead, member, lat, lon); NaN on land."""

    inits: np.ndarray
    values: np.ndarray
    grid: PolarGrid
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inits = np.asarray(self.inits, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 5:
            raise ValueError(f"hindcast values must be 5-d, got shape {self.values.shape}")
        if self.values.shape[0] != len(self.inits):
            raise ValueError("values and inits disagree on the number of initializations")
        if self.values.shape[-2:] != self.grid.shape:
            raise ValueError(f"values spatial shape {self.values.shape[-2:]} != grid {self.grid.shape}")
        if self.n_member < 1:
            raise ValueError("hindcast needs at least one member")

    @property
    def n_lead(self) -> int:
        return self.values.shape[1]

    @property
    def n_member(self) -> int:
        return self.values.shape[2]

    @property
    def leads(self) -> np.ndarray:
        return np.arange(1, self.n_lead + 1)

    def targets(self) -> np.ndarray:
        """Target month of every (init, lead) pair, shape (T, L)."""
        return self.inits[:, None] + self.leads[None, :]

    def with_values(self, values, **meta) -> "HindcastCube":
        return HindcastCube(self.inits.copy(), values, self.grid, {**self.meta, **meta})

    def select_inits(self, index) -> "HindcastCube":
        """Sub-cube holding only the initializations at ``index``."""
        index = np.asarray(index, dtype=np.int64)
        return HindcastCube(self.inits[index], self.values[index], self.grid, dict(self.meta))


def pairs_to_months(pairs, inits) -> np.ndarray:
    """(init_index, lead) pairs to (init_month, lead) pairs."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return np.stack([np.asarray(inits, dtype=np.int64)[pairs[:, 0]], pairs[:, 1]], axis=1)


def pairs_from_months(month_pairs, inits) -> np.ndarray:
    """(init_month, lead) pairs to (init_index, lead) pairs for a cube with ``inits``."""
    month_pairs = np.asarray(month_pairs, dtype=np.int64).reshape(-1, 2)
    inits = np.asarray(inits, dtype=np.int64)
    lookup = {int(m): k for k, m in enumerate(inits)}
    missing = sorted({int(m) for m in month_pairs[:, 0]} - lookup.keys())
    if missing:
        raise KeyError(f"cube has no initialization for months {[month_label(m) for m in missing[:5]]}")
    idx = np.array([lookup[int(m)] for m in month_pairs[:, 0]], dtype=np.int64)
    return np.stack([idx, month_pairs[:, 1]], axis=1)


@dataclass(eq=False)
class ObsCube:
    """Observations stored once per calendar month.

    The forecast-aligned (init, lead, lat, lon) view is built on demand
    from the monthly record, so entries sharing a target month are
    identical by construction.
    """

    inits: np.ndarray
    months: np.ndarray
    monthly: np.ndarray
    grid: PolarGrid
    n_lead: int = 12
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inits = np.asarray(self.inits, dtype=np.int64)
        self.months = np.asarray(self.months, dtype=np.int64)
        self.monthly = np.asarray(self.monthly, dtype=np.float32)
        if self.monthly.shape != (len(self.months), *self.grid.shape):
            raise ValueError(f"monthly obs shape {self.monthly.shape} inconsistent with months/grid")
        if len(self.months) and np.any(np.diff(self.months) != 1):
            raise ValueError("observation months must be a contiguous monthly record")

    @property
    def leads(self) -> np.ndarray:
        return np.arange(1, self.n_lead + 1)

    def targets(self) -> np.ndarray:
        return self.inits[:, None] + self.leads[None, :]

    def available(self) -> np.ndarray:
        """(T, L) boolean: True where the target month lies in the record."""
        tg = self.targets()
        if not len(self.months):
            return np.zeros(tg.shape, dtype=bool)
        return (tg >= self.months[0]) & (tg <= self.months[-1])

    def month(self, m: int) -> np.ndarray:
        if not len(self.months) or not self.months[0] <= m <= self.months[-1]:
            raise KeyError(f"no observation for month {month_label(m)}")
        return self.monthly[m - self.months[0]]

    def at(self, t_index: int, lead: int) -> np.ndarray:
        return self.month(int(self.inits[t_index]) + lead)

    @property
    def values(self) -> np.ndarray:
        """Forecast-aligned view (T, L, lat, lon); NaN where no observation exists."""
        tg = self.targets()
        ok = self.available()
        idx = np.where(ok, tg - (self.months[0] if len(self.months) else 0), 0)
        out = self.monthly[idx] if len(self.months) else np.empty((*tg.shape, *self.grid.shape), np.float32)
        out = np.array(out, dtype=np.float32)
        out[~ok] = np.nan
        return out


def ensemble_mean(cube: HindcastCube) -> np.ndarray:
    """Member mean, shape (T, L, lat, lon); land stays NaN."""
    return cube.values.mean(axis=2, dtype=np.float64).astype(np.float32)


@dataclass(frozen=True)
class SplitSpec:
    """Last target month (inclusive) of the train, validation and test periods."""

    train_end: int
    val_end: int
    test_end: int

    def __post_init__(self):
        if not self.train_end < self.val_end < self.test_end:
            raise ValueError(
                f"split boundaries must increase: {self.train_end}, {self.val_end}, {self.test_end}"
            )

    @classmethod
    def paper_default(cls) -> "SplitSpec":
        return cls(month_index(2015, 12), month_index(2018, 12), month_index(2021, 12))


class EmptySplitError(ValueError):
    pass


@dataclass
class Split:
    """Index sets of (init_index, lead) pairs for each partition."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    dropped_no_obs: int = 0

    def __getitem__(self, name):
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
            "dropped_no_obs": self.dropped_no_obs,
        }

    @classmethod
    def from_dict(cls, d) -> "Split":
        def arr(x):
            return np.asarray(x, dtype=np.int64).reshape(-1, 2)

        return cls(arr(d["train"]), arr(d["val"]), arr(d["test"]), int(d.get("dropped_no_obs", 0)))


def temporal_split(hindcast: HindcastCube, obs: ObsCube, spec: SplitSpec) -> Split:
    """Partition (init, lead) pairs so that no later-period target leaks into training.

    A pair belongs to train when its target month is at or before
    ``train_end``; to validation when it was initialized after ``train_end``
    and verifies at or before ``val_end``; to test when initialized after
    ``val_end`` and verifying at or before ``test_end``.  Pairs without an
    observation are dropped and counted.
    """
    if not np.array_equal(hindcast.inits, obs.inits):
        raise ValueError("hindcast and obs cubes have different initializations")
    inits = hindcast.inits[:, None]
    targets = hindcast.targets()
    have_obs = obs.available()
    parts = {
        "train": targets <= spec.train_end,
        "val": (inits > spec.train_end) & (targets <= spec.val_end),
        "test": (inits > spec.val_end) & (targets <= spec.test_end),
    }
    bounds = {"train": spec.train_end, "val": spec.val_end, "test": spec.test_end}
    out = {}
    dropped = 0
    for name, sel in parts.items():
        dropped += int((sel & ~have_obs).sum())
        ti, li = np.nonzero(sel & have_obs)
        if ti.size == 0:
            raise EmptySplitError(f"{name} split is empty (boundary {month_label(bounds[name])})")
        out[name] = np.stack([ti, li + 1], axis=1).astype(np.int64)
    return Split(dropped_no_obs=dropped, **out)
