"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .data.cubes import HindcastCube, ObsCube


def check_cube_pair(hindcast, obs):
    if not isinstance(hindcast, HindcastCube):
        raise TypeError(f"expected HindcastCube, got {type(hindcast).__name__}")
    if not isinstance(obs, ObsCube):
        raise TypeError(f"expected ObsCube, got {type(obs).__name__}")
    if not hindcast.grid.same_geometry(obs.grid):
        raise ValueError("hindcast and obs grids differ")
    if not np.array_equal(hindcast.inits, obs.inits):
        raise ValueError("hindcast and obs cubes have different initializations")
    if hindcast.n_lead != obs.n_lead:
        raise ValueError(f"lead count mismatch: {hindcast.n_lead} vs {obs.n_lead}")
    return hindcast, obs


def check_pairs(pairs, cube):
    """Validate an (n, 2) array of (init_index, lead) pairs against ``cube``."""
    if pairs is None:
        t, l = np.meshgrid(np.arange(len(cube.inits)), np.arange(1, cube.n_lead + 1), indexing="ij")
        return np.stack([t.ravel(), l.ravel()], axis=1)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (
        pairs[:, 0].min() < 0
        or pairs[:, 0].max() >= len(cube.inits)
        or pairs[:, 1].min() < 1
        or pairs[:, 1].max() > cube.n_lead
    ):
        raise IndexError("(init, lead) pairs out of range for this cube")
    return pairs


def check_positive(name, value):
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    return value
