"""Lead-dependent climatological mean bias correction (the badj benchmark)."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_cube_pair, check_pairs
from .data.cubes import HindcastCube, ObsCube


class EmptyStratumError(ValueError):
    pass


def climatological_bias(hindcast: HindcastCube, obs: ObsCube, train_idx=None) -> np.ndarray:
    """Mean error of the ensemble mean per (target calendar month, lead).

    Returns
    -------
    ndarray, shape (12, n_lead, n_lat, n_lon)
        ``bias[m, l - 1]`` averages ``ensemble_mean - obs`` over training
        pairs verifying in calendar month ``m`` at lead ``l``.
    """
    check_cube_pair(hindcast, obs)
    pairs = check_pairs(train_idx, hindcast)
    n_lead = hindcast.n_lead
    total = np.zeros((12, n_lead, *hindcast.grid.shape))
    count = np.zeros((12, n_lead), dtype=np.int64)
    for t, lead in pairs:
        target = int(hindcast.inits[t]) + int(lead)
        err = hindcast.values[t, lead - 1].mean(axis=0, dtype=np.float64) - obs.month(target)
        total[target % 12, lead - 1] += err
        count[target % 12, lead - 1] += 1
    empty = np.argwhere(count == 0)
    if empty.size:
        listed = ", ".join(f"(month={m}, lead={l + 1})" for m, l in empty[:10])
        raise EmptyStratumError(f"{len(empty)} empty (target month, lead) strata: {listed}")
    return total / count[:, :, None, None]


def badj_adjust(hindcast: HindcastCube, bias: np.ndarray) -> HindcastCube:
    """Subtract the stratified bias from every member and clip to [0, 1]."""
    expected = (12, hindcast.n_lead, *hindcast.grid.shape)
    if bias.shape != expected:
        raise ValueError(f"bias shape {bias.shape} != {expected}")
    moy = hindcast.targets() % 12
    per_pair = bias[moy, np.arange(hindcast.n_lead)[None, :]]
    adjusted = np.clip(hindcast.values - per_pair[:, :, None].astype(np.float32), 0.0, 1.0)
    return hindcast.with_values(adjusted, kind="badj")


class ClimatologyCorrector(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`climatological_bias` / :func:`badj_adjust`.

    ``fit(hindcast, obs, train_idx=...)`` learns ``bias_``; ``transform``
    returns the adjusted :class:`HindcastCube`.
    """

    def fit(self, X: HindcastCube, y: ObsCube, train_idx=None):
        self.bias_ = climatological_bias(X, y, train_idx)
        self.n_lead_ = X.n_lead
        return self

    def transform(self, X: HindcastCube) -> HindcastCube:
        check_is_fitted(self, "bias_")
        return badj_adjust(X, self.bias_)

    def fit_transform(self, X, y=None, train_idx=None):
        return self.fit(X, y, train_idx).transform(X)
