"""Estimator wrapper around training, scale calibration and generation."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_cube_pair, check_positive
from .data.cubes import HindcastCube, ObsCube, Split
from .infer import DEFAULT_SCALES, calibrate_scale, generate_ensembles
from .model import NetConfig
from .train import TrainConfig, prepare_pairs, train


class CVAECorrector(BaseEstimator):
    """Probabilistic bias correction with a conditional VAE.

    Parameters
    ----------
    net_config : NetConfig, optional
        Network hyperparameters. ``grid_shape`` is replaced by the folded
        shape of the training cube.
    train_config : TrainConfig, optional
    n_members : int
        Members generated per (init, lead) by :meth:`predict`.
    candidate_scales : sequence of float
        Prior standard-deviation scales tried by :meth:`calibrate`.
    calibration_members : int
        Members per pair used while calibrating.
    rmse_tolerance : float
        Relative RMSE increase over scale 1 tolerated during calibration.
    calibrate : bool
        Whether :meth:`fit` calibrates the prior scale on the validation pairs.
    seed : int
        Seed of the latent draws at inference.

    Attributes
    ----------
    model_ : CVAE
    log_ : list of dict
        Per-epoch loss components.
    scale_ : float
        Selected prior scale (1.0 when not calibrated).
    calibration_ : CalibrationResult or None
    """

    def __init__(
        self,
        net_config: NetConfig | None = None,
        train_config: TrainConfig | None = None,
        n_members: int = 100,
        candidate_scales=DEFAULT_SCALES,
        calibration_members: int = 100,
        rmse_tolerance: float = 0.05,
        calibrate: bool = True,
        seed: int = 0,
    ):
        self.net_config = net_config
        self.train_config = train_config
        self.n_members = n_members
        self.candidate_scales = candidate_scales
        self.calibration_members = calibration_members
        self.rmse_tolerance = rmse_tolerance
        self.calibrate = calibrate
        self.seed = seed

    def fit(self, X: HindcastCube, y: ObsCube, split: Split, progress=None):
        check_cube_pair(X, y)
        check_positive("n_members", self.n_members)
        check_positive("calibration_members", self.calibration_members)
        net = self.net_config or NetConfig()
        net = NetConfig(**{**net.to_dict(), "grid_shape": X.grid.folded_shape})
        cfg = self.train_config or TrainConfig()
        result = train(prepare_pairs(X, y, split.train), prepare_pairs(X, y, split.val), net, cfg, progress)
        self.model_ = result.model
        self.log_ = result.log
        self.best_epoch_ = result.best_epoch
        self.scale_ = 1.0
        self.calibration_ = None
        if self.calibrate:
            self.calibrate_scale(X, y, split.val)
        return self

    def calibrate_scale(self, X: HindcastCube, y: ObsCube, val_pairs):
        check_is_fitted(self, "model_")
        self.calibration_ = calibrate_scale(
            self.model_, X, y, val_pairs, self.candidate_scales,
            n_members=self.calibration_members, rmse_tolerance=self.rmse_tolerance, seed=self.seed,
        )
        self.scale_ = self.calibration_.scale
        return self.calibration_

    def predict(self, X: HindcastCube, pairs, scale: float | None = None, n_members: int | None = None):
        """Corrected ensemble cube for ``pairs`` and the pairs re-indexed into it."""
        check_is_fitted(self, "model_")
        s = self.scale_ if scale is None else float(scale)
        cubes, local = generate_ensembles(self.model_, X, np.asarray(pairs), n_members or self.n_members, (s,), self.seed)
        return cubes[s], local
