"""Constant-velocity Kalman filter over (cx, cy, a, h) measurements.

State is 8-dimensional: the measurement vector plus its per-frame velocities.
Process and observation noise scale with the tracked height, except for the
aspect channel which uses small absolute constants; these follow the usual
pedestrian-tracker conventions and are configurable through KalmanParams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .geometry import BoxXYAH

# 0.95 chi-square quantile for 4 degrees of freedom; squared Mahalanobis
# distances above this are considered implausible associations.
GATE_CHI2_95_4DOF = 9.4877

_NDIM = 4

# Extrapolation floors: a shrinking box decays onto these instead of passing
# through zero, where the noise scales and the box conversions degenerate.
_MIN_ASPECT = 1e-2
_MIN_HEIGHT = 1.0


class GatingError(ValueError):
    """Raised when an innovation covariance is not positive definite."""


@dataclass
class KalmanParams:
    pos_weight: float = 1.0 / 20.0
    vel_weight: float = 1.0 / 160.0

    def __post_init__(self) -> None:
        if self.pos_weight <= 0 or self.vel_weight <= 0:
            raise ValueError("noise weights must be positive")


@dataclass
class MotionState:
    """Posterior mean (8,) and covariance (8, 8) of one tracked box."""

    mean: np.ndarray
    cov: np.ndarray

    def copy(self) -> "MotionState":
        return MotionState(self.mean.copy(), self.cov.copy())

    def xyah(self) -> BoxXYAH:
        cx, cy, a, h = self.mean[:_NDIM]
        return BoxXYAH(cx=float(cx), cy=float(cy), a=float(a), h=float(h))


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2.0


def _floor_size(mean: np.ndarray) -> np.ndarray:
    mean[2] = max(mean[2], _MIN_ASPECT)
    mean[3] = max(mean[3], _MIN_HEIGHT)
    return mean


class KalmanFilter:
    def __init__(self, params: KalmanParams | None = None):
        self.params = params or KalmanParams()
        self._motion_mat = np.eye(2 * _NDIM)
        for i in range(_NDIM):
            self._motion_mat[i, _NDIM + i] = 1.0
        self._update_mat = np.eye(_NDIM, 2 * _NDIM)

    def init(self, obs: BoxXYAH) -> MotionState:
        """New state at the observation with zero velocity and a wide covariance."""
        wp, wv = self.params.pos_weight, self.params.vel_weight
        mean = np.zeros(2 * _NDIM)
        mean[:_NDIM] = obs.as_array()
        h = obs.h
        std = [
            2 * wp * h, 2 * wp * h, 1e-2, 2 * wp * h,
            10 * wv * h, 10 * wv * h, 1e-5, 10 * wv * h,
        ]
        cov = np.diag(np.square(std))
        return MotionState(mean, cov)

    def _process_noise(self, h: float) -> np.ndarray:
        wp, wv = self.params.pos_weight, self.params.vel_weight
        std = [
            wp * h, wp * h, 1e-2, wp * h,
            wv * h, wv * h, 1e-5, wv * h,
        ]
        return np.diag(np.square(std))

    def _obs_noise(self, h: float) -> np.ndarray:
        wp = self.params.pos_weight
        std = [wp * h, wp * h, 1e-1, wp * h]
        return np.diag(np.square(std))

    def predict(self, state: MotionState) -> MotionState:
        F = self._motion_mat
        mean = _floor_size(F @ state.mean)
        cov = _symmetrize(F @ state.cov @ F.T + self._process_noise(state.mean[3]))
        return MotionState(mean, cov)

    def project(self, state: MotionState) -> tuple[np.ndarray, np.ndarray]:
        """Measurement-space mean and innovation covariance."""
        H = self._update_mat
        mean = H @ state.mean
        S = _symmetrize(H @ state.cov @ H.T + self._obs_noise(state.mean[3]))
        return mean, S

    def update(self, state: MotionState, obs: BoxXYAH) -> MotionState:
        proj_mean, S = self.project(state)
        H = self._update_mat
        try:
            chol = cho_factor(S, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
            raise GatingError(f"innovation covariance not positive definite: {exc}")
        gain = cho_solve(chol, (state.cov @ H.T).T, check_finite=False).T
        innovation = obs.as_array() - proj_mean
        mean = _floor_size(state.mean + gain @ innovation)
        cov = _symmetrize(state.cov - gain @ S @ gain.T)
        return MotionState(mean, cov)

    def mahalanobis(self, state: MotionState, obs: BoxXYAH) -> float:
        """Squared Mahalanobis distance of one observation."""
        return float(self.mahalanobis_many(state, obs.as_array()[None, :])[0])

    def mahalanobis_many(self, state: MotionState, obs: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis distances for an (N, 4) block of observations."""
        proj_mean, S = self.project(state)
        try:
            chol = cho_factor(S, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise GatingError(f"innovation covariance not positive definite: {exc}")
        diff = np.asarray(obs, dtype=float).reshape(-1, _NDIM) - proj_mean
        solved = cho_solve(chol, diff.T, check_finite=False)
        return np.einsum("in,ni->i", diff, solved)
