"""Unit-norm identity embeddings and their exponentially smoothed track state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - dot product of unit vectors; 0 for identical, 2 for opposite directions."""
    return float(1.0 - np.dot(a, b))


@dataclass
class AppearanceState:
    """Smoothed embedding of a tracklet. `smoothed` stays unit-norm."""

    smoothed: np.ndarray
    alpha: float = 0.9

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        self.smoothed = normalize(self.smoothed)

    def copy(self) -> "AppearanceState":
        return AppearanceState(self.smoothed.copy(), self.alpha)


def ema_update(state: AppearanceState, feat: np.ndarray) -> AppearanceState:
    """Blend the new observation into the track embedding, then renormalize.

    alpha = 1 keeps the old embedding (a fixed point), alpha = 0 adopts the
    observation outright.
    """
    blended = state.alpha * state.smoothed + (1.0 - state.alpha) * np.asarray(feat, dtype=float)
    return AppearanceState(normalize(blended), state.alpha)
