from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PARAMS = ("positions", "log_scales", "quats", "opacity_logits", "colors")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class GaussianCloud:
    """N anisotropic Gaussians; quaternions are (w, x, y, z)."""

    positions: np.ndarray  # (N, 3)
    log_scales: np.ndarray  # (N, 3)
    quats: np.ndarray  # (N, 4)
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)

    def __len__(self):
        return len(self.positions)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3)))

    @property
    def opacities(self):
        return sigmoid(self.opacity_logits)

    def copy(self):
        return GaussianCloud(*(getattr(self, k).copy() for k in PARAMS))

    def subset(self, keep):
        return GaussianCloud(*(getattr(self, k)[keep].copy() for k in PARAMS))

    def normalize_quats(self):
        self.quats /= np.linalg.norm(self.quats, axis=1, keepdims=True)

    def arrays(self):
        return {k: getattr(self, k) for k in PARAMS}


def export_points(cloud: GaussianCloud, opacity_cutoff=0.0):
    """Positions (M, 3) of Gaussians whose opacity is at least the cutoff."""
    return cloud.positions[cloud.opacities >= opacity_cutoff].copy()
