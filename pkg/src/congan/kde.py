"""Product-Gaussian kernel density estimates over (x, y, z) triplets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLAMP = 1e-14
SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass
class Bandwidths:
    sigma_x: float
    sigma_y: float
    sigma_z: float
    sigma_omega: float | None = None

    def __post_init__(self):
        for name in ("sigma_x", "sigma_y", "sigma_z", "sigma_omega"):
            v = getattr(self, name)
            if v is None:
                continue
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be strictly positive, got {v}")
            setattr(self, name, float(v))

    def vector(self) -> np.ndarray:
        return np.array([self.sigma_x, self.sigma_y, self.sigma_z])

    @classmethod
    def from_vector(cls, v, sigma_omega=None) -> Bandwidths:
        return cls(float(v[0]), float(v[1]), float(v[2]), sigma_omega)


def gauss(u):
    """Standard normal density."""
    return np.exp(-0.5 * np.square(u)) / SQRT_2PI


def kernel_matrix(evals: np.ndarray, centers: np.ndarray, sigma) -> np.ndarray:
    """K[i, j] = prod_d phi((centers[j,d] - evals[i,d]) / s_d) / s_d."""
    sigma = np.asarray(sigma, dtype=float)
    K = np.ones((len(evals), len(centers)))
    for d in range(evals.shape[1]):
        K *= gauss((centers[None, :, d] - evals[:, None, d]) / sigma[d]) / sigma[d]
    return K


def kde3(data, point, sigma: Bandwidths) -> float:
    """Density of the (x, y, z) sample at ``point``."""
    pts = data.points() if hasattr(data, "points") else np.asarray(data, dtype=float)
    if len(pts) == 0:
        raise ValueError("empty data")
    K = kernel_matrix(np.asarray(point, dtype=float)[None, :], pts, sigma.vector())
    return float(K.mean())


def loo_densities(points: np.ndarray, sigma) -> np.ndarray:
    n = len(points)
    K = kernel_matrix(points, points, sigma)
    np.fill_diagonal(K, 0.0)
    return K.sum(axis=1) / (n - 1)


def loo_entropy(data, sigma: Bandwidths) -> float:
    """Leave-one-out entropy: -mean log max(p_{-i}(record_i), 1e-14)."""
    pts = data.points() if hasattr(data, "points") else np.asarray(data, dtype=float)
    if len(pts) < 2:
        raise ValueError("leave-one-out entropy needs at least 2 records")
    p = loo_densities(pts, sigma.vector())
    return float(-np.mean(np.log(np.maximum(p, CLAMP))))


def silverman_bandwidth(samples, robust: bool = False) -> float:
    """Rule-of-thumb bandwidth 1.06 * spread * n^(-1/5).

    With ``robust`` the spread is ``min(sd, IQR / 1.349)``, which keeps the
    bandwidth from being inflated by heavy tails.
    """
    s = np.asarray(samples, dtype=float).ravel()
    if s.size < 2:
        raise ValueError("need at least 2 samples")
    sd = np.std(s, ddof=1)
    if not sd > 0:
        raise ValueError("degenerate sample: zero spread")
    spread = sd
    if robust:
        q75, q25 = np.percentile(s, [75, 25])
        iqr = (q75 - q25) / 1.349
        if iqr > 0:
            spread = min(sd, iqr)
    return float(1.06 * spread * s.size ** -0.2)


def default_bandwidths(data) -> Bandwidths:
    return Bandwidths(silverman_bandwidth(data.x), silverman_bandwidth(data.y),
                      silverman_bandwidth(data.z))
