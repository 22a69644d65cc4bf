"""Structural data-generating processes for the Monte-Carlo study.

X = h(Z, eta) and Y = g(X, epsilon) with

    eta, nu ~ N(0, 1) independent,  epsilon = g1*eta*nu + g2*eta + g3*nu,

and omega = Phi(eta) kept as the uniform latent.  Inputs to h may be squashed
through ``zeta(t) = 1.5 + 1.5 tanh(0.15 t)`` so log/power forms stay in
their domain.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .data import Dataset

H_PARAMS = {"h1": 6, "h2": 7, "h3": 4, "h4": 2, "h5": 5, "h6": 5}
G_PARAMS = {"g1": 6, "g2": 7, "g3": 4, "g4": 2, "g5": 3, "g5cd": 5, "g6": 5}
NEEDS_RHO = {"h2", "h3", "g2", "g3"}


class DomainError(ValueError):
    """A structural function was evaluated outside its domain."""


def zeta(t):
    return 1.5 + 1.5 * np.tanh(0.15 * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class DGPSpec:
    h_id: str
    g_id: str
    alpha: tuple
    beta: tuple
    gamma: tuple = (1.0, 1.0, 1.0)
    zeta_on_z: bool = False
    zeta_on_eta: bool = False
    rho: float | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.h_id not in H_PARAMS:
            raise ValueError(f"unknown structural X form {self.h_id!r}")
        if self.g_id not in G_PARAMS:
            raise ValueError(f"unknown structural Y form {self.g_id!r}")
        if len(self.alpha) != H_PARAMS[self.h_id]:
            raise ValueError(f"{self.h_id} takes {H_PARAMS[self.h_id]} alpha values, got {len(self.alpha)}")
        if len(self.beta) != G_PARAMS[self.g_id]:
            raise ValueError(f"{self.g_id} takes {G_PARAMS[self.g_id]} beta values, got {len(self.beta)}")
        if len(self.gamma) != 3:
            raise ValueError("gamma has three coefficients")
        if (self.h_id in NEEDS_RHO or self.g_id in NEEDS_RHO) and self.rho is None:
            raise ValueError("rho required for this structural form")

    def with_gamma(self, gamma) -> DGPSpec:
        return replace(self, gamma=tuple(float(g) for g in gamma))


PRESETS = {
    "ces": DGPSpec("h3", "g5", (6.0, 0.5, 0.5, 1.0), (2.0, 1.0, -0.25), (1.0, 1.0, 1.0),
                   zeta_on_z=True, zeta_on_eta=True, rho=0.5, name="ces"),
    "translog": DGPSpec("h1", "g5", (0.0, 5.0, 10.0, 0.0, -26.25, 3.25), (8.0, -1.0, 6.0),
                        (1.0, 1.0, -3.0), zeta_on_z=True, zeta_on_eta=True, name="translog"),
    "tanh": DGPSpec("h6", "g6", (6.0, 0.25, -0.5, 5.0, 0.5), (6.0, 0.25, -0.5, 10.0, 0.5),
                    (1.0, 1.0, -3.0), name="tanh"),
    "aids": DGPSpec("h2", "g5", (0.0, 5.0, 10.0, 0.0, -26.25, 3.25, -0.15), (8.0, -1.0, 6.0),
                    (1.0, 1.0, 1.0), zeta_on_z=True, zeta_on_eta=True, rho=0.5, name="aids"),
    "backbending": DGPSpec("h4", "g5", (1.0, 3.0), (0.5, 0.6, 0.1), (1.0, 1.0, -3.0),
                           name="backbending"),
}


def preset(name: str) -> DGPSpec:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class Disturbances:
    eta: np.ndarray
    nu: np.ndarray
    epsilon: np.ndarray
    omega: np.ndarray


def disturbance(eta, nu, gamma):
    g1, g2, g3 = gamma
    return g1 * eta * nu + g2 * eta + g3 * nu


def gen_disturbances(n: int, gamma, seed=None, rng=None) -> Disturbances:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed) if rng is None else rng
    eta = rng.standard_normal(n)
    nu = rng.standard_normal(n)
    return Disturbances(eta, nu, disturbance(eta, nu, gamma), norm.cdf(eta))


def _log(v):
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise DomainError("log of a nonpositive value")
    return np.log(v)


def _pow(base, expo):
    base = np.asarray(base, dtype=float)
    if float(expo) != int(expo) and np.any(base < 0):
        raise DomainError("fractional power of a negative value")
    if expo < 0 and np.any(base == 0):
        raise DomainError("negative power of zero")
    return np.power(base, expo)


def _translog(a, u, v):
    lu, lv = _log(u), _log(v)
    return a[0] + a[1] * lu + a[2] * lv + a[3] * lu ** 2 + a[4] * lv ** 2 + a[5] * lu * lv


def _ces(a, u, v, rho):
    inner = a[1] * _pow(u, -rho) + a[2] * _pow(v, -rho)
    return a[0] * _pow(inner, -a[3] / rho)


def _bend(a, u, v):
    s = u * v - a[0] * u
    return np.exp(s) - a[1] * s


def structural_h(h_id: str, z, eta, alpha, rho=None):
    """X-equation forms; ``z`` and ``eta`` are already transformed."""
    z = np.asarray(z, dtype=float)
    eta = np.asarray(eta, dtype=float)
    a = alpha
    if h_id == "h1":
        out = _translog(a, z, eta)
    elif h_id == "h2":
        out = _translog(a, z, eta) + a[6] * _pow(z * eta, rho)
    elif h_id == "h3":
        out = _ces(a, z, eta, rho)
    elif h_id == "h4":
        out = _bend(a, z, eta)
    elif h_id == "h5":
        out = a[0] * z + a[1] * eta + a[2] * _pow(z, a[3]) * _pow(eta, a[4])
    elif h_id == "h6":
        out = a[0] * np.tanh(a[1] * z + a[2] * eta) + a[3] * np.tanh(a[4] * eta)
    else:
        raise ValueError(f"unknown structural X form {h_id!r}")
    if not np.all(np.isfinite(out)):
        raise DomainError(f"{h_id} produced non-finite values")
    return out


def structural_g(g_id: str, x, epsilon, beta, rho=None):
    x = np.asarray(x, dtype=float)
    e = np.asarray(epsilon, dtype=float)
    b = beta
    if g_id == "g1":
        out = _translog(b, x, e)
    elif g_id == "g2":
        out = _translog(b, x, e) + b[6] * _pow(x * e, rho)
    elif g_id == "g3":
        out = _ces(b, x, e, rho)
    elif g_id == "g4":
        out = _bend(b, x, e)
    elif g_id == "g5":
        out = b[0] * x + b[1] * e + b[2] * x * e
    elif g_id == "g5cd":
        out = b[0] * x + b[1] * e + b[2] * _pow(x, b[3]) * _pow(e, b[4])
    elif g_id == "g6":
        out = b[0] * np.tanh(b[1] * x + b[2] * e) + b[3] * np.tanh(b[4] * e)
    else:
        raise ValueError(f"unknown structural Y form {g_id!r}")
    if not np.all(np.isfinite(out)):
        raise DomainError(f"{g_id} produced non-finite values")
    return out


def action(spec: DGPSpec, z, eta):
    zz = zeta(z) if spec.zeta_on_z else np.asarray(z, dtype=float)
    ee = zeta(eta) if spec.zeta_on_eta else np.asarray(eta, dtype=float)
    return structural_h(spec.h_id, zz, ee, spec.alpha, spec.rho)


def outcome(spec: DGPSpec, x, epsilon):
    return structural_g(spec.g_id, x, epsilon, spec.beta, spec.rho)


def simulate(spec: DGPSpec, n: int, seed=None) -> Dataset:
    """Draw n records with Z ~ N(0, 1); latents are kept on the dataset."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    dist = gen_disturbances(n, spec.gamma, rng=rng)
    x = action(spec, z, dist.eta)
    y = outcome(spec, x, dist.epsilon)
    return Dataset(x, y, z, eta=dist.eta, omega=dist.omega, nu=dist.nu, epsilon=dist.epsilon)
