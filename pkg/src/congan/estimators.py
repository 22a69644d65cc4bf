"""Conditional-mean estimators for observed and counterfactual samples.

Columns of the Monte-Carlo tables are all Nadaraya-Watson style estimates:

* plain conditional means E[Y | X = x] on an observed or counterfactual sample,
* partial means, averaging a 2-D regression surface over the marginal of the
  latent omega (oracle: needs the simulated latent),
* the control-variable benchmark, which swaps omega for the estimated
  conditional CDF V = F(X | Z).

Queries whose kernel mass underflows raise :class:`OutOfSupport` (scalar API)
or come back as NaN (curve API) instead of 0/0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .dgp import DGPSpec, disturbance, outcome
from .kde import Bandwidths, silverman_bandwidth

UNDERFLOW = 1e-300
BLOCK = 1024


class OutOfSupport(ValueError):
    """Kernel weights at the query underflowed: the point is outside the data support."""


def _phi(u):
    return np.exp(-0.5 * np.square(u)) * 0.3989422804014327


def _check(ys, xs):
    ys = np.asarray(ys, dtype=float).ravel()
    xs = np.asarray(xs, dtype=float).ravel()
    if ys.size == 0:
        raise ValueError("empty sample")
    if ys.size != xs.size:
        raise ValueError("ys and xs differ in length")
    return ys, xs


def _positive(s, name):
    if not (np.isfinite(s) and s > 0):
        raise ValueError(f"{name} must be strictly positive")
    return float(s)


def nw_curve(ys, xs, grid, sigma_x) -> np.ndarray:
    """Nadaraya-Watson means at every grid point; NaN where unsupported."""
    ys, xs = _check(ys, xs)
    sigma_x = _positive(sigma_x, "sigma_x")
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    W = _phi((xs[None, :] - grid[:, None]) / sigma_x)
    den = W.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (W @ ys) / den
    out[den < UNDERFLOW] = np.nan
    return out


def nw_mean(ys, xs, x, sigma_x) -> float:
    v = nw_curve(ys, xs, [x], sigma_x)[0]
    if np.isnan(v):
        raise OutOfSupport(f"no kernel mass at x={x}")
    return float(v)


# --------------------------------------------------------------------------
# partial means

@dataclass
class PartialMeansResult:
    values: np.ndarray     # one per grid point, NaN if every cell was unsupported
    skipped: np.ndarray    # unsupported (x, omega_i) cells per grid point


def partial_means_curve(ys, xs, omegas, grid, sigma_x, sigma_omega=None,
                        block: int = BLOCK) -> PartialMeansResult:
    """(1/N) sum_i m(x, omega_i) with m the 2-D Nadaraya-Watson surface."""
    ys, xs = _check(ys, xs)
    om = np.asarray(omegas, dtype=float).ravel()
    if om.size != ys.size:
        raise ValueError("omegas differ in length")
    sigma_x = _positive(sigma_x, "sigma_x")
    if sigma_omega is None:
        sigma_omega = silverman_bandwidth(om)
    sigma_omega = _positive(sigma_omega, "sigma_omega")
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    WX = _phi((xs[None, :] - grid[:, None]) / sigma_x)     # [grid, record]
    WXY = WX * ys
    total = np.zeros(len(grid))
    used = np.zeros(len(grid), dtype=int)
    # cells i are processed in row blocks to bound memory at block x N
    for lo in range(0, om.size, block):
        Wo = _phi((om[None, :] - om[lo:lo + block, None]) / sigma_omega)   # [cell, record]
        num, den = Wo @ WXY.T, Wo @ WX.T                                  # [cell, grid]
        ok = den >= UNDERFLOW
        with np.errstate(invalid="ignore", divide="ignore"):
            total += np.where(ok, num / den, 0.0).sum(axis=0)
        used += ok.sum(axis=0)
    with np.errstate(invalid="ignore"):
        vals = np.where(used > 0, total / np.maximum(used, 1), np.nan)
    return PartialMeansResult(vals, om.size - used)


def partial_means(ys, xs, omegas, x, sigma_x, sigma_omega=None) -> float:
    r = partial_means_curve(ys, xs, omegas, [x], sigma_x, sigma_omega)
    if np.isnan(r.values[0]):
        raise OutOfSupport(f"no supported cell at x={x}")
    return float(r.values[0])


# --------------------------------------------------------------------------
# control variable

def _sigma_z(bandwidths, zs):
    if bandwidths is None:
        return silverman_bandwidth(zs)
    if isinstance(bandwidths, Bandwidths):
        return bandwidths.sigma_z
    return _positive(bandwidths, "sigma_z")


def cond_cdf_hat(xs, zs, x, z, bandwidths=None) -> float:
    """Indicator-in-x, Gaussian-in-z estimate of F(x | z), clipped to [0, 1]."""
    xs = np.asarray(xs, dtype=float).ravel()
    zs = np.asarray(zs, dtype=float).ravel()
    if xs.size == 0:
        raise ValueError("empty sample")
    w = _phi((zs - z) / _sigma_z(bandwidths, zs))
    den = w.sum()
    if den < UNDERFLOW:
        raise OutOfSupport(f"no kernel mass at z={z}")
    return float(np.clip(np.sum(w * (xs <= x)) / den, 0.0, 1.0))


def control_values(xs, zs, sigma_z, block: int = BLOCK) -> np.ndarray:
    """V_i = F_hat(x_i | z_i) for every record."""
    xs = np.asarray(xs, dtype=float).ravel()
    zs = np.asarray(zs, dtype=float).ravel()
    out = np.empty(xs.size)
    for lo in range(0, xs.size, block):
        W = _phi((zs[None, :] - zs[lo:lo + block, None]) / sigma_z)
        num = np.sum(W * (xs[None, :] <= xs[lo:lo + block, None]), axis=1)
        out[lo:lo + block] = num / W.sum(axis=1)
    return np.clip(out, 0.0, 1.0)


def control_variable_curve(ys, xs, zs, grid, bandwidths: Bandwidths) -> PartialMeansResult:
    V = control_values(xs, zs, bandwidths.sigma_z)
    sv = bandwidths.sigma_omega
    if sv is None:
        sv = silverman_bandwidth(V)
    return partial_means_curve(ys, xs, V, grid, bandwidths.sigma_x, sv)


def control_variable(ys, xs, zs, x, bandwidths: Bandwidths) -> float:
    r = control_variable_curve(ys, xs, zs, [x], bandwidths)
    if np.isnan(r.values[0]):
        raise OutOfSupport(f"no supported cell at x={x}")
    return float(r.values[0])


# --------------------------------------------------------------------------
# counterfactual samples

@dataclass
class CFDataset:
    x_cf: np.ndarray
    y_cf: np.ndarray
    omega: np.ndarray
    omega_tilde: np.ndarray

    def __len__(self):
        return len(self.x_cf)


def _streams(seed, k=3):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(k)]


def make_cf_dataset(source, zs=None, n=None, seed=0, data: Dataset | None = None) -> CFDataset:
    """Counterfactual sample: the action keeps omega, the outcome gets a fresh omega~.

    ``source`` is either a :class:`DGPSpec` (true law; ``data`` must carry
    latents, and the observed X is reused) or a fitted generator model with
    ``action``/``outcome`` methods (``zs`` required).
    """
    if isinstance(source, DGPSpec):
        if data is None or not data.has_latents:
            raise ValueError("true-DGP mode needs a dataset carrying its latents")
        r_om, r_nu, _ = _streams(seed)
        n = len(data)
        omt = r_om.random(n)
        eta_t = norm.ppf(omt)
        nu_t = r_nu.standard_normal(n)
        eps_t = disturbance(eta_t, nu_t, source.gamma)
        return CFDataset(data.x.copy(), outcome(source, data.x, eps_t), data.omega.copy(), omt)
    if zs is None:
        raise ValueError("generator mode needs zs")
    zs = np.asarray(zs, dtype=float).ravel()
    if n is not None and n != len(zs):
        zs = np.resize(zs, n)
    r_om, r_omt, r_nu = _streams(seed)
    m = len(zs)
    om, omt, nu = r_om.random(m), r_omt.random(m), r_nu.random(m)
    x = source.action(zs, om)
    return CFDataset(x, source.outcome(x, omt, nu), om, omt)


def make_synthetic_observed(model, zs, seed=0) -> Dataset:
    """Synthetic observed sample: both generators share the same omega."""
    zs = np.asarray(zs, dtype=float).ravel()
    r_om, _, r_nu = _streams(seed)
    om, nu = r_om.random(len(zs)), r_nu.random(len(zs))
    x, y = model.generate(zs, om, nu)
    return Dataset(x, y, zs, omega=om, nu=nu)
