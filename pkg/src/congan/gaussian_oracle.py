"""Closed-form Gaussian triangular model.

    X = mu1(Z) + sigma1(Z) [rho12 eta + sqrt(1 - rho12^2) xi],      xi = Phi^-1(eps_x)
    Y = mu2(X) + sigma2(X) [rho13(X) eta + sqrt(1 - rho13(X)^2) Phi^-1(nu)]

with eta ~ N(0, 1) (location/scale normalized), eps_x, nu ~ U[0, 1] and
Z ~ N(0, 1) unless a sampler is supplied.  Every conditional law is Gaussian,
which gives exact references for the identification formulas, the
do-intervention distribution and the latent integral equation

    F(y | x, z) = int_0^1 F(y | x, omega) f(omega | x, z) d omega,   omega = Phi(eta).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .evaluation import wasserstein_1d

DELTA = 1e-6


class UnidentifiedError(ValueError):
    """The sample carries no information about the requested parameter."""


class QuadratureError(RuntimeError):
    pass


def _const(c):
    return lambda t: np.full(np.shape(t), float(c))


@dataclass(frozen=True)
class GaussianSpec:
    mu1: Callable
    sigma1: Callable
    mu2: Callable
    sigma2: Callable
    rho12: float
    rho13: Callable
    z_sampler: Callable | None = None
    name: str = "custom"

    def __post_init__(self):
        if not -1.0 < self.rho12 < 1.0:
            raise ValueError("rho12 must lie in (-1, 1)")

    def check_rho13(self, x):
        r = np.asarray(self.rho13(np.asarray(x, dtype=float)), dtype=float)
        if np.any(np.abs(r) >= 1.0):
            raise ValueError("|rho13(x)| must be < 1")
        return r


def make_spec(rho12=0.6, rho13=0.5, name=None, **kw) -> GaussianSpec:
    """Default smooth parameterization with constant correlations."""
    fields = dict(
        mu1=lambda z: 0.5 * np.asarray(z, dtype=float),
        sigma1=lambda z: 1.0 + 0.2 * np.tanh(np.asarray(z, dtype=float)),
        mu2=lambda x: 1.0 + 0.8 * np.asarray(x, dtype=float),
        sigma2=lambda x: 1.0 + 0.3 * np.tanh(np.asarray(x, dtype=float)),
        rho12=float(rho12),
        rho13=rho13 if callable(rho13) else _const(rho13),
        name=name or f"gauss_{rho12:g}_{rho13 if not callable(rho13) else 'fn'}",
    )
    fields.update(kw)
    return GaussianSpec(**fields)


PRESETS = {
    "confounded": lambda: make_spec(0.6, 0.5, "confounded"),
    "unconfounded": lambda: make_spec(0.6, 0.0, "unconfounded"),
    "strong": lambda: make_spec(0.8, -0.4, "strong"),
    "varying": lambda: make_spec(0.7, lambda x: 0.6 * np.tanh(np.asarray(x, dtype=float)), "varying"),
}


def preset(name: str) -> GaussianSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown Gaussian preset {name!r}; choose from {sorted(PRESETS)}") from None


# --------------------------------------------------------------------------
# simulation

def sample_gaussian(spec: GaussianSpec, n: int, seed=0) -> Dataset:
    """Exact draw; latents kept: eta, omega = Phi(eta), nu, and epsilon = xi."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    z = spec.z_sampler(rng, n) if spec.z_sampler else rng.standard_normal(n)
    eta = rng.standard_normal(n)
    eps_x = rng.random(n)
    nu = rng.random(n)
    xi = norm.ppf(eps_x)
    s1 = spec.sigma1(z)
    if np.any(s1 <= 0):
        raise ValueError("sigma1 must be positive on the sample")
    r12 = spec.rho12
    x = spec.mu1(z) + s1 * (r12 * eta + np.sqrt(1 - r12 ** 2) * xi)
    r13 = spec.check_rho13(x)
    y = spec.mu2(x) + spec.sigma2(x) * (r13 * eta + np.sqrt(1 - r13 ** 2) * norm.ppf(nu))
    return Dataset(x, y, z, eta=eta, omega=norm.cdf(eta), nu=nu, epsilon=xi)


# --------------------------------------------------------------------------
# identification

def identify_rho12(data: Dataset, mu1, sigma1, mode: str = "oracle", tstat: float = 3.0) -> float:
    """Recover rho12 from sqrt(1 - rho12^2) = c.

    Both modes use the latent xi = Phi^-1(eps_x) stored in ``data.epsilon``.
    ``oracle`` weights the moment by sigma1(Z) xi:  c = Cov(X - mu1, s1 xi) / Var(s1 xi).
    ``display`` weights it by xi (Z - mean Z), the covariance-with-Z form; its
    denominator is proportional to Cov(sigma1(Z), Z) and the function raises
    :class:`UnidentifiedError` when that is statistically zero.
    The sign comes from the residual covariance with eta.
    """
    if data.epsilon is None:
        raise ValueError("identification needs the latent xi stored as epsilon")
    xi = data.epsilon
    s1 = sigma1(data.z)
    resid = data.x - mu1(data.z)
    if mode == "oracle":
        w = s1 * xi
    elif mode == "display":
        w = xi * (data.z - data.z.mean())
    else:
        raise ValueError(f"unknown mode {mode!r}")
    den_terms = s1 * xi * w
    den = den_terms.mean()
    se = den_terms.std(ddof=1) / np.sqrt(len(xi))
    if not abs(den) > tstat * se:
        raise UnidentifiedError("denominator indistinguishable from zero in sample")
    c = float(np.mean(resid * w) / den)
    rho = float(np.sqrt(max(0.0, 1.0 - min(c * c, 1.0))))
    if data.eta is not None and rho > 0:
        left = resid - c * s1 * xi
        if np.mean(left * data.eta) < 0:
            rho = -rho
    return rho


@dataclass
class Rho13Estimate:
    """Local-linear varying-coefficient estimate of rho13(x)."""
    x: np.ndarray
    r: np.ndarray
    m: np.ndarray
    bandwidth: float

    def __call__(self, x0):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        out = np.empty(len(x0))
        for k, q in enumerate(x0):
            d = self.x - q
            w = np.exp(-0.5 * (d / self.bandwidth) ** 2)
            A = np.column_stack([self.m, self.m * d])
            AtW = A.T * w
            coef = np.linalg.solve(AtW @ A, AtW @ self.r)
            out[k] = coef[0]
        return out if out.size > 1 else float(out[0])


def identify_rho13(data: Dataset, rho12, mu1, sigma1, mu2, sigma2, bandwidth=None) -> Rho13Estimate:
    """Slope of the standardized outcome on the posterior mean of eta, local in x.

    With m = rho12 (X - mu1(Z)) / sigma1(Z) = E[eta | X, Z] and
    r = (Y - mu2(X)) / sigma2(X) we have E[r | X, Z] = rho13(X) m, so a
    kernel-weighted regression of r on (m, m (X - x0)) returns rho13(x0).
    The default bandwidth is twice the sample sd of X: the slope's standard
    error is about 1 / (|rho12| sqrt(n_eff)), so a wide window pays, and the
    local-linear term removes the first-order bias when rho13 varies.
    """
    if rho12 == 0:
        raise UnidentifiedError("rho12 = 0: the confounding path through eta is not identified")
    m = rho12 * (data.x - mu1(data.z)) / sigma1(data.z)
    r = (data.y - mu2(data.x)) / sigma2(data.x)
    h = 2.0 * float(np.std(data.x, ddof=1)) if bandwidth is None else float(bandwidth)
    return Rho13Estimate(data.x.copy(), r, m, h)


# --------------------------------------------------------------------------
# counterfactual law

def closed_form_cf(spec: GaussianSpec, x: float, n_draws: int, seed=0) -> np.ndarray:
    """Y under do(X = x): eta from its prior, not from its posterior."""
    rng = np.random.default_rng(seed)
    r13 = float(spec.check_rho13(x))
    eta = rng.standard_normal(n_draws)
    nu = rng.random(n_draws)
    s2 = float(spec.sigma2(x))
    return float(spec.mu2(x)) + r13 * s2 * eta + s2 * np.sqrt(1 - r13 ** 2) * norm.ppf(nu)


def brute_force_do(spec: GaussianSpec, x: float, n: int, seed=0) -> np.ndarray:
    """Simulate the whole system, then force X = x and give Y an independent eta copy."""
    rng = np.random.default_rng(seed)
    d = sample_gaussian(spec, n, seed=rng.integers(2 ** 63))
    eta_copy = rng.permutation(d.eta)
    r13 = float(spec.check_rho13(x))
    s2 = float(spec.sigma2(x))
    return float(spec.mu2(x)) + s2 * (r13 * eta_copy + np.sqrt(1 - r13 ** 2) * norm.ppf(d.nu))


def cf_agreement(spec: GaussianSpec, x: float, n: int, seed=0, n_null: int = 5):
    """1-Wasserstein distance between closed-form and brute-force CF samples.

    Returns (distance, mc_tolerance) where the tolerance is the mean distance
    between independent pairs of closed-form samples of the same size.
    """
    ss = np.random.SeedSequence(seed).spawn(2 + 2 * n_null)
    seeds = [int(s.generate_state(1)[0]) for s in ss]
    d = wasserstein_1d(closed_form_cf(spec, x, n, seeds[0]), brute_force_do(spec, x, n, seeds[1]))
    null = [wasserstein_1d(closed_form_cf(spec, x, n, seeds[2 + 2 * k]),
                           closed_form_cf(spec, x, n, seeds[3 + 2 * k])) for k in range(n_null)]
    return d, float(np.mean(null))


# --------------------------------------------------------------------------
# H = T check

@dataclass
class HTResult:
    H: float
    T: float
    se_H: float
    se_T: float
    naive: float
    se_naive: float

    @property
    def combined_se(self):
        return float(np.hypot(self.se_H, self.se_T))


def lemma_HT_check(spec: GaussianSpec, x: float, y: float, n: int, seed=0) -> HTResult:
    """H averages F(y | x, eta) over the prior of eta; T averages 1{g(x, eps) <= y}
    over the marginal of eps = (eta, nu); naive is F(y | X = x) by importance weighting."""
    ss = np.random.SeedSequence(seed).spawn(3)
    r13 = float(spec.check_rho13(x))
    m2, s2 = float(spec.mu2(x)), float(spec.sigma2(x))
    c13 = np.sqrt(1 - r13 ** 2)

    rh = np.random.default_rng(ss[0])
    eta = rh.standard_normal(n)
    fh = norm.cdf((y - m2 - s2 * r13 * eta) / (s2 * c13))
    H, se_H = fh.mean(), fh.std(ddof=1) / np.sqrt(n)

    rt = np.random.default_rng(ss[1])
    eta_t, nu_t = rt.standard_normal(n), rt.random(n)
    ind = (m2 + s2 * (r13 * eta_t + c13 * norm.ppf(nu_t)) <= y).astype(float)
    T, se_T = ind.mean(), ind.std(ddof=1) / np.sqrt(n)

    rn = np.random.default_rng(ss[2])
    z = spec.z_sampler(rn, n) if spec.z_sampler else rn.standard_normal(n)
    eta_n = rn.standard_normal(n)
    s1 = spec.sigma1(z)
    c12 = np.sqrt(1 - spec.rho12 ** 2)
    w = norm.pdf((x - spec.mu1(z) - s1 * spec.rho12 * eta_n) / (s1 * c12)) / (s1 * c12)
    f = norm.cdf((y - m2 - s2 * r13 * eta_n) / (s2 * c13))
    naive = np.sum(w * f) / np.sum(w)
    # delta-method SE of a self-normalized ratio
    se_naive = np.sqrt(np.sum((w * (f - naive)) ** 2)) / np.sum(w)
    return HTResult(float(H), float(T), float(se_H), float(se_T), float(naive), float(se_naive))


# --------------------------------------------------------------------------
# latent integral equation

def _posterior(spec, x, z):
    m = spec.rho12 * (x - float(spec.mu1(z))) / float(spec.sigma1(z))
    s = np.sqrt(1 - spec.rho12 ** 2)
    return m, s


def fredholm_lhs(spec: GaussianSpec, x, y, z) -> float:
    """F(y | x, z) in closed form: eta | x, z ~ N(m, s^2) pushed through the Y equation."""
    r13 = float(spec.check_rho13(x))
    m2, s2 = float(spec.mu2(x)), float(spec.sigma2(x))
    m, s = _posterior(spec, x, z)
    return float(norm.cdf((y - m2 - s2 * r13 * m) / (s2 * np.sqrt(r13 ** 2 * s ** 2 + 1 - r13 ** 2))))


def _simpson_weights(n):
    if n < 2 or n % 2:
        raise QuadratureError("Simpson needs an even number of intervals >= 2")
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


TAIL_SDS = 12.0   # posterior mass beyond m +- 12 s is below 2 Phi(-12) ~ 4e-33


def _piece(a, b, n, m, s, F, scale):
    """Simpson nodes and weights for the posterior-weighted integral over t in [a, b]."""
    if scale == "probit":
        t = np.linspace(a, b, n + 1)
        w = _simpson_weights(n) * (t[1] - t[0]) * norm.pdf(t, m, s)
    else:
        om = np.linspace(norm.cdf(a), norm.cdf(b), n + 1)
        t = norm.ppf(om)
        w = _simpson_weights(n) * (om[1] - om[0]) * norm.pdf(t, m, s) / norm.pdf(t)
    mass = norm.cdf(b, m, s) - norm.cdf(a, m, s)
    tot = w.sum()
    if tot > 0:
        w *= mass / tot
    return float(w @ F(t))


def fredholm_rhs(spec: GaussianSpec, x, y, z, n_omega=512, delta=DELTA, scale="probit") -> float:
    """Quadrature of F(y | x, omega) f(omega | x, z) over omega.

    The main piece covers omega in [delta, 1 - delta] with composite Simpson;
    the two tails, where the posterior of eta can still carry mass when
    (x, z) sits far out, are integrated the same way up to m +- 12 s.  With
    ``scale="probit"`` (default) nodes are equally spaced in t = Phi^-1(omega)
    after the change of variables d omega = phi(t) dt; ``scale="omega"``
    spaces them uniformly in omega, which converges slowly because
    f(omega | x, z) behaves like a fractional power of omega near the
    endpoints.  Each piece's weights are rescaled to integrate the posterior
    density to its exact mass on that piece.
    """
    if scale not in ("probit", "omega"):
        raise ValueError(f"unknown scale {scale!r}")
    r13 = float(spec.check_rho13(x))
    m2, s2 = float(spec.mu2(x)), float(spec.sigma2(x))
    c13 = np.sqrt(1 - r13 ** 2)
    m, s = _posterior(spec, x, z)

    def F(t):
        return norm.cdf((y - m2 - s2 * r13 * t) / (s2 * c13))

    lo_t, hi_t = norm.ppf(delta), norm.ppf(1 - delta)
    total = _piece(lo_t, hi_t, n_omega, m, s, F, scale)
    far_lo, far_hi = m - TAIL_SDS * s, m + TAIL_SDS * s
    if far_lo < lo_t:
        total += _piece(far_lo, lo_t, n_omega, m, s, F, "probit")
    if far_hi > hi_t:
        total += _piece(hi_t, far_hi, n_omega, m, s, F, "probit")
    return total


@dataclass
class FredholmReport:
    rows: list          # (x, y, z, lhs, rhs, residual)
    n_omega: int

    @property
    def max_residual(self) -> float:
        return max(abs(r[5]) for r in self.rows)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "y", "z", "lhs", "rhs", "residual"])
            for r in self.rows:
                wr.writerow([repr(float(v)) for v in r])


def fredholm_report(spec, grid_x, grid_y, grid_z, n_omega=512, scale="probit") -> FredholmReport:
    rows = []
    for x in grid_x:
        for y in grid_y:
            for z in grid_z:
                lhs = fredholm_lhs(spec, x, y, z)
                rhs = fredholm_rhs(spec, x, y, z, n_omega, scale=scale)
                rows.append((float(x), float(y), float(z), lhs, rhs, lhs - rhs))
    return FredholmReport(rows, int(n_omega))


def fredholm_residual(spec, grid_x, grid_y, grid_z, grid_omega=512, scale="probit") -> float:
    """Max |LHS - RHS| over the (x, y, z) grid at the given omega resolution."""
    return fredholm_report(spec, grid_x, grid_y, grid_z, grid_omega, scale).max_residual


def fredholm_convergence(spec, grid_x, grid_y, grid_z, sizes=(64, 128, 256, 512, 1024), scale="probit"):
    """Residual at each omega resolution; raises if refinement does not help."""
    res = [fredholm_residual(spec, grid_x, grid_y, grid_z, n, scale) for n in sizes]
    if res[-1] > res[0] and res[0] > 1e-12:
        raise QuadratureError(f"residual not converging under refinement: {res}")
    return list(zip(sizes, res))
