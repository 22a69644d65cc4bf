import numpy as np
import pytest

from congan import dgp
from congan.data import Dataset
from congan.estimators import (OutOfSupport, cond_cdf_hat, control_variable,
                               control_variable_curve, make_cf_dataset, nw_curve, nw_mean,
                               partial_means, partial_means_curve)
from congan.kde import Bandwidths, silverman_bandwidth


def test_nw_constant_and_single_record():
    rng = np.random.default_rng(0)
    xs = rng.standard_normal(100)
    assert nw_mean(np.full(100, 4.2), xs, 0.3, 0.5) == pytest.approx(4.2, rel=1e-14)
    assert nw_mean([7.0], [1.0], -3.0, 1.0) == 7.0


def test_nw_linear_small_bandwidth():
    xs = np.linspace(0, 1, 2001)
    for x in (0.2, 0.5, 0.8):
        assert abs(nw_mean(2 * xs, xs, x, 0.002) - 2 * x) < 1e-3


def test_nw_out_of_support():
    with pytest.raises(OutOfSupport):
        nw_mean([1.0, 2.0], [0.0, 0.1], 1e4, 0.1)
    assert np.isnan(nw_curve([1.0], [0.0], [1e4], 0.1)[0])


def test_cf_equals_observed_without_confounding():
    spec = dgp.preset("ces").with_gamma((0, 0, 1))
    d = dgp.simulate(spec, 20_000, seed=1)
    cf = make_cf_dataset(spec, data=d, seed=2)
    qs = np.percentile(d.x, np.arange(10, 100, 10))
    h = silverman_bandwidth(d.x, robust=True)
    for q in qs:
        a, sa = nw_with_se(d.y, d.x, q, h)
        b, sb = nw_with_se(cf.y_cf, cf.x_cf, q, h)
        assert abs(a - b) < 3 * np.hypot(sa, sb)


def nw_with_se(ys, xs, x, h):
    """Kernel mean and its sandwich standard error."""
    w = np.exp(-0.5 * ((xs - x) / h) ** 2)
    m = np.sum(w * ys) / w.sum()
    return m, np.sqrt(np.sum(w ** 2 * (ys - m) ** 2)) / w.sum()


def test_cf_needs_latents():
    with pytest.raises(ValueError):
        make_cf_dataset(dgp.preset("ces"), data=Dataset([1.0], [1.0], [1.0]))


class _NoOmega:
    def action(self, z, omega):
        return np.asarray(z) * 2.0

    def outcome(self, x, omega, nu):
        return np.asarray(x) + np.asarray(nu)

    def generate(self, z, omega, nu):
        x = self.action(z, omega)
        return x, self.outcome(x, omega, nu)


def test_cf_coincides_with_observed_when_generators_ignore_omega():
    from congan.estimators import make_synthetic_observed
    zs = np.random.default_rng(3).standard_normal(5000)
    cf = make_cf_dataset(_NoOmega(), zs=zs, seed=4)
    ob = make_synthetic_observed(_NoOmega(), zs, seed=4)
    assert np.array_equal(cf.x_cf, ob.x)
    assert np.allclose(np.sort(cf.y_cf - cf.x_cf), np.sort(ob.y - ob.x), atol=0.05)


def test_cf_reproducible_and_substreams_independent():
    spec = dgp.preset("ces")
    d = dgp.simulate(spec, 10_000, seed=5)
    a, b = make_cf_dataset(spec, data=d, seed=6), make_cf_dataset(spec, data=d, seed=6)
    assert np.array_equal(a.y_cf, b.y_cf)
    assert abs(np.corrcoef(a.omega, a.omega_tilde)[0, 1]) < 3 / np.sqrt(len(d))


def test_ces_do_mean_at_median_matches_marginal_eps():
    spec = dgp.preset("ces")
    n = 100_000
    d = dgp.simulate(spec, n, seed=7)
    cf = make_cf_dataset(spec, data=d, seed=8)
    x0 = float(np.median(d.x))
    h = silverman_bandwidth(d.x, robust=True)
    est, se_est = nw_with_se(cf.y_cf, cf.x_cf, x0, h)
    assert est == pytest.approx(nw_mean(cf.y_cf, cf.x_cf, x0, h), rel=1e-12)
    eps = dgp.gen_disturbances(n, spec.gamma, seed=9).epsilon
    brute = dgp.outcome(spec, np.full(n, x0), eps)
    se_b = brute.std(ddof=1) / np.sqrt(n)
    assert abs(est - brute.mean()) < 2 * np.hypot(se_est, se_b)


def test_partial_means_constant_and_flat_limit():
    rng = np.random.default_rng(10)
    xs, om = rng.standard_normal(400), rng.random(400)
    ys = np.sin(xs) + om
    assert partial_means(np.full(400, -1.5), xs, om, 0.2, 0.3) == pytest.approx(-1.5, rel=1e-13)
    flat = partial_means(ys, xs, om, 0.2, 0.3, sigma_omega=1e6)
    assert flat == pytest.approx(nw_mean(ys, xs, 0.2, 0.3), rel=1e-9)


def test_partial_means_collapses_without_omega_dependence():
    rng = np.random.default_rng(11)
    n = 4000
    xs, om = rng.standard_normal(n), rng.random(n)
    ys = xs ** 2 + 0.3 * rng.standard_normal(n)
    pm = partial_means(ys, xs, om, 0.5, 0.2)
    assert abs(pm - nw_mean(ys, xs, 0.5, 0.2)) < 0.05


def test_partial_means_counts_unsupported_cells():
    xs = np.array([0.0, 0.1, 50.0, 50.1])
    om = np.array([0.0, 0.01, 0.99, 1.0])
    r = partial_means_curve(np.ones(4), xs, om, [0.05], 0.1, sigma_omega=0.005)
    assert r.skipped[0] == 2 and r.values[0] == pytest.approx(1.0)


def test_cond_cdf_bounds_and_oracle():
    rng = np.random.default_rng(12)
    n = 10_000
    z = rng.standard_normal(n)
    x = z + rng.standard_normal(n)
    assert cond_cdf_hat(x, z, x.min() - 1, 0.0, 0.3) == 0.0
    assert cond_cdf_hat(x, z, x.max() + 1, 0.0, 0.3) == 1.0
    assert abs(cond_cdf_hat(x, z, 0.0, 0.0, silverman_bandwidth(z)) - 0.5) < 0.02
    xi = rng.standard_normal(200)
    ecdf = np.mean(xi <= 0.3)
    assert cond_cdf_hat(xi, np.zeros(200), 0.3, 0.0, 1.0) == pytest.approx(ecdf, rel=1e-12)


def test_control_variable_agrees_with_partial_means_under_monotonicity():
    rng = np.random.default_rng(13)
    n = 3000
    z, eta = rng.standard_normal(n), rng.standard_normal(n)
    x = z + eta
    y = x + eta + 0.3 * rng.standard_normal(n)
    from scipy.stats import norm
    om = norm.cdf(eta)
    hx = silverman_bandwidth(x)
    bw = Bandwidths(hx, silverman_bandwidth(y), silverman_bandwidth(z))
    qs = np.percentile(x, [30, 50, 70])
    cv = control_variable_curve(y, x, z, qs, bw).values
    pm = partial_means_curve(y, x, om, qs, hx).values
    assert np.all(np.abs(cv - pm) < 0.15)
    assert control_variable(np.full(n, 2.0), x, z, 0.0, bw) == pytest.approx(2.0)


def test_affine_equivariance_and_permutation_invariance():
    rng = np.random.default_rng(14)
    n = 300
    z, om = rng.standard_normal(n), rng.random(n)
    x = z + om
    y = np.cos(x) + om
    bw = Bandwidths(0.3, 0.3, 0.4)
    perm = rng.permutation(n)
    for f in (lambda yy, xx, zz, oo: nw_mean(yy, xx, 0.5, 0.3),
              lambda yy, xx, zz, oo: partial_means(yy, xx, oo, 0.5, 0.3, 0.1),
              lambda yy, xx, zz, oo: control_variable(yy, xx, zz, 0.5, bw)):
        base = f(y, x, z, om)
        assert f(3 * y - 2, x, z, om) == pytest.approx(3 * base - 2, rel=1e-12)
        assert f(y[perm], x[perm], z[perm], om[perm]) == pytest.approx(base, rel=1e-12)
