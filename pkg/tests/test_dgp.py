import numpy as np
import pytest
from scipy.stats import kstest

from congan import dgp
from congan.data import Dataset, read_csv, write_csv


def test_zeta_values():
    assert dgp.zeta(0.0) == 1.5
    assert dgp.zeta(1.0) == pytest.approx(1.5 + 1.5 * np.tanh(0.15), rel=1e-15)
    assert dgp.zeta(1.0) == pytest.approx(1.723328, abs=1e-6)
    assert dgp.zeta(1e4) == pytest.approx(3.0) and dgp.zeta(-1e4) == pytest.approx(0.0, abs=1e-12)


def test_disturbance_special_cases():
    d = dgp.gen_disturbances(1000, (0, 0, 0), seed=1)
    assert not d.epsilon.any()
    d = dgp.gen_disturbances(1000, (0, 1, 0), seed=1)
    assert np.array_equal(d.epsilon, d.eta)


def test_disturbance_moments():
    n = 100_000
    d = dgp.gen_disturbances(n, (1, 1, 1), seed=2)
    e = d.epsilon
    assert abs(e.mean()) < 3 * e.std() / np.sqrt(n)
    # Var(eta nu + eta + nu) = 3; SE of the sample variance from the fourth moment
    m4 = np.mean((e - e.mean()) ** 4)
    se_var = np.sqrt((m4 - e.var() ** 2) / n)
    assert abs(e.var() - 3.0) < 3 * se_var
    assert np.array_equal(e, d.eta * d.nu + d.eta + d.nu)


def test_structural_h_examples():
    assert dgp.structural_h("h5", 2.0, 3.0, (0, 0, 1, 1, 1)) == pytest.approx(6.0)
    assert dgp.structural_h("h4", 1.0, 1.0, (1, 3)) == pytest.approx(1.0)
    assert dgp.structural_h("h3", 1.5, 1.5, (6, 0.5, 0.5, 1), rho=0.5) == pytest.approx(9.0)


def test_structural_g_examples():
    assert dgp.structural_g("g5", 1.0, 0.0, (2, 1, -0.25)) == pytest.approx(2.0)
    assert dgp.structural_g("g5", 2.0, 1.0, (0.5, 0.6, 0.1)) == pytest.approx(1.8)
    assert dgp.structural_g("g6", 0.0, 0.0, (6, 0.25, -0.5, 10, 0.5)) == 0.0


def test_domain_violation_raises():
    with pytest.raises(dgp.DomainError):
        dgp.structural_h("h1", -1.0, 1.0, (0, 5, 10, 0, -26.25, 3.25))


def test_simulate_rejects_empty_and_is_deterministic():
    spec = dgp.preset("ces")
    with pytest.raises(ValueError):
        dgp.simulate(spec, 0)
    a, b = dgp.simulate(spec, 500, seed=4), dgp.simulate(spec, 500, seed=4)
    for col in ("x", "y", "z", "eta", "omega", "nu", "epsilon"):
        assert np.array_equal(getattr(a, col), getattr(b, col))


def test_ces_mean_matches_independent_reimplementation():
    n = 100_000
    x = dgp.simulate(dgp.preset("ces"), n, seed=5).x
    rng = np.random.default_rng(12345)
    z, eta = rng.standard_normal(n), rng.standard_normal(n)
    zz, ee = 1.5 + 1.5 * np.tanh(0.15 * z), 1.5 + 1.5 * np.tanh(0.15 * eta)
    ref = 6.0 * (0.5 * zz ** -0.5 + 0.5 * ee ** -0.5) ** (-1.0 / 0.5)
    se = np.sqrt(x.var() / n + ref.var() / n)
    assert abs(x.mean() - ref.mean()) < 3 * se


def test_latent_invariants():
    n = 10_000
    for name in dgp.PRESETS:
        spec = dgp.preset(name)
        d = dgp.simulate(spec, n, seed=6)
        g1, g2, g3 = spec.gamma
        assert np.array_equal(d.epsilon, g1 * d.eta * d.nu + g2 * d.eta + g3 * d.nu)
        assert kstest(d.omega, "uniform").statistic < 1.63 / np.sqrt(n)
        assert abs(np.corrcoef(d.z, d.eta)[0, 1]) < 3 / np.sqrt(n)
        assert abs(np.corrcoef(d.z, d.nu)[0, 1]) < 3 / np.sqrt(n)


def test_zeta_range_keeps_log_forms_valid():
    t = np.linspace(-50, 50, 1001)
    v = dgp.zeta(t)
    assert np.all((v > 0) & (v < 3))


def test_presets_carry_caption_vectors():
    tl = dgp.preset("translog")
    assert tl.alpha == (0.0, 5.0, 10.0, 0.0, -26.25, 3.25)
    assert tl.beta == (8.0, -1.0, 6.0) and tl.gamma == (1.0, 1.0, -3.0)
    with pytest.raises(KeyError):
        dgp.preset("nope")


def test_csv_round_trip(tmp_path):
    d = dgp.simulate(dgp.preset("tanh"), 50, seed=7)
    write_csv(d, tmp_path / "d.csv")
    e = read_csv(tmp_path / "d.csv")
    for col in d.columns():
        assert np.array_equal(getattr(d, col), getattr(e, col))
    write_csv(Dataset([1.0], [2.0], [3.0]), tmp_path / "o.csv")
    assert not read_csv(tmp_path / "o.csv").has_latents
