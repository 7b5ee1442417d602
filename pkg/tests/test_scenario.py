import numpy as np
import pytest

from h2price.scenario import (
    DiscreteDistribution, ScenarioError, build_scaled_distribution, deterministic_model,
    joint_support, load_profiles, sample_indices, sample_path, sample_paths, support, write_profiles,
)


def test_scaled_distribution_reference():
    d = build_scaled_distribution(100.0)
    assert np.allclose(d.values, [80, 90, 100, 110, 120])
    assert np.allclose(d.probs, 0.2)
    assert d.mean() == pytest.approx(100.0)
    assert np.all(build_scaled_distribution(0.0).values == 0)
    with pytest.raises(ScenarioError):
        build_scaled_distribution(-1.0)
    with pytest.raises(ScenarioError):
        DiscreteDistribution([1.0, 2.0], [0.5, 0.6])


def test_sample_path_determinism(noise):
    a = sample_path(noise, 3)
    b = sample_path(noise, 3)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    det = deterministic_model([1.0, 2.0], [3.0, 4.0])
    d, v = sample_path(det, 11)
    assert np.array_equal(d, [1.0, 2.0]) and np.array_equal(v, [3.0, 4.0])
    assert det.is_deterministic and not noise.is_deterministic


def test_empirical_frequencies(noise):
    n = 100_000
    di, vi = sample_indices(noise, n, 5)
    for h in (0, 12, 100):
        for idx, dist in ((di[:, h], noise.stages[h].demand), (vi[:, h], noise.stages[h].pv)):
            freq = np.bincount(idx, minlength=len(dist.probs)) / n
            sigma = np.sqrt(dist.probs * (1 - dist.probs) / n)
            # 30 simultaneous checks, so widen 3 sigma to keep the family-wise error small
            assert np.all(np.abs(freq - dist.probs) <= 4 * sigma + 1e-12)


def test_support_accessors(noise, profiles):
    st = support(noise, 0)
    assert st.demand.mean() == pytest.approx(profiles.mu_d[0])
    assert st.pv.mean() == pytest.approx(profiles.mu_pv[0])
    d, v, p = joint_support(noise, 5)
    assert len(d) == 25 and p.sum() == pytest.approx(1.0)
    with pytest.raises(ScenarioError):
        support(noise, noise.horizon)


def test_exact_expectation_matches_monte_carlo(noise):
    h = 12
    d, v, p = joint_support(noise, h)
    f = lambda dd, vv: np.minimum(dd * 10, vv) + 0.5 * dd
    exact = float(p @ f(d, v))
    dem, pv = sample_paths(noise, 20_000, 1)
    samples = f(dem[:, h], pv[:, h])
    assert abs(samples.mean() - exact) <= 4 * samples.std() / np.sqrt(len(samples)) + 1e-12


def test_profile_round_trip(tmp_path, profiles):
    path = tmp_path / "p.csv"
    write_profiles(profiles, path)
    back = load_profiles(path)
    assert np.array_equal(back.mu_pv, profiles.mu_pv) and np.array_equal(back.c_grid, profiles.c_grid)
    assert profiles.horizon == 168
    assert np.all(profiles.mu_pv >= 0) and np.any(profiles.mu_pv == 0)


def test_profile_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("hour,mu_pv_kwh\n0,1\n")
    with pytest.raises(ScenarioError):
        load_profiles(path)
