import numpy as np
import pytest

from stagediff.schedule import PROFILES, Schedule, build_schedule


def test_basic_shape_and_endpoints():
    s = build_schedule(50)
    assert s.T == 50
    assert s.alphas.shape == (51,)
    assert s.sigmas.shape == (50,)
    assert s.alphas[0] == 1.0
    assert s.alphas[-1] > 0.0


@pytest.mark.parametrize("profile", PROFILES)
@pytest.mark.parametrize("T", [2, 10, 100, 1000])
def test_alphas_strictly_decreasing(profile, T):
    s = build_schedule(T, profile)
    assert np.all(np.diff(s.alphas) < 0)


def test_eta_zero_gives_zero_sigmas():
    s = build_schedule(40, eta=0.0)
    assert np.all(s.sigmas == 0.0)


def test_eta_one_matches_posterior_std():
    # sigma_t = sqrt((1-a_prev)/(1-a_t)) * sqrt(1 - a_t/a_prev)
    s = build_schedule(40, eta=1.0)
    a_t = s.alphas[1:]
    a_prev = s.alphas[:-1]
    expected = np.sqrt((1.0 - a_prev) / (1.0 - a_t)) * np.sqrt(1.0 - a_t / a_prev)
    np.testing.assert_allclose(s.sigmas, expected, rtol=1e-12)


def test_eta_scales_sigmas_linearly():
    lo = build_schedule(30, eta=0.5)
    hi = build_schedule(30, eta=1.0)
    np.testing.assert_allclose(lo.sigmas, 0.5 * hi.sigmas, rtol=1e-12)


def test_direction_coefficient_stays_real():
    for eta in (0.0, 0.3, 1.0):
        s = build_schedule(64, eta=eta)
        assert np.all(1.0 - s.alphas[:-1] - s.sigmas**2 >= -1e-12)


def test_accessors_match_arrays():
    s = build_schedule(10, eta=1.0)
    for t in range(1, 11):
        assert s.alpha(t) == s.alphas[t]
        assert s.sigma(t) == s.sigmas[t - 1]


def test_subsampling_keeps_fine_grid_endpoints():
    # first and last fine-grid values survive any T <= 1000
    full = build_schedule(1000)
    for T in (2, 7, 50, 333):
        s = build_schedule(T)
        assert s.alphas[1] == full.alphas[1]
        assert s.alphas[-1] == full.alphas[-1]


def test_oversampling_interpolates_same_curve():
    # T beyond the internal grid: same terminal noise level, still monotone
    fine = build_schedule(1000)
    s = build_schedule(2000)
    assert s.T == 2000
    assert np.all(np.diff(s.alphas) < 0)
    np.testing.assert_allclose(s.alphas[-1], fine.alphas[-1], rtol=1e-12)
    np.testing.assert_allclose(s.alphas[1], fine.alphas[1], rtol=1e-12)


def test_cosine_profile_differs_and_is_valid():
    lin = build_schedule(100, "linear-beta")
    cos = build_schedule(100, "cosine")
    assert not np.allclose(lin.alphas, cos.alphas)
    assert np.all(np.diff(cos.alphas) < 0)


def test_dict_round_trip():
    s = build_schedule(20, "cosine", eta=0.7)
    back = Schedule.from_dict(s.to_dict())
    assert back.T == s.T and back.eta == s.eta
    np.testing.assert_array_equal(back.alphas, s.alphas)
    np.testing.assert_array_equal(back.sigmas, s.sigmas)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(T=1),
        dict(T=0),
        dict(T=10, eta=-0.1),
        dict(T=10, eta=1.5),
        dict(T=10, profile="quadratic"),
    ],
)
def test_build_rejects_bad_arguments(kwargs):
    with pytest.raises(ValueError):
        build_schedule(**kwargs)


def test_schedule_validates_invariants():
    good = build_schedule(5)
    with pytest.raises(ValueError):
        Schedule(T=5, alphas=good.alphas[:-1], eta=0.0, sigmas=good.sigmas)
    bad = np.array(good.alphas)
    bad[0] = 0.999
    with pytest.raises(ValueError):
        Schedule(T=5, alphas=bad, eta=0.0, sigmas=good.sigmas)
    with pytest.raises(ValueError):
        Schedule(T=5, alphas=good.alphas, eta=0.0, sigmas=np.full(5, -1.0))
    # sigma too large for the direction coefficient
    with pytest.raises(ValueError):
        Schedule(T=5, alphas=good.alphas, eta=0.0, sigmas=np.full(5, 2.0))


def test_arrays_are_read_only():
    s = build_schedule(10)
    with pytest.raises(ValueError):
        s.alphas[0] = 2.0
