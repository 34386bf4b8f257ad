import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glove.channel import (
    beamformed_gain,
    link_rate,
    misalignment_gain,
    path_gain,
    realize_link,
    sample_interference,
    sinr,
    steering_vector,
)
from glove.config import SPEED_OF_LIGHT, ArraySpec, BandPlan

BAND = BandPlan(1, 5e9, (300e9,), (0.0,))


def spec(mx=4, my=4, d0=5e-4, gt=1.0, gr=1.0):
    return ArraySpec(mx, my, d0, 64, gt, gr)


def test_single_element_steering():
    assert steering_vector(spec(1, 1), 1e-3, 0.3, 1.1).tolist() == [1.0 + 0j]


def test_steering_constant_modulus_unit_norm():
    a = steering_vector(spec(), 1e-3, 0.7, 0.2)
    assert np.allclose(np.abs(a), 0.25)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)


def test_steering_matches_per_element_evaluation():
    lam = 1e-3
    s = spec(2, 2, lam / 2)
    phi, theta = 0.0, math.pi / 2
    a = steering_vector(s, lam, phi, theta)
    expected = []
    for mx in range(2):
        for my in range(2):
            ph = 2 * math.pi * (lam / 2) / lam * (mx * math.sin(theta) * math.cos(phi) + my * math.cos(theta))
            expected.append(complex(math.cos(ph), math.sin(ph)) / 2)
    assert np.allclose(a, expected, atol=1e-15)
    # phase pattern {0, pi*m_x}
    assert np.allclose(np.angle(a[[0, 1]]), 0.0, atol=1e-12)
    assert np.allclose(np.abs(np.angle(a[[2, 3]])), math.pi, atol=1e-12)


def test_steering_rejects_bad_input():
    with pytest.raises(ValueError):
        steering_vector(spec(), 1e-3, math.nan, 0.0)
    with pytest.raises(ValueError):
        steering_vector(spec(), 0.0, 0.0, 0.0)


def test_path_gain_300ghz_100m():
    g = path_gain(BAND, 0, 100.0)
    assert g == pytest.approx((SPEED_OF_LIGHT / (4 * math.pi * 300e9 * 100)) ** 2, rel=1e-15)
    assert g == pytest.approx(6.3238e-13, rel=1e-4)
    assert 10 * math.log10(g) == pytest.approx(-121.99, abs=0.005)
    # the often-quoted 6.333e-13 / -121.98 dB comes from rounding c to 3e8
    assert (3e8 / (4 * math.pi * 300e9 * 100)) ** 2 == pytest.approx(6.333e-13, rel=1e-4)


def test_path_gain_inverse_square():
    assert path_gain(BAND, 0, 200.0) / path_gain(BAND, 0, 100.0) == pytest.approx(0.25, rel=1e-14)


def test_path_gain_with_absorption_high_precision():
    import mpmath

    mpmath.mp.dps = 40
    band = BandPlan(1, 5e9, (300e9,), (0.005,))
    ref = (mpmath.mpf(SPEED_OF_LIGHT) / (4 * mpmath.pi * mpmath.mpf(300e9) * 500)) ** 2 * mpmath.exp(-2.5)
    assert path_gain(band, 0, 500.0) == pytest.approx(float(ref), rel=1e-13)


def test_path_gain_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        path_gain(BAND, 0, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 1e3), st.floats(1.0, 1e3), st.floats(0, 0.1), st.floats(0, 0.1))
def test_path_gain_monotone(d1, d2, g1, g2):
    b1 = BandPlan(1, 1e9, (300e9,), (g1,))
    b2 = BandPlan(1, 1e9, (300e9,), (g2,))
    if d2 > d1 * (1 + 1e-9):
        assert path_gain(b1, 0, d1) > path_gain(b1, 0, d2)
    if g2 - g1 > 1e-6:
        assert path_gain(b1, 0, d1) > path_gain(b2, 0, d1)


def test_misalignment_deterministic_modes():
    assert misalignment_gain(None, 0.0, 0.1, 1.0) == 1.0
    assert misalignment_gain(None, 0.0, 0.1, 0.8) == 0.8


def test_misalignment_monte_carlo_mean():
    # closed form: E[exp(-2 r^2 / w^2)] for Rayleigh(s) is 1 / (1 + 4 s^2 / w^2)
    s, w = 0.05, 0.1
    samples = misalignment_gain(np.random.default_rng(0), s, w, 1.0, size=100_000)
    assert samples.mean() == pytest.approx(1 / (1 + 4 * s**2 / w**2), rel=0.01)
    assert samples.min() >= 0 and samples.max() <= 1.0


def test_misalignment_rejects_bad_params():
    with pytest.raises(ValueError):
        misalignment_gain(None, -1.0, 0.1, 1.0)


def test_beamformed_gain_identity_array():
    assert beamformed_gain(1, 1, spec(1, 1), 3e-13, 1.0) == pytest.approx(3e-13)


def test_beamformed_gain_linear_in_tx():
    s = spec()
    assert beamformed_gain(4, 3, s, 1e-13, 0.9) == pytest.approx(2 * beamformed_gain(2, 3, s, 1e-13, 0.9))


def test_beamformed_gain_product():
    g = 10 ** (5 / 20)
    s = spec(gt=g, gr=g)
    expected = (4 * 16) * (2 * 16) * g**2 * g**2 * 1e-13 * 0.9**2
    assert beamformed_gain(4, 2, s, 1e-13, 0.9) == pytest.approx(expected, rel=1e-14)


def test_beamformed_gain_needs_subarrays():
    with pytest.raises(ValueError):
        beamformed_gain(0, 1, spec(), 1e-13, 1.0)


def test_sinr_examples():
    assert sinr(0.0, 1e-12, 0.0, 1e-12) == 0.0
    assert sinr(1.0, 1e-12, 0.0, 1e-12) == pytest.approx(1.0)
    assert sinr(2.0, 1e-12, 0.0, 1e-12) > sinr(1.0, 1e-12, 0.0, 1e-12)
    with pytest.raises(ValueError):
        sinr(1.0, 1.0, 0.0, 0.0)


def test_link_rate_examples():
    assert link_rate(np.zeros(5), 5e9) == 0.0
    assert link_rate(np.ones(5), 5e9) == pytest.approx(25e9)
    assert link_rate([3.0, 1.0], 1.0) == pytest.approx(3.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e4), st.floats(1e-3, 10))
def test_link_rate_monotone_concave(g, h):
    r = lambda x: link_rate([x], 1.0)  # noqa: E731
    assert r(g + h) >= r(g)
    assert r(g + 2 * h) - 2 * r(g + h) + r(g) <= 1e-9


def test_interference_nonnegative_and_deterministic_mode():
    x = sample_interference(np.random.default_rng(0), 1.0, 5.0, 10000)
    assert (x >= 0).all()
    assert sample_interference(None, 0.3, 0.0, 3).tolist() == [0.3] * 3


def test_realize_link_reproducible():
    band = BandPlan(2, 5e9, (290e9, 295e9), (0.005, 0.005))
    s = spec(gt=1.7, gr=1.7)

    def make(seed):
        rng = np.random.default_rng(seed)
        i = sample_interference(rng, 1e-12, 5e-13, 2)
        return realize_link(0, 1, 120.0, 3, 2, np.array([0.2, 0.3]), band, s, 2e-11, i, 1.0)

    a, b = make(5), make(5)
    assert a.rate == b.rate and np.array_equal(a.sinr, b.sinr)
    assert abs(a.doppler_phase) == 1.0
    assert a.rate > 0
