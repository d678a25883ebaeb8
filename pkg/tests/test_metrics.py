import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrtfnp.errors import DomainError
from hrtfnp.metrics import (
    calibration_curve,
    calibration_pairs,
    lmd,
    lre,
    lsd,
    mcd,
)


# ---------------------------------------------------------------------------
# per-feature metrics


def test_lre_goldens():
    assert abs(lre(1.0, 1.1) - (-20.0)) < 1e-9
    assert abs(lre(1.0, 2.0) - 0.0) < 1e-12
    assert lre(1.0, 1.0) == -300.0
    assert lre(0.0, 1.0) is None


def test_lmd_goldens():
    assert abs(lmd(1.0, 10.0) - 20.0) < 1e-12
    assert abs(lmd(1.0, 0.1) - 20.0) < 1e-12
    assert lmd(1.0, 1.0) == 0.0
    assert lmd(0.0, 1.0) is None
    assert lmd(1.0, 0.0) is None


def test_lsd_goldens():
    truth = np.ones((2, 8), dtype=complex)
    assert lsd(truth, truth.copy())[0] == 0.0
    value, _ = lsd(truth, 10.0 * truth)
    assert abs(value - 20.0) < 1e-12
    est = truth.copy()
    est[0] *= 10.0  # left ear off by 20 dB, right exact
    value, _ = lsd(truth, est)
    assert abs(value - 10.0) < 1e-12


def test_lsd_exclusion_count():
    truth = np.ones((2, 4), dtype=complex)
    est = truth.copy()
    truth[0, 1] = 0.0
    value, excluded = lsd(truth, est)
    assert excluded == 1
    assert value == 0.0
    all_zero = np.zeros((2, 4), complex)
    value, excluded = lsd(all_zero, est)
    assert value is None


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metrics_scale_invariant(seed):
    rng = np.random.default_rng(seed)
    m = complex(*rng.standard_normal(2))
    m_hat = complex(*rng.standard_normal(2))
    c = complex(*rng.standard_normal(2))
    if abs(m) < 1e-6 or abs(m_hat) < 1e-6 or abs(c) < 1e-6:
        return
    assert abs(lre(m, m_hat) - lre(c * m, c * m_hat)) < 1e-8
    assert abs(lmd(m, m_hat) - lmd(c * m, c * m_hat)) < 1e-8
    truth = np.array([[m, m_hat], [m_hat, m]], dtype=complex)
    est = np.array([[m_hat, m], [m, m_hat]], dtype=complex)
    assert abs(lsd(truth, est)[0] - lsd(c * truth, c * est)[0]) < 1e-8


# ---------------------------------------------------------------------------
# calibration


def test_calibration_curve_identical_pairs():
    curve = calibration_curve(np.full(20, 0.3), np.full(20, 0.3), 5)
    assert np.allclose(curve.mpv, 0.3)
    assert np.allclose(curve.mse, 0.3)
    assert mcd(curve) == 0.0


def test_calibration_curve_sorted_and_balanced():
    rng = np.random.default_rng(0)
    v = rng.uniform(0.0, 2.0, 103)
    e = rng.uniform(0.0, 2.0, 103)
    curve = calibration_curve(v, e, 10)
    assert np.all(np.diff(curve.mpv) >= 0)
    assert curve.group_sizes.max() - curve.group_sizes.min() <= 1
    assert curve.group_sizes.sum() == 103


def test_calibration_curve_argument_checks():
    with pytest.raises(ValueError):
        calibration_curve(np.ones(3), np.ones(3), 4)  # more divisions than pairs
    with pytest.raises(ValueError):
        calibration_curve(np.ones(3), np.ones(3), 0)
    with pytest.raises(ValueError):
        calibration_curve(-np.ones(3), np.ones(3), 2)


def test_mcd_goldens():
    curve = calibration_curve(np.ones(10), 2.0 * np.ones(10), 5)
    assert abs(mcd(curve) - 10.0 * np.log10(2.0)) < 1e-9  # ~3.0103 dB
    one = calibration_curve(np.ones(1), np.full(1, 10.0), 1)
    assert abs(mcd(one) - 10.0) < 1e-12


def test_mcd_rejects_zero_mpv():
    curve = calibration_curve(np.zeros(4), np.ones(4), 2)
    with pytest.raises(DomainError):
        mcd(curve)


def test_mcd_nonnegative_property():
    rng = np.random.default_rng(1)
    curve = calibration_curve(rng.uniform(0.1, 1, 50), rng.uniform(0.1, 1, 50), 7)
    assert mcd(curve) >= 0.0


def test_calibrated_monte_carlo_pairs():
    # errors drawn with variance equal to the predicted variance: each group's
    # MSE must track its MPV within 10%, and the MCD stays under 0.5 dB
    rng = np.random.default_rng(2)
    n = 10**5
    variance = rng.uniform(0.05, 2.0, n)
    errors = rng.standard_normal(n) * np.sqrt(variance)
    curve = calibration_curve(variance, errors**2, 10)
    assert np.abs(curve.mse / curve.mpv - 1.0).max() < 0.10
    assert mcd(curve) < 0.5


def test_calibration_pairs_layout():
    rng = np.random.default_rng(3)
    truth = rng.standard_normal((4, 2, 3)) + 1j * rng.standard_normal((4, 2, 3))
    mu = rng.standard_normal((4, 2, 3)) + 1j * rng.standard_normal((4, 2, 3))
    sigma = np.full((4, 2, 3), 0.5 + 0.25j)
    pairs = calibration_pairs(truth, mu, sigma)
    assert len(pairs["variance"]) == 4 * 2 * 2 * 3
    re_rows = pairs["part"] == 0
    assert np.allclose(pairs["variance"][re_rows], 0.25)
    assert np.allclose(pairs["variance"][~re_rows], 0.0625)
    row = 5
    t, e, p, b = (pairs[k][row] for k in ("target", "ear", "part", "bin"))
    y = truth[t, e].real if p == 0 else truth[t, e].imag
    m = mu[t, e].real if p == 0 else mu[t, e].imag
    assert abs(pairs["sq_error"][row] - (y[b] - m[b]) ** 2) < 1e-12
