"""Distribution oracles and invariants.

Frozen expected values were computed from the closed forms independently of
the module under test (geometric series algebra; tanh identity for the
center mass)."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from mechsynth.dist import (DiscreteExponential, DiscreteLaplace,
                            log_weight_coeffs, make_dist, weight_ratio)

SCALES = (0.5, 1.0, 2.0, 4.0)


# ---------------------------------------------------------------------------
# pmf / normalizer / tail oracles
# ---------------------------------------------------------------------------

def test_dlap_center_mass_oracle():
    # (1-q)/(1+q) = tanh(1/(2b))
    assert DiscreteLaplace(1.0).pmf(0) == pytest.approx(0.462117157260, abs=1e-12)
    assert DiscreteLaplace(2.0).pmf(0) == pytest.approx(0.244918662404, abs=1e-12)
    assert DiscreteLaplace(2.0).pmf(0) == pytest.approx(math.tanh(0.25), abs=1e-15)


def test_dlap_normalizer_closed_form():
    # sum_k q^|k| = (1+q)/(1-q); norm_const stores its reciprocal C(b)
    expected = {0.5: 1.313035285499, 1: 2.163953413739,
                2: 4.082988165074, 4: 8.041623328376}
    for b, norm in expected.items():
        assert 1.0 / DiscreteLaplace(b).norm_const == pytest.approx(
            norm, abs=1e-12)


def test_dlap_pmf_sums_to_one_with_tail():
    for b in SCALES:
        d = DiscreteLaplace(b, mean=3)
        center = sum(d.pmf(3 + k) for k in range(-60, 61))
        tails = d.tail(61) * 2  # symmetric
        assert center + tails == pytest.approx(1.0, abs=1e-9)


def test_dlap_tail_oracle():
    assert DiscreteLaplace(2.0).tail(5) == pytest.approx(0.051094573345, abs=1e-12)


def test_dexp_pmf_and_tail_oracle():
    d = DiscreteExponential(3.0, offset=10)
    assert d.pmf(12) == pytest.approx(0.145537677861, abs=1e-12)
    assert d.tail(4) == pytest.approx(0.263597138116, abs=1e-12)
    assert d.pmf(9) == 0.0
    total = sum(d.pmf(10 + k) for k in range(0, 80)) + d.tail(80)
    assert total == pytest.approx(1.0, abs=1e-9)


def test_make_dist_families():
    assert isinstance(make_dist("lap", 2.0), DiscreteLaplace)
    assert isinstance(make_dist("exp", 2.0), DiscreteExponential)
    assert make_dist("lap", 2.0, center=5).mean == 5
    assert make_dist("exp", 2.0, center=5).offset == 5
    with pytest.raises(ValueError):
        make_dist("gauss", 2.0)
    with pytest.raises(ValueError):
        make_dist("lap", 0.0)


# ---------------------------------------------------------------------------
# adjacent-mean ratio invariant
# ---------------------------------------------------------------------------

@given(b=st.sampled_from(SCALES), k=st.integers(-30, 30))
def test_dlap_adjacent_mean_ratio_bound(b, k):
    p0 = DiscreteLaplace(b, mean=0)
    p1 = DiscreteLaplace(b, mean=1)
    ratio = p0.pmf(k) / p1.pmf(k)
    bound = math.exp(1.0 / b)
    assert ratio <= bound * (1 + 1e-12)
    if k <= 0:
        assert ratio == pytest.approx(bound, rel=1e-12)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def test_sampler_chi_square_against_pmf():
    d = DiscreteLaplace(2.0)
    rng = np.random.default_rng(7)
    draws = d.sample_array(rng, 100000)
    lo, hi = -8, 8
    obs = np.array([(draws == k).sum() for k in range(lo, hi + 1)], dtype=float)
    obs = np.append(obs, (draws < lo).sum() + (draws > hi).sum())
    exp = np.array([d.pmf(k) for k in range(lo, hi + 1)])
    exp = np.append(exp, 2 * d.tail(hi + 1)) * len(draws)
    stat, p = chisquare(obs, exp)
    assert p > 1e-3


def test_scalar_and_bulk_samplers_share_law():
    # same family check via coarse-bin chi-square on the scalar path
    d = DiscreteLaplace(1.0, mean=2)
    rng = np.random.default_rng(11)
    scalar = np.array([d.sample(rng) for _ in range(20000)])
    bins = [-np.inf, 0, 1, 2, 3, 4, np.inf]
    obs = np.histogram(scalar, bins)[0].astype(float)
    # exact bin masses from pmf/tail
    mass = [sum(d.pmf(k) for k in range(-30, 0)) + d.tail(33),
            d.pmf(0), d.pmf(1), d.pmf(2), d.pmf(3),
            sum(d.pmf(k) for k in range(4, 40)) + d.tail(38)]
    mass = np.array(mass)
    mass /= mass.sum()
    stat, p = chisquare(obs, mass * len(scalar))
    assert p > 1e-3


def test_dexp_sampler_matches_pmf():
    d = DiscreteExponential(2.0, offset=-1)
    rng = np.random.default_rng(3)
    draws = d.sample_array(rng, 100000)
    assert draws.min() >= -1
    obs = np.array([(draws == -1 + k).sum() for k in range(0, 12)], dtype=float)
    obs = np.append(obs, (draws >= 11).sum())
    exp = np.array([d.pmf(-1 + k) for k in range(0, 12)])
    exp = np.append(exp, d.tail(12)) * len(draws)
    stat, p = chisquare(obs, exp)
    assert p > 1e-3


def test_sampling_is_deterministic_per_seed():
    d = DiscreteLaplace(3.0)
    a = d.sample_array(np.random.default_rng(42), 100)
    b = d.sample_array(np.random.default_rng(42), 100)
    assert (a == b).all()


# ---------------------------------------------------------------------------
# importance weights
# ---------------------------------------------------------------------------

def test_log_weight_coeffs_oracle():
    alpha, beta = log_weight_coeffs("lap", 2.0, 4.0)
    assert alpha == pytest.approx(0.677801855578, abs=1e-12)
    assert beta == pytest.approx(-0.25, abs=1e-15)


@given(v=st.integers(-20, 20), mean=st.integers(-3, 3),
       t=st.sampled_from(SCALES), p=st.sampled_from(SCALES))
def test_weight_ratio_consistent_with_pmfs(v, mean, t, p):
    expected = (DiscreteLaplace(t, mean=mean).pmf(v)
                / DiscreteLaplace(p, mean=mean).pmf(v))
    got = weight_ratio(v, mean, t, p, family="lap")
    assert got == pytest.approx(expected, rel=1e-10)


@given(v=st.integers(0, 20), t=st.sampled_from(SCALES), p=st.sampled_from(SCALES))
def test_weight_ratio_exp_consistent(v, t, p):
    expected = (DiscreteExponential(t).pmf(v) / DiscreteExponential(p).pmf(v))
    got = weight_ratio(v, 0, t, p, family="exp")
    assert got == pytest.approx(expected, rel=1e-10)


def test_weight_ratio_bottom_target_rejected():
    with pytest.raises(ValueError):
        weight_ratio(1, 0, None, 4.0)


def test_weight_ratio_out_of_support():
    with pytest.raises(ValueError):
        weight_ratio(-1, 0, 2.0, 4.0, family="exp")


@given(t=st.sampled_from(SCALES))
def test_weight_ratio_identity_when_target_is_proposal(t):
    assert weight_ratio(5, 0, t, t) == pytest.approx(1.0, rel=1e-12)
