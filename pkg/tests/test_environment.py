import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from stretchpoly.environment import (
    Environment,
    PotentialLaw,
    check_attractivity,
    derive_seed,
    parse_law,
    phi_beta,
    phi_table,
    sample_environment,
    site_uniforms,
)
from stretchpoly.errors import ValidationError

LAWS = [
    PotentialLaw.deterministic(0.5),
    PotentialLaw.bernoulli_trap(0.2),
    PotentialLaw.two_point(0.0, 2.0, 0.3),
    PotentialLaw.two_point(0.0, math.inf, 0.3),
    PotentialLaw.exponential(1.5),
]


@pytest.mark.parametrize("law", LAWS, ids=str)
def test_spec_round_trip(law):
    assert parse_law(law.spec()) == law


@pytest.mark.parametrize("text", ["bernoulli", "bernoulli:q=0.1", "gauss:s=1", "exp:rate=0", "bernoulli:p=1"])
def test_bad_law_specs_raise(text):
    with pytest.raises(ValidationError):
        parse_law(text)


def test_phi_bernoulli_closed_form():
    law = PotentialLaw.bernoulli_trap(0.3)
    assert phi_beta(law, 1.0, 0) == 0.0
    for ell in range(1, 6):
        assert phi_beta(law, 0.4, ell) == pytest.approx(-math.log(0.7), rel=1e-15)


def test_phi_exponential_closed_form():
    # E exp(-s V) = rate / (rate + s) for V ~ Exp(rate)
    rate, beta = 1.5, 0.7
    law = PotentialLaw.exponential(rate)
    for ell in range(1, 5):
        assert phi_beta(law, beta, ell) == pytest.approx(-math.log(rate / (rate + beta * ell)), rel=1e-14)


def test_phi_exponential_matches_quadrature():
    rate, beta = 1.5, 0.7
    law = PotentialLaw.exponential(rate)
    val, err = integrate.quad(lambda v: rate * math.exp(-(rate + beta) * v), 0, math.inf)
    assert phi_beta(law, beta, 1) == pytest.approx(-math.log(val), abs=10 * err + 1e-12)


def test_phi_two_point_closed_form():
    law = PotentialLaw.two_point(0.5, 2.0, 0.3)
    beta, ell = 0.8, 3
    expect = -math.log(0.7 * math.exp(-beta * ell * 0.5) + 0.3 * math.exp(-beta * ell * 2.0))
    assert phi_beta(law, beta, ell) == pytest.approx(expect, rel=1e-14)


@pytest.mark.parametrize("law", LAWS, ids=str)
def test_phi_vanishes_at_zero_beta(law):
    assert np.all(phi_table(law, 0.0, 6) == 0.0)


@pytest.mark.parametrize("law", LAWS, ids=str)
def test_named_laws_are_attractive(law):
    assert check_attractivity(law, 0.9, 8) == []


@settings(max_examples=60, deadline=None)
@given(
    v1=st.floats(0.0, 5.0),
    p=st.floats(0.01, 0.99),
    beta=st.floats(0.01, 3.0),
)
def test_two_point_phi_subadditive(v1, p, beta):
    phi = phi_table(PotentialLaw.two_point(0.0, v1, p), beta, 12)
    for a, b in itertools.product(range(1, 7), repeat=2):
        assert phi[a + b] <= phi[a] + phi[b] + 1e-12
        assert phi[a + b] >= phi[a] - 1e-12


def test_sampling_is_deterministic_and_nested():
    big = sample_environment("exp:rate=1.0", 3, 6, 42)
    small = sample_environment("exp:rate=1.0", 3, 3, 42)
    again = sample_environment("exp:rate=1.0", 3, 6, 42)
    assert big == again
    np.testing.assert_array_equal(big.centered(3), small.values)
    other = sample_environment("exp:rate=1.0", 3, 6, 43)
    assert not np.array_equal(other.values, big.values)


def test_grid_matches_pointwise_hash():
    env = sample_environment("exp:rate=2.0", 2, 4, 9)
    pts = np.array(list(env.sites()))
    u = site_uniforms(9, pts)
    np.testing.assert_array_equal(env.values.reshape(-1), env.law.sample_from_uniform(u))


def test_trap_fraction_near_p():
    env = sample_environment("bernoulli:p=0.25", 2, 60, 1)
    n = env.values.size
    assert abs(env.trap_fraction() - 0.25) < 4 * math.sqrt(0.25 * 0.75 / n)


def test_exponential_mean_near_one_over_rate():
    env = sample_environment("exp:rate=2.0", 2, 60, 2)
    assert env.values.mean() == pytest.approx(0.5, rel=0.03)


def test_text_round_trip(tmp_path):
    env = sample_environment("twopoint:v0=0,v1=inf,p=0.3", 2, 3, 5)
    path = tmp_path / "env.txt"
    env.save(path)
    assert Environment.load(path) == env


def test_truncated_file_rejected():
    text = sample_environment("exp:rate=1.0", 2, 2, 5).to_text()
    with pytest.raises(ValidationError):
        Environment.from_text("\n".join(text.splitlines()[:-1]))


def test_derived_seeds_distinct():
    seeds = {derive_seed(7, i) for i in range(1000)}
    assert len(seeds) == 1000


def test_seed_range_checked():
    with pytest.raises(ValidationError):
        sample_environment("exp:rate=1.0", 2, 2, -1)
