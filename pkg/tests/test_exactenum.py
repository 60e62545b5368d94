import itertools
import math

import numpy as np
import pytest

from stretchpoly.environment import PotentialLaw, sample_environment
from stretchpoly.errors import CapacityError, ValidationError
from stretchpoly.exactenum import (
    all_paths,
    confined_paths,
    enumerate_basic,
    enumerate_Q,
    irreducible_from_confined,
    irreducible_paths,
    verify_renewal,
)
from stretchpoly.polymer import ConeSpec, PolymerPath, is_cone_confined, is_irreducible, quenched_weight


def _brute_paths(dims, n):
    labels = [s * (i + 1) for i in range(dims) for s in (1, -1)]
    return [PolymerPath(steps, dims) for steps in itertools.product(labels, repeat=n)]


@pytest.mark.parametrize("dims,n", [(2, 5), (3, 3)])
def test_path_counts_match_brute_force(dims, n):
    cone = ConeSpec.make(1.0, dims=dims)
    paths = _brute_paths(dims, n)
    assert all_paths(dims, n).count == (2 * dims) ** n
    assert confined_paths(dims, n, cone).count == sum(is_cone_confined(p, cone) for p in paths)
    assert irreducible_paths(dims, n, cone).count == sum(is_irreducible(p, cone) for p in paths)


def test_free_partition_function_closed_form():
    h = np.array([0.6, -0.3])
    tab = enumerate_Q(PotentialLaw.deterministic(0.0), h, 0.0, 7, dims=2)
    step = (np.exp(h).sum() + np.exp(-h).sum()) / 4
    for n in range(8):
        assert tab.partition_function(n) == pytest.approx(step**n, rel=1e-13)


def test_quenched_Q_matches_path_sum():
    env = sample_environment("twopoint:v0=0,v1=inf,p=0.3", 2, 6, 4)
    h, beta = (0.5, 0.2), 0.7
    tab = enumerate_Q(env, h, beta, 5)
    for n in range(1, 6):
        brute = sum(quenched_weight(p, env, h, beta) for p in _brute_paths(2, n))
        assert tab.partition_function(n) == pytest.approx(brute, rel=1e-12)


def test_annealed_Q_is_ensemble_limit_for_one_site():
    # n = 1 visits one site once: Q_1 = E[exp(-beta V)] * sum_e exp(h.e) / 2D
    law = PotentialLaw.exponential(2.0)
    tab = enumerate_Q(law, (1.0, 0.0), 0.5, 1, dims=2)
    expect = 2.0 / 2.5 * (math.exp(1) + math.exp(-1) + 2) / 4
    assert tab.partition_function(1) == pytest.approx(expect, rel=1e-14)


def test_capacity_error():
    with pytest.raises(CapacityError) as info:
        enumerate_Q("bernoulli:p=0.1", 1.0, 0.5, 11, dims=2)
    assert info.value.exit_code == 3


@pytest.mark.parametrize("dims,nmax", [(2, 7), (3, 5)])
def test_renewal_identity_quenched_and_annealed(dims, nmax):
    cone = ConeSpec.make(1.0, dims=dims)
    env = sample_environment("exp:rate=1.0", dims, 2 * nmax + 1, 8)
    for src in (env, PotentialLaw.two_point(0.0, 1.0, 0.4)):
        t, f = enumerate_basic(src, cone, 1.0, 0.8, 0.2, nmax, dims=dims)
        assert max(verify_renewal(t, f, n) for n in range(1, nmax + 1)) <= 1e-12


def test_literal_confinement_breaks_annealed_identity():
    # without simple ends, adjacent pieces can share a site and Phi no longer splits
    law = PotentialLaw.two_point(0.0, 1.0, 0.4)
    cone = ConeSpec.make(1.0, dims=2, simple_ends=False)
    t, f = enumerate_basic(law, cone, 1.0, 0.8, 0.0, 4, dims=2)
    assert verify_renewal(t, f, 3) <= 1e-12
    assert verify_renewal(t, f, 4) > 1e-4


def test_renewal_identity_detects_mismatch():
    cone = ConeSpec.make(1.0, dims=2)
    t, f = enumerate_basic("bernoulli:p=0.2", cone, 1.0, 0.5, 0.0, 5, dims=2)
    _, g = enumerate_basic("bernoulli:p=0.2", cone, 1.0, 0.9, 0.0, 5, dims=2)
    with pytest.raises(ValidationError):
        verify_renewal(t, g, 3)


def test_deconvolution_recovers_f():
    cone = ConeSpec.make(1.0, dims=2)
    t, f = enumerate_basic("bernoulli:p=0.1", cone, 1.0, 0.5, 0.0, 8, dims=2)
    g = irreducible_from_confined(t)
    for n in range(1, 9):
        np.testing.assert_allclose(g.to_dense(n, 8), f.to_dense(n, 8), atol=1e-14)


def test_lambda_shift_scales_entries():
    cone = ConeSpec.make(1.0, dims=2)
    t, f = enumerate_basic("bernoulli:p=0.1", cone, 1.0, 0.5, 0.0, 5, dims=2)
    s = f.shifted(0.3)
    for n in range(1, 6):
        assert s.total(n) == pytest.approx(f.total(n) * math.exp(-0.3 * n), rel=1e-14)


def test_table_csv_has_metadata():
    cone = ConeSpec.make(1.0, dims=2)
    t, _ = enumerate_basic("bernoulli:p=0.1", cone, 1.0, 0.5, 0.0, 3, dims=2)
    text = t.to_csv()
    assert text.startswith("#") and "kind=full_t" in text
    assert "n,x1,x2,weight" in text
