import math

import numpy as np
import pytest

from stretchpoly.disorder import (
    Algebra,
    PathFamily,
    conditional_value,
    enumerate_conditional,
    enumerate_product,
    expect_product,
    f_family,
    family_from_vertices,
    product,
    sample_conditional,
    scaled,
    t_family,
    union,
)
from stretchpoly.environment import PotentialLaw, sample_environment
from stretchpoly.errors import CapacityError, ValidationError
from stretchpoly.exactenum import enumerate_basic
from stretchpoly.polymer import ConeSpec, annealed_weight, PolymerPath

LAW = PotentialLaw.two_point(0.0, 1.0, 0.4)
TRAP = PotentialLaw.bernoulli_trap(0.3)
CONE = ConeSpec.make(1.0, dims=2)
ORIGIN = np.zeros(2, dtype=np.int64)


def test_single_path_matches_annealed_weight():
    p = PolymerPath((1, 2, 1, -2), 2)
    fam = family_from_vertices(p.vertices[None], (1.0, 0.0))
    assert expect_product([fam], LAW, 0.8) == pytest.approx(annealed_weight(p, LAW, (1.0, 0.0), 0.8), rel=1e-14)


def test_family_mean_matches_enumerated_table():
    t, f = enumerate_basic(LAW, CONE, (1.0, 0.0), 0.8, 0.2, 4)
    fam = t_family(ORIGIN, None, 4, CONE, (1.0, 0.0), 0.2)
    assert expect_product([fam], LAW, 0.8) == pytest.approx(t.total(4), rel=1e-13)
    ff = f_family(ORIGIN, (3, 1), 4, CONE, (1.0, 0.0), 0.2)
    assert expect_product([ff], LAW, 0.8) == pytest.approx(f.get((3, 1), 4), rel=1e-13)


@pytest.mark.parametrize("law", [LAW, TRAP], ids=str)
@pytest.mark.parametrize("alg", ["full", "trivial", "half"])
def test_closed_form_matches_brute_force(law, alg):
    algebra = {"full": Algebra.full(), "trivial": Algebra.trivial(),
               "half": Algebra(lambda p: p[:, 0] <= 1)}[alg]
    a = t_family(ORIGIN, None, 3, CONE, (1.0, 0.0))
    b = f_family((1, 0), None, 3, CONE, (1.0, 0.0))
    groups = [a, b, product(a, b)]
    exact = expect_product(groups, law, 0.9, algebra)
    brute = enumerate_product(groups, law, 0.9, algebra)
    assert exact == pytest.approx(brute, rel=1e-12)


def test_enumeration_order_does_not_matter():
    a = t_family(ORIGIN, None, 3, CONE, (1.0, 0.0))
    K = len(a.sites)
    order = np.random.default_rng(0).permutation(K)
    alg = Algebra(lambda p: p[:, 1] >= 0)
    x = enumerate_product([a, a], TRAP, 0.5, alg)
    y = enumerate_product([a, a], TRAP, 0.5, alg, order=order)
    assert x == pytest.approx(y, rel=1e-13)


def test_jensen_ordering():
    # E[E(Y|A)^2] grows with A
    a = t_family(ORIGIN, None, 4, CONE, (1.0, 0.0))
    vals = [expect_product([a, a], TRAP, 1.0, alg) for alg in
            (Algebra.trivial(), Algebra(lambda p: p[:, 0] <= 1), Algebra(lambda p: p[:, 0] <= 2), Algebra.full())]
    assert vals[0] == pytest.approx(expect_product([a], TRAP, 1.0) ** 2, rel=1e-13)
    assert all(x <= y * (1 + 1e-13) for x, y in zip(vals, vals[1:]))


def test_signed_coefficients_allowed():
    a = t_family(ORIGIN, None, 2, CONE, (1.0, 0.0))
    mean = expect_product([a], LAW, 1.0)
    c = union([a, PathFamily(np.array([-mean]), np.zeros((0, 2), dtype=np.int64), np.zeros((1, 0), dtype=np.int64))])
    assert expect_product([c], LAW, 1.0) == pytest.approx(0.0, abs=1e-15)
    var = expect_product([c, c], LAW, 1.0)
    assert var == pytest.approx(expect_product([a, a], LAW, 1.0) - mean**2, rel=1e-12)
    assert var == pytest.approx(enumerate_product([c, c], LAW, 1.0), rel=1e-12)


def test_union_and_scaled_totals():
    a = t_family(ORIGIN, None, 2, CONE, (1.0, 0.0))
    b = f_family(ORIGIN, None, 3, CONE, (1.0, 0.0))
    assert union([a, b]).total() == pytest.approx(a.total() + b.total())
    assert scaled(a, 2.5).total() == pytest.approx(2.5 * a.total())
    assert product(a, b).total() == pytest.approx(a.total() * b.total())


def test_capacity_and_support_checks():
    big = t_family(ORIGIN, None, 6, CONE, (1.0, 0.0))
    with pytest.raises(CapacityError):
        enumerate_product([big], LAW, 1.0, cap=5)
    with pytest.raises(ValidationError):
        enumerate_product([big], PotentialLaw.exponential(1.0), 1.0)


def test_conditional_value_matches_enumeration_and_mc():
    env = sample_environment(LAW, 2, 6, 3)
    fam = f_family((1, 0), None, 4, CONE, (1.0, 0.0))
    alg = Algebra(lambda p: p[:, 0] <= 2)
    cv = conditional_value(fam, LAW, 1.0, alg, env)
    assert cv == pytest.approx(enumerate_conditional(fam, LAW, 1.0, alg, env), rel=1e-12)
    mean, err = sample_conditional(fam, LAW, 1.0, alg, env, 20_000, np.random.default_rng(1))
    assert abs(mean - cv) < 5 * err
    # full algebra: the quenched weight itself
    full = conditional_value(fam, LAW, 1.0, Algebra.full(), env)
    tq, fq = enumerate_basic(env, CONE, (1.0, 0.0), 1.0, 0.0, 4)
    assert full == pytest.approx(fq.anchored((1, 0)).total(4), rel=1e-12)


def test_traps_block_conditional_weights():
    env = sample_environment(TRAP, 2, 4, 0)
    fam = t_family(ORIGIN, None, 3, CONE, (1.0, 0.0))
    val = conditional_value(fam, TRAP, 1.0, Algebra.full(), env)
    tq, _ = enumerate_basic(env, CONE, (1.0, 0.0), 1.0, 0.0, 3)
    assert val == pytest.approx(tq.total(3), rel=1e-13, abs=1e-300)
    assert conditional_value(fam, TRAP, 0.0, Algebra.full(), env) == pytest.approx(fam.total())
