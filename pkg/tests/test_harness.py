import math

import numpy as np
import pytest

from stretchpoly.disorder import Algebra, expect_product, f_family
from stretchpoly.environment import PotentialLaw, sample_environment
from stretchpoly.errors import CapacityError, ValidationError
from stretchpoly.exactenum import enumerate_basic
from stretchpoly.harness import (
    HalfSpaceAlgebra,
    cond_expect_f,
    dependence_region,
    empirical_lln,
    ensemble_slice_stats,
    f_statistic,
    mixingale_profile,
    pooled_moments,
    quenched_clt,
    s_series,
    sinai_statistic,
    tilted_walk_tail,
    tower_residual,
)
from stretchpoly.polymer import ConeSpec
from stretchpoly.renewal import fit_renewal

LAW = PotentialLaw.bernoulli_trap(0.2)
CONE = ConeSpec.make(1.0, dims=2)
H = (1.0, 0.0)


def test_half_space_levels_nested():
    pts = np.array([[x, 0] for x in range(-3, 8)])
    prev = HalfSpaceAlgebra(0, 0.6).contains(pts)
    for m in range(1, 10):
        cur = HalfSpaceAlgebra(m, 0.6).contains(pts)
        assert np.all(cur >= prev)
        prev = cur
    assert HalfSpaceAlgebra(3, 0.6).threshold == 1
    assert HalfSpaceAlgebra.full().contains(pts).all()
    assert not HalfSpaceAlgebra.trivial().contains(pts).any()
    with pytest.raises(ValidationError):
        HalfSpaceAlgebra(1, -0.5)


def test_dependence_region_contains_every_path():
    for y, m in [((3, 0), 5), ((3, -3), 6), ((2, -1), 3)]:
        fam = f_family((0, 0), y, m, CONE, H)
        assert fam.size > 0
        reg = {tuple(p) for p in dependence_region((0, 0), y, CONE).tolist()}
        assert {tuple(p) for p in fam.sites.tolist()} <= reg


def test_dependence_region_empty_off_cone():
    assert len(dependence_region((0, 0), (0, 3), CONE)) == 0


def test_cond_expect_modes_agree():
    law = PotentialLaw.two_point(0.0, 1.0, 0.4)
    env = sample_environment(law, 2, 8, 4)
    alg = HalfSpaceAlgebra(4, 0.6)
    kw = dict(algebra=alg, env=env, law=law, beta=1.0, h=H, cone=CONE)
    ex = cond_expect_f((0, 0), ((3, 0), 5), **kw)
    fa = cond_expect_f((0, 0), ((3, 0), 5), mode="factorized", **kw)
    mc = cond_expect_f((0, 0), ((3, 0), 5), mode="mc", n_samples=20_000, seed=3, **kw)
    assert ex.value > 0
    assert ex.value == pytest.approx(fa.value, rel=1e-12)
    assert abs(mc.value - ex.value) < 5 * mc.stderr + 1e-15
    assert ex.frozen_sites > 0 and ex.free_sites > 0


def test_cond_expect_capacity():
    env = sample_environment(LAW, 2, 10, 4)
    with pytest.raises(CapacityError):
        cond_expect_f((0, 0), ((3, 0), 5), HalfSpaceAlgebra.trivial(), env, LAW, 1.0, H, CONE, cap=2)


def test_cond_expect_full_algebra_is_quenched_weight():
    env = sample_environment(LAW, 2, 8, 6)
    ce = cond_expect_f((0, 0), ((3, 0), 5), HalfSpaceAlgebra.full(), env, LAW, 1.0, H, CONE)
    _, f = enumerate_basic(env, CONE, H, 1.0, 0.0, 4)
    assert ce.value == pytest.approx(f.get((3, 0), 5), rel=1e-13, abs=1e-300)


@pytest.mark.parametrize("k", [-1, 1, 2, 3, 6])
def test_tower_property(k):
    alg = HalfSpaceAlgebra(k, 0.6)
    fam = f_family((0, 0), (3, 0), 5, CONE, H)
    assert fam.size > 0
    assert tower_residual((0, 0), ((3, 0), 5), alg, LAW, 1.0, H, CONE) <= 1e-12


def test_statistics_are_centred():
    st = sinai_statistic(2, 3, LAW, 1.0, H, CONE, 0.0)
    assert expect_product([st.family()], LAW, 1.0) == pytest.approx(0.0, abs=1e-14)
    fs = f_statistic((0, 0), ((2, 0), 2), LAW, 1.0, H, CONE, 0.0)
    assert expect_product([fs.family()], LAW, 1.0) == pytest.approx(0.0, abs=1e-14)


def test_mixingale_profile_shape():
    model = fit_renewal(LAW, 2, H, 1.0, 6, CONE)
    speed = float(np.linalg.norm(model.v_))
    prof = mixingale_profile(3, range(7), LAW, 1.0, H, CONE, speed, model.lambda_, M=3)
    assert prof.non_increasing()
    assert prof.forward[-1] == 0.0
    assert prof.backward[0] <= prof.variance + 1e-15
    assert prof.forward[0] <= prof.variance + 1e-15


def test_mixingale_vanishes_without_disorder():
    prof = mixingale_profile(3, range(4), "det:v=0.5", 1.0, H, CONE, 0.6, M=3)
    assert np.all(prof.backward == 0) and np.all(prof.forward == 0)


def test_mixingale_ensemble_tracks_exact():
    st = f_statistic((1, 0), ((3, 0), 5), LAW, 1.0, H, CONE, 0.0)
    ex = mixingale_profile(4, [0, 1, 2], LAW, 1.0, H, CONE, 0.6, statistic=st)
    en = mixingale_profile(4, [0, 1, 2], LAW, 1.0, H, CONE, 0.6, statistic=st, mode="ensemble", n_env=3000, seed=1)
    np.testing.assert_allclose(en.forward, ex.forward, rtol=0.15, atol=1e-12)
    np.testing.assert_allclose(en.variance, ex.variance, rtol=0.15)


def test_s_series_structure():
    env = sample_environment(LAW, 2, 14, 2)
    res = s_series(env, LAW, CONE, H, 1.0, N=5, M=4)
    assert res.values[0] == pytest.approx(1.0 + res.extra["Z"][0])
    np.testing.assert_allclose(np.diff(res.values), res.extra["Z"][1:], atol=1e-15)
    with pytest.raises(CapacityError):
        s_series(env, LAW, CONE, H, 1.0, N=11)


def test_s_series_free_case():
    env = sample_environment(LAW, 2, 14, 2)
    res = s_series(env, LAW, CONE, H, 0.0, N=5, M=4)
    np.testing.assert_allclose(res.values, 1.0, atol=1e-14)


def test_pooled_moments_free_walk():
    recs = ensemble_slice_stats(LAW, 2, H, 0.0, [10], 3, 0)
    mean, cov = pooled_moments(recs, 0)
    v = math.sinh(1) / (math.cosh(1) + 1)
    assert mean[0] == pytest.approx(10 * v, rel=1e-12)
    assert cov[1, 1] == pytest.approx(10 / (math.cosh(1) + 1), rel=1e-12)


def test_quenched_clt_free_case_is_annealed():
    v = np.array([math.sinh(1) / (math.cosh(1) + 1), 0.0])
    Sig = np.diag([math.cosh(1) / (math.cosh(1) + 1) - v[0] ** 2, 1 / (math.cosh(1) + 1)])
    res = quenched_clt(LAW, 2, H, 0.0, [16, 64], [(1.0, 0.0), (0.0, 1.0)], 3, 0, v=v, Sigma=Sig)
    assert res.median_deviation[1] < res.median_deviation[0]
    assert np.all(res.iqr_deviation <= 1e-12)


def test_lln_free_case_matches_exact_tail():
    v = np.array([math.sinh(1) / (math.cosh(1) + 1), 0.0])
    res = empirical_lln(LAW, 2, H, 0.0, [10, 20], [0.25], 2, 0, v)
    for i, n in enumerate([10, 20]):
        assert res.mean_tail[i, 0] == pytest.approx(tilted_walk_tail(H, n, 0.25, v, 2), rel=1e-10)
