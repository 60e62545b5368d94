import math

import numpy as np
import pytest

from stretchpoly.environment import PotentialLaw, sample_environment
from stretchpoly.errors import BoxError, ValidationError
from stretchpoly.exactenum import enumerate_basic, enumerate_Q
from stretchpoly.polymer import ConeSpec
from stretchpoly.transfer import (
    annealed_denominators,
    char_ratio,
    char_sum,
    cone_dp_t,
    dp_log_totals,
    dp_quenched,
    dp_sweep,
    ensemble_log_totals,
    mc_annealed,
    ratio_series,
)


def _free_rate(h, dims):
    return (math.cosh(h) + dims - 1) / dims


@pytest.mark.parametrize("dims", [2, 3])
def test_zero_beta_closed_form(dims):
    env = sample_environment("bernoulli:p=0.3", dims, 30, 1)
    for n in (1, 10, 30):
        assert dp_quenched(env, 1.0, 0.0, n).total() == pytest.approx(_free_rate(1.0, dims) ** n, rel=1e-12)


def test_dp_matches_enumeration_3d():
    env = sample_environment("exp:rate=1.0", 3, 6, 2)
    Q = enumerate_Q(env, (0.4, 0.1, 0.0), 0.6, 5)
    for n in range(6):
        sl = dp_quenched(env, (0.4, 0.1, 0.0), 0.6, n, fold_tilt=False)
        np.testing.assert_allclose(sl.to_dense(), Q.to_dense(n, n), rtol=1e-12, atol=0)


def test_sweep_equals_single_runs():
    env = sample_environment("exp:rate=1.0", 2, 20, 3)
    for sl in dp_sweep(env, 0.8, 0.5, [3, 11, 20]):
        ref = dp_quenched(env, 0.8, 0.5, sl.n)
        np.testing.assert_allclose(sl.linear(), ref.linear(), rtol=1e-14)


def test_log_and_linear_agree():
    env = sample_environment("exp:rate=1.0", 2, 40, 4)
    a = dp_quenched(env, 1.0, 1.0, 40, log_space=False)
    b = dp_quenched(env, 1.0, 1.0, 40, log_space=True)
    assert b.is_log and not a.is_log
    np.testing.assert_allclose(b.linear(), a.linear(), rtol=1e-10, atol=0)


def test_log_totals_consistent_with_slices():
    env = sample_environment("bernoulli:p=0.1", 2, 12, 4)
    lt = dp_log_totals(env, 1.0, 0.5, 12)
    assert lt[0] == 0.0
    assert lt[12] == pytest.approx(math.log(dp_quenched(env, 1.0, 0.5, 12).total()), rel=1e-13)


def test_blocked_origin_gives_zero():
    # search a seed whose origin is fully blocked
    seed = next(s for s in range(10_000) if sample_environment("bernoulli:p=0.5", 2, 1, s).origin_blocked())
    env = sample_environment("bernoulli:p=0.5", 2, 5, seed)
    assert dp_quenched(env, 1.0, 0.5, 3).total() == 0.0
    assert dp_log_totals(env, 1.0, 0.5, 3)[3] == -math.inf


def test_box_too_small():
    env = sample_environment("exp:rate=1.0", 2, 4, 0)
    with pytest.raises(BoxError):
        dp_quenched(env, 1.0, 0.5, 5)


def test_char_sum_and_ratio():
    env = sample_environment("exp:rate=1.0", 2, 10, 5)
    sl = dp_quenched(env, 1.0, 0.5, 10)
    assert char_ratio(sl, (0.0, 0.0), (0.3, 0.0)) == pytest.approx(1.0)
    a = (0.4, -0.2)
    assert char_ratio(sl, a, (0.3, 0.0)) == pytest.approx(char_sum(sl, a, (0.3, 0.0)) / sl.total(), rel=1e-12)
    lg = dp_quenched(env, 1.0, 0.5, 10, log_space=True)
    assert char_sum(lg, a, (0.3, 0.0)) == pytest.approx(char_sum(sl, a, (0.3, 0.0)), rel=1e-12)


def test_moments_of_free_walk():
    env = sample_environment("bernoulli:p=0.2", 2, 20, 1)
    sl = dp_quenched(env, 1.0, 0.0, 20)
    mean, cov = sl.moments()
    v = math.sinh(1.0) / (math.cosh(1.0) + 1)
    assert mean[0] == pytest.approx(20 * v, rel=1e-12)
    assert cov[1, 1] == pytest.approx(20 / (math.cosh(1.0) + 1), rel=1e-12)


def test_window_drops_mass_with_bound():
    env = sample_environment("exp:rate=1.0", 2, 20, 3)
    full = dp_quenched(env, 1.0, 0.5, 20).total()
    win = dp_quenched(env, 1.0, 0.5, 20, window=[(-2, 20), (-6, 6)])
    assert win.total() <= full
    assert (full - win.total()) / win.total() <= win.leaked_bound + 1e-12


def test_ensemble_rows_do_not_depend_on_jobs():
    a = ensemble_log_totals("bernoulli:p=0.1", 2, 1.0, 0.5, 6, 4, 9, jobs=1)
    b = ensemble_log_totals("bernoulli:p=0.1", 2, 1.0, 0.5, 6, 4, 9, jobs=2)
    np.testing.assert_array_equal(a, b)


def test_mc_annealed_without_disorder_is_exact():
    est = mc_annealed("bernoulli:p=0.1", 1.0, 0.0, 12, 5, 0, dims=2)
    assert est.estimate == pytest.approx(_free_rate(1.0, 2) ** 12, rel=1e-12)
    assert est.stderr == pytest.approx(0.0, abs=1e-12)


def test_mc_annealed_tracks_enumeration():
    law = PotentialLaw.two_point(0.0, 1.0, 0.5)
    exact = enumerate_Q(law, (1.0, 0.0), 0.5, 6, dims=2).partition_function(6)
    est = mc_annealed(law, (1.0, 0.0), 0.5, 6, 400, 11, dims=2)
    assert abs(est.estimate - exact) < 4 * est.stderr


def test_ratio_series_free_case_is_one():
    env = sample_environment("bernoulli:p=0.1", 2, 8, 2)
    rs = ratio_series(env, "bernoulli:p=0.1", 1.0, 0.0, 8)
    np.testing.assert_allclose(rs.W, 1.0, rtol=1e-12)
    assert not rs.zero


def test_denominators_need_samples_above_cap():
    with pytest.raises(ValidationError):
        annealed_denominators("bernoulli:p=0.1", 1.0, 0.5, 12, 2)


def test_cone_recursion_matches_enumeration():
    cone = ConeSpec.make(1.0, dims=2, delta=0.3)
    t, _ = enumerate_basic("det:v=0.4", cone, 1.0, 0.5, 0.0, 7, dims=2)
    tc = cone_dp_t("det:v=0.4", cone, 1.0, 0.5, 7)
    for n in range(1, 8):
        np.testing.assert_allclose(tc.to_dense(n, 7), t.to_dense(n, 7), rtol=1e-12, atol=1e-300)


def test_cone_recursion_rejects_nonlinear_law():
    cone = ConeSpec.make(1.0, dims=2)
    with pytest.raises(ValidationError):
        cone_dp_t("exp:rate=1.0", cone, 1.0, 0.5, 4)
