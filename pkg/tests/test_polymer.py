import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stretchpoly.environment import PotentialLaw, sample_environment
from stretchpoly.errors import BoxError, ValidationError
from stretchpoly.polymer import (
    ConeSpec,
    Phi,
    PolymerPath,
    annealed_weight,
    in_cone,
    irreducible_split,
    is_cone_confined,
    is_irreducible,
    local_times,
    parse_path,
    quenched_weight,
)

steps2 = st.lists(st.sampled_from([1, -1, 2, -2]), max_size=10)


def test_vertices_and_end():
    p = parse_path("+1,+1,+2,-1", 2)
    assert p.end == (1, 1)
    np.testing.assert_array_equal(p.vertices, [[0, 0], [1, 0], [2, 0], [2, 1], [1, 1]])
    assert p.shifted((3, 3)).end == (4, 4)


@given(steps2)
def test_literal_round_trip(steps):
    p = PolymerPath(tuple(steps), 2)
    assert parse_path(p.literal(), 2) == p
    assert PolymerPath.from_vertices(p.vertices).steps == p.steps


def test_invalid_step_rejected():
    with pytest.raises(ValidationError):
        PolymerPath((3,), 2)


def test_local_times_skip_start():
    p = parse_path("+1,-1,+1", 2)
    assert local_times(p) == {(1, 0): 2, (0, 0): 1}
    assert local_times(p, include_origin=True)[(0, 0)] == 2


def test_quenched_weight_by_hand():
    env = sample_environment("exp:rate=1.0", 2, 4, 3)
    p = parse_path("+1,+2,-1", 2)
    h, beta = np.array([0.7, -0.2]), 0.9
    energy = env[(1, 0)] + env[(1, 1)] + env[(0, 1)]
    expect = math.exp(h @ np.array([0, 1]) - beta * energy) / 4**3
    assert quenched_weight(p, env, h, beta) == pytest.approx(expect, rel=1e-14)


def test_trap_kills_weight():
    env = sample_environment("bernoulli:p=0.5", 2, 3, 1)
    trap = next(s for s in env.sites() if math.isinf(env[s]) and sum(map(abs, s)) == 1)
    axis = int(np.flatnonzero(trap)[0]) + 1
    p = PolymerPath((axis * int(np.sign(sum(trap))),), 2)
    assert quenched_weight(p, env, (1.0, 0.0), 0.5) == 0.0
    assert quenched_weight(p, env, (1.0, 0.0), 0.0) == pytest.approx(math.exp(trap[0]) / 4)


def test_weight_needs_box():
    env = sample_environment("exp:rate=1.0", 2, 2, 1)
    with pytest.raises(BoxError):
        quenched_weight(parse_path("+1,+1,+1", 2), env, (1.0, 0.0), 1.0)


@pytest.mark.parametrize("law", [PotentialLaw.two_point(0.0, 1.5, 0.4), PotentialLaw.bernoulli_trap(0.3)], ids=str)
def test_annealed_weight_is_disorder_average(law):
    # exhaustive average over the values at the visited sites
    p = parse_path("+1,+2,-1,-2,+1", 2)
    h, beta = np.array([0.5, 0.1]), 0.8
    sites = sorted(local_times(p))
    vals, probs = law.support()
    times = local_times(p)
    total = 0.0
    for combo in itertools.product(range(len(vals)), repeat=len(sites)):
        prob = np.prod([probs[c] for c in combo])
        e = 0.0
        for s, c in zip(sites, combo):
            e = math.inf if math.isinf(vals[c]) else e + times[s] * vals[c]
        w = 0.0 if math.isinf(e) else math.exp(h @ p.extension - beta * e) / 4**p.length
        total += prob * w
    assert annealed_weight(p, law, h, beta) == pytest.approx(total, rel=1e-13)


def test_Phi_adds_local_times():
    law = PotentialLaw.exponential(1.0)
    a, b = parse_path("+1,+1", 2), parse_path("+1,+2", 2)
    # shared site (1,0) is visited twice in total
    expect = math.log1p(2 * 0.5) + math.log1p(0.5) * 2
    assert Phi(law, 0.5, a, b) == pytest.approx(expect)


def test_cone_default_aperture():
    cone = ConeSpec.make(1.0, dims=3)
    assert cone.delta == pytest.approx(1 / (2 * math.sqrt(3)))
    assert in_cone((1, 0, 0), cone) and not in_cone((0, 1, 0), cone)
    assert in_cone((0, 0, 0), cone)


def test_cone_aperture_validated():
    with pytest.raises(ValidationError):
        ConeSpec.make(1.0, dims=2, delta=0.9)


def test_confinement_examples():
    cone = ConeSpec.make(1.0, dims=2)
    assert is_cone_confined(parse_path("+1,+2,+1", 2), cone)
    assert not is_cone_confined(parse_path("+2,+1", 2), cone)
    assert not is_cone_confined(parse_path("+1,-1,+1", 2), cone)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([1, 1, 1, 2, -2]), min_size=1, max_size=12))
def test_split_pieces_irreducible_and_concatenate(steps):
    cone = ConeSpec.make(1.0, dims=2)
    p = PolymerPath(tuple(steps), 2)
    if not is_cone_confined(p, cone):
        return
    pieces = irreducible_split(p, cone)
    assert all(is_irreducible(q, cone) for q in pieces)
    assert sum((q.steps for q in pieces), ()) == p.steps
    for a, b in zip(pieces, pieces[1:]):
        assert a.end == b.start
