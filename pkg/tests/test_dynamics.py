import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import naive_evolve, naive_step
from torusbp import kernel
from torusbp.dynamics import (BP, BiasedMajority, GeneralBP, Majority, ModifiedBP, Phase, RecoveryBP, RuleError,
                              TwoWayBP, classify, default_max_rounds, dominates, evolve, evolve_lanes, invert,
                              lane_phase, parse_rule, reference_step, reference_step_many, step, step_many)
from torusbp.lattice import Configuration, TorusShape


def rand_config(s, rng, p=None):
    p = rng.random() if p is None else p
    return Configuration.from_flat(s, rng.random(s.n_nodes) < p)


def rules_for(d):
    out = [Majority()]
    for r in range(1, d + 1):
        out += [BP(r), TwoWayBP(r), RecoveryBP(r), ModifiedBP(r)]
        out += [GeneralBP(r, k) for k in range(2, r)]
    return out


def naive_args(rule):
    if isinstance(rule, GeneralBP):
        return "general", rule.r, rule.r_keep
    if isinstance(rule, ModifiedBP):
        return "modified", rule.r, 0
    return "majority", 0, 0


def shift(c, offset):
    return Configuration.from_array(c.shape, np.roll(c.array, offset, axis=tuple(range(c.shape.d))))


def test_step_examples():
    s = TorusShape(2, 4)
    c = Configuration.from_coords(s, [(0, 0), (1, 1)])
    assert step(c, TwoWayBP(2)).black_coords() == [(0, 1), (1, 0)]
    single = Configuration.from_coords(TorusShape(3, 5), [(1, 2, 3)])
    for r in (2, 3):
        assert step(single, TwoWayBP(r)).popcount() == 0
    for d in (1, 2, 3):
        full = Configuration.black(TorusShape(d, 5))
        for r in range(0, d + 1):
            for k in range(0, r + 1):
                assert step(full, GeneralBP(r, k)) == full


@pytest.mark.parametrize("d,L", [(1, 7), (2, 5), (3, 4)])
def test_packed_and_reference_match_naive_oracle(d, L, rng):
    s = TorusShape(d, L)
    for rule in rules_for(d):
        for _ in range(15):
            c = rand_config(s, rng)
            want = naive_step(c, *naive_args(rule))
            assert step(c, rule) == want, rule
            assert reference_step(c, rule) == want, rule


def test_step_many_matches_reference(rng):
    s = TorusShape(3, 6)
    flat = rng.random((130, s.n_nodes)) < 0.5
    for rule in rules_for(3):
        assert np.array_equal(step_many(flat, s, rule), reference_step_many(flat, s, rule))


def test_majority_tie_keeps_color():
    s = TorusShape(1, 5)
    # node 1 sees one black (node 0) and one white (node 2): a tie in d = 1
    c = Configuration.from_coords(s, [(0,), (1,)])
    nxt = step(c, Majority())
    assert nxt[(1,)] and nxt[(0,)]
    # node 1 is white with one black neighbor of two: it stays white
    assert not step(Configuration.from_coords(s, [(0,)]), Majority())[(1,)]


def test_biased_majority_is_two_way_d():
    assert BiasedMajority(3) == TwoWayBP(3)


def test_rule_validation():
    with pytest.raises(ValueError):
        GeneralBP(1, 2)
    with pytest.raises(ValueError):
        ModifiedBP(0)
    with pytest.raises(ValueError):
        TwoWayBP(4).validate(TorusShape(1, 5))
    with pytest.raises(ValueError):
        evolve(Configuration.white(TorusShape(2, 4)), ModifiedBP(3))
    assert parse_rule("general:3,1") == GeneralBP(3, 1)
    assert parse_rule("two-way", 2) == TwoWayBP(2)
    with pytest.raises(RuleError):
        parse_rule("frob", 2)
    with pytest.raises(RuleError):
        parse_rule("bp")


def test_evolve_examples():
    s = TorusShape(1, 8)
    out = evolve(Configuration.from_coords(s, [(0,), (1,)]), TwoWayBP(1))
    assert (out.classification, out.consensus_time, out.period) == (Phase.FULLY_BLACK, 3, 1)
    assert naive_evolve(Configuration.from_coords(s, [(0,), (1,)]), "general", 1, 1)[:2] == (3, 1)
    for rule in rules_for(2):
        out = evolve(Configuration.white(TorusShape(2, 6)), rule)
        assert (out.classification, out.consensus_time, out.period) == (Phase.FULLY_WHITE, 0, 1)
    diag = Configuration.from_coords(TorusShape(2, 4), [(0, 0), (1, 1)])
    out = evolve(diag, TwoWayBP(2))
    assert out.classification is Phase.COEXIST and out.period == 2 and out.consensus_time == 0
    assert [c.black_coords() for c in out.cycle] == [[(0, 0), (1, 1)], [(0, 1), (1, 0)]]


def test_evolve_agrees_with_naive_cycle_search(rng):
    s = TorusShape(2, 5)
    for rule in rules_for(2):
        for _ in range(20):
            c = rand_config(s, rng)
            tau, period, cyc = naive_evolve(c, *naive_args(rule))
            for det in ("auto", "fingerprint"):
                out = evolve(c, rule, detector=det)
                assert (out.consensus_time, out.period) == (tau, period), (rule, det)
                assert list(out.cycle) == cyc
                assert out.classification is classify_cycle_oracle(cyc)


def classify_cycle_oracle(cyc):
    n = [c.popcount() for c in cyc]
    if all(k == cyc[0].shape.n_nodes for k in n):
        return Phase.FULLY_BLACK
    if all(k == 0 for k in n):
        return Phase.FULLY_WHITE
    return Phase.COEXIST


def test_evolve_truncates_instead_of_looping():
    diag = Configuration.from_coords(TorusShape(2, 4), [(0, 0), (1, 1)])
    out = evolve(diag, TwoWayBP(2), max_rounds=1)
    assert out.truncated and out.period is None and out.classification is None
    with pytest.raises(ValueError):
        evolve(diag, TwoWayBP(2), max_rounds=0)


def test_evolve_lanes_matches_evolve(rng):
    s = TorusShape(2, 8)
    for rule in (TwoWayBP(1), TwoWayBP(2), BP(2), RecoveryBP(2), Majority(), ModifiedBP(2)):
        cs = [rand_config(s, rng, p) for p in rng.uniform(0, 0.6, 100)]
        out = evolve_lanes(kernel.pack(np.stack([c.flat for c in cs]), s), 100, rule, default_max_rounds(s))
        phases = lane_phase(out)
        for i, c in enumerate(cs):
            ref = evolve(c, rule)
            assert out.consensus_time[i] == ref.consensus_time
            assert out.period[i] == ref.period
            assert phases[i] is ref.classification


def test_classify_and_invert():
    s = TorusShape(2, 3)
    assert classify(Configuration.black(s)) is Phase.FULLY_BLACK
    assert classify(Configuration.white(s)) is Phase.FULLY_WHITE
    assert classify(Configuration.from_coords(s, [(2, 1)])) is Phase.COEXIST
    assert invert(Configuration.white(s)) == Configuration.black(s)


def test_dominates_examples():
    s = TorusShape(2, 4)
    a = Configuration.from_coords(s, [(0, 0)])
    b = Configuration.from_coords(s, [(0, 0), (1, 1)])
    assert dominates(Configuration.white(s), b) and dominates(b, b)
    assert dominates(a, b) and not dominates(b, a)
    with pytest.raises(ValueError):
        dominates(a, Configuration.white(TorusShape(2, 5)))


@given(st.integers(0, 2**9 - 1))
def test_invert_involution(mask):
    s = TorusShape(2, 3)
    c = Configuration.from_flat(s, [(mask >> i) & 1 for i in range(9)])
    assert invert(invert(c)) == c


def test_color_swap_duality_exhaustive():
    s = TorusShape(2, 3)
    d = s.d
    for mask in range(2**9):
        c = Configuration.from_flat(s, [(mask >> i) & 1 for i in range(9)])
        for r in (1, 2):
            assert invert(step(c, TwoWayBP(r))) == step(invert(c), GeneralBP(2 * d - r + 1, 2 * d - r + 1))


def test_monotone_step(rng):
    s = TorusShape(2, 6)
    for rule in rules_for(2):
        for _ in range(100):
            c2 = rand_config(s, rng)
            c1 = Configuration.from_flat(s, c2.flat & (rng.random(s.n_nodes) < 0.7))
            assert dominates(step(c1, rule), step(c2, rule))


def test_model_domination(rng):
    s = TorusShape(3, 5)
    for _ in range(100):
        c = rand_config(s, rng, 0.3)
        for r in (1, 2, 3):
            bp = step(c, BP(r))
            assert dominates(step(c, TwoWayBP(r)), bp)
            assert dominates(step(c, ModifiedBP(r)), bp)
            assert dominates(c, bp) and dominates(c, step(c, ModifiedBP(r)))


def test_translation_equivariance(rng):
    s = TorusShape(3, 5)
    for rule in rules_for(3):
        c = rand_config(s, rng)
        off = tuple(int(x) for x in rng.integers(0, 5, 3))
        assert step(shift(c, off), rule) == shift(step(c, rule), off)


@pytest.mark.parametrize("d,L", [(2, 8), (3, 4)])
def test_period_and_consensus_bound(d, L, rng):
    s = TorusShape(d, L)
    for r in range(1, d + 1):
        flat = rng.random((640, s.n_nodes)) < rng.random((640, 1))
        out = evolve_lanes(kernel.pack(flat, s), 640, TwoWayBP(r), default_max_rounds(s))
        assert not out.truncated.any()
        assert set(out.period.tolist()) <= {1, 2}
        assert out.consensus_time.max() <= 2 * s.n_edges
