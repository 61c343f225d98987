from fractions import Fraction as Fr

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multirate.time_grid import (
    MarkSet,
    TimePartition,
    closed_marks,
    from_text,
    refine,
    to_text,
    uniform_partition,
    validate,
)


def test_uniform_n50():
    p = uniform_partition(1.0, 50, 1, 1)
    assert (p.N, p.M, p.L) == (50, 50, 50)
    assert p.macro_times()[1] - p.macro_times()[0] == pytest.approx(0.02)
    assert validate(p) == []


def test_uniform_subcycled_counts():
    p = uniform_partition(1.0, 5, 2, 1)
    assert len(p.micro_nodes("fluid", 3)) == 3
    assert p.M == 10 and p.L == 5
    assert p.lengths("fluid")[0] == Fr(1, 10)


def test_uniform_2_2_2():
    p = uniform_partition(1.0, 2, 2, 2)
    assert len(p.fluid_patches) == 2 and len(p.solid_patches) == 2
    # equal fluid and solid subcycling puts both meshes on the same interior
    # nodes; only that coincidence is reported, every other invariant holds
    msgs = validate(p)
    assert msgs == [
        "shared interior node 1/4 inside a macro interval",
        "shared interior node 3/4 inside a macro interval",
    ]


@pytest.mark.parametrize("args", [(1.0, 0, 1, 1), (1.0, 2, 0, 1), (1.0, 2, 1, 0), (0.0, 2, 1, 1)])
def test_uniform_rejects(args):
    with pytest.raises(ValueError):
        uniform_partition(*args)


def test_odd_count_reports_unpaired():
    p = uniform_partition(1.0, 3, 1, 1)
    msgs = validate(p)
    assert any("unpaired interval 2" in m for m in msgs)


def _hand(fluid, solid, macro=(Fr(0), Fr(1)), fp=None, sp=None):
    return TimePartition(
        T=1.0,
        macro=tuple(macro),
        fluid=tuple(fluid),
        solid=tuple(solid),
        fluid_patches=fp if fp is not None else ((0, 1),),
        solid_patches=sp if sp is not None else ((0, 1),),
    )


def test_validate_shared_interior():
    p = _hand([Fr(0), Fr(1, 2), Fr(1)], [Fr(0), Fr(1, 2), Fr(1)])
    assert any("shared interior node" in m for m in validate(p))


def test_validate_unequal_patch():
    p = _hand(
        [Fr(0), Fr(1, 3), Fr(1)],
        [Fr(0), Fr(1, 2), Fr(1)],
    )
    assert any("unequal patch lengths" in m for m in validate(p))


def test_validate_other_violations():
    p = _hand([Fr(0), Fr(1, 2), Fr(1, 2), Fr(1)], [Fr(0), Fr(1, 4), Fr(1, 2), Fr(1)],
              fp=((0, 1), (2,)), sp=((0, 1),))
    msgs = validate(p)
    assert any("not strictly increasing" in m for m in msgs)
    assert any("interval 2 in 0 patches" in m for m in msgs)


def test_refine_empty_is_identity():
    p = uniform_partition(1.0, 4, 2, 1)
    assert refine(p, MarkSet()) == p


def test_refine_closes_patch():
    p = uniform_partition(1.0, 2, 2, 2)
    q = refine(p, MarkSet(fluid=frozenset({1})))
    assert q.M == p.M + 2
    assert q.L == p.L
    assert validate(q) == []
    assert closed_marks(p, MarkSet(fluid=frozenset({1}))).fluid == {0, 1}


def test_refine_splits_macro_at_coincidence():
    # fluid patch bisected at 1/4 and 3/4; the solid already has a node at 3/4
    p = _hand(
        [Fr(0), Fr(1, 2), Fr(1)],
        [Fr(0), Fr(3, 8), Fr(3, 4), Fr(7, 8), Fr(1)],
        fp=((0, 1),),
        sp=((0, 1), (2, 3)),
    )
    assert validate(p) == []
    q = refine(p, MarkSet(fluid=frozenset({0})))
    assert q.N == p.N + 1
    assert q.macro == (Fr(0), Fr(3, 4), Fr(1))
    assert validate(q) == []


def test_refine_rejects_bad_marks():
    p = uniform_partition(1.0, 2, 1, 1)
    with pytest.raises(ValueError, match="missing intervals"):
        refine(p, MarkSet(fluid=frozenset({7})))


def test_text_round_trip():
    p = refine(uniform_partition(2.0, 3, 2, 1), MarkSet(fluid=frozenset({1}), solid=frozenset({0})))
    text = to_text(p)
    assert text.startswith("# time-partition v1")
    assert from_text(text) == p


def check_invariants(p, start):
    assert validate(p) == []
    for which in ("macro", "fluid", "solid"):
        assert set(start.nodes(which)) <= set(p.nodes(which))
    for n in range(1, p.N + 1):
        f = set(p.micro_nodes("fluid", n)[1:-1])
        s = set(p.micro_nodes("solid", n)[1:-1])
        assert not f & s


@st.composite
def refine_sequences(draw):
    N = draw(st.integers(1, 4))
    M = draw(st.sampled_from([1, 2, 4]))
    L = draw(st.sampled_from([1, 2, 4]))
    if N % 2 and (M == 1 or L == 1):
        N += 1
    p = uniform_partition(1.0, N, M, L)
    steps = draw(st.lists(st.tuples(st.randoms(), st.floats(0.0, 1.0)), min_size=1, max_size=4))
    return p, steps


@settings(max_examples=500, deadline=None)
@given(refine_sequences())
def test_random_refine_sequences_keep_invariants(case):
    p, steps = case
    start = p
    for rnd, frac in steps:
        marks = MarkSet(
            fluid=frozenset(i for i in range(p.M) if rnd.random() < frac),
            solid=frozenset(i for i in range(p.L) if rnd.random() < frac),
        )
        closed = closed_marks(p, marks)
        q = refine(p, marks)
        assert q.M == p.M + len(closed.fluid) and q.L == p.L + len(closed.solid)
        assert len(closed.fluid) % 2 == 0 and len(closed.solid) % 2 == 0
        assert q.N >= p.N
        check_invariants(q, start)
        p = q
