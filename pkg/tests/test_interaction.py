import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chargepump.chainspace import ChainGeometry
from chargepump.interaction import (TDI, Interaction, Piece, StretchedExp, TableDecay, anchored_norm,
                                    check_decay, commutator_interaction, f_norm, split_decomposition,
                                    tdi_l1_norm, tdi_norm, truncate_left, weak_sum)
from chargepump.pumps import example_pump
from chargepump.symmetry import SymmetryGroup

from conftest import kron_embed, rand_herm

EXP = StretchedExp()          # e^{-r}


def test_decay_families():
    assert check_decay(StretchedExp())
    assert check_decay(StretchedExp(C=2.0, c=0.5, beta=0.5), r_max=4000)
    assert check_decay(TableDecay((1.0, 0.5, 0.2), StretchedExp(C=0.5, c=1.0)))
    with pytest.raises(ValueError):
        StretchedExp(beta=1.5)
    with pytest.raises(ValueError):
        TableDecay((1.0, 2.0))
    # a power law is not in the class
    assert not check_decay(lambda r: 1.0 / np.asarray(r, float) ** 2)


def test_f_norm_examples():
    g = ChainGeometry.interval(0, 3, 2)
    H = Interaction(g, {(0, 1): np.diag([1.0, 0, 0, -1.0])})
    assert f_norm(H, EXP) == pytest.approx(math.e ** 2)
    assert f_norm(Interaction(g), EXP) == 0
    flat = TableDecay((1.0, 1.0), StretchedExp())
    H2 = Interaction(g, {(0,): np.diag([1.0, -1.0]), (2,): np.diag([1.0, 0.0])})
    assert f_norm(H2, flat) == pytest.approx(1.0)


def test_tdi_norm_examples():
    g = ChainGeometry.interval(0, 3, 2)
    A = Interaction(g, {(0, 1): np.eye(4)})
    assert tdi_norm(TDI.constant(A), EXP) == pytest.approx(f_norm(A, EXP))
    B = A * 3.0
    T = TDI.piecewise(g, [(0, 0.5, A), (0.5, 1, B)])
    a, b = f_norm(A, EXP), f_norm(B, EXP)
    assert tdi_norm(T, EXP) == pytest.approx(max(a, b))
    assert tdi_l1_norm(T, EXP) == pytest.approx((a + b) / 2)


def test_pump_tdi_norm():
    # every pair term pi (a + a*) has norm pi and diameter 1; each site is in one pair per half
    P = example_pump(SymmetryGroup.u1(), 1, n_sites=8)
    assert tdi_norm(P.tdi, EXP) == pytest.approx(math.pi * math.e ** 2)


def test_anchored_norm_examples():
    g = ChainGeometry.interval(0, 6, 2)
    H = Interaction(g, {(0, 1): np.eye(4)})
    assert anchored_norm(H, {0}, EXP) == pytest.approx(f_norm(H, EXP))
    assert anchored_norm(Interaction(g, {(5,): np.eye(2)}), {0, 1}, EXP) == math.inf
    assert anchored_norm(Interaction(g), {3}, EXP) == 0


def test_truncate_left_pump():
    P = example_pump(SymmetryGroup.u1(), 1, n_sites=8, ring=False)
    T = truncate_left(P.tdi, 0)
    first = set(T.pieces[0].interaction.terms)
    assert (0, 1) not in first and all(max(S) <= 0 for S in first)
    assert set(P.tdi.pieces[0].interaction.terms) - first == {(0, 1), (2, 3)}
    g = P.geometry
    left = Interaction(g, {(-3, -2): np.eye(9)})
    right = Interaction(g, {(2, 3): np.eye(9)})
    assert set(truncate_left(TDI.constant(left)).at(0.3).terms) == {(-3, -2)}
    assert truncate_left(TDI.constant(right)).at(0.3).is_zero()


def test_split_decomposition_examples():
    P = example_pump(SymmetryGroup.u1(), 1, n_sites=8, ring=False)
    L, R, B = split_decomposition(P.tdi, 0)
    assert set(B.at(0.25).terms) == {(0, 1)}
    assert B.at(0.75).is_zero()
    g = ChainGeometry.interval(0, 3, 2)
    split = TDI.constant(Interaction(g, {(0, 1): np.eye(4), (2, 3): np.eye(4)}))
    assert split_decomposition(split, 1)[2].at(0.5).is_zero()
    cross = TDI.constant(Interaction(g, {(1, 2): np.eye(4)}))
    L, R, B = split_decomposition(cross, 1)
    assert L.at(0.5).is_zero() and R.at(0.5).is_zero() and not B.at(0.5).is_zero()


def test_commutator_examples(rng):
    g = ChainGeometry.interval(0, 3, 2)
    A, B = rand_herm(2, rng), rand_herm(2, rng)
    assert commutator_interaction(Interaction(g, {(0,): A}), Interaction(g, {(2,): B})).is_zero()
    C = commutator_interaction(Interaction(g, {(1,): A}), Interaction(g, {(1,): B}))
    np.testing.assert_allclose(C.terms[(1,)], A @ B - B @ A, atol=1e-14)


@given(seed=st.integers(0, 10 ** 6))
def test_commutator_embedding_consistent(seed):
    rng = np.random.default_rng(seed)
    g = ChainGeometry.interval(0, 3, 2)
    H1 = Interaction(g, {(0, 1): rand_herm(4, rng), (2,): rand_herm(2, rng), (1, 2, 3): rand_herm(8, rng)})
    H2 = Interaction(g, {(1, 2): rand_herm(4, rng), (3,): rand_herm(2, rng)})
    full1 = sum(kron_embed(M, g.positions(S), g.dims) for S, M in H1.terms.items())
    full2 = sum(kron_embed(M, g.positions(S), g.dims) for S, M in H2.terms.items())
    C = commutator_interaction(H1, H2)
    oracle = full1 @ full2 - full2 @ full1
    got = sum(kron_embed(M, g.positions(S), g.dims) for S, M in C.terms.items())
    np.testing.assert_allclose(got, oracle, atol=1e-10)


def test_weak_sum_examples(rng):
    g = ChainGeometry.interval(0, 3, 2)
    H = Interaction(g, {(0, 1): rand_herm(4, rng)})
    assert weak_sum([H]) is H
    assert weak_sum([H, H * -1.0]).is_zero()
    S = weak_sum([H, Interaction(g, {(0, 1): np.eye(4)}), Interaction(g, {(2,): np.eye(2)})])
    np.testing.assert_allclose(S.terms[(0, 1)], H.terms[(0, 1)] + np.eye(4))


def test_json_roundtrip(rng):
    g = ChainGeometry.interval(0, 3, 2)
    H = Interaction(g, {(0, 1): rand_herm(4, rng), (3,): rand_herm(2, rng)})
    T = TDI.piecewise(g, [(0, 0.4, H), (0.4, 1, H * 2.0)])
    back = TDI.from_json(g, T.to_json())
    for s in (0.1, 0.7):
        for S in H.terms:
            np.testing.assert_allclose(back.at(s).terms[S], T.at(s).terms[S])


def test_invalid_terms():
    g = ChainGeometry.interval(0, 3, 2)
    with pytest.raises(ValueError):
        Interaction(g, {(0, 2): np.eye(4)})
    with pytest.raises(ValueError):
        Interaction(g, {(0,): np.array([[0, 1], [0, 0]])})
    with pytest.raises(ValueError):
        TDI(g, [Piece(0, 0.5, interaction=Interaction(g))])


def rand_interaction(rng, g):
    return Interaction(g, {(0, 1): rand_herm(4, rng), (1,): rand_herm(2, rng), (1, 2, 3): rand_herm(8, rng)})


@given(seed=st.integers(0, 10 ** 6), c=st.floats(-5, 5))
def test_f_norm_is_a_norm(seed, c):
    rng = np.random.default_rng(seed)
    g = ChainGeometry.interval(0, 3, 2)
    A, B = rand_interaction(rng, g), rand_interaction(rng, g)
    f = StretchedExp(c=0.7, beta=0.5)
    assert f_norm(A + B, f) <= f_norm(A, f) + f_norm(B, f) + 1e-12
    assert f_norm(A * c, f) == pytest.approx(abs(c) * f_norm(A, f), rel=1e-12, abs=1e-12)
    assert anchored_norm(A, g.sites, f) == pytest.approx(f_norm(A, f))


@given(seed=st.integers(0, 10 ** 6), j=st.integers(0, 2))
def test_truncation_pieces_reconstruct(seed, j):
    rng = np.random.default_rng(seed)
    g = ChainGeometry.interval(0, 3, 2)
    H = rand_interaction(rng, g) + Interaction(g, {(2, 3): rand_herm(4, rng)})
    L, R, B = (x.at(0.5) for x in split_decomposition(TDI.constant(H), j))
    assert set(L.terms) | set(R.terms) | set(B.terms) == set(H.terms)
    tot = L + R + B
    for S, M in H.terms.items():
        np.testing.assert_array_equal(tot.terms[S], M)
