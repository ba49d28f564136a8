from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import expm

from chargepump.chainspace import ChainState, cut_entropy, product_state
from chargepump.evolution import PropagatorRequest, propagate
from chargepump.index import open_chain, pump_index
from chargepump.interaction import TDI, Interaction
from chargepump.pumps import (MINUS, PLUS, ZERO, concat, dress, dressing_generator,
                              example_pump, rotate, time_reverse, verify_loop)
from chargepump.pumps import _pump_site_ops
from chargepump.splitting import (SplitError, associated_loop, block_loops, close_quasiloop,
                                  contract_product_loop, factorize, multi_split, split_single_edge)
from chargepump.symmetry import SymmetryGroup
from chargepump.zerodim import ZeroDimLoop

from conftest import rand_herm

U1G = SymmetryGroup.u1()
X_FWD, X_BWD = _pump_site_ops()


def pump(h, n=8, ring=True):
    return example_pump(U1G, h, n_sites=n, ring=ring, unit=1)


def pair_loop(n=4, first=1.0, second=1.0):
    """Pairs created and (partly) annihilated on the even bonds only."""
    base = pump(0, n, ring=False)
    g = base.geometry
    bonds = [b for b in base.tdi.pieces[0].interaction.terms]
    H1 = Interaction(g, {b: first * np.pi * X_FWD for b in bonds})
    H2 = Interaction(g, {b: second * np.pi * X_FWD for b in bonds})
    return replace(base, tdi=TDI.piecewise(g, [(0, 0.5, H1), (0.5, 1, H2)]), name="pairs"), bonds


def test_factorize_examples(rng):
    lp, _ = pair_loop()
    g = lp.geometry
    v = product_state(g, (ZERO, MINUS, PLUS, ZERO))
    parts = factorize(v, g, [(-2, -1), (0, 1)])
    np.testing.assert_allclose(abs(np.kron(parts[0], parts[1]) @ v.vector.conj()), 1.0)
    bell = (product_state(g, (MINUS, PLUS, 0, 0)).vector + product_state(g, (0, 0, 0, 0)).vector)
    with pytest.raises(ValueError):
        factorize(bell / np.sqrt(2), g, [(-2,), (-1, 0, 1)])


def test_split_trivial_pump():
    split, rep = split_single_edge(pump(0), 0)
    assert rep.factorized and rep.passed
    assert max(rep.entropy_after) <= 1e-6
    assert max(rep.entropy_before) > 0.5          # the pair on (0, 1) is entangled mid-period
    assert rep.certificate["zero"]


def test_split_inverse_concatenation():
    P = pump(1)
    split, rep = split_single_edge(concat(P, time_reverse(P)), 0)
    assert rep.passed
    assert max(rep.entropy_after) <= 1e-6
    assert rep.closure["trace_distance"] <= 1e-6
    for side in ("left", "right"):
        n = rep.generator_norms[side]
        assert n["sup"] <= 1.1 * n["bound"] + 1e-12


def test_split_keeps_state_factorized_at_all_times():
    split, rep = split_single_edge(pump(0), 0, n_times=5)
    g = split.geometry
    for s in np.linspace(0.05, 0.95, 7):
        v = propagate(split.basepoint.vector, PropagatorRequest(split.tdi, s=s))
        assert cut_entropy(v, g, 0) <= 1e-6


def test_split_pump_is_obstructed():
    with pytest.raises(SplitError) as err:
        split_single_edge(pump(1), 0)
    cert = err.value.report.certificate
    # the left half is the pumped state and carries the index; the right half the opposite
    assert cert["left"] == [1] and cert["right"] == [-1] and not cert["zero"]


def test_split_index_preserved_at_another_cut():
    loop = pump(0, n=8)
    split, rep = split_single_edge(loop, -2)
    assert rep.passed
    assert pump_index(split, cut=0, check_closure=False).charge.is_zero()


def test_multi_split_small():
    loop = pump(0, n=4)
    for R in (2, 4):
        rep = multi_split(loop, R)
        assert rep.tail_F >= 0 and all(d < 1e-6 for d in rep.block_defects)
        assert rep.W_distance is not None and rep.W_distance < 1e-8
    with pytest.raises(SplitError):
        multi_split(pump(1, n=4), 2)
    with pytest.raises(ValueError):
        multi_split(loop, 3)


def test_multi_split_already_split_loop():
    base = pump(0, n=4, ring=False)
    g = base.geometry
    I = Interaction(g, {(-1, 0): np.pi * X_FWD})
    loop = replace(base, tdi=TDI.piecewise(g, [(0, 0.5, I), (0.5, 1, I)]))
    assert verify_loop(loop).passed
    rep = multi_split(loop, 2)
    assert rep.tail_F == 0.0 and rep.W_distance < 1e-8 and rep.tail_Z < 1e-12


def test_multi_split_tail_decreases_with_block_size():
    loop = dress(pump(0, n=8, ring=False), 0.3, support=(-2, -1, 0, 1))
    tails = [multi_split(loop, R, dense_limit=0).tail_F for R in (2, 4, 8)]
    assert tails[0] > 0
    assert all(a >= b for a, b in zip(tails, tails[1:]))


def test_close_exact_quasiloop():
    lp, bonds = pair_loop(first=1.0, second=1.0)
    c = close_quasiloop(lp, bonds)
    assert max(c.norms) == 0.0 and c.fidelity >= 1 - 1e-9


def test_close_perturbed_quasiloop():
    lp, bonds = pair_loop(first=0.3, second=0.0)
    end = propagate(lp.basepoint.vector, PropagatorRequest(lp.tdi))
    assert abs(np.vdot(lp.basepoint.vector, end)) < 0.99
    c = close_quasiloop(lp, bonds)
    assert c.fidelity >= 1 - 1e-9 and c.within_bounds
    # oracle for the block bound: the two-site rotation angle 0.3 pi/2 on each bond
    t = 0.3 * np.pi / 2
    for b in c.bounds:
        assert b == pytest.approx(8 * np.sin(t), rel=1e-6)
    assert verify_loop(c.loop).passed


def test_close_quasiloop_rejects_crossing_terms():
    lp, _ = pair_loop()
    with pytest.raises(SplitError):
        close_quasiloop(lp, [(-2,), (-1, 0), (1,)])


def test_block_loops_contract():
    lp, bonds = pair_loop()
    loops = block_loops(lp, bonds, K=256)
    assert len(loops) == 2 and all(L.closure_fidelity() >= 1 - 1e-8 for L in loops)
    pc = contract_product_loop(loops)
    assert pc.within_bounds and pc.boundary_defect < 1e-9 and pc.min_N >= 0.25


def test_contract_product_of_constant_and_winding_loops():
    om = np.eye(3)[0]
    const = ZeroDimLoop(np.tile(om, (129, 1)), 0.0)
    s = np.linspace(0, 1, 513)
    wind = ZeroDimLoop(np.exp(2j * np.pi * s)[:, None] * np.eye(2)[1][None, :], 2 * np.pi)
    pc = contract_product_loop([const, const])
    assert pc.sup_E_lambda < 1e-10 and pc.sup_F_s < 1e-10
    pc = contract_product_loop([const, wind])
    assert pc.within_bounds and pc.boundary_defect < 1e-9


def test_random_two_block_product(rng):
    loops = []
    for d in (3, 4):
        A = rand_herm(d, rng, 0.5)
        om = np.eye(d)[0].astype(complex)
        loops.append(ZeroDimLoop.from_generator(om, lambda t, A=A: A if t <= 0.5 else -A, K=256))
    pc = contract_product_loop(loops)
    assert pc.within_bounds and pc.boundary_defect < 1e-9


def test_associated_loop_trivial_K():
    P = pump(1)
    K = TDI.zero(P.geometry)
    a = associated_loop(P, K, P.basepoint)
    assert a.index == a.original_index == U1G.dual(1)
    assert a.basepoint_fidelity == pytest.approx(1.0)


def test_associated_loop_with_rotation():
    P = dress(pump(1, n=12), 0.1)
    G = dressing_generator(P, (-1, 0), seed=4)
    rot, K = rotate(P, 0.8 * G, (-1, 0))
    assert rot.basepoint.fidelity(P.basepoint) < 1 - 1e-3
    a = associated_loop(rot, K, P.basepoint)
    assert a.loop.basepoint is P.basepoint
    assert a.index == U1G.dual(1) == a.original_index
    z = pump(0)
    rz, Kz = rotate(z, 0.8 * dressing_generator(z, (-1, 0), seed=4), (-1, 0))
    assert associated_loop(rz, Kz, z.basepoint).index.is_zero()
    with pytest.raises(ValueError):
        associated_loop(rot, TDI.zero(P.geometry), P.basepoint)


def test_rotation_basepoint_matches_dense_exponential():
    P = pump(1, n=4)
    G = dressing_generator(P, (-1, 0), seed=2)
    rot, K = rotate(P, G, (-1, 0))
    g = P.geometry
    full = np.kron(np.kron(np.eye(3), expm(-1j * G)), np.eye(3))
    assert rot.basepoint.fidelity(ChainState(g, full @ P.basepoint.vector)) >= 1 - 1e-12
    assert open_chain(rot).geometry.ring is False
