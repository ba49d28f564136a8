"""Acceptance criteria 1-11, one pass/fail line each in the terminal summary."""
import itertools
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from chargepump.chainspace import ChainGeometry, cut_entropy, product_state
from chargepump.evolution import (PropagatorRequest, compose_tdi, concatenate_tdi, inverse_tdi,
                                  propagate, propagator, reverse_tdi)
from chargepump.groundstate import (finite_gap, onsite_gap_hamiltonian,
                                    random_symmetric_perturbation, spectral_flow_kato, z_family)
from chargepump.index import open_chain, pump_index
from chargepump.interaction import StretchedExp, f_norm
from chargepump.pumps import (MINUS, PLUS, concat, constant_loop, dress, dressing_generator,
                              example_pump, pump_levels, reparametrize, rotate, stack, time_reverse)
from chargepump.splitting import SplitError, associated_loop, split_single_edge
from chargepump.symmetry import OnsiteRep, SymmetryGroup
from chargepump.zerodim import ZeroDimLoop, contract_loop, kato_transport

from conftest import oracle_propagator, rand_herm, random_tdi

U1G, Z3 = SymmetryGroup.u1(), SymmetryGroup.zn(3)

TITLES = {
    1: "realization: example pumps on ring 8 give every charge",
    2: "constant loops have index 0",
    3: "additivity under concat and stack",
    4: "time reversal negates the index",
    5: "index stable under dressing and reparametrization",
    6: "zero-dim transport and contraction bounds",
    7: "single-edge splitting and the zero-charge certificate",
    8: "gap of F and of F + W",
    9: "spectral flow around the Z family",
    10: "generator identities against the dense oracle",
    11: "associated loop preserves the index",
}
RESULTS: dict = {}


def summary_line(n: int) -> str:
    checks = RESULTS[n]
    ok = all(c[0] for c in checks)
    line = f"criterion {n:2d}  {'PASS' if ok else 'FAIL'}  {TITLES[n]} ({len(checks)} checks)"
    bad = [c[1] for c in checks if not c[0]]
    return line + (f"; first failure: {bad[0]}" if bad else "")


@contextmanager
def criterion(n, label):
    try:
        yield
    except BaseException as exc:
        RESULTS.setdefault(n, []).append((False, f"{label}: {type(exc).__name__}: {exc}"))
        raise
    RESULTS.setdefault(n, []).append((True, label))


def index_of(loop):
    return pump_index(loop)


# --- 1. realization ---------------------------------------------------------------

CASES = [(U1G, h) for h in range(-2, 3)] + [(Z3, h) for h in range(3)]


@pytest.mark.parametrize("group,h", CASES, ids=[f"{g}-h{h}" for g, h in CASES])
def test_criterion_1_realization(group, h):
    with criterion(1, f"{group} h={h}"):
        t0 = time.perf_counter()
        unit = group.dual([1]) if h == 0 else None
        r = index_of(example_pump(group, h, n_sites=8, unit=unit))
        elapsed = time.perf_counter() - t0
        assert r.charge == group.dual([h])
        assert r.max_residual < 1e-6
        assert elapsed < 10


# --- 2. constant loops ------------------------------------------------------------

def test_criterion_2_constant_loops():
    g = ChainGeometry.centered(8, 3, ring=True)
    for group, levels in ((U1G, None), (U1G, (MINUS, PLUS) * 4), (Z3, (PLUS, MINUS) * 4)):
        with criterion(2, f"{group} levels={levels}"):
            rep = OnsiteRep.uniform(group, pump_levels(group, group.dual([1])), 8)
            r = index_of(constant_loop(g, rep, levels))
            assert r.charge.is_zero() and r.max_residual < 1e-10


# --- 3. additivity ----------------------------------------------------------------

def test_criterion_3_additivity():
    t0 = time.perf_counter()
    for op, n in ((concat, 12), (stack, 4)):
        for h1, h2 in itertools.product((-1, 0, 1), repeat=2):
            with criterion(3, f"{op.__name__} h={h1},{h2}"):
                a = example_pump(U1G, h1, n_sites=n, unit=1)
                b = example_pump(U1G, h2, n_sites=n, unit=1)
                assert index_of(op(a, b)).charge == U1G.dual([h1 + h2])
    with criterion(3, "runtime < 60 s"):
        assert time.perf_counter() - t0 < 60


# --- 4. time reversal ---------------------------------------------------------------

@pytest.mark.parametrize("h", [1, 2])
def test_criterion_4_time_reversal(h):
    with criterion(4, f"h={h}"):
        assert index_of(time_reverse(example_pump(U1G, h, n_sites=8))).charge == U1G.dual([-h])


# --- 5. stability shadow ------------------------------------------------------------

STRENGTHS = (0.1, 0.2, 0.3, 0.4)


def test_criterion_5_dressing_sweep():
    p = example_pump(U1G, 1, n_sites=12)
    for eps, seed in itertools.product(STRENGTHS, (0, 1)):
        with criterion(5, f"dress eps={eps} seed={seed}"):
            r = index_of(dress(p, eps, seed=seed))
            assert r.charge == U1G.dual([1]) and r.max_residual < 0.05


def test_criterion_5_reparametrization_sweep():
    p = example_pump(U1G, 1, n_sites=8)
    s = np.linspace(0, 1, 17)
    for eps in STRENGTHS:
        # monotone: slope 1 + eps cos(2 pi s) > 0
        for sign in (1, -1):
            with criterion(5, f"reparametrize eps={sign * eps}"):
                knots = list(zip(s, s + sign * eps * np.sin(2 * np.pi * s) / (2 * np.pi)))
                r = index_of(reparametrize(p, knots))
                assert r.charge == U1G.dual([1]) and r.max_residual < 0.05


# --- 6. zero-dimensional bounds -------------------------------------------------------

def _unit(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def test_criterion_6_zero_dim_bounds():
    rng = np.random.default_rng(2024)
    for i in range(50):
        d = int(rng.integers(2, 7))
        with criterion(6, f"transport #{i} d={d}"):
            nu, om = _unit(rng, d), _unit(rng, d)
            path = kato_transport(om, nu)            # carries nu to om
            dist = np.linalg.norm(np.outer(nu, nu.conj()) - np.outer(om, om.conj()), 2)
            assert path.sup_generator_norm() <= 1.1 * 8 * dist
            sol = solve_ivp(lambda t, y: -1j * path.generator(t) @ y, (0, 1), path.state(0.0),
                            rtol=1e-12, atol=1e-13, method="DOP853")
            assert abs(np.vdot(om, sol.y[:, -1])) ** 2 >= 1 - 1e-8
        with criterion(6, f"contraction #{i} d={d}"):
            A0, A1 = rand_herm(d, rng), rand_herm(d, rng)
            scale = float(rng.uniform(0.1, 1.0))

            def E(s):
                return scale * ((A0 + 2 * s * A1) if s <= 0.5 else -(A0 + (2 - 2 * s) * A1))
            # the norm is convex along each linear half, so the sup sits at s = 0 or 1/2
            E_sup = scale * max(np.linalg.norm(A0, 2), np.linalg.norm(A0 + A1, 2))
            loop = ZeroDimLoop.from_generator(_unit(rng, d), E, K=256)
            c = contract_loop(loop, n_lambda=33)
            assert c.sup_E_lambda <= 1.1 * 80 * E_sup
            assert c.sup_F_s <= 1.1 * 208


# --- 7. splitting ---------------------------------------------------------------------

def test_criterion_7_split_index_zero_loop():
    P = example_pump(U1G, 1, n_sites=8)
    # concat(a, b) runs b first
    for name, loop in (("P then rev(P)", concat(time_reverse(P), P)),
                       ("rev(P) then P", concat(P, time_reverse(P)))):
        with criterion(7, name):
            split, rep = split_single_edge(loop, 0, n_times=16)
            assert len(rep.entropy_after) == 16 and max(rep.entropy_after) <= 1e-6
            assert rep.closure["trace_distance"] <= 1e-6
            # independent look at the cut entropy of the split evolution
            for s in np.linspace(0, 1, 16):
                v = propagate(split.basepoint.vector, PropagatorRequest(split.tdi, s=float(s)))
                assert cut_entropy(v, split.geometry, 0) <= 1e-6


def test_criterion_7_pump_certificate_fails():
    with criterion(7, "pump(1) certificate"):
        with pytest.raises(SplitError) as err:
            split_single_edge(example_pump(U1G, 1, n_sites=8), 0, n_times=16)
        cert = err.value.report.certificate
        assert not cert["zero"]
        assert cert["left"] == [1] and cert["right"] == [-1]


# --- 8. gap ------------------------------------------------------------------------------

def test_criterion_8_gap():
    t0 = time.perf_counter()
    for L in (4, 6, 8):
        g = ChainGeometry.centered(L, 3, ring=True)
        rep = OnsiteRep.uniform(U1G, pump_levels(U1G, U1G.dual([1])), L)
        F = onsite_gap_hamiltonian(product_state(g, (0,) * L))
        with criterion(8, f"gap(F) L={L}"):
            assert abs(finite_gap(F).gap - 1) <= 1e-10
        for seed in range(20):
            with criterion(8, f"gap(F+W) L={L} seed={seed}"):
                W = random_symmetric_perturbation(g, rep, 0.05, seed=seed)
                assert f_norm(W, StretchedExp()) == pytest.approx(0.05)
                gap = finite_gap(F + W).gap
                assert gap >= 0.5
                if L <= 6:
                    w = np.linalg.eigvalsh((F + W).full())
                    assert gap == pytest.approx(w[1] - w[0], abs=1e-8)
    with criterion(8, "runtime < 5 min"):
        assert time.perf_counter() - t0 < 300


# --- 9. spectral flow ----------------------------------------------------------------------

def test_criterion_9_spectral_flow():
    with criterion(9, "dressed constant loop, ring 4, eps=0.05"):
        g = ChainGeometry.centered(4, 3, ring=True)
        rep = OnsiteRep.uniform(U1G, pump_levels(U1G, U1G.dual([1])), 4)
        loop = dress(constant_loop(g, rep), 0.05, support=(-1, 0, 1))
        assert g.total_dim <= 1024
        Z = z_family(loop.tdi, onsite_gap_hamiltonian(loop.basepoint))
        res = spectral_flow_kato(lambda s: Z(0.0, s), n=101)
        assert res.fidelity >= 1 - 1e-6
        assert abs(np.vdot(loop.basepoint.vector, res.flowed)) ** 2 >= 1 - 1e-6


# --- 10. generator identities ----------------------------------------------------------------

def test_criterion_10_generator_identities():
    for seed in range(20):
        with criterion(10, f"random 4-site TDI seed={seed}"):
            rng = np.random.default_rng(seed)
            H1 = random_tdi(rng, n=4, d=2, pieces=2, smooth=bool(seed % 2))
            H2 = random_tdi(rng, n=4, d=2, pieces=2)
            errs = []
            for s in (0.25, 0.6, 1.0):
                U1, U2 = oracle_propagator(H1, s), oracle_propagator(H2, s)
                errs.append(np.linalg.norm(propagator(inverse_tdi(H1), s) - U1.conj().T, 2))
                Ur = oracle_propagator(H1, 1.0 - s) @ oracle_propagator(H1, 1.0).conj().T
                errs.append(np.linalg.norm(propagator(reverse_tdi(H1), s) - Ur, 2))
                errs.append(np.linalg.norm(propagator(compose_tdi(H1, H2), s) - U1 @ U2, 2))
            C = oracle_propagator(H2) @ oracle_propagator(H1)
            errs.append(np.linalg.norm(propagator(concatenate_tdi(H1, H2)) - C, 2))
            assert max(errs) <= 1e-8


# --- 11. associated loop ------------------------------------------------------------------------

ROTATED = [
    ("pump(1)", lambda: example_pump(U1G, 1, n_sites=8), (-1, 0), [1]),
    ("pump(-1)", lambda: example_pump(U1G, -1, n_sites=8), (0, 1), [-1]),
    ("pump(2)", lambda: example_pump(U1G, 2, n_sites=8), (-2, -1), [2]),
    ("Z3 pump(1)", lambda: example_pump(Z3, 1, n_sites=8), (-1, 0), [1]),
    ("dressed pump(1)", lambda: dress(example_pump(U1G, 1, n_sites=12), 0.1), (-1, 0), [1]),
]


@pytest.mark.parametrize("name,make,support,want", ROTATED, ids=[r[0] for r in ROTATED])
def test_criterion_11_associated_loop(name, make, support, want):
    with criterion(11, name):
        P = make()
        rot, K = rotate(P, 0.8 * dressing_generator(P, support, seed=3), support)
        op = open_chain(rot)
        # the rotated basepoint is entangled across some cut, so not a product state
        ent = [cut_entropy(op.basepoint.vector, op.geometry, j) for j in op.geometry.sites[:-1]]
        assert max(ent) > 1e-3
        a = associated_loop(rot, K, P.basepoint)
        assert a.index == a.original_index == P.group.dual(want)
