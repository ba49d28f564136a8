import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chargepump.chainspace import (ChainGeometry, ChainState, EmbeddedOperator, apply, cut_entropy,
                                   load_array, product_state, reduced_density, save_array,
                                   trace_distance, window_populations, window_purity)

from conftest import kron_embed


def rand_state(g, rng):
    v = rng.normal(size=g.total_dim) + 1j * rng.normal(size=g.total_dim)
    return ChainState(g, v / np.linalg.norm(v))


def bell_chain():
    g = ChainGeometry.interval(0, 1, 2)
    v = np.zeros(4, complex)
    v[0] = v[3] = 1 / np.sqrt(2)
    return g, ChainState(g, v)


def test_geometry_rules():
    with pytest.raises(ValueError):
        ChainGeometry((0,), (2,))                # needs two sites
    with pytest.raises(ValueError):
        ChainGeometry((0, 2), (2, 2))
    g = ChainGeometry.centered(8, 3, ring=True)
    assert g.first == -4 and g.last == 3 and g.total_dim == 3 ** 8
    assert g.span(3, 2) == (3, -4)
    assert g.is_support((3, -4)) and not g.open().is_support((3, -4))


def test_product_state_examples():
    g = ChainGeometry.interval(0, 1, 2)
    v = product_state(g, (1, 0)).vector
    assert np.flatnonzero(v).tolist() == [2] and np.linalg.norm(v) == 1.0
    g3 = ChainGeometry.centered(4, 3)
    assert product_state(g3, (0,) * 4).vector[0] == 1.0
    with pytest.raises(ValueError):
        product_state(g, (2, 0))


def test_apply_examples():
    g = ChainGeometry.interval(0, 1, 3)
    a_star = np.zeros((9, 9))
    a_star[1 * 3 + 2, 0] = 1.0                 # |-h, h><0, 0| with levels (0, -h, h)
    out = apply(EmbeddedOperator(g, (0, 1), a_star), product_state(g, (0, 0)))
    np.testing.assert_allclose(out, product_state(g, (1, 2)).vector)
    psi = product_state(ChainGeometry.interval(0, 2, 2), (0, 1, 0))
    X = np.array([[0, 1], [1, 0]])
    out = apply(EmbeddedOperator(psi.geometry, (1,), X), psi)
    np.testing.assert_allclose(out, product_state(psi.geometry, (0, 0, 0)).vector)
    np.testing.assert_allclose(apply(EmbeddedOperator(g, (0,), np.eye(3)), product_state(g, (1, 2))),
                               product_state(g, (1, 2)).vector)


def test_apply_matches_kron_oracle(rng):
    g = ChainGeometry.interval(-2, 2, [2, 3, 2, 2, 3])
    psi = rand_state(g, rng)
    for S in [(-2,), (0, 1), (-1, 0, 1), (1, 2)]:
        M = rng.normal(size=(g.dim_of(S),) * 2)
        A = EmbeddedOperator(g, S, M)
        np.testing.assert_allclose(A.apply(psi.vector),
                                   kron_embed(M, g.positions(S), g.dims) @ psi.vector, atol=1e-12)
        np.testing.assert_allclose(A.full(), kron_embed(M, g.positions(S), g.dims), atol=1e-12)


def test_ring_embedding_matches_permutation_oracle(rng):
    g = ChainGeometry.interval(0, 3, 2, ring=True)
    M = rng.normal(size=(4, 4))
    A = EmbeddedOperator(g, (3, 0), M).full()
    # oracle: M on (3, 0) is swap M swap on (0, 3), contracted index by index
    swap = np.eye(4)[[0, 2, 1, 3]]
    B = swap @ M @ swap
    oracle = np.zeros((16, 16))
    for i in range(16):
        e = np.zeros(16)
        e[i] = 1
        x = e.reshape(2, 2, 2, 2)                          # sites 0, 1, 2, 3
        y = np.einsum("adbc,bjkc->ajkd", B.reshape(2, 2, 2, 2), x)
        oracle[:, i] = y.reshape(-1)
    np.testing.assert_allclose(A, oracle, atol=1e-12)


def test_reduced_density_examples(rng):
    g = ChainGeometry.interval(0, 2, 2)
    rho = reduced_density(product_state(g, (1, 0, 1)), g, (0, 1))
    target = np.zeros((4, 4))
    target[2, 2] = 1
    np.testing.assert_allclose(rho, target)
    gb, bell = bell_chain()
    np.testing.assert_allclose(reduced_density(bell, gb, (0,)), np.eye(2) / 2, atol=1e-15)
    psi = rand_state(g, rng)
    assert np.trace(reduced_density(psi, g, (1,))).real == pytest.approx(1, abs=1e-10)
    assert np.min(np.linalg.eigvalsh(reduced_density(psi, g, (0, 2)))) > -1e-12


def test_populations_and_purity_match_density(rng):
    g = ChainGeometry.interval(0, 3, [2, 3, 2, 2])
    psi = rand_state(g, rng)
    for W in [(0,), (1, 2), (0, 1, 2)]:
        rho = reduced_density(psi, g, W)
        np.testing.assert_allclose(window_populations(psi, g, W), np.diag(rho).real, atol=1e-12)
        assert window_purity(psi, g, W) == pytest.approx(np.trace(rho @ rho).real, abs=1e-12)


def test_cut_entropy_examples():
    g = ChainGeometry.interval(0, 3, 3)
    assert cut_entropy(product_state(g, (0, 1, 2, 0)), g, 1) <= 1e-10
    gb, bell = bell_chain()
    assert cut_entropy(bell, gb, 0) == pytest.approx(np.log(2), abs=1e-8)
    v = np.zeros(81, complex)
    v[np.ravel_multi_index((1, 2, 0, 0), (3,) * 4)] = 1 / np.sqrt(2)
    v[0] = 1 / np.sqrt(2)
    assert cut_entropy(ChainState(g, v), g, 1) <= 1e-10     # pair on (0, 1), cut at (1, 2)
    with pytest.raises(ValueError):
        cut_entropy(bell, ChainGeometry.interval(0, 1, 2, ring=True), 0)


def test_trace_distance_examples():
    r = np.diag([0.3, 0.7])
    assert trace_distance(r, r) == 0
    assert trace_distance(np.diag([1.0, 0]), np.diag([0, 1.0])) == pytest.approx(2)
    with pytest.raises(ValueError):
        trace_distance(r, np.eye(3))


def test_array_roundtrip(tmp_path, rng):
    a = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
    save_array(tmp_path / "x", a)
    np.testing.assert_array_equal(load_array(tmp_path / "x"), a)
    assert (tmp_path / "x.bin").stat().st_size == a.size * 16


@given(seed=st.integers(0, 10 ** 6))
def test_apply_respects_composition(seed):
    rng = np.random.default_rng(seed)
    g = ChainGeometry.interval(0, 3, 2)
    psi = rand_state(g, rng)
    A = EmbeddedOperator(g, (0, 1), rng.normal(size=(4, 4)))
    B = EmbeddedOperator(g, (1, 2), rng.normal(size=(4, 4)))
    np.testing.assert_allclose(A.apply(B.apply(psi.vector)), (A @ B).apply(psi.vector), atol=1e-10)
    x, y = rng.normal(size=2)
    lin = A.apply(x * psi.vector + y * psi.vector[::-1])
    np.testing.assert_allclose(lin, x * A.apply(psi.vector) + y * A.apply(psi.vector[::-1]), atol=1e-10)


@given(seed=st.integers(0, 10 ** 6))
def test_nested_windows_consistent(seed):
    rng = np.random.default_rng(seed)
    g = ChainGeometry.interval(0, 3, [2, 3, 2, 2])
    psi = rand_state(g, rng)
    big = reduced_density(psi, g, (0, 1, 2))
    small = np.trace(big.reshape(2, 3, 2, 2, 3, 2), axis1=2, axis2=5).reshape(6, 6)
    np.testing.assert_allclose(small, reduced_density(psi, g, (0, 1)), atol=1e-10)


@given(seed=st.integers(0, 10 ** 6), da=st.integers(2, 3), db=st.integers(2, 3))
def test_bipartite_bound(seed, da, db):
    # ||rho - P||_1 <= 6 sqrt||rho_a - P_a||_1 + 6 sqrt||rho_b - P_b||_1 for a product projector P
    rng = np.random.default_rng(seed)
    d = da * db
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    u = rng.normal(size=da) + 1j * rng.normal(size=da)
    w = rng.normal(size=db) + 1j * rng.normal(size=db)
    u, w = u / np.linalg.norm(u), w / np.linalg.norm(w)
    v = np.kron(u, w)
    # rho close to P with random admixture of varying size
    t = rng.uniform(0, 1)
    rho = (1 - t) * np.outer(v, v.conj()) + t * (X @ X.conj().T) / np.trace(X @ X.conj().T)
    Pa, Pb = np.outer(u, u.conj()), np.outer(w, w.conj())
    R = rho.reshape(da, db, da, db)
    ra = np.trace(R, axis1=1, axis2=3)
    rb = np.trace(R, axis1=0, axis2=2)
    lhs = trace_distance(rho, np.kron(Pa, Pb))
    rhs = 6 * np.sqrt(trace_distance(ra, Pa)) + 6 * np.sqrt(trace_distance(rb, Pb))
    assert lhs <= rhs + 1e-12


@given(seed=st.integers(0, 10 ** 6))
def test_states_normalized(seed):
    rng = np.random.default_rng(seed)
    g = ChainGeometry.interval(0, 2, 3)
    assert abs(np.linalg.norm(rand_state(g, rng).vector) - 1) < 1e-10
    with pytest.raises(ValueError):
        ChainState(g, 2 * np.eye(27)[0])
