import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from hypothesis import HealthCheck, settings

from chargepump.chainspace import ChainGeometry
from chargepump.interaction import TDI, Interaction, Piece

settings.register_profile("repo", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def rand_herm(d, rng, scale=1.0):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (A + A.conj().T) / 2


def kron_embed(M, pos, dims):
    """Oracle embedding by explicit Kronecker products (pos is a run of positions)."""
    left = int(np.prod(dims[:pos[0]]))
    right = int(np.prod(dims[pos[-1] + 1:]))
    return np.kron(np.kron(np.eye(left), M), np.eye(right))


def random_tdi(rng, n=4, d=2, pieces=2, smooth=False):
    """Random nearest-neighbour TDI on an open chain of n sites."""
    g = ChainGeometry.interval(0, n - 1, d)
    knots = np.sort(np.concatenate([[0.0, 1.0], rng.uniform(0.1, 0.9, pieces - 1)]))
    out = []
    for a, b in zip(knots, knots[1:]):
        H0 = Interaction(g, {(i, i + 1): rand_herm(d * d, rng) for i in range(n - 1)})
        if not smooth:
            out.append(Piece(float(a), float(b), interaction=H0))
        else:
            H1 = Interaction(g, {(i,): rand_herm(d, rng) for i in range(n)})
            out.append(Piece(float(a), float(b), func=lambda s, H0=H0, H1=H1: H0 + H1 * np.sin(3 * s)))
    return TDI(g, out)


def oracle_propagator(tdi, s=1.0, u=0.0):
    """Dense ODE oracle for U(s, u): dU/dt = -i H(t) U, independent of the library's integrators."""
    D = tdi.geometry.total_dim
    if s == u:
        return np.eye(D, dtype=complex)
    cuts = sorted({u, s, *[b for b in tdi.breakpoints if u < b < s]})
    U = np.eye(D, dtype=complex)
    for a, b in zip(cuts, cuts[1:]):
        p = tdi.piece_at(0.5 * (a + b))
        if p.is_constant:
            U = expm(-1j * (b - a) * p.interaction.full()) @ U
            continue

        def rhs(t, y):
            return (-1j * p.func(t).full() @ y.reshape(D, D)).reshape(-1)
        sol = solve_ivp(rhs, (a, b), U.reshape(-1), rtol=1e-12, atol=1e-13, method="DOP853")
        U = sol.y[:, -1].reshape(D, D)
    return U


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.summary_line(n))
