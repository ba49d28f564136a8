"""Time evolution under TDIs.

State picture: dPsi/ds = -i H(s) Psi, so that Psi(s) = U(s) Psi(0) and the
Heisenberg-picture automorphism is alpha_H(s)[A] = U(s)^dagger A U(s).

Constant pieces are exponentiated exactly (dense eigendecomposition below a
threshold dimension, Lanczos exponential action above it).  Time-dependent
pieces use an exact ``flow`` when the piece provides one and otherwise a
fourth-order commutator-free Magnus step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .chainspace import ChainGeometry, ChainState, EmbeddedOperator, apply_matrix
from .interaction import TDI, Interaction, Piece

__all__ = [
    "EvolutionError",
    "PropagatorRequest",
    "krylov_expm",
    "step_piece",
    "propagate",
    "evolve_state",
    "evolve",
    "DenseFlow",
    "propagator",
    "Automorphism",
    "evolve_operator",
    "evolved_action",
    "cocycle",
    "inverse_tdi",
    "reverse_tdi",
    "compose_tdi",
    "concatenate_tdi",
    "conditional_expectation",
    "locality_profile",
    "duhamel_difference",
]

DENSE_LIMIT = 4096


class EvolutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PropagatorRequest:
    """What to evolve, over which window, and how.

    integrator: "auto" (dense below ``dense_below``, Lanczos above),
    "exact" (always dense), "krylov", or "rk4" (classical Runge-Kutta on
    the full generator; used as an independent oracle).
    """

    tdi: TDI
    u: float = 0.0
    s: float = 1.0
    integrator: str = "auto"
    max_step: float = 0.01
    unitarity_tol: float = 1e-10
    krylov_tol: float = 1e-12
    dense_below: int = 512

    def __post_init__(self):
        if self.integrator not in ("auto", "exact", "krylov", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if not self.unitarity_tol > 0 or not self.max_step > 0:
            raise ValueError("tolerances and steps must be positive")

    @property
    def geometry(self) -> ChainGeometry:
        return self.tdi.geometry

    def use_dense(self) -> bool:
        if self.integrator == "exact":
            return True
        if self.integrator == "krylov":
            return False
        return self.tdi.geometry.total_dim <= self.dense_below


# --- exponentials ---------------------------------------------------------

def _lanczos(matvec, w, m_max):
    n = w.size
    m_max = min(m_max, n)
    V = np.zeros((n, m_max + 1), dtype=complex)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    V[:, 0] = w
    for j in range(m_max):
        x = matvec(V[:, j])
        alpha[j] = np.vdot(V[:, j], x).real
        x = x - V[:, : j + 1] @ (V[:, : j + 1].conj().T @ x)
        x = x - V[:, : j + 1] @ (V[:, : j + 1].conj().T @ x)
        b = np.linalg.norm(x)
        beta[j] = b
        if b < 1e-13 * max(1.0, abs(alpha[j])):
            return V[:, : j + 1], alpha[: j + 1], beta[: j + 1], True
        V[:, j + 1] = x / b
    return V[:, :m_max], alpha, beta, False


def krylov_expm(matvec, v: np.ndarray, t: float, tol: float = 1e-12, m_max: int = 30):
    """exp(-i t H) v for Hermitian H given by ``matvec``, with adaptive substeps."""
    v = np.asarray(v, dtype=complex)
    nrm = np.linalg.norm(v)
    if nrm == 0 or t == 0:
        return v.copy()
    w = v / nrm
    T = abs(t)
    sgn = 1.0 if t > 0 else -1.0
    done, dt = 0.0, T
    while T - done > 1e-15 * T:
        V, a, b, broke = _lanczos(matvec, w, m_max)
        m = len(a)
        if m == 1:
            ev, U = a.copy(), np.ones((1, 1))
        else:
            ev, U = eigh_tridiagonal(a, b[: m - 1])
        dt = min(dt, T - done)
        while True:
            c = U @ (np.exp(-1j * sgn * dt * ev) * U[0].conj())
            err = 0.0 if broke else b[m - 1] * abs(c[-1])
            if err <= tol * max(dt / T, 1e-3) or dt < 1e-10 * T:
                break
            dt *= 0.5
        w = V @ c
        done += dt
        dt = min(2 * dt, T - done) if T - done > 0 else dt
    return nrm * w


def _expm_herm_dense(M: np.ndarray, t: float) -> np.ndarray:
    ev, U = np.linalg.eigh(M)
    return (U * np.exp(-1j * t * ev)) @ U.conj().T


class _DenseCache:
    """Eigendecompositions of constant interactions, keyed by identity."""

    def __init__(self, size=64):
        self.store = {}
        self.size = size

    def get(self, H: Interaction):
        key = id(H)
        hit = self.store.get(key)
        if hit is not None and hit[0] is H:
            return hit[1], hit[2]
        ev, U = np.linalg.eigh(H.full())
        if len(self.store) >= self.size:
            self.store.pop(next(iter(self.store)))
        self.store[key] = (H, ev, U)
        return ev, U


_CACHE = _DenseCache()


def _disjoint(H: Interaction) -> bool:
    seen = set()
    for S in H.terms:
        if seen.intersection(S):
            return False
        seen.update(S)
    return True


def _local_step(H: Interaction, dt: float, v: np.ndarray):
    # terms on disjoint supports commute: exponentiate each one locally
    g = H.geometry
    for S, M in H.items():
        E = _expm_herm_dense(M, dt)
        pos = g.positions(S)
        v = apply_matrix(E, pos, g.dims, v) if v.ndim == 1 else apply_matrix(E, pos, g.dims, batch=v)
    return v


def _const_step(H: Interaction, dt: float, v: np.ndarray, req: PropagatorRequest):
    if not H.terms or dt == 0:
        return v
    if req.integrator != "krylov" and _disjoint(H):
        return _local_step(H, dt, v)
    if req.use_dense():
        ev, U = _CACHE.get(H)
        x = U.conj().T @ v
        return U @ (np.exp(-1j * dt * ev) * x.T).T
    if v.ndim == 2:
        return np.stack([krylov_expm(H.matvec, v[:, k], dt, req.krylov_tol)
                         for k in range(v.shape[1])], axis=1)
    return krylov_expm(H.matvec, v, dt, req.krylov_tol)


def _generic_step(H: Interaction, dt: float, v: np.ndarray, req: PropagatorRequest):
    if not H.terms or dt == 0:
        return v
    if req.use_dense():
        E = _expm_herm_dense(H.full(), dt)
        return E @ v
    if v.ndim == 2:
        return np.stack([krylov_expm(H.matvec, v[:, k], dt, req.krylov_tol)
                         for k in range(v.shape[1])], axis=1)
    return krylov_expm(H.matvec, v, dt, req.krylov_tol)


_SQ3 = math.sqrt(3.0)
_C1, _C2 = 0.5 - _SQ3 / 6, 0.5 + _SQ3 / 6
_A1, _A2 = (3 - 2 * _SQ3) / 12, (3 + 2 * _SQ3) / 12


def _cf4(p: Piece, ta: float, tb: float, v, req: PropagatorRequest):
    n = max(1, int(math.ceil(abs(tb - ta) / req.max_step - 1e-9)))
    h = (tb - ta) / n
    t = ta
    for _ in range(n):
        H1, H2 = p.func(t + _C1 * h), p.func(t + _C2 * h)
        v = _generic_step(H1 * _A2 + H2 * _A1, h, v, req)
        v = _generic_step(H1 * _A1 + H2 * _A2, h, v, req)
        t += h
    return v


def _rk4(p: Piece, ta, tb, v, req):
    n = max(1, int(math.ceil(abs(tb - ta) / req.max_step - 1e-9)))
    h = (tb - ta) / n
    t = ta

    def f(s, x):
        H = p.at(s)
        if x.ndim == 1:
            return -1j * H.matvec(x)
        return -1j * np.stack([H.matvec(x[:, k]) for k in range(x.shape[1])], axis=1)

    for _ in range(n):
        k1 = f(t, v)
        k2 = f(t + h / 2, v + h / 2 * k1)
        k3 = f(t + h / 2, v + h / 2 * k2)
        k4 = f(t + h, v + h * k3)
        v = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return v


def step_piece(p: Piece, ta, tb, v, req):
    """Propagate v across [ta, tb] inside a single piece."""
    if req.integrator == "rk4":
        return _rk4(p, ta, tb, v, req)
    if p.flow is not None:
        return p.flow(ta, tb, v)
    if p.is_constant:
        return _const_step(p.interaction, tb - ta, v, req)
    return _cf4(p, ta, tb, v, req)


def propagate(v: np.ndarray, req: PropagatorRequest) -> np.ndarray:
    """U(s, u) v on raw vectors (or on the columns of a matrix).

    Backward windows (s < u) apply the inverse propagator.
    """
    v = np.asarray(v, dtype=complex)
    u, s = float(req.u), float(req.s)
    if u == s:
        return v.copy()
    n0 = np.linalg.norm(v, axis=0)
    pieces = req.tdi.pieces
    if s > u:
        for p in pieces:
            a, b = max(p.t0, u), min(p.t1, s)
            if b > a:
                v = step_piece(p, a, b, v, req)
    else:
        for p in reversed(pieces):
            a, b = min(p.t1, u), max(p.t0, s)
            if a > b:
                v = step_piece(p, a, b, v, req)
    defect = np.max(np.abs(np.linalg.norm(v, axis=0) - n0))
    if defect > req.unitarity_tol * max(1.0, float(np.max(n0))):
        raise EvolutionError(f"unitarity defect {defect:.2e} exceeds tolerance")
    return v


def evolve_state(state: ChainState, req: PropagatorRequest) -> ChainState:
    g = state.geometry
    if g.sites != req.geometry.sites or g.dims != req.geometry.dims:
        raise ValueError("geometry mismatch")
    return ChainState(g, propagate(state.vector, req))


def evolve(state: ChainState, tdi: TDI, s: float = 1.0, u: float = 0.0, **opts) -> ChainState:
    return evolve_state(state, PropagatorRequest(tdi, u=u, s=s, **opts))


# --- dense propagators ----------------------------------------------------

def _check_dense(g: ChainGeometry, limit=DENSE_LIMIT):
    if g.total_dim > limit:
        raise ValueError(f"dimension {g.total_dim} above the dense threshold {limit}")


class DenseFlow:
    """Full propagators U(s) of a TDI, cached at piece boundaries."""

    def __init__(self, tdi: TDI, max_step: float = 0.005, limit: int = DENSE_LIMIT):
        _check_dense(tdi.geometry, limit)
        self.tdi = tdi
        self.req = PropagatorRequest(tdi, integrator="exact", max_step=max_step,
                                     unitarity_tol=1e-8, dense_below=limit)
        D = tdi.geometry.total_dim
        self.starts = []
        U = np.eye(D, dtype=complex)
        for p in tdi.pieces:
            self.starts.append(U)
            U = step_piece(p, p.t0, p.t1, U, self.req)
        self.end = U
        self._last = None

    def __call__(self, s: float) -> np.ndarray:
        s = float(s)
        if s >= 1.0:
            return self.end
        for k, p in enumerate(self.tdi.pieces):
            if s < p.t1:
                break
        U0 = self.starts[k]
        if s == p.t0:
            return U0
        if p.is_constant and p.flow is None:
            ev, V = _CACHE.get(p.interaction) if p.interaction.terms else (None, None)
            if ev is None:
                return U0
            return (V * np.exp(-1j * (s - p.t0) * ev)) @ (V.conj().T @ U0)
        ta, Ua = p.t0, U0
        if self._last is not None and self._last[0] == k and self._last[1] <= s:
            ta, Ua = self._last[1], self._last[2]
        U = step_piece(p, ta, s, Ua, self.req)
        self._last = (k, s, U)
        return U


def propagator(tdi: TDI, s: float = 1.0, u: float = 0.0, max_step: float = 0.005) -> np.ndarray:
    """Dense U(s, u) = U(s) U(u)^dagger."""
    _check_dense(tdi.geometry)
    D = tdi.geometry.total_dim
    req = PropagatorRequest(tdi, u=u, s=s, integrator="exact", max_step=max_step,
                            unitarity_tol=1e-8, dense_below=DENSE_LIMIT)
    return propagate(np.eye(D, dtype=complex), req)


@dataclass(frozen=True, eq=False)
class Automorphism:
    """A -> w A w^dagger on the full chain algebra."""

    unitary: np.ndarray

    def __call__(self, A: np.ndarray) -> np.ndarray:
        w = self.unitary
        return w @ A @ w.conj().T

    def compose(self, other: "Automorphism") -> "Automorphism":
        """self after other."""
        return Automorphism(self.unitary @ other.unitary)

    def inverse(self) -> "Automorphism":
        return Automorphism(self.unitary.conj().T)

    def distance(self, other: "Automorphism") -> float:
        """min over phases c of ||w1 - c w2||, an upper bound of half the map distance."""
        a, b = self.unitary, other.unitary
        tr = np.vdot(b, a)
        c = tr / abs(tr) if abs(tr) > 1e-300 else 1.0
        return float(np.linalg.norm(a - c * b, 2))

    @classmethod
    def identity(cls, D: int) -> "Automorphism":
        return cls(np.eye(D, dtype=complex))

    @classmethod
    def of(cls, tdi: TDI, s: float = 1.0) -> "Automorphism":
        """alpha_H(s)."""
        return cls(propagator(tdi, s).conj().T)


def _full(A, g):
    if isinstance(A, EmbeddedOperator):
        return A.full()
    return np.asarray(A, dtype=complex)


def evolve_operator(A, tdi: TDI, s: float = 1.0, u: float = 0.0) -> EmbeddedOperator:
    """alpha_H(s, u)[A] as a full-chain matrix (dense threshold applies)."""
    g = tdi.geometry
    _check_dense(g)
    W = cocycle(tdi, u, s)
    return EmbeddedOperator(g, g.sites, W(_full(A, g)))


def evolved_action(A: EmbeddedOperator, tdi: TDI, s: float = 1.0, **opts):
    """v -> alpha_H(s)[A] v without forming matrices."""
    fwd = PropagatorRequest(tdi, u=0.0, s=s, **opts)
    bwd = PropagatorRequest(tdi, u=s, s=0.0, **opts)

    def act(v):
        return propagate(A.apply(propagate(v, fwd)), bwd)
    return act


def cocycle(tdi: TDI, u: float, s: float) -> Automorphism:
    """alpha_H(s, u) = alpha_H(u)^{-1} o alpha_H(s)."""
    if u > s:
        raise ValueError("need u <= s")
    return Automorphism(propagator(tdi, s=u, u=s))


# --- generator identities --------------------------------------------------

def _full_term(g: ChainGeometry, M: np.ndarray) -> Interaction:
    return Interaction(g, {g.sites: 0.5 * (M + M.conj().T)}, check=False)


def _flow_between(tdi: TDI, max_step=0.01):
    def run(v, a, b):
        return propagate(v, PropagatorRequest(tdi, u=a, s=b, max_step=max_step))
    return run


def inverse_tdi(H: TDI) -> TDI:
    """The TDI -alpha_H(s)[H(s)], generating s -> alpha_H(s)^{-1}.

    Terms are materialized lazily as full-chain matrices (dense threshold
    applies); evolution uses the exact flow U_H(s)^dagger and works at any
    dimension.
    """
    g = H.geometry
    run = _flow_between(H)
    holder = {}

    def flow_obj():
        if "f" not in holder:
            holder["f"] = DenseFlow(H)
        return holder["f"]

    pieces = []
    for p in H.pieces:
        def flow(ta, tb, v):
            return run(run(v, 0.0, ta), tb, 0.0)
        if p.is_constant:
            def term(s, p=p):
                U = flow_obj()(p.t0)
                return _full_term(g, -(U.conj().T @ p.interaction.full() @ U))
            pieces.append(Piece(p.t0, p.t1, func=_Memo(term, p.t0), flow=flow))
        else:
            def term(s, p=p):
                U = flow_obj()(s)
                return _full_term(g, -(U.conj().T @ p.func(s).full() @ U))
            pieces.append(Piece(p.t0, p.t1, func=term, flow=flow))
    return TDI(g, pieces)


class _Memo:
    """Constant-in-time lazily computed interaction."""

    def __init__(self, fn, t):
        self.fn, self.t, self.val = fn, t, None

    def __call__(self, s):
        if self.val is None:
            self.val = self.fn(self.t)
        return self.val


def reverse_tdi(H: TDI) -> TDI:
    """-H(1 - s), generating alpha_H(1)^{-1} o alpha_H(1 - s)."""
    return H.time_map([(0.0, 1.0, 1.0, 0.0)])


def compose_tdi(H1: TDI, H2: TDI) -> TDI:
    """H1(s) + alpha_{H1}(s)^{-1}[H2(s)], generating alpha_{H2}(s) o alpha_{H1}(s).

    The vector propagator is U1(s) U2(s).
    """
    g = H1.geometry
    if H2.geometry != g:
        raise ValueError("TDIs live on different chains")
    run1, run2 = _flow_between(H1), _flow_between(H2)
    holder = {}

    def U1(s):
        if "f" not in holder:
            holder["f"] = DenseFlow(H1)
        return holder["f"](s)

    def flow(ta, tb, v):
        return run1(run2(run1(v, ta, 0.0), ta, tb), 0.0, tb)

    def term(s):
        U = U1(s)
        return H1.at(s) + _full_term(g, U @ H2.at(s).full() @ U.conj().T)

    knots = sorted(set(H1.breakpoints) | set(H2.breakpoints))
    knots = [k for i, k in enumerate(knots) if i == 0 or k - knots[i - 1] > 1e-13]
    knots[-1] = 1.0
    pieces = [Piece(a, b, func=term, flow=flow) for a, b in zip(knots, knots[1:])]
    return TDI(g, pieces)


def concatenate_tdi(H1: TDI, H2: TDI) -> TDI:
    """2 H1(2s) on [0, 1/2] then 2 H2(2s - 1): H1 runs first.

    Vector endpoint U2(1) U1(1); as automorphisms alpha_{H1}(1) o alpha_{H2}(1).
    """
    if H2.geometry != H1.geometry:
        raise ValueError("TDIs live on different chains")
    first = _squeeze(H1, 0.0, 0.5)
    second = _squeeze(H2, 0.5, 1.0)
    return TDI(H1.geometry, first + second)


def _squeeze(H: TDI, a: float, b: float):
    """Pieces of the TDI (b - a)^{-1} H((s - a)/(b - a)) on [a, b]."""
    m = 1.0 / (b - a)
    out = []
    for p in H.pieces:
        s0, s1 = a + p.t0 / m, a + p.t1 / m
        if p is H.pieces[-1]:
            s1 = b
        jf = (lambda s: (s - a) * m)
        flow = None if p.flow is None else (lambda ta, tb, v, p=p: p.flow(jf(ta), jf(tb), v))
        if p.is_constant:
            out.append(Piece(s0, s1, interaction=p.interaction * m, flow=flow))
        else:
            out.append(Piece(s0, s1, func=(lambda s, p=p: p.func(jf(s)) * m), flow=flow))
    return out


# --- locality diagnostics ---------------------------------------------------

def conditional_expectation(A: np.ndarray, dims, keep) -> np.ndarray:
    """Normalized partial trace of A over the factors not in ``keep``.

    Returns the operator on the kept factors (in increasing position order).
    """
    dims = tuple(dims)
    keep = sorted(keep)
    n = len(dims)
    drop = [p for p in range(n) if p not in keep]
    T = np.asarray(A).reshape(dims + dims)
    ncur = n
    for p in sorted(drop, reverse=True):
        T = np.trace(T, axis1=p, axis2=ncur + p)
        ncur -= 1
    dk = int(np.prod([dims[p] for p in keep])) if keep else 1
    dd = int(np.prod([dims[p] for p in drop])) if drop else 1
    return T.reshape(dk, dk) / dd


def _embed_positions(M, dims, keep):
    g_dims = tuple(dims)
    D = int(np.prod(g_dims))
    return apply_matrix(M, sorted(keep), g_dims, batch=np.eye(D, dtype=complex))


def _ball(g: ChainGeometry, j: int, k: int) -> list:
    p = g.position(j)
    n = g.n_sites
    if g.ring:
        if 2 * k + 1 >= n:
            return list(range(n))
        return sorted({(p + d) % n for d in range(-k, k + 1)})
    return list(range(max(0, p - k), min(n, p + k + 1)))


def locality_profile(A: np.ndarray, g: ChainGeometry, center: int, return_parts: bool = False):
    """Weights ||A_{j,k}|| of the ball decomposition around ``center``.

    A_{j,0} = tau_{B_0^c}[A] and A_{j,k} = tau_{B_k^c}[A] - tau_{B_{k-1}^c}[A];
    the parts sum to A exactly once the ball covers the chain.
    """
    dims = g.dims
    A = np.asarray(A)
    prev = None
    weights, parts = [], []
    k = 0
    while True:
        B = _ball(g, center, k)
        cur = _embed_positions(conditional_expectation(A, dims, B), dims, B)
        part = cur if prev is None else cur - prev
        weights.append(float(np.linalg.norm(part, 2)))
        if return_parts:
            parts.append(part)
        prev = cur
        if len(B) == g.n_sites:
            break
        k += 1
    weights = np.array(weights)
    return (weights, parts) if return_parts else weights


def duhamel_difference(H1: TDI, H2: TDI, A, s: float = 1.0) -> float:
    """||alpha_{H1}(s)[A] - alpha_{H2}(s)[A]|| computed with dense propagators."""
    g = H1.geometry
    M = _full(A, g)
    a1 = Automorphism.of(H1, s)(M)
    a2 = Automorphism.of(H2, s)(M)
    return float(np.linalg.norm(a1 - a2, 2))
