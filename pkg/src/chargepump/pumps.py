"""Loop constructors and combinators.

A loop is a symmetric basepoint plus a symmetric TDI whose evolution
returns to the basepoint.  The example pump moves a charge pair across
every bond per cycle; the combinators (concat, time reversal, stacking,
reparametrization, dressing) build new loops from old ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .chainspace import ChainGeometry, ChainState, apply_matrix, extend_matrix, product_state, \
    reduced_density, trace_distance
from .evolution import PropagatorRequest, concatenate_tdi, propagate, reverse_tdi, step_piece
from .interaction import TDI, Interaction, Piece, restrict_piece
from .symmetry import DualCharge, OnsiteRep, SymmetryGroup, is_invariant, symmetrize

__all__ = [
    "ClosurePolicy",
    "ClosureReport",
    "LoopSpec",
    "LoopError",
    "ZERO",
    "MINUS",
    "PLUS",
    "pump_levels",
    "example_pump",
    "constant_loop",
    "concat",
    "time_reverse",
    "stack",
    "reparametrize",
    "dressing_generator",
    "dress",
    "rotate",
    "verify_loop",
]

# level ordering on a pump site: the zero-charge level first
ZERO, MINUS, PLUS = 0, 1, 2


class LoopError(ValueError):
    pass


@dataclass(frozen=True)
class ClosurePolicy:
    """``ring``: global fidelity; ``bulk``: reduced densities on a central window."""

    kind: str = "ring"
    window: tuple | None = None
    tol: float = 1e-9

    def __post_init__(self):
        if self.kind not in ("ring", "bulk"):
            raise ValueError(f"unknown closure policy {self.kind!r}")


@dataclass(frozen=True)
class ClosureReport:
    policy: str
    fidelity: float
    trace_distance: float | None
    window: tuple | None
    passed: bool

    def to_json(self) -> dict:
        return {"policy": self.policy, "fidelity": self.fidelity,
                "trace_distance": self.trace_distance,
                "window": list(self.window) if self.window else None, "passed": self.passed}


@dataclass(frozen=True, eq=False)
class LoopSpec:
    geometry: ChainGeometry
    rep: OnsiteRep
    basepoint: ChainState
    tdi: TDI
    closure: ClosurePolicy = ClosurePolicy()
    levels: tuple | None = None
    name: str = "loop"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rep.n_sites != self.geometry.n_sites or self.rep.dims != self.geometry.dims:
            raise LoopError("representation does not match the geometry")
        if self.tdi.geometry != self.geometry or self.basepoint.geometry != self.geometry:
            raise LoopError("TDI or basepoint on a different chain")

    @property
    def group(self) -> SymmetryGroup:
        return self.rep.group

    def check_symmetric(self, samples: int = 3, tol: float = 1e-9) -> float:
        """Largest commutator defect of the TDI terms and of the basepoint."""
        worst = 0.0
        for p in self.tdi.pieces:
            times = [p.t0] if p.is_constant else np.linspace(p.t0, p.t1, samples)
            for s in times:
                I = p.at(s)
                for S, M in I.items():
                    ok, d = is_invariant(M, self.rep, self.geometry.positions(S), tol=tol)
                    worst = max(worst, d)
        full = self.rep.restrict(range(self.geometry.n_sites))
        for k in range(self.group.n_factors):
            q = full.charges[:, k]
            v = self.basepoint.vector
            w = np.abs(v) ** 2
            vals = q[w > 1e-14]
            if vals.size and np.any(vals != vals[0]):
                worst = max(worst, 1.0)
        return worst


def _as_dual(group: SymmetryGroup, h) -> DualCharge:
    if isinstance(h, DualCharge):
        return h
    return group.dual(h if isinstance(h, (tuple, list)) else (h,))


def pump_levels(group: SymmetryGroup, h) -> tuple:
    """Charges of the three pump levels in the order (0, -h, +h)."""
    h = _as_dual(group, h)
    return (group.zero(), -h, h)


def _pump_site_ops(d: int = 3):
    """Pair flips |0,0> <-> |-h,h> (even bonds) and |0,0> <-> |h,-h> (odd bonds)."""
    def flip(a, b):
        X = np.zeros((d * d, d * d), dtype=complex)
        i, j = ZERO * d + ZERO, a * d + b
        X[i, j] = X[j, i] = 1.0
        return X
    return flip(MINUS, PLUS), flip(PLUS, MINUS)


def _bonds(geometry: ChainGeometry, parity: int) -> list:
    out = []
    for s in geometry.sites:
        if s % 2 != parity:
            continue
        if s < geometry.last:
            out.append((s, s + 1))
        elif geometry.ring:
            out.append((s, geometry.first))
    return out


def example_pump(group: SymmetryGroup, h, geometry: ChainGeometry | None = None,
                 n_sites: int = 8, ring: bool = True, unit=None) -> LoopSpec:
    """The charge pump: pair creation on even bonds, then recombination on odd bonds.

    For s in [0, 1/2] the generator is pi(a + a*) on every even bond with
    a = |0,0><-h,h|, rotating |0,0> to -i|-h,h>; for s in [1/2, 1] it is
    pi(a + a*) with a = |0,0><h,-h| on odd bonds, which recombines the
    charges of neighbouring pairs.  Net effect per cycle: charge h moves one
    bond to the right across every even bond.

    The site levels carry charges (0, -unit, unit), with unit = h by default.
    Passing ``unit`` puts pumps of charge h in {unit, -unit, 0} on a common
    representation; for h = 0 the pair is then created and annihilated on
    the even bonds, a loop through nonzero Hamiltonians that pumps nothing.
    """
    if geometry is None:
        geometry = ChainGeometry.centered(n_sites, 3, ring=ring)
    if any(d != 3 for d in geometry.dims):
        raise LoopError("the example pump needs three levels per site")
    if geometry.ring and geometry.n_sites % 2:
        raise LoopError("a ring pump needs an even number of sites")
    hq = _as_dual(group, h)
    uq = hq if unit is None else _as_dual(group, unit)
    rep = OnsiteRep.uniform(group, pump_levels(group, uq), geometry.n_sites)
    X_fwd, X_bwd = _pump_site_ops()
    if hq == uq:
        X_first, X_second, parity = X_fwd, X_bwd, 1
    elif hq == -uq:
        X_first, X_second, parity = X_bwd, X_fwd, 1
    elif hq.is_zero():
        X_first, X_second, parity = X_fwd, X_fwd, 0
    else:
        raise LoopError(f"charge {hq} is not pumpable with unit {uq}")
    H1 = Interaction(geometry, {b: np.pi * X_first for b in _bonds(geometry, 0)})
    H2 = Interaction(geometry, {b: np.pi * X_second for b in _bonds(geometry, parity)})
    tdi = TDI.piecewise(geometry, [(0.0, 0.5, H1), (0.5, 1.0, H2)])
    levels = (ZERO,) * geometry.n_sites
    return LoopSpec(geometry, rep, product_state(geometry, levels), tdi,
                    ClosurePolicy("ring" if geometry.ring else "bulk"), levels,
                    name=f"pump({hq})", meta={"h": hq.to_list(), "unit": uq.to_list()})


def constant_loop(geometry: ChainGeometry, rep: OnsiteRep, levels: Sequence[int] | None = None,
                  basepoint: ChainState | None = None) -> LoopSpec:
    if basepoint is None:
        levels = tuple(levels) if levels is not None else (0,) * geometry.n_sites
        basepoint = product_state(geometry, levels)
    return LoopSpec(geometry, rep, basepoint, TDI.zero(geometry),
                    ClosurePolicy("ring" if geometry.ring else "bulk"),
                    tuple(levels) if levels is not None else None, name="const")


def _compatible(a: LoopSpec, b: LoopSpec, tol: float = 1e-9):
    if a.geometry != b.geometry:
        raise LoopError("loops live on different chains")
    if a.rep != b.rep:
        raise LoopError("loops carry different representations")
    if 1 - a.basepoint.fidelity(b.basepoint) > tol:
        raise LoopError("basepoints differ")


def concat(psi2: LoopSpec, psi1: LoopSpec) -> LoopSpec:
    """psi2 after psi1: psi1 runs on [0, 1/2], psi2 on [1/2, 1]."""
    _compatible(psi1, psi2)
    return replace(psi1, tdi=concatenate_tdi(psi1.tdi, psi2.tdi),
                   name=f"({psi2.name} . {psi1.name})", meta={})


def time_reverse(psi: LoopSpec) -> LoopSpec:
    return replace(psi, tdi=reverse_tdi(psi.tdi), name=f"rev({psi.name})", meta={})


def _interleave(M1, M2, d1, d2):
    """M1 (x) M2 on sites whose local spaces are merged site by site."""
    k = len(d1)
    M = np.kron(M1, M2).reshape(tuple(d1) + tuple(d2) + tuple(d1) + tuple(d2))
    order = [x for i in range(k) for x in (i, k + i)]
    perm = order + [2 * k + x for x in order]
    D = int(np.prod(d1)) * int(np.prod(d2))
    return np.transpose(M, perm).reshape(D, D)


def _embed_stack(I: Interaction, g: ChainGeometry, g1: ChainGeometry, g2: ChainGeometry,
                 first: bool) -> Interaction:
    terms = {}
    for S, M in I.items():
        d1, d2 = g1.local_dims(S), g2.local_dims(S)
        if first:
            terms[S] = _interleave(M, np.eye(int(np.prod(d2))), d1, d2)
        else:
            terms[S] = _interleave(np.eye(int(np.prod(d1))), M, d1, d2)
    return Interaction(g, terms, check=False)


def stack(psi1: LoopSpec, psi2: LoopSpec) -> LoopSpec:
    """Tensor product of two loops on the same sites (local spaces merged)."""
    if psi1.group != psi2.group:
        raise LoopError("group mismatch")
    g1, g2 = psi1.geometry, psi2.geometry
    if g1.sites != g2.sites or g1.ring != g2.ring:
        raise LoopError("stacking needs chains with the same sites")
    g = ChainGeometry(g1.sites, tuple(a * b for a, b in zip(g1.dims, g2.dims)), g1.ring)
    rep = psi1.rep.stacked(psi2.rep)
    knots = sorted(set(psi1.tdi.breakpoints) | set(psi2.tdi.breakpoints))
    knots = [k for i, k in enumerate(knots) if i == 0 or k - knots[i - 1] > 1e-13]
    knots[-1] = 1.0
    pieces = []
    for a, b in zip(knots, knots[1:]):
        m = 0.5 * (a + b)
        p1, p2 = psi1.tdi.piece_at(m), psi2.tdi.piece_at(m)
        if p1.is_constant and p2.is_constant:
            I = _embed_stack(p1.interaction, g, g1, g2, True) + \
                _embed_stack(p2.interaction, g, g1, g2, False)
            pieces.append(Piece(a, b, interaction=I))
        else:
            pieces.append(Piece(a, b, func=lambda s, p1=p1, p2=p2:
                                _embed_stack(p1.at(s), g, g1, g2, True) +
                                _embed_stack(p2.at(s), g, g1, g2, False)))
    n = g.n_sites
    v = np.kron(psi1.basepoint.vector, psi2.basepoint.vector).reshape(g1.dims + g2.dims)
    v = np.transpose(v, [x for i in range(n) for x in (i, n + i)]).reshape(-1)
    levels = None
    if psi1.levels is not None and psi2.levels is not None:
        levels = tuple(a * d + b for a, b, d in zip(psi1.levels, psi2.levels, g2.dims))
    return LoopSpec(g, rep, ChainState(g, v), TDI(g, pieces), psi1.closure, levels,
                    name=f"({psi1.name} x {psi2.name})")


def reparametrize(psi: LoopSpec, knots: Sequence) -> LoopSpec:
    """Loop generated by j'(s) H(j(s)) for the piecewise-linear j through ``knots``.

    ``knots`` are (s, j) pairs with s strictly increasing from 0 to 1 and
    j(0) = 0, j(1) = 1; j need not be monotone.
    """
    knots = [(float(s), float(j)) for s, j in knots]
    if abs(knots[0][0]) > 1e-12 or abs(knots[-1][0] - 1) > 1e-12:
        raise LoopError("knots must start at s = 0 and end at s = 1")
    if abs(knots[0][1]) > 1e-12 or abs(knots[-1][1] - 1) > 1e-12:
        raise LoopError("reparametrization must fix the endpoints")
    if any(b[0] <= a[0] for a, b in zip(knots, knots[1:])):
        raise LoopError("knot times must increase")
    if any(not -1e-12 <= j <= 1 + 1e-12 for _, j in knots):
        raise LoopError("j must map into [0, 1]")
    segs = [(a[0], b[0], a[1], b[1]) for a, b in zip(knots, knots[1:])]
    return replace(psi, tdi=psi.tdi.time_map(segs), name=f"rep({psi.name})", meta={})


def dressing_generator(psi: LoopSpec, support: Sequence[int], seed: int = 0) -> np.ndarray:
    """Random symmetric Hermitian generator of unit norm on ``support``."""
    rng = np.random.default_rng(seed)
    g = psi.geometry
    d = g.dim_of(support)
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    G = Interaction(g, {tuple(support): (A + A.conj().T) / 2})
    G = symmetrize(G, psi.rep).terms[tuple(support)]
    return G / np.linalg.norm(G, 2)


def _conjugate(I: Interaction, V: np.ndarray, X: tuple) -> Interaction:
    g = I.geometry
    Xs = set(X)
    terms = {}
    for S, M in I.items():
        if not Xs.intersection(S):
            T, N = S, M
        else:
            T = g.hull(S + X)
            Vt = extend_matrix(g, V, X, T)
            N = Vt @ extend_matrix(g, M, S, T) @ Vt.conj().T
            N = 0.5 * (N + N.conj().T)
        terms[T] = terms[T] + N if T in terms else N
    return Interaction(g, terms, check=False)


def _conjugated_piece(p: Piece, geo: ChainGeometry, X: tuple, V, K=None,
                      max_step: float = 0.01) -> Piece:
    """The piece K(s) + V(s) H(s) V(s)^dagger with the exact flow V(t) U_H(t, t') V(t')^dagger.

    V(s) is a unitary on the sites X and K(s) the Hermitian generator of
    s -> V(s) on X (None when V is constant).
    """
    pos = geo.positions(X)
    Xs = set(X)
    req = PropagatorRequest(TDI(geo, [Piece(0.0, 1.0, interaction=Interaction(geo))]),
                            max_step=max_step)

    def func(s):
        H = _conjugate(p.at(s), V(s), X)
        if K is None:
            return H
        return Interaction(geo, {X: K(s)}, check=False) + H

    def act(M, v):
        return apply_matrix(M, pos, geo.dims, v) if v.ndim == 1 else \
            apply_matrix(M, pos, geo.dims, batch=v)

    def flow(ta, tb, v):
        v = act(V(ta).conj().T, v)
        v = step_piece(p, ta, tb, v, req)
        return act(V(tb), v)

    def restrict(pred, geo2):
        # a conjugated term is kept iff its grown support passes pred
        q = restrict_piece(p, lambda S: pred(geo.hull(S + X)) if Xs.intersection(S) else pred(S),
                           geo2)
        if K is None or pred(X):
            return _conjugated_piece(q, geo2, X, V, K, max_step)
        if q.is_constant and not any(Xs.intersection(S) for S in q.interaction.terms):
            return q
        # without its generator the conjugation has no closed-form flow
        return Piece(q.t0, q.t1, func=lambda s: _conjugate(q.at(s), V(s), X))

    return Piece(p.t0, p.t1, func=func, flow=flow, restrict=restrict)


def dress(psi: LoopSpec, strength: float, support: Sequence[int] | None = None,
          generator: np.ndarray | None = None, seed: int = 0, max_step: float = 0.01) -> LoopSpec:
    """Conjugate the loop by V(s) = exp(-i B(s) G), B(s) = strength (1 - cos 2 pi s) / 2.

    V(0) = V(1) = 1, so the basepoint and endpoint are unchanged.  The new
    generator is K(s) + V(s) H(s) V(s)^dagger with K(s) = B'(s) G; terms
    overlapping the support of G grow to the hull of the two supports.
    Pieces carry the exact flow V(t) U_H(t, t') V(t')^dagger.
    """
    g = psi.geometry
    if support is None:
        support = (-1, 0, 1) if g.contains(-1) and g.contains(1) else g.sites[:2]
    X = tuple(support)
    if not g.is_support(X):
        raise LoopError(f"invalid dressing support {X}")
    G = dressing_generator(psi, X, seed) if generator is None else np.asarray(generator, complex)
    ok, defect = is_invariant(G, psi.rep, g.positions(X), tol=1e-10)
    if not ok:
        raise LoopError(f"dressing generator is not symmetric (defect {defect:.2e})")
    ev, W = np.linalg.eigh(G)
    eps = float(strength)

    def B(s):
        return eps * (1 - np.cos(2 * np.pi * s)) / 2

    def V(s):
        return (W * np.exp(-1j * B(s) * ev)) @ W.conj().T

    def K(s):
        return eps * np.pi * np.sin(2 * np.pi * s) * G

    if np.linalg.norm(V(1.0) - np.eye(len(ev))) > 1e-10:
        raise LoopError("dressing path does not return to the identity")
    tdi = TDI(g, [_conjugated_piece(p, g, X, V, K, max_step) for p in psi.tdi.pieces])
    return replace(psi, tdi=tdi, name=f"dress({psi.name},{eps:g})",
                   meta={**psi.meta, "dress_support": list(X), "dress_strength": eps})


def rotate(psi: LoopSpec, generator: np.ndarray, support: Sequence[int],
           max_step: float = 0.01):
    """Move a loop by the fixed symmetric unitary V = exp(-i G) on ``support``.

    Returns (rotated loop, K) where K is the constant TDI G on the support,
    so the new basepoint is the old one evolved by K for unit time and the
    new TDI is V H(s) V^dagger.
    """
    g = psi.geometry
    X = tuple(support)
    G = np.asarray(generator, dtype=complex)
    ok, defect = is_invariant(G, psi.rep, g.positions(X), tol=1e-10)
    if not ok:
        raise LoopError(f"rotation generator is not symmetric (defect {defect:.2e})")
    ev, W = np.linalg.eigh(G)
    Vm = (W * np.exp(-1j * ev)) @ W.conj().T
    K = TDI.constant(Interaction(g, {X: G}))
    v = apply_matrix(Vm, g.positions(X), g.dims, psi.basepoint.vector)
    tdi = TDI(g, [_conjugated_piece(p, g, X, lambda s: Vm, None, max_step)
                  for p in psi.tdi.pieces])
    out = replace(psi, basepoint=ChainState(g, v), tdi=tdi, levels=None,
                  name=f"rot({psi.name})", meta={**psi.meta, "rotation_support": list(X)})
    return out, K


def central_window(geometry: ChainGeometry) -> tuple:
    n = geometry.n_sites
    q = n // 4
    return geometry.sites[q: n - q]


def verify_loop(psi: LoopSpec, integrator: str = "auto", max_step: float = 0.01,
                policy: ClosurePolicy | None = None) -> ClosureReport:
    policy = policy or psi.closure
    req = PropagatorRequest(psi.tdi, integrator=integrator, max_step=max_step)
    v0 = psi.basepoint.vector
    v1 = propagate(v0, req)
    fid = float(abs(np.vdot(v0, v1)))
    if policy.kind == "ring":
        return ClosureReport("ring", fid, None, None, fid >= 1 - policy.tol)
    W = policy.window or central_window(psi.geometry)
    td = trace_distance(reduced_density(v0, psi.geometry, W), reduced_density(v1, psi.geometry, W))
    return ClosureReport("bulk", fid, td, tuple(W), td <= policy.tol)
