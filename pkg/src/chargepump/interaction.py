"""Interactions, time-dependent interactions (TDIs) and their norms.

An interaction is a finite map from supports (runs of consecutive sites,
stored as tuples of site labels) to Hermitian matrices.  A TDI is a list of
pieces partitioning [0, 1]; a piece is either constant or a callable
``s -> Interaction``.  A piece may also carry an exact vector propagator
(``flow``) which the evolution module prefers over numerical integration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .chainspace import ChainGeometry, apply_matrix, extend_matrix

__all__ = [
    "StretchedExp",
    "TableDecay",
    "check_decay",
    "Interaction",
    "Piece",
    "TDI",
    "f_norm",
    "anchored_norm",
    "tdi_norm",
    "tdi_l1_norm",
    "truncate_left",
    "split_decomposition",
    "commutator_interaction",
    "weak_sum",
]


@dataclass(frozen=True)
class StretchedExp:
    """f(r) = C exp(-c r^beta)."""

    C: float = 1.0
    c: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.C <= 0 or self.c <= 0 or not 0 < self.beta <= 1:
            raise ValueError("need C > 0, c > 0 and 0 < beta <= 1")

    def __call__(self, r):
        return self.C * np.exp(-self.c * np.power(r, self.beta))

    def to_config(self) -> dict:
        return {"family": "stretched_exp", "C": self.C, "c": self.c, "beta": self.beta}


@dataclass(frozen=True)
class TableDecay:
    """Explicit values f(1), ..., f(n) followed by a stretched-exponential tail."""

    table: tuple
    tail: StretchedExp = StretchedExp()

    def __post_init__(self):
        t = tuple(float(x) for x in self.table)
        if any(x <= 0 for x in t) or any(b > a for a, b in zip(t, t[1:])):
            raise ValueError("table must be positive and non-increasing")
        if t and self.tail(len(t) + 1) > t[-1]:
            raise ValueError("tail must continue the table without increasing")
        object.__setattr__(self, "table", t)

    def __call__(self, r):
        def one(x):
            k = int(round(x))
            if abs(x - k) < 1e-12 and 1 <= k <= len(self.table):
                return self.table[k - 1]
            return float(self.tail(x))
        if np.ndim(r) == 0:
            return one(float(r))
        return np.array([one(float(x)) for x in np.ravel(r)]).reshape(np.shape(r))


def check_decay(f, r_max: int = 200, powers=(1, 2, 4, 8)) -> bool:
    """Positivity, monotonicity, and eventual decay of r^p f(r) on a grid."""
    r = np.arange(1, r_max + 1, dtype=float)
    v = np.asarray(f(r), dtype=float)
    if np.any(v <= 0) or np.any(np.diff(v) > 1e-15 * v[:-1]):
        return False
    for p in powers:
        w = r ** p * v
        # decreasing beyond the maximum, which must occur well inside the grid
        k = int(np.argmax(w))
        if k > r_max // 2 or np.any(np.diff(w[k:]) > 0):
            return False
    return True


def _is_hermitian(M, tol=1e-12):
    return np.linalg.norm(M - M.conj().T) <= tol * max(1.0, np.linalg.norm(M))


class Interaction:
    """Finite collection of Hermitian terms on a chain."""

    __slots__ = ("geometry", "terms", "_pos")

    def __init__(self, geometry: ChainGeometry, terms=None, check: bool = True):
        self.geometry = geometry
        out = {}
        for S, M in (terms.items() if isinstance(terms, dict) else (terms or ())):
            S = tuple(int(s) for s in S)
            M = np.asarray(M, dtype=complex)
            if check:
                if not S or not geometry.is_support(S):
                    raise ValueError(f"invalid support {S}")
                d = geometry.dim_of(S)
                if M.shape != (d, d):
                    raise ValueError(f"term on {S} has shape {M.shape}, expected {(d, d)}")
                if not _is_hermitian(M):
                    raise ValueError(f"term on {S} is not Hermitian")
            out[S] = out[S] + M if S in out else M
        self.terms = out
        self._pos = {S: geometry.positions(S) for S in out}

    def __repr__(self):
        return f"Interaction({len(self.terms)} terms on {self.geometry.n_sites} sites)"

    def __len__(self):
        return len(self.terms)

    def items(self):
        return self.terms.items()

    @property
    def supports(self) -> list:
        return list(self.terms)

    def _same(self, other):
        if other.geometry != self.geometry:
            raise ValueError("interactions live on different chains")

    def __add__(self, other: "Interaction") -> "Interaction":
        self._same(other)
        t = dict(self.terms)
        for S, M in other.terms.items():
            t[S] = t[S] + M if S in t else M
        return Interaction(self.geometry, t, check=False)

    def __neg__(self):
        return Interaction(self.geometry, {S: -M for S, M in self.terms.items()}, check=False)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c: float):
        c = float(c)
        return Interaction(self.geometry, {S: c * M for S, M in self.terms.items()}, check=False)

    __rmul__ = __mul__

    def filter(self, keep: Callable[[tuple], bool]) -> "Interaction":
        return Interaction(self.geometry, {S: M for S, M in self.terms.items() if keep(S)},
                           check=False)

    def pruned(self, tol: float = 0.0) -> "Interaction":
        return Interaction(self.geometry, {S: M for S, M in self.terms.items()
                                           if np.max(np.abs(M), initial=0.0) > tol}, check=False)

    def max_term_norm(self) -> float:
        return max((np.linalg.norm(M, 2) for M in self.terms.values()), default=0.0)

    def is_zero(self, tol: float = 1e-14) -> bool:
        return all(np.max(np.abs(M)) <= tol for M in self.terms.values())

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros_like(v, dtype=complex)
        dims = self.geometry.dims
        for S, M in self.terms.items():
            out += apply_matrix(M, self._pos[S], dims, v)
        return out

    def full(self) -> np.ndarray:
        """Dense matrix of the summed Hamiltonian on the whole chain."""
        g = self.geometry
        D = g.total_dim
        out = np.zeros((D, D), dtype=complex)
        for S, M in self.terms.items():
            out += extend_matrix(g, M, S, g.sites)
        return out

    def to_json(self) -> list:
        out = []
        for S, M in self.terms.items():
            out.append({"support": [S[0], S[-1]],
                        "matrix": np.stack([M.real, M.imag], axis=-1).tolist()})
        return out

    @classmethod
    def from_json(cls, geometry: ChainGeometry, data: list) -> "Interaction":
        terms = {}
        for t in data:
            S = geometry.interval_support(*t["support"])
            a = np.asarray(t["matrix"], dtype=float)
            terms[S] = a[..., 0] + 1j * a[..., 1]
        return cls(geometry, terms)


@dataclass(frozen=True, eq=False)
class Piece:
    t0: float
    t1: float
    interaction: Interaction | None = None
    func: Callable[[float], Interaction] | None = None
    flow: Callable[[float, float, np.ndarray], np.ndarray] | None = None
    # restrict(pred, geometry) -> Piece keeping the terms whose support passes
    # pred, with an exact flow where the piece knows one
    restrict: Callable | None = None

    def __post_init__(self):
        if (self.interaction is None) == (self.func is None):
            raise ValueError("a piece is either constant or a function of time")
        if not self.t1 > self.t0:
            raise ValueError("piece must have positive length")

    @property
    def is_constant(self) -> bool:
        return self.interaction is not None

    def at(self, s: float) -> Interaction:
        return self.interaction if self.interaction is not None else self.func(s)


class TDI:
    """Time-dependent interaction on [0, 1] given as a list of pieces."""

    def __init__(self, geometry: ChainGeometry, pieces: Sequence[Piece]):
        pieces = tuple(pieces)
        if not pieces:
            raise ValueError("a TDI needs at least one piece")
        if abs(pieces[0].t0) > 1e-12 or abs(pieces[-1].t1 - 1.0) > 1e-12:
            raise ValueError("pieces must cover [0, 1]")
        for a, b in zip(pieces, pieces[1:]):
            if abs(a.t1 - b.t0) > 1e-12:
                raise ValueError("pieces must be contiguous")
        self.geometry = geometry
        self.pieces = pieces

    def __repr__(self):
        kinds = "".join("c" if p.is_constant else "s" for p in self.pieces)
        return f"TDI({len(self.pieces)} pieces [{kinds}] on {self.geometry.n_sites} sites)"

    # constructors
    @classmethod
    def constant(cls, H: Interaction) -> "TDI":
        return cls(H.geometry, [Piece(0.0, 1.0, interaction=H)])

    @classmethod
    def zero(cls, geometry: ChainGeometry) -> "TDI":
        return cls.constant(Interaction(geometry))

    @classmethod
    def piecewise(cls, geometry, schedule: Iterable) -> "TDI":
        """From (t0, t1, Interaction) triples."""
        return cls(geometry, [Piece(float(a), float(b), interaction=H) for a, b, H in schedule])

    @classmethod
    def smooth(cls, geometry, func: Callable[[float], Interaction], t0=0.0, t1=1.0,
               flow=None) -> "TDI":
        return cls(geometry, [Piece(t0, t1, func=func, flow=flow)])

    @classmethod
    def ramp(cls, knots: Sequence) -> "TDI":
        """Linear interpolation between (t_k, Interaction_k) knots."""
        knots = sorted(knots, key=lambda k: k[0])
        geometry = knots[0][1].geometry
        pieces = []
        for (ta, Ha), (tb, Hb) in zip(knots, knots[1:]):
            def f(s, ta=ta, tb=tb, Ha=Ha, Hb=Hb):
                w = (s - ta) / (tb - ta)
                return Ha * (1 - w) + Hb * w
            pieces.append(Piece(ta, tb, func=f))
        return cls(geometry, pieces)

    # queries
    @property
    def breakpoints(self) -> list:
        return [p.t0 for p in self.pieces] + [self.pieces[-1].t1]

    @property
    def is_piecewise_constant(self) -> bool:
        return all(p.is_constant for p in self.pieces)

    def piece_at(self, s: float) -> Piece:
        for p in self.pieces:
            if s < p.t1:
                return p
        return self.pieces[-1]

    def at(self, s: float) -> Interaction:
        return self.piece_at(s).at(s)

    # transformations
    def map_terms(self, fn: Callable[[Interaction], Interaction]) -> "TDI":
        """Apply an interaction-level map to every piece (exact flows dropped)."""
        new = []
        for p in self.pieces:
            if p.is_constant:
                new.append(Piece(p.t0, p.t1, interaction=fn(p.interaction)))
            else:
                new.append(Piece(p.t0, p.t1, func=lambda s, f=p.func: fn(f(s))))
        return TDI(self.geometry, new)

    def restrict_terms(self, pred: Callable[[tuple], bool],
                       geometry: ChainGeometry | None = None) -> "TDI":
        """Keep the terms whose support satisfies ``pred``, optionally on a new geometry.

        Unlike map_terms, pieces that know how to restrict themselves keep
        an exact flow.
        """
        geometry = geometry or self.geometry
        return TDI(geometry, [restrict_piece(p, pred, geometry) for p in self.pieces])

    def scaled(self, c: float) -> "TDI":
        return self.map_terms(lambda H: H * c)

    def __neg__(self):
        return self.scaled(-1.0)

    def __add__(self, other: "TDI") -> "TDI":
        if other.geometry != self.geometry:
            raise ValueError("TDIs live on different chains")
        knots = sorted(set(self.breakpoints) | set(other.breakpoints))
        knots = _dedupe(knots)
        new = []
        for a, b in zip(knots, knots[1:]):
            m = 0.5 * (a + b)
            p, q = self.piece_at(m), other.piece_at(m)
            if p.is_constant and q.is_constant:
                new.append(Piece(a, b, interaction=p.interaction + q.interaction))
            else:
                new.append(Piece(a, b, func=lambda s, p=p, q=q: p.at(s) + q.at(s)))
        return TDI(self.geometry, new)

    def __sub__(self, other):
        return self + (-other)

    def sampled(self, n_per_unit: int = 256) -> "TDI":
        """Piecewise-constant midpoint sampling of the smooth pieces."""
        new = []
        for p in self.pieces:
            if p.is_constant:
                new.append(p)
                continue
            n = max(1, int(math.ceil((p.t1 - p.t0) * n_per_unit - 1e-9)))
            ts = np.linspace(p.t0, p.t1, n + 1)
            for a, b in zip(ts, ts[1:]):
                new.append(Piece(float(a), float(b), interaction=p.func(0.5 * (a + b))))
        return TDI(self.geometry, new)

    def time_map(self, segments: Sequence) -> "TDI":
        """The TDI j'(s) H(j(s)) for a piecewise-linear j.

        ``segments`` are (a, b, ja, jb) with [a, b] partitioning [0, 1] and j
        linear from ja to jb on [a, b].
        """
        new = []
        for a, b, ja, jb in segments:
            m = (jb - ja) / (b - a)
            if abs(m) < 1e-15:
                new.append(Piece(a, b, interaction=Interaction(self.geometry),
                                 flow=lambda ta, tb, v: v))
                continue
            lo, hi = min(ja, jb), max(ja, jb)
            parts = []
            for p in self.pieces:
                q0, q1 = max(p.t0, lo), min(p.t1, hi)
                if q1 - q0 <= 1e-14:
                    continue
                s0, s1 = a + (q0 - ja) / m, a + (q1 - ja) / m
                s0, s1 = min(s0, s1), max(s0, s1)
                parts.append((s0, s1, p))
            parts.sort(key=lambda x: x[0])
            # snap the part boundaries so the segment is partitioned exactly
            edges = [a] + [q[1] for q in parts[:-1]] + [b]
            jf = (lambda s, ja=ja, a=a, m=m: ja + m * (s - a))
            for k, (_, _, p) in enumerate(parts):
                s0, s1 = edges[k], edges[k + 1]
                new.append(_remap_piece(p, s0, s1, jf, m))
        return TDI(self.geometry, new)

    def to_json(self, n_per_unit: int = 256) -> dict:
        t = self if self.is_piecewise_constant else self.sampled(n_per_unit)
        return {"pieces": [{"t0": p.t0, "t1": p.t1, "interaction": p.interaction.to_json()}
                           for p in t.pieces]}

    @classmethod
    def from_json(cls, geometry: ChainGeometry, data: dict) -> "TDI":
        return cls.piecewise(geometry, [(p["t0"], p["t1"], Interaction.from_json(geometry, p["interaction"]))
                                        for p in data["pieces"]])


def _remap_piece(p: Piece, s0: float, s1: float, jf, m: float) -> Piece:
    # p pulled back along the affine time map jf with slope m, restricted to [s0, s1]
    flow = None
    if p.flow is not None:
        flow = (lambda ta, tb, v: p.flow(jf(ta), jf(tb), v))
    restrict = None
    if p.restrict is not None:
        restrict = (lambda pred, geo: _remap_piece(p.restrict(pred, geo), s0, s1, jf, m))
    if p.is_constant:
        return Piece(s0, s1, interaction=p.interaction * m, flow=flow, restrict=restrict)
    return Piece(s0, s1, func=(lambda s: p.func(jf(s)) * m), flow=flow, restrict=restrict)


def restrict_piece(p: Piece, pred: Callable[[tuple], bool], geometry: ChainGeometry) -> Piece:
    if p.restrict is not None:
        return p.restrict(pred, geometry)

    def fn(I: Interaction) -> Interaction:
        return Interaction(geometry, {S: M for S, M in I.items() if pred(S)}, check=False)
    if p.is_constant:
        return Piece(p.t0, p.t1, interaction=fn(p.interaction))
    return Piece(p.t0, p.t1, func=lambda s, f=p.func: fn(f(s)))


def _dedupe(knots, tol=1e-13):
    out = [knots[0]]
    for k in knots[1:]:
        if k - out[-1] > tol:
            out.append(k)
    out[-1] = knots[-1]
    return out


# norms

def f_norm(H: Interaction, f) -> float:
    g = H.geometry
    load = np.zeros(g.n_sites)
    for S, M in H.terms.items():
        w = np.linalg.norm(M, 2) / f(1 + g.diam(S))
        for s in S:
            load[g.position(s)] += w
    return float(load.max()) if H.terms else 0.0


def anchored_norm(H: Interaction, X: Iterable[int], f) -> float:
    X = set(X)
    if any(not X.intersection(S) for S in H.terms):
        return math.inf
    return f_norm(H, f)


def _piece_nodes(p: Piece, n: int = 33):
    return np.linspace(p.t0, p.t1, n)


def tdi_norm(H: TDI, f, samples: int = 33) -> float:
    """sup over time of f_norm (exact on constant pieces, sampled otherwise)."""
    best = 0.0
    for p in H.pieces:
        if p.is_constant:
            best = max(best, f_norm(p.interaction, f))
        else:
            best = max(best, max(f_norm(p.func(s), f) for s in _piece_nodes(p, samples)))
    return best


def tdi_l1_norm(H: TDI, f, X=None, order: int = 16) -> float:
    """Time integral of f_norm (or of the anchored norm when X is given)."""
    norm = (lambda I: f_norm(I, f)) if X is None else (lambda I: anchored_norm(I, X, f))
    x, w = np.polynomial.legendre.leggauss(order)
    tot = 0.0
    for p in H.pieces:
        L = p.t1 - p.t0
        if p.is_constant:
            tot += L * norm(p.interaction)
        else:
            ts = p.t0 + 0.5 * L * (x + 1)
            tot += 0.5 * L * sum(wk * norm(p.func(t)) for wk, t in zip(w, ts))
    return float(tot)


# decompositions

def truncate_left(H: TDI, cut: int = 0) -> TDI:
    """Keep the terms supported in {<= cut}."""
    return H.restrict_terms(lambda S: max(S) <= cut)


def split_decomposition(H: TDI, j: int = 0):
    """(H_{<=j}, H_{>j}, B_j): left part, right part, crossing terms."""
    left = H.restrict_terms(lambda S: max(S) <= j)
    right = H.restrict_terms(lambda S: min(S) > j)
    cross = H.restrict_terms(lambda S: min(S) <= j < max(S))
    return left, right, cross


def commutator_interaction(H1: Interaction, H2: Interaction) -> Interaction:
    """Termwise commutator with supports recorded as hulls of the unions.

    The returned terms are anti-Hermitian; multiply by 1j for a Hermitian
    interaction.
    """
    H1._same(H2)
    g = H1.geometry
    out = {}
    for S1, A in H1.terms.items():
        s1 = set(S1)
        for S2, B in H2.terms.items():
            if not s1.intersection(S2):
                continue
            T = g.hull(S1 + S2)
            At, Bt = extend_matrix(g, A, S1, T), extend_matrix(g, B, S2, T)
            C = At @ Bt - Bt @ At
            out[T] = out[T] + C if T in out else C
    return Interaction(g, out, check=False)


def weak_sum(interactions: Sequence[Interaction]) -> Interaction:
    interactions = list(interactions)
    if not interactions:
        raise ValueError("empty sum")
    out = interactions[0]
    for H in interactions[1:]:
        out = out + H
    return out
