"""Splitting loops at edges, closing quasi-loops blockwise, contracting product loops.

A loop of index zero can be cut at an edge (j, j+1): drop the terms that
cross the edge, and undo what the two halves did on their own by parallel
transport inside each half.  The result is a loop whose evolution factorizes
at the edge for all times.  Cutting at every R-th edge at once only works up
to tails, which multi_split measures; quasi-loops are then closed blockwise
and product loops contracted block by block.

Transports are built on the smallest window next to the cut outside of
which a half already agrees with the basepoint, so the corrections stay
local when the loop is.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .chainspace import ChainGeometry, ChainState, apply_matrix, cut_entropy, reduced_density, \
    trace_distance
from .evolution import DenseFlow, PropagatorRequest, _expm_herm_dense, conditional_expectation, \
    concatenate_tdi, propagate, reverse_tdi, step_piece, _embed_positions
from .index import open_chain, pump_index, windowed_relative_charge
from .interaction import TDI, Interaction, Piece, StretchedExp, f_norm
from .pumps import LoopError, LoopSpec, _conjugate, central_window
from .symmetry import OnsiteRep
from .zerodim import ChargeError, ZeroDimLoop, contract_loop, kato_transport_symmetric

__all__ = [
    "SplitError",
    "SplitReport",
    "factorize",
    "edge_split",
    "split_single_edge",
    "MultiSplitReport",
    "multi_split",
    "close_quasiloop",
    "block_loops",
    "contract_product_loop",
    "associated_loop",
]


class SplitError(ValueError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


# --- helpers ---------------------------------------------------------------

def factorize(vec, geometry: ChainGeometry, blocks: Sequence[Sequence[int]], tol: float = 1e-9) -> list:
    """Block vectors of a state that is a product over consecutive blocks.

    Raises ValueError if the Schmidt weight beyond the first exceeds tol at
    any block boundary.
    """
    T = np.asarray(vec.vector if isinstance(vec, ChainState) else vec, dtype=complex)
    out = []
    for B in blocks[:-1]:
        d = geometry.dim_of(B)
        u, s, vh = np.linalg.svd(T.reshape(d, -1), full_matrices=False)
        tail = float(np.sum(s[1:] ** 2))
        if tail > tol:
            raise ValueError(f"state is entangled across the block boundary after {B[-1]} "
                             f"(weight {tail:.2e})")
        out.append(u[:, 0])
        T = s[0] * vh[0]
    out.append(T / np.linalg.norm(T))
    return out


def _outside_overlap(chi, site_vecs, dims, keep):
    """Contract chi with the basepoint site vectors outside the positions ``keep``."""
    T = np.asarray(chi).reshape(dims)
    for p in sorted(set(range(len(dims))) - set(keep), reverse=True):
        T = np.tensordot(T, site_vecs[p].conj(), axes=([p], [0]))
    return T.reshape(-1)


@dataclass(frozen=True, eq=False)
class _Transport:
    """Parallel transport of a basepoint window to a target window state."""

    sites: tuple
    path: object

    def unitary(self, s: float, u: float = 0.0) -> np.ndarray:
        return self.path.propagator(s, u)

    def generator(self, s: float) -> np.ndarray:
        return self.path.generator(s)

    def sup_norm(self, K: int = 1024) -> float:
        return self.path.sup_generator_norm(K) if self.path.a < 1.0 else 0.0

    @property
    def bound(self) -> float:
        return 8 * self.path.distance


def _local_transport(chi, phi_sites, seg: tuple, g_seg: ChainGeometry, rep_seg: OnsiteRep,
                     side: str, tol: float) -> _Transport:
    """Transport phi to chi on the smallest window next to the cut carrying the difference."""
    n = len(seg)
    dims = g_seg.dims
    for r in range(1, n + 1):
        keep = list(range(n - r, n)) if side == "left" else list(range(r))
        x = _outside_overlap(chi, phi_sites, dims, keep)
        if np.vdot(x, x).real >= 1 - tol:
            break
    W = tuple(seg[k] for k in keep)
    x = x / np.linalg.norm(x)
    start = phi_sites[keep[0]]
    for k in keep[1:]:
        start = np.kron(start, phi_sites[k])
    lrep = rep_seg.restrict(keep)
    return _Transport(W, kato_transport_symmetric(x, start, lrep))


# --- single edge -------------------------------------------------------------

@dataclass
class SplitReport:
    edge: int
    times: list = field(default_factory=list)
    entropy_before: list = field(default_factory=list)
    entropy_after: list = field(default_factory=list)
    closure: dict = field(default_factory=dict)
    certificate: dict = field(default_factory=dict)
    generator_norms: dict = field(default_factory=dict)

    @property
    def factorized(self) -> bool:
        return bool(self.entropy_after) and max(self.entropy_after) <= 1e-6

    @property
    def passed(self) -> bool:
        return self.factorized and bool(self.closure.get("passed"))

    def to_json(self) -> dict:
        return {"edge": self.edge, "times": self.times, "entropy_before": self.entropy_before,
                "entropy_after": self.entropy_after, "closure": self.closure,
                "certificate": self.certificate, "generator_norms": self.generator_norms,
                "passed": self.passed}


def _crosses(S, j):
    return min(S) <= j < max(S)


class _Half:
    """One side of the cut as a chain of its own.

    A one-site side gets a dimension-1 ghost site on its outer end, so that
    it is still a chain; the ghost never enters a transport window.
    """

    def __init__(self, lo: LoopSpec, sites: tuple, vecs: list, side: str, pred, max_step: float):
        g, rep, H = lo.geometry, lo.rep, lo.tdi
        p0, p1 = g.position(sites[0]), g.position(sites[-1])
        dims, charges, vecs = list(g.dims[p0:p1 + 1]), list(rep.charges[p0:p1 + 1]), list(vecs)
        self.sites, self.side, self.ghost = sites, side, None
        if len(sites) == 1:
            one = np.ones(1, dtype=complex)
            if side == "left":
                self.ghost = sites[0] - 1
                seg, dims, charges, vecs = (self.ghost,) + sites, [1] + dims, \
                    [(rep.group.zero(),)] + charges, [one] + vecs
            else:
                self.ghost = sites[-1] + 1
                seg, dims, charges, vecs = sites + (self.ghost,), dims + [1], \
                    charges + [(rep.group.zero(),)], vecs + [one]
        else:
            seg = sites
        self.seg, self.vecs = seg, vecs
        self.geometry = ChainGeometry.interval(seg[0], seg[-1], dims)
        self.rep = OnsiteRep(rep.group, tuple(charges))
        phi = vecs[0]
        for v in vecs[1:]:
            phi = np.kron(phi, v)
        self.phi = phi
        Hs = H.restrict_terms(pred, self.geometry)
        self.psi = propagate(phi, PropagatorRequest(Hs, max_step=max_step))

    def charge(self, j: int):
        w = len(self.sites) // 2
        win = tuple(range(j - w, j + 1)) if self.side == "left" else tuple(range(j + 1, j + 2 + w))
        h, res, _ = windowed_relative_charge(self.psi, self.phi, self.geometry, self.rep, win)
        return h, res, win

    def transport(self, tol: float) -> "_Transport":
        tr = _local_transport(self.psi, self.vecs, self.seg, self.geometry, self.rep,
                              self.side, tol)
        if self.ghost in tr.sites:
            tr = _Transport(tuple(s for s in tr.sites if s != self.ghost), tr.path)
        return tr


class EdgeSplit:
    """The data of cutting an open-chain loop at the edge (j, j+1)."""

    def __init__(self, loop: LoopSpec, j: int = 0, tol: float = 1e-9, max_step: float = 0.01):
        lo = open_chain(loop)
        g = lo.geometry
        if not g.first <= j < g.last:
            raise ValueError("split edge must be interior")
        self.loop, self.j, self.max_step = lo, j, max_step
        self.left = tuple(range(g.first, j + 1))
        self.right = tuple(range(j + 1, g.last + 1))
        try:
            site_vecs = factorize(lo.basepoint, g, [(s,) for s in g.sites], tol)
        except ValueError as exc:
            raise SplitError(f"basepoint is not a product state: {exc}")
        H = lo.tdi
        nL = len(self.left)
        halves = [_Half(lo, self.left, site_vecs[:nL], "left", lambda S: max(S) <= j, max_step),
                  _Half(lo, self.right, site_vecs[nL:], "right", lambda S: min(S) > j, max_step)]
        hL, resL, winL = halves[0].charge(j)
        hR, resR, winR = halves[1].charge(j)
        self.certificate = {"left": hL.to_list(), "right": hR.to_list(),
                            "left_window": list(winL), "right_window": list(winR),
                            "residuals": [float(max(resL)), float(max(resR))],
                            "zero": bool(hL.is_zero() and hR.is_zero())}
        self.hL, self.hR = hL, hR
        self.H_split = H.restrict_terms(lambda S: not _crosses(S, j))
        self.B = H.restrict_terms(lambda S: _crosses(S, j))
        self.transports = []
        if self.certificate["zero"]:
            try:
                self.transports = [hf.transport(tol) for hf in halves]
            except ChargeError as exc:
                raise SplitError(f"transport precondition failed: {exc}")

    # K(s) = U_KL(s) (x) U_KR(s), acting on the windows next to the cut
    def _apply_K(self, s, v, dagger=False):
        g = self.loop.geometry
        for tr in self.transports:
            U = tr.unitary(s)
            if dagger:
                U = U.conj().T
            pos = g.positions(tr.sites)
            v = apply_matrix(U, pos, g.dims, v) if v.ndim == 1 else apply_matrix(U, pos, g.dims, batch=v)
        return v

    def _generator(self, p: Piece, s: float) -> Interaction:
        g = self.loop.geometry
        I = p.at(s)
        terms = Interaction(g)
        for tr in self.transports:
            I = _conjugate(I, tr.unitary(s).conj().T, tr.sites)
            terms = terms + Interaction(g, {tr.sites: -tr.generator(s)}, check=False)
        return terms + I

    def split_tdi(self) -> TDI:
        """Generator -E_K(s) + K(s)^dagger (H - B)(s) K(s): evolution K(s)^dagger U_{H-B}(s)."""
        g = self.loop.geometry
        req = PropagatorRequest(self.H_split, max_step=self.max_step)

        def make(p):
            def flow(ta, tb, v):
                v = self._apply_K(ta, v)
                v = step_piece(p, ta, tb, v, req)
                return self._apply_K(tb, v, dagger=True)
            return Piece(p.t0, p.t1, func=lambda s: self._generator(p, s), flow=flow)
        return TDI(g, [make(p) for p in self.H_split.pieces])

    def correction(self, s: float) -> Interaction:
        """E^{(j)}(s): split generator minus H(s), as local terms."""
        p = self.loop.tdi.piece_at(s)
        q = self.H_split.piece_at(s)
        return self._generator(q, s) - p.at(s)


def edge_split(loop: LoopSpec, j: int = 0, **kw) -> EdgeSplit:
    return EdgeSplit(loop, j, **kw)


def _states_at(tdi: TDI, v0, times, max_step):
    out, v, t = [], np.asarray(v0, dtype=complex), 0.0
    for s in times:
        if s > t:
            v = propagate(v, PropagatorRequest(tdi, u=t, s=s, max_step=max_step))
            t = s
        out.append(v)
    return out


def split_single_edge(loop: LoopSpec, j: int = 0, n_times: int = 16, tol: float = 1e-9,
                      max_step: float = 0.01):
    """Cut a loop at the edge (j, j+1).

    Returns (split loop, SplitReport).  Raises SplitError when the windowed
    charges of the two halves are not zero, which happens exactly when the
    loop pumps charge across the edge.
    """
    es = EdgeSplit(loop, j, tol=tol, max_step=max_step)
    lo = es.loop
    g = lo.geometry
    report = SplitReport(j, certificate=es.certificate)
    if not es.certificate["zero"]:
        raise SplitError(f"halves carry charges {es.hL} (left) and {es.hR} (right); "
                         "the loop pumps charge across the edge", report)
    split = replace(lo, tdi=es.split_tdi(), name=f"split({lo.name},{j})")
    times = [float(t) for t in np.linspace(0.0, 1.0, n_times)]
    report.times = times
    v0 = lo.basepoint.vector
    report.entropy_before = [cut_entropy(v, g, j) for v in _states_at(lo.tdi, v0, times, max_step)]
    after = _states_at(split.tdi, v0, times, max_step)
    report.entropy_after = [cut_entropy(v, g, j) for v in after]
    fid = float(abs(np.vdot(v0, after[-1])))
    W = central_window(g)
    td = trace_distance(reduced_density(v0, g, W), reduced_density(after[-1], g, W))
    report.closure = {"fidelity": fid, "trace_distance": td, "window": list(W),
                      "passed": bool(td <= 1e-6 and 1 - fid <= 1e-6)}
    norms = {}
    for side, tr in zip(("left", "right"), es.transports):
        norms[side] = {"window": list(tr.sites), "sup": tr.sup_norm(), "bound": tr.bound}
    crossing = 0.0
    for p in es.B.pieces:
        for s in ([p.t0] if p.is_constant else np.linspace(p.t0, p.t1, 17)):
            I = p.at(s)
            crossing = max(crossing, sum(np.linalg.norm(M, 2) for M in I.terms.values()))
    norms["crossing"] = float(crossing)
    report.generator_norms = norms
    return split, report


# --- many edges ----------------------------------------------------------------

@dataclass
class MultiSplitReport:
    R: int
    edges: list
    blocks: list
    times: list
    tail_F: float                 # sup_s ||F~ - F||_f
    tail_F_terms: float           # sup_s of the largest discarded term norm
    block_defects: list           # ||(phi o alpha_F(1) - phi)_{I_n}|| per block
    J_blocks: list | None = None
    tail_Z: float | None = None   # sup_s ||Z~ - Z|| (operator norm)
    Z_defects: list | None = None
    W_distance: float | None = None
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in
                ("R", "edges", "blocks", "times", "tail_F", "tail_F_terms", "block_defects",
                 "J_blocks", "tail_Z", "Z_defects", "W_distance", "notes")}


def _blocks(g: ChainGeometry, R: int, offset: int) -> list:
    """Intervals [R n + 1 + offset, R (n + 1) + offset] clipped to the chain."""
    out = []
    n = math.floor((g.first - 1 - offset) / R)
    while R * n + 1 + offset <= g.last:
        lo, hi = max(g.first, R * n + 1 + offset), min(g.last, R * (n + 1) + offset)
        if lo <= hi:
            out.append(tuple(range(lo, hi + 1)))
        n += 1
    return out


def _block_geometry(g: ChainGeometry, B) -> ChainGeometry:
    """Chain on the sites of B; a single site gets a dimension-1 ghost to its right."""
    dims = g.local_dims(B)
    if len(B) == 1:
        return ChainGeometry((B[0], B[0] + 1), (dims[0], 1))
    return ChainGeometry.interval(B[0], B[-1], dims)


def _inside(S, blocks) -> bool:
    return any(S[0] >= B[0] and S[-1] <= B[-1] for B in blocks)


def _pure_distance(v, w) -> float:
    return math.sqrt(max(0.0, 1 - abs(np.vdot(v, w)) ** 2))


def multi_split(loop: LoopSpec, R: int, n_times: int = 9, decay=None, tol: float = 1e-9,
                max_step: float = 0.01, dense_limit: int = 1024,
                z_step: float = 0.02) -> MultiSplitReport:
    """Cut a loop at every edge (R n, R n + 1) at once.

    F~ = H + sum_n E^{(Rn)} is assembled from single-edge corrections; F keeps
    its terms inside the blocks I_n = [R n + 1, R (n + 1)].  The tail F~ - F
    and the quasi-loop defects of F are measured.  At dimension up to
    ``dense_limit`` the second stage is also run: Z~ generates U_H U_F^dagger,
    Z is its part inside the blocks J_n, and W = Z~ Z^{-1} is compared with
    the identity.
    """
    if R < 2 or R % 2:
        raise ValueError("block size R must be even and at least 2")
    lo = open_chain(loop)
    g = lo.geometry
    decay = decay or StretchedExp()
    edges = [R * n for n in range(math.floor(g.first / R), math.floor(g.last / R) + 1)
             if g.first <= R * n < g.last]
    if not edges:
        raise ValueError("no block edge inside the chain")
    splits = []
    for j in edges:
        es = EdgeSplit(lo, j, tol=tol, max_step=max_step)
        if not es.certificate["zero"]:
            raise SplitError(f"index obstruction at edge ({j}, {j + 1}): "
                             f"halves carry {es.hL} and {es.hR}")
        splits.append(es)
    cuts = [g.first - 1, *edges, g.last]
    I_blocks = [tuple(range(a + 1, b + 1)) for a, b in zip(cuts, cuts[1:])]
    H = lo.tdi

    def F_tilde(s):
        I = H.at(s)
        for es in splits:
            I = I + es.correction(s)
        return I

    def F_func(s):
        return F_tilde(s).filter(lambda S: _inside(S, I_blocks))
    # F follows the breakpoints of H; the transports are smooth on [0, 1]
    knots = sorted({0.0, 1.0, *H.breakpoints})
    F = TDI(g, [Piece(a, b, func=F_func) for a, b in zip(knots, knots[1:])])
    times = [float(t) for t in np.linspace(0.0, 1.0, n_times)]
    tail, tail_terms = 0.0, 0.0
    for s in times:
        Ft = F_tilde(s)
        D = Ft.filter(lambda S: not _inside(S, I_blocks))
        tail = max(tail, f_norm(D, decay))
        tail_terms = max(tail_terms, D.max_term_norm())
    # F is split over the blocks: evolve each block on its own
    site_vecs = factorize(lo.basepoint, g, [(s,) for s in g.sites], tol)
    defects, end_blocks = [], []
    for B in I_blocks:
        gB = _block_geometry(g, B)
        phiB = site_vecs[g.position(B[0])]
        for s in B[1:]:
            phiB = np.kron(phiB, site_vecs[g.position(s)])
        FB = F.restrict_terms(lambda S, B=B: S[0] >= B[0] and S[-1] <= B[-1], gB)
        vB = propagate(phiB, PropagatorRequest(FB, max_step=max_step))
        defects.append(_pure_distance(phiB, vB))
        end_blocks.append(vB)
    rep = MultiSplitReport(R, edges, [list(B) for B in I_blocks], times, tail, tail_terms, defects)
    if g.total_dim > dense_limit:
        rep.notes.append(f"second stage skipped: dimension {g.total_dim} above {dense_limit}")
        return rep
    _second_stage(rep, lo, F, I_blocks, R, max_step, z_step)
    return rep


def _second_stage(rep: MultiSplitReport, lo: LoopSpec, F: TDI, I_blocks, R: int,
                  max_step: float, z_step: float):
    g = lo.geometry
    dims = g.dims
    # J_n = [R(n - 1/2) - 1, R(n + 1/2)], i.e. blocks shifted by -R/2 and grown by one site
    J = []
    for B in _blocks(g, R, -R // 2):
        lo_site = max(g.first, B[0] - 1)
        J.append(tuple(range(lo_site, B[-1] + 1)))
    UH = DenseFlow(lo.tdi, max_step=max_step, limit=g.total_dim)
    # U_F is a product over the blocks I_n
    UFB = [DenseFlow(F.restrict_terms(lambda S, B=B: S[0] >= B[0] and S[-1] <= B[-1],
                                      _block_geometry(g, B)), max_step=max_step)
           for B in I_blocks]

    def UF(s):
        U = UFB[0](s)
        for f in UFB[1:]:
            U = np.kron(U, f(s))
        return U

    Jpos = [[g.position(s) for s in Jn] for Jn in J]
    overlaps = [sorted(set(a) & set(b)) for a, b in zip(Jpos, Jpos[1:])]

    def tau(A, keep):
        return _embed_positions(conditional_expectation(A, dims, keep), dims, keep)

    def Zt(s):
        Uz = UH(s) @ UF(s).conj().T
        return lo.tdi.at(s).full() - Uz @ F.at(s).full() @ Uz.conj().T

    def Z_of(A):
        out = sum(tau(A, k) for k in Jpos)
        for o in overlaps:
            out = out - tau(A, o)
        return 0.5 * (out + out.conj().T)

    tail = 0.0
    for s in rep.times:
        A = Zt(s)
        tail = max(tail, float(np.linalg.norm(A - Z_of(A), 2)))
    # U_Z(1) by fourth-order commutator-free steps on the dense generator
    c1, c2 = 0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6
    a1, a2 = (3 - 2 * math.sqrt(3)) / 12, (3 + 2 * math.sqrt(3)) / 12
    knots = sorted({0.0, 1.0, *lo.tdi.breakpoints, *F.breakpoints})
    UZ = np.eye(g.total_dim, dtype=complex)
    for ta, tb in zip(knots, knots[1:]):
        n = max(1, int(math.ceil((tb - ta) / z_step)))
        h = (tb - ta) / n
        for k in range(n):
            t = ta + k * h
            Z1, Z2 = Z_of(Zt(t + c1 * h)), Z_of(Zt(t + c2 * h))
            UZ = _expm_herm_dense(a2 * Z1 + a1 * Z2, h) @ UZ
            UZ = _expm_herm_dense(a1 * Z1 + a2 * Z2, h) @ UZ
    UZt = UH(1.0) @ UF(1.0).conj().T
    UW = UZ.conj().T @ UZt
    tr = np.trace(UW)
    c = tr / abs(tr) if abs(tr) > 1e-300 else 1.0
    phi = lo.basepoint.vector
    end = UZ @ phi
    rep.J_blocks = [list(Jn) for Jn in J]
    rep.tail_Z = tail
    rep.Z_defects = [0.5 * trace_distance(reduced_density(phi, g, Jn), reduced_density(end, g, Jn))
                     for Jn in J]
    rep.W_distance = float(np.linalg.norm(UW - c * np.eye(len(UW)), 2))


# --- quasi-loops and product loops ------------------------------------------

@dataclass
class QuasiLoopClosure:
    loop: LoopSpec
    blocks: list
    norms: list       # sup_s ||E_n(s)||
    bounds: list      # 8 ||(endpoint - phi)_{I_n}||
    fidelity: float

    @property
    def within_bounds(self) -> bool:
        return all(n <= b * 1.1 + 1e-12 for n, b in zip(self.norms, self.bounds))


def _block_transport_tdi(g: ChainGeometry, transports) -> TDI:
    def func(s):
        return Interaction(g, {tr.sites: tr.generator(s) for tr in transports
                               if tr.path.a < 1.0}, check=False)

    def flow(ta, tb, v):
        for tr in transports:
            pos = g.positions(tr.sites)
            U = tr.unitary(tb, ta)
            v = apply_matrix(U, pos, g.dims, v) if v.ndim == 1 else apply_matrix(U, pos, g.dims, batch=v)
        return v
    return TDI(g, [Piece(0.0, 1.0, func=func, flow=flow)])


def close_quasiloop(quasi: LoopSpec, blocks: Sequence[Sequence[int]], tol: float = 1e-9,
                    max_step: float = 0.01) -> QuasiLoopClosure:
    """Close a blockwise-factorized quasi-loop by transport inside each block.

    ``quasi`` carries the factorized TDI and the product basepoint; the
    returned loop runs the quasi-loop and then the block transports E.
    """
    g = quasi.geometry
    blocks = [tuple(B) for B in blocks]
    for p in quasi.tdi.pieces:
        for s in ([p.t0] if p.is_constant else np.linspace(p.t0, p.t1, 5)):
            if any(not _inside(S, blocks) for S in p.at(s).terms):
                raise SplitError("quasi-loop TDI is not factorized over the blocks")
    phi = quasi.basepoint.vector
    end = propagate(phi, PropagatorRequest(quasi.tdi, max_step=max_step))
    try:
        ends = factorize(end, g, blocks, tol)
        starts = factorize(phi, g, blocks, tol)
    except ValueError as exc:
        raise SplitError(str(exc))
    transports = []
    for B, e, b in zip(blocks, ends, starts):
        lrep = quasi.rep.restrict(g.positions(B))
        try:
            path = kato_transport_symmetric(b, e, lrep)
        except ChargeError as exc:
            raise SplitError(f"block {B[0]}..{B[-1]}: {exc}")
        transports.append(_Transport(B, path))
    E = _block_transport_tdi(g, transports)
    closed = replace(quasi, tdi=concatenate_tdi(quasi.tdi, E), name=f"closed({quasi.name})")
    v1 = propagate(phi, PropagatorRequest(closed.tdi, max_step=max_step))
    return QuasiLoopClosure(closed, [list(B) for B in blocks], [t.sup_norm() for t in transports],
                            [t.bound for t in transports], float(abs(np.vdot(phi, v1))))


def block_loops(loop: LoopSpec, blocks: Sequence[Sequence[int]], K: int = 256, tol: float = 1e-9) -> list:
    """ZeroDimLoops of the blocks of a loop whose TDI never crosses a block boundary."""
    g = loop.geometry
    blocks = [tuple(B) for B in blocks]
    starts = factorize(loop.basepoint, g, blocks, tol)
    out = []
    for B, b in zip(blocks, starts):
        gB = _block_geometry(g, B)
        TB = loop.tdi.restrict_terms(lambda S, B=B: S[0] >= B[0] and S[-1] <= B[-1], gB)
        out.append(ZeroDimLoop.from_generator(b, lambda s, TB=TB: TB.at(min(s, 1.0)).full(), K=K))
    return out


@dataclass
class ProductContraction:
    contractions: list
    sup_E_lambda: float
    sup_F_s: float
    E_bounds: list
    F_bound: float
    min_N: float
    boundary_defect: float

    @property
    def within_bounds(self) -> bool:
        ok = all(c.sup_E_lambda <= 1.1 * b + 1e-12 for c, b in zip(self.contractions, self.E_bounds))
        return ok and self.sup_F_s <= 1.1 * self.F_bound


def contract_product_loop(loops: Sequence[ZeroDimLoop], n_lambda: int = 33) -> ProductContraction:
    """Contract each block loop; the family of the product is the product of the families."""
    cons = [contract_loop(L, n_lambda=n_lambda) for L in loops]
    worst = 0.0
    for c in cons:
        om = c.omega
        K = c.loop.states.shape[0] - 1
        for lam in (0.0, 0.5, 1.0):
            worst = max(worst, 1 - abs(np.vdot(om, c.state(lam, 0))))
            worst = max(worst, 1 - abs(np.vdot(om, c.state(lam, K))))
        for k in range(0, K + 1, max(1, K // 16)):
            worst = max(worst, 1 - abs(np.vdot(om, c.state(1.0, k))))
    return ProductContraction(cons, max(c.sup_E_lambda for c in cons),
                              max(c.sup_F_s for c in cons), [c.E_bound() for c in cons],
                              cons[0].F_bound if cons else 208.0,
                              min(c.min_N for c in cons), float(worst))


# --- associated loop ----------------------------------------------------------

@dataclass
class AssociatedLoop:
    loop: LoopSpec
    index: object
    original_index: object
    basepoint_fidelity: float


def associated_loop(psi: LoopSpec, K: TDI, phi: ChainState, check_index: bool = True,
                    tol: float = 1e-9, **index_opts) -> AssociatedLoop:
    """The loop that moves phi to psi's basepoint with K, runs psi, and moves back.

    Its basepoint is the product state phi, and its index equals psi's.
    """
    v = propagate(phi.vector, PropagatorRequest(K))
    fid = float(abs(np.vdot(v, psi.basepoint.vector)))
    if 1 - fid > tol:
        raise LoopError(f"K does not carry phi to the basepoint (fidelity {fid:.12f})")
    tdi = concatenate_tdi(concatenate_tdi(K, psi.tdi), reverse_tdi(K))
    nu = replace(psi, basepoint=phi, tdi=tdi, name=f"assoc({psi.name})")
    if not check_index:
        return AssociatedLoop(nu, None, None, fid)
    h_nu = pump_index(nu, **index_opts).charge
    h_psi = pump_index(psi, **index_opts).charge
    if h_nu != h_psi:
        raise ChargeError(f"associated loop index {h_nu} differs from {h_psi}")
    return AssociatedLoop(nu, h_nu, h_psi, fid)
