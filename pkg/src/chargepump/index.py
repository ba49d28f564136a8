"""The pumped state and the pump index.

The loop's TDI is truncated to the terms left of the cut edge (cut, cut+1)
and the basepoint is evolved for one period.  The charge that crossed the
cut sits near it; the compensating charge is parked at the left end of the
chain, so the relative charge is read off on a window around the cut that
stays clear of the boundary.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .chainspace import ChainGeometry, ChainState, window_populations, window_purity
from .evolution import PropagatorRequest, propagate
from .interaction import truncate_left
from .pumps import LoopError, LoopSpec, verify_loop
from .symmetry import DualCharge, OnsiteRep, U1
from .zerodim import ROUNDING_THRESHOLD, ChargeError, extract_dual

__all__ = [
    "IndexReport",
    "open_chain",
    "pumped_state",
    "default_window",
    "windowed_relative_charge",
    "pump_index",
    "stability_sweep",
]

UNIMODULAR = 0.9


@dataclass
class IndexReport:
    charge: DualCharge | None
    residuals: list
    purity_defect: float
    closure: dict
    method: str
    window: tuple
    cut: int
    cross_check: DualCharge | None = None
    total_charge_shift: list | None = None
    runtime_s: float = 0.0
    threshold: float = ROUNDING_THRESHOLD
    window_scan: dict = field(default_factory=dict)

    @property
    def window_stable(self) -> bool:
        """Whether neighbouring window sizes read off the same charge."""
        return all(v == (self.charge.to_list() if self.charge else None)
                   for v in self.window_scan.values())

    @property
    def max_residual(self) -> float:
        return float(max(self.residuals)) if self.residuals else 0.0

    def to_json(self) -> dict:
        return {
            "index": {"charge": self.charge.to_list() if self.charge is not None else None,
                      "group": str(self.charge.group) if self.charge is not None else None,
                      "method": self.method, "cut": self.cut, "window": list(self.window),
                      "rounding_threshold": self.threshold,
                      "cross_check": self.cross_check.to_list() if self.cross_check else None},
            "residuals": {"phase": [float(r) for r in self.residuals],
                          "purity_defect": float(self.purity_defect),
                          "total_charge_shift": self.total_charge_shift,
                          "window_scan": {str(k): v for k, v in self.window_scan.items()}},
            "closure": self.closure,
            "runtime_s": self.runtime_s,
        }


def open_chain(loop: LoopSpec) -> LoopSpec:
    """The same loop with terms across the ring's seam removed."""
    g = loop.geometry
    if not g.ring:
        return loop
    go = g.open()
    tdi = loop.tdi.restrict_terms(lambda S: not g.wraps(S), go)
    return replace(loop, geometry=go, tdi=tdi,
                   basepoint=ChainState(go, loop.basepoint.vector),
                   closure=replace(loop.closure, kind="bulk"))


def pumped_state(loop: LoopSpec, cut: int = 0, **opts) -> ChainState:
    """Basepoint evolved for one period under the left-truncated TDI."""
    g = loop.geometry
    if g.ring:
        raise ValueError("the pumped state needs an open chain (use open_chain)")
    if not (g.first <= cut < g.last):
        raise ValueError("cut edge must be interior")
    H = truncate_left(loop.tdi, cut)
    v = propagate(loop.basepoint.vector, PropagatorRequest(H, **opts))
    return ChainState(g, v)


def default_window(geometry: ChainGeometry, cut: int = 0, w: int | None = None) -> tuple:
    """Sites [cut - w, cut + w] with w = floor(L/2), L the length left of the cut."""
    if w is None:
        L = cut - geometry.first + 1
        w = L // 2
    lo, hi = max(geometry.first, cut - w), min(geometry.last, cut + w)
    return tuple(range(lo, hi + 1))


def windowed_relative_charge(psi_p, omega, geometry: ChainGeometry, rep: OnsiteRep,
                             window: Sequence[int], method: str = "phase"):
    """Charge of psi_p relative to omega inside ``window``.

    Returns (DualCharge, residuals, purity_defect).
    """
    window = tuple(window)
    vp = psi_p.vector if isinstance(psi_p, ChainState) else psi_p
    vo = omega.vector if isinstance(omega, ChainState) else omega
    # the symmetry acts diagonally, so populations suffice for the traces
    pp = window_populations(vp, geometry, window)
    po = window_populations(vo, geometry, window)
    purity = 1 - window_purity(vp, geometry, window)
    lrep = rep.restrict(geometry.positions(window))
    if method == "phase":
        def ratio(g):
            ph = lrep.phases(g)
            zp, zo = pp @ ph, po @ ph
            if abs(zp) < UNIMODULAR or abs(zo) < UNIMODULAR:
                raise ChargeError(f"window trace not unimodular (|z'|={abs(zp):.3f}, "
                                  f"|z|={abs(zo):.3f}); enlarge the window")
            return zp / zo
        h, res = extract_dual(rep.group, ratio)
        return h, res, purity
    if method == "u1-charge":
        vals, res = [], []
        for k, f in enumerate(rep.group.factors):
            if not isinstance(f, U1):
                raise ValueError("u1-charge method needs U1 factors only")
            q = lrep.charges[:, k]
            x = float(pp @ q - po @ q)
            m = int(np.rint(x))
            vals.append(m)
            res.append(abs(x - m))
        if max(res) > ROUNDING_THRESHOLD:
            raise ChargeError(f"ambiguous rounding (residuals {res})")
        return DualCharge(rep.group, tuple(vals)), res, purity
    raise ValueError(f"unknown method {method!r}")


def _total_shift(psi_p, omega, geometry, rep):
    full = rep.restrict(range(geometry.n_sites))
    pp = np.abs(psi_p.vector) ** 2
    po = np.abs(omega.vector) ** 2
    out = []
    for k, f in enumerate(rep.group.factors):
        if isinstance(f, U1):
            q = full.charges[:, k]
            out.append(float(pp @ q - po @ q))
    return out


def pump_index(loop: LoopSpec, cut: int = 0, w: int | None = None, window=None,
               method: str = "phase", check_closure: bool = True, cross_check: bool = True,
               **opts) -> IndexReport:
    """Index of a loop: relative charge of the pumped state near the cut."""
    t0 = time.perf_counter()
    closure = {}
    if check_closure:
        rep = verify_loop(loop, **{k: v for k, v in opts.items() if k in ("integrator", "max_step")})
        closure = rep.to_json()
        if not rep.passed:
            raise LoopError(f"loop does not close: {closure}")
    lo = open_chain(loop)
    g = lo.geometry
    psi_p = pumped_state(lo, cut, **opts)
    W = tuple(window) if window is not None else default_window(g, cut, w)
    h, res, purity = windowed_relative_charge(psi_p, lo.basepoint, g, lo.rep, W, method)
    other = None
    if cross_check and method == "phase" and all(isinstance(f, U1) for f in lo.group.factors):
        other, _, _ = windowed_relative_charge(psi_p, lo.basepoint, g, lo.rep, W, "u1-charge")
        if other != h:
            raise ChargeError(f"phase ({h}) and u1-charge ({other}) methods disagree")
    shift = _total_shift(psi_p, lo.basepoint, g, lo.rep) or None
    scan = {}
    if window is None:
        w0 = (len(W) - 1) // 2 if w is None else w
        for wk in (w0 - 1, w0 + 1):
            if wk < 0 or cut - wk <= g.first:
                continue
            try:
                hk, _, _ = windowed_relative_charge(psi_p, lo.basepoint, g, lo.rep,
                                                    default_window(g, cut, wk), method)
                scan[wk] = hk.to_list()
            except ChargeError:
                scan[wk] = None
    return IndexReport(h, res, purity, closure, method, W, cut, other, shift,
                       time.perf_counter() - t0, window_scan=scan)


@dataclass
class SweepRow:
    strength: float
    report: IndexReport | None
    error: str | None = None


@dataclass
class SweepTable:
    rows: list
    baseline: DualCharge | None

    @property
    def largest_stable(self) -> float | None:
        best = None
        for r in self.rows:
            if r.report is None or r.report.charge != self.baseline:
                break
            best = r.strength
        return best

    def residuals(self) -> list:
        return [r.report.max_residual if r.report else None for r in self.rows]


def stability_sweep(loop: LoopSpec, family: Callable[[LoopSpec, float], LoopSpec],
                    strengths: Sequence[float], **kw) -> SweepTable:
    """Index of family(loop, t) for each strength t, relative to the undeformed loop."""
    base = pump_index(loop, **kw).charge
    rows = []
    for t in sorted(strengths):
        try:
            rows.append(SweepRow(float(t), pump_index(family(loop, t), **kw)))
        except (ChargeError, LoopError) as exc:
            rows.append(SweepRow(float(t), None, str(exc)))
    return SweepTable(rows, base)
