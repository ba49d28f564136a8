"""Ground-state machinery at finite volume.

The on-site gap Hamiltonian F of a product state, gaps of F + W, the
interaction family Z_lam(s) whose ground states trace a loop, and the
spectral flow of a ground state along a gapped path of Hermitian matrices
through the exact Kato generator K(z) = i[dP/dz, P].
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .chainspace import ChainGeometry, ChainState
from .evolution import DenseFlow
from .interaction import TDI, Interaction, StretchedExp, f_norm
from .splitting import factorize
from .symmetry import OnsiteRep, symmetrize

__all__ = [
    "GapReport",
    "GapError",
    "FlowError",
    "onsite_gap_hamiltonian",
    "finite_gap",
    "random_symmetric_perturbation",
    "largest_gapped_strength",
    "z_family",
    "FlowResult",
    "spectral_flow_kato",
    "ground_state_criterion",
]

DENSE_GAP_LIMIT = 1024
Z_LIMIT = 4096
GAP_MIN = 0.1


class GapError(RuntimeError):
    pass


class FlowError(RuntimeError):
    pass


@dataclass
class GapReport:
    L: int
    E0: float
    E1: float
    residuals: list
    method: str
    runtime_s: float = 0.0
    ground_state: np.ndarray | None = field(default=None, repr=False)

    @property
    def gap(self) -> float:
        return self.E1 - self.E0

    @property
    def degenerate(self) -> bool:
        return self.gap < 1e-8

    def to_json(self) -> dict:
        return {"L": self.L, "E0": self.E0, "E1": self.E1, "gap": self.gap,
                "degenerate": self.degenerate, "residuals": self.residuals,
                "method": self.method, "runtime_s": self.runtime_s}


def onsite_gap_hamiltonian(phi, geometry: ChainGeometry | None = None, tol: float = 1e-9) -> Interaction:
    """F_{i} = 1 - |phi_i><phi_i| for a product state phi."""
    if isinstance(phi, ChainState):
        geometry = phi.geometry
    if geometry is None:
        raise ValueError("a bare vector needs its geometry")
    vecs = factorize(phi, geometry, [(s,) for s in geometry.sites], tol)
    terms = {}
    for s, v in zip(geometry.sites, vecs):
        v = v / np.linalg.norm(v)
        terms[(s,)] = np.eye(len(v)) - np.outer(v, v.conj())
    return Interaction(geometry, terms)


def finite_gap(H: Interaction, dense_limit: int = DENSE_GAP_LIMIT, tol: float = 1e-10,
               max_dim: int = 10 ** 6) -> GapReport:
    """Lowest two eigenvalues of the embedded interaction."""
    t0 = time.perf_counter()
    g = H.geometry
    D = g.total_dim
    if D > max_dim:
        raise GapError(f"dimension {D} above {max_dim}")
    if H.is_zero():
        v = np.zeros(D, dtype=complex)
        v[0] = 1.0
        return GapReport(g.n_sites, 0.0, 0.0, [0.0, 0.0], "zero",
                         time.perf_counter() - t0, v)
    if D <= dense_limit:
        w, V = sla.eigh(H.full(), subset_by_index=[0, 1], driver="evx")
        method = "dense"
    else:
        # ARPACK's smallest-algebraic mode can skip an exact eigenvalue on
        # basis-aligned spectra; the largest mode of c - H is run as well and
        # the lower pair kept
        c = sum(float(np.linalg.norm(M, 2)) for M in H.terms.values())
        v0 = np.random.default_rng(0).normal(size=D).astype(complex)
        runs = []
        for which, shift in (("SA", None), ("LA", c)):
            mv = H.matvec if shift is None else (lambda x, c=shift: c * x - H.matvec(x))
            op = LinearOperator((D, D), matvec=mv, dtype=complex)
            try:
                w, V = eigsh(op, k=2, which=which, tol=tol, v0=v0, maxiter=20 * D)
            except ArpackNoConvergence as exc:
                raise GapError(f"eigensolver did not converge: {exc}")
            w = w if shift is None else shift - w
            order = np.argsort(w)
            runs.append((tuple(w[order]), w[order], V[:, order]))
        _, w, V = min(runs, key=lambda r: r[0])
        method = "lanczos"
    res = [float(np.linalg.norm(H.matvec(V[:, k]) - w[k] * V[:, k])) for k in range(2)]
    if max(res) > 1e-8:
        raise GapError(f"eigensolver residuals {res} above 1e-8")
    return GapReport(g.n_sites, float(w[0]), float(w[1]), res, method,
                     time.perf_counter() - t0, V[:, 0])


def random_symmetric_perturbation(geometry: ChainGeometry, rep: OnsiteRep, f_target: float = 0.05,
                                  seed: int = 0, range_: int = 2, decay=None) -> Interaction:
    """Random symmetric terms on all supports of up to ``range_`` sites, scaled to f-norm f_target."""
    rng = np.random.default_rng(seed)
    decay = decay or StretchedExp()
    g = geometry.open() if geometry.ring else geometry
    terms = {}
    for r in range(1, range_ + 1):
        for i in range(g.n_sites - r + 1):
            S = g.sites[i:i + r]
            d = g.dim_of(S)
            A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
            terms[S] = (A + A.conj().T) / 2
    W = symmetrize(Interaction(g, terms), rep)
    W = Interaction(geometry, W.terms)
    return W * (f_target / f_norm(W, decay))


def largest_gapped_strength(F: Interaction, rep: OnsiteRep, strengths: Sequence[float],
                            n_samples: int = 5, gap_floor: float = 0.5, seed: int = 0):
    """Largest tested f-norm at which every sampled W keeps gap(F + W) >= gap_floor.

    Returns (strength or None, table of (strength, min gap)).
    """
    best, table = None, []
    for t in sorted(strengths):
        gaps = [finite_gap(F + random_symmetric_perturbation(F.geometry, rep, t, seed + k)).gap
                for k in range(n_samples)]
        table.append((float(t), float(min(gaps))))
        if min(gaps) < gap_floor:
            break
        best = float(t)
    return best, table


class z_family:
    """Z_lam(s) as full matrices.

    Z(s) = U(2s) F U(2s)^dagger for s <= 1/2 and
    Z(s) = (2s - 1) F + (2 - 2s) U(1) F U(1)^dagger for s > 1/2, where U is
    the loop's propagator; Z_lam(s) = Z(0) + (1 - lam)(Z(s) - Z(0)).
    The ground state of Z_0(s) is the loop state at time 2s.
    """

    def __init__(self, H: TDI, F: Interaction, max_step: float = 0.005, limit: int = Z_LIMIT):
        D = H.geometry.total_dim
        if D > limit:
            raise ValueError(f"dimension {D} above the dense limit {limit}")
        self.flow = DenseFlow(H, max_step=max_step, limit=limit)
        self.F = F.full()
        U1 = self.flow(1.0)
        self.F_end = U1 @ self.F @ U1.conj().T

    def Z(self, s: float) -> np.ndarray:
        if s <= 0.5:
            U = self.flow(2 * s)
            M = U @ self.F @ U.conj().T
        else:
            M = (2 * s - 1) * self.F + (2 - 2 * s) * self.F_end
        return 0.5 * (M + M.conj().T)

    def __call__(self, lam: float, s: float) -> np.ndarray:
        return self.F + (1 - lam) * (self.Z(s) - self.F)

    def deviation(self, lam: float, grid: Sequence[float]) -> float:
        """sup over the grid of ||Z_lam(s) - F||."""
        return max(float(np.linalg.norm(self(lam, s) - self.F, 2)) for s in grid)


@dataclass
class FlowResult:
    grid: np.ndarray
    states: list
    E0: np.ndarray
    E1: np.ndarray
    generator_norms: np.ndarray
    flowed: np.ndarray
    fidelity: float
    fidelities: list

    @property
    def min_gap(self) -> float:
        return float(np.min(self.E1 - self.E0))

    def trace_rows(self) -> list:
        """(z, E0, E1, fidelity of the flowed state with the ground state) per grid point."""
        return [(float(z), float(a), float(b), float(f))
                for z, a, b, f in zip(self.grid, self.E0, self.E1, self.fidelities)]


def _ground(M: np.ndarray):
    w, V = sla.eigh(M, subset_by_index=[0, 1], driver="evx")
    return w, V[:, 0]


def _align(v, ref):
    ov = np.vdot(ref, v)
    return v * (abs(ov) / ov) if abs(ov) > 0 else v


def _kato_step(psi_a, psi_m, psi_b, dz, v):
    """exp(-i K dz) v with K = i[P', P] at the midpoint, P' by finite differences.

    K = i (a psi^dagger - psi a^dagger), a = P' psi, so K acts inside
    span{psi, a} and is exponentiated there.
    """
    dP_psi = (psi_b * np.vdot(psi_b, psi_m) - psi_a * np.vdot(psi_a, psi_m)) / dz
    Q, _ = np.linalg.qr(np.stack([psi_m, dP_psi], axis=1))
    a, p = Q.conj().T @ dP_psi, Q.conj().T @ psi_m
    k = 1j * (np.outer(a, p.conj()) - np.outer(p, a.conj()))
    k = 0.5 * (k + k.conj().T)
    c = Q.conj().T @ v
    return v + Q @ ((sla.expm(-1j * dz * k) - np.eye(2)) @ c), float(np.linalg.norm(k, 2))


def spectral_flow_kato(M: Callable[[float], np.ndarray], grid: Sequence[float] | None = None,
                       gap_min: float = GAP_MIN, n: int = 101) -> FlowResult:
    """Transport the ground state of M(z) along the grid by the Kato generator.

    The ground state is found by eigensolve at every grid point and midpoint
    (phases aligned to the previous point); the flowed state is obtained by
    integrating the generator on its two-dimensional range and compared with
    the ground state at the end.
    """
    grid = np.linspace(0.0, 1.0, n) if grid is None else np.asarray(grid, dtype=float)
    states, E0, E1, norms, fids = [], [], [], [], []

    def solve(z, ref):
        w, v = _ground(M(z))
        if w[1] - w[0] < gap_min:
            raise FlowError(f"gap {w[1] - w[0]:.3e} below {gap_min} at z={z:.4f}")
        return w, (v if ref is None else _align(v, ref))

    w, psi = solve(grid[0], None)
    states.append(psi)
    E0.append(w[0])
    E1.append(w[1])
    v = psi.copy()
    fids.append(1.0)
    for za, zb in zip(grid, grid[1:]):
        _, pm = solve(0.5 * (za + zb), states[-1])
        w, pb = solve(zb, pm)
        v, kn = _kato_step(states[-1], pm, pb, zb - za, v)
        states.append(pb)
        E0.append(w[0])
        E1.append(w[1])
        norms.append(kn)
        fids.append(abs(np.vdot(pb, v)) ** 2)
    return FlowResult(grid, states, np.array(E0), np.array(E1), np.array(norms), v,
                      float(fids[-1]), [float(f) for f in fids])


def ground_state_criterion(M: np.ndarray, psi: np.ndarray, ops: Sequence[np.ndarray]) -> float:
    """min over ops A of <psi, A^dagger [M, A] psi>; non-negative for a ground state."""
    Mpsi = M @ psi
    vals = []
    for A in ops:
        Ap = A @ psi
        vals.append(float(np.real(np.vdot(Ap, M @ Ap) - np.vdot(Ap, A @ Mpsi))))
    return min(vals)
