"""Charge theory on a single finite Hilbert space.

Relative charges of symmetric vectors, Kato parallel transport between two
vectors, and the contraction of a loop of vectors to a constant loop.

Generators follow the evolution convention dPsi/ds = -i E(s) Psi.  For a
path of projectors P(s) = |Psi><Psi| with <Psi, dPsi/ds> = 0 this gives
E = i[dP/ds, P] = i(|Psi'><Psi| - |Psi><Psi'|).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .symmetry import Cyclic, DualCharge, LevelRep, U1, is_invariant

__all__ = [
    "ChargeError",
    "ZeroDimLoop",
    "TransportPath",
    "Contraction",
    "extract_dual",
    "relative_charge",
    "kato_transport",
    "kato_transport_symmetric",
    "rotation_unitary",
    "contract_loop",
]

ROUNDING_THRESHOLD = 0.1


class ChargeError(ValueError):
    pass


def extract_dual(group, ratio: Callable, n_theta: int = 64, threshold: float = ROUNDING_THRESHOLD):
    """Read off a dual element h from samples of exp(-i h(g)).

    ``ratio(g)`` returns a complex number whose phase is -h(g).  Cyclic
    factors are evaluated at their generator; U1 factors by a least-squares
    winding slope of the unwrapped phase on a theta grid.  Returns
    (DualCharge, residuals) where residuals are distances to the nearest
    quantum, one per factor.
    """
    vals, res = [], []
    for k, f in enumerate(group.factors):
        base = [0.0 if isinstance(x, U1) else 0 for x in group.factors]
        if isinstance(f, Cyclic):
            base[k] = 1
            z = ratio(group.element(*base))
            x = -np.angle(z) * f.n / (2 * np.pi)
            m = int(np.rint(x))
            vals.append(m % f.n)
            res.append(abs(x - m))
        else:
            thetas = np.linspace(0.0, 2 * np.pi, n_theta + 1)[1:]
            ph = []
            for t in thetas:
                base[k] = t
                ph.append(np.angle(ratio(group.element(*base))))
            # unwrap starting from theta = 0 where the phase is 0
            ph = np.unwrap(np.concatenate([[0.0], ph]))
            th = np.concatenate([[0.0], thetas])
            slope = float(th @ ph / (th @ th))
            x = -slope
            m = int(np.rint(x))
            vals.append(m)
            res.append(abs(x - m))
    h = DualCharge(group, tuple(vals))
    if max(res) > threshold:
        raise ChargeError(f"ambiguous rounding (residuals {res})")
    return h, res


def relative_charge(psi1: np.ndarray, psi2: np.ndarray, rep: LevelRep, tol: float = 1e-6,
                    return_residuals: bool = False):
    """Charge of psi2 relative to psi1: exp(-i h(g)) = z2(g) / z1(g)."""
    psi1 = np.asarray(psi1, dtype=complex)
    psi2 = np.asarray(psi2, dtype=complex)

    def z(psi, g):
        ph = rep.phases(g)
        val = np.vdot(psi, ph * psi)
        defect = np.linalg.norm(ph * psi - val * psi)
        if defect > tol:
            raise ChargeError(f"vector is not a symmetry eigenvector (defect {defect:.2e})")
        return val

    h, res = extract_dual(rep.group, lambda g: z(psi2, g) / z(psi1, g))
    return (h, res) if return_residuals else h


def rotation_unitary(omega: np.ndarray, perp: np.ndarray, angle: float) -> np.ndarray:
    """exp(-i angle G) for G = i(|perp><omega| - |omega><perp|), orthonormal pair."""
    d = omega.size
    P2 = np.outer(omega, omega.conj()) + np.outer(perp, perp.conj())
    G = 1j * (np.outer(perp, omega.conj()) - np.outer(omega, perp.conj()))
    return np.eye(d, dtype=complex) + (math.cos(angle) - 1) * P2 - 1j * math.sin(angle) * G


@dataclass(frozen=True, eq=False)
class TransportPath:
    """Kato transport from ``start`` (s = 0) to ``target`` (s = 1).

    The path is a rotation in the plane spanned by the target and the
    orthogonal part of the start vector, Psi(s) = y Omega + sqrt(1 - y^2) Perp
    with y(s) = a + (1 - a)(1 - (1 - s)^2).  The generator is phi'(s) G
    with G fixed, so propagators are available in closed form.
    """

    target: np.ndarray
    start: np.ndarray
    perp: np.ndarray
    a: float
    phase: complex

    def y(self, s):
        s = np.asarray(s, dtype=float)
        return self.a + (1 - self.a) * (1 - (1 - s) ** 2)

    def dy(self, s):
        return 2 * (1 - self.a) * (1 - np.asarray(s, dtype=float))

    def dsq(self, s):
        """Derivative of sqrt(1 - y^2), in a form regular at s = 1."""
        y = self.y(s)
        return -2 * y * math.sqrt(1 - self.a) / np.sqrt(1 + y)

    def angle(self, s):
        """phi(s) with y = cos(phi): the rotation angle still to go."""
        return np.arccos(np.clip(self.y(s), -1.0, 1.0))

    def state(self, s: float) -> np.ndarray:
        y = float(self.y(s))
        return y * self.target + math.sqrt(max(0.0, 1 - y * y)) * self.perp

    def velocity(self, s: float) -> np.ndarray:
        return float(self.dy(s)) * self.target + float(self.dsq(s)) * self.perp

    def generator(self, s: float) -> np.ndarray:
        psi, dpsi = self.state(s), self.velocity(s)
        return 1j * (np.outer(dpsi, psi.conj()) - np.outer(psi, dpsi.conj()))

    def generator_norm(self, s) -> np.ndarray:
        return np.sqrt(self.dy(s) ** 2 + self.dsq(s) ** 2)

    def direction(self) -> np.ndarray:
        """The fixed generator G; E(s) = phi'(s) G."""
        return 1j * (np.outer(self.perp, self.target.conj()) - np.outer(self.target, self.perp.conj()))

    def propagator(self, s: float, u: float = 0.0) -> np.ndarray:
        """Exact U(s, u) of the transport generator."""
        if self.a >= 1.0:
            return np.eye(self.target.size, dtype=complex)
        return rotation_unitary(self.target, self.perp, float(self.angle(s) - self.angle(u)))

    def sup_generator_norm(self, K: int = 1024) -> float:
        return float(np.max(self.generator_norm(np.linspace(0, 1, K + 1))))

    @property
    def distance(self) -> float:
        """sqrt(1 - a^2), the pure-state distance used in the transport bound."""
        return math.sqrt(max(0.0, 1 - self.a ** 2))


def kato_transport(target: np.ndarray, start: np.ndarray) -> TransportPath:
    """Parallel transport carrying ``start`` to ``target`` over s in [0, 1].

    The start vector's phase is fixed so <start, target> = a >= 0; the path
    begins at that rephased vector and ends exactly at ``target``.
    """
    om = np.asarray(target, dtype=complex)
    psi = np.asarray(start, dtype=complex)
    om = om / np.linalg.norm(om)
    psi = psi / np.linalg.norm(psi)
    ov = np.vdot(psi, om)
    phase = ov / abs(ov) if abs(ov) > 1e-300 else 1.0
    psi = phase * psi
    a = float(min(1.0, max(0.0, np.vdot(psi, om).real)))
    r = psi - a * om
    nr = np.linalg.norm(r)
    if nr < 1e-14:
        perp = np.zeros_like(om)
        a = 1.0
    else:
        perp = r / nr
    return TransportPath(om, psi, perp, a, phase)


def kato_transport_symmetric(target, start, rep: LevelRep, tol: float = 1e-9) -> TransportPath:
    """Transport between symmetric vectors of equal charge; the generator is invariant."""
    h = relative_charge(target, start, rep)
    if not h.is_zero():
        raise ChargeError(f"relative charge {h} is not zero")
    path = kato_transport(target, start)
    for s in (0.0, 0.37, 1.0):
        ok, defect = is_invariant(path.generator(s), rep, tol=tol)
        if not ok:
            raise ChargeError(f"transport generator not invariant (defect {defect:.2e})")
    return path


# --- loops and their contraction -------------------------------------------

@dataclass(frozen=True, eq=False)
class ZeroDimLoop:
    """Sampled loop Psi(s_k) = U(s_k) Omega on a uniform grid, with a bound on |||E|||."""

    states: np.ndarray  # (K + 1, d)
    E_bound: float

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.states.shape[0])

    @property
    def basepoint(self) -> np.ndarray:
        return self.states[0]

    @classmethod
    def from_generator(cls, omega: np.ndarray, E: Callable[[float], np.ndarray], K: int = 1024,
                       substeps: int = 4):
        """Integrate dPsi/ds = -i E(s) Psi with commutator-free fourth-order steps."""
        from scipy.linalg import expm

        c1, c2 = 0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6
        a1, a2 = (3 - 2 * math.sqrt(3)) / 12, (3 + 2 * math.sqrt(3)) / 12
        psi = np.asarray(omega, dtype=complex)
        out = [psi]
        norms = []
        h = 1.0 / (K * substeps)
        t = 0.0
        for _ in range(K):
            for _ in range(substeps):
                E1, E2 = E(t + c1 * h), E(t + c2 * h)
                norms.append(max(np.linalg.norm(E1, 2), np.linalg.norm(E2, 2)))
                psi = expm(-1j * h * (a2 * E1 + a1 * E2)) @ psi
                psi = expm(-1j * h * (a1 * E1 + a2 * E2)) @ psi
                t += h
            out.append(psi)
        return cls(np.array(out), float(max(norms)))

    def closure_fidelity(self) -> float:
        return float(abs(np.vdot(self.states[0], self.states[-1])))


@dataclass(frozen=True, eq=False)
class Contraction:
    """Two-parameter family Psi_lambda(s) with measured generator bounds."""

    omega: np.ndarray
    loop: ZeroDimLoop
    theta: np.ndarray      # phase-fix angles on the grid
    k: np.ndarray          # Re <a Psi, Omega> on the grid
    lambdas: np.ndarray
    sup_E_lambda: float    # sup over lambda, s of ||E_lambda(s)||
    sup_F_s: float         # sup over s, lambda of ||F_s(lambda)||
    lipschitz_phase: float
    min_N: float

    def state(self, lam: float, k: int) -> np.ndarray:
        psi = np.exp(1j * self.theta[k]) * self.loop.states[k]
        v = lam * self.omega + (1 - lam) * psi
        return v / np.linalg.norm(v)

    def E_bound(self) -> float:
        return 80 * self.loop.E_bound

    F_bound = 208.0


def _phase_fix(c: np.ndarray, s: np.ndarray):
    """Piecewise-linear phase angles: 0 where Re c > 0, pi where Re c < -1/2.

    Across a gap between classified points the angle is interpolated
    linearly; of the admissible targets (differing by 2 pi) the one keeping
    Re(e^{-i theta} c) largest across the gap is chosen, ties going to the
    smaller change.
    """
    kt = c.real
    cls = np.full(len(c), -1)
    cls[kt > 0] = 0
    cls[kt < -0.5] = 1
    idx = np.flatnonzero(cls >= 0)
    theta = np.zeros(len(c))
    if idx.size == 0:
        return theta
    base = {0: 0.0, 1: np.pi}
    cur = base[int(cls[idx[0]])]
    theta[: idx[0] + 1] = cur
    for i0, i1 in zip(idx, idx[1:]):
        target = base[int(cls[i1])]
        cands = [target + 2 * np.pi * m for m in range(-2, 3)]
        cands = [x for x in cands if abs(x - cur) <= 2 * np.pi + 1e-12]
        best = None
        for x in cands:
            w = (s[i0:i1 + 1] - s[i0]) / (s[i1] - s[i0])
            th = cur + (x - cur) * w
            score = np.min(np.real(np.exp(-1j * th) * c[i0:i1 + 1]))
            key = (score >= -0.5 + 1e-12, -abs(x - cur), score)
            if best is None or key > best[0]:
                best = (key, x, th)
        theta[i0:i1 + 1] = best[2]
        cur = best[1]
    theta[idx[-1]:] = cur
    return theta


def contract_loop(loop: ZeroDimLoop, n_lambda: int = 65, check_refinement: bool = True) -> Contraction:
    """Contract a loop based at Omega = Psi(0) to the constant loop.

    Psi_lambda(s) = (lambda Omega + (1 - lambda) a(s) Psi(s)) / sqrt(N) with a
    phase fix a(s) keeping Re <a Psi, Omega> >= -1/2, hence N >= 1/4.
    E_lambda is the Kato generator of s -> Psi_lambda(s) (centered finite
    differences on the s-grid); F_s is the Kato generator in lambda (closed
    form).  Both are reported through their sup norms.
    """
    states = np.asarray(loop.states, dtype=complex)
    K = states.shape[0] - 1
    s = np.linspace(0.0, 1.0, K + 1)
    om = states[0]
    c = states.conj() @ om                      # <Psi(s), Omega>
    theta = _phase_fix(c, s)
    k = np.real(np.exp(-1j * theta) * c)        # Re <a Psi, Omega>, a = e^{i theta}
    if np.min(k) < -0.5 - 1e-9:
        raise ValueError("phase fix failed to keep Re<Psi, Omega> >= -1/2")
    fixed = np.exp(1j * theta)[:, None] * states
    lams = np.linspace(0.0, 1.0, n_lambda)
    N = lams[:, None] ** 2 + (1 - lams[:, None]) ** 2 + 2 * lams[:, None] * (1 - lams[:, None]) * k[None, :]
    sup_E = _sup_E(om, fixed, lams, s)
    if check_refinement and K >= 8:
        coarse = _sup_E(om, fixed[::2], lams, s[::2])
        if abs(coarse - sup_E) > 0.05 * sup_E + 1e-9:
            raise ValueError("grid too coarse: generator sup changes by more than 5% on refinement")
    sup_F = _sup_F(om, fixed, k, lams)
    lip = float(np.max(np.abs(np.diff(theta)) / np.diff(s))) if K > 0 else 0.0
    return Contraction(om, loop, theta, k, lams, sup_E, sup_F, lip, float(N.min()))


def _sup_E(om, fixed, lams, s):
    best = 0.0
    h = s[1] - s[0]
    for lam in lams:
        V = lam * om[None, :] + (1 - lam) * fixed
        V = V / np.linalg.norm(V, axis=1)[:, None]
        dV = np.gradient(V, h, axis=0, edge_order=2)
        # horizontal part: ||(1 - P) dV|| equals ||i[dP, P]||
        proj = np.sum(V.conj() * dV, axis=1)
        hor = dV - proj[:, None] * V
        best = max(best, float(np.max(np.linalg.norm(hor, axis=1))))
    return best


def _sup_F(om, fixed, k, lams):
    best = 0.0
    for lam in lams:
        N = lam ** 2 + (1 - lam) ** 2 + 2 * lam * (1 - lam) * k
        dN = 2 * lam - 2 * (1 - lam) + 2 * (1 - 2 * lam) * k
        W = lam * om[None, :] + (1 - lam) * fixed
        dW = om[None, :] - fixed
        V = W / np.sqrt(N)[:, None]
        dV = dW / np.sqrt(N)[:, None] - 0.5 * W * (dN / N ** 1.5)[:, None]
        proj = np.sum(V.conj() * dV, axis=1)
        hor = dV - proj[:, None] * V
        best = max(best, float(np.max(np.linalg.norm(hor, axis=1))))
    return best
