"""Abelian symmetry groups, their duals and on-site charge representations.

Groups are finite products of ``U1`` and ``Cyclic(n)`` factors.  A dual
element (a homomorphism G -> U(1)) is stored as one integer per factor:
a winding number for U(1), a residue mod n for Z_n.

Basis level ``|q>`` of a site carries a charge ``q`` and the group acts as
``U(g)|q> = exp(-i q(g)) |q>``.  Relative charges are defined so that
``|q>`` has charge ``+q`` relative to a zero-charge level.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "U1",
    "Cyclic",
    "SymmetryGroup",
    "GroupElement",
    "DualCharge",
    "OnsiteRep",
    "LevelRep",
    "dual_add",
    "rep_unitary",
    "is_invariant",
    "charge_operator",
    "symmetrize",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class U1:
    def __str__(self):
        return "U1"


@dataclass(frozen=True)
class Cyclic:
    n: int

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError("cyclic order must be >= 1")

    def __str__(self):
        return f"Z{self.n}"


@dataclass(frozen=True)
class SymmetryGroup:
    """Finite product of U1 and cyclic factors."""

    factors: tuple

    def __post_init__(self):
        if len(self.factors) == 0:
            raise ValueError("a group needs at least one factor")
        for f in self.factors:
            if not isinstance(f, (U1, Cyclic)):
                raise TypeError(f"unsupported factor {f!r}")

    @classmethod
    def u1(cls) -> "SymmetryGroup":
        return cls((U1(),))

    @classmethod
    def zn(cls, n: int) -> "SymmetryGroup":
        return cls((Cyclic(int(n)),))

    @classmethod
    def product(cls, *groups: "SymmetryGroup") -> "SymmetryGroup":
        return cls(tuple(f for g in groups for f in g.factors))

    @classmethod
    def from_config(cls, cfg: dict) -> "SymmetryGroup":
        kind = cfg["kind"]
        if kind == "U1":
            return cls.u1()
        if kind in ("Zn", "Cyclic"):
            return cls.zn(cfg["n"])
        if kind == "Product":
            return cls.product(*(cls.from_config(c) for c in cfg["factors"]))
        raise ValueError(f"unknown group kind {kind!r}")

    def to_config(self) -> dict:
        parts = [{"kind": "U1"} if isinstance(f, U1) else {"kind": "Zn", "n": f.n}
                 for f in self.factors]
        return parts[0] if len(parts) == 1 else {"kind": "Product", "factors": parts}

    def __str__(self):
        return "x".join(str(f) for f in self.factors)

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    @property
    def has_u1(self) -> bool:
        return any(isinstance(f, U1) for f in self.factors)

    def identity(self) -> "GroupElement":
        return GroupElement(self, tuple(0.0 if isinstance(f, U1) else 0 for f in self.factors))

    def element(self, *values) -> "GroupElement":
        return GroupElement(self, tuple(values))

    def generators(self) -> list:
        """One element per factor; angle 1 rad stands in for a U1 factor.

        The U1 entries do not generate U(1) algebraically, so invariance
        tests use the charge commutator for those factors instead.
        """
        gens = []
        for i, f in enumerate(self.factors):
            vals = [0.0 if isinstance(x, U1) else 0 for x in self.factors]
            vals[i] = 1.0 if isinstance(f, U1) else 1
            gens.append(GroupElement(self, tuple(vals)))
        return gens

    def multiply(self, g1: "GroupElement", g2: "GroupElement") -> "GroupElement":
        return GroupElement(self, tuple(a + b for a, b in zip(g1.values, g2.values)))

    def dual(self, *values) -> "DualCharge":
        if len(values) == 1 and isinstance(values[0], (tuple, list, np.ndarray)):
            values = tuple(values[0])
        return DualCharge(self, tuple(int(v) for v in values))

    def zero(self) -> "DualCharge":
        return DualCharge(self, (0,) * self.n_factors)


@dataclass(frozen=True)
class GroupElement:
    group: SymmetryGroup
    values: tuple

    def __post_init__(self):
        if len(self.values) != self.group.n_factors:
            raise ValueError("one value per factor expected")
        norm = []
        for f, v in zip(self.group.factors, self.values):
            if isinstance(f, U1):
                norm.append(float(np.mod(float(v), TWO_PI)))
            else:
                norm.append(int(v) % f.n)
        object.__setattr__(self, "values", tuple(norm))


@dataclass(frozen=True)
class DualCharge:
    group: SymmetryGroup
    values: tuple = field(default=())

    def __post_init__(self):
        if len(self.values) != self.group.n_factors:
            raise ValueError("one value per factor expected")
        red = []
        for f, v in zip(self.group.factors, self.values):
            v = int(v)
            red.append(v if isinstance(f, U1) else v % f.n)
        object.__setattr__(self, "values", tuple(red))

    def _check(self, other):
        if not isinstance(other, DualCharge) or other.group != self.group:
            raise ValueError("dual charges belong to different groups")

    def __add__(self, other):
        self._check(other)
        return DualCharge(self.group, tuple(a + b for a, b in zip(self.values, other.values)))

    def __neg__(self):
        return DualCharge(self.group, tuple(-a for a in self.values))

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, k: int):
        return DualCharge(self.group, tuple(int(k) * a for a in self.values))

    __rmul__ = __mul__

    def is_zero(self) -> bool:
        return all(v == 0 for v in self.values)

    def pairing(self, g: GroupElement) -> float:
        """The phase h(g) in [0, 2pi)."""
        if g.group != self.group:
            raise ValueError("group mismatch")
        tot = 0.0
        for f, m, v in zip(self.group.factors, self.values, g.values):
            if isinstance(f, U1):
                tot += m * v
            else:
                tot += TWO_PI * ((m * v) % f.n) / f.n
        return float(np.mod(tot, TWO_PI))

    def to_list(self) -> list:
        return list(self.values)

    def __str__(self):
        if len(self.values) == 1:
            return str(self.values[0])
        return "(" + ",".join(str(v) for v in self.values) + ")"


def dual_add(h1: DualCharge, h2: DualCharge) -> DualCharge:
    return h1 + h2


def _phases(group: SymmetryGroup, charges: np.ndarray, g: GroupElement) -> np.ndarray:
    """exp(-i q(g)) for an integer charge array of shape (levels, factors)."""
    ang = np.zeros(charges.shape[0])
    for k, (f, v) in enumerate(zip(group.factors, g.values)):
        if isinstance(f, U1):
            ang = ang + charges[:, k] * v
        else:
            ang = ang + TWO_PI * np.mod(charges[:, k] * v, f.n) / f.n
    return np.exp(-1j * ang)


@dataclass(frozen=True)
class LevelRep:
    """Diagonal representation on a single finite Hilbert space.

    ``charges`` is an integer array of shape (dim, n_factors).
    """

    group: SymmetryGroup
    charges: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.charges, dtype=np.int64)
        if c.ndim == 1:
            c = c[:, None]
        if c.shape[1] != self.group.n_factors:
            raise ValueError("charge table does not match the group")
        c = c.copy()
        for k, f in enumerate(self.group.factors):
            if isinstance(f, Cyclic):
                c[:, k] = np.mod(c[:, k], f.n)
        c.setflags(write=False)
        object.__setattr__(self, "charges", c)

    @property
    def dim(self) -> int:
        return self.charges.shape[0]

    def phases(self, g: GroupElement) -> np.ndarray:
        return _phases(self.group, self.charges, g)

    def unitary(self, g: GroupElement) -> np.ndarray:
        return np.diag(self.phases(g))

    def level_charge(self, i: int) -> DualCharge:
        return DualCharge(self.group, tuple(int(x) for x in self.charges[i]))

    def sector_mask(self) -> np.ndarray:
        """Boolean matrix: True where row and column levels carry equal charge."""
        c = self.charges
        return np.all(c[:, None, :] == c[None, :, :], axis=2)


@dataclass(frozen=True)
class OnsiteRep:
    """Charges of the basis levels at every site.

    ``charges[i][l]`` is the DualCharge of level ``l`` at the i-th site in
    geometry order.
    """

    group: SymmetryGroup
    charges: tuple

    def __post_init__(self):
        object.__setattr__(self, "charges", tuple(tuple(c) for c in self.charges))
        for site in self.charges:
            for c in site:
                if c.group != self.group:
                    raise ValueError("charge from another group")

    @classmethod
    def uniform(cls, group: SymmetryGroup, levels: Sequence, n_sites: int) -> "OnsiteRep":
        lv = tuple(c if isinstance(c, DualCharge) else group.dual(c) for c in levels)
        return cls(group, (lv,) * n_sites)

    @property
    def n_sites(self) -> int:
        return len(self.charges)

    @property
    def dims(self) -> tuple:
        return tuple(len(c) for c in self.charges)

    def table(self, pos: int) -> np.ndarray:
        return np.array([c.values for c in self.charges[pos]], dtype=np.int64).reshape(
            len(self.charges[pos]), self.group.n_factors)

    def restrict(self, positions: Iterable[int]) -> LevelRep:
        """Kronecker-sum representation on a set of sites (row-major order)."""
        tot = np.zeros((1, self.group.n_factors), dtype=np.int64)
        for p in positions:
            t = self.table(p)
            tot = (tot[:, None, :] + t[None, :, :]).reshape(-1, self.group.n_factors)
        return LevelRep(self.group, tot)

    def stacked(self, other: "OnsiteRep") -> "OnsiteRep":
        """Site-wise tensor product, level (a, b) -> a * d2 + b."""
        if other.group != self.group:
            raise ValueError("group mismatch")
        if other.n_sites != self.n_sites:
            raise ValueError("site count mismatch")
        sites = []
        for c1, c2 in zip(self.charges, other.charges):
            sites.append(tuple(a + b for a in c1 for b in c2))
        return OnsiteRep(self.group, tuple(sites))


def rep_unitary(rep: OnsiteRep, g: GroupElement, site: int) -> np.ndarray:
    """Diagonal on-site unitary at site position ``site``."""
    if not 0 <= site < rep.n_sites:
        raise IndexError("site outside the chain")
    return np.diag(_phases(rep.group, rep.table(site), g))


def _local_rep(rep, positions):
    if isinstance(rep, LevelRep):
        return rep
    return rep.restrict(positions)


def is_invariant(A: np.ndarray, rep, positions=None, gens=None, tol: float = 1e-10):
    """Check that a local operator commutes with the symmetry.

    ``A`` acts on the sites at ``positions`` (or on the space of a LevelRep).
    Without ``gens`` the U1 factors are tested through the charge commutator
    and cyclic factors through their generator.  Returns (ok, defect).
    """
    lrep = _local_rep(rep, positions)
    A = np.asarray(A)
    defect = 0.0
    if gens is None:
        for k, f in enumerate(lrep.group.factors):
            q = lrep.charges[:, k].astype(float)
            if isinstance(f, U1):
                C = (q[:, None] - q[None, :]) * A
            else:
                ph = np.exp(-1j * TWO_PI * q / f.n)
                C = (ph[:, None] - ph[None, :]) * A
            if C.size:
                defect = max(defect, float(np.linalg.norm(C, 2)))
    else:
        for g in gens:
            ph = lrep.phases(g)
            C = (ph[:, None] - ph[None, :]) * A
            if C.size:
                defect = max(defect, float(np.linalg.norm(C, 2)))
    return defect <= tol, defect


def charge_operator(rep: OnsiteRep, geometry, window: Sequence[int], factor: int | None = None):
    """Charge in ``window`` (site labels) of a U1 factor, as an EmbeddedOperator."""
    from .chainspace import EmbeddedOperator

    if factor is None:
        u1 = [k for k, f in enumerate(rep.group.factors) if isinstance(f, U1)]
        if not u1:
            raise ValueError("charge operator needs a U1 factor")
        factor = u1[0]
    elif not isinstance(rep.group.factors[factor], U1):
        raise ValueError("charge operator needs a U1 factor")
    window = tuple(window)
    if not window:
        return EmbeddedOperator(geometry, (), np.zeros((1, 1)))
    lrep = rep.restrict([geometry.position(s) for s in window])
    return EmbeddedOperator(geometry, window, np.diag(lrep.charges[:, factor].astype(float)))


def symmetrize(H, rep: OnsiteRep):
    """Group average of every term, by exact charge-sector projection."""
    from .interaction import Interaction

    geom = H.geometry
    terms = {}
    for S, M in H.terms.items():
        mask = rep.restrict([geom.position(s) for s in S]).sector_mask()
        terms[S] = np.where(mask, M, 0.0)
    return Interaction(geom, terms)
