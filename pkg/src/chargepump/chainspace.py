"""Finite chain Hilbert space: geometry, local operators, states, diagnostics.

Basis ordering is row-major with the leftmost site as the slowest index, so
a product of levels (l_0, ..., l_{n-1}) sits at index
``np.ravel_multi_index(levels, dims)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ChainGeometry",
    "EmbeddedOperator",
    "ChainState",
    "product_state",
    "apply",
    "apply_matrix",
    "reduced_density",
    "window_populations",
    "window_purity",
    "cut_entropy",
    "trace_distance",
    "extend_matrix",
    "save_array",
    "load_array",
]


@dataclass(frozen=True)
class ChainGeometry:
    sites: tuple
    dims: tuple
    ring: bool = False

    def __post_init__(self):
        sites = tuple(int(s) for s in self.sites)
        dims = tuple(int(d) for d in self.dims)
        if len(sites) < 2:
            raise ValueError("a chain needs at least two sites")
        if any(b - a != 1 for a, b in zip(sites, sites[1:])):
            raise ValueError("site labels must be consecutive integers")
        if len(dims) != len(sites) or any(d < 1 for d in dims):
            raise ValueError("one positive local dimension per site")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def interval(cls, first: int, last: int, d: int | Sequence[int], ring: bool = False):
        n = last - first + 1
        dims = (d,) * n if np.isscalar(d) else tuple(d)
        return cls(tuple(range(first, last + 1)), dims, ring)

    @classmethod
    def centered(cls, n_sites: int, d: int, ring: bool = False):
        """Sites -n//2 .. n - n//2 - 1, so the cut edge (0, 1) is central."""
        first = -(n_sites // 2)
        return cls.interval(first, first + n_sites - 1, d, ring)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def first(self) -> int:
        return self.sites[0]

    @property
    def last(self) -> int:
        return self.sites[-1]

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    def open(self) -> "ChainGeometry":
        return ChainGeometry(self.sites, self.dims, False)

    def position(self, site: int) -> int:
        p = site - self.sites[0]
        if not 0 <= p < len(self.sites):
            raise ValueError(f"site {site} not in chain")
        return p

    def positions(self, support: Iterable[int]) -> tuple:
        return tuple(self.position(s) for s in support)

    def dim_of(self, support: Iterable[int]) -> int:
        return int(np.prod([self.dims[self.position(s)] for s in support], dtype=np.int64))

    def local_dims(self, support: Iterable[int]) -> tuple:
        return tuple(self.dims[self.position(s)] for s in support)

    def contains(self, site: int) -> bool:
        return self.sites[0] <= site <= self.sites[-1]

    def span(self, a: int, length: int) -> tuple:
        """``length`` consecutive sites starting at ``a`` (wrapping on a ring)."""
        n = self.n_sites
        if length > n:
            raise ValueError("support longer than the chain")
        p = self.position(a)
        if not self.ring and p + length > n:
            raise ValueError("support leaves the open chain")
        return tuple(self.sites[(p + k) % n] for k in range(length))

    def interval_support(self, a: int, b: int) -> tuple:
        """Sites from a to b; on a ring a > b denotes the wrapping arc."""
        if a <= b:
            return tuple(range(a, b + 1))
        if not self.ring:
            raise ValueError("empty or reversed interval on an open chain")
        return self.span(a, (self.position(b) - self.position(a)) % self.n_sites + 1)

    def is_support(self, S: Sequence[int]) -> bool:
        S = tuple(S)
        if len(S) == 0:
            return True
        try:
            return self.span(S[0], len(S)) == S
        except ValueError:
            return False

    def wraps(self, S: Sequence[int]) -> bool:
        return any(b < a for a, b in zip(S, S[1:]))

    def hull(self, sites: Iterable[int]) -> tuple:
        """Smallest support containing the given sites.

        On a ring the shortest covering arc is chosen (ties prefer the
        non-wrapping arc).
        """
        pts = sorted({int(s) for s in sites})
        if not pts:
            return ()
        if not self.ring:
            return tuple(range(pts[0], pts[-1] + 1))
        n = self.n_sites
        pos = [self.position(s) for s in pts]
        best = None
        for p in pos:
            length = max((q - p) % n for q in pos) + 1
            key = (length, p + length > n)
            if best is None or key < best[0]:
                best = (key, p)
        return self.span(self.sites[best[1]], best[0][0])

    def diam(self, S: Sequence[int]) -> int:
        return max(len(S) - 1, 0)

    def distance(self, i: int, j: int) -> int:
        d = abs(self.position(i) - self.position(j))
        return min(d, self.n_sites - d) if self.ring else d

    def set_distance(self, X: Iterable[int], Y: Iterable[int]) -> int:
        return min(self.distance(x, y) for x in X for y in Y)

    def to_config(self) -> dict:
        return {"first": self.first, "last": self.last, "dims": list(self.dims),
                "boundary": "ring" if self.ring else "open"}


def extend_matrix(geometry: ChainGeometry, M: np.ndarray, S: Sequence[int], T: Sequence[int]):
    """Embed an operator on support S into a larger support T (S within T)."""
    S, T = tuple(S), tuple(T)
    if S == T:
        return M
    missing = [s for s in S if s not in T]
    if missing:
        raise ValueError("support not contained in the target")
    dT = geometry.local_dims(T)
    pos = [T.index(s) for s in S]
    eye = np.eye(int(np.prod(dT)), dtype=complex)
    return apply_matrix(M, pos, dT, batch=eye)


def apply_matrix(M: np.ndarray, positions: Sequence[int], dims: Sequence[int], vec=None, batch=None):
    """Act with M on the tensor factors ``positions`` of a vector.

    ``batch`` is a matrix whose columns are acted on (used to build
    embedded matrices); otherwise ``vec`` is a single vector.
    """
    dims = tuple(dims)
    k = len(positions)
    if batch is not None:
        B = np.asarray(batch)
        ncol = B.shape[1]
        T = B.reshape(dims + (ncol,))
        if k == 0:
            return M[0, 0] * B
        sub = tuple(dims[p] for p in positions)
        op = M.reshape(sub + sub)
        out = np.tensordot(op, T, axes=(list(range(k, 2 * k)), list(positions)))
        out = np.moveaxis(out, list(range(k)), list(positions))
        return out.reshape(B.shape)
    v = np.asarray(vec)
    if k == 0:
        return M[0, 0] * v
    sub = tuple(dims[p] for p in positions)
    op = M.reshape(sub + sub)
    psi = v.reshape(dims)
    out = np.tensordot(op, psi, axes=(list(range(k, 2 * k)), list(positions)))
    out = np.moveaxis(out, list(range(k)), list(positions))
    return out.reshape(-1)


@dataclass(frozen=True, eq=False)
class EmbeddedOperator:
    """A matrix on a support of consecutive sites, acting on full-chain vectors."""

    geometry: ChainGeometry
    support: tuple
    matrix: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        S = tuple(int(s) for s in self.support)
        object.__setattr__(self, "support", S)
        M = np.asarray(self.matrix, dtype=complex)
        d = self.geometry.dim_of(S) if S else 1
        if M.shape != (d, d):
            raise ValueError(f"matrix shape {M.shape} does not match support dimension {d}")
        if S and not self.geometry.is_support(S):
            raise ValueError(f"support {S} is not a run of consecutive sites")
        if self.hermitian and np.linalg.norm(M - M.conj().T) > 1e-12 * max(1.0, np.linalg.norm(M)):
            raise ValueError("matrix claimed Hermitian is not")
        object.__setattr__(self, "matrix", M)

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return apply_matrix(self.matrix, self.geometry.positions(self.support),
                            self.geometry.dims, vec)

    def on(self, T: Sequence[int]) -> np.ndarray:
        return extend_matrix(self.geometry, self.matrix, self.support, T)

    def full(self) -> np.ndarray:
        return self.on(self.geometry.sites) if self.support else \
            self.matrix[0, 0] * np.eye(self.geometry.total_dim)

    def __matmul__(self, other: "EmbeddedOperator") -> "EmbeddedOperator":
        T = self.geometry.hull(self.support + other.support)
        return EmbeddedOperator(self.geometry, T, self.on(T) @ other.on(T))


@dataclass(frozen=True, eq=False)
class ChainState:
    geometry: ChainGeometry
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=complex).reshape(-1)
        if v.size != self.geometry.total_dim:
            raise ValueError("vector length does not match the chain dimension")
        nrm = np.linalg.norm(v)
        if abs(nrm - 1.0) > 1e-10:
            raise ValueError(f"state not normalized (norm {nrm})")
        object.__setattr__(self, "vector", v)

    def overlap(self, other: "ChainState") -> complex:
        return complex(np.vdot(self.vector, other.vector))

    def fidelity(self, other: "ChainState") -> float:
        return abs(self.overlap(other))

    def expectation(self, A: EmbeddedOperator) -> complex:
        return complex(np.vdot(self.vector, A.apply(self.vector)))


def product_state(geometry: ChainGeometry, levels: Sequence[int]) -> ChainState:
    levels = tuple(int(l) for l in levels)
    if len(levels) != geometry.n_sites:
        raise ValueError("one level per site")
    for l, d in zip(levels, geometry.dims):
        if not 0 <= l < d:
            raise ValueError(f"level {l} out of range for local dimension {d}")
    v = np.zeros(geometry.total_dim, dtype=complex)
    v[np.ravel_multi_index(levels, geometry.dims)] = 1.0
    return ChainState(geometry, v)


def apply(A: EmbeddedOperator, psi) -> np.ndarray:
    if isinstance(psi, ChainState):
        if psi.geometry.sites != A.geometry.sites or psi.geometry.dims != A.geometry.dims:
            raise ValueError("geometry mismatch")
        psi = psi.vector
    return A.apply(psi)


def _vec(psi):
    return psi.vector if isinstance(psi, ChainState) else np.asarray(psi)


def reduced_density(psi, geometry: ChainGeometry, window: Sequence[int]) -> np.ndarray:
    """Partial trace onto the sites of ``window`` (in the order given)."""
    M = _split(psi, geometry, tuple(window))
    return M @ M.conj().T


def _split(psi, geometry: ChainGeometry, window: tuple) -> np.ndarray:
    pos = [geometry.position(s) for s in window]
    T = _vec(psi).reshape(geometry.dims)
    rest = [p for p in range(geometry.n_sites) if p not in pos]
    return np.transpose(T, pos + rest).reshape(geometry.dim_of(window) if window else 1, -1)


def window_populations(psi, geometry: ChainGeometry, window: Sequence[int]) -> np.ndarray:
    """Diagonal of the reduced density matrix on ``window``, without forming it."""
    M = _split(psi, geometry, tuple(window))
    return np.sum(np.abs(M) ** 2, axis=1)


def window_purity(psi, geometry: ChainGeometry, window: Sequence[int]) -> float:
    """Tr rho_W^2, computed on whichever side of the bipartition is smaller."""
    M = _split(psi, geometry, tuple(window))
    R = M @ M.conj().T if M.shape[0] <= M.shape[1] else M.conj().T @ M
    return float(np.real(np.vdot(R, R)))


def cut_entropy(psi, geometry: ChainGeometry, edge: int) -> float:
    """Von Neumann entropy (nats) of the sites <= edge."""
    if geometry.ring:
        raise ValueError("cut entropy needs an open chain")
    p = geometry.position(edge)
    if p >= geometry.n_sites - 1:
        raise ValueError("edge must be interior")
    dL = int(np.prod(geometry.dims[: p + 1]))
    s = np.linalg.svd(_vec(psi).reshape(dL, -1), compute_uv=False)
    w = s ** 2
    w = w[w > 1e-300]
    return float(max(0.0, -np.sum(w * np.log(w))))


def trace_distance(rho1: np.ndarray, rho2: np.ndarray) -> float:
    """Trace norm of the difference (ranges over [0, 2])."""
    if rho1.shape != rho2.shape:
        raise ValueError("dimension mismatch")
    return float(np.sum(np.linalg.svd(rho1 - rho2, compute_uv=False)))


def save_array(path, array: np.ndarray) -> None:
    """Write little-endian complex128 data plus a JSON shape header."""
    path = Path(path)
    a = np.ascontiguousarray(array, dtype="<c16")
    path.with_suffix(".bin").write_bytes(a.tobytes())
    header = {"dtype": "complex128", "byteorder": "little", "shape": list(a.shape),
              "order": "C"}
    path.with_suffix(".json").write_text(json.dumps(header))


def load_array(path) -> np.ndarray:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<c16")
    return data.reshape(header["shape"]).astype(complex)
