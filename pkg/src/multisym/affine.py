"""Finite-dimensional affine algebra in a fixed chart.

Points are coordinate vectors relative to an explicit origin, affine maps are
(linear, translation) pairs, and affine functionals are (covector, constant)
pairs.  Quotients by a linear subspace use the orthogonal complement in the
chart metric as the canonical slice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_TOL = 1e-10
CONTAINMENT_TOL = 1e-10


@dataclass(frozen=True)
class AffinePoint:
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float).reshape(-1))

    @property
    def dim(self) -> int:
        return self.coords.size

    def __add__(self, v) -> "AffinePoint":
        return AffinePoint(self.coords + np.asarray(v, dtype=float))

    def __sub__(self, other: "AffinePoint") -> np.ndarray:
        return self.coords - other.coords


@dataclass(frozen=True)
class AffineMap:
    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        lin = np.atleast_2d(np.asarray(self.linear, dtype=float))
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if lin.shape[0] != t.size:
            raise ValueError(f"translation length {t.size} does not match {lin.shape[0]} output rows")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", t)

    @property
    def source_dim(self) -> int:
        return self.linear.shape[1]

    @property
    def target_dim(self) -> int:
        return self.linear.shape[0]

    def __call__(self, a: AffinePoint) -> AffinePoint:
        return apply_affine_map(self, a)

    def compose(self, inner: "AffineMap") -> "AffineMap":
        """self o inner."""
        if inner.target_dim != self.source_dim:
            raise ValueError("dimension mismatch in composition")
        return AffineMap(self.linear @ inner.linear, self.linear @ inner.translation + self.translation)

    @classmethod
    def identity(cls, k: int) -> "AffineMap":
        return cls(np.eye(k), np.zeros(k))


@dataclass(frozen=True)
class AffineDualElement:
    """The affine functional a -> covector . a + constant."""

    covector: np.ndarray
    constant: float

    def __post_init__(self):
        object.__setattr__(self, "covector", np.asarray(self.covector, dtype=float).reshape(-1))
        object.__setattr__(self, "constant", float(self.constant))

    def __call__(self, a: AffinePoint) -> float:
        if a.dim != self.covector.size:
            raise ValueError("dimension mismatch")
        return float(self.covector @ a.coords + self.constant)

    def linear_part(self) -> np.ndarray:
        return self.covector

    def as_vector(self) -> np.ndarray:
        """Coordinates in the (k+1)-dimensional dual: covector then constant."""
        return np.append(self.covector, self.constant)


def apply_affine_map(f: AffineMap, a: AffinePoint) -> AffinePoint:
    if a.dim != f.source_dim:
        raise ValueError(f"point of dimension {a.dim} given to a map from dimension {f.source_dim}")
    return AffinePoint(f.linear @ a.coords + f.translation)


def linear_part(f: AffineMap) -> np.ndarray:
    return f.linear


def affine_dual_map(f: AffineMap):
    """Pullback f*: functionals on the target -> functionals on the source."""

    def pull(b: AffineDualElement) -> AffineDualElement:
        if b.covector.size != f.target_dim:
            raise ValueError("dual element does not live on the target of the map")
        return AffineDualElement(f.linear.T @ b.covector, b.covector @ f.translation + b.constant)

    return pull


def dual_map_matrix(f: AffineMap) -> np.ndarray:
    """Matrix of the pullback acting on (covector, constant) coordinates."""
    m, k = f.linear.shape
    out = np.zeros((k + 1, m + 1))
    out[:k, :m] = f.linear.T
    out[k, :m] = f.translation
    out[k, m] = 1.0
    return out


def _orthonormal_basis(V) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.size == 0 or V.shape[1] == 0:
        return np.zeros((V.shape[0] if V.ndim == 2 else 0, 0))
    s = np.linalg.svd(V, compute_uv=False)
    if s.size < V.shape[1] or s[-1] <= RANK_TOL * max(1.0, s[0]):
        raise ValueError("subspace basis columns are not linearly independent")
    Qm, _ = np.linalg.qr(V)
    return Qm


def _projector_complement(V, k) -> np.ndarray:
    Qm = _orthonormal_basis(np.asarray(V, dtype=float).reshape(k, -1))
    return np.eye(k) - Qm @ Qm.T


def quotient_project(a: AffinePoint, subspace_basis) -> AffinePoint:
    """Canonical representative of a + V: the component orthogonal to V."""
    return AffinePoint(_projector_complement(subspace_basis, a.dim) @ a.coords)


def factor_map(f: AffineMap, V, W) -> AffineMap:
    """The induced map [f] between quotients by V (source) and W (target).

    Represented on canonical representatives, so ``quotient_project(f(a), W) ==
    factor_map(f, V, W)(quotient_project(a, V))``.
    """
    k, m = f.source_dim, f.target_dim
    V = np.asarray(V, dtype=float).reshape(k, -1)
    W = np.asarray(W, dtype=float).reshape(m, -1)
    P_W = _projector_complement(W, m)
    P_V = _projector_complement(V, k)
    residual = float(np.max(np.abs(P_W @ f.linear @ V), initial=0.0))
    if residual > CONTAINMENT_TOL:
        raise ValueError(f"linear part does not map V into W (residual {residual:.3e})")
    return AffineMap(P_W @ f.linear @ P_V, P_W @ f.translation)

