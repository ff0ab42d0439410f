"""The A_{r-1} affine apartment and its vector-valued distance.

The model space is ``A = {x in R^r : sum(x) = 0}``.  The vector distance of
an ordered pair of points is the coordinate difference sorted into weakly
decreasing order; it refines both the Euclidean and the Finsler distance.
Hermitian-metric pairs enter through ``metric_vector_distance``, which reads
the dilation exponents off the singular values of a transport matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, DimensionError

SUM_TOL = 1e-12
HULL_TOL = 1e-9


def _as_coords(x) -> np.ndarray:
    if isinstance(x, ApartmentPoint):
        return x.coords
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(f"apartment point must be a 1-d vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ApartmentPoint:
    """A point of the trace-zero apartment, coordinates in log scale."""

    coords: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.coords, dtype=float)
        object.__setattr__(self, "coords", arr)
        scale = max(1.0, float(np.max(np.abs(arr))) if arr.size else 1.0)
        if abs(float(arr.sum())) > SUM_TOL * scale:
            raise DegeneracyError(f"coordinates must sum to 0, got sum {arr.sum():g}")

    @property
    def r(self) -> int:
        return self.coords.size

    def __add__(self, other):
        return ApartmentPoint(self.coords + _as_coords(other))

    def __sub__(self, other):
        return ApartmentPoint(self.coords - _as_coords(other))


@dataclass(frozen=True)
class WeylElement:
    """A permutation of sheet labels 0..r-1 acting on coordinates."""

    perm: tuple

    def __post_init__(self):
        p = tuple(int(i) for i in self.perm)
        object.__setattr__(self, "perm", p)
        if sorted(p) != list(range(len(p))):
            raise DegeneracyError(f"not a permutation of 0..{len(p) - 1}: {p}")

    @property
    def r(self) -> int:
        return len(self.perm)

    def apply(self, x) -> np.ndarray:
        """Coordinates of the image point: (w.x)_i = x_{perm(i)}."""
        coords = _as_coords(x)
        if coords.size != self.r:
            raise DimensionError("permutation rank does not match point rank")
        return coords[list(self.perm)]

    def matrix(self) -> np.ndarray:
        m = np.zeros((self.r, self.r))
        for i, j in enumerate(self.perm):
            m[i, j] = 1.0
        return m

    def compose(self, other: "WeylElement") -> "WeylElement":
        """self after other: (self*other).apply(x) == self.apply(other.apply(x))."""
        return WeylElement(tuple(other.perm[i] for i in self.perm))

    def inverse(self) -> "WeylElement":
        inv = [0] * self.r
        for i, j in enumerate(self.perm):
            inv[j] = i
        return WeylElement(tuple(inv))


@dataclass(frozen=True)
class VectorDistance:
    """Weakly decreasing, trace-zero value of the vector distance."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", arr)
        if np.any(np.diff(arr) > 1e-9 * max(1.0, float(np.max(np.abs(arr), initial=0.0)))):
            raise DegeneracyError(f"values must be weakly decreasing, got {arr}")

    @property
    def r(self) -> int:
        return self.values.size

    def partial_sums(self) -> np.ndarray:
        return np.cumsum(self.values)

    def opposition(self) -> "VectorDistance":
        """The opposition involution: negate and reverse the order."""
        return VectorDistance(-self.values[::-1])

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, k):
        return self.values[k]


def vector_distance(x, y) -> VectorDistance:
    """Vector distance from x to y: coordinates of y - x sorted decreasingly.

    Ties are broken by original index, which leaves the value unchanged.
    """
    cx, cy = _as_coords(x), _as_coords(y)
    if cx.size != cy.size:
        raise DimensionError(f"rank mismatch: {cx.size} vs {cy.size}")
    d = cy - cx
    order = np.lexsort((np.arange(d.size), -d))
    return VectorDistance(d[order])


def in_finsler_hull(x, y, z, tol: float = HULL_TOL) -> bool:
    """Is y in the Finsler convex hull of {x, z}?

    Membership on segments is characterized by additivity of the vector
    distance: d(x,y) + d(y,z) = d(x,z) componentwise.
    """
    lhs = vector_distance(x, y).values + vector_distance(y, z).values
    rhs = vector_distance(x, z).values
    scale = max(1.0, float(np.max(np.abs(rhs), initial=0.0)))
    return bool(np.all(np.abs(lhs - rhs) <= tol * scale))


def log_singular_values(t_matrix) -> np.ndarray:
    """Logs of the singular values of a matrix, weakly decreasing."""
    m = np.asarray(t_matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    det = np.linalg.det(m)
    if abs(det) < 1e-14:
        raise DegeneracyError(f"matrix is numerically singular, |det| = {abs(det):g}")
    sv = np.linalg.svd(m, compute_uv=False)
    return np.log(sv)


def metric_vector_distance(t_matrix) -> VectorDistance:
    """Dilation exponents of the hermitian metric transported by t_matrix.

    For T in SL_r(C) this is the vector distance in SL_r(C)/SU_r between the
    standard metric and its pushforward: the sorted log singular values.
    """
    return VectorDistance(log_singular_values(t_matrix))


def log_exterior_power_norm(t_matrix, k: int) -> float:
    """log of the operator norm of the k-th exterior power of t_matrix.

    Computed as the sum of the k largest log singular values; the minor
    matrix is never formed.
    """
    logs = log_singular_values(t_matrix)
    if not 1 <= k <= logs.size:
        raise DimensionError(f"k must be in 1..{logs.size}, got {k}")
    return float(np.sum(logs[:k]))
