"""Linear-algebra primitives on the unit sphere S^{d-1}."""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from usaav.config import DEFAULT_PLANE, GAUGE_ORTHO_TOL, UNIT_NORM_TOL
from usaav.errors import DimensionError, GeometryError


@dataclass(frozen=True, eq=False)
class UnitVector:
    """A point on S^{d-1}. Coordinates are renormalized on construction
    when they drift more than UNIT_NORM_TOL from unit length."""

    coords: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.coords, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise DimensionError(
                f"Error: a unit vector needs d >= 2 coordinates, got shape "
                f"{arr.shape}."
            )
        norm = float(np.linalg.norm(arr))
        if not np.isfinite(norm) or norm == 0.0:
            raise GeometryError("Error: cannot normalize a zero vector.")
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            arr = arr / norm
        arr.setflags(write=False)
        object.__setattr__(self, "coords", arr)

    @property
    def dim(self) -> int:
        return int(self.coords.size)

    @classmethod
    def basis(cls, d: int, k: int) -> "UnitVector":
        e = np.zeros(d)
        e[k] = 1.0
        return cls(e)

    def __neg__(self) -> "UnitVector":
        return UnitVector(-self.coords)


VectorLike = Union[UnitVector, Sequence[float], np.ndarray]


def as_array(x: VectorLike) -> np.ndarray:
    if isinstance(x, UnitVector):
        return x.coords
    return np.asarray(x, dtype=float)


def _check_same_dim(x: np.ndarray, v: np.ndarray) -> None:
    if x.shape[-1] != v.shape[-1]:
        raise DimensionError(
            f"Error: dimension mismatch ({x.shape[-1]} vs {v.shape[-1]})."
        )


def project_tangent(x: VectorLike, v: VectorLike) -> np.ndarray:
    """Returns v - <x, v> x, the component of v tangent to the sphere at x.

    Works row-wise when x and v are (n, d) arrays.
    """
    xa, va = as_array(x), as_array(v)
    _check_same_dim(xa, va)
    inner = np.sum(xa * va, axis=-1, keepdims=True)
    return va - inner * xa


def normalize_rows(X: np.ndarray) -> np.ndarray:
    """Euclidean renormalization of every row of X."""
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    return X / norms


def geodesic_angle(x: VectorLike, y: VectorLike) -> float:
    """Great-circle distance in [0, pi]."""
    xa, ya = as_array(x), as_array(y)
    _check_same_dim(xa, ya)
    return float(np.arccos(np.clip(np.dot(xa, ya), -1.0, 1.0)))


def pairwise_angles(X: np.ndarray) -> np.ndarray:
    return np.arccos(np.clip(X @ X.T, -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class RotationPlane:
    """Oriented two-dimensional subspace rotated by planar rotations.

    By default the plane is span{e_a, e_b} of two coordinate axes and the
    rotation turns e_a towards e_b. When `basis` is given (two orthonormal
    rows) the plane is span of those rows instead.
    """

    axis_a: int = DEFAULT_PLANE[0]
    axis_b: int = DEFAULT_PLANE[1]
    basis: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.basis is None and self.axis_a == self.axis_b:
            raise GeometryError(
                f"Error: rotation plane axes must differ, got "
                f"{self.axis_a} twice."
            )

    @classmethod
    def from_vectors(cls, a: VectorLike, b: VectorLike) -> "RotationPlane":
        """Plane spanned by a and b, orthonormalized by Gram-Schmidt."""
        e1 = as_array(a).astype(float)
        e2 = as_array(b).astype(float)
        _check_same_dim(e1, e2)
        e1 = e1 / np.linalg.norm(e1)
        e2 = e2 - np.dot(e1, e2) * e1
        norm2 = np.linalg.norm(e2)
        if norm2 < 1e-12:
            raise GeometryError("Error: plane vectors are parallel.")
        basis = np.vstack([e1, e2 / norm2])
        basis.setflags(write=False)
        return cls(axis_a=-1, axis_b=-1, basis=basis)

    @property
    def is_coordinate(self) -> bool:
        return self.basis is None

    def validate(self, d: int) -> None:
        if self.basis is not None:
            if self.basis.shape != (2, d):
                raise DimensionError(
                    f"Error: plane basis has shape {self.basis.shape}, "
                    f"expected (2, {d})."
                )
            return
        for axis in (self.axis_a, self.axis_b):
            if not 0 <= axis < d:
                raise DimensionError(
                    f"Error: rotation axis {axis} out of range for d={d}."
                )

    def rotate(self, X: np.ndarray, angles) -> np.ndarray:
        """Rotates X (shape (d,) or (n, d)) by `angles` (scalar or (n,)).

        Coordinates outside a coordinate plane are copied unchanged.
        """
        X = np.asarray(X, dtype=float)
        self.validate(X.shape[-1])
        theta = np.asarray(angles, dtype=float)
        c, s = np.cos(theta), np.sin(theta)
        if self.basis is None:
            out = np.array(X, dtype=float, copy=True)
            xa = X[..., self.axis_a]
            xb = X[..., self.axis_b]
            out[..., self.axis_a] = c * xa - s * xb
            out[..., self.axis_b] = s * xa + c * xb
            return out
        e1, e2 = self.basis
        pa = X @ e1
        pb = X @ e2
        da = (c - 1.0) * pa - s * pb
        db = s * pa + (c - 1.0) * pb
        return (
            X + np.asarray(da)[..., None] * e1
            + np.asarray(db)[..., None] * e2
        )

    def matrix(self, angle: float, d: int) -> np.ndarray:
        return self.rotate(np.eye(d), angle).T


@dataclass(frozen=True, eq=False)
class PlanarRotation:
    """Rotation by `angle` radians in the plane of axes (axis_a, axis_b).

    A general plane is available through `from_vectors`.
    """

    axis_a: int = DEFAULT_PLANE[0]
    axis_b: int = DEFAULT_PLANE[1]
    angle: float = 0.0
    basis: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.basis is None and self.axis_a == self.axis_b:
            raise GeometryError(
                f"Error: rotation axes must differ, got {self.axis_a} twice."
            )

    @classmethod
    def from_vectors(
        cls, a: VectorLike, b: VectorLike, angle: float
    ) -> "PlanarRotation":
        plane = RotationPlane.from_vectors(a, b)
        return cls(axis_a=-1, axis_b=-1, angle=angle, basis=plane.basis)

    @property
    def plane(self) -> RotationPlane:
        return RotationPlane(self.axis_a, self.axis_b, self.basis)

    def then(self, angle: float) -> "PlanarRotation":
        """The rotation in the same plane by self.angle + angle."""
        return PlanarRotation(
            self.axis_a, self.axis_b, self.angle + angle, self.basis
        )

    def matrix(self, d: int) -> np.ndarray:
        return self.plane.matrix(self.angle, d)


def apply_rotation(r: PlanarRotation, x: VectorLike) -> UnitVector:
    return UnitVector(r.plane.rotate(as_array(x), r.angle))


@dataclass(frozen=True, eq=False)
class OrthogonalGauge:
    """An element of O(d). Use `checked` to validate arbitrary input."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        M = np.array(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionError(
                f"Error: gauge must be square, got shape {M.shape}."
            )
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def checked(
        cls, matrix: np.ndarray, tol: float = GAUGE_ORTHO_TOL
    ) -> "OrthogonalGauge":
        gauge = cls(matrix)
        if gauge.residual() > tol:
            raise GeometryError(
                f"Error: gauge is not orthogonal "
                f"(residual {gauge.residual():.3e} > {tol:.1e})."
            )
        return gauge

    @classmethod
    def identity(cls, d: int) -> "OrthogonalGauge":
        return cls(np.eye(d))

    @classmethod
    def rotation(
        cls, angle: float, d: int, plane: Optional[RotationPlane] = None
    ) -> "OrthogonalGauge":
        return cls((plane or RotationPlane()).matrix(angle, d))

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])

    def residual(self) -> float:
        """Frobenius norm of M^T M - I."""
        M = self.matrix
        return float(np.linalg.norm(M.T @ M - np.eye(M.shape[0])))


def householder_gauge(u: VectorLike, g: VectorLike) -> OrthogonalGauge:
    """Orthogonal map Psi with Psi u = g.

    Psi = 2 v v^T - I with v = (u + g) / |u + g|, and Psi = -I when
    g = -u.
    """
    ua, ga = as_array(u), as_array(g)
    _check_same_dim(ua, ga)
    d = ua.size
    w = ua + ga
    norm = np.linalg.norm(w)
    if norm <= UNIT_NORM_TOL:
        return OrthogonalGauge(-np.eye(d))
    v = w / norm
    return OrthogonalGauge(2.0 * np.outer(v, v) - np.eye(d))


def exp_map(x: VectorLike, v: VectorLike) -> np.ndarray:
    """Exponential map of the sphere at x applied to a tangent vector v."""
    xa, va = as_array(x), as_array(v)
    _check_same_dim(xa, va)
    t = np.linalg.norm(va)
    if t == 0.0:
        return np.array(xa, dtype=float, copy=True)
    return np.cos(t) * xa + np.sin(t) * (va / t)


def tangent_basis(x: VectorLike) -> np.ndarray:
    """(d-1, d) orthonormal basis of the tangent space at x."""
    xa = as_array(x)
    # the last d-1 right singular vectors span x^perp
    _, _, vt = np.linalg.svd(xa[None, :])
    return vt[1:]


def uniform_sphere(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return normalize_rows(rng.standard_normal((n, d)))


def fibonacci_sphere(n: int) -> np.ndarray:
    """n nearly uniform points on S^2 (golden-angle spiral)."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
