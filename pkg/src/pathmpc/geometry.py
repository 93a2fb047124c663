"""Convex polytope obstacles and separation certificates.

Obstacles are intersections of half-planes, O = {p : A p <= b}.  A point p
is strictly outside O exactly when some face has positive margin
A_i p - b_i > 0.  The optimal control layer encodes "outside" through a
dual certificate mu >= 0, sum(mu) = 1 with (A p - b)^T mu >= delta; the
helpers here evaluate that form and recover maximizing certificates.
"""

from __future__ import annotations

import numpy as np


class GeometryError(ValueError):
    """Raised for degenerate polytope data (empty or unbounded sets)."""


class ConvexPolytope:
    """Bounded, non-empty intersection of half-planes in the plane.

    Parameters
    ----------
    A : (r, 2) array
        Outward face normals, one row per half-plane.
    b : (r,) array
        Offsets; the set is {p : A p <= b}.

    Boundedness and non-emptiness are checked at construction time by
    enumerating vertices and inspecting the normal fan.
    """

    def __init__(self, A, b):
        A = np.array(A, dtype=float)
        b = np.array(b, dtype=float)
        if A.ndim != 2 or A.shape[1] != 2:
            raise GeometryError(f"A must be (r, 2), got {A.shape}")
        if b.shape != (A.shape[0],):
            raise GeometryError("b length must match the number of rows of A")
        if A.shape[0] < 3:
            raise GeometryError("a bounded planar polytope needs at least 3 faces")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms < 1e-12):
            raise GeometryError("zero row in A")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise GeometryError("non-finite entries in polytope data")
        self.A = A
        self.b = b
        # Recession cone must be trivial: sorted outward normal directions
        # may not leave a gap of pi or more.
        ang = np.sort(np.arctan2(A[:, 1], A[:, 0]))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2.0 * np.pi]]))
        if gaps.max() >= np.pi - 1e-12:
            raise GeometryError("polytope is unbounded")
        self.vertices = self._enumerate_vertices()
        if len(self.vertices) == 0:
            raise GeometryError("polytope is empty")

    def _enumerate_vertices(self) -> np.ndarray:
        A, b = self.A, self.b
        r = A.shape[0]
        points = []
        for i in range(r):
            for j in range(i + 1, r):
                M = A[[i, j]]
                det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
                if abs(det) < 1e-12 * max(1.0, np.abs(M).max()) ** 2:
                    continue
                p = np.linalg.solve(M, b[[i, j]])
                if np.all(A @ p <= b + 1e-9 * (1.0 + np.abs(b))):
                    points.append(p)
        if not points:
            return np.empty((0, 2))
        uniq = []
        for p in points:
            if all(np.linalg.norm(p - q) > 1e-9 for q in uniq):
                uniq.append(p)
        return np.array(uniq)

    @classmethod
    def from_box(cls, xmin: float, ymin: float, xmax: float, ymax: float):
        if not (xmin < xmax and ymin < ymax):
            raise GeometryError("box requires xmin < xmax and ymin < ymax")
        A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        b = np.array([xmax, -xmin, ymax, -ymin])
        return cls(A, b)

    def face_margins(self, points) -> np.ndarray:
        """A p - b for each face; trailing dim of `points` must be 2."""
        p = np.asarray(points, dtype=float)
        return p @ self.A.T - self.b

    def max_margin(self, points) -> np.ndarray:
        """Best single-face separation margin; > 0 means outside."""
        return self.face_margins(points).max(axis=-1)

    def contains(self, points, tol: float = 0.0):
        return self.max_margin(points) <= tol

    def __repr__(self):
        return f"ConvexPolytope({self.A.shape[0]} faces)"


def farkas_margin(poly: ConvexPolytope, point, mu) -> float:
    """Certified separation (A p - b)^T mu for a normalized certificate.

    `mu` must be non-negative and sum to 1; the value is then a lower
    bound on the best face margin, with equality when mu concentrates on
    the maximizing face.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (poly.A.shape[0],):
        raise ValueError("mu length must match the number of faces")
    if np.any(mu < -1e-12):
        raise ValueError("mu must be non-negative")
    return float(poly.face_margins(np.asarray(point, dtype=float)) @ mu)


def best_certificate(poly: ConvexPolytope, point):
    """One-hot certificate on the face with the largest margin."""
    margins = poly.face_margins(np.asarray(point, dtype=float))
    mu = np.zeros(poly.A.shape[0])
    mu[int(np.argmax(margins))] = 1.0
    return mu, float(margins.max())


def certificate_exists(poly: ConvexPolytope, point, delta: float) -> bool:
    """Whether some normalized certificate achieves margin > delta.

    For certificates constrained to the simplex the best achievable value
    is the maximum face margin, so this reduces to face enumeration.  The
    inequality is strict: a point on the boundary has no separating
    certificate at delta = 0.
    """
    if delta < 0.0:
        raise ValueError("delta must be non-negative")
    return bool(poly.max_margin(np.asarray(point, dtype=float)) > delta)


def inflate(poly: ConvexPolytope, radius: float) -> ConvexPolytope:
    """Minkowski-grow a polytope by a disc of the given radius.

    Each face is pushed outward by radius * ||A_i||, which is exact for
    the disc sum restricted to the same normal fan.
    """
    if radius < 0.0:
        raise ValueError("radius must be non-negative")
    if radius == 0.0:
        return poly
    return ConvexPolytope(poly.A, poly.b + radius * np.linalg.norm(poly.A, axis=1))
