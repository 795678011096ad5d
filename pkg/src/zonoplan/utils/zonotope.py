"""
Exact 2D zonotope arithmetic.
A zonotope <c, G> is the set {c + sum_k beta_k g_k : beta_k in [-1, 1]}.
All values are immutable: operations return new objects.
"""

from __future__ import annotations
import json
import math

import numpy as np

########################### CONSTANTS ##########################################
# -----------------------------------------------------------------------------
# Generators shorter than this are dropped
ZERO_TOL = 1e-12
# Generators with |sin(angle)| below this are merged
PARALLEL_TOL = 1e-10
# Half-plane tolerance for point containment
CONTAINS_TOL = 1e-12

################################# TYPES ########################################
# -----------------------------------------------------------------------------
def _frozen(array) -> np.ndarray:
    """Returns a read-only float copy of `array`"""
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


class Zonotope():
    """
    2D zonotope with a center (2,) and a generator matrix (m, 2), one generator per row.

    Generators are normalized at construction unless `normalize` is False:
    zero generators are dropped and parallel generators are merged.
    """

    __slots__ = ("_c", "_G")

    def __init__(self, center, generators=(), normalize=True) -> None:
        c = np.asarray(center, dtype=float).reshape(2)
        G = np.asarray(generators, dtype=float).reshape(-1, 2)
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(G))):
            raise ValueError("Zonotope center and generators must be finite")
        self._c = _frozen(c)
        self._G = _frozen(normalize_generators(G) if normalize else G)

    @property
    def center(self) -> np.ndarray:
        """Center (meters, world frame)"""
        return self._c

    @property
    def generators(self) -> np.ndarray:
        """Generator matrix, shape (m, 2)"""
        return self._G

    @property
    def m(self) -> int:
        """Number of generators"""
        return self._G.shape[0]

    def translate(self, v) -> Zonotope:
        return Zonotope(self._c + np.asarray(v, dtype=float), self._G, normalize=False)

    def generator_radius(self) -> float:
        """Sum of generator norms: every point lies within this distance of the center."""
        return float(np.sum(np.linalg.norm(self._G, axis=1)))

    def support(self, u) -> float:
        """Support function along direction `u`"""
        u = np.asarray(u, dtype=float)
        return float(self._c @ u + np.sum(np.abs(self._G @ u)))

    def to_dict(self) -> dict:
        return {"c": [float(x) for x in self._c], "G": [[float(x) for x in g] for g in self._G]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> Zonotope:
        if not isinstance(data, dict) or "c" not in data:
            raise TypeError("A zonotope must be given as {'c': [x, y], 'G': [[gx, gy], ...]}")
        return cls(data["c"], data.get("G", []))

    @classmethod
    def from_json(cls, text: str) -> Zonotope:
        return cls.from_dict(json.loads(text))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Zonotope):
            return NotImplemented
        return np.array_equal(self._c, other._c) and np.array_equal(self._G, other._G)

    def __repr__(self) -> str:
        return f"Zonotope(c={self._c.tolist()}, G={self._G.tolist()})"

    # '+' overload, Minkowski sum
    def __add__(self, other: Zonotope) -> Zonotope:
        return minkowski_sum(self, other)

    # '@' overload, linear map
    __array_ufunc__ = None

    def __rmatmul__(self, A) -> Zonotope:
        return linear_map(A, self)
# ------------------------------------------------


class VertexPolygon():
    """
    Convex polygon given by its vertices in strict counterclockwise order,
    starting from the lexicographically smallest vertex.
    """

    __slots__ = ("_V", "source")

    def __init__(self, vertices, source: Zonotope = None) -> None:
        self._V = _frozen(np.asarray(vertices, dtype=float).reshape(-1, 2))
        self.source = source

    @property
    def vertices(self) -> np.ndarray:
        return self._V

    def __len__(self) -> int:
        return self._V.shape[0]

    def segments(self) -> tuple:
        """Returns (starts, ends) of the boundary segments, both (N, 2)."""
        return self._V, np.roll(self._V, -1, axis=0)

    def __repr__(self) -> str:
        return f"VertexPolygon({self._V.tolist()})"
# ------------------------------------------------

############################### NORMALIZATION ##################################
# -----------------------------------------------------------------------------
def normalize_generators(G: np.ndarray) -> np.ndarray:
    """
    Drops generators with norm < ZERO_TOL and merges parallel generators.
    A merged generator keeps the direction of the first one and sums the projected lengths.
    Order of first occurrence is preserved.
    """
    merged = []
    for g in np.asarray(G, dtype=float).reshape(-1, 2):
        norm = math.hypot(g[0], g[1])
        if norm < ZERO_TOL:
            continue
        for i, h in enumerate(merged):
            h_norm = math.hypot(h[0], h[1])
            cross = h[0] * g[1] - h[1] * g[0]
            if abs(cross) < PARALLEL_TOL * h_norm * norm:
                # -g spans the same segment as g: lengths add up along h
                merged[i] = h + (h / h_norm) * norm
                break
        else:
            merged.append(g.copy())
    return np.array(merged, dtype=float).reshape(-1, 2)

################################ ARITHMETIC ####################################
# -----------------------------------------------------------------------------
def minkowski_sum(a: Zonotope, b: Zonotope) -> Zonotope:
    """<c1, G1> + <c2, G2> = <c1 + c2, [G1, G2]>"""
    return Zonotope(a.center + b.center, np.vstack([a.generators, b.generators]))

# -----------------------------------------------------------------------------
def linear_map(A, z: Zonotope) -> Zonotope:
    """A <c, G> = <A c, A G>"""
    A = np.asarray(A, dtype=float)
    if A.shape != (2, 2) or not np.all(np.isfinite(A)):
        raise ValueError("Linear maps must be finite 2x2 matrices")
    return Zonotope(A @ z.center, z.generators @ A.T)

# -----------------------------------------------------------------------------
def interval_zonotope(lo, hi) -> Zonotope:
    """Axis-aligned box [lo, hi] as a zonotope"""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise ValueError(f"Interval bounds are inverted: lo={lo.tolist()} > hi={hi.tolist()}")
    half = (hi - lo) / 2
    return Zonotope((lo + hi) / 2, np.diag(half))

# -----------------------------------------------------------------------------
def rotation(angle: float) -> np.ndarray:
    """2D rotation matrix"""
    cos, sin = math.cos(angle), math.sin(angle)
    return np.array([[cos, -sin], [sin, cos]])

########################### VERTEX ENUMERATION #################################
# -----------------------------------------------------------------------------
def _upper_half_plane(G: np.ndarray) -> np.ndarray:
    """Flips generators so that their angle lies in [0, pi)"""
    flip = (G[:, 1] < 0) | ((G[:, 1] == 0) & (G[:, 0] < 0))
    return np.where(flip[:, None], -G, G)

# -----------------------------------------------------------------------------
def enumerate_vertices(z: Zonotope) -> VertexPolygon:
    """
    Returns the 2m vertices of a normalized zonotope with m >= 1 generators, in counterclockwise
    order starting from the lexicographically smallest vertex.

    1. Flip the generators with negative y (or y = 0 and negative x);
    2. Sort them by angle;
    3. v_k = c + sum_j C(k,j) g_j and v_{m+k} = c - sum_j C(k,j) g_j,
       where C(k,j) = 1 if j >= k else -1.

    Raises ValueError for point zonotopes (m = 0).
    """
    if z.m == 0:
        raise ValueError("Vertex enumeration requires at least one generator")
    G = _upper_half_plane(z.generators)
    angles = np.arctan2(G[:, 1], G[:, 0])
    G = G[np.argsort(angles, kind="stable")]
    m = G.shape[0]
    C = np.where(np.arange(m)[None, :] >= np.arange(m)[:, None], 1.0, -1.0)
    upper = z.center + C @ G
    V = np.vstack([upper, z.center - C @ G])
    # Rotate the cyclic order to start at the lexicographically smallest vertex
    first = np.lexsort((V[:, 1], V[:, 0]))[0]
    return VertexPolygon(np.roll(V, -first, axis=0), source=z)

# -----------------------------------------------------------------------------
def contains_point(poly: VertexPolygon, x) -> bool:
    """True if `x` is inside or on the boundary of the counterclockwise convex polygon"""
    x = np.asarray(x, dtype=float)
    starts, ends = poly.segments()
    edges = ends - starts
    rel = x - starts
    cross = edges[:, 0] * rel[:, 1] - edges[:, 1] * rel[:, 0]
    return bool(np.all(cross >= -CONTAINS_TOL))

# -----------------------------------------------------------------------------
def halfspaces(poly: VertexPolygon) -> tuple:
    """
    Returns (normals, offsets) with unit outward normals such that
    the polygon is {x : normals @ x <= offsets}.
    """
    starts, ends = poly.segments()
    edges = ends - starts
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return normals, np.einsum("ij,ij->i", normals, starts)
