"""
Exact signed distances between 2D zonotopes.

The signed distance between Z = <c_z, G_z> and an obstacle O = <c_o, G_o> equals the signed
distance from c_z to the boundary of the buffered obstacle <c_o, [G_z, G_o]>, whose boundary is the
set of segments between consecutive vertices.
"""

from __future__ import annotations
from dataclasses import dataclass, field
import math

import numpy as np

from zonoplan.utils.zonotope import (
    Zonotope, enumerate_vertices, contains_point, halfspaces
)

################################# TYPES ########################################
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class Segment:
    """Line segment between endpoints `a` and `b` (meters)"""
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(2))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(2))

    @property
    def degenerate(self) -> bool:
        return bool(np.array_equal(self.a, self.b))


@dataclass(frozen=True)
class SignedDistanceResult:
    """
    Signed distance (negative means penetration) with the witness that attains it.
    `witness_point` is the closest boundary point of the buffered obstacle `obstacle_index`.
    """
    value: float
    obstacle_index: int
    witness_segment_index: int
    witness_point: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "obstacle_index": self.obstacle_index,
            "witness_segment_index": self.witness_segment_index,
            "witness_point": [float(x) for x in self.witness_point],
        }

############################## POINT / SEGMENT #################################
# -----------------------------------------------------------------------------
def point_segment_distance(x, s: Segment) -> tuple:
    """
    Returns (distance, t_star) where t_star = clamp(<x-a, b-a> / <b-a, b-a>, 0, 1)
    is the position of the projection of `x` onto the segment.
    Degenerate segments return the distance to `a` and t_star = 0.
    """
    x = np.asarray(x, dtype=float)
    d = s.b - s.a
    length2 = float(d @ d)
    if length2 == 0.0:
        return float(np.linalg.norm(x - s.a)), 0.0
    t_hat = float((x - s.a) @ d) / length2
    t_star = min(max(t_hat, 0.0), 1.0)
    return float(np.linalg.norm(x - (s.a + d * t_star))), t_star

# -----------------------------------------------------------------------------
def point_segments_distances(x, starts: np.ndarray, ends: np.ndarray) -> tuple:
    """Vectorized `point_segment_distance` over segments (N, 2). Returns (distances, t_star, closest)."""
    x = np.asarray(x, dtype=float)
    d = ends - starts
    length2 = np.einsum("ij,ij->i", d, d)
    safe = np.where(length2 == 0.0, 1.0, length2)
    t_hat = np.einsum("ij,ij->i", x - starts, d) / safe
    t_star = np.where(length2 == 0.0, 0.0, np.clip(t_hat, 0.0, 1.0))
    closest = starts + d * t_star[:, None]
    return np.linalg.norm(x - closest, axis=1), t_star, closest

############################## ZONOTOPE / ZONOTOPE #############################
# -----------------------------------------------------------------------------
def buffered_obstacle(z: Zonotope, o: Zonotope) -> Zonotope:
    """<c_o, [G_z, G_o]>: the obstacle grown by the generators of `z`"""
    return Zonotope(o.center, np.vstack([z.generators, o.generators]))

# -----------------------------------------------------------------------------
def _signed_distance_single(c_z: np.ndarray, buffered: Zonotope) -> tuple:
    """Returns (value, segment_index, witness_point) for one buffered obstacle."""
    # Point obstacle: no boundary segments, no penetration depth
    if buffered.m == 0:
        return float(np.linalg.norm(c_z - buffered.center)), 0, buffered.center.copy()
    poly = enumerate_vertices(buffered)
    starts, ends = poly.segments()
    distances, _, closest = point_segments_distances(c_z, starts, ends)
    index = int(np.argmin(distances))
    value = float(distances[index])
    # Segments have measure zero: their penetration depth is 0
    if buffered.m >= 2 and contains_point(poly, c_z):
        value = -value
    return value, index, closest[index]

# -----------------------------------------------------------------------------
def signed_distance_zonotopes(z: Zonotope, obstacles: list) -> SignedDistanceResult:
    """
    Exact signed distance between `z` and the union of `obstacles`.

    Each obstacle contributes +d(c_z; boundary) when disjoint from `z` and -d(c_z; boundary) when
    they intersect; the result is the minimum over obstacles.
    Ties are broken by the lowest (obstacle index, segment index).

    Raises ValueError if `obstacles` is empty.
    """
    if not obstacles:
        raise ValueError("Signed distance needs at least one obstacle: no obstacles were given")
    best = None
    for i, o in enumerate(obstacles):
        value, index, witness = _signed_distance_single(z.center, buffered_obstacle(z, o))
        if best is None or value < best.value:
            best = SignedDistanceResult(value, i, index, witness)
    return best

# -----------------------------------------------------------------------------
def signed_distance(z: Zonotope, o: Zonotope) -> float:
    """Shortcut for the value of `signed_distance_zonotopes(z, [o])`"""
    return _signed_distance_single(z.center, buffered_obstacle(z, o))[0]

############################### POLYGON TOOLS ##################################
# -----------------------------------------------------------------------------
def polygons_intersect(p: np.ndarray, q: np.ndarray, tol: float = 0.0) -> bool:
    """
    Separating-axis test between two convex polygons given as vertex arrays (N, 2).
    Touching polygons intersect. Polygons with fewer than 3 vertices are accepted.
    """
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    for poly in (p, q):
        edges = np.roll(poly, -1, axis=0) - poly
        axes = np.column_stack([-edges[:, 1], edges[:, 0]])
        axes = axes[np.linalg.norm(axes, axis=1) > 0]
        for axis in axes:
            proj_p, proj_q = p @ axis, q @ axis
            scale = np.linalg.norm(axis)
            if proj_p.max() < proj_q.min() - tol * scale or proj_q.max() < proj_p.min() - tol * scale:
                return False
    return True

# -----------------------------------------------------------------------------
def signed_distance_polygons(p: np.ndarray, q: np.ndarray) -> float:
    """
    Signed distance between two convex polygons (N, 2) / (M, 2):
    - disjoint: minimum distance between their boundaries;
    - intersecting: minus the penetration depth, i.e. the smallest translation separating them.
    """
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if not polygons_intersect(p, q):
        best = math.inf
        for a, b in ((p, q), (q, p)):
            starts, ends = b, np.roll(b, -1, axis=0)
            for x in a:
                best = min(best, float(np.min(point_segments_distances(x, starts, ends)[0])))
        return best
    # Penetration depth: the smallest overlap over the candidate separating axes
    depth = math.inf
    for poly in (p, q):
        edges = np.roll(poly, -1, axis=0) - poly
        axes = np.column_stack([-edges[:, 1], edges[:, 0]])
        norms = np.linalg.norm(axes, axis=1)
        for axis in axes[norms > 0] / norms[norms > 0, None]:
            proj_p, proj_q = p @ axis, q @ axis
            depth = min(depth, min(proj_p.max() - proj_q.min(), proj_q.max() - proj_p.min()))
    return -depth

########################### REACHABILITY DISTANCE ##############################
# -----------------------------------------------------------------------------
def rdf(reach: list, obstacle: list) -> tuple:
    """
    Reachability-based distance: min over time intervals j of the signed distance between the
    reach-set slice `reach[j]` and the obstacle slice `obstacle[j]`.
    Returns (value, argmin j).

    `obstacle` can be a list of zonotopes or any object with a `zonotopes` attribute.
    Raises ValueError if both sequences do not share the same intervals, or if there is none.
    """
    slices = getattr(obstacle, "zonotopes", obstacle)
    if len(reach) != len(slices):
        raise ValueError(
            f"Reachable set and obstacle prediction have different time intervals ({len(reach)} vs {len(slices)})"
        )
    if not slices:
        raise ValueError("Reachability distance needs at least one time interval")
    values = [signed_distance(z, o) for z, o in zip(reach, slices)]
    j = int(np.argmin(values))
    return float(values[j]), j

# -----------------------------------------------------------------------------
def halfspace_value(c_z: np.ndarray, buffered: Zonotope) -> tuple:
    """
    Halfspace non-intersection value max_f (n_f . c_z - b_f) over the faces of the buffered obstacle.
    Positive iff c_z lies outside. Returns (value, gradient w.r.t. c_z).
    """
    if buffered.m == 0:
        diff = c_z - buffered.center
        norm = float(np.linalg.norm(diff))
        return norm, (diff / norm if norm > 0 else np.zeros(2))
    poly = enumerate_vertices(buffered)
    if buffered.m == 1:
        # A segment has no interior: use the point-segment distance
        starts, ends = poly.segments()
        distances, _, closest = point_segments_distances(c_z, starts[:1], ends[:1])
        diff = c_z - closest[0]
        return float(distances[0]), (diff / distances[0] if distances[0] > 0 else np.zeros(2))
    normals, offsets = halfspaces(poly)
    values = normals @ c_z - offsets
    face = int(np.argmax(values))
    return float(values[face]), normals[face].copy()
