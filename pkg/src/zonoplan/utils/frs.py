"""
Parameterized forward reachable sets and obstacle predictions.

Trajectory parameters p = (u, y_off): target longitudinal speed (m/s) and lateral offset (m).
Every maneuver is written in the body frame of the initial state z0 = (x0, y0, h0, v0):
    driving  [0, t_m)   speed ramps v0 -> u, lateral offset y_off * (3 tau^2 - 2 tau^3), tau = t / t_m
    braking  [t_m, t_s] speed ramps u -> 0, lateral offset held, with t_s = t_f - 2 dt
    stopped  [t_s, t_f]
The heading follows the velocity direction.

A reachable set holds, for every time interval T_j = [(j-1) dt, j dt], the zonotope
<c_base_j + C_j v0 + A_j p, G_j> (body frame) covering the footprint over T_j.
"""

from __future__ import annotations
from dataclasses import dataclass, field
import json
import math
import os

import numpy as np

from zonoplan.utils.zonotope import Zonotope, rotation

########################### VARIABLES & ERRORS ################################
# -----------------------------------------------------------------------------
# FRS file format version
SCHEMA_VERSION = 1
# Parameter / state membership tolerance
MEMBER_TOL = 1e-9
# Below this speed the heading is not defined and taken as 0
HEADING_SPEED_TOL = 1e-9

################################# TYPES ########################################
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class EgoFootprint:
    """Ego rectangle: length `l` along the heading, width `w` (meters)"""
    l: float = 4.8
    w: float = 2.2

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0):
            raise ValueError(f"Footprint dimensions must be positive (got l={self.l}, w={self.w})")

    def corners(self) -> np.ndarray:
        """Body-frame corners (4, 2), counterclockwise"""
        hl, hw = self.l / 2, self.w / 2
        return np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])

    @property
    def radius(self) -> float:
        return 0.5 * math.hypot(self.l, self.w)


@dataclass(frozen=True)
class EgoState:
    """World-frame pose (meters, radians) and longitudinal speed (m/s)"""
    x: float = 0.0
    y: float = 0.0
    h: float = 0.0
    v: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class BinSpec:
    """
    Cell of the trajectory-parameter space: p in [p_lo, p_hi] (u, y_off),
    valid for initial speeds in [v0_lo, v0_hi].
    """
    bin_id: int
    kind: str
    p_lo: tuple
    p_hi: tuple
    v0_lo: float
    v0_hi: float

    @property
    def center(self) -> np.ndarray:
        return (np.array(self.p_lo) + np.array(self.p_hi)) / 2

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= np.array(self.p_lo) - MEMBER_TOL) and np.all(p <= np.array(self.p_hi) + MEMBER_TOL))

    def speed_valid(self, v0: float) -> bool:
        return self.v0_lo - MEMBER_TOL <= v0 <= self.v0_hi + MEMBER_TOL

    def to_dict(self) -> dict:
        return {
            "bin_id": self.bin_id, "kind": self.kind,
            "p_lo": list(self.p_lo), "p_hi": list(self.p_hi),
            "v0_lo": self.v0_lo, "v0_hi": self.v0_hi,
        }

    @classmethod
    def from_dict(cls, data: dict) -> BinSpec:
        return cls(int(data["bin_id"]), data["kind"], tuple(data["p_lo"]), tuple(data["p_hi"]),
                   float(data["v0_lo"]), float(data["v0_hi"]))


@dataclass(frozen=True)
class TrajectoryParam:
    """Trajectory parameter `p` = (u, y_off) with the bin it belongs to"""
    p: tuple
    bin_id: int

    @property
    def speed(self) -> float:
        return self.p[0]

    @property
    def offset(self) -> float:
        return self.p[1]


@dataclass(frozen=True)
class ObstacleState:
    """Obstacle rectangle at sensing time, moving at constant velocity"""
    obstacle_id: int
    x: float
    y: float
    vx: float
    vy: float
    l: float = 4.8
    w: float = 2.2

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])

    @property
    def heading(self) -> float:
        return math.atan2(self.vy, self.vx) if math.hypot(self.vx, self.vy) > HEADING_SPEED_TOL else 0.0

    def corners_at(self, t: float) -> np.ndarray:
        """World corners (4, 2) at time `t` after sensing"""
        hl, hw = self.l / 2, self.w / 2
        body = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
        return self.position + self.velocity * t + body @ rotation(self.heading).T


@dataclass
class ObstaclePrediction:
    """Zonotopes covering obstacle `obstacle_id` over every planning interval"""
    obstacle_id: int
    zonotopes: list
    source: ObstacleState = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.zonotopes)
# ------------------------------------------------

############################## REFERENCE MOTION ################################
# -----------------------------------------------------------------------------
def body_motion(v0, u, y_off, t, t_m: float, t_s: float) -> tuple:
    """
    Body-frame desired motion, broadcast over all arguments.
    Returns (x, y, vx, vy) at time `t` for initial speed `v0` and parameters (u, y_off).
    """
    v0, u, y_off, t = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in (v0, u, y_off, t)])
    t_b = t_s - t_m
    # Driving
    td = np.minimum(t, t_m)
    tau = td / t_m
    x = v0 * td + (u - v0) * td**2 / (2 * t_m)
    y = y_off * (3 * tau**2 - 2 * tau**3)
    vx = np.where(t < t_m, v0 + (u - v0) * tau, u)
    vy = np.where(t < t_m, y_off * 6 * tau * (1 - tau) / t_m, 0.0)
    # Braking then stopped
    s = np.clip(t - t_m, 0.0, t_b)
    x = x + u * s - u * s**2 / (2 * t_b)
    vx = np.where(t >= t_m, u * (1 - s / t_b), vx)
    return x, y, vx, vy

# -----------------------------------------------------------------------------
def body_heading(vx, vy) -> np.ndarray:
    speed = np.hypot(vx, vy)
    return np.where(speed > HEADING_SPEED_TOL, np.arctan2(vy, vx), 0.0)

# -----------------------------------------------------------------------------
def footprint_extents(heading, footprint: EgoFootprint) -> tuple:
    """Half-extents of the axis-aligned box around the rotated footprint"""
    cos, sin = np.abs(np.cos(heading)), np.abs(np.sin(heading))
    return footprint.l / 2 * cos + footprint.w / 2 * sin, footprint.l / 2 * sin + footprint.w / 2 * cos

# -----------------------------------------------------------------------------
def to_world(z0: EgoState, points: np.ndarray) -> np.ndarray:
    """Body-frame points (..., 2) to the world frame of `z0`"""
    return np.asarray(points) @ rotation(z0.h).T + z0.position

################################ REACHABLE SETS ################################
# -----------------------------------------------------------------------------
@dataclass
class ReachableSet:
    """
    Reachable set of one bin. Per interval j (arrays indexed by j):
        c_base (J, 2), C (J, 2), A (J, 2, 2), G (J, q, 2), all in the body frame of z0.
    """
    bin: BinSpec
    c_base: np.ndarray
    C: np.ndarray
    A: np.ndarray
    G: np.ndarray
    dt: float = 0.1
    t_f: float = 3.0
    t_m: float = 1.5
    t_plan: float = 0.35
    footprint: EgoFootprint = field(default_factory=EgoFootprint)

    def __post_init__(self):
        n = round(self.t_f / self.dt)
        if not math.isclose(n * self.dt, self.t_f, rel_tol=1e-9):
            raise ValueError(f"The interval length dt={self.dt} must divide t_f={self.t_f}")
        for name in ("c_base", "C", "A", "G"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.c_base.shape[0] != n or self.A.shape[0] != n or self.G.shape[0] != n:
            raise ValueError(f"Reachable set of bin {self.bin.bin_id} must have {n} intervals")

    @property
    def bin_id(self) -> int:
        return self.bin.bin_id

    @property
    def n_intervals(self) -> int:
        return self.c_base.shape[0]

    @property
    def t_stop(self) -> float:
        """End of the braking ramp"""
        return self.t_f - 2 * self.dt

    @property
    def j_drive_end(self) -> int:
        """Index of the interval ending at t_m"""
        return round(self.t_m / self.dt) - 1

    def interval(self, j: int) -> tuple:
        """Time interval T_j (0-based j)"""
        return j * self.dt, (j + 1) * self.dt

    def check(self, z0: EgoState, p) -> None:
        """Raises ValueError if `p` is outside the bin or `z0` outside its speed validity."""
        if not self.bin.contains(p):
            raise ValueError(
                f"Trajectory parameter {list(np.asarray(p, dtype=float))} is outside bin {self.bin_id}: "
                f"{list(self.bin.p_lo)} .. {list(self.bin.p_hi)}"
            )
        if not self.bin.speed_valid(z0.v):
            raise ValueError(
                f"Initial speed {z0.v} m/s is outside the validity of bin {self.bin_id}: "
                f"[{self.bin.v0_lo}, {self.bin.v0_hi}]"
            )

    def world_affine(self, z0: EgoState) -> tuple:
        """
        World-frame affine form of the reachable set at `z0`:
        returns (base (J, 2), A (J, 2, 2), G (J, q, 2)) with centers base_j + A_j p.
        """
        R = rotation(z0.h)
        base = (self.c_base + self.C * z0.v) @ R.T + z0.position
        return base, np.einsum("ik,jkl->jil", R, self.A), self.G @ R.T

    def state_at(self, z0: EgoState, p, t: float) -> EgoState:
        """Ground-truth state `t` seconds after starting `p` from `z0`"""
        x, y, vx, vy = body_motion(z0.v, p[0], p[1], t, self.t_m, self.t_stop)
        position = to_world(z0, np.array([float(x), float(y)]))
        return EgoState(float(position[0]), float(position[1]),
                        z0.h + float(body_heading(vx, vy)), float(vx))

    def trajectory(self, z0: EgoState, p, times) -> tuple:
        """World positions (n, 2), headings (n,) and speeds (n,) at plan times `times` (n,)"""
        x, y, vx, vy = body_motion(z0.v, p[0], p[1], np.asarray(times, dtype=float), self.t_m, self.t_stop)
        positions = to_world(z0, np.stack([x, y], axis=-1))
        return positions, z0.h + body_heading(vx, vy), np.hypot(vx, vy)

    def speed_at(self, z0: EgoState, p, t: float) -> float:
        """Ground-truth speed (m/s) `t` seconds after starting `p` from `z0`"""
        _, _, vx, vy = body_motion(z0.v, p[0], p[1], t, self.t_m, self.t_stop)
        return float(np.hypot(vx, vy))

    def occupancy(self, z0: EgoState, p, t: float) -> np.ndarray:
        """Ground-truth world footprint corners (4, 2) at time `t`"""
        state = self.state_at(z0, p, t)
        return state.position + self.footprint.corners() @ rotation(state.h).T

    def to_dict(self) -> dict:
        return {
            **self.bin.to_dict(),
            "intervals": [
                {"c_base": self.c_base[j].tolist(), "C": self.C[j].tolist(),
                 "A": self.A[j].tolist(), "G": self.G[j].tolist()}
                for j in range(self.n_intervals)
            ],
        }
# ------------------------------------------------

# -----------------------------------------------------------------------------
def instantiate(rs: ReachableSet, z0: EgoState, p) -> list:
    """
    World-frame zonotopes of the reachable set of `rs` from `z0` with parameter `p`, one per interval.
    Raises ValueError if `p` is outside the bin or if the speed of `z0` is not valid for it.
    """
    p = np.asarray(p, dtype=float)
    rs.check(z0, p)
    base, A, G = rs.world_affine(z0)
    centers = base + A @ p
    return [Zonotope(centers[j], G[j]) for j in range(rs.n_intervals)]

############################### BIN DEFINITIONS ################################
# -----------------------------------------------------------------------------
def default_bins(v_max: float = 30.0, lane_width: float = 3.7, max_offset: float = 4.0,
                 margin: float = 6.0) -> list:
    """
    13 bins: lane keeping over 5 speed bands, left and right lane changes over 4 speed bands.
    """
    half = lane_width / 2
    keep_bands = [(0., 6.), (6., 12.), (12., 18.), (18., 24.), (24., v_max)]
    change_bands = [(0., 12.), (12., 18.), (18., 24.), (24., v_max)]
    layout = [("keep", keep_bands, (-half, half)),
              ("left", change_bands, (half, max_offset)),
              ("right", change_bands, (-max_offset, -half))]
    bins = []
    for kind, bands, (y_lo, y_hi) in layout:
        for lo, hi in bands:
            bins.append(BinSpec(len(bins), kind, (lo, y_lo), (hi, y_hi),
                                max(0.0, lo - margin), min(v_max, hi + margin)))
    return bins

# -----------------------------------------------------------------------------
def bins_partition(bins: list) -> bool:
    """True if the bin boxes have disjoint interiors and cover their bounding box exactly"""
    lo = np.array([b.p_lo for b in bins])
    hi = np.array([b.p_hi for b in bins])
    for a in range(len(bins)):
        for b in range(a + 1, len(bins)):
            if np.all(np.maximum(lo[a], lo[b]) < np.minimum(hi[a], hi[b])):
                return False
    total = np.prod(hi.max(axis=0) - lo.min(axis=0))
    return math.isclose(float(np.sum(np.prod(hi - lo, axis=1))), float(total), rel_tol=1e-12)

############################# OBSTACLE PREDICTION ##############################
# -----------------------------------------------------------------------------
def sensor_radius_bound(t_f: float, t_plan: float, v_ego_max: float, v_obs_max: float,
                        footprint: EgoFootprint) -> float:
    """Smallest sensor radius covering every obstacle that may reach the ego over a plan"""
    return (t_f + t_plan) * (v_ego_max + v_obs_max) + footprint.radius

# -----------------------------------------------------------------------------
def predict_obstacle(state: ObstacleState, ego_position, n_intervals: int, dt: float,
                     t_plan: float, sensor_radius: float):
    """
    Constant-velocity prediction of `state` over the intervals [t_plan + j dt, t_plan + (j+1) dt]
    after sensing. Returns None for obstacles outside the sensor radius.
    """
    if np.linalg.norm(state.position - np.asarray(ego_position, dtype=float)) > sensor_radius:
        return None
    R = rotation(state.heading)
    box = np.diag([state.l / 2, state.w / 2]) @ R.T
    sweep = state.velocity * dt / 2
    zonotopes = []
    for j in range(n_intervals):
        center = state.position + state.velocity * (t_plan + (j + 0.5) * dt)
        generators = np.vstack([box, sweep]) if np.any(sweep != 0) else box
        zonotopes.append(Zonotope(center, generators))
    return ObstaclePrediction(state.obstacle_id, zonotopes, state)

################################## FILE I/O ####################################
# -----------------------------------------------------------------------------
def save_frs(path: str, reach_sets: list) -> None:
    """Writes the reachable sets of all bins as JSON"""
    first = reach_sets[0]
    data = {
        "schema_version": SCHEMA_VERSION,
        "dt": first.dt, "t_f": first.t_f, "t_m": first.t_m, "t_plan": first.t_plan,
        "footprint": {"l": first.footprint.l, "w": first.footprint.w},
        "bins": [rs.to_dict() for rs in reach_sets],
    }
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    with open(path, "w") as fid:
        json.dump(data, fid, indent=4)

# -----------------------------------------------------------------------------
def load_frs(path: str) -> list:
    """
    Reads an FRS file written by `save_frs`.
    Raises FileNotFoundError if it does not exist and ValueError on an unknown schema.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(
            f"FRS file not found: {path}\n"
            "\tGenerate it with: zonoplan generate-frs --out " + path
        )
    with open(path, "r") as fid:
        data = json.load(fid)
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"Unsupported FRS schema version: {data.get('schema_version')} (expected {SCHEMA_VERSION})"
        )
    footprint = EgoFootprint(**data["footprint"])
    reach_sets = []
    for item in data["bins"]:
        intervals = item["intervals"]
        reach_sets.append(ReachableSet(
            BinSpec.from_dict(item),
            c_base=[iv["c_base"] for iv in intervals],
            C=[iv["C"] for iv in intervals],
            A=[iv["A"] for iv in intervals],
            G=[iv["G"] for iv in intervals],
            dt=data["dt"], t_f=data["t_f"], t_m=data["t_m"], t_plan=data["t_plan"],
            footprint=footprint,
        ))
    return reach_sets
