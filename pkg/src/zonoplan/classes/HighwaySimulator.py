from __future__ import annotations
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import *

import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Polygon

from zonoplan.classes.ZonoClient import ZonoClient
from zonoplan.classes.ZonoPlanner import ZonoPlanner
from zonoplan.utils.zonotope import enumerate_vertices
from zonoplan.utils.distance import polygons_intersect, signed_distance, signed_distance_polygons
from zonoplan.utils.frs import EgoState, ObstacleState, ReachableSet, instantiate, predict_obstacle

################################# TYPES ########################################
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class Obstacle:
    """Ground-truth vehicle keeping its lane at constant speed `v` (0 for static vehicles)"""
    obstacle_id: int
    x: float
    y: float
    lane: int
    v: float
    l: float = 4.8
    w: float = 2.2

    def state_at(self, t: float) -> ObstacleState:
        return ObstacleState(self.obstacle_id, self.x + self.v * t, self.y, self.v, 0.0, self.l, self.w)


@dataclass
class Scenario:
    """Highway with `n_lanes` lanes, obstacles, ego start state and goal abscissa"""
    seed: int
    obstacles: list
    length: float = 1000.0
    n_lanes: int = 3
    lane_width: float = 3.7
    ego_start: EgoState = EgoState(0.0, 5.55, 0.0, 0.0)
    goal_x: float = 1000.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "length": self.length, "n_lanes": self.n_lanes,
            "lane_width": self.lane_width, "goal_x": self.goal_x,
            "ego_start": asdict(self.ego_start),
            "obstacles": [asdict(o) for o in self.obstacles],
        }

    @classmethod
    def from_dict(cls, data: dict) -> Scenario:
        if not isinstance(data, dict) or "obstacles" not in data:
            raise TypeError("A scenario must be a dictionary with an 'obstacles' list")
        obstacles = [Obstacle(**{"obstacle_id": i, **o}) if "obstacle_id" not in o else Obstacle(**o)
                     for i, o in enumerate(data["obstacles"])]
        return cls(
            seed=int(data.get("seed", 0)), obstacles=obstacles,
            length=float(data.get("length", 1000.0)), n_lanes=int(data.get("n_lanes", 3)),
            lane_width=float(data.get("lane_width", 3.7)),
            ego_start=EgoState(**data["ego_start"]) if "ego_start" in data else EgoState(0.0, 5.55, 0.0, 0.0),
            goal_x=float(data.get("goal_x", data.get("length", 1000.0))),
        )

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fid:
            json.dump(self.to_dict(), fid, indent=4)

    @classmethod
    def load(cls, path) -> Scenario:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Scenario file not found: {path}")
        with path.open("r") as fid:
            return cls.from_dict(json.load(fid))


@dataclass
class TrialResult:
    """Outcome ("success", "safe_stop" or "crash") and metrics of one trial"""
    seed: int
    outcome: str
    n_obstacles: int = 0
    n_iterations: int = 0
    n_infeasible: int = 0
    distance: float = 0.0
    final_x: float = 0.0
    final_v: float = 0.0
    n_constraint_evals: int = 0
    n_gradient_evals: int = 0
    solver_iterations: int = 0
    sensing_ok: bool = True
    min_moving_clearance: float = math.inf
    solve_times: list = field(default_factory=list, repr=False)

    # Deterministic columns of the results table, in order
    COLUMNS = ["seed", "outcome", "n_obstacles", "n_iterations", "n_infeasible", "distance", "final_x",
               "final_v", "n_constraint_evals", "n_gradient_evals", "solver_iterations", "sensing_ok",
               "min_moving_clearance"]
    TIMING_COLUMNS = ["seed", "mean_solve_time", "max_solve_time", "total_solve_time"]

    def to_row(self) -> dict:
        row = {key: getattr(self, key) for key in self.COLUMNS}
        row["distance"] = round(self.distance, 6)
        row["final_x"] = round(self.final_x, 6)
        row["final_v"] = round(self.final_v, 6)
        row["min_moving_clearance"] = round(self.min_moving_clearance, 6) \
            if math.isfinite(self.min_moving_clearance) else math.inf
        return row

    def timing_row(self) -> dict:
        times = self.solve_times or [0.0]
        return {"seed": self.seed, "mean_solve_time": float(np.mean(times)),
                "max_solve_time": float(np.max(times)), "total_solve_time": float(np.sum(times))}


@dataclass
class _Plan:
    """Plan being executed: parameter `p` of `rs` from `z0`, started at absolute time `start`"""
    rs: ReachableSet
    z0: EgoState
    p: tuple
    start: float

    def state(self, t: float) -> EgoState:
        return self.rs.state_at(self.z0, self.p, t - self.start)
# ------------------------------------------------

# -----------------------------------------------------------------------------
def rectangle(x: float, y: float, h: float, l: float, w: float) -> np.ndarray:
    """Corners (4, 2) of an l x w rectangle centered at (x, y) with heading h"""
    cos, sin = math.cos(h), math.sin(h)
    body = np.array([[-l / 2, -w / 2], [l / 2, -w / 2], [l / 2, w / 2], [-l / 2, w / 2]])
    return np.array([x, y]) + body @ np.array([[cos, sin], [-sin, cos]])

# -----------------------------------------------------------------------------
def collision_check(ego_corners: np.ndarray, obstacle_corners: list) -> bool:
    """True if the ego polygon overlaps (or touches) any obstacle polygon"""
    return any(polygons_intersect(ego_corners, corners) for corners in obstacle_corners)

################################# SIMULATOR ####################################
# -----------------------------------------------------------------------------
class HighwaySimulator(ZonoClient):
    """
    Highway scenarios and the receding-horizon loop:
    - each plan is executed for t_m while the next one is computed from the state predicted at
      the end of that period, with obstacles sensed t_plan earlier;
    - when no safe plan is found, the previous plan keeps running (it ends with a braking maneuver);
    - the ground truth is checked for collisions every dt_sim while the ego moves.

    Usage:
        sim = HighwaySimulator(ZonoPlanner(frs_file="frs.json"))
        result = sim.run_trial(sim.generate_scenario(seed=3))
    """

                    ##################
    ################ Class Attributes ##################
                    ##################

    __name__ = "HighwaySimulator"
    _PROPERTIES = ["count_mode", "n_obstacles", "highway_length", "dt_sim", "max_planning_iterations",
                   "obstacle_speeds"]
    # Dense collision-check step (s)
    _DT_SIM = 0.01
    # Planning iterations per trial
    _MAX_PLANNING_ITERATIONS = 600
    # Trial ends as a safe stop after this many iterations at rest
    _MAX_STALLED = 5
    # Scenario generation
    _HIGHWAY_LENGTH = 1000.0
    _SPAWN_START = 60.0
    _SPAWN_END_MARGIN = 50.0
    _SPAWN_GAP = 2.0
    _SPAWN_TRIALS = 100
    _MAX_MOVING = 15
    _MAX_STATIC = 3
    _STATIC_SHARE = 0.2
    _OBSTACLE_SPEEDS = (15.0, 25.0)
    _COUNT_MODES = ("random", "fixed")
    # Speed below which the ego is at rest (m/s)
    _REST_SPEED = 1e-9
    # Obstacles further than this along x are not checked for collisions (m)
    _CHECK_RANGE = 15.0

                    ################
    ################ Constructor ##################
                    ################

    def __init__(self, planner: ZonoPlanner, count_mode: str = "random", n_obstacles: int = None,
                 highway_length: float = None, dt_sim: float = None, max_planning_iterations: int = None,
                 obstacle_speeds: tuple = None, svg_dir=None, verbose: bool = None) -> None:
        self.verbose = verbose if verbose is not None else self._VERBOSE
        if not isinstance(planner, ZonoPlanner):
            raise TypeError(f"HighwaySimulator needs a ZonoPlanner (got {type(planner).__name__})")
        self.planner = planner
        if count_mode not in self._COUNT_MODES:
            raise ValueError(f"Unknown obstacle count mode: '{count_mode}' (expected one of {self._COUNT_MODES})")
        if count_mode == "fixed" and (n_obstacles is None or n_obstacles < 0):
            raise ValueError("The 'fixed' count mode needs a non-negative number of obstacles")
        self.count_mode = count_mode
        self.n_obstacles = n_obstacles
        self.highway_length = highway_length if highway_length is not None else self._HIGHWAY_LENGTH
        if self.highway_length <= self._SPAWN_START + self._SPAWN_END_MARGIN:
            raise ValueError(f"The highway is too short: {self.highway_length} m")
        self.dt_sim = dt_sim if dt_sim is not None else self._DT_SIM
        self.max_planning_iterations = max_planning_iterations if max_planning_iterations is not None \
            else self._MAX_PLANNING_ITERATIONS
        self.obstacle_speeds = tuple(obstacle_speeds) if obstacle_speeds is not None else self._OBSTACLE_SPEEDS
        self.svg_dir = Path(svg_dir) if svg_dir is not None else None
    # ------------------------------------------------

    def config(self) -> dict:
        return self._data_to_save()

                    #################
    ################ Main Methods ##################
                    #################

    def generate_scenario(self, seed: int) -> Scenario:
        """Deterministic scenario for `seed`; obstacles never overlap at spawn time."""
        rng = np.random.default_rng(seed)
        if self.count_mode == "random":
            n_moving = int(rng.integers(0, self._MAX_MOVING + 1))
            n_static = int(rng.integers(0, self._MAX_STATIC + 1))
        else:
            n_static = int(rng.integers(0, int(self._STATIC_SHARE * self.n_obstacles) + 1))
            n_moving = self.n_obstacles - n_static
        n_lanes, lane_width = self.planner.n_lanes, self.planner.lane_width
        obstacles = []
        for i in range(n_moving + n_static):
            for _ in range(self._SPAWN_TRIALS):
                lane = int(rng.integers(0, n_lanes))
                x = float(rng.uniform(self._SPAWN_START, self.highway_length - self._SPAWN_END_MARGIN))
                if all(o.lane != lane or abs(o.x - x) >= o.l + self._SPAWN_GAP for o in obstacles):
                    break
            else:
                self._print(f"(!) Seed {seed}: no free spot for obstacle {i}")
                continue
            v = 0.0 if i >= n_moving else float(rng.uniform(*self.obstacle_speeds))
            obstacles.append(Obstacle(len(obstacles), x, (lane + 0.5) * lane_width, lane, v))
        start = EgoState(0.0, 1.5 * lane_width, 0.0, 0.0)
        return Scenario(seed, obstacles, self.highway_length, n_lanes, lane_width, start, self.highway_length)
    # ------------------------------------------------

    def run_trial(self, scenario: Scenario) -> TrialResult:
        """
        Runs the receding-horizon loop on `scenario`.
        Raises RuntimeError if the loop reaches a state the reachable sets do not cover.
        """
        planner = self.planner
        t_m, t_plan = planner.reach_sets[0].t_m, planner.t_plan
        result = TrialResult(scenario.seed, "safe_stop", n_obstacles=len(scenario.obstacles))
        self._print(f"\n=== TRIAL {scenario.seed} ===\n", max_space=2)
        current = self._initial_plan(scenario.ego_start)
        T, stalled, crashed = 0.0, 0, False
        path = [scenario.ego_start.position]
        for iteration in range(self.max_planning_iterations):
            z0 = current.state(T)
            if z0.x >= scenario.goal_x:
                result.outcome = "success"
                break
            # Sense t_plan before the start of the next plan
            sensing = current.state(T - t_plan) if T >= t_plan else scenario.ego_start
            sensed = [o.state_at(T - t_plan) for o in scenario.obstacles]
            # Per-iteration planner logs are replaced by the trial summary
            with planner._silent_session():
                plan = planner.plan(z0, sensed, sensing.position)
            result.n_iterations += 1
            result.solve_times.append(plan.stats.get("solve_time", 0.0) + plan.stats.get("sampling_time", 0.0))
            result.n_constraint_evals += plan.stats.get("n_constraint_evals", 0)
            result.n_gradient_evals += plan.stats.get("n_gradient_evals", 0)
            result.solver_iterations += plan.stats.get("iterations", 0)
            if plan.feasible:
                rs = planner.reach_of(plan.bin_id)
                if not rs.bin.speed_valid(z0.v):
                    raise RuntimeError(
                        f"Internal inconsistency at t={T:.2f} s: speed {z0.v} m/s is outside the validity "
                        f"of bin {plan.bin_id}"
                    )
                current = _Plan(rs, z0, plan.p_star, T)
                result.sensing_ok &= self._sensing_audit(current, sensed, sensing.position)
            else:
                result.n_infeasible += 1
            if self.svg_dir is not None:
                self._save_frame(scenario, iteration, current, T, plan, path)
            # Execute the current plan (new one, or the previous one towards its stop)
            crashed |= self._execute(current, T, T + t_m, scenario, result, path)
            T += t_m
            end = current.state(T)
            # The next initial state must be covered by some bin
            if not any(rs.bin.speed_valid(end.v) for rs in planner.reach_sets):
                self._print(f"(!) Speed {end.v} m/s is not covered by any bin: braking")
                crashed |= self._execute(current, T, current.start + current.rs.t_f, scenario, result, path)
                break
            stalled = stalled + 1 if max(z0.v, end.v) <= self._REST_SPEED else 0
            if stalled >= self._MAX_STALLED:
                self._print("Ego is blocked: safe stop")
                break
        else:
            # Iteration cap: finish the running plan
            crashed |= self._execute(current, T, max(T, current.start + current.rs.t_f), scenario, result, path)
        final = current.state(T if result.outcome == "success" else max(T, current.start + current.rs.t_f))
        if result.outcome != "success" and final.x >= scenario.goal_x:
            result.outcome = "success"
        if crashed:
            result.outcome = "crash"
        result.final_x, result.final_v = final.x, final.v
        result.distance = final.x - scenario.ego_start.x
        self._print(f"Outcome: {result.outcome} | x = {final.x:.1f} m | iterations: {result.n_iterations}")
        return result
    # ------------------------------------------------

                    ###################
    ################ Private Methods ##################
                    ###################

    def _initial_plan(self, start: EgoState) -> _Plan:
        """Stationary plan from the start state (not-at-fault at rest)"""
        if start.v > self._REST_SPEED:
            raise ValueError(f"Trials start at rest (got v={start.v} m/s)")
        for rs in self.planner.reach_sets:
            if rs.bin.contains((0.0, 0.0)) and rs.bin.speed_valid(0.0):
                return _Plan(rs, start, (0.0, 0.0), -rs.t_f)
        raise ValueError("No bin contains the stationary parameter (0, 0) at rest")
    # ------------------------------------------------

    def _execute(self, plan: _Plan, t_start: float, t_end: float, scenario: Scenario,
                 result: TrialResult, path: list) -> bool:
        """
        Executes `plan` on [t_start, t_end) (absolute times) at dt_sim and checks collisions
        while the ego moves. Returns True on collision.
        """
        n = max(int(round((t_end - t_start) / self.dt_sim)), 0)
        if n == 0:
            return False
        times = t_start + self.dt_sim * np.arange(n)
        positions, headings, speeds = plan.rs.trajectory(plan.z0, plan.p, times - plan.start)
        path.extend(positions[::10])
        fp = plan.rs.footprint
        crashed = False
        if not scenario.obstacles:
            return False
        ox = np.array([o.x for o in scenario.obstacles])[:, None] + np.array([o.v for o in scenario.obstacles])[:, None] * times
        near = np.abs(ox - positions[:, 0]) < self._CHECK_RANGE
        for i in np.flatnonzero(near.any(axis=0)):
            if speeds[i] <= self._REST_SPEED:
                continue
            ego = rectangle(positions[i, 0], positions[i, 1], headings[i], fp.l, fp.w)
            for k in np.flatnonzero(near[:, i]):
                o = scenario.obstacles[k]
                corners = rectangle(ox[k, i], o.y, 0.0, o.l, o.w)
                if collision_check(ego, [corners]):
                    self._print(f"(!) Collision with obstacle {o.obstacle_id} at t={times[i]:.2f} s")
                    crashed = True
                result.min_moving_clearance = min(result.min_moving_clearance,
                                                  signed_distance_polygons(ego, corners))
        return crashed
    # ------------------------------------------------

    def _sensing_audit(self, plan: _Plan, sensed: list, sensing_position) -> bool:
        """False if an obstacle outside the sensor radius could reach the reachable set of `plan`"""
        planner = self.planner
        unsensed = [o for o in sensed
                    if np.linalg.norm(o.position - np.asarray(sensing_position)) > planner.sensor_radius]
        if not unsensed:
            return True
        reach = instantiate(plan.rs, plan.z0, plan.p)
        for o in unsensed:
            pred = predict_obstacle(o, o.position, len(reach), planner.dt, planner.t_plan, math.inf)
            for z, zo in zip(reach, pred.zonotopes):
                if np.linalg.norm(z.center - zo.center) > z.generator_radius() + zo.generator_radius():
                    continue
                if signed_distance(z, zo) <= 0:
                    return False
        return True
    # ------------------------------------------------

    def _save_frame(self, scenario: Scenario, iteration: int, plan: _Plan, T: float, result, path: list) -> None:
        """SVG of one planning iteration: lanes, obstacles, reachable sets, waypoint and executed path"""
        self.svg_dir.mkdir(parents=True, exist_ok=True)
        fig = Figure(figsize=(12, 2.4))
        ax = fig.add_subplot(111)
        x0 = plan.state(T).x
        for lane in range(scenario.n_lanes + 1):
            ax.axhline(lane * scenario.lane_width, color="gray", lw=0.8,
                       ls="-" if lane in (0, scenario.n_lanes) else "--")
        for o in scenario.obstacles:
            state = o.state_at(T)
            ax.add_patch(Polygon(state.corners_at(0.0), closed=True, fc="tab:red" if o.v == 0 else "tab:orange",
                                 ec="k", lw=0.5))
        if result.feasible:
            for z in instantiate(plan.rs, plan.z0, plan.p):
                ax.add_patch(Polygon(enumerate_vertices(z).vertices, closed=True, fc="tab:blue", alpha=0.08, ec="none"))
        if result.waypoint is not None:
            ax.plot(*result.waypoint.position, marker="*", color="tab:green", ms=10)
        trace = np.array(path)
        ax.plot(trace[:, 0], trace[:, 1], color="k", lw=0.8)
        fp = plan.rs.footprint
        ego = plan.state(T)
        ax.add_patch(Polygon(rectangle(ego.x, ego.y, ego.h, fp.l, fp.w), closed=True, fc="tab:blue", ec="k", lw=0.5))
        ax.set_xlim(x0 - 30, x0 + 150)
        ax.set_ylim(-1, scenario.n_lanes * scenario.lane_width + 1)
        ax.set_aspect("equal")
        ax.set_title(f"seed {scenario.seed} | iteration {iteration} | t = {T:.2f} s | {result.status}")
        fig.savefig(self.svg_dir / f"seed{scenario.seed:04d}_iter{iteration:04d}.svg",
                    format="svg", metadata={"Date": None})
    # ------------------------------------------------

#######################################################

if __name__=="__main__":
    pass
