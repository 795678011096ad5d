from __future__ import annotations
import math
import time
from dataclasses import dataclass, field

import numpy as np

from zonoplan.classes.ZonoClient import ZonoClient
from zonoplan.utils.zonotope import Zonotope, enumerate_vertices, halfspaces
from zonoplan.utils.distance import (
    buffered_obstacle, halfspace_value, signed_distance, signed_distance_zonotopes
)
from zonoplan.utils.relu import GraphBatch, build_sdf_graph
from zonoplan.utils.frs import (
    EgoState, ObstacleState, ReachableSet, load_frs, predict_obstacle, sensor_radius_bound
)
from zonoplan.utils.solver import AugmentedLagrangian, Block

################################# TYPES ########################################
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class Waypoint:
    """Target position (world frame, meters) in lane `lane_id`"""
    position: tuple
    lane_id: int


@dataclass
class PlanResult:
    """
    Outcome of one planning iteration.
    `status` is "feasible" (with `p_star` in bin `bin_id`) or "infeasible".
    """
    status: str
    p_star: tuple = None
    bin_id: int = None
    cost: float = math.inf
    waypoint: Waypoint = None
    stats: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "p_star": None if self.p_star is None else [float(x) for x in self.p_star],
            "bin_id": self.bin_id,
            "cost": None if math.isinf(self.cost) else float(self.cost),
            "waypoint": None if self.waypoint is None else
                {"position": list(self.waypoint.position), "lane_id": self.waypoint.lane_id},
            "stats": self.stats,
        }


class BinProblem():
    """
    Single-bin problem of one planning iteration:
        minimize |c_jm(p) - waypoint|  s.t.  r(xi_j(p), obstacle_jk) > 0 for every kept pair (j, k),
    with centers c_j(p) = base_j + A_j p over the (road-restricted) box [lo, hi].
    """

    def __init__(self, rs: ReachableSet, z0: EgoState, lo, hi, predictions: list, waypoint: Waypoint,
                 backend: str = "sdf", margin: float = 1e-3) -> None:
        self.rs = rs
        self.z0 = z0
        self.lo, self.hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        self.predictions = predictions
        self.waypoint = np.asarray(waypoint.position, dtype=float)
        self.backend = backend
        self.base, self.A, self.G = rs.world_affine(z0)
        self.j_cost = rs.j_drive_end
        self.pairs = self._prune(margin)
        self._pair_j = np.array([j for j, _ in self.pairs], dtype=int)
        self.graphs = []
        self._constraints = self._build_constraints()

    @property
    def bin_id(self) -> int:
        return self.rs.bin_id

    @property
    def n_constraints(self) -> int:
        return len(self.pairs)

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2

    def reach(self, j: int, p) -> Zonotope:
        return Zonotope(self.base[j] + self.A[j] @ np.asarray(p, dtype=float), self.G[j])

    def cost(self, p) -> tuple:
        """(|c_jm(p) - waypoint|, gradient)"""
        diff = self.base[self.j_cost] + self.A[self.j_cost] @ p - self.waypoint
        norm = float(np.linalg.norm(diff))
        grad = self.A[self.j_cost].T @ (diff / norm) if norm > 0 else np.zeros(p.shape)
        return norm, grad

    def constraints(self, p, need_grad: bool = True) -> tuple:
        """Constraint values (n,) and their Jacobian (n, n_p) when `need_grad` is True"""
        p = np.asarray(p, dtype=float)
        if not self.pairs:
            return np.zeros(0), (np.zeros((0, p.size)) if need_grad else None)
        js = self._pair_j
        centers = self.base[js] + self.A[js] @ p
        if self.backend == "sdf":
            return self._constraints.evaluate(centers, self.A[js], gradients=need_grad)
        values = np.zeros(len(self.pairs))
        grads = np.zeros((len(self.pairs), p.size)) if need_grad else None
        for i, (normals, offsets) in enumerate(self._constraints):
            scores = normals @ centers[i] - offsets
            face = int(np.argmax(scores))
            values[i] = scores[face]
            if need_grad:
                grads[i] = self.A[js[i]].T @ normals[face]
        return values, grads

    def geometric_margin(self, p, predictions: list = None) -> float:
        """
        Minimal exact signed distance between the reachable set at `p` and the predictions
        (all intervals, no pruning). Infinite without predictions.
        """
        predictions = self.predictions if predictions is None else predictions
        if not predictions:
            return math.inf
        return min(
            signed_distance(self.reach(j, p), pred.zonotopes[j])
            for pred in predictions for j in range(self.rs.n_intervals)
        )

    def pair_feasible(self, p) -> bool:
        """True if every kept pair has a positive geometric signed distance at `p`"""
        return all(signed_distance(self.reach(j, p), self.predictions[k].zonotopes[j]) > 0
                   for j, k in self.pairs)

    def _prune(self, margin: float) -> list:
        """
        Pairs (j, k) whose obstacle may come within `margin` of the reachable set for some p in the box.
        Bound: |c_env - c_obs| > r_reach + r_obs + margin implies a distance larger than the margin.
        """
        mid, half = self.center, (self.hi - self.lo) / 2
        pairs = []
        for j in range(self.rs.n_intervals):
            c_env = self.base[j] + self.A[j] @ mid
            r_reach = np.linalg.norm(self.A[j], 2) * np.linalg.norm(half) \
                + np.sum(np.linalg.norm(self.G[j], axis=1))
            for k, pred in enumerate(self.predictions):
                o = pred.zonotopes[j]
                if np.linalg.norm(c_env - o.center) <= r_reach + o.generator_radius() + margin:
                    pairs.append((j, k))
        return pairs

    def pair_affine(self) -> tuple:
        """Centers at p = 0 (n, 2) and Jacobians (n, 2, 2) of the reach centers of the kept pairs"""
        return self.base[self._pair_j], self.A[self._pair_j]

    def _build_constraints(self):
        if self.backend == "sdf":
            for j, k in self.pairs:
                graph = build_sdf_graph(Zonotope(self.base[j], self.G[j]), [self.predictions[k].zonotopes[j]])
                graph.audit()
                self.graphs.append(graph)
            return GraphBatch(self.graphs)
        if self.backend == "halfspace":
            data = []
            for j, k in self.pairs:
                buffered = buffered_obstacle(Zonotope(self.base[j], self.G[j]), self.predictions[k].zonotopes[j])
                data.append(halfspaces(enumerate_vertices(buffered)))
            return data
        raise ValueError(f"Unknown constraint backend: '{self.backend}' (expected 'sdf' or 'halfspace')")
# ------------------------------------------------


class BatchedProblem():
    """
    Single-bin problems of the "sdf" backend stacked into one problem over P = [p_1, ..., p_B]:
        minimize sum_b cost_b(p_b)  s.t. the constraints of every bin,
    all constraint graphs being evaluated by one GraphBatch pass per call.
    The bins share no variable: each block keeps its own feasibility and cost.
    """

    N_P = 2

    def __init__(self, bins: list) -> None:
        self.bins = list(bins)
        n_p = self.N_P
        self.blocks, row = [], 0
        for i, b in enumerate(self.bins):
            self.blocks.append(Block(slice(n_p * i, n_p * (i + 1)), slice(row, row + b.n_constraints), b.cost))
            row += b.n_constraints
        self.n_constraints = row
        self.lo = np.concatenate([b.lo for b in self.bins]) if self.bins else np.zeros(0)
        self.hi = np.concatenate([b.hi for b in self.bins]) if self.bins else np.zeros(0)
        self._owner = np.concatenate([np.full(b.n_constraints, i, dtype=int) for i, b in enumerate(self.bins)]) \
            if self.n_constraints else np.zeros(0, dtype=int)
        if self.n_constraints:
            affine = [b.pair_affine() for b in self.bins if b.n_constraints]
            self._base = np.concatenate([base for base, _ in affine])
            self._jac = np.concatenate([jac for _, jac in affine])
            self._batch = GraphBatch([g for b in self.bins for g in b.graphs])

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2

    def split(self, P) -> list:
        return [np.asarray(P, dtype=float)[block.params] for block in self.blocks]

    def cost(self, P) -> tuple:
        value, grad = 0.0, np.zeros(len(P))
        for block in self.blocks:
            v, g = block.cost(np.asarray(P, dtype=float)[block.params])
            value += v
            grad[block.params] = g
        return value, grad

    def constraints(self, P, need_grad: bool = True) -> tuple:
        """Values (n,) of all bins and the block-sparse Jacobian (n, 2 B) when `need_grad` is True"""
        P = np.asarray(P, dtype=float)
        n = self.n_constraints
        if not n:
            return np.zeros(0), (np.zeros((0, P.size)) if need_grad else None)
        p = P.reshape(-1, self.N_P)[self._owner]
        centers = self._base + np.einsum("nij,nj->ni", self._jac, p)
        values, grads = self._batch.evaluate(centers, self._jac, gradients=need_grad)
        if not need_grad:
            return values, None
        jac = np.zeros((n, P.size))
        rows, cols = np.arange(n), self.N_P * self._owner
        for k in range(self.N_P):
            jac[rows, cols + k] = grads[:, k]
        return values, jac
# ------------------------------------------------


@dataclass
class OptProblem:
    """Batched problem of one planning iteration: one BinProblem per candidate bin"""
    z0: EgoState
    waypoint: Waypoint
    predictions: list
    bins: list
    sampling_time: float = 0.0

    @property
    def n_constraints(self) -> int:
        return sum(b.n_constraints for b in self.bins)
# ------------------------------------------------

# -----------------------------------------------------------------------------
def halfspace_baseline_constraints(zonotopes: list, obstacles: list) -> tuple:
    """
    Halfspace non-intersection values max_f (n_f . c_z - b_f) of each reach zonotope against the
    obstacle of the same index, with their gradients w.r.t. the zonotope centers.
    Positive iff the pair does not intersect.
    """
    values, grads = [], []
    for z, o in zip(zonotopes, obstacles):
        value, grad = halfspace_value(z.center, buffered_obstacle(z, o))
        values.append(value)
        grads.append(grad)
    return np.array(values), np.array(grads).reshape(-1, 2)

################################### PLANNER ####################################
# -----------------------------------------------------------------------------
class ZonoPlanner(ZonoClient):
    """
    Receding-horizon trajectory planner with exact signed-distance constraints.

    Each planning iteration:
    1. The high-level planner picks a lane and a waypoint;
    2. Obstacles within the sensor radius are predicted over every interval;
    3. Each bin valid for the current speed is sampled at 10 points and kept if one is safe;
    4. The kept bins are solved with an augmented-Lagrangian method (as one batched problem
       with the "sdf" backend) and the best safe parameter is returned, after a geometric
       re-verification.

    Usage:
        planner = ZonoPlanner(frs_file="frs.json")
        result = planner.plan(ego_state, obstacle_states)
    """

                    ##################
    ################ Class Attributes ##################
                    ##################

    __name__ = "ZonoPlanner"
    _PROPERTIES = ["t_plan", "max_iter", "backend", "enforce_budget", "sensor_radius",
                   "n_lanes", "lane_width", "d_safe", "d_wp_max", "margin"]
    # Planning time budget (s)
    _T_PLAN = 0.35
    # Solver iterations
    _MAX_ITER = 15
    _KKT_TOL = 1e-6
    # Required signed distance in the solver (m)
    _MARGIN = 1e-3
    # Highway geometry
    _N_LANES = 3
    _LANE_WIDTH = 3.7
    # High-level planner distances (m)
    _D_SAFE = 20.0
    _D_WP_MAX = 60.0
    # Sensor radius (m) and maximal obstacle speed (m/s)
    _SENSOR_RADIUS = 200.0
    _V_OBS_MAX = 25.0
    # Parameter samples per bin
    _N_SAMPLES = 10
    _BACKENDS = ("sdf", "halfspace")

                    ################
    ################ Constructor ##################
                    ################

    def __init__(self, reach_sets: list = None, frs_file: str = None, t_plan: float = None,
                 max_iter: int = None, backend: str = "sdf", enforce_budget: bool = False,
                 sensor_radius: float = None, n_lanes: int = None, lane_width: float = None,
                 d_safe: float = None, d_wp_max: float = None, v_obs_max: float = None,
                 verbose: bool = None) -> None:
        self.verbose = verbose if verbose is not None else self._VERBOSE
        if reach_sets is None:
            if frs_file is None:
                raise TypeError("ZonoPlanner needs reachable sets: provide `reach_sets` or `frs_file`")
            reach_sets = load_frs(frs_file)
        if not reach_sets:
            raise ValueError("ZonoPlanner needs at least one reachable set")
        self.reach_sets = list(reach_sets)
        self.t_plan = t_plan if t_plan is not None else self._T_PLAN
        self.max_iter = max_iter if max_iter is not None else self._MAX_ITER
        if backend not in self._BACKENDS:
            raise ValueError(f"Unknown constraint backend: '{backend}' (expected one of {self._BACKENDS})")
        self.backend = backend
        self.enforce_budget = enforce_budget
        self.n_lanes = n_lanes if n_lanes is not None else self._N_LANES
        self.lane_width = lane_width if lane_width is not None else self._LANE_WIDTH
        self.d_safe = d_safe if d_safe is not None else self._D_SAFE
        self.d_wp_max = d_wp_max if d_wp_max is not None else self._D_WP_MAX
        self.margin = self._MARGIN
        self.sensor_radius = sensor_radius if sensor_radius is not None else self._SENSOR_RADIUS
        # Sensing must cover every obstacle that can reach the ego within a plan
        rs = self.reach_sets[0]
        v_ego_max = max(r.bin.p_hi[0] for r in self.reach_sets)
        bound = sensor_radius_bound(rs.t_f, self.t_plan, v_ego_max,
                                    v_obs_max if v_obs_max is not None else self._V_OBS_MAX, rs.footprint)
        if self.sensor_radius <= bound:
            raise ValueError(
                f"Sensor radius {self.sensor_radius} m is too small: it must exceed {bound:.2f} m "
                f"for t_f={rs.t_f} s and t_plan={self.t_plan} s"
            )
        self.solver = AugmentedLagrangian(max_iter=self.max_iter, tol=self._KKT_TOL, margin=self.margin)
    # ------------------------------------------------

    @property
    def dt(self) -> float:
        return self.reach_sets[0].dt

    @property
    def n_intervals(self) -> int:
        return self.reach_sets[0].n_intervals

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def lane_of(self, y: float) -> int:
        return int(min(max(math.floor(y / self.lane_width), 0), self.n_lanes - 1))

    def config(self) -> dict:
        return self._data_to_save()

                    #################
    ################ Main Methods ##################
                    #################

    def high_level_planner(self, ego: EgoState, obstacles: list) -> Waypoint:
        """
        Chooses the lane whose nearest obstacle ahead of the ego is the furthest away,
        ties going to the current lane and then to the lowest lane id.
        The waypoint lies min(gap - d_safe, d_wp_max) ahead, at the lane center.
        """
        gaps = self.lane_gaps(ego, obstacles)
        current = self.lane_of(ego.y)
        best_gap = max(gaps)
        lane = current if gaps[current] == best_gap else gaps.index(best_gap)
        ahead = max(min(best_gap - self.d_safe, self.d_wp_max), 0.0)
        return Waypoint((ego.x + ahead, self.lane_center(lane)), lane)
    # ------------------------------------------------

    def lane_gaps(self, ego: EgoState, obstacles: list) -> list:
        """Distance to the nearest obstacle ahead in every lane (infinite if none)"""
        gaps = [math.inf] * self.n_lanes
        for o in obstacles:
            if o.x < ego.x:
                continue
            lane = self.lane_of(o.y)
            gaps[lane] = min(gaps[lane], o.x - ego.x)
        return gaps
    # ------------------------------------------------

    def predict(self, sensing_position, obstacles: list) -> list:
        """Predictions of the obstacles within the sensor radius of `sensing_position`"""
        predictions = []
        for o in obstacles:
            pred = predict_obstacle(o, sensing_position, self.n_intervals, self.dt, self.t_plan, self.sensor_radius)
            if pred is not None:
                predictions.append(pred)
        return predictions
    # ------------------------------------------------

    def build_problem(self, z0: EgoState, predictions: list, waypoint: Waypoint) -> OptProblem:
        """One BinProblem per bin valid at the speed of `z0` with a non-empty road-restricted box"""
        bins = []
        y_min, y_max = self.lane_center(0), self.lane_center(self.n_lanes - 1)
        for rs in self.reach_sets:
            if not rs.bin.speed_valid(z0.v):
                continue
            lo, hi = np.array(rs.bin.p_lo, dtype=float), np.array(rs.bin.p_hi, dtype=float)
            # Keep the lateral target between the outermost lane centers
            lo[1] = max(lo[1], y_min - z0.y)
            hi[1] = min(hi[1], y_max - z0.y)
            if lo[1] > hi[1]:
                continue
            bins.append(BinProblem(rs, z0, lo, hi, predictions, waypoint, self.backend, self.margin))
        return OptProblem(z0, waypoint, predictions, bins)
    # ------------------------------------------------

    def bin_samples(self, problem: BinProblem) -> np.ndarray:
        """
        10 diagonal Latin samples of the box: sample s sits at (s + 0.5) / 10 along the speed
        and at ((3 s mod 10) + 0.5) / 10 along the lateral offset.
        """
        n = self._N_SAMPLES
        s = np.arange(n)
        frac = np.column_stack([(s + 0.5) / n, ((3 * s) % n + 0.5) / n])
        return problem.lo + frac * (problem.hi - problem.lo)
    # ------------------------------------------------

    def sample_feasible_bins(self, problem: OptProblem) -> list:
        """
        Keeps the bins with at least one geometrically safe sample.
        Records the cheapest safe sample of each kept bin in `feasible_samples` and the
        sampling time in `problem.sampling_time`.
        """
        start = time.perf_counter()
        kept = []
        self.feasible_samples = {}
        for b in problem.bins:
            best = None
            for p in self.bin_samples(b):
                if b.pair_feasible(p):
                    value = b.cost(p)[0]
                    if best is None or value < best[1]:
                        best = (p, value)
            if best is not None:
                kept.append(b)
                self.feasible_samples[b.bin_id] = best[0]
        problem.sampling_time = time.perf_counter() - start
        return kept
    # ------------------------------------------------

    def solve(self, problem: OptProblem, active: list = None, time_budget: float = None,
              max_iter: int = None) -> PlanResult:
        """
        Solves the active bins and returns the cheapest parameter whose reachable set keeps a
        strictly positive signed distance to every predicted obstacle.

        The "sdf" backend solves all bins at once (`BatchedProblem`): one constraint evaluation
        covers every bin. The "halfspace" backend runs one solve per bin, so every round of the
        solver evaluates the constraints of each bin separately; its iteration count is the number
        of rounds (the longest per-bin solve).
        """
        start = time.perf_counter()
        active = problem.bins if active is None else active
        budget = self.t_plan if time_budget is None else time_budget
        deadline = start + budget - problem.sampling_time if self.enforce_budget else None
        solver = self.solver if max_iter is None else \
            AugmentedLagrangian(max_iter=max_iter, tol=self._KKT_TOL, margin=self.margin)
        stats = self._empty_stats(problem, active)
        feasible_samples = getattr(self, "feasible_samples", {})
        guesses = [feasible_samples.get(b.bin_id, b.center) for b in active]
        candidates = []
        if self.backend == "sdf" and active:
            batched = BatchedProblem(active)
            result = solver.solve(batched.cost, batched.constraints, batched.center, batched.lo, batched.hi,
                                  deadline=deadline, feasible_guess=np.concatenate(guesses),
                                  blocks=batched.blocks)
            self._count(stats, result)
            stats["iterations"] = result.iterations
            candidates = [(b, r.p, r.cost) for b, r in zip(active, result.blocks) if r.feasible]
        else:
            for b, guess in zip(active, guesses):
                result = solver.solve(b.cost, b.constraints, b.center, b.lo, b.hi, deadline=deadline,
                                      feasible_guess=guess)
                self._count(stats, result)
                stats["iterations"] = max(stats["iterations"], result.iterations)
                if result.feasible:
                    candidates.append((b, result.p, result.cost))
        best = None
        for b, p, cost in candidates:
            # Independent check against every prediction and interval
            if b.geometric_margin(p) <= 0:
                self._print(f"(!) Bin {b.bin_id}: solution rejected by the geometric check")
                continue
            if best is None or cost < best[2]:
                best = (b, p, cost)
        stats["solve_time"] = time.perf_counter() - start
        if best is None:
            return PlanResult("infeasible", waypoint=problem.waypoint, stats=stats)
        b, p, cost = best
        return PlanResult("feasible", tuple(float(x) for x in p), b.bin_id, float(cost),
                          problem.waypoint, stats)
    # ------------------------------------------------

    def plan(self, z0: EgoState, obstacles: list, sensing_position=None) -> PlanResult:
        """
        Full planning iteration from the predicted initial state `z0`, with obstacle states
        sensed t_plan before the start of the plan at `sensing_position` (default: position of z0).
        """
        sensing_position = z0.position if sensing_position is None else sensing_position
        predictions = self.predict(sensing_position, obstacles)
        # Obstacles at plan start for the high-level planner
        visible = [p.source for p in predictions]
        waypoint = self.high_level_planner(z0, [
            ObstacleState(o.obstacle_id, o.x + o.vx * self.t_plan, o.y + o.vy * self.t_plan,
                          o.vx, o.vy, o.l, o.w) for o in visible
        ])
        problem = self.build_problem(z0, predictions, waypoint)
        active = self.sample_feasible_bins(problem)
        if not active:
            self._print("(!) No bin has a safe sample")
            stats = {**self._empty_stats(problem, []), "solve_time": 0.0}
            return PlanResult("infeasible", waypoint=waypoint, stats=stats)
        result = self.solve(problem, active)
        self._print(
            f"Plan: {result.status} | bin {result.bin_id} | p* {result.p_star} | "
            f"{result.stats['n_constraint_evals']} constraint evals"
        )
        return result
    # ------------------------------------------------

    def reach_of(self, bin_id: int) -> ReachableSet:
        for rs in self.reach_sets:
            if rs.bin_id == bin_id:
                return rs
        raise ValueError(f"Unknown bin: {bin_id}")
    # ------------------------------------------------

    def witnesses(self, z0: EgoState, result: PlanResult, predictions: list) -> list:
        """Signed-distance diagnostics of a feasible plan: the closest obstacle on every interval"""
        if not result.feasible or not predictions:
            return []
        rs = self.reach_of(result.bin_id)
        base, A, G = rs.world_affine(z0)
        out = []
        for j in range(rs.n_intervals):
            z = Zonotope(base[j] + A[j] @ np.array(result.p_star), G[j])
            witness = signed_distance_zonotopes(z, [pred.zonotopes[j] for pred in predictions])
            out.append({"interval": j, "obstacle_id": predictions[witness.obstacle_index].obstacle_id,
                        **witness.to_dict()})
        return out
    # ------------------------------------------------

                    ###################
    ################ Private Methods ##################
                    ###################

    def _empty_stats(self, problem: OptProblem, active: list) -> dict:
        return {
            "backend": self.backend, "n_bins": len(problem.bins), "n_active_bins": len(active),
            "n_constraints": sum(b.n_constraints for b in active),
            "n_constraint_evals": 0, "n_gradient_evals": 0, "n_cost_evals": 0, "iterations": 0,
            "constraint_time": 0.0, "gradient_time": 0.0, "sampling_time": problem.sampling_time,
        }
    # ------------------------------------------------

    @staticmethod
    def _count(stats: dict, result) -> None:
        """Adds the counters and callback times of a solver result to `stats`"""
        stats["n_constraint_evals"] += result.n_constraint_evals
        stats["n_gradient_evals"] += result.n_gradient_evals
        stats["n_cost_evals"] += result.n_cost_evals
        stats["constraint_time"] += result.constraint_time
        stats["gradient_time"] += result.gradient_time
    # ------------------------------------------------

#######################################################

if __name__=="__main__":
    pass
