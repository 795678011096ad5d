import json
import math
import unittest
from pathlib import *

import numpy as np

try: # Use through unittest
    from tests import coarse_reach_sets
    from zonoplan.classes import ZonoPlanner
    from zonoplan.classes.ZonoPlanner import BatchedProblem
    from zonoplan.utils.distance import signed_distance
    from zonoplan.utils.frs import EgoState, ObstacleState
    from zonoplan.utils.solver import AugmentedLagrangian, Block
except ModuleNotFoundError: # Use as a script
    import sys
    sys.path.append(str(Path(__file__).parents[1])) # <=> repository root
    from tests import coarse_reach_sets
    from zonoplan.classes import ZonoPlanner
    from zonoplan.classes.ZonoPlanner import BatchedProblem
    from zonoplan.utils.distance import signed_distance
    from zonoplan.utils.frs import EgoState, ObstacleState
    from zonoplan.utils.solver import AugmentedLagrangian, Block

# Ego in the middle lane and three obstacles around it
EGO = EgoState(0.0, 5.55, 0.0, 10.0)
TRAFFIC = [
    ObstacleState(0, 25.0, 5.55, 5.0, 0.0),
    ObstacleState(1, 20.0, 1.85, 0.0, 0.0),
    ObstacleState(2, 35.0, 9.25, 8.0, 0.0),
]


class Test_ZonoPlanner(unittest.TestCase):

    __name__ = "Test_ZonoPlanner"

    @classmethod
    def setUpClass(cls) -> None:
        cls.reach_sets = list(coarse_reach_sets())

    def planner(self, **kwargs) -> ZonoPlanner:
        return ZonoPlanner(reach_sets=self.reach_sets, verbose=False, **kwargs)

    def test_constructor_errors(self):
        with self.assertRaises(TypeError):
            ZonoPlanner(verbose=False)
        with self.assertRaises(ValueError):
            self.planner(backend="lp")
        with self.assertRaises(ValueError):
            self.planner(sensor_radius=150.0)
        with self.assertRaises(FileNotFoundError):
            ZonoPlanner(frs_file="missing/frs.json", verbose=False)

    def test_high_level_planner(self):
        planner = self.planner()
        # Free road: keep the lane, waypoint at the maximal distance
        wp = planner.high_level_planner(EGO, [])
        self.assertEqual(wp.lane_id, 1)
        np.testing.assert_allclose(wp.position, (60.0, 5.55))
        # Blocked lane: the lowest free lane wins
        wp = planner.high_level_planner(EGO, [ObstacleState(0, 30.0, 5.55, 0.0, 0.0)])
        self.assertEqual(wp.lane_id, 0)
        np.testing.assert_allclose(wp.position, (60.0, 1.85))
        # Furthest gap, waypoint d_safe before the obstacle
        obstacles = [ObstacleState(0, 50.0, 1.85, 0.0, 0.0), ObstacleState(1, 30.0, 5.55, 0.0, 0.0),
                     ObstacleState(2, 70.0, 9.25, 0.0, 0.0), ObstacleState(3, -10.0, 9.25, 0.0, 0.0)]
        wp = planner.high_level_planner(EGO, obstacles)
        self.assertEqual(wp.lane_id, 2)
        self.assertAlmostEqual(wp.position[0], 50.0)
        # Ties keep the current lane
        obstacles = [ObstacleState(0, 100.0, 1.85, 0.0, 0.0), ObstacleState(1, 100.0, 5.55, 0.0, 0.0)]
        self.assertEqual(planner.high_level_planner(EGO, obstacles).lane_id, 1)
        self.assertEqual(planner.lane_gaps(EGO, obstacles), [100.0, 100.0, math.inf])

    def test_lanes(self):
        planner = self.planner()
        self.assertEqual([planner.lane_of(y) for y in (-1.0, 1.0, 5.0, 9.0, 20.0)], [0, 0, 1, 2, 2])
        self.assertAlmostEqual(planner.lane_center(2), 9.25)

    def test_active_bins_and_road_restriction(self):
        planner = self.planner()
        z0 = EgoState(0.0, 1.85, 0.0, 9.0)
        problem = planner.build_problem(z0, [], planner.high_level_planner(z0, []))
        # Three lane-keeping and two left lane-change bins; right changes leave the road
        self.assertEqual([b.bin_id for b in problem.bins], [0, 1, 2, 5, 6])
        for b in problem.bins:
            with self.subTest(bin=b.bin_id):
                self.assertGreaterEqual(b.lo[1], 0.0)
                self.assertTrue(b.rs.bin.speed_valid(z0.v))

    def test_bin_samples(self):
        planner = self.planner()
        problem = planner.build_problem(EGO, [], planner.high_level_planner(EGO, []))
        for b in problem.bins:
            samples = planner.bin_samples(b)
            with self.subTest(bin=b.bin_id):
                self.assertEqual(samples.shape, (10, 2))
                self.assertTrue(np.all(samples >= b.lo) and np.all(samples <= b.hi))
                # One sample per tenth along each axis
                for k in range(2):
                    frac = (samples[:, k] - b.lo[k]) / (b.hi[k] - b.lo[k])
                    self.assertEqual(sorted(np.floor(frac * 10).astype(int)), list(range(10)))

    def test_sdf_constraints_are_exact(self):
        planner = self.planner()
        predictions = planner.predict(EGO.position, TRAFFIC)
        self.assertEqual(len(predictions), 3)
        problem = planner.build_problem(EGO, predictions, planner.high_level_planner(EGO, TRAFFIC))
        self.assertGreater(problem.n_constraints, 0)
        for b in problem.bins:
            p = b.center
            values, grads = b.constraints(p)
            self.assertEqual(grads.shape, (b.n_constraints, 2))
            for i, (j, k) in enumerate(b.pairs):
                with self.subTest(bin=b.bin_id, interval=j, obstacle=k):
                    self.assertAlmostEqual(values[i], signed_distance(b.reach(j, p), predictions[k].zonotopes[j]),
                                           delta=1e-9)

    def test_halfspace_backend_agrees_in_sign(self):
        sdf, halfspace = self.planner(), self.planner(backend="halfspace")
        waypoint = sdf.high_level_planner(EGO, TRAFFIC)
        predictions = sdf.predict(EGO.position, TRAFFIC)
        a = sdf.build_problem(EGO, predictions, waypoint)
        b = halfspace.build_problem(EGO, predictions, waypoint)
        for pa, pb in zip(a.bins, b.bins):
            self.assertEqual(pa.pairs, pb.pairs)
            for p in sdf.bin_samples(pa):
                va, _ = pa.constraints(p, need_grad=False)
                vb, _ = pb.constraints(p, need_grad=False)
                keep = np.abs(va) > 1e-6
                with self.subTest(bin=pa.bin_id, p=p):
                    np.testing.assert_array_equal(va[keep] > 0, vb[keep] > 0)

    def test_pruning_is_sound(self):
        planner = self.planner()
        predictions = planner.predict(EGO.position, TRAFFIC)
        problem = planner.build_problem(EGO, predictions, planner.high_level_planner(EGO, TRAFFIC))
        for b in problem.bins:
            kept = set(b.pairs)
            for p in planner.bin_samples(b):
                for j in range(b.rs.n_intervals):
                    for k, pred in enumerate(predictions):
                        if (j, k) in kept:
                            continue
                        with self.subTest(bin=b.bin_id, interval=j, obstacle=k):
                            self.assertGreater(signed_distance(b.reach(j, p), pred.zonotopes[j]), planner.margin)

    def test_plan_on_free_road(self):
        for backend in ("sdf", "halfspace"):
            planner = self.planner(backend=backend)
            result = planner.plan(EgoState(0.0, 5.55, 0.0, 0.0), [])
            with self.subTest(backend=backend):
                self.assertTrue(result.feasible)
                self.assertTrue(planner.reach_of(result.bin_id).bin.contains(result.p_star))
                self.assertEqual(result.stats["n_constraints"], 0)
                self.assertTrue(math.isfinite(result.cost))
                json.dumps(result.to_dict())

    def test_free_road_optimum(self):
        # From rest the fastest lane-keeping bin valid at 0 m/s is u in [6, 12]: drive at 12 m/s, no offset
        z0 = EgoState(0.0, 5.55, 0.0, 0.0)
        for backend in ("sdf", "halfspace"):
            planner = self.planner(backend=backend)
            result = planner.plan(z0, [])
            rs = planner.reach_of(1)
            base, A, _ = rs.world_affine(z0)
            expected = np.linalg.norm(base[rs.j_drive_end] + A[rs.j_drive_end] @ [12.0, 0.0] - [60.0, 5.55])
            with self.subTest(backend=backend):
                self.assertEqual(result.bin_id, 1)
                self.assertAlmostEqual(result.p_star[0], 12.0, places=6)
                self.assertAlmostEqual(result.p_star[1], 0.0, delta=1e-2)
                self.assertAlmostEqual(result.cost, expected, places=3)

    def test_unsafe_bins_are_dropped(self):
        planner = self.planner()
        # Long static truck alongside in the left lane
        truck = [ObstacleState(0, 8.0, 9.25, 0.0, 0.0, l=40.0)]
        predictions = planner.predict(EGO.position, truck)
        problem = planner.build_problem(EGO, predictions, planner.high_level_planner(EGO, truck))
        kept = planner.sample_feasible_bins(problem)
        expected = [b for b in problem.bins if any(b.pair_feasible(p) for p in planner.bin_samples(b))]
        self.assertEqual([b.bin_id for b in kept], [b.bin_id for b in expected])
        self.assertTrue(kept)
        self.assertTrue(all(b.rs.bin.kind != "left" for b in kept))
        self.assertTrue(any(b.rs.bin.kind == "left" for b in problem.bins))
        self.assertEqual(set(planner.feasible_samples), {b.bin_id for b in kept})

    def test_batched_problem_matches_bins(self):
        planner = self.planner()
        predictions = planner.predict(EGO.position, TRAFFIC)
        problem = planner.build_problem(EGO, predictions, planner.high_level_planner(EGO, TRAFFIC))
        batched = BatchedProblem(problem.bins)
        self.assertEqual(batched.n_constraints, problem.n_constraints)
        P = np.concatenate([planner.bin_samples(b)[3] for b in problem.bins])
        values, jac = batched.constraints(P)
        self.assertEqual(jac.shape, (problem.n_constraints, 2 * len(problem.bins)))
        for b, block, p in zip(problem.bins, batched.blocks, batched.split(P)):
            expected, grads = b.constraints(p)
            with self.subTest(bin=b.bin_id):
                np.testing.assert_allclose(values[block.rows], expected, atol=1e-12)
                np.testing.assert_allclose(jac[block.rows, block.params], grads, atol=1e-12)
                # No coupling between bins
                others = np.ones(jac.shape[1], dtype=bool)
                others[block.params] = False
                self.assertTrue(np.all(jac[block.rows][:, others] == 0.0))
        total, grad = batched.cost(P)
        self.assertAlmostEqual(total, sum(b.cost(p)[0] for b, p in zip(problem.bins, batched.split(P))))
        self.assertEqual(grad.shape, P.shape)

    def test_repeated_plans_are_identical(self):
        for backend in ("sdf", "halfspace"):
            planner = self.planner(backend=backend)
            first, second = planner.plan(EGO, TRAFFIC), planner.plan(EGO, TRAFFIC)
            with self.subTest(backend=backend):
                self.assertEqual(first.p_star, second.p_star)
                self.assertEqual(first.bin_id, second.bin_id)
                for key in ("n_constraint_evals", "n_gradient_evals", "n_cost_evals", "iterations"):
                    self.assertEqual(first.stats[key], second.stats[key])

    def test_stats_match_solver_counters(self):
        for backend in ("sdf", "halfspace"):
            planner = self.planner(backend=backend)
            results, solve = [], planner.solver.solve
            def recording(*args, **kwargs):
                results.append(solve(*args, **kwargs))
                return results[-1]
            planner.solver.solve = recording
            stats = planner.plan(EGO, TRAFFIC).stats
            with self.subTest(backend=backend):
                # One batched solve for "sdf", one solve per active bin for "halfspace"
                self.assertEqual(len(results), 1 if backend == "sdf" else stats["n_active_bins"])
                self.assertEqual(stats["n_constraint_evals"], sum(r.n_constraint_evals for r in results))
                self.assertEqual(stats["n_gradient_evals"], sum(r.n_gradient_evals for r in results))
                self.assertEqual(stats["iterations"], max(r.iterations for r in results))
                self.assertAlmostEqual(stats["constraint_time"], sum(r.constraint_time for r in results))
                self.assertGreaterEqual(stats["constraint_time"], stats["gradient_time"])

    def test_batched_solve_needs_fewer_evaluations(self):
        stats = {backend: self.planner(backend=backend).plan(EGO, TRAFFIC).stats
                 for backend in ("sdf", "halfspace")}
        self.assertGreater(stats["sdf"]["n_active_bins"], 1)
        self.assertEqual(stats["sdf"]["n_constraints"], stats["halfspace"]["n_constraints"])
        self.assertLess(stats["sdf"]["n_constraint_evals"], stats["halfspace"]["n_constraint_evals"])

    def test_plan_is_safe(self):
        planner = self.planner()
        result = planner.plan(EGO, TRAFFIC)
        self.assertTrue(result.feasible)
        predictions = planner.predict(EGO.position, TRAFFIC)
        witnesses = planner.witnesses(EGO, result, predictions)
        self.assertEqual(len(witnesses), planner.n_intervals)
        self.assertGreater(min(w["value"] for w in witnesses), 0.0)
        for key in ("n_constraint_evals", "n_gradient_evals", "iterations", "solve_time", "sampling_time"):
            self.assertIn(key, result.stats)

    def test_wall_is_infeasible(self):
        planner = self.planner()
        z0 = EgoState(0.0, 5.55, 0.0, 25.0)
        wall = [ObstacleState(i, 15.0, planner.lane_center(i), 0.0, 0.0) for i in range(3)]
        result = planner.plan(z0, wall)
        self.assertFalse(result.feasible)
        self.assertEqual(result.status, "infeasible")
        self.assertIsNone(result.p_star)
        self.assertEqual(planner.witnesses(z0, result, planner.predict(z0.position, wall)), [])

    def test_config(self):
        config = self.planner(t_plan=0.5, max_iter=5).config()
        self.assertEqual((config["t_plan"], config["max_iter"], config["backend"]), (0.5, 5, "sdf"))
        json.dumps(config)

    def test_reach_of(self):
        planner = self.planner()
        self.assertEqual(planner.reach_of(4).bin_id, 4)
        with self.assertRaises(ValueError):
            planner.reach_of(99)


class Test_AugmentedLagrangian(unittest.TestCase):

    __name__ = "Test_AugmentedLagrangian"

    @staticmethod
    def quadratic(p):
        return float((p[0] - 3.0) ** 2), np.array([2.0 * (p[0] - 3.0)])

    def test_bound_constrained(self):
        free = lambda p, need_grad=True: (np.zeros(0), np.zeros((0, 1)) if need_grad else None)
        result = AugmentedLagrangian().solve(self.quadratic, free, [0.0], [-5.0], [2.0])
        self.assertTrue(result.feasible)
        self.assertEqual(result.status, "kkt")
        self.assertAlmostEqual(result.p[0], 2.0, places=9)
        self.assertAlmostEqual(result.cost, 1.0, places=9)

    def test_inequality_constrained(self):
        # p <= 1 - margin
        def constraint(p, need_grad=True):
            return np.array([1.0 - p[0]]), (np.array([[-1.0]]) if need_grad else None)
        result = AugmentedLagrangian().solve(self.quadratic, constraint, [0.0], [-5.0], [5.0],
                                             feasible_guess=[0.9])
        self.assertTrue(result.feasible)
        self.assertLessEqual(result.p[0], 0.999 + 1e-12)
        self.assertLessEqual(result.cost, 2.1 ** 2 + 1e-12)
        self.assertGreater(result.n_constraint_evals, 0)

    def test_infeasible(self):
        blocked = lambda p, need_grad=True: (np.array([-1.0]), np.zeros((1, 1)) if need_grad else None)
        result = AugmentedLagrangian(max_iter=3).solve(self.quadratic, blocked, [0.0], [-5.0], [5.0])
        self.assertFalse(result.feasible)
        self.assertEqual((result.status, result.iterations), ("max_iter", 3))

    def test_expired_budget(self):
        result = AugmentedLagrangian().solve(self.quadratic, lambda p, need_grad=True: (np.zeros(0), None),
                                             [0.0], [-5.0], [5.0], deadline=0.0)
        self.assertEqual(result.status, "budget")
        # The starting point is still a valid answer
        self.assertTrue(result.feasible)

    def test_blocks(self):
        # Two independent copies of the quadratic; the second one is blocked
        def constraints(P, need_grad=True):
            values = np.array([1.0 - P[0], -1.0])
            return values, (np.array([[-1.0, 0.0], [0.0, 0.0]]) if need_grad else None)
        def cost(P):
            return self.quadratic(P[:1])[0] + self.quadratic(P[1:])[0], \
                np.concatenate([self.quadratic(P[:1])[1], self.quadratic(P[1:])[1]])
        blocks = [Block(slice(0, 1), slice(0, 1), self.quadratic),
                  Block(slice(1, 2), slice(1, 2), self.quadratic)]
        result = AugmentedLagrangian(max_iter=4).solve(cost, constraints, [0.0, 0.0], [-5.0, -5.0], [5.0, 5.0],
                                                       blocks=blocks)
        self.assertEqual([r.feasible for r in result.blocks], [True, False])
        self.assertFalse(result.feasible)
        self.assertLessEqual(result.blocks[0].p[0], 0.999 + 1e-9)
        self.assertAlmostEqual(result.blocks[0].cost, self.quadratic(result.blocks[0].p)[0])
        np.testing.assert_array_equal(result.p, np.concatenate([r.p for r in result.blocks]))

    def test_callback_times(self):
        def constraint(p, need_grad=True):
            return np.array([1.0 - p[0]]), (np.array([[-1.0]]) if need_grad else None)
        result = AugmentedLagrangian().solve(self.quadratic, constraint, [0.0], [-5.0], [5.0])
        self.assertGreater(result.n_constraint_evals, result.n_gradient_evals)
        self.assertGreater(result.constraint_time, 0.0)
        self.assertLessEqual(result.gradient_time, result.constraint_time)

    def test_settings(self):
        with self.assertRaises(ValueError):
            AugmentedLagrangian(max_iter=0)


if __name__ == '__main__':
    unittest.main()
