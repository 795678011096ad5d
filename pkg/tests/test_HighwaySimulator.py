import contextlib
import io
import math
import tempfile
import unittest
from pathlib import *

import numpy as np

try: # Use through unittest
    from tests import coarse_reach_sets
    from zonoplan.classes import HighwaySimulator, ZonoPlanner
    from zonoplan.classes.HighwaySimulator import (
        Obstacle, Scenario, TrialResult, _Plan, collision_check, rectangle
    )
    from zonoplan.utils.frs import EgoState
except ModuleNotFoundError: # Use as a script
    import sys
    sys.path.append(str(Path(__file__).parents[1])) # <=> repository root
    from tests import coarse_reach_sets
    from zonoplan.classes import HighwaySimulator, ZonoPlanner
    from zonoplan.classes.HighwaySimulator import (
        Obstacle, Scenario, TrialResult, _Plan, collision_check, rectangle
    )
    from zonoplan.utils.frs import EgoState


class Test_HighwaySimulator(unittest.TestCase):

    __name__ = "Test_HighwaySimulator"

    @classmethod
    def setUpClass(cls) -> None:
        cls.reach_sets = list(coarse_reach_sets())

    def simulator(self, **kwargs) -> HighwaySimulator:
        planner = ZonoPlanner(reach_sets=self.reach_sets, verbose=False)
        return HighwaySimulator(planner, verbose=False, **kwargs)

    def test_constructor_errors(self):
        with self.assertRaises(TypeError):
            HighwaySimulator(None, verbose=False)
        with self.assertRaises(ValueError):
            self.simulator(count_mode="poisson")
        with self.assertRaises(ValueError):
            self.simulator(count_mode="fixed")
        with self.assertRaises(ValueError):
            self.simulator(highway_length=100.0)

    def test_random_scenarios(self):
        sim = self.simulator()
        for seed in range(20):
            scenario = sim.generate_scenario(seed)
            with self.subTest(seed=seed):
                self.assertEqual(scenario, sim.generate_scenario(seed))
                moving = [o for o in scenario.obstacles if o.v > 0]
                self.assertLessEqual(len(moving), 15)
                self.assertLessEqual(len(scenario.obstacles) - len(moving), 3)
                self.assertNoOverlap(scenario)
                for o in moving:
                    self.assertTrue(15.0 <= o.v <= 25.0)
                self.assertEqual(scenario.ego_start, EgoState(0.0, 1.5 * 3.7, 0.0, 0.0))

    def test_fixed_count_scenarios(self):
        sim = self.simulator(count_mode="fixed", n_obstacles=10)
        for seed in range(10):
            scenario = sim.generate_scenario(seed)
            with self.subTest(seed=seed):
                self.assertEqual(len(scenario.obstacles), 10)
                self.assertLessEqual(sum(o.v == 0 for o in scenario.obstacles), 2)
                self.assertNoOverlap(scenario)
        self.assertEqual(self.simulator(count_mode="fixed", n_obstacles=0).generate_scenario(0).obstacles, [])

    def test_scenario_file(self):
        scenario = self.simulator().generate_scenario(7)
        with tempfile.TemporaryDirectory() as folder:
            path = Path(folder) / "scenarios" / "seed7.json"
            scenario.save(path)
            self.assertEqual(Scenario.load(path), scenario)
        with self.assertRaises(FileNotFoundError):
            Scenario.load("missing/seed7.json")
        with self.assertRaises(TypeError):
            Scenario.from_dict([1, 2])
        # Minimal hand-written scenario
        scenario = Scenario.from_dict({"length": 200, "obstacles": [{"x": 80.0, "y": 5.55, "lane": 1, "v": 0.0}]})
        self.assertEqual(scenario.goal_x, 200.0)
        self.assertEqual(scenario.obstacles[0].obstacle_id, 0)

    def test_rectangles(self):
        np.testing.assert_allclose(rectangle(0, 0, 0, 4, 2), [[-2, -1], [2, -1], [2, 1], [-2, 1]])
        turned = rectangle(1, 1, math.pi / 2, 4, 2)
        np.testing.assert_allclose(turned.min(axis=0), [0, -1], atol=1e-12)
        np.testing.assert_allclose(turned.max(axis=0), [2, 3], atol=1e-12)
        ego = rectangle(0, 0, 0, 4, 2)
        self.assertTrue(collision_check(ego, [rectangle(10, 0, 0, 4, 2), rectangle(3, 1, 0, 4, 2)]))
        # Touching
        self.assertTrue(collision_check(ego, [rectangle(4, 0, 0, 4, 2)]))
        self.assertFalse(collision_check(ego, [rectangle(4.5, 0, 0, 4, 2), rectangle(0, 2.5, 0, 4, 2)]))
        self.assertFalse(collision_check(ego, []))

    def test_empty_road_reaches_goal(self):
        sim = self.simulator(highway_length=150.0)
        scenario = Scenario(0, [], length=150.0, goal_x=150.0)
        result = sim.run_trial(scenario)
        self.assertEqual(result.outcome, "success")
        self.assertGreaterEqual(result.final_x, 150.0)
        self.assertEqual(result.n_infeasible, 0)
        self.assertTrue(result.sensing_ok)
        self.assertEqual(result.min_moving_clearance, math.inf)
        self.assertEqual(set(result.to_row()), set(TrialResult.COLUMNS))
        self.assertEqual(len(result.solve_times), result.n_iterations)

    def test_wall_ends_in_safe_stop(self):
        sim = self.simulator(highway_length=300.0, max_planning_iterations=40)
        wall = [Obstacle(i, 80.0, (i + 0.5) * 3.7, i, 0.0) for i in range(3)]
        result = sim.run_trial(Scenario(1, wall, length=300.0, goal_x=300.0))
        self.assertEqual(result.outcome, "safe_stop")
        self.assertLess(result.final_x, 80.0 - 4.8)
        self.assertEqual(result.final_v, 0.0)
        self.assertGreater(result.min_moving_clearance, 0.0)

    def test_trial_logs(self):
        planner = ZonoPlanner(reach_sets=self.reach_sets, verbose=True)
        sim = HighwaySimulator(planner, highway_length=150.0, verbose=True)
        out = io.StringIO()
        with contextlib.redirect_stdout(out):
            result = sim.run_trial(Scenario(0, [], length=150.0, goal_x=150.0))
        # Planner logs are silenced during the trial only
        self.assertNotIn("Plan:", out.getvalue())
        self.assertIn(f"Outcome: {result.outcome}", out.getvalue())
        self.assertTrue(planner.verbose)

    def test_start_must_be_at_rest(self):
        sim = self.simulator(highway_length=150.0)
        with self.assertRaises(ValueError):
            sim.run_trial(Scenario(0, [], length=150.0, ego_start=EgoState(0.0, 5.55, 0.0, 5.0), goal_x=150.0))

    def test_collisions_are_detected(self):
        sim = self.simulator(highway_length=150.0)
        planner = sim.planner
        # Driving straight at 9 m/s into a parked vehicle 10 m ahead
        plan = _Plan(planner.reach_of(1), EgoState(0.0, 5.55, 0.0, 9.0), (9.0, 0.0), 0.0)
        scenario = Scenario(0, [Obstacle(0, 10.0, 5.55, 1, 0.0)], length=150.0, goal_x=150.0)
        result = TrialResult(0, "safe_stop")
        self.assertTrue(sim._execute(plan, 0.0, 1.5, scenario, result, []))
        self.assertLess(result.min_moving_clearance, 0.0)
        # Same plan, vehicle in the next lane
        scenario = Scenario(0, [Obstacle(0, 10.0, 9.25, 2, 0.0)], length=150.0, goal_x=150.0)
        result = TrialResult(0, "safe_stop")
        self.assertFalse(sim._execute(plan, 0.0, 1.5, scenario, result, []))
        self.assertGreater(result.min_moving_clearance, 0.0)

    def test_svg_frames(self):
        with tempfile.TemporaryDirectory() as folder:
            sim = self.simulator(highway_length=150.0, svg_dir=folder)
            scenario = Scenario(2, [Obstacle(0, 60.0, 1.85, 0, 20.0)], length=150.0, goal_x=150.0)
            result = sim.run_trial(scenario)
            frames = sorted(Path(folder).glob("seed0002_iter*.svg"))
            self.assertEqual(len(frames), result.n_iterations)
            self.assertEqual(frames[0].name, "seed0002_iter0000.svg")

    def assertNoOverlap(self, scenario: Scenario):
        """Vehicles sharing a lane are at least a length and the spawn gap apart"""
        for a in scenario.obstacles:
            for b in scenario.obstacles:
                if a.obstacle_id < b.obstacle_id and a.lane == b.lane:
                    self.assertGreaterEqual(abs(a.x - b.x), a.l + 2.0)


if __name__ == '__main__':
    unittest.main()
