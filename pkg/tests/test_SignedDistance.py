import unittest

import numpy as np

try: # Use through unittest
    from tests import coarse_reach_sets
    from zonoplan.utils.zonotope import Zonotope, enumerate_vertices, interval_zonotope, rotation
    from zonoplan.utils.frs import EgoState, ObstacleState, instantiate, predict_obstacle
    from zonoplan.utils.distance import (
        Segment, buffered_obstacle, halfspace_value, point_segment_distance, polygons_intersect,
        rdf, signed_distance, signed_distance_polygons, signed_distance_zonotopes
    )
except ModuleNotFoundError: # Use as a script
    import sys
    from pathlib import Path
    sys.path.append(str(Path(__file__).parents[1])) # <=> repository root
    from tests import coarse_reach_sets
    from zonoplan.utils.zonotope import Zonotope, enumerate_vertices, interval_zonotope, rotation
    from zonoplan.utils.frs import EgoState, ObstacleState, instantiate, predict_obstacle
    from zonoplan.utils.distance import (
        Segment, buffered_obstacle, halfspace_value, point_segment_distance, polygons_intersect,
        rdf, signed_distance, signed_distance_polygons, signed_distance_zonotopes
    )


def random_pair(rng, overlap: bool) -> tuple:
    z = Zonotope(rng.uniform(-3, 3, 2), rng.normal(size=(int(rng.integers(2, 6)), 2)))
    center = z.center + rng.normal(scale=0.5, size=2) if overlap else rng.uniform(-8, 8, 2)
    o = Zonotope(center, rng.normal(size=(int(rng.integers(2, 6)), 2)))
    return z, o


class Test_SignedDistance(unittest.TestCase):

    __name__ = "Test_SignedDistance"

    def test_point_segment_examples(self):
        s = Segment([-1, 0], [1, 0])
        self.assertEqual(point_segment_distance([0, 1], s), (1.0, 0.5))
        self.assertEqual(point_segment_distance([3, 0], s), (2.0, 1.0))
        self.assertEqual(point_segment_distance([-2, 0], s), (1.0, 0.0))
        # Degenerate segment
        d, t = point_segment_distance([3, 4], Segment([0, 0], [0, 0]))
        self.assertEqual((d, t), (5.0, 0.0))

    def test_box_examples(self):
        z = interval_zonotope([-1, -1], [1, 1])
        self.assertAlmostEqual(signed_distance(z, interval_zonotope([4, -1], [6, 1])), 3.0, places=12)
        self.assertAlmostEqual(signed_distance(z, interval_zonotope([0, -1], [2, 1])), -1.0, places=12)
        # Touching boxes
        self.assertAlmostEqual(signed_distance(z, interval_zonotope([1, -1], [3, 1])), 0.0, places=12)

    def test_matches_polygon_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(400):
            z, o = random_pair(rng, overlap=trial % 2 == 0)
            with self.subTest(trial=trial):
                expected = signed_distance_polygons(enumerate_vertices(z).vertices, enumerate_vertices(o).vertices)
                self.assertAlmostEqual(signed_distance(z, o), expected, delta=1e-9)

    def test_positive_distance_is_conservative(self):
        rng = np.random.default_rng(1)
        for trial in range(100):
            z, o = random_pair(rng, overlap=False)
            value = signed_distance(z, o)
            if value <= 0:
                continue
            x = z.center + rng.uniform(-1, 1, (200, z.m)) @ z.generators
            y = o.center + rng.uniform(-1, 1, (200, o.m)) @ o.generators
            with self.subTest(trial=trial):
                self.assertGreaterEqual(np.linalg.norm(x - y, axis=1).min(), value - 1e-9)

    def test_witness_and_minimum_over_obstacles(self):
        z = interval_zonotope([-1, -1], [1, 1])
        far, near = interval_zonotope([10, 0], [11, 1]), interval_zonotope([3, -1], [4, 1])
        result = signed_distance_zonotopes(z, [far, near])
        self.assertEqual(result.obstacle_index, 1)
        self.assertAlmostEqual(result.value, 2.0, places=12)
        # Closest point of the buffered obstacle [2, 5] x [-2, 2]
        np.testing.assert_allclose(result.witness_point, [2.0, 0.0], atol=1e-12)
        self.assertEqual(set(result.to_dict()), {"value", "obstacle_index", "witness_segment_index", "witness_point"})
        with self.assertRaises(ValueError):
            signed_distance_zonotopes(z, [])

    def test_segment_buffer_has_no_interior(self):
        # Point ego against a segment obstacle
        value = signed_distance(Zonotope([0, 0]), Zonotope([0, 0], [[1, 0]]))
        self.assertEqual(value, 0.0)

    def test_rdf(self):
        reach = [interval_zonotope([j, 0], [j + 1, 1]) for j in range(3)]
        obstacle = [interval_zonotope([5, 0], [6, 1]) for _ in range(3)]
        value, j = rdf(reach, obstacle)
        self.assertAlmostEqual(value, 2.0, places=12)
        self.assertEqual(j, 2)
        with self.assertRaises(ValueError):
            rdf(reach, obstacle[:2])
        with self.assertRaisesRegex(ValueError, "at least one time interval"):
            rdf([], [])

    def test_symmetry_and_rigid_motion(self):
        rng = np.random.default_rng(3)
        for trial in range(300):
            z, o = random_pair(rng, overlap=trial % 2 == 0)
            value = signed_distance(z, o)
            R, t = rotation(rng.uniform(-np.pi, np.pi)), rng.uniform(-50, 50, 2)
            moved = [Zonotope(R @ x.center + t, x.generators @ R.T) for x in (z, o)]
            with self.subTest(trial=trial):
                self.assertAlmostEqual(signed_distance(o, z), value, delta=1e-9)
                self.assertAlmostEqual(signed_distance(*moved), value, delta=1e-9)

    def test_rdf_below_ground_truth_distance(self):
        rs = coarse_reach_sets()[6] # left lane change, u in [12, 18)
        z0, p = EgoState(10.0, 2.0, 0.0, 14.0), (15.0, 3.0)
        reach = instantiate(rs, z0, p)
        for x, v in ((25.0, 0.0), (35.0, 0.0), (45.0, 8.0), (60.0, 8.0), (30.0, 12.0)):
            state = ObstacleState(0, x, 5.55, v, 0.0)
            pred = predict_obstacle(state, z0.position, rs.n_intervals, rs.dt, 0.0, np.inf)
            value, _ = rdf(reach, pred)
            for j in range(rs.n_intervals):
                bound = signed_distance(reach[j], pred.zonotopes[j])
                self.assertGreaterEqual(bound, value)
                for f in (0.0, 0.25, 0.5, 0.75, 1.0):
                    t = (j + f) * rs.dt
                    truth = signed_distance_polygons(rs.occupancy(z0, p, t), state.corners_at(t))
                    with self.subTest(x=x, v=v, interval=j, f=f):
                        self.assertGreaterEqual(truth, bound - 1e-9)

    def test_halfspace_value_sign(self):
        rng = np.random.default_rng(2)
        for trial in range(200):
            z, o = random_pair(rng, overlap=trial % 2 == 0)
            value = signed_distance(z, o)
            if abs(value) < 1e-6:
                continue
            with self.subTest(trial=trial):
                self.assertEqual(halfspace_value(z.center, buffered_obstacle(z, o))[0] > 0, value > 0)

    def test_polygon_tools(self):
        a = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        self.assertTrue(polygons_intersect(a, a + [1, 0]))
        self.assertFalse(polygons_intersect(a, a + [1.5, 0]))
        self.assertAlmostEqual(signed_distance_polygons(a, a + [1.5, 0]), 0.5, places=12)
        self.assertAlmostEqual(signed_distance_polygons(a, a + [0.75, 0]), -0.25, places=12)


if __name__ == '__main__':
    unittest.main()
