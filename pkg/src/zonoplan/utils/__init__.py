"""
Numerical building blocks of the planner.
- zonotope.py: 2D zonotopes, Minkowski sums, linear maps, vertex enumeration.
- distance.py: exact point/segment/zonotope signed distances and the reachability-based distance.
- relu.py: ReLU computation graph evaluating the signed distance and its gradient.
- frs.py: parameterized reachable sets, obstacle predictions and FRS files.
- solver.py: augmented Lagrangian solver with projected quasi-Newton inner steps.
"""
