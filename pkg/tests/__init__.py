"""
Tests for zonoplan
"""

# Import classes and packages to secure the namespace
import sys
from functools import lru_cache
from pathlib import Path
SOURCE_ROOT = str(Path(__file__).parents[1] / "src") # <=> /src/
sys.path.append(SOURCE_ROOT)
import zonoplan

# Coarse reachable sets shared by the planner and simulator tests (6 intervals of 0.5 s)
@lru_cache(maxsize=None)
def coarse_reach_sets() -> tuple:
    from zonoplan.classes import FrsGenerator
    return tuple(FrsGenerator(dt=0.5, t_f=3.0, t_m=1.5, grid_points=3, verbose=False).generate())
