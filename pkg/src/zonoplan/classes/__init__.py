"""
All classes of the planner.
- ZonoPlanner: main user class. Plans receding-horizon trajectories with exact signed-distance constraints.
- HighwaySimulator: highway scenarios and the receding-horizon loop with collision checks.
- FrsGenerator: builds the parameterized reachable sets and FRS files.
- ZonoBench: simulation suites and constraint benchmarks (CSV reports).
- ZonoClient: base class.
"""

# Import classes and modules to secure the namespace
if __package__ != "zonoplan.classes":
    import sys
    from pathlib import Path
    SOURCE_ROOT = str(Path(__file__).parents[2]) # src/
    sys.path.append(SOURCE_ROOT)
# Import utilities
import zonoplan.utils
# Replace each class module by its class in the namespace
from zonoplan.classes.ZonoClient import ZonoClient
from zonoplan.classes.FrsGenerator import FrsGenerator
from zonoplan.classes.ZonoPlanner import ZonoPlanner
from zonoplan.classes.HighwaySimulator import HighwaySimulator
from zonoplan.classes.ZonoBench import ZonoBench
