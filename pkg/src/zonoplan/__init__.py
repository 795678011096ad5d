"""
Exact signed-distance trajectory planning with zonotope reachable sets.

Python classes and methods to build reachable sets, evaluate exact signed-distance constraints
through a ReLU computation graph, plan receding-horizon trajectories and simulate highway trials.
Main user classes: ZonoPlanner, HighwaySimulator
    from zonoplan import ZonoPlanner, HighwaySimulator
Command line: `zonoplan --help` or `python -m zonoplan --help`.
"""

# Informations
__version__ = "0.2.0"
__license__ = "CECILL-B"

# Import classes and packages to secure the namespace
if __package__ != "zonoplan":
    import sys
    from pathlib import Path
    SOURCE_ROOT = str(Path(__file__).parents[1]) # <=> /src/
    sys.path.append(SOURCE_ROOT)
# Run utils/__init__.py
import zonoplan.utils
# Run classes/__init__.py
import zonoplan.classes
# Shortcuts to the main user classes
from zonoplan.classes import ZonoPlanner, HighwaySimulator
