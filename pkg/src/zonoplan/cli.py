"""
Command line of the planner.

    zonoplan generate-frs --out frs.json
    zonoplan plan --frs frs.json --scenario scenario.json --out out/
    zonoplan simulate --frs frs.json --seeds 0..49 --out out/ [--svg]
    zonoplan bench --frs frs.json --instances 100 --out out/

Exit codes: 0 on success, 2 on a configuration error, 3 on a runtime failure.
"""

from __future__ import annotations
import argparse
import json
import sys
from dataclasses import dataclass, asdict, fields
from pathlib import *

import pandas as pd

from zonoplan import __version__
from zonoplan.classes import FrsGenerator, ZonoBench, ZonoClient, ZonoPlanner
from zonoplan.classes.HighwaySimulator import Scenario

########################### VARIABLES & ERRORS ################################

SUBCOMMANDS = ("generate-frs", "plan", "simulate", "bench")
BACKENDS = ("sdf", "halfspace")
# Exit codes
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

############################ CONFIGURATION #####################################
# -----------------------------------------------------------------------------
@dataclass
class RunConfig:
    """Resolved configuration of one subcommand (CLI flags over the JSON file over defaults)"""
    subcommand: str
    frs: str = "frs.json"
    scenario: str = None
    scenario_dir: str = None
    seeds: str = "0..49"
    t_plan: float = None
    max_iter: int = None
    backend: str = "sdf"
    obstacles: int = None
    out: str = None
    svg: bool = False
    verbose: bool = False
    instances: int = None
    realtime: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        """Raises ValueError on unknown keys"""
        if not isinstance(data, dict):
            raise TypeError(f"A configuration must be a JSON object (got {type(data).__name__})")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown configuration key(s): {unknown}\n\tAllowed keys: {sorted(known)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def output(self) -> Path:
        if self.out is not None:
            return Path(self.out)
        return Path("frs.json") if self.subcommand == "generate-frs" else Path("out")

    def seed_list(self) -> list:
        """Seeds from 'a..b' (inclusive), a single integer or a list"""
        seeds = self.seeds
        if isinstance(seeds, int):
            return [seeds]
        if isinstance(seeds, list):
            return [int(s) for s in seeds]
        text = str(seeds)
        try:
            if ".." in text:
                first, last = (int(s) for s in text.split(".."))
            else:
                first = last = int(text)
        except ValueError:
            raise ValueError(f"Seeds must read 'a..b' or 'a' (got '{text}')") from None
        if last < first:
            raise ValueError(f"Empty seed range: '{text}'")
        return list(range(first, last + 1))

    def validate(self) -> None:
        """Checks values and paths before any work starts"""
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"Unknown subcommand: '{self.subcommand}' (expected one of {SUBCOMMANDS})")
        if self.backend not in BACKENDS:
            raise ValueError(f"Unknown constraint backend: '{self.backend}' (expected one of {BACKENDS})")
        if self.t_plan is not None and not self.t_plan > 0:
            raise ValueError(f"t_plan must be positive (got {self.t_plan})")
        for name, minimum in (("max_iter", 1), ("obstacles", 0), ("instances", 0)):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value < minimum):
                raise ValueError(f"{name} must be an integer >= {minimum} (got {value})")
        if self.subcommand == "generate-frs":
            return
        if not Path(self.frs).is_file():
            raise FileNotFoundError(
                f"FRS file not found: {self.frs}\n\tGenerate it with: zonoplan generate-frs --out {self.frs}"
            )
        if self.subcommand == "plan" and self.scenario is None:
            raise ValueError("The plan subcommand needs a scenario file (--scenario)")
        if self.scenario is not None and not Path(self.scenario).is_file():
            raise FileNotFoundError(f"Scenario file not found: {self.scenario}")
        if self.scenario_dir is not None and not Path(self.scenario_dir).is_dir():
            raise FileNotFoundError(f"Scenario directory not found: {self.scenario_dir}")
        if self.subcommand == "simulate" and self.scenario is None and self.scenario_dir is None:
            self.seed_list()
# ------------------------------------------------

# -----------------------------------------------------------------------------
def _parse_args(argv: list = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="zonoplan",
        description="Receding-horizon planning with exact zonotope signed-distance constraints.",
    )
    parser.add_argument("--version", action="version", version=f"zonoplan {__version__}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    # Flags shared by every subcommand; None means "not given"
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with configuration keys")
    common.add_argument("--out", help="output directory (FRS file for generate-frs)")
    common.add_argument("--t-plan", dest="t_plan", type=float, help="planning time budget (s)")
    common.add_argument("--verbose", action="store_true", default=None, help="print logs")
    solving = argparse.ArgumentParser(add_help=False)
    solving.add_argument("--frs", help="FRS file (default: frs.json)")
    solving.add_argument("--max-iter", dest="max_iter", type=int, help="solver iterations")
    solving.add_argument("--backend", choices=BACKENDS, help="constraint backend")
    subparsers.add_parser("generate-frs", parents=[common], help="build the reachable sets")
    plan = subparsers.add_parser("plan", parents=[common, solving], help="one planning iteration")
    plan.add_argument("--scenario", help="scenario JSON file")
    simulate = subparsers.add_parser("simulate", parents=[common, solving], help="highway trials")
    simulate.add_argument("--scenario", help="scenario JSON file")
    simulate.add_argument("--scenario-dir", dest="scenario_dir", help="directory of scenario JSON files")
    simulate.add_argument("--seeds", help="seed range 'a..b' (inclusive)")
    simulate.add_argument("--obstacles", type=int, help="exact number of obstacles per scenario")
    simulate.add_argument("--svg", action="store_true", default=None, help="one SVG per planning iteration")
    simulate.add_argument("--realtime", action="store_true", default=None, help="enforce the wall-clock budget")
    bench = subparsers.add_parser("bench", parents=[common, solving], help="constraint benchmark")
    bench.add_argument("--instances", type=int, help="instances per obstacle count")
    return parser.parse_args(argv)

# -----------------------------------------------------------------------------
def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the --config file, then explicit flags"""
    data = {}
    if args.config is not None:
        if not args.config.is_file():
            raise FileNotFoundError(f"Configuration file not found: {args.config}")
        with args.config.open("r") as fid:
            data = json.load(fid)
        if not isinstance(data, dict):
            raise TypeError(f"{args.config} must hold a JSON object")
        data.pop("subcommand", None)
    flags = {key: value for key, value in vars(args).items() if key not in ("config", "subcommand")}
    data.update({key: value for key, value in flags.items() if value is not None})
    config = RunConfig.from_dict({"subcommand": args.subcommand, **data})
    config.validate()
    return config

############################## SUBCOMMANDS #####################################
# -----------------------------------------------------------------------------
def generate_frs(config: RunConfig) -> None:
    generator = FrsGenerator(t_plan=config.t_plan, verbose=config.verbose)
    generator.generate_file(config.output)
    generator._save_config({"run": config.to_dict(), "generator": generator._data_to_save()},
                           config.output.parent)

# -----------------------------------------------------------------------------
def plan(config: RunConfig, planner: ZonoPlanner) -> None:
    """One planning iteration at t=0: plan.json, plan_stats.csv and, when verbose, witnesses.json"""
    scenario = Scenario.load(config.scenario)
    z0 = scenario.ego_start
    sensed = [o.state_at(-planner.t_plan) for o in scenario.obstacles]
    result = planner.plan(z0, sensed)
    output = config.output
    output.mkdir(parents=True, exist_ok=True)
    with (output / "plan.json").open("w") as fid:
        json.dump(result.to_dict(), fid, indent=4)
    stats = {"status": result.status, "bin_id": result.bin_id, **result.stats}
    pd.DataFrame([stats]).to_csv(output / "plan_stats.csv", index=False)
    if config.verbose:
        witnesses = planner.witnesses(z0, result, planner.predict(z0.position, sensed))
        with (output / "witnesses.json").open("w") as fid:
            json.dump(witnesses, fid, indent=4)
    planner._save_config({"run": config.to_dict(), "planner": planner.config()}, output)

# -----------------------------------------------------------------------------
def simulate(config: RunConfig, suite: ZonoBench) -> pd.DataFrame:
    if config.scenario_dir is not None:
        scenarios = [Scenario.load(path) for path in sorted(Path(config.scenario_dir).glob("*.json"))]
        return suite.simulate(config.output, scenarios=scenarios, svg=config.svg)
    if config.scenario is not None:
        return suite.simulate(config.output, scenarios=[Scenario.load(config.scenario)], svg=config.svg)
    return suite.simulate(config.output, seeds=config.seed_list(), svg=config.svg)

# -----------------------------------------------------------------------------
def bench(config: RunConfig, suite: ZonoBench) -> pd.DataFrame:
    return suite.bench(config.output, instances=config.instances)

################################## MAIN ########################################
# -----------------------------------------------------------------------------
def main(argv: list = None) -> int:
    args = _parse_args(argv)
    # Configuration: every path and value is checked before work starts
    try:
        config = resolve_config(args)
        if config.subcommand == "plan":
            runner = ZonoPlanner(frs_file=config.frs, t_plan=config.t_plan, max_iter=config.max_iter,
                                 backend=config.backend, verbose=config.verbose)
        elif config.subcommand in ("simulate", "bench"):
            runner = ZonoBench(
                frs_file=config.frs, t_plan=config.t_plan, max_iter=config.max_iter, backend=config.backend,
                realtime=config.realtime, count_mode="random" if config.obstacles is None else "fixed",
                n_obstacles=config.obstacles, verbose=config.verbose,
            )
        else:
            runner = None
    except (TypeError, ValueError, FileNotFoundError) as error:
        print(f"zonoplan: configuration error:\n\t{error}", file=sys.stderr)
        return EXIT_CONFIG
    # Work
    try:
        try:
            if config.subcommand == "generate-frs":
                generate_frs(config)
            elif config.subcommand == "plan":
                plan(config, runner)
            elif config.subcommand == "simulate":
                simulate(config, runner)
            else:
                bench(config, runner)
        except Exception as error:
            ZonoClient._handle_error(error, context=f"zonoplan {config.subcommand}")
    except RuntimeError as error:
        print(error, file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK

#######################################################

if __name__=="__main__":
    raise SystemExit(main())
