from __future__ import annotations
import contextlib
import math
import textwrap
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import *

import numpy as np
import pandas as pd

from zonoplan.classes.ZonoClient import ZonoClient
from zonoplan.classes.ZonoPlanner import ZonoPlanner
from zonoplan.classes.HighwaySimulator import EgoState, HighwaySimulator, Obstacle, Scenario, TrialResult
from zonoplan.utils.frs import load_frs

class ZonoBench(ZonoClient):
    """
    Simulation suites and constraint benchmarks over a shared set of reachable sets.

    `simulate` runs one trial per seed (or scenario file) and writes:
    - results.csv : deterministic per-trial outcomes and counters;
    - timing.csv : wall-clock solve times per trial;
    - config.json : the resolved configuration.

    `bench` solves random planning instances for each obstacle count with both constraint
    backends under the planning time budget and writes bench.csv (one row per instance and
    backend), bench_summary.csv (mean / std / median per backend and obstacle count, and the
    share of instances where "sdf" reaches a cost at most the halfspace one) and
    bench_scaling.csv (log-log growth exponent of the median solve time per backend).

    Usage:
        suite = ZonoBench(frs_file="frs.json")
        suite.simulate(seeds=range(50), output_dir="out")
        suite.bench(output_dir="out", instances=20)
    """

                    ##################
    ################ Class Attributes ##################
                    ##################

    __name__ = "ZonoBench"
    _PROPERTIES = ["frs_file", "t_plan", "max_iter", "backend", "realtime", "count_mode",
                   "n_obstacles", "highway_length", "max_planning_iterations"]
    # Benchmark sweep
    _OBSTACLE_COUNTS = (10, 20, 30, 40, 50)
    _INSTANCES = 500
    _BACKENDS = ("sdf", "halfspace")
    # Benchmark instances: obstacles spawn around the ego, within the reach of the fastest bin
    _BENCH_EGO_X = 100.0
    _BENCH_STATIC_SHARE = 0.2
    _BENCH_SPEEDS = (15.0, 25.0)
    _BENCH_GAP = 0.5
    _BENCH_TRIALS = 100
    # Output files
    _RESULTS_FILE = "results.csv"
    _TIMING_FILE = "timing.csv"
    _BENCH_FILE = "bench.csv"
    _SUMMARY_FILE = "bench_summary.csv"
    _SCALING_FILE = "bench_scaling.csv"
    _SVG_DIR = "svg"
    # Columns of the benchmark tables
    BENCH_COLUMNS = ["backend", "n_obstacles", "instance", "status", "cost", "n_active_bins", "n_constraints",
                     "n_constraint_evals", "n_gradient_evals", "iterations", "solve_time",
                     "time_per_constraint_eval", "time_per_gradient_eval", "evals_per_iteration"]
    _SUMMARY_METRICS = ["cost", "solve_time", "time_per_constraint_eval", "time_per_gradient_eval",
                        "evals_per_iteration", "n_constraints", "iterations"]
    # Class-level warnings
    _WRAPPER = textwrap.TextWrapper(width=88, subsequent_indent="    ", drop_whitespace=False,
                                    replace_whitespace=False, break_on_hyphens=False)

                    ################
    ################ Constructor ##################
                    ################

    def __init__(self, reach_sets: list = None, frs_file: str = None, t_plan: float = None,
                 max_iter: int = None, backend: str = "sdf", realtime: bool = False,
                 count_mode: str = "random", n_obstacles: int = None, highway_length: float = None,
                 max_planning_iterations: int = None, verbose: bool = None) -> None:
        self.verbose = verbose if verbose is not None else self._VERBOSE
        if reach_sets is None:
            if frs_file is None:
                raise TypeError("ZonoBench needs reachable sets: provide `reach_sets` or `frs_file`")
            reach_sets = load_frs(str(frs_file))
        self.reach_sets = list(reach_sets)
        self.frs_file = None if frs_file is None else str(frs_file)
        self.t_plan = t_plan
        self.max_iter = max_iter
        self.backend = backend
        self.realtime = realtime
        self.count_mode = count_mode
        self.n_obstacles = n_obstacles
        self.highway_length = highway_length
        self.max_planning_iterations = max_planning_iterations
        # Validates every knob once, before any work
        self.make_simulator()
    # ------------------------------------------------

    def make_planner(self, backend: str = None) -> ZonoPlanner:
        """Fresh planner (planners hold per-iteration state and are not shared across threads)"""
        return ZonoPlanner(reach_sets=self.reach_sets, t_plan=self.t_plan, max_iter=self.max_iter,
                           backend=backend or self.backend, enforce_budget=self.realtime, verbose=False)
    # ------------------------------------------------

    def make_simulator(self, svg_dir=None, backend: str = None) -> HighwaySimulator:
        return HighwaySimulator(self.make_planner(backend), count_mode=self.count_mode,
                                n_obstacles=self.n_obstacles, highway_length=self.highway_length,
                                max_planning_iterations=self.max_planning_iterations,
                                svg_dir=svg_dir, verbose=False)
    # ------------------------------------------------

    def config(self) -> dict:
        simulator = self.make_simulator()
        return {**self._data_to_save(), "planner": simulator.planner.config(), "simulator": simulator.config()}

                    #################
    ################ Main Methods ##################
                    #################

    def simulate(self, output_dir, seeds=None, scenarios: list = None, svg: bool = False) -> pd.DataFrame:
        """
        Runs one trial per seed, or per scenario in `scenarios`, and writes the result tables.
        Rows are in input order whatever the number of threads.
        """
        if (seeds is None) == (scenarios is None):
            raise TypeError("ZonoBench.simulate needs either `seeds` or `scenarios`")
        output_dir = Path(output_dir)
        svg_dir = output_dir / self._SVG_DIR if svg else None
        if scenarios is None:
            generator = self.make_simulator()
            scenarios = [generator.generate_scenario(int(seed)) for seed in seeds]
        self._print(f"\n=== SIMULATE ({len(scenarios)} trials) ===\n", max_space=2)
        start = time.perf_counter()
        with ThreadPoolExecutor(max_workers=max(min(self._max_threads(), len(scenarios)), 1)) as executor:
            results = list(executor.map(lambda s: self._run_trial(s, svg_dir), scenarios))
        # Serialized writing
        output_dir.mkdir(parents=True, exist_ok=True)
        table = pd.DataFrame([r.to_row() for r in results], columns=TrialResult.COLUMNS)
        table.to_csv(output_dir / self._RESULTS_FILE, index=False)
        pd.DataFrame([r.timing_row() for r in results], columns=TrialResult.TIMING_COLUMNS) \
            .to_csv(output_dir / self._TIMING_FILE, index=False)
        self._save_config(self.config(), output_dir)
        counts = table["outcome"].value_counts()
        self._print(
            f"Success: {counts.get('success', 0)} | Safe stop: {counts.get('safe_stop', 0)} | "
            f"Crash: {counts.get('crash', 0)} | {time.perf_counter() - start:.1f} s"
        )
        self._print(f">> Results were saved in: {output_dir / self._RESULTS_FILE}")
        if counts.get("crash", 0):
            self._print("(!) At least one trial crashed")
        return table
    # ------------------------------------------------

    def bench(self, output_dir, obstacle_counts=None, instances: int = None) -> pd.DataFrame:
        """
        Benchmarks both constraint backends on paired instances.
        Returns the per-instance table; with no instance, every CSV holds its header only.
        """
        counts = list(self._OBSTACLE_COUNTS if obstacle_counts is None else obstacle_counts)
        instances = self._INSTANCES if instances is None else instances
        if instances < 0 or any(n < 0 for n in counts):
            raise ValueError(f"Benchmark sizes must be non-negative (counts={counts}, instances={instances})")
        output_dir = Path(output_dir)
        self._print(f"\n=== BENCH ({len(counts)} obstacle counts x {instances} instances) ===\n", max_space=2)
        jobs = [(n, i) for n in counts for i in range(instances)]
        with ThreadPoolExecutor(max_workers=max(min(self._max_threads(), len(jobs)), 1)) as executor:
            rows = [row for job in executor.map(lambda job: self.bench_instance(*job), jobs) for row in job]
        output_dir.mkdir(parents=True, exist_ok=True)
        table = pd.DataFrame(rows, columns=self.BENCH_COLUMNS)
        table.to_csv(output_dir / self._BENCH_FILE, index=False)
        summary = self.summarize(table)
        summary.to_csv(output_dir / self._SUMMARY_FILE, index=False)
        with contextlib.nullcontext() if self.verbose else self._silent_class():
            scaling = self.scaling(summary)
        scaling.to_csv(output_dir / self._SCALING_FILE, index=False)
        self._save_config({**self.config(), "obstacle_counts": counts, "instances": instances,
                           "enforce_budget": True}, output_dir)
        for row in scaling.itertuples():
            self._print(f"{row.backend}: median solve time grows as N^{row.exponent:.2f}")
        self._print(f">> Benchmark was saved in: {output_dir / self._BENCH_FILE}")
        return table
    # ------------------------------------------------

    def bench_scenario(self, n_obstacles: int, seed: int) -> tuple:
        """
        Random benchmark instance: the ego at `_BENCH_EGO_X` in the middle lane with a random speed,
        and `n_obstacles` vehicles (about one in five static) placed without overlap from half the
        forward reach of the fastest bin behind the ego to the full reach ahead of it. Vehicles
        behind the ego are static.
        Returns (ego state, obstacle states sensed t_plan before the plan).
        """
        rng = np.random.default_rng(seed)
        planner = self.make_planner()
        first = self.reach_sets[0]
        v0 = float(rng.uniform(0.0, max(rs.bin.v0_hi for rs in self.reach_sets)))
        z0 = EgoState(self._BENCH_EGO_X, planner.lane_center(planner.n_lanes // 2), 0.0, v0)
        reach = max(rs.bin.p_hi[0] for rs in self.reach_sets) * first.t_f + first.footprint.l
        ego = Obstacle(-1, z0.x, z0.y, planner.n_lanes // 2, v0, first.footprint.l, first.footprint.w)
        n_static = int(rng.integers(0, int(self._BENCH_STATIC_SHARE * n_obstacles) + 1))
        placed = [ego]
        for i in range(n_obstacles):
            for _ in range(self._BENCH_TRIALS):
                lane = int(rng.integers(0, planner.n_lanes))
                x = float(rng.uniform(z0.x - reach / 2, z0.x + reach))
                if all(o.lane != lane or abs(o.x - x) >= o.l + self._BENCH_GAP for o in placed):
                    break
            else:
                self._print(f"(!) Instance {seed}: no free spot for obstacle {i}")
                continue
            v = 0.0 if i < n_static or x < z0.x else float(rng.uniform(*self._BENCH_SPEEDS))
            placed.append(Obstacle(len(placed) - 1, x, planner.lane_center(lane), lane, v))
        return z0, [o.state_at(-planner.t_plan) for o in placed[1:]]
    # ------------------------------------------------

    def bench_instance(self, n_obstacles: int, instance: int, enforce_budget: bool = True) -> list:
        """
        Solves one random instance with every backend under the planning time budget
        (unless `enforce_budget` is False); one row per backend.
        """
        seed = 1000 * n_obstacles + instance
        z0, sensed = self.bench_scenario(n_obstacles, seed)
        rows = []
        for backend in self._BACKENDS:
            planner = ZonoPlanner(reach_sets=self.reach_sets, t_plan=self.t_plan, max_iter=self.max_iter,
                                  backend=backend, enforce_budget=enforce_budget, verbose=False)
            result = planner.plan(z0, sensed)
            stats = result.stats
            evals, grads, iters = stats["n_constraint_evals"], stats["n_gradient_evals"], stats["iterations"]
            rows.append({
                "backend": backend, "n_obstacles": n_obstacles, "instance": instance, "status": result.status,
                "cost": result.cost if result.feasible else np.nan,
                "n_active_bins": stats["n_active_bins"], "n_constraints": stats["n_constraints"],
                "n_constraint_evals": evals, "n_gradient_evals": grads, "iterations": iters,
                "solve_time": stats["solve_time"],
                "time_per_constraint_eval": stats["constraint_time"] / evals if evals else np.nan,
                "time_per_gradient_eval": stats["gradient_time"] / grads if grads else np.nan,
                "evals_per_iteration": evals / iters if iters else np.nan,
            })
        return rows
    # ------------------------------------------------

    @classmethod
    def summarize(cls, table: pd.DataFrame) -> pd.DataFrame:
        """
        Mean / std / median of every metric per backend and obstacle count, plus the share of
        instances where the batched "sdf" solve reaches a cost at most the halfspace one
        (instances where neither backend is feasible are left out).
        """
        columns = ["backend", "n_obstacles"] + [f"{m}_{s}" for m in cls._SUMMARY_METRICS
                                                for s in ("mean", "std", "median")] + ["sdf_cost_win_rate"]
        if table.empty:
            return pd.DataFrame(columns=columns)
        grouped = table.groupby(["backend", "n_obstacles"])[cls._SUMMARY_METRICS].agg(["mean", "std", "median"])
        grouped.columns = [f"{m}_{s}" for m, s in grouped.columns]
        summary = grouped.reset_index()
        summary["sdf_cost_win_rate"] = summary["n_obstacles"].map(cls.win_rates(table))
        return summary[columns]
    # ------------------------------------------------

    @staticmethod
    def win_rates(table: pd.DataFrame) -> pd.Series:
        """Per obstacle count: fraction of paired instances where sdf cost <= halfspace cost"""
        costs = table.set_index(["n_obstacles", "instance", "backend"])["cost"].unstack("backend") \
            .reindex(columns=["sdf", "halfspace"])
        decided = costs.notna().any(axis=1)
        wins = costs["sdf"].notna() & (costs["halfspace"].isna() | (costs["sdf"] <= costs["halfspace"] + 1e-9))
        frame = pd.DataFrame({"win": wins[decided].astype(float)})
        return frame.groupby(level="n_obstacles")["win"].mean()
    # ------------------------------------------------

    @staticmethod
    def growth_exponent(counts, times) -> float:
        """Least-squares slope of log(times) against log(counts)"""
        counts, times = np.asarray(counts, dtype=float), np.asarray(times, dtype=float)
        keep = (counts > 0) & (times > 0) & np.isfinite(times)
        if keep.sum() < 2:
            return float("nan")
        slope, _ = np.polyfit(np.log(counts[keep]), np.log(times[keep]), 1)
        return float(slope)
    # ------------------------------------------------

    @classmethod
    def scaling(cls, summary: pd.DataFrame) -> pd.DataFrame:
        rows = [
            {"backend": backend,
             "exponent": cls.growth_exponent(group["n_obstacles"], group["solve_time_median"])}
            for backend, group in summary.groupby("backend", sort=True)
        ] if not summary.empty else []
        for row in rows:
            if math.isnan(row["exponent"]):
                cls._printc(f"(!) {row['backend']}: no growth exponent, the benchmark needs at least two "
                            "obstacle counts with a positive median solve time", wrapper=cls._WRAPPER)
        return pd.DataFrame(rows, columns=["backend", "exponent"])
    # ------------------------------------------------

                    ###################
    ################ Private Methods ##################
                    ###################

    def _run_trial(self, scenario: Scenario, svg_dir) -> TrialResult:
        simulator = self.make_simulator(svg_dir=svg_dir)
        result = simulator.run_trial(scenario)
        self._print(f"Seed {scenario.seed}: {result.outcome} ({result.n_iterations} iterations)")
        return result
    # ------------------------------------------------

#######################################################

if __name__=="__main__":
    pass
