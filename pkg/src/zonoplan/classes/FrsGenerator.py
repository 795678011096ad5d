from __future__ import annotations
import itertools
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from zonoplan.classes.ZonoClient import ZonoClient
from zonoplan.utils.frs import (
    BinSpec, EgoFootprint, ReachableSet, body_motion, body_heading, footprint_extents,
    default_bins, save_frs
)

class FrsGenerator(ZonoClient):
    """
    Builds the parameterized reachable sets of every bin.

    For each bin, the reference maneuver is sampled on a grid of (v0, u, y_off) corners and
    midpoints. On each interval T_j:
    - the center is fitted as c_base + C v0 + A p by least squares;
    - G_j is an axis-aligned box covering the fit residual (x1.5), the motion within T_j
      and the rotated footprint;
    - containment is checked on a 10x denser sampling and G_j is inflated (x1.1) until it holds.

    Usage:
        reach_sets = FrsGenerator().generate()
        FrsGenerator().generate_file("frs.json")
    """

                    ##################
    ################ Class Attributes ##################
                    ##################

    __name__ = "FrsGenerator"
    _PROPERTIES = ["dt", "t_f", "t_m", "t_plan", "footprint", "v_max", "grid_points"]
    # Default time discretization (s)
    _T_F = 3.0
    _T_M = 1.5
    _DT = 0.1
    _T_PLAN = 0.35
    # Maximal ego speed (m/s)
    _V_MAX = 30.0
    # Fit grid: points per dimension, time samples per interval
    _GRID_POINTS = 3
    _FIT_SUBSTEPS = 11
    # Verification grid: points per dimension, time samples per interval (over 10x the fit samples)
    _VERIFY_POINTS = 5
    _VERIFY_SUBSTEPS = 31
    # Inflation of the fit residual, then of failing intervals
    _RESIDUAL_FACTOR = 1.5
    _INFLATION = 1.1
    _MAX_INFLATIONS = 5
    # Absolute padding of the generators (m)
    _PADDING = 1e-3

                    ################
    ################ Constructor ##################
                    ################

    def __init__(self, dt: float = None, t_f: float = None, t_m: float = None, t_plan: float = None,
                 footprint: EgoFootprint = None, v_max: float = None, grid_points: int = None,
                 bins: list = None, verbose: bool = None) -> None:
        self.verbose = verbose if verbose is not None else self._VERBOSE
        self.dt = dt if dt is not None else self._DT
        self.t_f = t_f if t_f is not None else self._T_F
        self.t_m = t_m if t_m is not None else self._T_M
        self.t_plan = t_plan if t_plan is not None else self._T_PLAN
        self.footprint = footprint if footprint is not None else EgoFootprint()
        self.v_max = v_max if v_max is not None else self._V_MAX
        self.grid_points = grid_points if grid_points is not None else self._GRID_POINTS
        if self.grid_points < 2:
            raise ValueError(f"The fit grid needs at least 2 points per dimension (got {self.grid_points})")
        if not (0 < self.t_m < self.t_f - 2 * self.dt):
            raise ValueError(
                f"Driving must end before braking starts: t_m={self.t_m}, t_f={self.t_f}, dt={self.dt}"
            )
        self.bins = bins if bins is not None else default_bins(v_max=self.v_max)
    # ------------------------------------------------

    @property
    def n_intervals(self) -> int:
        return round(self.t_f / self.dt)

    @property
    def t_stop(self) -> float:
        return self.t_f - 2 * self.dt

                    #################
    ################ Main Methods ##################
                    #################

    def generate(self) -> list:
        """Returns one ReachableSet per bin, in bin order"""
        self._print("\n=== GENERATE FRS ===\n", max_space=2)
        self._print(f"Bins: {len(self.bins)} | Intervals: {self.n_intervals} x {self.dt} s")
        start = time.perf_counter()
        with ThreadPoolExecutor(max_workers=min(self._max_threads(), len(self.bins))) as executor:
            reach_sets = list(executor.map(self.generate_bin, self.bins))
        self._print(f"Done in {time.perf_counter() - start:.1f} s")
        return reach_sets
    # ------------------------------------------------

    def generate_file(self, path) -> list:
        """Generates the reachable sets and writes them to `path`"""
        reach_sets = self.generate()
        save_frs(str(path), reach_sets)
        self._print(f">> FRS was saved in: {path}")
        return reach_sets
    # ------------------------------------------------

    def generate_bin(self, spec: BinSpec) -> ReachableSet:
        """
        Reachable set of a single bin.
        Raises RuntimeError if containment cannot be verified after the maximal number of inflations.
        """
        samples = self._grid(spec, self.grid_points)
        fit_times = self._interval_times(self._FIT_SUBSTEPS)
        centers, motion, extents = self._interval_data(samples, fit_times)
        features = np.column_stack([np.ones(len(samples)), samples])
        J = self.n_intervals
        coeffs = np.zeros((J, 4, 2))
        half = np.zeros((J, 2))
        for j in range(J):
            coeffs[j] = np.linalg.lstsq(features, centers[:, j], rcond=None)[0]
            residual = np.abs(centers[:, j] - features @ coeffs[j]).max(axis=0)
            half[j] = self._RESIDUAL_FACTOR * residual + motion[:, j].max(axis=0) \
                + extents[:, j].max(axis=0) + self._PADDING
        # A posteriori verification
        dense = self._grid(spec, max(self._VERIFY_POINTS, 2 * self.grid_points - 1))
        dense_times = self._interval_times(self._VERIFY_SUBSTEPS)
        for round_ in range(self._MAX_INFLATIONS + 1):
            failing = self._failing_intervals(dense, dense_times, coeffs, half)
            if not failing.any():
                break
            if round_ == self._MAX_INFLATIONS:
                raise RuntimeError(
                    f"FRS containment failed for bin {spec.bin_id} on intervals "
                    f"{np.flatnonzero(failing).tolist()} after {self._MAX_INFLATIONS} inflation rounds"
                )
            half[failing] *= self._INFLATION
            self._print(f"(!) Bin {spec.bin_id}: inflating {int(failing.sum())} interval(s)")
        return ReachableSet(
            spec,
            c_base=coeffs[:, 0], C=coeffs[:, 1], A=np.transpose(coeffs[:, 2:], (0, 2, 1)),
            G=np.stack([np.diag(h) for h in half]),
            dt=self.dt, t_f=self.t_f, t_m=self.t_m, t_plan=self.t_plan, footprint=self.footprint,
        )
    # ------------------------------------------------

    def containment_audit(self, rs: ReachableSet, n_samples: int = 1000, seed: int = 0) -> float:
        """
        Fraction of random (v0, p, t) samples whose footprint lies in the interval zonotope(s)
        containing t.
        """
        rng = np.random.default_rng(seed)
        spec = rs.bin
        samples = np.column_stack([
            rng.uniform(spec.v0_lo, spec.v0_hi, n_samples),
            rng.uniform(spec.p_lo[0], spec.p_hi[0], n_samples),
            rng.uniform(spec.p_lo[1], spec.p_hi[1], n_samples),
        ])
        t = rng.uniform(0, rs.t_f, n_samples)
        x, y, vx, vy = body_motion(samples[:, 0], samples[:, 1], samples[:, 2], t, rs.t_m, rs.t_stop)
        corners = self._rotated_footprint(np.stack([x, y], axis=-1), body_heading(vx, vy), rs.footprint)
        j = np.minimum((t / rs.dt).astype(int), rs.n_intervals - 1)
        centers = rs.c_base[j] + rs.C[j] * samples[:, :1] + np.einsum("nkl,nl->nk", rs.A[j], samples[:, 1:])
        half = np.abs(rs.G[j]).sum(axis=1)
        inside = np.all(np.abs(corners - centers[:, None]) <= half[:, None] + 1e-9, axis=(1, 2))
        return float(inside.mean())
    # ------------------------------------------------

                    ###################
    ################ Private Methods ##################
                    ###################

    def _grid(self, spec: BinSpec, n: int) -> np.ndarray:
        """(n^3, 3) samples of (v0, u, y_off) on a regular grid over the bin"""
        axes = [
            np.linspace(spec.v0_lo, spec.v0_hi, n),
            np.linspace(spec.p_lo[0], spec.p_hi[0], n),
            np.linspace(spec.p_lo[1], spec.p_hi[1], n),
        ]
        return np.array(list(itertools.product(*axes)))
    # ------------------------------------------------

    def _interval_times(self, substeps: int) -> np.ndarray:
        """(J, substeps) times covering each interval, endpoints included"""
        J = self.n_intervals
        return np.linspace(0, 1, substeps)[None, :] * self.dt + (np.arange(J) * self.dt)[:, None]
    # ------------------------------------------------

    def _poses(self, samples: np.ndarray, times: np.ndarray) -> tuple:
        """Positions (n, *times.shape, 2) and headings (n, *times.shape)"""
        expand = (slice(None),) + (None,) * times.ndim
        v0, u, y_off = (samples[:, k][expand] for k in range(3))
        x, y, vx, vy = body_motion(v0, u, y_off, times[None], self.t_m, self.t_stop)
        return np.stack([x, y], axis=-1), body_heading(vx, vy)
    # ------------------------------------------------

    def _corners(self, samples: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Footprint corners (n, *times.shape, 4, 2)"""
        positions, heading = self._poses(samples, times)
        return self._rotated_footprint(positions, heading, self.footprint)
    # ------------------------------------------------

    @staticmethod
    def _rotated_footprint(positions: np.ndarray, heading: np.ndarray, footprint: EgoFootprint) -> np.ndarray:
        """Corners (..., 4, 2) of the footprint at `positions` (..., 2) with `heading` (...)"""
        cos, sin = np.cos(heading)[..., None], np.sin(heading)[..., None]
        body = footprint.corners()
        rotated = np.stack([cos * body[:, 0] - sin * body[:, 1], sin * body[:, 0] + cos * body[:, 1]], axis=-1)
        return positions[..., None, :] + rotated
    # ------------------------------------------------

    def _interval_data(self, samples: np.ndarray, times: np.ndarray) -> tuple:
        """
        Per sample and interval: center of the swept footprint (n, J, 2), motion half-extent
        around it (n, J, 2) and rotated-footprint half-extent (n, J, 2).
        """
        positions, heading = self._poses(samples, times)
        lo, hi = positions.min(axis=2), positions.max(axis=2)
        center = (lo + hi) / 2
        ex, ey = footprint_extents(heading, self.footprint)
        extents = np.stack([ex.max(axis=2), ey.max(axis=2)], axis=-1)
        return center, (hi - lo) / 2, extents
    # ------------------------------------------------

    def _failing_intervals(self, samples: np.ndarray, times: np.ndarray,
                           coeffs: np.ndarray, half: np.ndarray) -> np.ndarray:
        """Boolean mask (J,) of the intervals where a sampled footprint corner leaves the box"""
        corners = self._corners(samples, times)
        features = np.column_stack([np.ones(len(samples)), samples])
        centers = np.einsum("nf,jfk->njk", features, coeffs)
        excess = np.abs(corners - centers[:, :, None, None, :]) - half[None, :, None, None, :]
        return np.any(excess > 1e-12, axis=(0, 2, 3, 4))
    # ------------------------------------------------

#######################################################

if __name__=="__main__":
    pass
