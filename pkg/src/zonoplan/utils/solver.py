"""
Augmented-Lagrangian solver for small box-constrained problems with inequality constraints:

    minimize f(p)  subject to  c(p) >= margin,  lo <= p <= hi

The outer loop updates multipliers and the penalty; inner steps are projected quasi-Newton
(scipy's L-BFGS-B) on the augmented Lagrangian.

A problem made of independent blocks (one per bin) is solved in one pass over the stacked
parameters; the best feasible iterate is then tracked per block.
"""

from __future__ import annotations
from dataclasses import dataclass
import time

import numpy as np
from scipy.optimize import minimize

########################### VARIABLES & ERRORS ################################
# -----------------------------------------------------------------------------
class BudgetExceeded(Exception):
    """Raised from inside the inner solver when the wall-clock deadline has passed"""

################################# TYPES ########################################
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class Block:
    """Independent part of a stacked problem: parameter slice, constraint rows and own cost"""
    params: slice
    rows: slice
    cost: object


@dataclass
class BlockResult:
    p: np.ndarray
    cost: float
    feasible: bool


@dataclass
class SolverResult:
    p: np.ndarray
    cost: float
    feasible: bool
    status: str
    iterations: int = 0
    n_cost_evals: int = 0
    n_constraint_evals: int = 0
    n_gradient_evals: int = 0
    # Time spent in the constraint callback (all calls / calls with a Jacobian)
    constraint_time: float = 0.0
    gradient_time: float = 0.0
    wall_time: float = 0.0
    blocks: list = None
# ------------------------------------------------

################################### SOLVER #####################################
# -----------------------------------------------------------------------------
class AugmentedLagrangian():
    """
    Solver settings. `cost(p)` returns (f, grad); `constraints(p, need_grad)` returns
    (values (n,), jacobian (n, n_p) or None).
    Status of a result: "kkt", "max_iter" or "budget".
    """

    def __init__(self, max_iter=15, tol=1e-6, margin=1e-3, mu0=10.0, mu_growth=10.0,
                 mu_max=1e8, inner_iter=30) -> None:
        if max_iter < 1:
            raise ValueError(f"max_iter must be at least 1 (got {max_iter})")
        self.max_iter = max_iter
        self.tol = tol
        self.margin = margin
        self.mu0 = mu0
        self.mu_growth = mu_growth
        self.mu_max = mu_max
        self.inner_iter = inner_iter

    def solve(self, cost, constraints, x0, lo, hi, deadline: float = None,
              feasible_guess=None, blocks: list = None) -> SolverResult:
        """
        Solves from `x0` (projected onto [lo, hi]). `deadline` is a `time.perf_counter()` value.
        `feasible_guess` is a known feasible point returned if no better feasible iterate is found.

        With `blocks` (partitioning the parameters in order), feasibility and the best iterate are
        decided block by block and reported in
        `result.blocks`; `result.p` assembles the block parameters and `result.feasible` is True
        when every block is feasible.
        """
        start = time.perf_counter()
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        counts = {"cost": 0, "constraint": 0, "gradient": 0, "constraint_time": 0.0, "gradient_time": 0.0}

        def f(p):
            counts["cost"] += 1
            return cost(p)

        def c(p, need_grad):
            tic = time.perf_counter()
            values, jac = constraints(p, need_grad)
            elapsed = time.perf_counter() - tic
            counts["constraint"] += 1
            counts["constraint_time"] += elapsed
            if need_grad:
                counts["gradient"] += 1
                counts["gradient_time"] += elapsed
            return np.asarray(values, dtype=float) - self.margin, jac

        best = None
        best_blocks = [None] * len(blocks or [])

        def consider(p, values):
            nonlocal best
            if blocks is not None:
                counts["cost"] += 1
                for i, block in enumerate(blocks):
                    rows = values[block.rows]
                    if rows.size and rows.min() < 0:
                        continue
                    value = block.cost(p[block.params])[0]
                    if best_blocks[i] is None or value < best_blocks[i][1]:
                        best_blocks[i] = (p[block.params].copy(), value)
                return
            if values.size and values.min() < 0:
                return
            value = f(p)[0]
            if best is None or value < best[1]:
                best = (p.copy(), value)

        p = np.clip(np.asarray(x0, dtype=float), lo, hi)
        values, _ = c(p, False)
        consider(p, values)
        if feasible_guess is not None:
            guess = np.clip(np.asarray(feasible_guess, dtype=float), lo, hi)
            consider(guess, c(guess, False)[0])
        lam = np.zeros(values.size)
        mu = self.mu0
        status, iterations = "max_iter", 0

        def lagrangian(q):
            if deadline is not None and time.perf_counter() > deadline:
                raise BudgetExceeded()
            value, grad = f(q)
            cv, jac = c(q, True)
            if cv.size:
                active = cv <= lam / mu
                value += np.sum(np.where(active, -lam * cv + 0.5 * mu * cv**2, -lam**2 / (2 * mu)))
                grad = grad + jac.T @ np.where(active, -lam + mu * cv, 0.0)
            return value, grad

        for iterations in range(1, self.max_iter + 1):
            try:
                out = minimize(lagrangian, p, jac=True, method="L-BFGS-B",
                               bounds=list(zip(lo, hi)), options={"maxiter": self.inner_iter})
            except BudgetExceeded:
                status = "budget"
                break
            p = np.clip(out.x, lo, hi)
            values, jac = c(p, True)
            consider(p, values)
            if values.size:
                lam = np.maximum(0.0, lam - mu * values)
            if self._kkt(p, f(p)[1], values, jac, lam, lo, hi):
                status = "kkt"
                break
            if values.size and values.min() < -self.tol:
                mu = min(mu * self.mu_growth, self.mu_max)

        block_results = None
        if blocks is not None:
            block_results = []
            for block, found in zip(blocks, best_blocks):
                if found is None:
                    q = p[block.params].copy()
                    block_results.append(BlockResult(q, float(block.cost(q)[0]), False))
                else:
                    block_results.append(BlockResult(found[0], float(found[1]), True))
            p = np.concatenate([r.p for r in block_results]) if block_results else p
            value, feasible = f(p)[0], all(r.feasible for r in block_results)
        elif best is not None:
            p, value, feasible = best[0], best[1], True
        else:
            value, feasible = f(p)[0], False
        return SolverResult(
            p=p, cost=float(value), feasible=feasible, status=status, iterations=iterations,
            n_cost_evals=counts["cost"], n_constraint_evals=counts["constraint"],
            n_gradient_evals=counts["gradient"], constraint_time=counts["constraint_time"],
            gradient_time=counts["gradient_time"], wall_time=time.perf_counter() - start,
            blocks=block_results,
        )

    def _kkt(self, p, grad, values, jac, lam, lo, hi) -> bool:
        """Primal feasibility, complementarity and projected stationarity within tolerance"""
        if values.size:
            if values.min() < -self.tol or np.max(np.abs(lam * values)) > self.tol:
                return False
            grad = grad - jac.T @ lam
        # Projected gradient: components pushing against an active bound are zero
        step = np.clip(p - grad, lo, hi) - p
        return bool(np.max(np.abs(step)) <= self.tol)
