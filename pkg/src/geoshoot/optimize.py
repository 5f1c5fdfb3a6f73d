"""Inexact Gauss-Newton-Krylov outer loop.

Each outer iteration solves the Gauss-Newton system H p = -g with matrix-free
conjugate gradients in the V inner product (the smoothing operator is the
metric, so no further preconditioning is applied) and backtracks on the true
energy from a unit step. Convergence is tracked as the image mismatch
relative to its starting value (in percent) and the max-norm of the included
gradient relative to the first iteration.
"""

import time as _time
from dataclasses import dataclass

import numpy as np

from .problems import RegistrationProblem, evaluate, gauss_newton_hvp, gradient
from .spectral import BandLimitedField, inner_product_V, _include_array
from .validation import NumericalBlowupError, check_positive


@dataclass(frozen=True)
class OptimizerConfig:
    max_outer_iterations: int = 10
    cg_max_iterations: int = 20
    cg_relative_tolerance: float = 1e-1
    line_search_initial_step: float = 1.0
    line_search_backtrack: float = 0.5
    line_search_sufficient_decrease: float = 1e-4
    line_search_max_backtracks: int = 10
    gradient_tolerance: float = 1e-3

    def __post_init__(self):
        check_positive(self.max_outer_iterations, "max_outer_iterations")
        check_positive(self.cg_max_iterations, "cg_max_iterations")
        check_positive(self.cg_relative_tolerance, "cg_relative_tolerance")
        check_positive(self.line_search_initial_step, "line_search_initial_step")
        check_positive(self.gradient_tolerance, "gradient_tolerance")
        if not 0.0 < self.line_search_backtrack < 1.0:
            raise ValueError("line_search_backtrack must lie in (0, 1)")
        if not 0.0 < self.line_search_sufficient_decrease < 1.0:
            raise ValueError("line_search_sufficient_decrease must lie in (0, 1)")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    energy: float
    mse_rel: float
    grad_inf_rel: float
    cg_iterations: int
    step_length: float
    wall_time: float


class ConvergenceRecord:
    """Per-iteration metrics, appended monotonically in iteration index."""

    def __init__(self):
        self.rows = []

    def append(self, row: IterationRecord):
        if self.rows and row.iteration != self.rows[-1].iteration + 1:
            raise ValueError("iteration records must be appended in order")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, item):
        return self.rows[item]

    def column(self, name):
        return [getattr(row, name) for row in self.rows]


@dataclass
class CGResult:
    solution: BandLimitedField
    iterations: int
    residuals: list
    converged: bool
    negative_curvature: bool = False


def cg_solve(apply_operator, rhs: BandLimitedField, ops, config: OptimizerConfig) -> CGResult:
    """Conjugate gradients in the V inner product for an SPD operator.

    Terminates on relative residual below `cg_relative_tolerance` or the
    iteration cap. Nonpositive curvature aborts the solve and returns the
    current iterate (the right-hand side itself if no step was taken yet).
    """
    x = BandLimitedField.zeros(rhs.band)
    r = rhs.copy()
    rr = inner_product_V(r, r, ops)
    rhs_norm = np.sqrt(max(rr, 0.0))
    residuals = [rhs_norm]
    if rhs_norm == 0.0:
        return CGResult(x, 0, residuals, converged=True)
    p = r.copy()
    tol = config.cg_relative_tolerance * rhs_norm
    for iteration in range(1, config.cg_max_iterations + 1):
        hp = apply_operator(p)
        php = inner_product_V(p, hp, ops)
        if php <= 0.0:
            if iteration == 1:
                x = rhs.copy()
            return CGResult(x, iteration, residuals, converged=False,
                            negative_curvature=True)
        alpha = rr / php
        x = x + alpha * p
        r = r - alpha * hp
        rr_next = inner_product_V(r, r, ops)
        residual = np.sqrt(max(rr_next, 0.0))
        residuals.append(residual)
        if residual <= tol:
            return CGResult(x, iteration, residuals, converged=True)
        p = r + (rr_next / rr) * p
        rr = rr_next
    return CGResult(x, config.cg_max_iterations, residuals, converged=False)


def gradient_infinity_norm(g: BandLimitedField) -> float:
    """Max-norm over spatial samples and components of the included gradient."""
    return float(np.abs(_include_array(g.coeffs, g.band, g.band.grid_sizes)).max())


def mse_relative(problem: RegistrationProblem, mismatch: float) -> float:
    """Image mismatch in percent of the pre-registration mismatch (0/0 -> 0)."""
    if problem.initial_mse == 0.0:
        return 0.0
    return 100.0 * mismatch / problem.initial_mse


def metrics(problem: RegistrationProblem, v0: BandLimitedField, g0_norm: float):
    """(mse_rel, grad_inf_rel) of an iterate; pure, runs its own passes."""
    report = gradient(problem, v0)
    rel = gradient_infinity_norm(report.gradient) / g0_norm if g0_norm > 0 else 0.0
    return mse_relative(problem, report.mse), rel


def _line_search(problem, report, direction, predicted_decrease, config):
    """Backtracking from the unit step; returns (step, trial_report) or (None, None).

    A trial that blows up the forward integration counts as infinite energy
    and simply backtracks further.
    """
    step = config.line_search_initial_step
    for _ in range(config.line_search_max_backtracks + 1):
        try:
            trial = evaluate(problem, report.v0 + step * direction)
        except NumericalBlowupError:
            trial = None
        if trial is not None and trial.energy <= report.energy + \
                config.line_search_sufficient_decrease * step * predicted_decrease:
            return step, trial
        step *= config.line_search_backtrack
    return None, None


def step(problem: RegistrationProblem, v0: BandLimitedField, config: OptimizerConfig,
         report=None):
    """One Gauss-Newton iteration with Armijo backtracking.

    Returns (v0_next, info dict, report at v0_next). A failed line search in
    both the Newton and the gradient direction leaves v0 unchanged and flags
    the step as stalled.
    """
    if report is None:
        report = gradient(problem, v0)
    g = report.gradient

    def operator(delta):
        return gauss_newton_hvp(problem, report, delta)

    cg = cg_solve(operator, -g, problem.ops, config)
    direction = cg.solution
    predicted = inner_product_V(g, direction, problem.ops)
    taken_step = None
    if predicted < 0.0:
        taken_step, _ = _line_search(problem, report, direction, predicted, config)
    if taken_step is None:  # fall back to a plain gradient step
        direction = -g
        predicted = -inner_product_V(g, g, problem.ops)
        taken_step, _ = _line_search(problem, report, direction, predicted, config)
    if taken_step is None:
        info = {"cg_iterations": cg.iterations, "step_length": 0.0, "stalled": True,
                "negative_curvature": cg.negative_curvature}
        return v0, info, report
    v_next = report.v0 + taken_step * direction
    next_report = gradient(problem, v_next)
    info = {"cg_iterations": cg.iterations, "step_length": taken_step, "stalled": False,
            "negative_curvature": cg.negative_curvature}
    return v_next, info, next_report


def run(problem: RegistrationProblem, v0_init: BandLimitedField,
        config: OptimizerConfig = None, on_iteration=None):
    """Optimize from v0_init; returns (v0_final, ConvergenceRecord).

    Row 0 describes the starting point (grad_inf_rel is 1 by definition);
    each subsequent row is recorded after an accepted step. `on_iteration`
    receives every IterationRecord as soon as it is complete.
    """
    config = config or OptimizerConfig()
    record = ConvergenceRecord()
    started = _time.perf_counter()
    report = gradient(problem, v0_init)
    g0_norm = gradient_infinity_norm(report.gradient)
    row = IterationRecord(0, report.energy, mse_relative(problem, report.mse),
                          1.0 if g0_norm > 0 else 0.0, 0, 0.0,
                          _time.perf_counter() - started)
    record.append(row)
    if on_iteration:
        on_iteration(row)
    v0 = v0_init
    if g0_norm == 0.0:
        return v0, record

    for iteration in range(1, config.max_outer_iterations + 1):
        started = _time.perf_counter()
        v0, info, report = step(problem, v0, config, report=report)
        if info["stalled"]:
            break
        g_rel = gradient_infinity_norm(report.gradient) / g0_norm
        row = IterationRecord(iteration, report.energy,
                              mse_relative(problem, report.mse), g_rel,
                              info["cg_iterations"], info["step_length"],
                              _time.perf_counter() - started)
        record.append(row)
        if on_iteration:
            on_iteration(row)
        if g_rel <= config.gradient_tolerance:
            break
    return v0, record
