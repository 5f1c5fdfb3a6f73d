"""Shared argument checking and error types."""

import numpy as np


class NumericalBlowupError(RuntimeError):
    """An ODE integration produced non-finite values."""


class StaleGradientError(RuntimeError):
    """A Hessian-vector product was requested from a report without adjoint data."""


def check_dims(dims):
    if dims not in (2, 3):
        raise ValueError(f"only 2- and 3-dimensional fields are supported, got dims={dims}")


def check_positive(value, name):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")


def check_same_band(a, b, op_name):
    if a.band != b.band:
        raise ValueError(
            f"band mismatch in {op_name}: {a.band.band_sizes} on grid {a.band.grid_sizes}"
            f" vs {b.band.band_sizes} on grid {b.band.grid_sizes}"
        )


def check_band_matches(field, ops, op_name):
    if field.band != ops.band:
        raise ValueError(
            f"band mismatch in {op_name}: field on {field.band.band_sizes}, "
            f"operators on {ops.band.band_sizes}"
        )


def check_grid(values, grid_sizes, name):
    if tuple(values.shape[-len(grid_sizes):]) != tuple(grid_sizes):
        raise ValueError(
            f"{name} has grid {tuple(values.shape[-len(grid_sizes):])}, expected {tuple(grid_sizes)}"
        )


def check_finite(values, name):
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite values")
