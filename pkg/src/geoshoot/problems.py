"""Variational registration problems on band-limited initial velocities.

Both problems minimize

    E(v0) = 0.5 <L v0, v0> + (1/sigma^2) ||m(1) - target||^2

over the initial velocity of a geodesic, with the image norm taken as the
voxel mean so that sigma is resolution-independent. They differ in how the
deformed source m(1) is transported:

* "state": the image itself is advected (semi-Lagrangian).
* "deformation": a band-limited displacement u with phi = id + include(u)
  is evolved and m(1) = source o phi(1).

Gradients are obtained by building the final-time gradient in the metric of
the band-limited space and transporting it to t = 0 with the reduced adjoint
Jacobi system; Gauss-Newton Hessian-vector products transport the linearized
residual the same way, which keeps the operator symmetric positive definite.
"""

from dataclasses import dataclass, field

import numpy as np

from .images import ScalarImage, _warp_values, gradient_periodic, mse
from .spectral import (
    BandLimitedField,
    FrequencyBand,
    SpectralOperators,
    _include_array,
    apply_K,
    inner_product_V,
    project,
)
from .lie import jacobian_convolution
from .transport import (
    FINE_SAMPLING,
    GeodesicTrajectory,
    TimeGrid,
    integrate_epdiff,
    solve_deformation_state,
    solve_incremental_adjoint_jacobi_backward,
    solve_incremental_forward,
    solve_adjoint_jacobi_backward,
    solve_state,
)
from .validation import StaleGradientError, check_positive

VARIANT_STATE = "state"
VARIANT_DEFORMATION = "deformation"
VARIANTS = (VARIANT_STATE, VARIANT_DEFORMATION)


@dataclass(eq=False)
class RegistrationProblem:
    source: ScalarImage
    target: ScalarImage
    band: FrequencyBand
    ops: SpectralOperators
    sigma: float = 1.0
    time: TimeGrid = field(default_factory=TimeGrid)
    variant: str = VARIANT_STATE

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        check_positive(self.sigma, "sigma")
        if self.source.grid_sizes != self.target.grid_sizes:
            raise ValueError(
                f"source grid {self.source.grid_sizes} != target grid {self.target.grid_sizes}"
            )
        if self.source.grid_sizes != self.band.grid_sizes:
            raise ValueError(
                f"image grid {self.source.grid_sizes} does not match the band grid "
                f"{self.band.grid_sizes}"
            )
        if self.ops.band != self.band:
            raise ValueError("ops were built for a different band")
        self.initial_mse = mse(self.source, self.target)
        self._source_gradient = None

    @property
    def source_gradient(self):
        if self._source_gradient is None:
            self._source_gradient = gradient_periodic(self.source.values, self.source.spacing)
        return self._source_gradient

    def zero_velocity(self):
        return BandLimitedField.zeros(self.band)


@dataclass(eq=False)
class GradientReport:
    """Energy breakdown plus everything the Gauss-Newton operator reuses."""

    problem: RegistrationProblem
    v0: BandLimitedField
    trajectory: GeodesicTrajectory
    energy: float
    regularizer: float
    image_term: float
    mse: float
    m1: np.ndarray
    gradient: BandLimitedField = None
    lambda1: np.ndarray = None
    m1_gradient: np.ndarray = None        # state variant: grad of m(1) on the grid
    warped_gradient: np.ndarray = None    # deformation variant: grad(source) o phi(1)
    U1: BandLimitedField = None

    def storage_counts(self):
        """Exact element counts of the trajectory-resident arrays.

        Complex coefficients cover the velocity samples, displacement samples,
        and the cached band-limited fields; grid scalars cover the image-side
        arrays. Used by the CLI complexity report.
        """
        complex_count = 0
        scalars = 0
        for f in self.trajectory.samples:
            complex_count += f.coeffs.size
        if self.trajectory.displacements is not None:
            for f in self.trajectory.displacements:
                complex_count += f.coeffs.size
        for f in (self.v0, self.gradient, self.U1):
            if f is not None:
                complex_count += f.coeffs.size
        if self.trajectory.images is not None:
            for img in self.trajectory.images[1:]:  # node 0 is the source itself
                scalars += img.values.size
        scalars += self.m1.size
        for arr in (self.lambda1, self.m1_gradient, self.warped_gradient):
            if arr is not None:
                scalars += arr.size
        return {"complex_coefficients": complex_count, "grid_scalars": scalars}


def _forward(problem: RegistrationProblem, v0: BandLimitedField):
    samples = integrate_epdiff(v0, problem.time, problem.ops,
                               samples_per_interval=FINE_SAMPLING)
    if problem.variant == VARIANT_STATE:
        images = solve_state(problem.source, samples, problem.time)
        traj = GeodesicTrajectory(problem.time, tuple(samples), FINE_SAMPLING,
                                  images=tuple(images))
        return traj, images[-1].values
    displacements = solve_deformation_state(samples, problem.time, problem.ops)
    disp = _include_array(displacements[-1].coeffs, problem.band, problem.band.grid_sizes)
    m1 = _warp_values(problem.source.values, disp, problem.source.spacing)
    traj = GeodesicTrajectory(problem.time, tuple(samples), FINE_SAMPLING,
                              displacements=tuple(displacements))
    return traj, m1


def evaluate(problem: RegistrationProblem, v0: BandLimitedField) -> GradientReport:
    """Energy of an initial velocity (no adjoint pass)."""
    traj, m1 = _forward(problem, v0)
    regularizer = 0.5 * inner_product_V(v0, v0, problem.ops)
    mismatch = mse(m1, problem.target.values)
    image_term = mismatch / problem.sigma**2
    return GradientReport(
        problem=problem, v0=v0, trajectory=traj,
        energy=regularizer + image_term, regularizer=regularizer,
        image_term=image_term, mse=mismatch, m1=m1,
    )


def gradient(problem: RegistrationProblem, v0: BandLimitedField) -> GradientReport:
    """Energy and metric gradient v0 + delta_v(0) via adjoint Jacobi transport."""
    report = evaluate(problem, v0)
    sigma2 = problem.sigma**2
    lam1 = (-2.0 / sigma2) * (report.m1 - problem.target.values)

    if problem.variant == VARIANT_STATE:
        m1_gradient = gradient_periodic(report.m1, problem.source.spacing)
        final = project(lam1[None] * m1_gradient, problem.band)
        report.m1_gradient = m1_gradient
    else:
        u1 = report.trajectory.displacements[-1]
        disp = _include_array(u1.coeffs, problem.band, problem.band.grid_sizes)
        warped_gradient = np.stack([
            _warp_values(g, disp, problem.source.spacing) for g in problem.source_gradient
        ])
        rho1 = project(lam1[None] * warped_gradient, problem.band)
        final = rho1 + jacobian_convolution(u1, rho1, transpose=True)
        report.warped_gradient = warped_gradient

    U1 = apply_K(final, problem.ops)
    delta_v0 = solve_adjoint_jacobi_backward(U1, report.trajectory.samples,
                                             problem.time, problem.ops)
    report.lambda1 = lam1
    report.U1 = U1
    report.gradient = v0 + delta_v0
    return report


def gauss_newton_hvp(problem: RegistrationProblem, report: GradientReport,
                     delta_v0: BandLimitedField) -> BandLimitedField:
    """Action of the Gauss-Newton operator at the report's base point.

    The operator is identity plus the transported normal-operator term of the
    image residual: every residual-carrying coupling is dropped, so the
    result is symmetric and positive definite in the V inner product.
    """
    if report.gradient is None:
        raise StaleGradientError(
            "Gauss-Newton products need a report produced by gradient(), "
            "not an energy-only evaluation"
        )
    if report.problem is not problem:
        raise StaleGradientError("report was computed for a different problem instance")
    sigma2 = problem.sigma**2
    traj = report.trajectory

    if problem.variant == VARIANT_STATE:
        dv_samples, dm1 = solve_incremental_forward(
            traj.samples, delta_v0, problem.time, problem.ops, images=traj.images)
        dlam1 = (-2.0 / sigma2) * dm1
        final = project(dlam1[None] * report.m1_gradient, problem.band)
    else:
        dv_samples, du1 = solve_incremental_forward(
            traj.samples, delta_v0, problem.time, problem.ops,
            displacements=traj.displacements)
        d_disp = _include_array(du1.coeffs, problem.band, problem.band.grid_sizes)
        dm1 = np.einsum("i...,i...->...", report.warped_gradient, d_disp)
        dlam1 = (-2.0 / sigma2) * dm1
        drho1 = project(dlam1[None] * report.warped_gradient, problem.band)
        u1 = traj.displacements[-1]
        final = drho1 + jacobian_convolution(u1, drho1, transpose=True)

    delta_U1 = apply_K(final, problem.ops)
    dw0 = solve_incremental_adjoint_jacobi_backward(
        delta_U1, traj.samples, dv_samples, problem.time, problem.ops)
    return delta_v0 + dw0
