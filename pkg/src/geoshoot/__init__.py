"""geoshoot: diffeomorphic registration by band-limited geodesic shooting."""

from .estimator import DiffeomorphicRegistration
from .images import (
    ImageFormatError,
    ScalarImage,
    SpatialVectorField,
    make_phantom,
    mse,
    read_field,
    read_image,
    spatial_gradient,
    warp,
    write_field,
    write_image,
)
from .lie import (
    JacobiCostate,
    ad,
    ad_dagger,
    adjoint_jacobi_rhs,
    epdiff_rhs,
    incremental_adjoint_jacobi_rhs,
    incremental_epdiff_rhs,
    jacobian_convolution,
)
from .optimize import (
    CGResult,
    ConvergenceRecord,
    IterationRecord,
    OptimizerConfig,
    cg_solve,
    metrics,
    run,
    step,
)
from .problems import (
    VARIANT_DEFORMATION,
    VARIANT_STATE,
    GradientReport,
    RegistrationProblem,
    evaluate,
    gauss_newton_hvp,
    gradient,
)
from .spectral import (
    BandLimitedField,
    FrequencyBand,
    SpectralOperators,
    apply_K,
    apply_L,
    hermitian_defect,
    hermitian_symmetrize,
    include,
    inner_product_V,
    norm_V,
    project,
    read_spectrum,
    spectral_divergence,
    spectral_jacobian,
    truncated_convolution,
    write_spectrum,
)
from .transport import (
    GeodesicTrajectory,
    TimeGrid,
    integrate_epdiff,
    jacobian_determinant,
    solve_adjoint_jacobi_backward,
    solve_deformation_state,
    solve_incremental_adjoint_jacobi_backward,
    solve_incremental_forward,
    solve_state,
)
from .validation import NumericalBlowupError, StaleGradientError

__version__ = "0.1.0"
