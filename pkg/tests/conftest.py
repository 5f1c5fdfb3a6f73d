import numpy as np
import pytest

from geoshoot import (
    BandLimitedField,
    FrequencyBand,
    RegistrationProblem,
    SpectralOperators,
    TimeGrid,
    hermitian_symmetrize,
    make_phantom,
    norm_V,
)


def random_hermitian(band, rng, decay=None, components=None):
    """Random Hermitian-symmetric coefficient stack (components, *band)."""
    shape = ((components or band.dims),) + band.band_sizes
    coeffs = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    coeffs = hermitian_symmetrize(coeffs, band)
    if decay is not None:
        coeffs = coeffs * decay
    return coeffs


def random_field(band, rng, ops=None, scale=None):
    """Random Hermitian field; with `ops`, spectrum decays like the inverse
    smoother and the result is normalized to `scale` in the V norm."""
    decay = ops.k_multiplier if ops is not None else None
    f = BandLimitedField(band, random_hermitian(band, rng, decay=decay))
    if scale is not None:
        assert ops is not None
        f = (scale / norm_V(f, ops)) * f
    return f


def blob_problem(variant, grid=(32, 32), band_size=8, nt=10, sigma=1.0):
    """Smooth well-conditioned test pair for gradient/Hessian checks."""
    source = make_phantom("gaussian-blob", grid, smoothness=0.10)
    target = make_phantom("offset-blob", grid, smoothness=0.12,
                          center=(0.62,) + (0.55,) * (len(grid) - 1))
    band = FrequencyBand((band_size,) * len(grid), grid)
    ops = SpectralOperators(band, 3.0, 2)
    return RegistrationProblem(source=source, target=target, band=band, ops=ops,
                               sigma=sigma, time=TimeGrid(nt), variant=variant)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
