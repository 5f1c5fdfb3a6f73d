r"""Operators of the band-limited vector-field Lie algebra.

The adjoint action and its metric transpose are built from spectral
Jacobians and the truncated convolution:

    ad(v, w)        = Dv * w - Dw * v
    ad_dagger(v, w) = K[ (Dv)^T * Lw + D(Lw) * v + Lw * div(v) ]

with * the truncated convolution contracted over the matrix index.
ad_dagger is the adjoint of ad with respect to <.,.>_V:

    <ad_dagger(v, w), u>_V = <w, ad(v, u)>_V

which also makes zero-energy-drift geodesic flow of `epdiff_rhs` possible.
The right-hand sides below are pure functions; time integration lives in
`transport`.
"""

from dataclasses import dataclass

import numpy as np

from .spectral import (
    BandLimitedField,
    SpectralOperators,
    _embed_fft,
    _gather_ifft,
    _gradient_tables,
    hermitian_symmetrize,
)
from .validation import check_band_matches, check_same_band


def _jacobian_convolve(a, b, band, transpose=False):
    # (Da * b)_i = sum_j conv(da_i/dx_j, b_j); transpose contracts the other index
    g = _gradient_tables(band)
    jac_hat = _embed_fft(a[:, None] * g[None, :], band)
    b_hat = _embed_fft(b, band)
    spec = "ji...,j...->i..." if transpose else "ij...,j...->i..."
    out = _gather_ifft(np.einsum(spec, jac_hat, b_hat), band)
    return hermitian_symmetrize(out, band)


def jacobian_convolution(a: BandLimitedField, b: BandLimitedField,
                         transpose=False) -> BandLimitedField:
    """Truncated convolution of the Jacobian block of `a` with `b`."""
    check_same_band(a, b, "jacobian_convolution")
    return BandLimitedField(a.band, _jacobian_convolve(a.coeffs, b.coeffs, a.band, transpose))


def _ad(v, w, band):
    return _jacobian_convolve(v, w, band) - _jacobian_convolve(w, v, band)


def _ad_dagger(v, w, band, l_mult, k_mult):
    g = _gradient_tables(band)
    m = l_mult * w
    jac_v_hat = _embed_fft(v[:, None] * g[None, :], band)
    jac_m_hat = _embed_fft(m[:, None] * g[None, :], band)
    m_hat = _embed_fft(m, band)
    v_hat = _embed_fft(v, band)
    div_v_hat = _embed_fft(np.einsum("i...,i...->...", g, v), band)
    hat = (
        np.einsum("ji...,j...->i...", jac_v_hat, m_hat)
        + np.einsum("ij...,j...->i...", jac_m_hat, v_hat)
        + m_hat * div_v_hat[None]
    )
    return hermitian_symmetrize(k_mult * _gather_ifft(hat, band), band)


def ad(v: BandLimitedField, w: BandLimitedField) -> BandLimitedField:
    r"""Adjoint action :math:`ad_v w = Dv \star w - Dw \star v` (antisymmetric)."""
    check_same_band(v, w, "ad")
    return BandLimitedField(v.band, _ad(v.coeffs, w.coeffs, v.band))


def ad_dagger(v: BandLimitedField, w: BandLimitedField, ops: SpectralOperators) -> BandLimitedField:
    r"""Metric transpose of the adjoint action, :math:`K\,ad^*_v (L w)`."""
    check_same_band(v, w, "ad_dagger")
    check_band_matches(v, ops, "ad_dagger")
    return BandLimitedField(
        v.band, _ad_dagger(v.coeffs, w.coeffs, v.band, ops.l_multiplier, ops.k_multiplier)
    )


def epdiff_rhs(v: BandLimitedField, ops: SpectralOperators) -> BandLimitedField:
    r"""Geodesic equation right-hand side :math:`\partial_t v = -ad^\dagger_v v`."""
    check_band_matches(v, ops, "epdiff_rhs")
    return BandLimitedField(
        v.band, -_ad_dagger(v.coeffs, v.coeffs, v.band, ops.l_multiplier, ops.k_multiplier)
    )


@dataclass(frozen=True, eq=False)
class JacobiCostate:
    """Adjoint pair transported along a geodesic: the costate U and the
    accumulated gradient delta_v."""

    U: BandLimitedField
    delta_v: BandLimitedField

    def __post_init__(self):
        check_same_band(self.U, self.delta_v, "JacobiCostate")


def adjoint_jacobi_rhs(v, U, delta_v, ops):
    """Time derivatives (dU, d_delta_v) of the reduced adjoint Jacobi system.

        dU       = -ad_dagger(v, U)
        ddelta_v = -U + ad(v, delta_v) - ad_dagger(delta_v, v)

    The caller chooses the integration direction.
    """
    check_same_band(v, U, "adjoint_jacobi_rhs")
    check_same_band(v, delta_v, "adjoint_jacobi_rhs")
    check_band_matches(v, ops, "adjoint_jacobi_rhs")
    band = v.band
    l_mult, k_mult = ops.l_multiplier, ops.k_multiplier
    dU = -_ad_dagger(v.coeffs, U.coeffs, band, l_mult, k_mult)
    ddv = (
        -U.coeffs
        + _ad(v.coeffs, delta_v.coeffs, band)
        - _ad_dagger(delta_v.coeffs, v.coeffs, band, l_mult, k_mult)
    )
    return BandLimitedField(band, dU), BandLimitedField(band, ddv)


def incremental_epdiff_rhs(v, delta_v, ops):
    """Linearization of the geodesic equation at v in direction delta_v."""
    check_same_band(v, delta_v, "incremental_epdiff_rhs")
    check_band_matches(v, ops, "incremental_epdiff_rhs")
    band = v.band
    l_mult, k_mult = ops.l_multiplier, ops.k_multiplier
    out = -_ad_dagger(delta_v.coeffs, v.coeffs, band, l_mult, k_mult) \
        - _ad_dagger(v.coeffs, delta_v.coeffs, band, l_mult, k_mult)
    return BandLimitedField(band, out)


def incremental_adjoint_jacobi_rhs(v, delta_v, w, U, delta_U, delta_w, ops):
    """Time derivatives (d_delta_U, d_delta_w) of the incremental adjoint
    Jacobi system, the linearization of `adjoint_jacobi_rhs` along a
    perturbed trajectory:

        d_delta_U = -ad_dagger(delta_v, U) - ad_dagger(v, delta_U)
        d_delta_w = -delta_U + ad(delta_v, w) + ad(v, delta_w)
                    - ad_dagger(delta_w, v) - ad_dagger(w, delta_v)
    """
    fields = (delta_v, w, U, delta_U, delta_w)
    for f in fields:
        check_same_band(v, f, "incremental_adjoint_jacobi_rhs")
    check_band_matches(v, ops, "incremental_adjoint_jacobi_rhs")
    band = v.band
    l_mult, k_mult = ops.l_multiplier, ops.k_multiplier
    ddU = -_ad_dagger(delta_v.coeffs, U.coeffs, band, l_mult, k_mult) \
        - _ad_dagger(v.coeffs, delta_U.coeffs, band, l_mult, k_mult)
    ddw = (
        -delta_U.coeffs
        + _ad(delta_v.coeffs, w.coeffs, band)
        + _ad(v.coeffs, delta_w.coeffs, band)
        - _ad_dagger(delta_w.coeffs, v.coeffs, band, l_mult, k_mult)
        - _ad_dagger(w.coeffs, delta_v.coeffs, band, l_mult, k_mult)
    )
    return BandLimitedField(band, ddU), BandLimitedField(band, ddw)
