"""Band-limited vector fields on the periodic unit torus.

A field is represented by the complex coefficients of a centered block of
Fourier modes, B_j coefficients per axis with signed frequencies
{-floor(B_j/2), ..., ceil(B_j/2)-1} stored in standard DFT order. The
inclusion `include` evaluates the field on a grid and the projection
`project` restricts a gridded field back to the block, so that
project(include(f)) == f.

Real-valued fields correspond to Hermitian-symmetric coefficients,
coeff(k) == conj(coeff(-k)). For even B_j the frequency -B_j/2 has no
partner inside the block; those coefficients are annihilated by the
Hermitian projection so that inclusion is exactly real and every operator
below maps the real subspace to itself.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as spfft

from .images import ImageHeader, SpatialVectorField, _parse_header, _write_header
from .validation import check_band_matches, check_dims, check_positive, check_same_band

_HERMITIAN_TOL = 1e-9


@dataclass(frozen=True)
class FrequencyBand:
    """Per-axis coefficient counts plus the spatial grid they are sampled on."""

    band_sizes: tuple
    grid_sizes: tuple

    def __post_init__(self):
        object.__setattr__(self, "band_sizes", tuple(int(b) for b in self.band_sizes))
        object.__setattr__(self, "grid_sizes", tuple(int(n) for n in self.grid_sizes))
        check_dims(len(self.band_sizes))
        if len(self.grid_sizes) != len(self.band_sizes):
            raise ValueError("band_sizes and grid_sizes must have the same length")
        for b, n in zip(self.band_sizes, self.grid_sizes):
            if not 1 <= b <= n:
                raise ValueError(
                    f"band sizes must satisfy 1 <= B <= N per axis, got B={b}, N={n}"
                )

    @property
    def dims(self):
        return len(self.band_sizes)

    @classmethod
    def full(cls, grid_sizes):
        return cls(tuple(grid_sizes), tuple(grid_sizes))


def _signed_frequencies(n):
    """Signed integer frequencies of an n-point DFT, in DFT order."""
    return ((np.arange(n) + n // 2) % n) - n // 2


@lru_cache(maxsize=None)
def _band_frequencies(band):
    return tuple(_signed_frequencies(b) for b in band.band_sizes)


@lru_cache(maxsize=None)
def _frequency_mesh(band):
    axes = [f.astype(np.float64) for f in _band_frequencies(band)]
    return np.array(np.meshgrid(*axes, indexing="ij"))


@lru_cache(maxsize=None)
def _hermitian_tables(band):
    """(keep mask, per-axis partner indices) for the Hermitian projection."""
    partners = []
    keep = np.ones(band.band_sizes)
    for axis, b in enumerate(band.band_sizes):
        freqs = _signed_frequencies(b)
        partners.append((-freqs) % b)
        if b % 2 == 0:
            shape = [1] * band.dims
            shape[axis] = b
            keep = keep * (freqs != -(b // 2)).reshape(shape)
    return keep, tuple(partners)


def hermitian_symmetrize(coeffs, band):
    """Project coefficients onto the Hermitian (real-field) subspace."""
    keep, partners = _hermitian_tables(band)
    mirrored = coeffs[(Ellipsis,) + np.ix_(*partners)]
    return 0.5 * (coeffs + np.conj(mirrored)) * keep


def hermitian_defect(coeffs, band) -> float:
    """Max deviation of coefficients from their Hermitian projection."""
    return float(np.abs(coeffs - hermitian_symmetrize(coeffs, band)).max())


@dataclass(frozen=True, eq=False)
class BandLimitedField:
    """d complex coefficient blocks, one per vector component."""

    band: FrequencyBand
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        expected = (self.band.dims,) + self.band.band_sizes
        if coeffs.shape != expected:
            raise ValueError(f"coefficients must have shape {expected}, got {coeffs.shape}")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, band):
        return cls(band, np.zeros((band.dims,) + band.band_sizes, dtype=np.complex128))

    def copy(self):
        return BandLimitedField(self.band, self.coeffs.copy())

    def __add__(self, other):
        check_same_band(self, other, "field addition")
        return BandLimitedField(self.band, self.coeffs + other.coeffs)

    def __sub__(self, other):
        check_same_band(self, other, "field subtraction")
        return BandLimitedField(self.band, self.coeffs - other.coeffs)

    def __neg__(self):
        return BandLimitedField(self.band, -self.coeffs)

    def __mul__(self, scalar):
        return BandLimitedField(self.band, self.coeffs * float(scalar))

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# inclusion and projection


@lru_cache(maxsize=None)
def _scatter_positions(band_sizes, grid_sizes):
    return tuple(
        _signed_frequencies(b) % n for b, n in zip(band_sizes, grid_sizes)
    )


def _include_array(coeffs, band, grid_sizes):
    """Evaluate coefficient blocks of shape (..., *B) on a real grid (..., *N)."""
    d = band.dims
    positions = _scatter_positions(band.band_sizes, tuple(grid_sizes))
    spectrum = np.zeros(coeffs.shape[:-d] + tuple(grid_sizes), dtype=np.complex128)
    spectrum[(Ellipsis,) + np.ix_(*positions)] = coeffs
    values = spfft.ifftn(spectrum, axes=tuple(range(-d, 0))) * math.prod(grid_sizes)
    scale = np.abs(values.real).max()
    residue = np.abs(values.imag).max()
    if residue > _HERMITIAN_TOL * max(scale, 1e-300):
        raise ValueError(
            "coefficients are not Hermitian-symmetric: inclusion produced "
            f"imaginary residue {residue:.3e} against magnitude {scale:.3e}"
        )
    return np.ascontiguousarray(values.real)


def _project_array(values, band):
    """Restrict gridded data of shape (..., *N) to Hermitian in-band coefficients."""
    d = band.dims
    positions = _scatter_positions(band.band_sizes, band.grid_sizes)
    spectrum = spfft.fftn(np.asarray(values, dtype=np.float64), axes=tuple(range(-d, 0)))
    spectrum /= math.prod(band.grid_sizes)
    return hermitian_symmetrize(spectrum[(Ellipsis,) + np.ix_(*positions)], band)


def include(f: BandLimitedField, grid_sizes=None) -> SpatialVectorField:
    """Evaluate a band-limited vector field on a spatial grid (the inclusion map)."""
    grid = tuple(int(n) for n in (grid_sizes or f.band.grid_sizes))
    if len(grid) != f.band.dims or any(n < b for n, b in zip(grid, f.band.band_sizes)):
        raise ValueError(f"grid {grid} is smaller than the band {f.band.band_sizes}")
    return SpatialVectorField(_include_array(f.coeffs, f.band, grid))


def project(f, band: FrequencyBand) -> BandLimitedField:
    """Restrict a spatial vector field to the band (the projection map)."""
    values = f.components if isinstance(f, SpatialVectorField) else np.asarray(f, dtype=np.float64)
    expected = (band.dims,) + band.grid_sizes
    if values.shape != expected:
        raise ValueError(f"field shape {values.shape} does not match band grid {expected}")
    return BandLimitedField(band, _project_array(values, band))


# ---------------------------------------------------------------------------
# spectral operators


@dataclass(frozen=True)
class SpectralOperators:
    """Per-frequency multiplier tables for the smoothing pair and derivatives.

    The Sobolev smoother acts as (1 + alpha * |k|^2)^s on the integer
    frequencies k (cycles per domain; equivalently radians on the 2*pi
    torus), so `alpha` is resolution-independent. Differentiation uses the
    exact unit-torus symbols i*2*pi*k_j, the derivative matching the [0,1)^d
    coordinates all spatial fields live on.
    """

    band: FrequencyBand
    alpha: float
    s_exponent: int

    def __post_init__(self):
        check_positive(self.alpha, "alpha")
        if int(self.s_exponent) != self.s_exponent or self.s_exponent < 1:
            raise ValueError(f"s_exponent must be a positive integer, got {self.s_exponent!r}")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "s_exponent", int(self.s_exponent))

    @property
    def l_multiplier(self):
        return _smoothing_tables(self)[0]

    @property
    def k_multiplier(self):
        return _smoothing_tables(self)[1]

    @property
    def grad_multiplier(self):
        return _gradient_tables(self.band)


@lru_cache(maxsize=None)
def _smoothing_tables(ops):
    mesh = _frequency_mesh(ops.band)
    freq2 = np.einsum("j...,j...->...", mesh, mesh)
    l_mult = (1.0 + ops.alpha * freq2) ** ops.s_exponent
    return l_mult, 1.0 / l_mult


@lru_cache(maxsize=None)
def _gradient_tables(band):
    """i * 2*pi*k_j per axis; zero at unpaired even-band boundary frequencies."""
    mesh = _frequency_mesh(band)
    tables = 2j * np.pi * mesh
    for j, b in enumerate(band.band_sizes):
        if b % 2 == 0:
            sel = [slice(None)] * band.dims
            sel[j] = np.flatnonzero(_signed_frequencies(b) == -(b // 2))
            tables[(j,) + tuple(sel)] = 0.0
    return tables


def apply_L(f: BandLimitedField, ops: SpectralOperators) -> BandLimitedField:
    """Apply the Sobolev smoothing operator (momentum map)."""
    check_band_matches(f, ops, "apply_L")
    return BandLimitedField(f.band, f.coeffs * ops.l_multiplier)


def apply_K(f: BandLimitedField, ops: SpectralOperators) -> BandLimitedField:
    """Apply the inverse smoothing operator."""
    check_band_matches(f, ops, "apply_K")
    return BandLimitedField(f.band, f.coeffs * ops.k_multiplier)


def spectral_jacobian(f: BandLimitedField, ops: SpectralOperators):
    """Coefficient block (d, d, *B) with entry (i, j) = coefficients of d v_i / d x_j."""
    check_band_matches(f, ops, "spectral_jacobian")
    g = _gradient_tables(f.band)
    return f.coeffs[:, None] * g[None, :]


def spectral_divergence(f: BandLimitedField, ops: SpectralOperators):
    """Scalar coefficient grid of the divergence (trace of the Jacobian block)."""
    check_band_matches(f, ops, "spectral_divergence")
    g = _gradient_tables(f.band)
    return np.einsum("i...,i...->...", g, f.coeffs)


# ---------------------------------------------------------------------------
# truncated convolution

# The coefficient blocks are convolved linearly (no wrap-around) and the
# result is restricted back to the band. Each factor is zero-padded to at
# least 2B-1 per axis so a pointwise product in the complementary domain
# realizes the linear convolution.


@lru_cache(maxsize=None)
def _convolution_plan(band):
    padded = tuple(spfft.next_fast_len(2 * b - 1) for b in band.band_sizes)
    positions = tuple(
        _signed_frequencies(b) % m for b, m in zip(band.band_sizes, padded)
    )
    return padded, positions


def _embed_fft(arr, band):
    d = band.dims
    padded, positions = _convolution_plan(band)
    emb = np.zeros(arr.shape[:-d] + padded, dtype=np.complex128)
    emb[(Ellipsis,) + np.ix_(*positions)] = arr
    return spfft.fftn(emb, axes=tuple(range(-d, 0)))

def _gather_ifft(hat, band):
    d = band.dims
    _, positions = _convolution_plan(band)
    full = spfft.ifftn(hat, axes=tuple(range(-d, 0)))
    return full[(Ellipsis,) + np.ix_(*positions)]


def truncated_convolution(a, b, band: FrequencyBand):
    """Linear convolution of coefficient grids restricted to the band.

    Leading axes broadcast; the trailing axes of both operands must equal the
    band sizes. The result is Hermitian-projected, matching the subspace on
    which the field algebra operates.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    for name, arr in (("first", a), ("second", b)):
        if arr.shape[-band.dims:] != band.band_sizes:
            raise ValueError(
                f"{name} operand trailing shape {arr.shape[-band.dims:]} "
                f"does not match band {band.band_sizes}"
            )
    hat = _embed_fft(a, band) * _embed_fft(b, band)
    return hermitian_symmetrize(_gather_ifft(hat, band), band)


# ---------------------------------------------------------------------------
# metric


def inner_product_V(a: BandLimitedField, b: BandLimitedField, ops: SpectralOperators) -> float:
    """Sobolev inner product <La, b> in the coefficient pairing.

    With the centered two-sided band this equals the L2 inner product of
    L(include(a)) with include(b) on the torus.
    """
    check_same_band(a, b, "inner_product_V")
    check_band_matches(a, ops, "inner_product_V")
    return float(np.real(np.sum(ops.l_multiplier * a.coeffs * np.conj(b.coeffs))))


def norm_V(a: BandLimitedField, ops: SpectralOperators) -> float:
    return math.sqrt(max(inner_product_V(a, a, ops), 0.0))


# ---------------------------------------------------------------------------
# coefficient dumps (text header + raw complex payload)


def write_spectrum(path, f: BandLimitedField):
    header = ImageHeader(
        f.band.dims, f.band.band_sizes, "c16", "little",
        tuple(1.0 / n for n in f.band.grid_sizes), f.band.dims,
    )
    with open(path, "wb") as fh:
        _write_header(fh, header, extra={"grid": " ".join(str(n) for n in f.band.grid_sizes)})
        for c in range(f.band.dims):
            fh.write(f.coeffs[c].astype("<c16").tobytes(order="F"))


def read_spectrum(path) -> BandLimitedField:
    with open(path, "rb") as fh:
        raw = fh.read()
    header, fields, payload = _parse_header(raw, path)
    if "grid" not in fields:
        raise ValueError(f"{path}: spectrum file missing grid sizes")
    band_sizes = header.grid_sizes  # the header's sizes are the block shape
    grid = tuple(int(tok) for tok in fields["grid"].split())
    band = FrequencyBand(band_sizes, grid)
    count = header.components * math.prod(band_sizes)
    if len(payload) != count * 16:
        raise ValueError(
            f"{path}: payload holds {len(payload)} bytes, header implies {count * 16} bytes"
        )
    flat = np.frombuffer(payload, dtype="<c16")
    per = math.prod(band_sizes)
    coeffs = np.stack(
        [flat[c * per:(c + 1) * per].reshape(band_sizes, order="F")
         for c in range(header.components)]
    )
    return BandLimitedField(band, coeffs)
