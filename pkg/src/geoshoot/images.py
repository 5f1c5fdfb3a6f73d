"""Image containers, periodic interpolation, phantoms, and file I/O.

Images live on regular periodic grids covering the unit torus [0,1)^d, so the
default voxel spacing is 1/N per axis. All interpolation wraps around the
domain boundary.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .validation import check_dims, check_finite, check_grid


class ImageFormatError(ValueError):
    """Raised when an image/field file does not match its declared layout."""


@dataclass(eq=False)
class ScalarImage:
    """A real-valued image sampled on a periodic grid."""

    values: np.ndarray
    spacing: tuple = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        check_dims(self.values.ndim)
        check_finite(self.values, "image values")
        if self.spacing is None:
            self.spacing = tuple(1.0 / n for n in self.values.shape)
        else:
            self.spacing = tuple(float(s) for s in self.spacing)
            if len(self.spacing) != self.values.ndim:
                raise ValueError("spacing must give one value per axis")

    @property
    def grid_sizes(self):
        return self.values.shape


@dataclass(eq=False)
class SpatialVectorField:
    """A d-component real vector field on a periodic grid, shape (d, N1, ..., Nd)."""

    components: np.ndarray

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=np.float64)
        d = self.components.shape[0]
        check_dims(d)
        if self.components.ndim != d + 1:
            raise ValueError(
                f"vector field with {d} components must have {d} grid axes, "
                f"got shape {self.components.shape}"
            )
        check_finite(self.components, "vector field values")

    @property
    def grid_sizes(self):
        return self.components.shape[1:]


@dataclass(frozen=True)
class ImageHeader:
    dims: int
    grid_sizes: tuple
    dtype: str
    byte_order: str
    spacing: tuple
    components: int = 1


# ---------------------------------------------------------------------------
# interpolation and warping


def _interp_values(values, coords):
    """Periodic linear interpolation of `values` at index coordinates (d, ...)."""
    return ndimage.map_coordinates(values, coords, order=1, mode="grid-wrap")


def _index_grid(shape):
    return np.array(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij"))


def _warp_values(values, displacement, spacing):
    """Sample `values` at x + displacement(x); displacement is in domain units."""
    coords = _index_grid(values.shape)
    for j, h in enumerate(spacing):
        coords[j] += displacement[j] / h
    return _interp_values(values, coords)


def warp(image: ScalarImage, displacement: SpatialVectorField) -> ScalarImage:
    """Deform an image by sampling it at x + displacement(x) with periodic wrap."""
    check_grid(displacement.components, image.grid_sizes, "displacement")
    warped = _warp_values(image.values, displacement.components, image.spacing)
    return ScalarImage(warped, image.spacing)


def gradient_periodic(values, spacing):
    """Centered differences with periodic wrap, one array per axis."""
    grads = np.empty((values.ndim,) + values.shape)
    for j, h in enumerate(spacing):
        grads[j] = (np.roll(values, -1, axis=j) - np.roll(values, 1, axis=j)) / (2.0 * h)
    return grads


def spatial_gradient(image: ScalarImage) -> SpatialVectorField:
    """Second-order centered gradient of a periodic image."""
    return SpatialVectorField(gradient_periodic(image.values, image.spacing))


def mse(a, b) -> float:
    """Mean squared difference (voxel sums divided by voxel count)."""
    av = a.values if isinstance(a, ScalarImage) else np.asarray(a)
    bv = b.values if isinstance(b, ScalarImage) else np.asarray(b)
    if av.shape != bv.shape:
        raise ValueError(f"image shapes differ: {av.shape} vs {bv.shape}")
    return float(np.mean((av - bv) ** 2))


# ---------------------------------------------------------------------------
# synthetic phantoms

PHANTOM_KINDS = ("circle", "c-shape", "gaussian-blob", "offset-blob")


def _centered_coords(grid_sizes, center):
    axes = [np.arange(n) / n for n in grid_sizes]
    mesh = np.meshgrid(*axes, indexing="ij")
    return [m - c for m, c in zip(mesh, center)]


def make_phantom(kind, grid_sizes, smoothness=None, center=None) -> ScalarImage:
    """Deterministic smooth test shapes with values in [0, 1].

    `smoothness` is a length in domain units: the blur width of the binary
    shapes (circle, c-shape) or the standard deviation of the blob kinds.
    """
    grid_sizes = tuple(int(n) for n in grid_sizes)
    check_dims(len(grid_sizes))
    if kind not in PHANTOM_KINDS:
        raise ValueError(f"unknown phantom kind {kind!r}; choose from {PHANTOM_KINDS}")

    if kind in ("circle", "c-shape"):
        smoothness = 0.025 if smoothness is None else float(smoothness)
        center = (0.5,) * len(grid_sizes) if center is None else tuple(center)
        rel = _centered_coords(grid_sizes, center)
        rho = np.sqrt(sum(r**2 for r in rel))
        if kind == "circle":
            mask = (rho <= 0.255).astype(np.float64)
        else:
            annulus = (rho >= 0.14) & (rho <= 0.36)
            # opening of the C faces the +x1 direction
            angle = np.arctan2(rel[1], rel[0])
            mask = (annulus & ~(np.abs(angle) < 1.4)).astype(np.float64)
        sigmas = [smoothness * n for n in grid_sizes]
        blurred = ndimage.gaussian_filter(mask, sigma=sigmas, mode="wrap")
        return ScalarImage(np.clip(blurred, 0.0, 1.0))

    width = 0.12 if smoothness is None else float(smoothness)
    if center is None:
        center = (0.5,) * len(grid_sizes) if kind == "gaussian-blob" else (0.65,) + (0.5,) * (len(grid_sizes) - 1)
    rel = _centered_coords(grid_sizes, tuple(center))
    rho2 = sum(r**2 for r in rel)
    return ScalarImage(np.exp(-rho2 / (2.0 * width**2)))


# ---------------------------------------------------------------------------
# file I/O: text header, blank line, raw little-endian payload
# (payload is stored axis-fastest-first: the first axis varies fastest)

_DTYPES = {"f32": "<f4", "c16": "<c16"}


def _write_header(fh, header: ImageHeader, extra=None):
    fh.write(f"dims={header.dims}\n".encode())
    fh.write(("sizes=" + " ".join(str(n) for n in header.grid_sizes) + "\n").encode())
    fh.write(f"dtype={header.dtype}\n".encode())
    fh.write(f"order={header.byte_order}\n".encode())
    fh.write(("spacing=" + " ".join(repr(s) for s in header.spacing) + "\n").encode())
    if header.components != 1:
        fh.write(f"components={header.components}\n".encode())
    for key, value in (extra or {}).items():
        fh.write(f"{key}={value}\n".encode())
    fh.write(b"\n")


def _parse_header(raw, path):
    if b"\n\n" not in raw:
        raise ImageFormatError(f"{path}: missing blank line after header")
    head, payload = raw.split(b"\n\n", 1)
    fields = {}
    for line in head.decode().splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise ImageFormatError(f"{path}: malformed header line {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    try:
        dims = int(fields["dims"])
        sizes = tuple(int(tok) for tok in fields["sizes"].split())
        dtype = fields["dtype"]
        order = fields["order"]
    except KeyError as exc:
        raise ImageFormatError(f"{path}: header missing key {exc}") from None
    if dtype not in _DTYPES:
        raise ImageFormatError(f"{path}: unsupported dtype {dtype!r}")
    if order != "little":
        raise ImageFormatError(f"{path}: unsupported byte order {order!r}")
    if len(sizes) != dims or any(n <= 0 for n in sizes):
        raise ImageFormatError(f"{path}: invalid sizes {sizes} for dims={dims}")
    spacing = tuple(float(tok) for tok in fields.get("spacing", "").split()) or None
    components = int(fields.get("components", "1"))
    header = ImageHeader(dims, sizes, dtype, order, spacing or (0.0,) * dims, components)
    return header, fields, payload


def _check_payload(payload, expected_bytes, path):
    if len(payload) != expected_bytes:
        raise ImageFormatError(
            f"{path}: payload holds {len(payload)} bytes, header implies {expected_bytes} bytes"
        )


def write_image(path, image: ScalarImage):
    header = ImageHeader(image.values.ndim, image.grid_sizes, "f32", "little", image.spacing)
    with open(path, "wb") as fh:
        _write_header(fh, header)
        fh.write(image.values.astype("<f4").tobytes(order="F"))


def read_image(path) -> ScalarImage:
    with open(path, "rb") as fh:
        raw = fh.read()
    header, _, payload = _parse_header(raw, path)
    count = math.prod(header.grid_sizes)
    _check_payload(payload, count * 4, path)
    values = np.frombuffer(payload, dtype="<f4").reshape(header.grid_sizes, order="F")
    spacing = header.spacing if any(header.spacing) else None
    return ScalarImage(values.astype(np.float64), spacing)


def write_field(path, vector_field: SpatialVectorField):
    """Store a vector field as d consecutive scalar payloads."""
    comps = vector_field.components
    spacing = tuple(1.0 / n for n in comps.shape[1:])
    header = ImageHeader(comps.shape[0], comps.shape[1:], "f32", "little", spacing, comps.shape[0])
    with open(path, "wb") as fh:
        _write_header(fh, header)
        for c in range(comps.shape[0]):
            fh.write(comps[c].astype("<f4").tobytes(order="F"))


def read_field(path) -> SpatialVectorField:
    with open(path, "rb") as fh:
        raw = fh.read()
    header, _, payload = _parse_header(raw, path)
    count = math.prod(header.grid_sizes) * header.components
    _check_payload(payload, count * 4, path)
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    per = math.prod(header.grid_sizes)
    comps = np.stack(
        [flat[c * per:(c + 1) * per].reshape(header.grid_sizes, order="F")
         for c in range(header.components)]
    )
    return SpatialVectorField(comps)
