"""Volumetric scalar images and their Gaussian scale space.

Conventions used throughout:

- a volume stores its samples in an array indexed ``data[x, y, z]``; the
  serialized order (x fastest) is handled by the io module
- world coordinates are millimetres: ``world = origin + index * spacing``,
  voxel centers sit on the integer lattice
- scale sigma is a world-unit Gaussian standard deviation; the input volume
  is treated as blur-free, so pyramid level k of octave o holds the input
  smoothed by ``base_sigma * 2**(o + k/3)``
- each octave has 6 levels: indices 0..3 span [sigma, 2 sigma] in exactly
  3 logarithmic increments, indices 4..5 are auxiliaries so that difference
  pairs bracket every scale in the core range
- the scale-normalized Laplacian is approximated by adjacent-level
  differences scaled by ``sqrt(k)/(k - 1)`` with ``k = 2**(1/3)``, attributed
  to the geometric mean of the two level sigmas
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import BoundaryError, RejectedInputError
from .transforms import SimilarityTransform

INTERVALS = 3
LEVELS_PER_OCTAVE = 6
MIN_DIM = 8
# sqrt(k)/(k-1) for k = 2**(1/3): converts a DoG sample into the
# scale-normalized Laplacian at the geometric-mean sigma
DOG_TO_LOG = 2.0 ** (1.0 / 6.0) / (2.0 ** (1.0 / 3.0) - 1.0)
# half of one scale step in log space; used to decide whether a requested
# sigma sits on the DoG ladder
_HALF_STEP = math.log(2.0) / 6.0


@dataclass(eq=False)
class ScalarVolume:
    """Dense scalar field on a regular grid."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    data: np.ndarray

    def __post_init__(self) -> None:
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise RejectedInputError(f"dims must be three positive ints, got {self.dims}")
        if any(not (s > 0.0 and np.isfinite(s)) for s in self.spacing):
            raise RejectedInputError(f"spacing must be positive, got {self.spacing}")
        if any(not np.isfinite(o) for o in self.origin):
            raise RejectedInputError("origin must be finite")
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != self.dims:
            raise RejectedInputError(
                f"data shape {self.data.shape} does not match dims {self.dims}"
            )
        if not np.all(np.isfinite(self.data)):
            raise RejectedInputError("volume intensities must all be finite")

    @property
    def world_min(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    @property
    def world_max(self) -> np.ndarray:
        return self.world_min + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)


def trilinear_sample(
    data: np.ndarray,
    coords: np.ndarray,
    mode: str = "clamp",
    fill: float = 0.0,
) -> np.ndarray:
    """Trilinear interpolation of `data` at voxel coordinates `coords` (..., 3).

    mode "clamp" extends edge values outward; mode "fill" writes `fill` for
    coordinates outside [0, dim-1] on any axis.
    """
    c = np.asarray(coords, dtype=float)
    n = np.asarray(data.shape)
    if mode == "fill":
        valid = np.all((c >= 0.0) & (c <= n - 1), axis=-1)
    cc = np.clip(c, 0.0, n - 1)
    i0 = np.minimum(np.floor(cc).astype(np.intp), n - 2)
    i0 = np.maximum(i0, 0)
    f = cc - i0
    x0, y0, z0 = i0[..., 0], i0[..., 1], i0[..., 2]
    x1, y1, z1 = np.minimum(x0 + 1, n[0] - 1), np.minimum(y0 + 1, n[1] - 1), np.minimum(z0 + 1, n[2] - 1)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    out = (
        data[x0, y0, z0] * gx * gy * gz
        + data[x1, y0, z0] * fx * gy * gz
        + data[x0, y1, z0] * gx * fy * gz
        + data[x0, y0, z1] * gx * gy * fz
        + data[x1, y1, z0] * fx * fy * gz
        + data[x1, y0, z1] * fx * gy * fz
        + data[x0, y1, z1] * gx * fy * fz
        + data[x1, y1, z1] * fx * fy * fz
    )
    if mode == "fill":
        out = np.where(valid, out, fill)
    return out


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian taps truncated at radius ceil(3 sigma)."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(data: np.ndarray, sigma_vox: float) -> np.ndarray:
    """Separable Gaussian blur with clamp-to-edge boundaries.

    sigma_vox is isotropic and in voxel units; sigma_vox <= 0 returns a copy.
    """
    if sigma_vox <= 0.0:
        return np.array(data, dtype=np.float64, copy=True)
    k = gaussian_kernel1d(sigma_vox)
    out = np.asarray(data, dtype=np.float64)
    for axis in range(3):
        out = ndimage.correlate1d(out, k, axis=axis, mode="nearest")
    return out


@dataclass(eq=False)
class Octave:
    """One resolution tier of the pyramid."""

    data: list[np.ndarray]
    sigmas: list[float]
    dog: list[np.ndarray]
    dog_sigmas: list[float]
    spacing: float
    origin: np.ndarray
    factor: int


@dataclass(eq=False)
class ScaleSpace:
    """Gaussian pyramid plus its adjacent-level differences."""

    base_sigma: float
    octaves: list[Octave]
    source_dims: tuple[int, int, int]
    source_spacing: tuple[float, float, float]
    source_origin: tuple[float, float, float]
    _gradients: dict = field(default_factory=dict, repr=False)

    @property
    def sigma_min(self) -> float:
        return self.octaves[0].sigmas[0]

    @property
    def sigma_max(self) -> float:
        return self.octaves[-1].sigmas[-1]


def to_isotropic(volume: ScalarVolume) -> ScalarVolume:
    """Resample onto the smallest spacing when the grid is anisotropic."""
    sp = np.asarray(volume.spacing, dtype=float)
    if sp.max() == sp.min():
        return volume
    s = float(sp.min())
    dims = np.asarray(volume.dims)
    new_dims = tuple(int(math.floor((d - 1) * spc / s)) + 1 for d, spc in zip(dims, sp))
    ax = [np.arange(nd) * s / spc for nd, spc in zip(new_dims, sp)]
    grid = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)
    data = trilinear_sample(volume.data, grid, mode="clamp")
    return ScalarVolume(dims=new_dims, spacing=(s, s, s), origin=volume.origin, data=data)


def _auto_num_octaves(min_dim: int) -> int:
    return max(1, int(math.floor(math.log2(min_dim))) - 3)


def build_scale_space(
    volume: ScalarVolume,
    base_sigma: float = 1.6,
    num_octaves: int | None = None,
) -> ScaleSpace:
    """Build the Gaussian pyramid for a volume.

    Each octave carries 6 levels at sigma * 2**(i/3); the next octave starts
    from level 3 (sigma doubled) subsampled by 2 per axis (floor halving).
    Anisotropic inputs are first resampled to isotropic min spacing.
    """
    if not (base_sigma > 0.0 and np.isfinite(base_sigma)):
        raise RejectedInputError(f"base_sigma must be positive, got {base_sigma}")
    if min(volume.dims) < MIN_DIM:
        raise RejectedInputError(
            f"volume dims {volume.dims} too small; need >= {MIN_DIM} voxels per axis"
        )
    iso = to_isotropic(volume)
    min_dim = min(iso.dims)
    max_octaves = int(math.floor(math.log2(min_dim / MIN_DIM))) + 1
    if num_octaves is None:
        num_octaves = min(_auto_num_octaves(min_dim), max_octaves)
    if num_octaves < 1 or num_octaves > max_octaves:
        raise RejectedInputError(
            f"num_octaves={num_octaves} leaves the coarsest octave under "
            f"{MIN_DIM} voxels per axis (max {max_octaves} for dims {iso.dims})"
        )

    spacing = float(iso.spacing[0])
    origin = np.asarray(iso.origin, dtype=float)
    octaves: list[Octave] = []
    current = iso.data
    for o in range(num_octaves):
        oct_base = base_sigma * (2.0**o)
        sigmas = [oct_base * 2.0 ** (i / INTERVALS) for i in range(LEVELS_PER_OCTAVE)]
        if o == 0:
            levels = [gaussian_blur(current, sigmas[0] / spacing)]
        else:
            # `current` was subsampled from the previous octave's level 3 and
            # already carries blur oct_base
            levels = [current.copy()]
        for i in range(1, LEVELS_PER_OCTAVE):
            inc = math.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2) / spacing
            levels.append(gaussian_blur(levels[i - 1], inc))
        dog = [levels[i + 1] - levels[i] for i in range(LEVELS_PER_OCTAVE - 1)]
        dog_sigmas = [math.sqrt(sigmas[i] * sigmas[i + 1]) for i in range(LEVELS_PER_OCTAVE - 1)]
        octaves.append(
            Octave(
                data=levels,
                sigmas=sigmas,
                dog=dog,
                dog_sigmas=dog_sigmas,
                spacing=spacing,
                origin=origin.copy(),
                factor=2**o,
            )
        )
        if o + 1 < num_octaves:
            half = [d // 2 for d in levels[INTERVALS].shape]
            current = levels[INTERVALS][: 2 * half[0] : 2, : 2 * half[1] : 2, : 2 * half[2] : 2]
            spacing *= 2.0
    return ScaleSpace(
        base_sigma=base_sigma,
        octaves=octaves,
        source_dims=volume.dims,
        source_spacing=volume.spacing,
        source_origin=volume.origin,
    )


def _check_sigma(ss: ScaleSpace, sigma: float) -> None:
    if not (sigma > 0.0 and np.isfinite(sigma)):
        raise RejectedInputError(f"sigma must be positive, got {sigma}")
    if sigma < ss.sigma_min * (1.0 - 1e-9) or sigma > ss.sigma_max * (1.0 + 1e-9):
        raise RejectedInputError(
            f"sigma {sigma} outside pyramid range [{ss.sigma_min}, {ss.sigma_max}]"
        )


def _nearest_level(ss: ScaleSpace, sigma: float) -> tuple[int, int]:
    """Level with sigma closest in log scale; ties prefer the finer level."""
    _check_sigma(ss, sigma)
    ls = math.log(sigma)
    best = None
    for o, octave in enumerate(ss.octaves):
        for i, s in enumerate(octave.sigmas):
            key = (abs(ls - math.log(s)), s, o)
            if best is None or key < best[0]:
                best = (key, o, i)
    return best[1], best[2]


def _level_voxel(octave: Octave, x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=float) - octave.origin) / octave.spacing


def _check_domain(octave: Octave, v: np.ndarray, level: int = 0) -> None:
    dims = np.asarray(octave.data[level].shape)
    if np.any(v < -1e-9) or np.any(v > dims - 1 + 1e-9):
        raise BoundaryError(f"point {v} (voxel units) outside level domain {tuple(dims)}")


def _level_gradients(ss: ScaleSpace, o: int, i: int) -> tuple[np.ndarray, ...]:
    key = (o, i)
    if key not in ss._gradients:
        octave = ss.octaves[o]
        ss._gradients[key] = tuple(np.gradient(octave.data[i], octave.spacing))
    return ss._gradients[key]


def gradient_at(ss: ScaleSpace, x: np.ndarray, sigma: float) -> np.ndarray:
    """Central-difference intensity gradient (per mm) at world point x, scale sigma."""
    o, i = _nearest_level(ss, sigma)
    octave = ss.octaves[o]
    v = _level_voxel(octave, x)
    _check_domain(octave, v)
    g = _level_gradients(ss, o, i)
    return np.array([float(trilinear_sample(gc, v)) for gc in g])


def _sample_gradients(
    ss: ScaleSpace, points: np.ndarray, sigma: float
) -> np.ndarray:
    """Clamped gradient samples at many world points; used by frames/descriptors."""
    o, i = _nearest_level(ss, sigma)
    octave = ss.octaves[o]
    v = _level_voxel(octave, points)
    g = _level_gradients(ss, o, i)
    return np.stack([trilinear_sample(gc, v, mode="clamp") for gc in g], axis=-1)


def laplacian_at(ss: ScaleSpace, x: np.ndarray, sigma: float, method: str = "auto") -> float:
    """Scale-normalized Laplacian ``sigma^2 * lap I`` at world point x.

    method "dog" snaps to the nearest adjacent-level difference; "stencil"
    evaluates a 6-neighbor second difference on the nearest level; "auto"
    uses the difference ladder whenever the requested sigma lies on it.
    """
    _check_sigma(ss, sigma)
    ls = math.log(sigma)
    best = None
    for o, octave in enumerate(ss.octaves):
        for j, s in enumerate(octave.dog_sigmas):
            key = (abs(ls - math.log(s)), s, o)
            if best is None or key < best[0]:
                best = (key, o, j)
    dist, o, j = best[0][0], best[1], best[2]
    if method == "auto":
        method = "dog" if dist <= _HALF_STEP * (1.0 + 1e-9) else "stencil"
    if method == "dog":
        octave = ss.octaves[o]
        v = _level_voxel(octave, x)
        _check_domain(octave, v)
        return float(trilinear_sample(octave.dog[j], v)) * DOG_TO_LOG
    if method != "stencil":
        raise RejectedInputError(f"unknown laplacian method {method!r}")
    o, i = _nearest_level(ss, sigma)
    octave = ss.octaves[o]
    v = _level_voxel(octave, x)
    _check_domain(octave, v)
    data = octave.data[i]
    h = octave.spacing
    center = float(trilinear_sample(data, v))
    acc = 0.0
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = 1.0
        acc += float(trilinear_sample(data, v + e)) + float(trilinear_sample(data, v - e)) - 2.0 * center
    return octave.sigmas[i] ** 2 * acc / (h * h)


def resample(volume: ScalarVolume, t: SimilarityTransform) -> ScalarVolume:
    """Map a volume through a similarity transform onto its own grid.

    Output voxel at world position v holds the trilinear sample of the input
    at t^-1(v); points mapping outside the input get 0.
    """
    inv = t.inverse()
    sp = np.asarray(volume.spacing)
    org = np.asarray(volume.origin)
    nx, ny, nz = volume.dims
    out = np.empty(volume.dims, dtype=np.float64)
    xs = (np.arange(nx) * sp[0] + org[0])
    ys = (np.arange(ny) * sp[1] + org[1])
    zs = (np.arange(nz) * sp[2] + org[2])
    # slab over x to bound the temporary coordinate arrays
    step = max(1, int(4_000_000 // max(1, ny * nz)))
    for x0 in range(0, nx, step):
        x1 = min(nx, x0 + step)
        gx, gy, gz = np.meshgrid(xs[x0:x1], ys, zs, indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1)
        src = inv.apply(pts.reshape(-1, 3)).reshape(pts.shape)
        vox = (src - org) / sp
        out[x0:x1] = trilinear_sample(volume.data, vox, mode="fill", fill=0.0)
    return ScalarVolume(dims=volume.dims, spacing=volume.spacing, origin=volume.origin, data=out)
