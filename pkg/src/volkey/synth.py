"""Synthetic phantoms and random similarity transforms for evaluation.

A phantom is a sum of anisotropic Gaussian blobs with seeded random centers,
per-axis widths in [2, 8] mm, random orientations and amplitudes in [0.5, 1].
Transform sampling draws per-axis rotation angles with magnitude uniform in
[10, 30] degrees and random sign (composed Rx @ Ry @ Rz), unit scale, and
per-axis translations uniform in [-10, 10] mm; rotations can be taken about a
given center point so content stays in the field of view.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import RejectedInputError
from .transforms import SimilarityTransform, rotation_x, rotation_y, rotation_z
from .volume import ScalarVolume


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation from a Shoemake quaternion."""
    u1, u2, u3 = rng.random(3)
    q = np.array(
        [
            math.sqrt(1.0 - u1) * math.sin(2.0 * math.pi * u2),
            math.sqrt(1.0 - u1) * math.cos(2.0 * math.pi * u2),
            math.sqrt(u1) * math.sin(2.0 * math.pi * u3),
            math.sqrt(u1) * math.cos(2.0 * math.pi * u3),
        ]
    )
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def make_phantom(
    seed: int,
    num_blobs: int = 40,
    dims: tuple[int, int, int] = (64, 64, 64),
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
    width_range: tuple[float, float] = (2.0, 8.0),
) -> ScalarVolume:
    """Sum of seeded anisotropic Gaussian blobs on a regular grid.

    Centers are uniform over the central 80% of the extent per axis so blob
    mass stays inside the field of view.
    """
    if num_blobs < 1:
        raise RejectedInputError("num_blobs must be positive")
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in dims)
    spacing = tuple(float(s) for s in spacing)
    extent = (np.asarray(dims) - 1) * np.asarray(spacing)
    data = np.zeros(dims)
    axes = [np.arange(d) * s for d, s in zip(dims, spacing)]
    for _ in range(num_blobs):
        center = (0.1 + 0.8 * rng.random(3)) * extent
        widths = width_range[0] + (width_range[1] - width_range[0]) * rng.random(3)
        rot = _random_rotation(rng)
        amp = 0.5 + 0.5 * rng.random()
        # inverse covariance of the oriented blob
        prec = rot @ np.diag(1.0 / widths**2) @ rot.T
        # evaluate over a bounding box of 4 max widths around the center
        reach = 4.0 * widths.max()
        lo = [max(0, int(math.floor((center[a] - reach) / spacing[a]))) for a in range(3)]
        hi = [min(dims[a], int(math.ceil((center[a] + reach) / spacing[a])) + 1) for a in range(3)]
        if any(lo[a] >= hi[a] for a in range(3)):
            continue
        gx, gy, gz = np.meshgrid(
            axes[0][lo[0] : hi[0]] - center[0],
            axes[1][lo[1] : hi[1]] - center[1],
            axes[2][lo[2] : hi[2]] - center[2],
            indexing="ij",
        )
        d = np.stack([gx, gy, gz], axis=-1)
        q = np.einsum("...i,ij,...j->...", d, prec, d)
        data[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] += amp * np.exp(-0.5 * q)
    return ScalarVolume(dims=dims, spacing=spacing, origin=(0.0, 0.0, 0.0), data=data)


def random_similarity(
    seed: int,
    rot_range_deg: tuple[float, float] = (10.0, 30.0),
    trans_range_mm: tuple[float, float] = (0.0, 10.0),
    center: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> SimilarityTransform:
    """Seeded random similarity transform with unit scale.

    Per-axis rotation magnitudes are uniform in rot_range_deg with random
    sign, composed as Rx @ Ry @ Rz about `center`; per-axis translations have
    magnitude uniform in trans_range_mm with random sign.
    """
    if rot_range_deg[0] < 0 or rot_range_deg[0] > rot_range_deg[1]:
        raise RejectedInputError(f"bad rotation range {rot_range_deg}")
    if trans_range_mm[0] < 0 or trans_range_mm[0] > trans_range_mm[1]:
        raise RejectedInputError(f"bad translation range {trans_range_mm}")
    rng = np.random.default_rng(seed)
    lo, hi = rot_range_deg
    angles = np.radians(lo + (hi - lo) * rng.random(3)) * rng.choice([-1.0, 1.0], size=3)
    tlo, thi = trans_range_mm
    shift = (tlo + (thi - tlo) * rng.random(3)) * rng.choice([-1.0, 1.0], size=3)
    r = rotation_x(angles[0]) @ rotation_y(angles[1]) @ rotation_z(angles[2])
    c = np.asarray(center, dtype=float)
    translation = c - r @ c + shift
    return SimilarityTransform(rotation=r, scale=1.0, translation=translation)
