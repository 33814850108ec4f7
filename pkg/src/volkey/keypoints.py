"""Scale-space extrema of the normalized Laplacian, with a binary contrast sign.

A keypoint is a strict local maximum of |sigma^2 lap I| over its 80-neighbor
(3x3x3x3) space-and-scale neighborhood, refined by one Newton step on the 4D
quadratic fit.  The sign of the Laplacian at the extremum is kept as a binary
feature attribute: it flips under intensity negation while the locations,
scales and responses stay fixed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import RejectedInputError
from .volume import DOG_TO_LOG, INTERVALS, ScaleSpace

MAX_OFFSET = 0.6


@dataclass(eq=False)
class Keypoint:
    """One detected blob-like structure."""

    x: np.ndarray
    sigma: float
    sign: int
    response: float
    border: bool = False

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float).reshape(3)
        self.sigma = float(self.sigma)
        self.sign = int(self.sign)
        self.response = float(self.response)


def _quadratic_step(stack: np.ndarray, j: int, x: int, y: int, z: int):
    """Gradient, Hessian and Newton offset of the 4D fit at one voxel.

    Offset order is (x, y, z, scale); spatial steps are one voxel, scale steps
    one pyramid interval.
    """
    d = stack
    g = np.array(
        [
            (d[j, x + 1, y, z] - d[j, x - 1, y, z]) / 2.0,
            (d[j, x, y + 1, z] - d[j, x, y - 1, z]) / 2.0,
            (d[j, x, y, z + 1] - d[j, x, y, z - 1]) / 2.0,
            (d[j + 1, x, y, z] - d[j - 1, x, y, z]) / 2.0,
        ]
    )
    c = d[j, x, y, z]
    h = np.empty((4, 4))
    h[0, 0] = d[j, x + 1, y, z] - 2 * c + d[j, x - 1, y, z]
    h[1, 1] = d[j, x, y + 1, z] - 2 * c + d[j, x, y - 1, z]
    h[2, 2] = d[j, x, y, z + 1] - 2 * c + d[j, x, y, z - 1]
    h[3, 3] = d[j + 1, x, y, z] - 2 * c + d[j - 1, x, y, z]
    h[0, 1] = h[1, 0] = (
        d[j, x + 1, y + 1, z] - d[j, x + 1, y - 1, z] - d[j, x - 1, y + 1, z] + d[j, x - 1, y - 1, z]
    ) / 4.0
    h[0, 2] = h[2, 0] = (
        d[j, x + 1, y, z + 1] - d[j, x + 1, y, z - 1] - d[j, x - 1, y, z + 1] + d[j, x - 1, y, z - 1]
    ) / 4.0
    h[1, 2] = h[2, 1] = (
        d[j, x, y + 1, z + 1] - d[j, x, y + 1, z - 1] - d[j, x, y - 1, z + 1] + d[j, x, y - 1, z - 1]
    ) / 4.0
    h[0, 3] = h[3, 0] = (
        d[j + 1, x + 1, y, z] - d[j + 1, x - 1, y, z] - d[j - 1, x + 1, y, z] + d[j - 1, x - 1, y, z]
    ) / 4.0
    h[1, 3] = h[3, 1] = (
        d[j + 1, x, y + 1, z] - d[j + 1, x, y - 1, z] - d[j - 1, x, y + 1, z] + d[j - 1, x, y - 1, z]
    ) / 4.0
    h[2, 3] = h[3, 2] = (
        d[j + 1, x, y, z + 1] - d[j + 1, x, y, z - 1] - d[j - 1, x, y, z + 1] + d[j - 1, x, y, z - 1]
    ) / 4.0
    try:
        offset = -np.linalg.solve(h, g)
    except np.linalg.LinAlgError:
        offset = np.zeros(4)
    return g, offset


def detect_keypoints(
    ss: ScaleSpace,
    min_abs_response: float = 0.0,
    max_count: int | None = None,
) -> list[Keypoint]:
    """Find strict |response| extrema, refine, and sort by salience.

    Ordering is descending |response|, ties broken by lexicographic location
    then sigma; the list is truncated to max_count when given.
    """
    if min_abs_response < 0.0:
        raise RejectedInputError("min_abs_response must be nonnegative")
    footprint = np.ones((3, 3, 3, 3), dtype=bool)
    footprint[1, 1, 1, 1] = False
    keypoints: list[Keypoint] = []
    vol_min = np.asarray(ss.source_origin, dtype=float)
    vol_max = vol_min + (np.asarray(ss.source_dims) - 1) * np.asarray(ss.source_spacing)
    for octave in ss.octaves:
        stack = np.stack(octave.dog)
        mag = np.abs(stack)
        neighbor_max = ndimage.maximum_filter(
            mag, footprint=footprint, mode="constant", cval=np.inf
        )
        candidates = np.argwhere(mag > neighbor_max)
        for j, x, y, z in candidates:
            g, offset = _quadratic_step(stack, j, x, y, z)
            if np.max(np.abs(offset)) > MAX_OFFSET:
                continue
            value = stack[j, x, y, z] + 0.5 * float(g @ offset)
            response = value * DOG_TO_LOG
            if response == 0.0 or abs(response) < min_abs_response:
                continue
            pos = np.array([x, y, z], dtype=float) + offset[:3]
            world = octave.origin + pos * octave.spacing
            sigma = octave.dog_sigmas[j] * 2.0 ** (offset[3] / INTERVALS)
            border = bool(
                np.any(world - 3.0 * sigma < vol_min) or np.any(world + 3.0 * sigma > vol_max)
            )
            keypoints.append(
                Keypoint(
                    x=world,
                    sigma=sigma,
                    sign=1 if response > 0 else -1,
                    response=response,
                    border=border,
                )
            )
    keypoints.sort(key=lambda k: (-abs(k.response), k.x[0], k.x[1], k.x[2], k.sigma))
    if max_count is not None:
        keypoints = keypoints[:max_count]
    return keypoints
