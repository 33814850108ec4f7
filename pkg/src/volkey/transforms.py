"""Global similarity transforms on R^3 and small rotation utilities.

A similarity transform acts on points as ``x -> b * R @ x + t`` with b > 0 and
R a proper rotation.  Feature geometry (location, scale, orientation frame)
maps as ``x' = b R x + t``, ``sigma' = b sigma``, ``Theta' = R Theta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RejectedInputError

SO3_TOL = 1e-9


def rotation_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def matrix_from_rotvec(v: np.ndarray) -> np.ndarray:
    """Rodrigues formula; v is axis * angle in radians."""
    v = np.asarray(v, dtype=float)
    angle = float(np.linalg.norm(v))
    if angle < 1e-14:
        return np.eye(3)
    k = v / angle
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def rotvec_from_matrix(r: np.ndarray) -> np.ndarray:
    """Inverse of matrix_from_rotvec, stable near 0 and pi."""
    r = np.asarray(r, dtype=float)
    cos_a = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos_a))
    skew = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if angle < 1e-7:
        # R ~ I + [v]_x for small angles
        return skew / 2.0
    if angle > np.pi - 1e-5:
        # near pi the skew part vanishes; recover the axis from R + I
        b = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(b), 0.0, None))
        # fix relative signs from the largest component
        i = int(np.argmax(axis))
        if axis[i] > 0:
            axis = axis.copy()
            for j in range(3):
                if j != i and b[i, j] < 0:
                    axis[j] = -axis[j]
        axis /= max(np.linalg.norm(axis), 1e-300)
        # orient so the result is consistent with the skew part when nonzero
        if np.dot(axis, skew) < 0:
            axis = -axis
        return axis * angle
    return skew / (2.0 * np.sin(angle)) * angle


def project_to_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest proper rotation in the Frobenius sense (orthogonal Procrustes)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def is_rotation(r: np.ndarray, tol: float = SO3_TOL) -> bool:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        return False
    return bool(abs(np.linalg.det(r) - 1.0) <= tol)


@dataclass(frozen=True, eq=False)
class Geometry:
    """Location, scale and orientation frame of one feature (frame axes as columns)."""

    x: np.ndarray
    sigma: float
    theta: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(3))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float).reshape(3, 3))
        object.__setattr__(self, "sigma", float(self.sigma))


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        b = float(self.scale)
        if not is_rotation(r, tol=1e-6):
            raise RejectedInputError("rotation is not a proper rotation matrix")
        if not (b > 0.0 and np.isfinite(b)):
            raise RejectedInputError(f"scale must be positive, got {b}")
        if not np.all(np.isfinite(t)):
            raise RejectedInputError("translation must be finite")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "scale", b)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "SimilarityTransform":
        return SimilarityTransform()

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return self.scale * (p @ self.rotation.T) + self.translation

    def apply_to_geometry(self, g: Geometry) -> Geometry:
        return Geometry(
            x=self.apply(g.x),
            sigma=self.scale * g.sigma,
            theta=self.rotation @ g.theta,
        )

    def inverse(self) -> "SimilarityTransform":
        rt = self.rotation.T
        return SimilarityTransform(
            rotation=rt,
            scale=1.0 / self.scale,
            translation=-(rt @ self.translation) / self.scale,
        )

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equal to applying `other` first, then self."""
        return SimilarityTransform(
            rotation=self.rotation @ other.rotation,
            scale=self.scale * other.scale,
            translation=self.scale * (self.rotation @ other.translation) + self.translation,
        )

    def as_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "scale": self.scale,
            "translation": self.translation.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "SimilarityTransform":
        return SimilarityTransform(
            rotation=np.asarray(d["rotation"], dtype=float),
            scale=float(d["scale"]),
            translation=np.asarray(d["translation"], dtype=float),
        )
