"""Descriptor matching and transform-space voting.

Each fixed feature is matched to the single moving feature and sign state
whose ranked descriptor is nearest in Euclidean distance (no ratio test; ties
resolve to the lowest moving index, then lowest state).  Every match implies
a similarity transform from the two feature geometries; the matches vote in
transform space and the dominant mode, refined by mean shift, initializes
registration.  Vote transforms map moving geometry onto fixed geometry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .descriptors import Feature
from .errors import InitializationFailureError, RejectedInputError
from .transforms import (
    Geometry,
    SimilarityTransform,
    project_to_rotation,
    rotvec_from_matrix,
)


@dataclass(eq=False)
class Match:
    """Best moving candidate for one fixed feature."""

    fixed_index: int
    moving_index: int
    moving_state: int
    descriptor_distance: float
    transform: SimilarityTransform
    fixed_geometry: Geometry
    moving_geometry: Geometry


def transform_between(g_src: Geometry, g_dst: Geometry) -> SimilarityTransform:
    """Similarity transform carrying the source geometry onto the destination.

    b = sigma_dst / sigma_src, R = theta_dst theta_src^T, t = x_dst - b R x_src.
    """
    b = g_dst.sigma / g_src.sigma
    r = project_to_rotation(g_dst.theta @ g_src.theta.T)
    t = g_dst.x - b * (r @ g_src.x)
    return SimilarityTransform(rotation=r, scale=b, translation=t)


def match_features(fixed: list[Feature], moving: list[Feature]) -> list[Match]:
    """Nearest ranked descriptor over all moving features and states."""
    if not fixed or not moving:
        raise RejectedInputError("both feature lists must be nonempty")
    ranks_m = np.stack(
        [[d.ranked for d in f.descriptors] for f in moving]
    ).astype(np.float64)  # (M, 4, 64)
    m, nstates, nbins = ranks_m.shape
    flat = ranks_m.reshape(m * nstates, nbins)
    matches: list[Match] = []
    for n, f in enumerate(fixed):
        r = f.descriptors[0].ranked.astype(np.float64)
        d2 = ((flat - r) ** 2).sum(axis=1)
        best = int(np.argmin(d2))
        mi, state = divmod(best, nstates)
        g_fixed = f.geometry(0)
        g_moving = moving[mi].geometry(state)
        matches.append(
            Match(
                fixed_index=n,
                moving_index=mi,
                moving_state=state,
                descriptor_distance=float(math.sqrt(d2[best])),
                transform=transform_between(g_moving, g_fixed),
                fixed_geometry=g_fixed,
                moving_geometry=g_moving,
            )
        )
    return matches


@dataclass
class HoughParams:
    """Consistency thresholds and accumulator quantization."""

    eps_cos: float = 0.7
    eps_log_scale: float = math.log(1.5)
    eps_disp: float = 0.25
    rot_bin: float = math.pi / 8.0
    log_scale_bin: float = math.log(1.5)
    trans_bin: float = 10.0
    max_seeds: int = 64
    max_shift_iters: int = 30
    max_refit_iters: int = 10


@dataclass(eq=False)
class HoughResult:
    t_star: SimilarityTransform
    inliers: list[Match]
    vote_count: int


def is_consistent(match: Match, t: SimilarityTransform, params: HoughParams) -> bool:
    """Per-axis rotation cosines, log-scale gap, and scale-normalized residual."""
    rv = match.transform
    cos = np.einsum("ai,ai->i", rv.rotation, t.rotation)
    if np.any(cos <= params.eps_cos):
        return False
    if abs(math.log(rv.scale) - math.log(t.scale)) >= params.eps_log_scale:
        return False
    residual = t.apply(match.moving_geometry.x) - match.fixed_geometry.x
    norm = (t.scale * match.moving_geometry.sigma) * match.fixed_geometry.sigma
    return bool(residual @ residual < params.eps_disp * norm)


def _count_inliers(matches: list[Match], t: SimilarityTransform, params: HoughParams) -> int:
    return sum(1 for m in matches if is_consistent(m, t, params))


def _fit_to_matches(matches: list[Match]) -> SimilarityTransform:
    """Closed-form similarity fit of the matched point pairs (moving onto fixed)."""
    f = np.stack([m.fixed_geometry.x for m in matches])
    mv = np.stack([m.moving_geometry.x for m in matches])
    f_hat = f - f.mean(axis=0)
    m_hat = mv - mv.mean(axis=0)
    a = f_hat.T @ m_hat
    u, s, vt = np.linalg.svd(a)
    c = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(u @ vt)))])
    r = u @ c @ vt
    b = float(np.trace(a.T @ r)) / float((m_hat * m_hat).sum())
    t = f.mean(axis=0) - b * (r @ mv.mean(axis=0))
    return SimilarityTransform(rotation=r, scale=b, translation=t)


def hough_init(matches: list[Match], params: HoughParams | None = None) -> HoughResult:
    """Dominant similarity transform among the match votes.

    Votes are hashed on quantized (rotation-vector, log-scale, translation)
    coordinates; the strongest cells seed mean-shift refinement with one-bin
    bandwidth per component (chordal mean for rotation), and candidates are
    ranked by their consistent-vote count.  Raises when fewer than 3 matches
    exist or no candidate gathers 3 consistent votes.
    """
    params = params or HoughParams()
    if len(matches) < 3:
        raise InitializationFailureError(f"need at least 3 matches, got {len(matches)}")
    rots = np.stack([m.transform.rotation for m in matches])
    rotvecs = np.stack([rotvec_from_matrix(r) for r in rots])
    log_scales = np.array([math.log(m.transform.scale) for m in matches])
    trans = np.stack([m.transform.translation for m in matches])

    cells: dict[tuple, list[int]] = {}
    for i in range(len(matches)):
        key = (
            *np.floor(rotvecs[i] / params.rot_bin).astype(int),
            int(math.floor(log_scales[i] / params.log_scale_bin)),
            *np.floor(trans[i] / params.trans_bin).astype(int),
        )
        cells.setdefault(key, []).append(i)
    seeds = sorted(cells.items(), key=lambda kv: (-len(kv[1]), kv[0]))[: params.max_seeds]

    candidates: list[SimilarityTransform] = []
    for _, members in seeds:
        r_hat = project_to_rotation(rots[members].mean(axis=0))
        ls_hat = float(log_scales[members].mean())
        t_hat = trans[members].mean(axis=0)
        window = np.asarray(members)
        previous: set[int] | None = None
        for _ in range(params.max_shift_iters):
            cos_ang = np.clip(
                (np.einsum("kij,ij->k", rots, r_hat) - 1.0) / 2.0, -1.0, 1.0
            )
            inside = (
                (np.arccos(cos_ang) < params.rot_bin)
                & (np.abs(log_scales - ls_hat) < params.log_scale_bin)
                & (np.linalg.norm(trans - t_hat, axis=1) < params.trans_bin)
            )
            window = np.nonzero(inside)[0]
            if window.size == 0:
                break
            current = set(window.tolist())
            r_hat = project_to_rotation(rots[window].mean(axis=0))
            ls_hat = float(log_scales[window].mean())
            t_hat = trans[window].mean(axis=0)
            if current == previous:
                break
            previous = current
        candidates.append(
            SimilarityTransform(rotation=r_hat, scale=math.exp(ls_hat), translation=t_hat)
        )
        # The vote mean inherits each vote's single-frame noise; a
        # least-squares fit of the window members' matched endpoints is much
        # sharper, so offer it as a second candidate for the same cluster.
        if window.size >= 3:
            try:
                candidates.append(_fit_to_matches([matches[i] for i in window]))
            except ValueError:
                pass

    best: SimilarityTransform | None = None
    best_count = -1
    for cand in candidates:
        count = _count_inliers(matches, cand, params)
        if count > best_count:
            best, best_count = cand, count
    if best is None or best_count < 3:
        raise InitializationFailureError(
            f"no transform cluster with >= 3 consistent votes (best {max(best_count, 0)})"
        )
    inliers = [m for m in matches if is_consistent(m, best, params)]
    # Re-fit to the inlier pairs and recount until membership stabilizes; the
    # mean-shift mode is a vote average while the least-squares fit of the
    # matched endpoints is sharper, which recovers inliers the residual test
    # rejects under the coarser mode.
    for _ in range(params.max_refit_iters):
        if len(inliers) < 3:
            break
        try:
            refit = _fit_to_matches(inliers)
        except ValueError:
            break
        new_inliers = [m for m in matches if is_consistent(m, refit, params)]
        if len(new_inliers) < len(inliers):
            break
        best = refit
        if [id(m) for m in new_inliers] == [id(m) for m in inliers]:
            inliers = new_inliers
            break
        inliers = new_inliers
    return HoughResult(t_star=best, inliers=inliers, vote_count=len(inliers))
