"""Per-frame hand-skeleton features (joint distances, finger angles, keypoint
singular values), temporal aggregation, and repetition-weighted fusion.

Feature vector layouts (all joint numbers 1-based):

  distances (61): 20 intra-hand joint-pair norms for the left hand, the same
      20 for the right hand, then 21 peer-to-peer norms between same-index
      joints of the two hands.
  angles (20): per hand, the bend angle at the middle joint of 10 consecutive
      joint triples (two per finger); left hand first.
  singular values (35): per hand, 4 values from the 4x15 finger-row matrix
      and 3 from the 21x3 all-joints matrix (7 per hand, left first); then the
      two-hand combinations: 6 from 21x6 (side by side), 3 from 42x3
      (stacked), 8 from 8x15 (stacked finger rows), 4 from 4x30 (side by
      side finger rows). Each group is sorted descending internally.

Enabled families concatenate in the order [distances, angles, svd]; with all
three on, a frame yields 116 features. Fusion tiles distances x4, angles x3,
svd x6 (514 values) and appends the deep latent when present (510 -> 1024).

One-hand frames duplicate the present hand before any of the above, so the
peer-to-peer block is zero and both per-hand blocks coincide.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .numerics import singular_values_stack
from .types import (
    FUSED,
    SKEL_ALL,
    SKEL_ANG,
    SKEL_DIST,
    SKEL_SVD,
    FeatureVector,
    FrameSkeleton,
    HandFrame,
    SignSample,
    ValidationError,
    custom_layout,
)

logger = logging.getLogger(__name__)

# Intra-hand joint pairs (1-based): fingertip-to-fingertip chain across
# fingers, each fingertip and finger base to the wrist, within-finger spans,
# and index/middle/ring cross-links.
DISTANCE_PAIRS: tuple[tuple[int, int], ...] = (
    (5, 9), (9, 13), (13, 17), (17, 21),
    (5, 1), (9, 1), (13, 1), (17, 1), (21, 1),
    (5, 2), (9, 6), (13, 10), (17, 14), (21, 18),
    (9, 4), (9, 12), (13, 8), (13, 16), (17, 12), (17, 20),
)

# Two consecutive joint triples per finger; the angle sits at the middle joint.
ANGLE_TRIPLES: tuple[tuple[int, int, int], ...] = (
    (2, 3, 4), (3, 4, 5),
    (6, 7, 8), (7, 8, 9),
    (10, 11, 12), (11, 12, 13),
    (14, 15, 16), (15, 16, 17),
    (18, 19, 20), (19, 20, 21),
)

# Finger-row matrix: row r holds joint 4f+r-3 of finger f (r, f 1-based), so
# row 1 is the five finger bases and row 4 the five tips; 0-based here.
_FINGER_ROW_IDX = np.array(
    [[4 * f + r + 1 for f in range(5)] for r in range(4)], dtype=np.intp
)

_DIST_A = np.array([a - 1 for a, _ in DISTANCE_PAIRS], dtype=np.intp)
_DIST_B = np.array([b - 1 for _, b in DISTANCE_PAIRS], dtype=np.intp)
_ANG_A = np.array([a - 1 for a, _, _ in ANGLE_TRIPLES], dtype=np.intp)
_ANG_B = np.array([b - 1 for _, b, _ in ANGLE_TRIPLES], dtype=np.intp)
_ANG_C = np.array([c - 1 for _, _, c in ANGLE_TRIPLES], dtype=np.intp)

# Bone edges (1-based): wrist to each finger base plus the three segments of
# each finger; used only by the optional normalization.
_BONE_EDGES = tuple(
    (1, 4 * f - 2) for f in range(1, 6)
) + tuple(
    (4 * f - 2 + k, 4 * f - 1 + k) for f in range(1, 6) for k in range(3)
)
_BONE_A = np.array([a - 1 for a, _ in _BONE_EDGES], dtype=np.intp)
_BONE_B = np.array([b - 1 for _, b in _BONE_EDGES], dtype=np.intp)

REPEAT_DISTANCES = 4
REPEAT_ANGLES = 3
REPEAT_SVD = 6

AGGREGATIONS = ("mean", "max")


@dataclass(frozen=True)
class FeatureConfig:
    """Which feature families to extract and how to weight them at fusion."""

    use_distances: bool = True
    use_angles: bool = True
    use_svd: bool = True
    use_deep: bool = False
    repeat_dist: int = REPEAT_DISTANCES
    repeat_ang: int = REPEAT_ANGLES
    repeat_svd: int = REPEAT_SVD
    aggregation: str = "mean"
    normalize: bool = False

    def __post_init__(self):
        if not (self.use_distances or self.use_angles or self.use_svd or self.use_deep):
            raise ValidationError("feature config: no feature family enabled")
        if min(self.repeat_dist, self.repeat_ang, self.repeat_svd) < 1:
            raise ValidationError("feature config: repetition counts must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ValidationError(f"feature config: unknown aggregation {self.aggregation!r}")

    @property
    def frame_dim(self) -> int:
        """Length of one frame's un-tiled skeleton vector."""
        return (
            (SKEL_DIST.dim if self.use_distances else 0)
            + (SKEL_ANG.dim if self.use_angles else 0)
            + (SKEL_SVD.dim if self.use_svd else 0)
        )

    @property
    def skeleton_dim(self) -> int:
        """Length of the tiled skeleton block entering fusion."""
        return (
            (SKEL_DIST.dim * self.repeat_dist if self.use_distances else 0)
            + (SKEL_ANG.dim * self.repeat_ang if self.use_angles else 0)
            + (SKEL_SVD.dim * self.repeat_svd if self.use_svd else 0)
        )

    def frame_layout(self):
        families = (self.use_distances, self.use_angles, self.use_svd)
        if all(families):
            return SKEL_ALL
        if families == (True, False, False):
            return SKEL_DIST
        if families == (False, True, False):
            return SKEL_ANG
        if families == (False, False, True):
            return SKEL_SVD
        return custom_layout(self.frame_dim)


def duplicate_single_hand(frame: FrameSkeleton) -> tuple[HandFrame, HandFrame]:
    """Resolve a frame to a (left, right) pair, standing a missing hand in
    with a copy of the present one."""
    if frame.left is None and frame.right is None:
        raise ValidationError("frame skeleton: no hand present")
    left = frame.left if frame.left is not None else frame.right
    right = frame.right if frame.right is not None else frame.left
    return left, right


def hand_stacks(frames: Sequence[FrameSkeleton]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a frame sequence into (T, 21, 3) left/right arrays after
    single-hand duplication."""
    if not frames:
        raise ValidationError("hand_stacks: empty frame sequence")
    lefts = []
    rights = []
    for frame in frames:
        left, right = duplicate_single_hand(frame)
        lefts.append(left.joints)
        rights.append(right.joints)
    return np.stack(lefts), np.stack(rights)


def normalize_hands(left: np.ndarray, right: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Optional coordinate normalization: center each frame on the midpoint
    of the two wrists and scale by the mean bone length over both hands.
    Frames with zero mean bone length are centered but left unscaled."""
    center = 0.5 * (left[:, :1, :] + right[:, :1, :])
    left = left - center
    right = right - center
    bones = np.concatenate(
        [
            np.linalg.norm(left[:, _BONE_A] - left[:, _BONE_B], axis=2),
            np.linalg.norm(right[:, _BONE_A] - right[:, _BONE_B], axis=2),
        ],
        axis=1,
    )
    scale = np.mean(bones, axis=1)
    scale = np.where(scale > 0.0, scale, 1.0)[:, None, None]
    return left / scale, right / scale


def _distance_block(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    per_left = np.linalg.norm(left[:, _DIST_A] - left[:, _DIST_B], axis=2)
    per_right = np.linalg.norm(right[:, _DIST_A] - right[:, _DIST_B], axis=2)
    peer = np.linalg.norm(left - right, axis=2)
    return np.concatenate([per_left, per_right, peer], axis=1)


def _hand_angles(hand: np.ndarray) -> np.ndarray:
    u = hand[:, _ANG_A] - hand[:, _ANG_B]
    v = hand[:, _ANG_C] - hand[:, _ANG_B]
    cross = np.linalg.norm(np.cross(u, v), axis=2)
    dot = np.einsum("tij,tij->ti", u, v)
    degenerate = (np.linalg.norm(u, axis=2) == 0.0) | (np.linalg.norm(v, axis=2) == 0.0)
    if np.any(degenerate):
        logger.warning(
            "angle features: %d zero-length bone vector(s); angle set to 0",
            int(np.sum(degenerate)),
        )
    return np.arctan2(cross, dot)


def _angle_block(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return np.concatenate([_hand_angles(left), _hand_angles(right)], axis=1)


def _finger_rows(hand: np.ndarray) -> np.ndarray:
    """(T, 21, 3) -> (T, 4, 15) finger-row matrix: columns 3(f-1)+1..3f carry
    the coordinates of finger f."""
    t = hand.shape[0]
    return hand[:, _FINGER_ROW_IDX, :].reshape(t, 4, 15)


def _svd_block(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    m1_left = _finger_rows(left)
    m1_right = _finger_rows(right)
    groups = [
        singular_values_stack(m1_left),                                # 4
        singular_values_stack(left),                                   # 3
        singular_values_stack(m1_right),                               # 4
        singular_values_stack(right),                                  # 3
        singular_values_stack(np.concatenate([left, right], axis=2)),  # 6
        singular_values_stack(np.concatenate([left, right], axis=1)),  # 3
        singular_values_stack(np.concatenate([m1_left, m1_right], axis=1)),  # 8
        singular_values_stack(np.concatenate([m1_left, m1_right], axis=2)),  # 4
    ]
    return np.concatenate(groups, axis=1)


def frame_feature_matrix(
    left: np.ndarray, right: np.ndarray, config: FeatureConfig
) -> np.ndarray:
    """Per-frame skeleton features over stacked hands: (T, 21, 3) x2 ->
    (T, frame_dim) with enabled families in [distances, angles, svd] order."""
    if config.normalize:
        left, right = normalize_hands(left, right)
    blocks = []
    if config.use_distances:
        blocks.append(_distance_block(left, right))
    if config.use_angles:
        blocks.append(_angle_block(left, right))
    if config.use_svd:
        blocks.append(_svd_block(left, right))
    if not blocks:
        raise ValidationError("frame features: no skeleton family enabled")
    return np.concatenate(blocks, axis=1)


def _hand_pair_stacks(left: HandFrame, right: HandFrame) -> tuple[np.ndarray, np.ndarray]:
    return left.joints[None, :, :], right.joints[None, :, :]


def distance_features(left: HandFrame, right: HandFrame) -> FeatureVector:
    """61 joint-distance features: 20 per hand plus 21 peer-to-peer norms."""
    l, r = _hand_pair_stacks(left, right)
    return FeatureVector(_distance_block(l, r)[0], SKEL_DIST)


def angle_features(left: HandFrame, right: HandFrame) -> FeatureVector:
    """20 finger-bend angles in [0, pi], computed with atan2 of the cross and
    dot products at the middle joint of each triple."""
    l, r = _hand_pair_stacks(left, right)
    return FeatureVector(_angle_block(l, r)[0], SKEL_ANG)


def svd_features(left: HandFrame, right: HandFrame) -> FeatureVector:
    """35 singular values over per-hand and combined keypoint matrices."""
    l, r = _hand_pair_stacks(left, right)
    return FeatureVector(_svd_block(l, r)[0], SKEL_SVD)


def frame_features(frame: FrameSkeleton, config: FeatureConfig) -> FeatureVector:
    """Skeleton features of one frame (116 with all families enabled)."""
    left, right = duplicate_single_hand(frame)
    l, r = _hand_pair_stacks(left, right)
    return FeatureVector(frame_feature_matrix(l, r, config)[0], config.frame_layout())


def _aggregate_rows(rows: np.ndarray, aggregation: str) -> np.ndarray:
    if aggregation == "mean":
        return np.mean(rows, axis=0)
    if aggregation == "max":
        return np.max(rows, axis=0)
    raise ValidationError(f"unknown aggregation {aggregation!r}")


def aggregate_video(
    frames: Sequence[FeatureVector], config: FeatureConfig
) -> FeatureVector:
    """Elementwise mean (default) or max of per-frame feature vectors."""
    if not frames:
        raise ValidationError("aggregate_video: empty frame sequence")
    first = frames[0]
    for fv in frames[1:]:
        if len(fv) != len(first):
            raise ValidationError(
                f"aggregate_video: ragged lengths {len(first)} vs {len(fv)}"
            )
    rows = np.stack([fv.values for fv in frames])
    return FeatureVector(_aggregate_rows(rows, config.aggregation), first.layout)


def extract_sample(sample: SignSample, config: FeatureConfig) -> FeatureVector:
    """Aggregated (un-tiled) skeleton features of one sample."""
    left, right = hand_stacks(sample.frames)
    rows = frame_feature_matrix(left, right, config)
    return FeatureVector(
        _aggregate_rows(rows, config.aggregation), config.frame_layout()
    )


@dataclass(frozen=True)
class FamilyFeatures:
    """Aggregated per-family feature matrices for a sample batch (rows align
    with the sample order); disabled families are None."""

    distances: Optional[np.ndarray]
    angles: Optional[np.ndarray]
    svd: Optional[np.ndarray]

    @property
    def count(self) -> int:
        for mat in (self.distances, self.angles, self.svd):
            if mat is not None:
                return mat.shape[0]
        return 0


def extract_families(
    samples: Sequence[SignSample], config: FeatureConfig
) -> FamilyFeatures:
    """Aggregated distance/angle/svd features for every sample.

    All frames are batched through the per-frame kernels at once; aggregation
    is then applied per sample, so results are identical to calling
    extract_sample per sample.
    """
    if config.frame_dim == 0:
        return FamilyFeatures(None, None, None)
    lefts = []
    rights = []
    counts = []
    for sample in samples:
        l, r = hand_stacks(sample.frames)
        lefts.append(l)
        rights.append(r)
        counts.append(l.shape[0])
    if not counts:
        raise ValidationError("extract_families: no samples")
    left = np.concatenate(lefts)
    right = np.concatenate(rights)
    rows = frame_feature_matrix(left, right, config)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    agg = np.stack(
        [
            _aggregate_rows(rows[offsets[i] : offsets[i + 1]], config.aggregation)
            for i in range(len(counts))
        ]
    )
    col = 0
    distances = angles = svd = None
    if config.use_distances:
        distances = agg[:, col : col + SKEL_DIST.dim]
        col += SKEL_DIST.dim
    if config.use_angles:
        angles = agg[:, col : col + SKEL_ANG.dim]
        col += SKEL_ANG.dim
    if config.use_svd:
        svd = agg[:, col : col + SKEL_SVD.dim]
    return FamilyFeatures(distances, angles, svd)


def _check_family(vec, layout, enabled: bool, what: str) -> Optional[np.ndarray]:
    if not enabled:
        if vec is not None:
            raise ValidationError(f"repeat_fuse: {what} given but disabled in config")
        return None
    if vec is None:
        raise ValidationError(f"repeat_fuse: {what} enabled but missing")
    arr = np.asarray(vec, dtype=np.float64)
    if arr.shape != (layout.dim,):
        raise ValidationError(
            f"repeat_fuse: {what} must have length {layout.dim}, got {arr.shape}"
        )
    return arr


def repeat_fuse(
    config: FeatureConfig,
    distances=None,
    angles=None,
    svd=None,
    deep=None,
) -> FeatureVector:
    """Tile the skeleton families by their repetition weights (distances x4,
    angles x3, svd x6 by default), concatenate in that order, and append the
    deep latent when enabled. Full configuration: 61*4 + 20*3 + 35*6 + 510 =
    1024."""
    d = _check_family(distances, SKEL_DIST, config.use_distances, "distances")
    a = _check_family(angles, SKEL_ANG, config.use_angles, "angles")
    s = _check_family(svd, SKEL_SVD, config.use_svd, "svd")
    blocks = []
    if d is not None:
        blocks.append(np.tile(d, config.repeat_dist))
    if a is not None:
        blocks.append(np.tile(a, config.repeat_ang))
    if s is not None:
        blocks.append(np.tile(s, config.repeat_svd))
    if config.use_deep:
        if deep is None:
            raise ValidationError("repeat_fuse: deep latent enabled but missing")
        deep_arr = np.asarray(deep, dtype=np.float64)
        if deep_arr.ndim != 1:
            raise ValidationError("repeat_fuse: deep latent must be 1-D")
        blocks.append(deep_arr)
    elif deep is not None:
        raise ValidationError("repeat_fuse: deep latent given but disabled in config")
    fused = np.concatenate(blocks)
    if config.use_deep and fused.shape[0] == FUSED.dim:
        return FeatureVector(fused, FUSED)
    return FeatureVector(fused, custom_layout(fused.shape[0]))
