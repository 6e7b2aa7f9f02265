"""Core domain types: hand keypoint frames, labeled samples, class embeddings,
class splits, and typed feature vectors.

Joint indexing is 1-based everywhere a joint number appears in configs, file
formats, or docs: joint 1 is the wrist/palm root and finger f (1..5) owns
joints 4f-2 .. 4f+1, base to tip. Internal arrays are 0-based numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

JOINTS_PER_HAND = 21


class ValidationError(ValueError):
    """Input violates a documented invariant (malformed data, bad shapes)."""


class NumericError(ArithmeticError):
    """Internal numeric failure (non-convergence, non-finite values)."""


class Point3(NamedTuple):
    """One 3D keypoint in the source camera's units (unit-agnostic)."""

    x: float
    y: float
    z: float


def _as_finite_array(values, shape, what: str) -> np.ndarray:
    # Copy so freezing never mutates the caller's array flags.
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.shape != shape:
        raise ValidationError(f"{what}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what}: non-finite coordinates")
    return arr


@dataclass(frozen=True)
class HandFrame:
    """All 21 keypoints of one hand in one frame, as a (21, 3) array.

    Row j-1 holds joint j of the 1-based convention.
    """

    joints: np.ndarray

    def __post_init__(self):
        arr = _as_finite_array(self.joints, (JOINTS_PER_HAND, 3), "hand frame")
        arr.setflags(write=False)
        object.__setattr__(self, "joints", arr)

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]]) -> "HandFrame":
        pts = list(points)
        if len(pts) != JOINTS_PER_HAND:
            raise ValidationError(
                f"hand frame: joint count != {JOINTS_PER_HAND} (got {len(pts)})"
            )
        return cls(np.asarray(pts, dtype=np.float64))

    def joint(self, index: int) -> Point3:
        """Joint by 1-based index."""
        if not 1 <= index <= JOINTS_PER_HAND:
            raise ValidationError(f"joint index out of range: {index}")
        return Point3(*self.joints[index - 1])


@dataclass(frozen=True)
class FrameSkeleton:
    """Per-frame keypoints of up to two hands; at least one must be present."""

    left: Optional[HandFrame] = None
    right: Optional[HandFrame] = None

    def __post_init__(self):
        if self.left is None and self.right is None:
            raise ValidationError("frame skeleton: no hand present")


@dataclass(frozen=True)
class SignSample:
    """One labeled sign recording: keypoint frames plus optional precomputed
    deep snippet features (one vector per 16-frame snippet)."""

    id: str
    label: str
    frames: tuple[FrameSkeleton, ...]
    deep_snippets: Optional[np.ndarray] = None

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValidationError(f"sample {self.id!r}: no frames")
        object.__setattr__(self, "frames", frames)
        if self.deep_snippets is not None:
            snip = np.array(self.deep_snippets, dtype=np.float64, copy=True)
            if snip.ndim != 2:
                raise ValidationError(
                    f"sample {self.id!r}: deep snippets must be a 2-D array"
                )
            snip.setflags(write=False)
            object.__setattr__(self, "deep_snippets", snip)

    @property
    def num_frames(self) -> int:
        return len(self.frames)


def expected_snippet_count(num_frames: int, snippet_len: int = 16) -> int:
    """Snippet count for a video: floor(frames / snippet_len), with short
    videos counting as one snippet (they get padded up to one snippet)."""
    if num_frames < snippet_len:
        return 1
    return num_frames // snippet_len


def validate_sample(sample: SignSample, snippet_dim: int | None = None) -> list[str]:
    """Report-style validation; returns a list of violations (empty = valid).

    `snippet_dim` optionally pins the expected deep snippet dimension.
    """
    violations: list[str] = []
    if not sample.frames:
        violations.append(f"sample {sample.id!r}: no frames")
    for i, frame in enumerate(sample.frames):
        if frame.left is None and frame.right is None:
            violations.append(f"sample {sample.id!r} frame {i}: no hand present")
        for side, hand in (("left", frame.left), ("right", frame.right)):
            if hand is None:
                continue
            if hand.joints.shape != (JOINTS_PER_HAND, 3):
                violations.append(
                    f"sample {sample.id!r} frame {i} {side}: joint count != 21"
                )
            elif not np.all(np.isfinite(hand.joints)):
                violations.append(
                    f"sample {sample.id!r} frame {i} {side}: non-finite joints"
                )
    if sample.deep_snippets is not None:
        snip = sample.deep_snippets
        if not np.all(np.isfinite(snip)):
            violations.append(f"sample {sample.id!r}: non-finite deep snippets")
        expected = expected_snippet_count(sample.num_frames)
        if snip.shape[0] != expected:
            violations.append(
                f"sample {sample.id!r}: snippet count {snip.shape[0]} != "
                f"expected {expected} for {sample.num_frames} frames"
            )
        if snippet_dim is not None and snip.shape[1] != snippet_dim:
            violations.append(
                f"sample {sample.id!r}: snippet dim {snip.shape[1]} != {snippet_dim}"
            )
    return violations


@dataclass(frozen=True)
class ClassEmbedding:
    """A class label's lingual embedding vector."""

    label: str
    vector: np.ndarray

    def __post_init__(self):
        vec = np.array(self.vector, dtype=np.float64, copy=True)
        if vec.ndim != 1:
            raise ValidationError(f"embedding {self.label!r}: vector must be 1-D")
        if not np.all(np.isfinite(vec)):
            raise ValidationError(f"embedding {self.label!r}: non-finite values")
        if float(np.linalg.norm(vec)) == 0.0:
            raise ValidationError(f"embedding {self.label!r}: zero-norm embedding")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


class EmbeddingSet:
    """Class embeddings keyed by label, preserving source (file) order.

    The source order defines the class index used for tie-breaking.
    """

    def __init__(self, embeddings: Iterable[ClassEmbedding]):
        items = list(embeddings)
        if not items:
            raise ValidationError("embedding set: empty")
        dims = {e.dim for e in items}
        if len(dims) != 1:
            raise ValidationError(f"embedding set: mixed dimensions {sorted(dims)}")
        labels = [e.label for e in items]
        if len(set(labels)) != len(labels):
            dup = sorted({l for l in labels if labels.count(l) > 1})
            raise ValidationError(f"embedding set: duplicate labels {dup}")
        self.labels: tuple[str, ...] = tuple(labels)
        self.matrix: np.ndarray = np.stack([e.vector for e in items])
        self.matrix.setflags(write=False)
        self._index = {label: i for i, label in enumerate(labels)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def vector(self, label: str) -> np.ndarray:
        try:
            return self.matrix[self._index[label]]
        except KeyError:
            raise ValidationError(f"no embedding for label {label!r}") from None

    def subset(self, labels: Iterable[str]) -> "EmbeddingSet":
        """Restrict to `labels`, keeping this set's order."""
        wanted = set(labels)
        missing = wanted - set(self.labels)
        if missing:
            raise ValidationError(f"no embedding for labels {sorted(missing)}")
        return EmbeddingSet(
            ClassEmbedding(label, self.matrix[i])
            for i, label in enumerate(self.labels)
            if label in wanted
        )


PROTOCOLS = ("p1", "p2")


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint seen/unseen class label sets for one evaluation run."""

    seen: frozenset[str]
    unseen: frozenset[str]
    seed: int
    protocol: str

    def __post_init__(self):
        object.__setattr__(self, "seen", frozenset(self.seen))
        object.__setattr__(self, "unseen", frozenset(self.unseen))
        if not self.seen or not self.unseen:
            raise ValidationError("split: seen and unseen must both be nonempty")
        overlap = self.seen & self.unseen
        if overlap:
            raise ValidationError(f"split: seen/unseen overlap {sorted(overlap)}")
        if self.protocol not in PROTOCOLS:
            raise ValidationError(f"split: unknown protocol {self.protocol!r}")


@dataclass(frozen=True)
class FeatureLayout:
    """Named feature-vector layout with a fixed dimension."""

    name: str
    dim: int


SKEL_DIST = FeatureLayout("skel_dist", 61)
SKEL_ANG = FeatureLayout("skel_ang", 20)
SKEL_SVD = FeatureLayout("skel_svd", 35)
SKEL_ALL = FeatureLayout("skel_all", 116)
DEEP_LATENT = FeatureLayout("deep_latent", 510)
FUSED = FeatureLayout("fused", 1024)


def custom_layout(dim: int) -> FeatureLayout:
    return FeatureLayout("custom", dim)


_NAMED_LAYOUTS = {
    layout.name: layout
    for layout in (SKEL_DIST, SKEL_ANG, SKEL_SVD, SKEL_ALL, DEEP_LATENT, FUSED)
}


def layout_by_name(name: str, dim: int) -> FeatureLayout:
    if name == "custom":
        return custom_layout(dim)
    layout = _NAMED_LAYOUTS.get(name)
    if layout is None:
        raise ValidationError(f"unknown feature layout {name!r}")
    if layout.dim != dim:
        raise ValidationError(f"layout {name!r} is {layout.dim}-dim, got {dim}")
    return layout


@dataclass(frozen=True)
class FeatureVector:
    """A numeric feature vector tagged with its layout."""

    values: np.ndarray
    layout: FeatureLayout

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 1:
            raise ValidationError("feature vector: values must be 1-D")
        if vals.shape[0] != self.layout.dim:
            raise ValidationError(
                f"feature vector: length {vals.shape[0]} != layout "
                f"{self.layout.name}({self.layout.dim})"
            )
        if not np.all(np.isfinite(vals)):
            raise ValidationError("feature vector: non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]
