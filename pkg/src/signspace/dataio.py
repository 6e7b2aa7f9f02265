"""File formats and dataset plumbing.

Keypoints (JSON, UTF-8):
  {"version": 1,
   "samples": [{"id": str, "label": str,
                "frames": [{"left": [[x,y,z] x21] | null,
                            "right": [[x,y,z] x21] | null}, ...]}]}

Embeddings (TSV, UTF-8): one row per class, label followed by its embedding
components; all rows share one dimension, duplicate labels and zero vectors
are rejected.

Deep snippet features (binary, little-endian):
  magic b"ZSDF", version u16, dim u32, count u32, then count x dim float32.

Manifest (JSON): name, per-sample keypoint file references plus labels, the
embedding file, and an optional deep-feature directory holding one
"<sample id>.zsdf" per sample.

The synthetic generator builds a dataset whose class signal is linearly
recoverable from the skeleton features: class embeddings are unit vectors
confined to a low-rank subspace (so a seen-class regressor extends to unseen
classes), and every joint coordinate is a fixed seeded linear map of the
class embedding around a neutral two-hand pose, plus per-frame Gaussian
noise. Deep snippets follow the same recipe in snippet space.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .types import (
    ClassEmbedding,
    EmbeddingSet,
    FrameSkeleton,
    HandFrame,
    JOINTS_PER_HAND,
    NumericError,
    SignSample,
    ValidationError,
    validate_sample,
)

KEYPOINT_FORMAT_VERSION = 1
MANIFEST_FORMAT_VERSION = 1
DEEP_MAGIC = b"ZSDF"
DEEP_FORMAT_VERSION = 1
SNIPPET_LEN = 16

SHORT_VIDEO_POLICIES = ("strict", "lenient")


# ---------------------------------------------------------------------------
# keypoints


def _hand_to_json(hand: Optional[HandFrame]):
    return None if hand is None else [[float(v) for v in row] for row in hand.joints]


def save_keypoints(path, samples: Sequence[SignSample]) -> None:
    doc = {
        "version": KEYPOINT_FORMAT_VERSION,
        "samples": [
            {
                "id": s.id,
                "label": s.label,
                "frames": [
                    {"left": _hand_to_json(f.left), "right": _hand_to_json(f.right)}
                    for f in s.frames
                ],
            }
            for s in samples
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def _parse_hand(raw, where: str) -> Optional[HandFrame]:
    if raw is None:
        return None
    if not isinstance(raw, list) or len(raw) != JOINTS_PER_HAND:
        count = len(raw) if isinstance(raw, list) else "non-list"
        raise ValidationError(f"{where}: joint count != {JOINTS_PER_HAND} (got {count})")
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape != (JOINTS_PER_HAND, 3):
        raise ValidationError(f"{where}: expected 21 [x, y, z] triples")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{where}: non-finite coordinates")
    return HandFrame(arr)


def load_keypoints(
    path,
    deep_declared: bool = False,
    short_video_policy: str = "strict",
    snippet_len: int = SNIPPET_LEN,
) -> list[SignSample]:
    """Load and validate a keypoint file.

    When the dataset declares a deep channel, videos shorter than one snippet
    are rejected ("strict", default) or padded by repeating the final frame
    ("lenient")."""
    if short_video_policy not in SHORT_VIDEO_POLICIES:
        raise ValidationError(f"unknown short-video policy {short_video_policy!r}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"keypoints {path}: malformed JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("version") != KEYPOINT_FORMAT_VERSION:
        raise ValidationError(f"keypoints {path}: missing/unsupported version")
    samples = []
    for si, raw in enumerate(doc.get("samples", [])):
        sid = raw.get("id")
        label = raw.get("label")
        if not sid or not label:
            raise ValidationError(f"keypoints {path}: sample #{si} lacks id/label")
        frames = []
        for fi, fr in enumerate(raw.get("frames", [])):
            where = f"sample {sid!r} frame {fi}"
            left = _parse_hand(fr.get("left"), where + " left")
            right = _parse_hand(fr.get("right"), where + " right")
            if left is None and right is None:
                raise ValidationError(f"{where}: no hand present")
            frames.append(FrameSkeleton(left=left, right=right))
        if not frames:
            raise ValidationError(f"keypoints {path}: sample {sid!r} has no frames")
        if deep_declared and len(frames) < snippet_len:
            if short_video_policy == "strict":
                raise ValidationError(
                    f"sample {sid!r}: {len(frames)} frames < snippet length "
                    f"{snippet_len} (strict mode)"
                )
            frames.extend([frames[-1]] * (snippet_len - len(frames)))
        samples.append(SignSample(id=sid, label=label, frames=tuple(frames)))
    return samples


# ---------------------------------------------------------------------------
# embeddings


def save_embeddings(path, embeddings: EmbeddingSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label, row in zip(embeddings.labels, embeddings.matrix):
            fh.write(label + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")


def load_embeddings(path) -> EmbeddingSet:
    entries = []
    dim = None
    seen_labels = set()
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ValidationError(f"embeddings {path}:{ln}: no vector components")
            label = parts[0]
            if label in seen_labels:
                raise ValidationError(f"embeddings {path}:{ln}: duplicate label {label!r}")
            seen_labels.add(label)
            try:
                vec = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ValidationError(f"embeddings {path}:{ln}: bad float ({exc})") from exc
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValidationError(
                    f"embeddings {path}:{ln}: ragged row ({vec.shape[0]} != {dim})"
                )
            if not np.all(np.isfinite(vec)):
                raise ValidationError(f"embeddings {path}:{ln}: non-finite values")
            if float(np.linalg.norm(vec)) == 0.0:
                raise ValidationError(
                    f"embeddings {path}:{ln}: zero-norm embedding {label!r}"
                )
            entries.append(ClassEmbedding(label, vec))
    if not entries:
        raise ValidationError(f"embeddings {path}: empty file")
    return EmbeddingSet(entries)


# ---------------------------------------------------------------------------
# deep snippet features


def save_deep_features(path, vectors) -> None:
    arr = np.ascontiguousarray(vectors, dtype="<f4")
    if arr.ndim != 2:
        raise ValidationError("deep features: expected (count, dim) array")
    with open(path, "wb") as fh:
        fh.write(DEEP_MAGIC)
        fh.write(struct.pack("<H", DEEP_FORMAT_VERSION))
        fh.write(struct.pack("<I", arr.shape[1]))
        fh.write(struct.pack("<I", arr.shape[0]))
        fh.write(arr.tobytes())


def load_deep_features(directory, sample_id: str) -> np.ndarray:
    """Load a sample's snippet vectors from "<directory>/<sample_id>.zsdf"."""
    return read_deep_feature_file(Path(directory) / f"{sample_id}.zsdf")


def read_deep_feature_file(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 14:
        raise ValidationError(f"deep features {path}: truncated header at byte {len(raw)}")
    if raw[:4] != DEEP_MAGIC:
        raise ValidationError(f"deep features {path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != DEEP_FORMAT_VERSION:
        raise ValidationError(f"deep features {path}: unsupported version {version}")
    (dim,) = struct.unpack_from("<I", raw, 6)
    (count,) = struct.unpack_from("<I", raw, 10)
    if count == 0:
        raise ValidationError(f"deep features {path}: no snippets")
    if dim == 0:
        raise ValidationError(f"deep features {path}: zero dimension")
    expected = 14 + count * dim * 4
    if len(raw) != expected:
        raise ValidationError(
            f"deep features {path}: payload ends at byte {len(raw)}, expected {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=14)
    return data.reshape(count, dim).astype(np.float64)


# ---------------------------------------------------------------------------
# manifest


class ManifestEntry(NamedTuple):
    file: str
    id: str
    label: str


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    samples: tuple[ManifestEntry, ...]
    embeddings_file: str
    deep_dir: Optional[str] = None
    version: int = MANIFEST_FORMAT_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "name": self.name,
            "embeddings": self.embeddings_file,
            "deep_dir": self.deep_dir,
            "samples": [
                {"file": e.file, "id": e.id, "label": e.label} for e in self.samples
            ],
        }


def save_manifest(path, manifest: DatasetManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, sort_keys=True, separators=(",", ":"))


def load_manifest(path) -> DatasetManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {path}: malformed JSON ({exc})") from exc
    if doc.get("version") != MANIFEST_FORMAT_VERSION:
        raise ValidationError(f"manifest {path}: missing/unsupported version")
    entries = tuple(
        ManifestEntry(file=e["file"], id=e["id"], label=e["label"])
        for e in doc.get("samples", [])
    )
    if not entries:
        raise ValidationError(f"manifest {path}: no samples")
    return DatasetManifest(
        name=doc.get("name", "unnamed"),
        samples=entries,
        embeddings_file=doc["embeddings"],
        deep_dir=doc.get("deep_dir"),
    )


def load_dataset(
    manifest_path, short_video_policy: str = "strict"
) -> tuple[list[SignSample], EmbeddingSet, DatasetManifest]:
    """Resolve a manifest: load embeddings, keypoints, and (when declared)
    per-sample deep features; returns samples in manifest order."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent
    embeddings_path = base / manifest.embeddings_file
    if not embeddings_path.is_file():
        raise ValidationError(f"manifest: missing embedding file {embeddings_path}")
    embeddings = load_embeddings(embeddings_path)
    deep_declared = manifest.deep_dir is not None
    deep_base = base / manifest.deep_dir if deep_declared else None
    if deep_declared and not deep_base.is_dir():
        raise ValidationError(f"manifest: missing deep-feature directory {deep_base}")

    by_file: dict[str, dict[str, SignSample]] = {}
    for entry in manifest.samples:
        if entry.file not in by_file:
            file_path = base / entry.file
            if not file_path.is_file():
                raise ValidationError(f"manifest: missing keypoint file {file_path}")
            loaded = load_keypoints(
                file_path,
                deep_declared=deep_declared,
                short_video_policy=short_video_policy,
            )
            by_file[entry.file] = {s.id: s for s in loaded}
        index = by_file[entry.file]
        if entry.id not in index:
            raise ValidationError(
                f"manifest: sample {entry.id!r} not found in {entry.file}"
            )
        if index[entry.id].label != entry.label:
            raise ValidationError(
                f"manifest: sample {entry.id!r} label mismatch "
                f"({entry.label!r} vs {index[entry.id].label!r})"
            )
        if entry.label not in embeddings:
            raise ValidationError(
                f"manifest: label {entry.label!r} missing from the embedding file"
            )

    samples = []
    for entry in manifest.samples:
        sample = by_file[entry.file][entry.id]
        if deep_declared:
            snippets = load_deep_features(deep_base, entry.id)
            sample = replace(sample, deep_snippets=snippets)
        violations = validate_sample(sample)
        if violations:
            raise ValidationError("; ".join(violations))
        samples.append(sample)
    return samples, embeddings, manifest


# ---------------------------------------------------------------------------
# synthetic dataset


@dataclass(frozen=True)
class SynthSpec:
    """Desk-scale synthetic dataset with linearly recoverable class signal.

    `embed_rank` bounds the subspace the class embeddings span; it must stay
    at or below the smallest seen-class count the dataset will be split into,
    or held-out classes stop being linearly predictable from seen ones.
    """

    num_classes: int = 20
    samples_per_class: int = 50
    embed_dim: int = 32
    noise: float = 0.05
    frames: int = 24
    seed: int = 0
    embed_rank: int = 6
    deep_dim: int = 64

    def __post_init__(self):
        if min(self.num_classes, self.samples_per_class, self.embed_dim, self.frames) < 1:
            raise ValidationError("synth spec: counts and dims must be positive")
        if self.num_classes < 2:
            raise ValidationError("synth spec: need at least 2 classes")
        if self.noise < 0.0:
            raise ValidationError("synth spec: noise must be >= 0")
        if not 1 <= self.embed_rank <= self.embed_dim:
            raise ValidationError("synth spec: embed_rank must be in [1, embed_dim]")
        if self.deep_dim < self.embed_dim:
            raise ValidationError("synth spec: deep_dim must be >= embed_dim")
        if self.embed_dim > 2 * JOINTS_PER_HAND * 3:
            raise ValidationError("synth spec: embed_dim exceeds joint coordinate count")


# RMS joint displacement per coordinate at unit embedding distance; large
# enough to dominate the default noise, small enough that features stay
# near-linear in the embedding around the base pose.
_SYNTH_JOINT_AMPLITUDE = 0.15
_SYNTH_DEEP_AMPLITUDE = 1.0
_MAX_REJECTION_TRIES = 100_000
_REPULSION_ITERS = 400
_REPULSION_LR = 0.05


def _base_hand() -> np.ndarray:
    """Neutral splayed hand: wrist at the origin, fingers fanning in +y."""
    joints = np.zeros((JOINTS_PER_HAND, 3))
    for f in range(5):
        angle = (f - 2) * 0.28
        direction = np.array([np.sin(angle), np.cos(angle), 0.08 * (f - 2)])
        direction /= np.linalg.norm(direction)
        for k in range(4):
            joints[1 + 4 * f + k] = (0.35 + 0.22 * k) * direction
    return joints


def _synth_embeddings(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm class embeddings inside a seeded `embed_rank`-dim subspace
    with pairwise |cos| < 0.5, enforced by rejection.

    Raw unit draws rarely satisfy the bound for realistic class counts, so
    each draw is first spread by a short deterministic repulsion descent (a
    few hundred steps against the sum of fourth-power cosines); draws that
    still violate the bound are rejected and retried."""
    basis, _ = np.linalg.qr(rng.normal(size=(spec.embed_dim, spec.embed_rank)))
    draws = max(1, _MAX_REJECTION_TRIES // max(1, _REPULSION_ITERS))
    for _ in range(draws):
        v = rng.normal(size=(spec.num_classes, spec.embed_rank))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            continue
        v /= norms
        for _ in range(_REPULSION_ITERS):
            gram = v @ v.T
            np.fill_diagonal(gram, 0.0)
            v -= _REPULSION_LR * 4.0 * (gram**3) @ v
            v /= np.linalg.norm(v, axis=1, keepdims=True)
        gram = v @ v.T
        np.fill_diagonal(gram, 0.0)
        if float(np.max(np.abs(gram))) < 0.5:
            return v @ basis.T
    raise NumericError(
        "synth: embedding rejection sampling failed "
        f"({spec.num_classes} classes in rank {spec.embed_rank})"
    )


def synth_dataset(
    spec: SynthSpec,
) -> tuple[list[SignSample], EmbeddingSet, DatasetManifest]:
    """Generate (samples, embeddings, manifest); a pure function of the spec.

    Deep snippet values are rounded to float32 so in-memory data matches a
    save/load round trip through the binary format exactly.
    """
    embed_rng = make_stream(spec.seed, 100)
    class_vectors = _synth_embeddings(spec, embed_rng)
    # Orthonormal-column maps give every embedding direction the same gain,
    # so no class direction is weakly observable in the features.
    n_coords = 2 * JOINTS_PER_HAND * 3
    joint_q, _ = np.linalg.qr(
        make_stream(spec.seed, 101).normal(size=(n_coords, spec.embed_dim))
    )
    joint_map = _SYNTH_JOINT_AMPLITUDE * np.sqrt(n_coords) * joint_q
    deep_q, _ = np.linalg.qr(
        make_stream(spec.seed, 102).normal(size=(spec.deep_dim, spec.embed_dim))
    )
    deep_map = _SYNTH_DEEP_AMPLITUDE * np.sqrt(spec.deep_dim) * deep_q

    base = _base_hand()
    base_left = base + np.array([-0.55, 0.0, 0.0])
    base_right = base * np.array([-1.0, 1.0, 1.0]) + np.array([0.55, 0.0, 0.0])
    snippet_count = max(1, spec.frames // SNIPPET_LEN)

    labels = [f"sign{c:03d}" for c in range(spec.num_classes)]
    embeddings = EmbeddingSet(
        ClassEmbedding(label, vec) for label, vec in zip(labels, class_vectors)
    )

    samples = []
    entries = []
    for c, label in enumerate(labels):
        disp = (joint_map @ class_vectors[c]).reshape(2, JOINTS_PER_HAND, 3)
        deep_mean = deep_map @ class_vectors[c]
        for k in range(spec.samples_per_class):
            rng = make_stream(spec.seed, 200, c, k)
            # One pose offset per sample plus independent per-frame jitter;
            # the offset survives temporal averaging, so classes keep a
            # sigma-scaled intra-class spread in the aggregated features.
            offset = spec.noise * rng.normal(size=(2, JOINTS_PER_HAND, 3))
            noise = spec.noise * rng.normal(
                size=(spec.frames, 2, JOINTS_PER_HAND, 3)
            )
            frames = []
            for t in range(spec.frames):
                frames.append(
                    FrameSkeleton(
                        left=HandFrame(base_left + disp[0] + offset[0] + noise[t, 0]),
                        right=HandFrame(base_right + disp[1] + offset[1] + noise[t, 1]),
                    )
                )
            snippets = deep_mean + spec.noise * rng.normal(
                size=(snippet_count, spec.deep_dim)
            )
            snippets = snippets.astype(np.float32).astype(np.float64)
            sid = f"{label}_{k:03d}"
            samples.append(
                SignSample(
                    id=sid, label=label, frames=tuple(frames), deep_snippets=snippets
                )
            )
            entries.append(ManifestEntry(file="keypoints.json", id=sid, label=label))
    manifest = DatasetManifest(
        name=f"synth-{spec.seed}",
        samples=tuple(entries),
        embeddings_file="embeddings.tsv",
        deep_dir="deep",
    )
    return samples, embeddings, manifest


def make_stream(*key: int) -> np.random.Generator:
    """Deterministic generator from an integer key path."""
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def save_dataset(
    outdir,
    samples: Sequence[SignSample],
    embeddings: EmbeddingSet,
    manifest: DatasetManifest,
) -> Path:
    """Write keypoints, embeddings, deep features, and the manifest under
    `outdir`; returns the manifest path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_keypoints(outdir / "keypoints.json", samples)
    save_embeddings(outdir / manifest.embeddings_file, embeddings)
    if manifest.deep_dir is not None:
        deep_dir = outdir / manifest.deep_dir
        deep_dir.mkdir(exist_ok=True)
        for sample in samples:
            if sample.deep_snippets is None:
                raise ValidationError(
                    f"save_dataset: sample {sample.id!r} lacks deep snippets"
                )
            save_deep_features(deep_dir / f"{sample.id}.zsdf", sample.deep_snippets)
    manifest_path = outdir / "manifest.json"
    save_manifest(manifest_path, manifest)
    return manifest_path
