import json

import numpy as np
import pytest

from signspace.dataio import (
    DatasetManifest,
    ManifestEntry,
    SynthSpec,
    load_dataset,
    load_deep_features,
    load_embeddings,
    load_keypoints,
    read_deep_feature_file,
    save_dataset,
    save_deep_features,
    save_embeddings,
    save_keypoints,
    save_manifest,
    synth_dataset,
)
from signspace.skeleton import FeatureConfig, extract_families
from signspace.types import (
    ClassEmbedding,
    EmbeddingSet,
    FrameSkeleton,
    HandFrame,
    SignSample,
    ValidationError,
)


def _sample(seed=0, frames=2, label="a", sid=None, one_hand=False):
    rng = np.random.default_rng(seed)
    fs = []
    for _ in range(frames):
        left = HandFrame(rng.normal(size=(21, 3)))
        right = None if one_hand else HandFrame(rng.normal(size=(21, 3)))
        fs.append(FrameSkeleton(left=left, right=right))
    return SignSample(id=sid or f"s{seed}", label=label, frames=tuple(fs))


# ---------------------------------------------------------------- keypoints


def test_keypoints_round_trip_bitwise(tmp_path):
    samples = [_sample(0), _sample(1, one_hand=True, label="b")]
    path = tmp_path / "kp.json"
    save_keypoints(path, samples)
    loaded = load_keypoints(path)
    assert len(loaded) == 2
    for orig, back in zip(samples, loaded):
        assert back.id == orig.id and back.label == orig.label
        for f0, f1 in zip(orig.frames, back.frames):
            for h0, h1 in ((f0.left, f1.left), (f0.right, f1.right)):
                if h0 is None:
                    assert h1 is None
                else:
                    assert np.array_equal(h0.joints, h1.joints)


def test_keypoints_minimal_right_hand_only(tmp_path):
    path = tmp_path / "kp.json"
    doc = {
        "version": 1,
        "samples": [
            {
                "id": "x",
                "label": "y",
                "frames": [{"left": None, "right": [[0.0, 0.0, 0.0]] * 21}],
            }
        ],
    }
    path.write_text(json.dumps(doc))
    (sample,) = load_keypoints(path)
    assert sample.frames[0].left is None
    assert sample.frames[0].right is not None


def test_keypoints_rejects_wrong_joint_count(tmp_path):
    path = tmp_path / "kp.json"
    doc = {
        "version": 1,
        "samples": [
            {"id": "bad1", "label": "y", "frames": [{"left": [[0, 0, 0]] * 20, "right": None}]}
        ],
    }
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match=r"bad1.*frame 0.*joint count"):
        load_keypoints(path)


def test_keypoints_rejects_nan_and_malformed(tmp_path):
    path = tmp_path / "kp.json"
    doc = {
        "version": 1,
        "samples": [
            {
                "id": "n",
                "label": "y",
                "frames": [{"left": [[float("nan"), 0, 0]] + [[0, 0, 0]] * 20, "right": None}],
            }
        ],
    }
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="non-finite"):
        load_keypoints(path)
    path.write_text("{not json")
    with pytest.raises(ValidationError, match="malformed JSON"):
        load_keypoints(path)


def test_keypoints_short_video_policies(tmp_path):
    path = tmp_path / "kp.json"
    save_keypoints(path, [_sample(0, frames=5)])
    # without a deep channel short videos pass through untouched
    assert load_keypoints(path)[0].num_frames == 5
    with pytest.raises(ValidationError, match="strict"):
        load_keypoints(path, deep_declared=True, short_video_policy="strict")
    padded = load_keypoints(path, deep_declared=True, short_video_policy="lenient")[0]
    assert padded.num_frames == 16
    last = padded.frames[4].left.joints
    for i in range(5, 16):
        assert np.array_equal(padded.frames[i].left.joints, last)


# --------------------------------------------------------------- embeddings


def test_embeddings_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    embs = EmbeddingSet(
        ClassEmbedding(f"c{i}", rng.normal(size=16)) for i in range(5)
    )
    path = tmp_path / "emb.tsv"
    save_embeddings(path, embs)
    loaded = load_embeddings(path)
    assert loaded.labels == embs.labels
    assert np.array_equal(loaded.matrix, embs.matrix)


def test_embeddings_reject_bad_rows(tmp_path):
    path = tmp_path / "emb.tsv"
    path.write_text("a\t1.0\t2.0\nb\t3.0\n")
    with pytest.raises(ValidationError, match="ragged"):
        load_embeddings(path)
    path.write_text("a\t1.0\na\t2.0\n")
    with pytest.raises(ValidationError, match="duplicate"):
        load_embeddings(path)
    path.write_text("a\t0.0\t0.0\n")
    with pytest.raises(ValidationError, match="zero-norm"):
        load_embeddings(path)
    path.write_text("")
    with pytest.raises(ValidationError, match="empty"):
        load_embeddings(path)


# ------------------------------------------------------------ deep features


def test_deep_features_round_trip(tmp_path):
    vectors = np.random.default_rng(1).normal(size=(3, 8)).astype(np.float32)
    path = tmp_path / "s.zsdf"
    save_deep_features(path, vectors)
    loaded = read_deep_feature_file(path)
    assert loaded.shape == (3, 8)
    assert np.array_equal(loaded, vectors.astype(np.float64))


def test_deep_features_header_contract(tmp_path):
    path = tmp_path / "a.zsdf"
    save_deep_features(path, np.zeros((2, 4096), dtype=np.float32))
    assert read_deep_feature_file(path).shape == (2, 4096)


def test_deep_features_errors(tmp_path):
    path = tmp_path / "bad.zsdf"
    path.write_bytes(b"XXXX" + b"\x00" * 12)
    with pytest.raises(ValidationError, match="bad magic"):
        read_deep_feature_file(path)
    good = tmp_path / "good.zsdf"
    save_deep_features(good, np.ones((2, 3), dtype=np.float32))
    raw = good.read_bytes()
    trunc = tmp_path / "trunc.zsdf"
    trunc.write_bytes(raw[:-5])
    with pytest.raises(ValidationError, match="byte"):
        read_deep_feature_file(trunc)
    empty = tmp_path / "none.zsdf"
    save_deep_features(empty, np.ones((0, 3), dtype=np.float32))
    with pytest.raises(ValidationError, match="no snippets"):
        read_deep_feature_file(empty)


def test_load_deep_features_by_sample_id(tmp_path):
    save_deep_features(tmp_path / "abc.zsdf", np.ones((1, 4), dtype=np.float32))
    assert load_deep_features(tmp_path, "abc").shape == (1, 4)


# ------------------------------------------------------------------ manifest


def _write_mini_dataset(tmp_path, with_deep=False):
    samples = [_sample(i, label=f"c{i % 2}", sid=f"s{i}", frames=16) for i in range(4)]
    rng = np.random.default_rng(9)
    embs = EmbeddingSet(ClassEmbedding(f"c{i}", rng.normal(size=6)) for i in range(2))
    entries = tuple(
        ManifestEntry(file="keypoints.json", id=s.id, label=s.label) for s in samples
    )
    manifest = DatasetManifest(
        name="mini",
        samples=entries,
        embeddings_file="embeddings.tsv",
        deep_dir="deep" if with_deep else None,
    )
    if with_deep:
        samples = [
            SignSample(
                id=s.id,
                label=s.label,
                frames=s.frames,
                deep_snippets=rng.normal(size=(1, 4)).astype(np.float32).astype(np.float64),
            )
            for s in samples
        ]
    return save_dataset(tmp_path, samples, embs, manifest), samples


def test_load_dataset_round_trip(tmp_path):
    manifest_path, originals = _write_mini_dataset(tmp_path, with_deep=True)
    samples, embeddings, manifest = load_dataset(manifest_path)
    assert [s.id for s in samples] == [s.id for s in originals]
    assert manifest.deep_dir == "deep"
    for orig, back in zip(originals, samples):
        assert np.array_equal(orig.deep_snippets, back.deep_snippets)


def test_load_dataset_missing_files(tmp_path):
    manifest_path, _ = _write_mini_dataset(tmp_path)
    (tmp_path / "embeddings.tsv").unlink()
    with pytest.raises(ValidationError, match="missing embedding file"):
        load_dataset(manifest_path)


def test_load_dataset_label_must_be_embedded(tmp_path):
    manifest_path, _ = _write_mini_dataset(tmp_path)
    emb = tmp_path / "embeddings.tsv"
    emb.write_text("c0\t1.0\t0.0\n")  # drop label c1
    with pytest.raises(ValidationError, match="missing from the embedding"):
        load_dataset(manifest_path)


def test_load_dataset_label_mismatch(tmp_path):
    manifest_path, _ = _write_mini_dataset(tmp_path)
    doc = json.loads(manifest_path.read_text())
    doc["samples"][0]["label"] = "c1" if doc["samples"][0]["label"] == "c0" else "c0"
    manifest_path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="label mismatch"):
        load_dataset(manifest_path)


def test_load_dataset_unknown_id(tmp_path):
    manifest_path, _ = _write_mini_dataset(tmp_path)
    doc = json.loads(manifest_path.read_text())
    doc["samples"][0]["id"] = "ghost"
    manifest_path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="ghost"):
        load_dataset(manifest_path)


# --------------------------------------------------------------- synthetic


def test_synth_counts_match_spec():
    spec = SynthSpec(num_classes=5, samples_per_class=3, frames=8)
    samples, embeddings, manifest = synth_dataset(spec)
    assert len(samples) == 15
    assert len(embeddings) == 5
    assert len(manifest.samples) == 15
    assert all(s.num_frames == 8 for s in samples)
    assert all(s.deep_snippets.shape == (1, spec.deep_dim) for s in samples)


def test_synth_default_counts():
    samples, embeddings, _ = synth_dataset(SynthSpec())
    assert len(samples) == 1000
    assert len(embeddings) == 20


def test_synth_embeddings_unit_norm_and_spread():
    _, embeddings, _ = synth_dataset(SynthSpec(num_classes=12, samples_per_class=1))
    m = embeddings.matrix
    norms = np.linalg.norm(m, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-12)
    gram = m @ m.T
    np.fill_diagonal(gram, 0.0)
    assert float(np.max(np.abs(gram))) < 0.5


def test_synth_is_pure_function_of_seed():
    a = synth_dataset(SynthSpec(num_classes=3, samples_per_class=2, frames=4))
    b = synth_dataset(SynthSpec(num_classes=3, samples_per_class=2, frames=4))
    for sa, sb in zip(a[0], b[0]):
        assert sa.id == sb.id
        assert np.array_equal(sa.deep_snippets, sb.deep_snippets)
        for fa, fb in zip(sa.frames, sb.frames):
            assert np.array_equal(fa.left.joints, fb.left.joints)
    assert np.array_equal(a[1].matrix, b[1].matrix)


def test_synth_sigma_zero_gives_identical_class_features():
    spec = SynthSpec(num_classes=3, samples_per_class=4, noise=0.0, frames=4)
    samples, _, _ = synth_dataset(spec)
    fam = extract_families(samples, FeatureConfig())
    X = np.concatenate([fam.distances, fam.angles, fam.svd], axis=1)
    for c in range(3):
        rows = X[4 * c : 4 * (c + 1)]
        assert np.array_equal(rows, np.tile(rows[:1], (4, 1)))
        snips = [samples[4 * c + k].deep_snippets for k in range(4)]
        for s in snips[1:]:
            assert np.array_equal(snips[0], s)


def test_synth_ridge_decoder_recovers_held_out_classes():
    # Closed-form least-squares decoder, independent of the training pipeline.
    samples, embeddings, _ = synth_dataset(SynthSpec())
    fam = extract_families(samples, FeatureConfig())
    X = np.concatenate([fam.distances, fam.angles, fam.svd], axis=1)
    labels = np.array([embeddings.labels.index(s.label) for s in samples])
    E = embeddings.matrix
    rng = np.random.default_rng(7)
    accs = []
    for _ in range(10):
        perm = rng.permutation(20)
        seen, unseen = perm[:10], perm[10:]
        tr = np.isin(labels, seen)
        te = np.isin(labels, unseen)
        mu, sd = X[tr].mean(0), X[tr].std(0) + 1e-9
        xtr = np.hstack([(X[tr] - mu) / sd, np.ones((tr.sum(), 1))])
        xte = np.hstack([(X[te] - mu) / sd, np.ones((te.sum(), 1))])
        w = np.linalg.solve(
            xtr.T @ xtr + 10.0 * np.eye(xtr.shape[1]), xtr.T @ E[labels[tr]]
        )
        z = xte @ w
        cand = E[unseen] / np.linalg.norm(E[unseen], axis=1, keepdims=True)
        sims = (z / np.linalg.norm(z, axis=1, keepdims=True)) @ cand.T
        pred = np.array(unseen)[np.argmax(sims, axis=1)]
        accs.append(float(np.mean(pred == labels[te])))
    assert float(np.mean(accs)) >= 0.95


def test_synth_dataset_save_load_round_trip(tmp_path):
    spec = SynthSpec(num_classes=3, samples_per_class=2, frames=16)
    samples, embeddings, manifest = synth_dataset(spec)
    manifest_path = save_dataset(tmp_path, samples, embeddings, manifest)
    loaded, emb, _ = load_dataset(manifest_path)
    assert emb.labels == embeddings.labels
    assert np.array_equal(emb.matrix, embeddings.matrix)
    for orig, back in zip(samples, loaded):
        assert orig.id == back.id
        assert np.array_equal(orig.deep_snippets, back.deep_snippets)
        for fa, fb in zip(orig.frames, back.frames):
            assert np.array_equal(fa.left.joints, fb.left.joints)
            assert np.array_equal(fa.right.joints, fb.right.joints)


def test_synth_spec_validation():
    with pytest.raises(ValidationError):
        SynthSpec(num_classes=1)
    with pytest.raises(ValidationError):
        SynthSpec(noise=-0.1)
    with pytest.raises(ValidationError):
        SynthSpec(embed_rank=0)
    with pytest.raises(ValidationError):
        SynthSpec(embed_dim=16, deep_dim=8)


def test_manifest_requires_samples(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"version": 1, "embeddings": "e.tsv", "samples": []}))
    with pytest.raises(ValidationError, match="no samples"):
        load_dataset(path)
