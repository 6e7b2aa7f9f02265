import numpy as np
import pytest

from signspace.types import (
    ClassEmbedding,
    EmbeddingSet,
    FeatureVector,
    FrameSkeleton,
    HandFrame,
    SKEL_DIST,
    SignSample,
    SplitSpec,
    ValidationError,
    custom_layout,
    expected_snippet_count,
    validate_sample,
)


def _hand(seed=0):
    return HandFrame(np.random.default_rng(seed).normal(size=(21, 3)))


def test_hand_frame_requires_21_joints():
    with pytest.raises(ValidationError, match="shape"):
        HandFrame(np.zeros((20, 3)))
    with pytest.raises(ValidationError, match="joint count"):
        HandFrame.from_points([[0.0, 0.0, 0.0]] * 20)


def test_hand_frame_rejects_non_finite():
    joints = np.zeros((21, 3))
    joints[3, 1] = np.nan
    with pytest.raises(ValidationError, match="non-finite"):
        HandFrame(joints)


def test_hand_frame_one_based_accessor():
    joints = np.zeros((21, 3))
    joints[0] = [1.0, 2.0, 3.0]
    hand = HandFrame(joints)
    assert hand.joint(1) == (1.0, 2.0, 3.0)
    with pytest.raises(ValidationError):
        hand.joint(0)
    with pytest.raises(ValidationError):
        hand.joint(22)


def test_frame_skeleton_needs_a_hand():
    with pytest.raises(ValidationError, match="no hand"):
        FrameSkeleton()
    FrameSkeleton(left=_hand())  # one hand is fine


def test_sign_sample_needs_frames():
    with pytest.raises(ValidationError, match="no frames"):
        SignSample(id="s", label="a", frames=())


def test_validate_sample_clean():
    sample = SignSample(id="s", label="a", frames=(FrameSkeleton(left=_hand()),))
    assert validate_sample(sample) == []


def test_validate_sample_snippet_count_and_dim():
    frames = tuple(FrameSkeleton(left=_hand(i)) for i in range(32))
    sample = SignSample(
        id="s", label="a", frames=frames, deep_snippets=np.ones((3, 8))
    )
    report = validate_sample(sample, snippet_dim=16)
    assert any("snippet count" in v for v in report)
    assert any("snippet dim" in v for v in report)
    good = SignSample(id="s", label="a", frames=frames, deep_snippets=np.ones((2, 8)))
    assert validate_sample(good, snippet_dim=8) == []


def test_expected_snippet_count_pads_short_videos():
    assert expected_snippet_count(5) == 1
    assert expected_snippet_count(16) == 1
    assert expected_snippet_count(47) == 2
    assert expected_snippet_count(48) == 3


def test_class_embedding_rejects_zero_norm():
    with pytest.raises(ValidationError, match="zero-norm"):
        ClassEmbedding("a", np.zeros(4))


def test_embedding_set_rejects_duplicates_and_mixed_dims():
    a = ClassEmbedding("a", np.ones(4))
    with pytest.raises(ValidationError, match="duplicate"):
        EmbeddingSet([a, ClassEmbedding("a", np.ones(4))])
    with pytest.raises(ValidationError, match="mixed"):
        EmbeddingSet([a, ClassEmbedding("b", np.ones(5))])


def test_embedding_set_preserves_order_and_subsets():
    embs = EmbeddingSet(
        ClassEmbedding(l, v)
        for l, v in [("c", [1.0, 0.0]), ("a", [0.0, 1.0]), ("b", [1.0, 1.0])]
    )
    assert embs.labels == ("c", "a", "b")
    sub = embs.subset({"b", "c"})
    assert sub.labels == ("c", "b")
    with pytest.raises(ValidationError, match="no embedding"):
        embs.subset({"zzz"})


def test_split_spec_rejects_overlap_and_empty():
    with pytest.raises(ValidationError, match="overlap"):
        SplitSpec(seen={"a", "b"}, unseen={"b"}, seed=0, protocol="p1")
    with pytest.raises(ValidationError, match="nonempty"):
        SplitSpec(seen={"a"}, unseen=set(), seed=0, protocol="p1")
    with pytest.raises(ValidationError, match="protocol"):
        SplitSpec(seen={"a"}, unseen={"b"}, seed=0, protocol="p9")


def test_feature_vector_checks_layout():
    FeatureVector(np.zeros(61), SKEL_DIST)
    with pytest.raises(ValidationError, match="length"):
        FeatureVector(np.zeros(60), SKEL_DIST)
    with pytest.raises(ValidationError, match="non-finite"):
        FeatureVector(np.full(3, np.inf), custom_layout(3))
