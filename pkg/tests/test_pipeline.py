import numpy as np
import pytest

from signspace.neural import make_rng
from signspace.pipeline import (
    DeepChannelConfig,
    TrainConfig,
    ZeroShotModel,
    build_visual,
    encode_deep,
    load_model,
    predict,
    save_model,
    train,
)
from signspace.skeleton import FeatureConfig
from signspace.types import (
    ClassEmbedding,
    EmbeddingSet,
    FrameSkeleton,
    HandFrame,
    NumericError,
    SignSample,
    ValidationError,
)


def _sample(seed=0, frames=2, label="a", snippets=None, sid=None):
    rng = np.random.default_rng(seed)
    fs = tuple(
        FrameSkeleton(
            left=HandFrame(rng.normal(size=(21, 3))),
            right=HandFrame(rng.normal(size=(21, 3))),
        )
        for _ in range(frames)
    )
    return SignSample(
        id=sid or f"s{seed}", label=label, frames=fs, deep_snippets=snippets
    )


def _embeddings(labels, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingSet(
        ClassEmbedding(label, rng.normal(size=dim)) for label in labels
    )


DEEP_CFG = DeepChannelConfig(input_dim=6, lstm_hidden=7, latent=5)


def _deep_model(seed=0):
    model = ZeroShotModel(
        FeatureConfig(use_deep=True),
        embed_dim=8,
        deep_config=DEEP_CFG,
        projection_hidden=16,
        seed=seed,
    )
    return model


def test_encode_deep_latent_dimension_default_510():
    cfg = DeepChannelConfig(input_dim=4, lstm_hidden=6)
    model = ZeroShotModel(
        FeatureConfig(use_deep=True), embed_dim=8, deep_config=cfg, projection_hidden=8
    )
    sample = _sample(snippets=np.ones((1, 4)))
    latent = encode_deep(sample, cfg, model.lstm, model.autoencoder)
    assert latent.shape == (510,)


def test_encode_deep_zero_parameters_give_zero():
    model = _deep_model()
    model.lstm.W[:] = 0.0
    model.lstm.b[:] = 0.0
    model.autoencoder.encoder.W[:] = 0.0
    model.autoencoder.encoder.b[:] = 0.0
    sample = _sample(snippets=np.ones((2, 6)))
    latent = encode_deep(sample, DEEP_CFG, model.lstm, model.autoencoder)
    assert np.array_equal(latent, np.zeros(5))


def test_encode_deep_is_stateful_over_snippets():
    model = _deep_model(3)
    snip = np.random.default_rng(4).normal(size=6)
    once = encode_deep(
        _sample(snippets=np.stack([snip])), DEEP_CFG, model.lstm, model.autoencoder
    )
    twice = encode_deep(
        _sample(snippets=np.stack([snip, snip])), DEEP_CFG, model.lstm, model.autoencoder
    )
    assert not np.allclose(once, twice)


def test_encode_deep_requires_snippets():
    model = _deep_model()
    with pytest.raises(ValidationError, match="snippets"):
        encode_deep(_sample(), DEEP_CFG, model.lstm, model.autoencoder)


def test_build_visual_dimensions():
    full = ZeroShotModel(
        FeatureConfig(use_deep=True),
        embed_dim=8,
        deep_config=DeepChannelConfig(input_dim=6, lstm_hidden=7, latent=510),
        projection_hidden=8,
    )
    sample = _sample(snippets=np.ones((1, 6)))
    fused = build_visual(sample, full)
    assert len(fused) == 1024
    assert fused.layout.name == "fused"

    svd_only = ZeroShotModel(
        FeatureConfig(use_distances=False, use_angles=False), embed_dim=8,
        projection_hidden=8,
    )
    assert len(build_visual(sample, svd_only)) == 210

    deep_only = ZeroShotModel(
        FeatureConfig(
            use_distances=False, use_angles=False, use_svd=False, use_deep=True
        ),
        embed_dim=8,
        deep_config=DeepChannelConfig(input_dim=6, lstm_hidden=7, latent=510),
        projection_hidden=8,
    )
    fv = build_visual(sample, deep_only)
    assert len(fv) == 510
    assert fv.layout.name == "deep_latent"


def test_train_memorizes_single_sample():
    sample = _sample(0, label="a")
    embeddings = _embeddings(["a", "b"])
    cfg = TrainConfig(
        epochs=800, batch=1, recon_weight=0.0, seed=1, projection_hidden=32
    )
    model, losses = train([sample], embeddings, FeatureConfig(), cfg)
    assert all(np.isfinite(losses))
    assert losses[-1] < 0.01


def test_train_is_deterministic_bitwise():
    samples = [_sample(i, label="ab"[i % 2]) for i in range(6)]
    embeddings = _embeddings(["a", "b"])
    cfg = TrainConfig(epochs=5, seed=7, projection_hidden=16)
    m1, l1 = train(samples, embeddings, FeatureConfig(), cfg)
    m2, l2 = train(samples, embeddings, FeatureConfig(), cfg)
    assert l1 == l2
    for name, arr in m1.params().items():
        assert np.array_equal(arr, m2.params()[name]), name


def test_train_validates_labels_and_inputs():
    with pytest.raises(ValidationError, match="empty"):
        train([], _embeddings(["a"]), FeatureConfig(), TrainConfig(epochs=1))
    with pytest.raises(ValidationError, match="without embeddings"):
        train(
            [_sample(0, label="zz")],
            _embeddings(["a"]),
            FeatureConfig(),
            TrainConfig(epochs=1),
        )


def test_train_aborts_on_nonfinite_loss():
    sample = _sample(0, label="a")
    embeddings = _embeddings(["a"])
    cfg = TrainConfig(epochs=3, lr=1e300, projection_hidden=8, recon_weight=0.0)
    with pytest.raises(NumericError, match="epoch"):
        train([sample], embeddings, FeatureConfig(), cfg)


def test_skeleton_only_training_leaves_deep_parameters_untouched():
    samples = [_sample(i, label="ab"[i % 2], snippets=np.ones((1, 6))) for i in range(4)]
    embeddings = _embeddings(["a", "b"])
    cfg = TrainConfig(epochs=3, seed=2, recon_weight=0.0, projection_hidden=8)
    model = ZeroShotModel(
        FeatureConfig(use_deep=False),
        embed_dim=8,
        deep_config=DEEP_CFG,
        projection_hidden=8,
        seed=cfg.seed,
    )
    before = {k: v.copy() for k, v in model.lstm.params().items()}
    before.update({k: v.copy() for k, v in model.autoencoder.params().items()})
    trained, _ = train(samples, embeddings, FeatureConfig(use_deep=False), cfg,
                       deep_config=DEEP_CFG)
    after = dict(trained.lstm.params())
    after.update(trained.autoencoder.params())
    for name in before:
        assert np.array_equal(before[name], after[name]), name


def test_predict_two_class_closed_form():
    # projected embedding exactly equals class-1 embedding, class 2 orthogonal
    embeddings = EmbeddingSet(
        [
            ClassEmbedding("one", np.array([1.0, 0.0])),
            ClassEmbedding("two", np.array([0.0, 1.0])),
        ]
    )
    model = ZeroShotModel(FeatureConfig(), embed_dim=2, projection_hidden=4, seed=0)
    sample = _sample(1, label="one")
    visual = build_visual(sample, model).values
    hidden = model.projection.fc1.forward(model.scale_visual(visual))
    w, b = np.linalg.lstsq(
        np.stack([hidden]), np.array([[1.0, 0.0]]), rcond=None
    )[0], None
    model.projection.fc2.W = w.T
    model.projection.fc2.b = np.zeros(2)
    pred = predict(sample, model, embeddings)
    assert pred.predicted_label == "one"
    assert abs(pred.scores[0] - 0.7311) < 1e-3
    assert abs(pred.scores[1] - 0.2689) < 1e-3


def test_predict_tie_breaks_to_lowest_index():
    embeddings = EmbeddingSet(
        [
            ClassEmbedding("z_first", np.array([1.0, 0.0])),
            ClassEmbedding("a_second", np.array([1.0, 0.0])),
        ]
    )
    model = ZeroShotModel(FeatureConfig(), embed_dim=2, projection_hidden=4, seed=3)
    pred = predict(_sample(2), model, embeddings)
    assert pred.predicted_label == "z_first"
    assert abs(pred.scores[0] - pred.scores[1]) < 1e-15


def test_predict_invariant_to_candidate_scaling():
    labels = ["a", "b", "c", "d"]
    embeddings = _embeddings(labels, dim=6, seed=5)
    model = ZeroShotModel(FeatureConfig(), embed_dim=6, projection_hidden=8, seed=4)
    samples = [_sample(i + 10) for i in range(12)]
    base = [predict(s, model, embeddings).predicted_label for s in samples]
    scaled = EmbeddingSet(
        ClassEmbedding(l, v * (10.0 if i % 2 else 0.03))
        for i, (l, v) in enumerate(zip(embeddings.labels, embeddings.matrix))
    )
    again = [predict(s, model, scaled).predicted_label for s in samples]
    assert base == again


def test_predict_argmax_consistency():
    embeddings = _embeddings(["a", "b", "c"], dim=5, seed=8)
    model = ZeroShotModel(FeatureConfig(), embed_dim=5, projection_hidden=8, seed=9)
    for i in range(20):
        pred = predict(_sample(50 + i), model, embeddings)
        sims = pred.similarities
        assert int(np.argmax(sims)) == int(np.argmax(pred.scores))
        assert int(np.argmin(1.0 - sims)) == int(np.argmax(sims))
        assert pred.predicted_label == pred.labels[int(np.argmax(sims))]


def test_model_save_load_round_trip(tmp_path):
    samples = [_sample(i, label="ab"[i % 2], snippets=np.ones((1, 6))) for i in range(4)]
    embeddings = _embeddings(["a", "b"])
    cfg = TrainConfig(epochs=2, seed=5, projection_hidden=8)
    model, _ = train(
        samples, embeddings, FeatureConfig(use_deep=True), cfg, deep_config=DEEP_CFG
    )
    path = tmp_path / "model.zsnn"
    save_model(path, model)
    loaded = load_model(path)
    for name, arr in model.params().items():
        assert np.array_equal(arr, loaded.params()[name])
    assert np.array_equal(model.scaler_mean, loaded.scaler_mean)
    assert np.array_equal(model.scaler_scale, loaded.scaler_scale)
    probe = _sample(99, snippets=np.ones((1, 6)))
    a = predict(probe, model, embeddings)
    b = predict(probe, loaded, embeddings)
    assert a.predicted_label == b.predicted_label
    assert np.array_equal(a.scores, b.scores)
