"""End-to-end zero-shot pipeline: visual encoding (skeleton features plus an
optional LSTM/autoencoder deep channel), projection into the class-embedding
space, seen-class training, and cosine nearest-neighbor inference over unseen
classes.

Training owns its model exclusively and is deterministic per seed. Prediction
runs one sample at a time against frozen parameters, so mapping it over a
sample set gives identical results for any worker count or batching.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import checkpoint as ckpt
from .neural import (
    LOSSES,
    Adam,
    AutoEncoder,
    DenseLayer,
    LstmCell,
    make_rng,
    mse_loss,
)
from .numerics import softmax
from .skeleton import FamilyFeatures, FeatureConfig, extract_families, repeat_fuse
from .types import (
    DEEP_LATENT,
    EmbeddingSet,
    FeatureVector,
    NumericError,
    SignSample,
    ValidationError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeepChannelConfig:
    """Shape of the deep (pixel-feature) channel: snippet vectors in, LSTM
    temporal encoding, autoencoder bottleneck out."""

    snippet_len: int = 16
    input_dim: int = 4096
    lstm_hidden: int = 1024
    latent: int = 510

    def __post_init__(self):
        if min(self.snippet_len, self.input_dim, self.lstm_hidden, self.latent) < 1:
            raise ValidationError("deep channel config: all dims must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-3
    batch: int = 32
    loss: str = "cosine"
    recon_weight: float = 0.1
    seed: int = 0
    projection_hidden: int = 1024
    standardize: bool = True
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1 or self.projection_hidden < 1:
            raise ValidationError("train config: epochs/batch/hidden must be positive")
        if not self.lr > 0.0:
            raise ValidationError("train config: lr must be positive")
        if self.recon_weight < 0.0 or self.weight_decay < 0.0:
            raise ValidationError("train config: penalty weights must be >= 0")
        if self.loss not in LOSSES:
            raise ValidationError(f"train config: unknown loss {self.loss!r}")


class ProjectionNet:
    """Two dense layers mapping fused visual features into the embedding
    space: relu hidden layer, linear output."""

    def __init__(
        self,
        visual_dim: int,
        embed_dim: int,
        hidden_dim: int = 1024,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else make_rng(0)
        self.visual_dim = visual_dim
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.fc1 = DenseLayer(visual_dim, hidden_dim, "relu", rng, "proj.fc1")
        self.fc2 = DenseLayer(hidden_dim, embed_dim, "identity", rng, "proj.fc2")

    def params(self) -> dict[str, np.ndarray]:
        return {**self.fc1.params(), **self.fc2.params()}

    def forward(self, x) -> np.ndarray:
        return self.fc2.forward(self.fc1.forward(x))

    def backward(self, x, dz) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        hidden = self.fc1.forward(x)
        dhidden, g2 = self.fc2.backward(hidden, dz)
        dx, g1 = self.fc1.backward(x, dhidden)
        return dx, {**g1, **g2}


class ZeroShotModel:
    """Bundle of the trainable parts plus the configs that shaped them."""

    def __init__(
        self,
        feature_config: FeatureConfig,
        embed_dim: int,
        deep_config: Optional[DeepChannelConfig] = None,
        projection_hidden: int = 1024,
        seed: int = 0,
    ):
        if feature_config.use_deep and deep_config is None:
            raise ValidationError("model: deep features enabled but no deep config")
        self.feature_config = feature_config
        self.deep_config = deep_config
        self.embed_dim = embed_dim
        self.seed = seed
        self.lstm: Optional[LstmCell] = None
        self.autoencoder: Optional[AutoEncoder] = None
        latent = 0
        if deep_config is not None:
            self.lstm = LstmCell(
                deep_config.input_dim,
                deep_config.lstm_hidden,
                make_rng(seed, stream=12),
                name="deep.lstm",
            )
            self.autoencoder = AutoEncoder(
                deep_config.lstm_hidden,
                deep_config.latent,
                make_rng(seed, stream=13),
                name="deep.ae",
            )
            latent = deep_config.latent if feature_config.use_deep else 0
        self.visual_dim = feature_config.skeleton_dim + latent
        if self.visual_dim < 1:
            raise ValidationError("model: visual dimension is zero")
        self.projection = ProjectionNet(
            self.visual_dim, embed_dim, projection_hidden, make_rng(seed, stream=10)
        )
        # Per-coordinate affine scaler over the skeleton block, fit on the
        # training set; identity until train() replaces it.
        self.scaler_mean = np.zeros(feature_config.skeleton_dim)
        self.scaler_scale = np.ones(feature_config.skeleton_dim)

    def scale_visual(self, visual: np.ndarray) -> np.ndarray:
        """Standardize the skeleton block of a raw fused vector or matrix;
        the deep latent tail (if any) passes through."""
        k = self.scaler_mean.shape[0]
        if k == 0:
            return visual
        scaled = np.array(visual, dtype=np.float64, copy=True)
        scaled[..., :k] = (scaled[..., :k] - self.scaler_mean) / self.scaler_scale
        return scaled

    def params(self) -> dict[str, np.ndarray]:
        out = dict(self.projection.params())
        if self.lstm is not None:
            out.update(self.lstm.params())
        if self.autoencoder is not None:
            out.update(self.autoencoder.params())
        return out

    def trainable_params(self) -> dict[str, np.ndarray]:
        """Parameters the training loop actually updates: the deep channel
        only participates when deep features are fused in."""
        if self.feature_config.use_deep:
            return self.params()
        return dict(self.projection.params())


def encode_deep(
    sample: SignSample, cfg: DeepChannelConfig, lstm: LstmCell, autoencoder: AutoEncoder
) -> np.ndarray:
    """LSTM over the sample's snippet vectors, then the bottleneck encoder."""
    if sample.deep_snippets is None or sample.deep_snippets.shape[0] == 0:
        raise ValidationError(f"sample {sample.id!r}: deep channel needs snippets")
    if sample.deep_snippets.shape[1] != cfg.input_dim:
        raise ValidationError(
            f"sample {sample.id!r}: snippet dim {sample.deep_snippets.shape[1]} "
            f"!= {cfg.input_dim}"
        )
    hidden = lstm.forward(sample.deep_snippets)
    return autoencoder.encode(hidden)


def _tile_block(mat: Optional[np.ndarray], repeat: int) -> Optional[np.ndarray]:
    return None if mat is None else np.tile(mat, (1, repeat))


def tile_families(families: FamilyFeatures, config: FeatureConfig) -> np.ndarray:
    """Tiled skeleton block matrix (N, skeleton_dim); (N, 0) when no skeleton
    family is enabled."""
    blocks = [
        b
        for b in (
            _tile_block(families.distances, config.repeat_dist),
            _tile_block(families.angles, config.repeat_ang),
            _tile_block(families.svd, config.repeat_svd),
        )
        if b is not None
    ]
    if not blocks:
        return np.zeros((families.count, 0))
    return np.concatenate(blocks, axis=1)


def build_visual(sample: SignSample, model: ZeroShotModel) -> FeatureVector:
    """Fused visual feature vector of one sample under the model's configs."""
    cfg = model.feature_config
    families = extract_families([sample], cfg)
    deep = None
    if cfg.use_deep:
        if model.deep_config is None:
            raise ValidationError("build_visual: deep features enabled but no deep model")
        deep = encode_deep(sample, model.deep_config, model.lstm, model.autoencoder)
    fused = repeat_fuse(
        cfg,
        distances=None if families.distances is None else families.distances[0],
        angles=None if families.angles is None else families.angles[0],
        svd=None if families.svd is None else families.svd[0],
        deep=deep,
    )
    if (
        cfg.use_deep
        and cfg.skeleton_dim == 0
        and fused.layout.dim == DEEP_LATENT.dim
    ):
        return FeatureVector(fused.values, DEEP_LATENT)
    return fused


def _group_by_snippet_count(counts: np.ndarray) -> list[np.ndarray]:
    """Positions grouped by equal snippet count, ascending count order."""
    return [np.flatnonzero(counts == t) for t in np.unique(counts)]


def _accumulate(total: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if name in total:
            total[name] += g
        else:
            total[name] = g.copy()


def train(
    samples: Sequence[SignSample],
    embeddings: EmbeddingSet,
    feature_config: FeatureConfig,
    train_config: TrainConfig,
    deep_config: Optional[DeepChannelConfig] = None,
    families: Optional[FamilyFeatures] = None,
) -> tuple[ZeroShotModel, list[float]]:
    """Fit the projection (and deep channel, when fused) on seen samples by
    minimizing the configured loss against each sample's class embedding,
    plus `recon_weight` times the autoencoder reconstruction error. Returns
    the model and the per-epoch mean loss."""
    if not samples:
        raise ValidationError("train: empty seen sample set")
    missing = sorted({s.label for s in samples} - set(embeddings.labels))
    if missing:
        raise ValidationError(f"train: labels without embeddings {missing}")
    if feature_config.use_deep and deep_config is None:
        raise ValidationError("train: deep features enabled but no deep config")

    model = ZeroShotModel(
        feature_config,
        embeddings.dim,
        deep_config=deep_config,
        projection_hidden=train_config.projection_hidden,
        seed=train_config.seed,
    )
    if families is None:
        families = extract_families(samples, feature_config)
    skel = tile_families(families, feature_config)
    # A single sample defines no statistics; leave the scaler at identity.
    if train_config.standardize and skel.shape[1] and len(samples) > 1:
        mean = np.mean(skel, axis=0)
        scale = np.std(skel, axis=0)
        model.scaler_mean = mean
        model.scaler_scale = np.where(scale > 0.0, scale, 1.0)
    skel = (skel - model.scaler_mean) / model.scaler_scale
    targets = np.stack([embeddings.vector(s.label) for s in samples])
    use_deep = feature_config.use_deep
    snippets: list[np.ndarray] = []
    counts = None
    if use_deep:
        for s in samples:
            if s.deep_snippets is None or s.deep_snippets.shape[0] == 0:
                raise ValidationError(f"train: sample {s.id!r} has no deep snippets")
            snippets.append(np.asarray(s.deep_snippets, dtype=np.float64))
        counts = np.array([s.shape[0] for s in snippets])

    loss_fn = LOSSES[train_config.loss]
    lam = train_config.recon_weight
    params = dict(model.projection.params())
    if use_deep:
        params.update(model.lstm.params())
        params.update(model.autoencoder.encoder.params())
        if lam > 0.0:
            # With no reconstruction term the decoder has no objective and
            # stays at init.
            params.update(model.autoencoder.decoder.params())
    optimizer = Adam(lr=train_config.lr)
    shuffle_rng = make_rng(train_config.seed, stream=14)
    n = len(samples)
    skel_dim = feature_config.skeleton_dim
    epoch_losses: list[float] = []

    for epoch in range(train_config.epochs):
        perm = shuffle_rng.permutation(n)
        epoch_total = 0.0
        for start in range(0, n, train_config.batch):
            idx = perm[start : start + train_config.batch]
            bsize = idx.shape[0]
            group_state = []
            if use_deep:
                latent = np.zeros((bsize, deep_config.latent))
                for positions in _group_by_snippet_count(counts[idx]):
                    seq = np.stack([snippets[i] for i in idx[positions]])
                    h, cache = model.lstm.forward_with_cache(seq)
                    latent_g = model.autoencoder.encode(h)
                    latent[positions] = latent_g
                    group_state.append((positions, h, cache, latent_g))
                fused = np.concatenate([skel[idx], latent], axis=1) if skel_dim else latent
            else:
                fused = skel[idx]
            z = model.projection.forward(fused)
            batch_loss, dz = loss_fn(z, targets[idx])
            dfused, grads = model.projection.backward(fused, dz)
            if use_deep:
                total = dict(grads)
                dlatent = dfused[:, skel_dim:]
                for positions, h, cache, latent_g in group_state:
                    dlat = dlatent[positions].copy()
                    dh_extra = 0.0
                    if lam > 0.0:
                        recon = model.autoencoder.decode(latent_g)
                        rloss, drecon = mse_loss(recon, h)
                        factor = lam * positions.shape[0] / bsize
                        batch_loss += factor * rloss
                        dlat_rec, dec_grads = model.autoencoder.decoder.backward(
                            latent_g, factor * drecon
                        )
                        _accumulate(total, dec_grads)
                        dlat += dlat_rec
                        dh_extra = -factor * drecon  # h is also the target
                    dh, enc_grads = model.autoencoder.encoder.backward(h, dlat)
                    _accumulate(total, enc_grads)
                    _, lstm_grads = model.lstm.backward(cache, dh + dh_extra)
                    _accumulate(total, lstm_grads)
                grads = total
            if not np.isfinite(batch_loss):
                raise NumericError(f"train: non-finite loss at epoch {epoch}")
            if train_config.weight_decay > 0.0:
                # L2 penalty on weight matrices only (objective term, so it
                # flows through the same Adam update as everything else).
                for name, p in params.items():
                    if name.endswith(".W"):
                        grads[name] = grads[name] + train_config.weight_decay * p
            optimizer.step(params, grads)
            epoch_total += batch_loss * bsize
        epoch_losses.append(epoch_total / n)
    return model, epoch_losses


@dataclass(frozen=True)
class Prediction:
    """Per-sample inference record over a fixed candidate class order."""

    sample_id: str
    true_label: str
    predicted_label: str
    labels: tuple[str, ...]
    similarities: np.ndarray
    scores: np.ndarray


def predict(
    sample: SignSample,
    model: ZeroShotModel,
    candidates: EmbeddingSet,
    visual: Optional[np.ndarray] = None,
) -> Prediction:
    """Classify one sample among the candidate classes: cosine similarity of
    the projected embedding against every candidate, softmax confidence, and
    argmax label (ties go to the lowest class index in candidate order)."""
    if len(candidates) < 1:
        raise ValidationError("predict: no candidate classes")
    if candidates.dim != model.embed_dim:
        raise ValidationError(
            f"predict: embedding dim {candidates.dim} != model {model.embed_dim}"
        )
    if visual is None:
        visual = build_visual(sample, model).values
    z = model.projection.forward(model.scale_visual(visual))
    z_norm = float(np.linalg.norm(z))
    if z_norm == 0.0:
        raise NumericError(f"predict: zero-norm projected embedding for {sample.id!r}")
    cand_norms = np.linalg.norm(candidates.matrix, axis=1)
    sims = np.clip((candidates.matrix @ z) / (cand_norms * z_norm), -1.0, 1.0)
    scores = softmax(sims)
    best = int(np.argmax(sims))
    return Prediction(
        sample_id=sample.id,
        true_label=sample.label,
        predicted_label=candidates.labels[best],
        labels=candidates.labels,
        similarities=sims,
        scores=scores,
    )


def feature_config_to_dict(cfg: FeatureConfig) -> dict:
    return {
        "use_distances": cfg.use_distances,
        "use_angles": cfg.use_angles,
        "use_svd": cfg.use_svd,
        "use_deep": cfg.use_deep,
        "repeat_dist": cfg.repeat_dist,
        "repeat_ang": cfg.repeat_ang,
        "repeat_svd": cfg.repeat_svd,
        "aggregation": cfg.aggregation,
        "normalize": cfg.normalize,
    }


def feature_config_from_dict(data: dict) -> FeatureConfig:
    return FeatureConfig(**data)


def deep_config_to_dict(cfg: Optional[DeepChannelConfig]) -> Optional[dict]:
    if cfg is None:
        return None
    return {
        "snippet_len": cfg.snippet_len,
        "input_dim": cfg.input_dim,
        "lstm_hidden": cfg.lstm_hidden,
        "latent": cfg.latent,
    }


def deep_config_from_dict(data: Optional[dict]) -> Optional[DeepChannelConfig]:
    return None if data is None else DeepChannelConfig(**data)


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "batch": cfg.batch,
        "loss": cfg.loss,
        "recon_weight": cfg.recon_weight,
        "seed": cfg.seed,
        "projection_hidden": cfg.projection_hidden,
    }


def train_config_from_dict(data: dict) -> TrainConfig:
    return TrainConfig(**data)


def save_model(path, model: ZeroShotModel, extra: Optional[dict] = None) -> None:
    config = {
        "feature_config": feature_config_to_dict(model.feature_config),
        "deep_config": deep_config_to_dict(model.deep_config),
        "embed_dim": model.embed_dim,
        "projection_hidden": model.projection.hidden_dim,
        "seed": model.seed,
    }
    if extra:
        config["extra"] = extra
    params = dict(model.params())
    params["scaler.mean"] = model.scaler_mean
    params["scaler.scale"] = model.scaler_scale
    ckpt.save_checkpoint(path, params, config)


def load_model(path) -> ZeroShotModel:
    params, config = ckpt.load_checkpoint(path)
    model = ZeroShotModel(
        feature_config_from_dict(config["feature_config"]),
        int(config["embed_dim"]),
        deep_config=deep_config_from_dict(config.get("deep_config")),
        projection_hidden=int(config.get("projection_hidden", 1024)),
        seed=int(config.get("seed", 0)),
    )
    for key, attr in (("scaler.mean", "scaler_mean"), ("scaler.scale", "scaler_scale")):
        if key in params:
            arr = params.pop(key)
            if arr.shape != getattr(model, attr).shape:
                raise ValidationError(f"checkpoint {path}: bad {key} shape {arr.shape}")
            setattr(model, attr, arr)
    own = model.params()
    if set(own) != set(params):
        raise ValidationError(
            f"checkpoint {path}: tensor names do not match the stored configs"
        )
    for name, arr in params.items():
        if own[name].shape != arr.shape:
            raise ValidationError(
                f"checkpoint {path}: tensor {name!r} shape {arr.shape} "
                f"!= expected {own[name].shape}"
            )
        own[name][...] = arr
    return model
