"""Class-split protocols, accuracy metrics, repeated-run evaluation, and the
feature-ablation grid.

Protocol p1 puts 80% of the classes in the seen (training) side; p2 splits
50/50 and drops the leftover class when the count is odd. Every run redraws
the split from its own seed, trains on seen-class samples only, and scores
top-1/top-5 accuracy on unseen-class samples against the unseen embeddings.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .neural import make_rng
from .pipeline import (
    DeepChannelConfig,
    Prediction,
    TrainConfig,
    ZeroShotModel,
    deep_config_to_dict,
    encode_deep,
    feature_config_to_dict,
    predict,
    tile_families,
    train,
    train_config_to_dict,
)
from .skeleton import FamilyFeatures, FeatureConfig, extract_families
from .types import EmbeddingSet, SignSample, SplitSpec, ValidationError

PROTOCOL_SEEN_FRACTION = {"p1": 0.8, "p2": 0.5}


def make_split(labels: Sequence[str], protocol: str, seed: int) -> SplitSpec:
    """Seeded uniform class split. p1: floor(0.8 n) seen, rest unseen.
    p2: floor(0.5 n) seen and as many unseen; an odd leftover class sits out.
    Deterministic in (label order, seed)."""
    if protocol not in PROTOCOL_SEEN_FRACTION:
        raise ValidationError(f"make_split: unknown protocol {protocol!r}")
    n = len(labels)
    if n < 2:
        raise ValidationError(f"make_split: need at least 2 classes, got {n}")
    if len(set(labels)) != n:
        raise ValidationError("make_split: duplicate labels")
    perm = make_rng(seed, stream=300).permutation(n)
    shuffled = [labels[i] for i in perm]
    k = int(PROTOCOL_SEEN_FRACTION[protocol] * n)
    seen = shuffled[:k]
    unseen = shuffled[k : 2 * k] if protocol == "p2" else shuffled[k:]
    if not seen or not unseen:
        raise ValidationError(f"make_split: empty side for n={n}, protocol {protocol}")
    return SplitSpec(
        seen=frozenset(seen), unseen=frozenset(unseen), seed=seed, protocol=protocol
    )


def topk_accuracy(predictions: Sequence[Prediction], k: int) -> float:
    """Fraction of predictions whose true label is among the k top-scoring
    candidate classes; score ties resolve by candidate index order."""
    if not predictions:
        raise ValidationError("topk_accuracy: no predictions")
    hits = 0
    for pred in predictions:
        n_classes = len(pred.labels)
        if not 1 <= k <= n_classes:
            raise ValidationError(
                f"topk_accuracy: k={k} out of range for {n_classes} classes"
            )
        order = np.argsort(-pred.scores, kind="stable")[:k]
        if pred.true_label in (pred.labels[int(i)] for i in order):
            hits += 1
    return hits / len(predictions)


@dataclass(frozen=True)
class ProtocolRun:
    seed: int
    num_seen: int
    num_unseen: int
    top1: float
    top5: float


@dataclass(frozen=True)
class ProtocolReport:
    protocol: str
    runs: tuple[ProtocolRun, ...]
    mean_top1: float
    std_top1: float
    config_fingerprint: str
    config: dict

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "runs": [
                {
                    "seed": r.seed,
                    "num_seen": r.num_seen,
                    "num_unseen": r.num_unseen,
                    "top1": r.top1,
                    "top5": r.top5,
                }
                for r in self.runs
            ],
            "mean_top1": self.mean_top1,
            "std_top1": self.std_top1,
            "config_fingerprint": self.config_fingerprint,
            "config": self.config,
        }


def _config_blob(
    feature_config: FeatureConfig,
    train_config: TrainConfig,
    deep_config: Optional[DeepChannelConfig],
    protocol: str,
    runs: int,
    base_seed: int,
) -> dict:
    return {
        "feature_config": feature_config_to_dict(feature_config),
        "train_config": train_config_to_dict(train_config),
        "deep_config": deep_config_to_dict(deep_config),
        "protocol": protocol,
        "runs": runs,
        "base_seed": base_seed,
    }


def _fingerprint(blob: dict) -> str:
    canon = json.dumps(blob, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def class_order(samples: Sequence[SignSample], embeddings: EmbeddingSet) -> list[str]:
    """Dataset class list in embedding-file order (the canonical registry),
    restricted to labels that actually occur in the samples."""
    present = {s.label for s in samples}
    missing = sorted(present - set(embeddings.labels))
    if missing:
        raise ValidationError(f"labels without embeddings {missing}")
    return [label for label in embeddings.labels if label in present]


def _slice_families(families: FamilyFeatures, idx: np.ndarray) -> FamilyFeatures:
    pick = lambda m: None if m is None else m[idx]
    return FamilyFeatures(
        distances=pick(families.distances),
        angles=pick(families.angles),
        svd=pick(families.svd),
    )


def evaluate_model(
    model: ZeroShotModel,
    samples: Sequence[SignSample],
    candidates: EmbeddingSet,
    families: Optional[FamilyFeatures] = None,
) -> list[Prediction]:
    """Predict every sample against the candidate classes; one sample at a
    time, so results do not depend on batching or worker count."""
    if families is None:
        families = extract_families(samples, model.feature_config)
    skel = tile_families(families, model.feature_config)
    predictions = []
    for i, sample in enumerate(samples):
        visual = skel[i]
        if model.feature_config.use_deep:
            latent = encode_deep(sample, model.deep_config, model.lstm, model.autoencoder)
            visual = np.concatenate([visual, latent]) if visual.size else latent
        predictions.append(predict(sample, model, candidates, visual=visual))
    return predictions


def _single_run(
    run_seed: int,
    samples: Sequence[SignSample],
    embeddings: EmbeddingSet,
    labels: Sequence[str],
    protocol: str,
    feature_config: FeatureConfig,
    train_config: TrainConfig,
    deep_config: Optional[DeepChannelConfig],
    families: FamilyFeatures,
) -> ProtocolRun:
    split = make_split(labels, protocol, run_seed)
    train_idx = np.array([i for i, s in enumerate(samples) if s.label in split.seen])
    test_idx = np.array([i for i, s in enumerate(samples) if s.label in split.unseen])
    if train_idx.size == 0 or test_idx.size == 0:
        raise ValidationError(f"run {run_seed}: empty train or test sample set")
    candidates = embeddings.subset(split.unseen)
    # Seen/unseen hygiene: no training label may appear among the candidates.
    leaked = set(candidates.labels) & split.seen
    if leaked:
        raise ValidationError(f"run {run_seed}: seen labels leaked {sorted(leaked)}")
    train_samples = [samples[i] for i in train_idx]
    model, _ = train(
        train_samples,
        embeddings,
        feature_config,
        replace(train_config, seed=run_seed),
        deep_config=deep_config,
        families=_slice_families(families, train_idx),
    )
    test_samples = [samples[i] for i in test_idx]
    predictions = evaluate_model(
        model, test_samples, candidates, families=_slice_families(families, test_idx)
    )
    assert all(p.true_label in split.unseen for p in predictions)
    top1 = topk_accuracy(predictions, 1)
    top5 = topk_accuracy(predictions, min(5, len(candidates)))
    return ProtocolRun(
        seed=run_seed,
        num_seen=len(split.seen),
        num_unseen=len(split.unseen),
        top1=top1,
        top5=top5,
    )


def _single_run_star(args) -> ProtocolRun:
    return _single_run(*args)


def run_protocol(
    samples: Sequence[SignSample],
    embeddings: EmbeddingSet,
    protocol: str,
    feature_config: FeatureConfig,
    train_config: TrainConfig,
    deep_config: Optional[DeepChannelConfig] = None,
    runs: int = 10,
    base_seed: int = 0,
    families: Optional[FamilyFeatures] = None,
    jobs: int = 1,
) -> ProtocolReport:
    """Repeat split/train/evaluate `runs` times (run r uses seed base+r) and
    aggregate mean and population std of top-1. Pure function of
    (dataset, configs, base seed); `jobs` only parallelizes runs."""
    if runs < 1:
        raise ValidationError("run_protocol: runs must be >= 1")
    labels = class_order(samples, embeddings)
    if families is None:
        families = extract_families(samples, feature_config)
    args = [
        (
            base_seed + r,
            samples,
            embeddings,
            labels,
            protocol,
            feature_config,
            train_config,
            deep_config,
            families,
        )
        for r in range(1, runs + 1)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            run_results = list(pool.map(_single_run_star, args))
    else:
        run_results = [_single_run_star(a) for a in args]
    top1s = np.array([r.top1 for r in run_results])
    blob = _config_blob(feature_config, train_config, deep_config, protocol, runs, base_seed)
    return ProtocolReport(
        protocol=protocol,
        runs=tuple(run_results),
        mean_top1=float(np.mean(top1s)),
        std_top1=float(np.std(top1s)),
        config_fingerprint=_fingerprint(blob),
        config=blob,
    )


# Feature-combination grid: seven skeleton-only rows, the deep-only row, and
# seven fused rows, in fixed presentation order.
ABLATION_ROWS: tuple[tuple[str, dict], ...] = (
    ("dist", dict(use_distances=True, use_angles=False, use_svd=False, use_deep=False)),
    ("ang", dict(use_distances=False, use_angles=True, use_svd=False, use_deep=False)),
    ("svd", dict(use_distances=False, use_angles=False, use_svd=True, use_deep=False)),
    ("dist+ang", dict(use_distances=True, use_angles=True, use_svd=False, use_deep=False)),
    ("svd+ang", dict(use_distances=False, use_angles=True, use_svd=True, use_deep=False)),
    ("svd+dist", dict(use_distances=True, use_angles=False, use_svd=True, use_deep=False)),
    ("dist+ang+svd", dict(use_distances=True, use_angles=True, use_svd=True, use_deep=False)),
    ("deep", dict(use_distances=False, use_angles=False, use_svd=False, use_deep=True)),
    ("dist+deep", dict(use_distances=True, use_angles=False, use_svd=False, use_deep=True)),
    ("ang+deep", dict(use_distances=False, use_angles=True, use_svd=False, use_deep=True)),
    ("svd+deep", dict(use_distances=False, use_angles=False, use_svd=True, use_deep=True)),
    ("ang+svd+deep", dict(use_distances=False, use_angles=True, use_svd=True, use_deep=True)),
    ("dist+svd+deep", dict(use_distances=True, use_angles=False, use_svd=True, use_deep=True)),
    ("dist+ang+deep", dict(use_distances=True, use_angles=True, use_svd=False, use_deep=True)),
    ("dist+ang+svd+deep", dict(use_distances=True, use_angles=True, use_svd=True, use_deep=True)),
)

ABLATION_ROW_NAMES = tuple(name for name, _ in ABLATION_ROWS)


@dataclass(frozen=True)
class AblationResult:
    row: str
    protocol: str
    report: ProtocolReport


def ablation_suite(
    samples: Sequence[SignSample],
    embeddings: EmbeddingSet,
    protocols: Sequence[str] = ("p1", "p2"),
    train_config: TrainConfig = TrainConfig(),
    deep_config: Optional[DeepChannelConfig] = None,
    runs: int = 10,
    base_seed: int = 0,
    rows: Optional[Sequence[str]] = None,
    base_feature_config: FeatureConfig = FeatureConfig(),
    jobs: int = 1,
) -> list[AblationResult]:
    """Run every feature-combination row (optionally filtered) under every
    protocol; row-major output order. Skeleton features are extracted once
    and shared across rows; rows without the deep channel never touch the
    samples' deep snippets."""
    wanted = ABLATION_ROW_NAMES if rows is None else tuple(rows)
    unknown = set(wanted) - set(ABLATION_ROW_NAMES)
    if unknown:
        raise ValidationError(f"ablation: unknown rows {sorted(unknown)}")
    needs_deep = any(
        dict(flags)["use_deep"] for name, flags in ABLATION_ROWS if name in wanted
    )
    if needs_deep and deep_config is None:
        raise ValidationError("ablation: deep rows requested but no deep config")
    full_families = extract_families(
        samples,
        FeatureConfig(
            aggregation=base_feature_config.aggregation,
            normalize=base_feature_config.normalize,
        ),
    )
    results = []
    for name, flags in ABLATION_ROWS:
        if name not in wanted:
            continue
        cfg = FeatureConfig(
            **flags,
            aggregation=base_feature_config.aggregation,
            normalize=base_feature_config.normalize,
        )
        row_families = FamilyFeatures(
            distances=full_families.distances if cfg.use_distances else None,
            angles=full_families.angles if cfg.use_angles else None,
            svd=full_families.svd if cfg.use_svd else None,
        )
        for protocol in protocols:
            report = run_protocol(
                samples,
                embeddings,
                protocol,
                cfg,
                train_config,
                deep_config=deep_config if cfg.use_deep else None,
                runs=runs,
                base_seed=base_seed,
                families=row_families,
                jobs=jobs,
            )
            results.append(AblationResult(row=name, protocol=protocol, report=report))
    return results


def report_csv_header() -> str:
    return "config,protocol,mean_top1,std_top1,runs"


def report_csv_row(config_name: str, report: ProtocolReport) -> str:
    return (
        f"{config_name},{report.protocol},{report.mean_top1!r},"
        f"{report.std_top1!r},{len(report.runs)}"
    )
