"""Command-line entry point.

Commands: extract, train, eval, ablate, gradcheck, synth. Every command that
writes outputs also drops a run manifest (command line, effective config,
seeds, input hashes, timestamps) next to them; reports and checkpoints
themselves contain no timestamps, so reruns with identical seeds and configs
reproduce them byte for byte.

Exit codes: 0 success, 2 input/validation error, 64 usage error, 70 internal
numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    SynthSpec,
    load_dataset,
    save_dataset,
    synth_dataset,
)
from .evaluate import (
    ABLATION_ROW_NAMES,
    ablation_suite,
    class_order,
    evaluate_model,
    report_csv_header,
    report_csv_row,
    run_protocol,
    topk_accuracy,
)
from .neural import run_all_gradchecks
from .pipeline import (
    DeepChannelConfig,
    TrainConfig,
    load_model,
    save_model,
    train,
    train_config_to_dict,
)
from .skeleton import FeatureConfig, extract_families
from .types import NumericError, ValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_USAGE = 64
EXIT_NUMERIC = 70

FAMILY_NAMES = ("dist", "ang", "svd")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_config_file(path: str) -> dict:
    """key=value config lines; '#' starts a comment. Values are parsed as
    bool, int, float, or kept as strings."""
    values = {}
    for ln, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config {path}:{ln}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if value.lower() in ("true", "false"):
            parsed = value.lower() == "true"
        else:
            try:
                parsed = int(value)
            except ValueError:
                try:
                    parsed = float(value)
                except ValueError:
                    parsed = value
        values[key] = parsed
    return values


def _default_seed() -> int:
    env = os.environ.get("ZS_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"ZS_SEED must be an integer, got {env!r}") from None


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_run_manifest(path: Path, command: str, argv, args, inputs, outputs, started):
    record = {
        "command": command,
        "argv": list(argv),
        "config": {
            k: v for k, v in sorted(vars(args).items()) if k not in ("func",)
        },
        "version": __version__,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True, indent=1)


def _feature_config(args) -> FeatureConfig:
    families = [f.strip() for f in args.features.split(",") if f.strip()]
    unknown = set(families) - set(FAMILY_NAMES)
    if unknown:
        raise ValidationError(
            f"unknown feature families {sorted(unknown)}; pick from {FAMILY_NAMES}"
        )
    use_deep = bool(getattr(args, "deep", False))
    if not families and not use_deep:
        raise ValidationError("no feature family selected")
    return FeatureConfig(
        use_distances="dist" in families,
        use_angles="ang" in families,
        use_svd="svd" in families,
        use_deep=use_deep,
        aggregation=args.agg,
        normalize=args.normalize,
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        batch=args.batch,
        loss=args.loss,
        recon_weight=args.recon_weight,
        seed=args.seed,
        projection_hidden=args.hidden,
        standardize=not args.no_standardize,
    )


def _deep_config(args, samples) -> DeepChannelConfig | None:
    if not getattr(args, "deep", False):
        return None
    input_dim = args.snippet_dim
    if input_dim is None:
        with_deep = next((s for s in samples if s.deep_snippets is not None), None)
        if with_deep is None:
            raise ValidationError(
                "deep channel requested but the dataset has no deep features"
            )
        input_dim = int(with_deep.deep_snippets.shape[1])
    return DeepChannelConfig(
        input_dim=input_dim, lstm_hidden=args.lstm_hidden, latent=args.latent
    )


def _add_feature_flags(p: _Parser) -> None:
    p.add_argument(
        "--features",
        default="dist,ang,svd",
        help="comma list of skeleton families: dist,ang,svd (default all)",
    )
    p.add_argument("--agg", choices=("mean", "max"), default="mean")
    p.add_argument(
        "--normalize",
        action="store_true",
        help="wrist-center and bone-length-scale the keypoints first",
    )


def _add_train_flags(p: _Parser) -> None:
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--loss", choices=("cosine", "mse"), default="cosine")
    p.add_argument("--recon-weight", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=1024, help="projection hidden width")
    p.add_argument(
        "--no-standardize",
        action="store_true",
        help="skip per-feature standardization of the skeleton block",
    )
    p.add_argument("--deep", action="store_true", help="fuse the deep channel")
    p.add_argument("--lstm-hidden", type=int, default=1024)
    p.add_argument("--latent", type=int, default=510)
    p.add_argument(
        "--snippet-dim",
        type=int,
        default=None,
        help="deep snippet dimension (default: inferred from data)",
    )


def _extract_chunk(payload):
    samples, config = payload
    fams = extract_families(samples, config)
    cols = [m for m in (fams.distances, fams.angles, fams.svd) if m is not None]
    return np.concatenate(cols, axis=1)


def cmd_extract(args, argv) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    config = _feature_config(args)
    samples, _, manifest = load_dataset(args.manifest, args.short_video)
    if args.jobs > 1:
        chunks = np.array_split(np.arange(len(samples)), args.jobs)
        payloads = [([samples[i] for i in c], config) for c in chunks if c.size]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            parts = list(pool.map(_extract_chunk, payloads))
        matrix = np.concatenate(parts, axis=0)
    else:
        matrix = _extract_chunk((samples, config))
    layout = config.frame_layout()
    doc = {
        "version": 1,
        "layout": layout.name,
        "dim": layout.dim,
        "aggregation": config.aggregation,
        "samples": [
            {"id": s.id, "label": s.label, "values": [float(v) for v in row]}
            for s, row in zip(samples, matrix)
        ],
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
    _write_run_manifest(
        Path(str(out) + ".run.json"), "extract", argv, args, [args.manifest], [out], started
    )
    print(f"wrote {len(samples)} x {layout.dim} features to {out}")
    return EXIT_OK


def cmd_train(args, argv) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    samples, embeddings, manifest = load_dataset(args.manifest, args.short_video)
    if args.embeddings is not None:
        from .dataio import load_embeddings

        embeddings = load_embeddings(args.embeddings)
    feature_config = _feature_config(args)
    train_config = _train_config(args)
    deep_config = _deep_config(args, samples)
    model, losses = train(
        samples, embeddings, feature_config, train_config, deep_config=deep_config
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(out, model, extra={"train_config": train_config_to_dict(train_config)})
    loss_log = Path(args.loss_log or str(out) + ".losses.csv")
    with open(loss_log, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, value in enumerate(losses):
            fh.write(f"{i},{value!r}\n")
    inputs = [args.manifest] + ([args.embeddings] if args.embeddings else [])
    _write_run_manifest(
        Path(str(out) + ".run.json"), "train", argv, args, inputs, [out, loss_log], started
    )
    print(f"trained {len(losses)} epochs, final loss {losses[-1]:.6f}; wrote {out}")
    return EXIT_OK


def _write_report_files(out_prefix: Path, rows: list[tuple[str, object]]) -> list[Path]:
    json_path = Path(str(out_prefix) + ".json")
    csv_path = Path(str(out_prefix) + ".csv")
    json_path.parent.mkdir(parents=True, exist_ok=True)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(
            [{"config": name, **report.to_dict()} for name, report in rows],
            fh,
            sort_keys=True,
            separators=(",", ":"),
        )
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report_csv_header() + "\n")
        for name, report in rows:
            fh.write(report_csv_row(name, report) + "\n")
    return [json_path, csv_path]


def cmd_eval(args, argv) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    samples, embeddings, _ = load_dataset(args.manifest, args.short_video)
    if args.checkpoint:
        model = load_model(args.checkpoint)
        candidates = embeddings.subset(class_order(samples, embeddings))
        predictions = evaluate_model(model, samples, candidates)
        top1 = topk_accuracy(predictions, 1)
        top5 = topk_accuracy(predictions, min(5, len(candidates)))
        from .evaluate import ProtocolReport, ProtocolRun

        report = ProtocolReport(
            protocol="fixed",
            runs=(
                ProtocolRun(
                    seed=args.seed,
                    num_seen=0,
                    num_unseen=len(candidates),
                    top1=top1,
                    top5=top5,
                ),
            ),
            mean_top1=top1,
            std_top1=0.0,
            config_fingerprint="checkpoint",
            config={"checkpoint": str(args.checkpoint)},
        )
        name = "checkpoint"
    else:
        feature_config = _feature_config(args)
        train_config = _train_config(args)
        deep_config = _deep_config(args, samples)
        report = run_protocol(
            samples,
            embeddings,
            args.protocol,
            feature_config,
            train_config,
            deep_config=deep_config,
            runs=args.runs,
            base_seed=args.seed,
            jobs=args.jobs,
        )
        name = args.features.replace(",", "+") + ("+deep" if args.deep else "")
    outputs = _write_report_files(Path(args.out), [(name, report)])
    inputs = [args.manifest] + ([args.checkpoint] if args.checkpoint else [])
    _write_run_manifest(
        Path(str(args.out) + ".run.json"), "eval", argv, args, inputs, outputs, started
    )
    print(f"top-1 {report.mean_top1:.4f} +- {report.std_top1:.4f} over {len(report.runs)} run(s)")
    return EXIT_OK


def cmd_ablate(args, argv) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    samples, embeddings, manifest = load_dataset(args.manifest, args.short_video)
    rows = None
    if args.rows:
        rows = tuple(r.strip() for r in args.rows.split(",") if r.strip())
    protocols = tuple(p.strip() for p in args.protocols.split(",") if p.strip())
    for p in protocols:
        if p not in ("p1", "p2"):
            raise ValidationError(f"unknown protocol {p!r}")
    wanted = rows if rows is not None else ABLATION_ROW_NAMES
    needs_deep = any("deep" in name for name in wanted)
    deep_config = None
    if needs_deep:
        if manifest.deep_dir is None:
            raise ValidationError(
                "ablation rows with the deep channel need a manifest with a "
                "deep-feature directory"
            )
        ns = argparse.Namespace(**{**vars(args), "deep": True})
        deep_config = _deep_config(ns, samples)
    results = ablation_suite(
        samples,
        embeddings,
        protocols=protocols,
        train_config=_train_config(args),
        deep_config=deep_config,
        runs=args.runs,
        base_seed=args.seed,
        rows=rows,
        base_feature_config=FeatureConfig(aggregation=args.agg, normalize=args.normalize),
        jobs=args.jobs,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = [(f"{r.row}", r.report) for r in results]
    outputs = _write_report_files(out / "ablation", table)
    _write_run_manifest(
        out / "run_manifest.json", "ablate", argv, args, [args.manifest], outputs, started
    )
    for r in results:
        print(
            f"{r.row:22s} {r.protocol}  top-1 {r.report.mean_top1:.4f} "
            f"+- {r.report.std_top1:.4f}"
        )
    return EXIT_OK


def cmd_gradcheck(args, argv) -> int:
    results = run_all_gradchecks(instances=args.instances)
    for name, err in results.items():
        print(f"{name:12s} max relative error {err:.3e}  PASS")
    print("all gradient checks passed")
    return EXIT_OK


def cmd_synth(args, argv) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    spec = SynthSpec(
        num_classes=args.classes,
        samples_per_class=args.samples_per_class,
        embed_dim=args.embed_dim,
        noise=args.noise,
        frames=args.frames,
        seed=args.seed,
        embed_rank=args.embed_rank,
        deep_dim=args.deep_dim,
    )
    samples, embeddings, manifest = synth_dataset(spec)
    manifest_path = save_dataset(args.out, samples, embeddings, manifest)
    _write_run_manifest(
        Path(args.out) / "run_manifest.json",
        "synth",
        argv,
        args,
        [],
        [manifest_path],
        started,
    )
    print(f"wrote {len(samples)} samples, {len(embeddings)} classes to {manifest_path}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="signspace", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = dict(formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    p = sub.add_parser("extract", help="write aggregated skeleton features", **common)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_feature_flags(p)
    p.add_argument("--short-video", choices=("strict", "lenient"), default="strict")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train on all manifest samples", **common)
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", default=None, help="override the manifest's TSV")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-log", default=None)
    p.add_argument("--short-video", choices=("strict", "lenient"), default="strict")
    _add_feature_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="protocol evaluation with repeated splits", **common)
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", choices=("p1", "p2"), default="p2")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--out", required=True, help="report path prefix")
    p.add_argument("--checkpoint", default=None, help="evaluate a frozen model instead")
    p.add_argument("--short-video", choices=("strict", "lenient"), default="strict")
    p.add_argument("--jobs", type=int, default=1)
    _add_feature_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="feature-combination grid", **common)
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocols", default="p1,p2")
    p.add_argument("--rows", default=None, help="comma list of row names to keep")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--short-video", choices=("strict", "lenient"), default="strict")
    p.add_argument("--jobs", type=int, default=1)
    _add_feature_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks", **common)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate the synthetic dataset", **common)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--samples-per-class", type=int, default=50)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--embed-rank", type=int, default=6)
    p.add_argument("--deep-dim", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    for sp in sub.choices.values():
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--config", default=None, help="key=value config file")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            defaults = _parse_config_file(args.config)
            known = {
                a.dest
                for a in parser._subparsers._group_actions[0]
                .choices[args.command]
                ._actions
            }
            unknown = set(defaults) - known
            if unknown:
                raise ValidationError(f"config file: unknown keys {sorted(unknown)}")
            sub = parser._subparsers._group_actions[0].choices[args.command]
            sub.set_defaults(**defaults)
            args = parser.parse_args(argv)
        if args.seed is None:
            args.seed = _default_seed()
        logging.basicConfig(
            stream=sys.stderr,
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args, argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else EXIT_USAGE
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
