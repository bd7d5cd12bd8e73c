"""Pipeline CLI: every stage is a subcommand wired through the workspace.

Exit codes: 0 success, 2 usage, 3 missing upstream stage, 4 integrity or
provenance failure, 5 numeric failure. The human review step is first-class:
nothing here fabricates verdicts except the explicitly gated test hook.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchConfig, compare, train_baseline
from .emit import emit_fair, flagged_indices, render_report_text, parse_report_json
from .errors import (
    CorruptionError,
    DivergenceError,
    FairsetError,
    IntegrityError,
    NotFoundError,
    NumericError,
    ProvenanceError,
    StageDependencyError,
    VersionError,
)
from .idx import ImageSet
from .nn import CnnModel, TrainConfig, evaluate_accuracy, extract_features, load_model, save_model, train
from .session import Session, read_verdict_log
from .server import LabelingServer
from .similarity import (
    FeatureMatrix,
    decode_ranking,
    encode_ranking,
    l2_normalize,
    nearest_train_neighbors,
    rank_pairs,
    ranking_to_csv,
)
from .store import (
    DatasetBundle,
    Workspace,
    decode_features,
    default_workspace_root,
    encode_features,
    ingest,
)

MODEL_ARTIFACT = "model"
CHECK_TOLERANCES = {
    # [expected, tolerance] per (model, dataset) pair with a published value
    ("perceptron", "mnist"): (0.845, 0.05),
    ("perceptron", "fashion-mnist"): (0.759, 0.05),
    ("sgd-linear", "fashion-mnist"): (0.829, 0.04),
}


@dataclass
class PipelineConfig:
    """Effective configuration of a pipeline run, archived with its artifacts."""

    workspace: str
    dataset: str
    seed: int
    learning_rate: float
    momentum: float
    batch_size: int
    epochs: int
    dropout_rates: str
    subset_per_class: int | None
    subset_offset: int
    block_test: int
    block_train: int
    port: int

    @classmethod
    def from_args(cls, args) -> "PipelineConfig":
        return cls(
            workspace=str(args.workspace or default_workspace_root()),
            dataset=args.dataset,
            seed=args.seed,
            learning_rate=args.learning_rate,
            momentum=args.momentum,
            batch_size=args.batch_size,
            epochs=args.epochs,
            dropout_rates=args.dropout_rates,
            subset_per_class=args.subset_per_class,
            subset_offset=args.subset_offset,
            block_test=args.block_test,
            block_train=args.block_train,
            port=args.port,
        )


def _workspace(args) -> Workspace:
    root = args.workspace or default_workspace_root()
    return Workspace(root, args.dataset)


def _load_bundle(ws: Workspace) -> DatasetBundle:
    try:
        return ws.load_raw()
    except NotFoundError as e:
        raise StageDependencyError(f"{e}; run `fairset ingest` first") from e


def _load_model(ws: Workspace) -> CnnModel:
    if not ws.has_artifact("features", MODEL_ARTIFACT):
        raise StageDependencyError("no trained model in workspace; run `fairset train` first")
    payload, rec = ws.load_artifact("features", MODEL_ARTIFACT)
    tmp = ws.stage_dir("features") / ".model-load.bin"
    tmp.write_bytes(payload)
    try:
        return load_model(tmp)
    finally:
        tmp.unlink(missing_ok=True)


def _load_features(ws: Workspace, name: str):
    if not ws.has_artifact("features", name):
        raise StageDependencyError(f"no {name} features; run `fairset features` first")
    payload, rec = ws.load_artifact("features", name)
    return decode_features(payload), rec


def _load_ranking(ws: Workspace):
    if not ws.has_artifact("ranking", "nearest"):
        raise StageDependencyError("no ranking; run `fairset rank` first")
    payload, rec = ws.load_artifact("ranking", "nearest")
    return decode_ranking(payload), rec


def cmd_ingest(args) -> int:
    ws = _workspace(args)
    checksums = None
    if args.checksums:
        checksums = json.loads(Path(args.checksums).read_text())
    source = args.source if len(args.source) > 1 else args.source[0]
    bundle = ingest(source, name=args.dataset, expected_checksums=checksums)
    manifest = ws.save_raw(bundle)
    print(f"ingested {args.dataset}: train N={bundle.train.n}, test N={bundle.test.n}")
    print(f"raw files under {ws.stage_dir('raw')}")
    for key, info in manifest["files"].items():
        print(f"  {key}: sha256 {info['sha256'][:16]}…")
    return 0


def _subset(image_set: ImageSet, per_class: int, offset: int = 0) -> ImageSet:
    idx = np.concatenate(
        [np.flatnonzero(image_set.labels == c)[offset : offset + per_class] for c in range(10)]
    )
    return image_set.subset(idx)


def cmd_train(args) -> int:
    ws = _workspace(args)
    bundle = _load_bundle(ws)
    train_set = bundle.train
    if args.subset_per_class:
        train_set = _subset(bundle.train, args.subset_per_class, args.subset_offset)
    dropout = tuple(float(r) for r in args.dropout_rates.split(","))
    cfg = TrainConfig(
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        dropout_rates=dropout,
    )
    model = CnnModel(seed=args.seed, dropout_rates=dropout)
    trace = train(model, train_set, cfg)
    for t in trace:
        print(f"epoch {t['epoch']}: loss {t['loss']:.4f} train-acc {t['accuracy']:.4f}")
    if args.holdout_per_class:
        holdout = _subset(bundle.train, args.holdout_per_class, args.holdout_offset)
        print(f"held-out accuracy: {evaluate_accuracy(model, holdout):.4f}")
    tmp = ws.stage_dir("features") / ".model-save.bin"
    save_model(model, tmp)
    payload = tmp.read_bytes()
    tmp.unlink()
    raw = ws.raw_digests()
    rec = ws.store_artifact(
        "features",
        MODEL_ARTIFACT,
        payload,
        meta={
            "train_images_digest": raw["train_images"],
            "config": {
                "learning_rate": cfg.learning_rate,
                "momentum": cfg.momentum,
                "batch_size": cfg.batch_size,
                "epochs": cfg.epochs,
                "seed": cfg.seed,
                "dropout_rates": list(cfg.dropout_rates),
                "subset_per_class": args.subset_per_class,
                "subset_offset": args.subset_offset,
            },
            "trace": trace,
        },
    )
    print(f"model stored: {rec.path} ({rec.digest[:16]}…)")
    return 0


def cmd_features(args) -> int:
    ws = _workspace(args)
    bundle = _load_bundle(ws)
    model = _load_model(ws)
    _, model_rec = ws.load_artifact("features", MODEL_ARTIFACT)
    raw = ws.raw_digests()
    for split, images, digest_key in [
        ("test", bundle.test.images, "test_images"),
        ("train", bundle.train.images, "train_images"),
    ]:
        feats = extract_features(model, images, batch_size=args.batch_size)
        rec = ws.store_artifact(
            "features",
            split,
            encode_features(feats),
            meta={"model_digest": model_rec.digest, "images_digest": raw[digest_key]},
        )
        print(f"{split} features: {feats.shape[0]}x{feats.shape[1]} ({rec.digest[:16]}…)")
    return 0


def cmd_rank(args) -> int:
    ws = _workspace(args)
    test_feats, test_rec = _load_features(ws, "test")
    train_feats, train_rec = _load_features(ws, "train")
    _, model_rec = ws.load_artifact("features", MODEL_ARTIFACT)
    for rec, name in [(test_rec, "test"), (train_rec, "train")]:
        if rec.meta.get("model_digest") != model_rec.digest:
            raise ProvenanceError(
                f"{name} features were extracted by a different model "
                f"({rec.meta.get('model_digest', '?')[:16]}… != {model_rec.digest[:16]}…); "
                "re-run `fairset features`"
            )
    tf = l2_normalize(FeatureMatrix(test_feats))
    xf = l2_normalize(FeatureMatrix(train_feats))
    idx, dist = nearest_train_neighbors(
        tf, xf, block_test=args.block_test, block_train=args.block_train
    )
    ranking = rank_pairs(idx, dist, test_rec.digest, train_rec.digest)
    rec = ws.store_artifact(
        "ranking",
        "nearest",
        encode_ranking(ranking),
        meta={
            "test_features_digest": test_rec.digest,
            "train_features_digest": train_rec.digest,
            "block_test": args.block_test,
            "block_train": args.block_train,
        },
    )
    if args.csv:
        csv_path = ws.stage_dir("ranking") / "nearest.csv"
        csv_path.write_text(ranking_to_csv(ranking))
        print(f"csv export: {csv_path}")
    print(f"ranking stored: {len(ranking)} pairs ({rec.digest[:16]}…)")
    print(f"closest pair: test {ranking.test_idx[0]} ~ train {ranking.train_idx[0]} "
          f"(distance {ranking.distance[0]:.6f})")
    return 0


def _open_session(ws: Workspace, args) -> tuple[Session, DatasetBundle]:
    bundle = _load_bundle(ws)
    ranking, rank_rec = _load_ranking(ws)
    log_path = ws.stage_dir("verdict-log") / "verdicts.jsonl"
    session = Session.start_or_resume(
        ranking,
        bundle.test,
        bundle.train,
        log_path,
        ranking_digest=rank_rec.digest,
        dataset_name=args.dataset,
        analyst=args.analyst,
    )
    return session, bundle


def cmd_serve(args) -> int:
    ws = _workspace(args)
    session, _ = _open_session(ws, args)
    static_dir = args.ui_dir
    if static_dir is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        static_dir = candidate if candidate.is_dir() else None
    server = LabelingServer(session, static_dir=static_dir)
    url = f"http://127.0.0.1:{args.port}/"
    print(f"review UI: {url}")
    if args.open:
        import webbrowser

        webbrowser.open(url)
    if static_dir is None:
        print("(no UI bundle found; the JSON API is live, see frontend/README.md)")
    try:
        server.serve_forever(args.port)
    finally:
        session.close()
    return 0


def cmd_autolabel(args) -> int:
    if os.environ.get("FAIRSET_TEST_ANALYST") != "1":
        print(
            "autolabel is a test hook that fabricates verdicts; the review step "
            "is a human task. Set FAIRSET_TEST_ANALYST=1 only in tests.",
            file=sys.stderr,
        )
        return 2
    ws = _workspace(args)
    session, _ = _open_session(ws, args)
    n = 0
    with session:
        while not session.complete:
            pair = session.next_pair()
            decision = "similar" if pair.distance < args.threshold else "distinct"
            session.record_verdict(decision)
            n += 1
    print(f"autolabel: {n} verdicts at threshold {args.threshold}")
    return 0


def cmd_emit(args) -> int:
    ws = _workspace(args)
    bundle = _load_bundle(ws)
    ranking, rank_rec = _load_ranking(ws)
    log_path = ws.stage_dir("verdict-log") / "verdicts.jsonl"
    if not log_path.exists():
        raise StageDependencyError("no verdict log; run `fairset serve` and review pairs first")
    header, verdicts, _ = read_verdict_log(log_path)
    if header.get("ranking_digest") != rank_rec.digest:
        raise ProvenanceError(
            "verdict log was recorded against a different ranking; refusing to emit"
        )
    flagged = flagged_indices(verdicts)
    provenance = {
        v.test_idx: (v.train_idx, v.distance) for v in verdicts if v.decision == "similar"
    }
    raw = ws.raw_digests()
    fair, report = emit_fair(
        bundle.test,
        flagged,
        ws.stage_dir("fair"),
        provenance=provenance,
        source_digests={
            "test_images": raw["test_images"],
            "test_labels": raw["test_labels"],
            "ranking": rank_rec.digest,
        },
        compress=args.compress,
    )
    print(render_report_text(report), end="")
    print(f"fair set: {fair.n} images under {ws.stage_dir('fair')}")
    return 0


def cmd_report(args) -> int:
    ws = _workspace(args)
    report_path = ws.stage_dir("fair") / "removal-report.json"
    if not report_path.exists():
        raise StageDependencyError("no removal report; run `fairset emit` first")
    report = parse_report_json(report_path.read_text())
    print(render_report_text(report), end="")
    return 0


def _fair_test_set(ws: Workspace, bundle: DatasetBundle) -> ImageSet | None:
    from .idx import load_image_set

    images = ws.stage_dir("fair") / "fair-t10k-images-idx3-ubyte"
    labels = ws.stage_dir("fair") / "fair-t10k-labels-idx1-ubyte"
    report_path = ws.stage_dir("fair") / "removal-report.json"
    if not (images.exists() and labels.exists()):
        return None
    if report_path.exists():
        report = parse_report_json(report_path.read_text())
        want = report.source_digests.get("test_images")
        if want and want != ws.raw_digests()["test_images"]:
            raise ProvenanceError(
                "fair set was emitted from different test images than the current raw data"
            )
    return load_image_set(images, labels)


def cmd_bench(args) -> int:
    ws = _workspace(args)
    bundle = _load_bundle(ws)
    cfg = BenchConfig(seed=args.seed)
    kinds = args.models.split(",")
    datasets: list[tuple[str, DatasetBundle]] = [(args.dataset, bundle)]
    if args.mnist_source:
        datasets.append(("mnist", ingest(args.mnist_source, name="mnist")))

    all_rows: dict[str, dict[str, float]] = {k: {} for k in kinds}
    columns: list[str] = []
    digests = {args.dataset: ws.raw_digests()}
    for ds_name, ds in datasets:
        models = {}
        for kind in kinds:
            print(f"training {kind} on {ds_name}…", flush=True)
            models[kind] = train_baseline(kind, ds.train, cfg)
        sets = [(ds_name, ds.test)]
        if ds_name == args.dataset:
            fair = _fair_test_set(ws, bundle)
            if fair is not None:
                sets.append((f"fair-{ds_name}", fair))
        table = compare(models, sets)
        for kind in kinds:
            all_rows[kind].update(table.rows[kind])
        columns.extend(table.columns)

    from .bench import ComparisonTable

    table = ComparisonTable(
        rows=all_rows,
        columns=columns,
        metadata={
            "seed": args.seed,
            "models": kinds,
            "dataset_digests": digests,
            "hyperparameters": vars(cfg),
        },
    )
    out_dir = ws.stage_dir("report")
    (out_dir / "comparison.md").write_text(table.to_markdown())
    (out_dir / "comparison.json").write_text(table.to_json())
    print(table.to_markdown(), end="")
    print(f"written: {out_dir / 'comparison.md'}, {out_dir / 'comparison.json'}")

    if args.check:
        failures = []
        for (kind, ds_name), (want, tol) in CHECK_TOLERANCES.items():
            got = all_rows.get(kind, {}).get(ds_name)
            if got is None:
                continue
            ok = abs(got - want) <= tol
            print(f"check {kind}/{ds_name}: {got:.3f} vs {want:.3f}±{tol:.2f} "
                  f"{'ok' if ok else 'FAIL'}")
            if not ok:
                failures.append((kind, ds_name))
        if failures:
            return 5
    return 0


def cmd_pipeline(args) -> int:
    ws = _workspace(args)
    config = PipelineConfig.from_args(args)
    (ws.stage_dir("report") / "run-config.json").write_text(
        json.dumps(asdict(config), indent=2, sort_keys=True) + "\n"
    )
    for step in (cmd_ingest, cmd_train, cmd_features, cmd_rank):
        code = step(args)
        if code != 0:
            return code
    print()
    print("automated stages complete. The similar/distinct review is a human step:")
    print(f"  fairset serve --dataset {args.dataset} --port {args.port}")
    print("then emit the cleaned test set with:")
    print(f"  fairset emit --dataset {args.dataset}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairset", description=__doc__)
    p.add_argument("--version", action="version", version=f"fairset {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--workspace", default=None, help="workspace root (or FAIRSET_WORKSPACE)")
        sp.add_argument("--dataset", default="fashion-mnist", help="bundle name inside the workspace")

    sp = sub.add_parser("ingest", help="load the four canonical IDX files into the workspace")
    common(sp)
    sp.add_argument("--source", nargs="+", required=True, help="directory, or 4 paths/URLs")
    sp.add_argument("--checksums", help="JSON file of filename -> sha256")
    sp.set_defaults(func=cmd_ingest)

    def train_flags(sp):
        sp.add_argument("--learning-rate", type=float, default=0.01)
        sp.add_argument("--momentum", type=float, default=0.9)
        sp.add_argument("--batch-size", type=int, default=64)
        sp.add_argument("--epochs", type=int, default=3)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--dropout-rates", default="0.25,0.25,0.4,0.3",
                        help="comma-separated rates for the four dropout layers")
        sp.add_argument("--subset-per-class", type=int, default=None,
                        help="train on this many images per class instead of all")
        sp.add_argument("--subset-offset", type=int, default=0)
        sp.add_argument("--holdout-per-class", type=int, default=None,
                        help="also report accuracy on this many held-out images per class")
        sp.add_argument("--holdout-offset", type=int, default=400)

    sp = sub.add_parser("train", help="train the feature-extractor CNN")
    common(sp)
    train_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("features", help="extract penultimate-layer embeddings")
    common(sp)
    sp.add_argument("--batch-size", type=int, default=512)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("rank", help="rank all test images by nearest-train distance")
    common(sp)
    sp.add_argument("--block-test", type=int, default=512)
    sp.add_argument("--block-train", type=int, default=16384)
    sp.add_argument("--csv", action="store_true", help="also export nearest.csv")
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("serve", help="host the review API and UI")
    common(sp)
    sp.add_argument("--port", type=int, default=8000)
    sp.add_argument("--analyst", default="analyst")
    sp.add_argument("--ui-dir", default=None, help="directory of built UI assets")
    sp.add_argument("--open", action="store_true", help="open the UI URL in a browser")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("autolabel")  # test hook; deliberately undocumented in help
    common(sp)
    sp.add_argument("--threshold", type=float, default=1e-6)
    sp.add_argument("--analyst", default="scripted-analyst")
    sp.set_defaults(func=cmd_autolabel)

    sp = sub.add_parser("emit", help="write the fair test set and removal report")
    common(sp)
    sp.add_argument("--compress", action="store_true", help="also gzip the IDX files")
    sp.set_defaults(func=cmd_emit)

    sp = sub.add_parser("report", help="re-render the removal report")
    common(sp)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("bench", help="train baselines and compare test sets")
    common(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--models", default="sgd-linear,perceptron,decision-tree,random-forest")
    sp.add_argument("--mnist-source", default=None, help="directory of canonical MNIST files")
    sp.add_argument("--check", action="store_true",
                    help="exit nonzero when published-value tolerances fail")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("pipeline", help="ingest, train, extract, rank; then hand off to serve")
    common(sp)
    sp.add_argument("--source", nargs="+", required=True)
    sp.add_argument("--checksums", help="JSON file of filename -> sha256")
    train_flags(sp)
    sp.add_argument("--block-test", type=int, default=512)
    sp.add_argument("--block-train", type=int, default=16384)
    sp.add_argument("--csv", action="store_true")
    sp.add_argument("--port", type=int, default=8000)
    sp.set_defaults(func=cmd_pipeline)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageDependencyError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (IntegrityError, CorruptionError, ProvenanceError, VersionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (NumericError, DivergenceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 5
    except FairsetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
