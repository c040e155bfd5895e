"""``sigr`` command line: train, detect, retrieve, evaluate, synth, noise.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 malformed file.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from .config import CONFIG_ENV, Config, load_config, parse_config_text
from .errors import FormatError
from .grouping import write_log_csv
from .imaging import load_image, save_image, write_components_csv
from .matching import MEASURES, write_ranked_csv, read_ranked_csv
from .sig_features import MODES

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_FORMAT = 0, 2, 3, 4
SPLIT_FILE = "split.csv"


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers

def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args, base: Config | None = None) -> Config:
    """base (defaults or artifact config) <- --config / $SIGR_CONFIG <- --set <- --seed."""
    if base is None:
        cfg = load_config(args.config)
    else:
        cfg = base
        path = args.config or os.environ.get(CONFIG_ENV) or None
        if path is not None:
            cfg = parse_config_text(Path(path).read_text(encoding="utf-8"), cfg)
    sets = _overrides(args)
    if sets:
        cfg = parse_config_text("\n".join(f"{k}={v}" for k, v in sets.items()), cfg)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _write_split(path, train, test):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["doc_id", "split"])
        for d in train:
            w.writerow([d, "train"])
        for d in test:
            w.writerow([d, "test"])


def _read_split(path, which: str) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [r["doc_id"] for r in csv.DictReader(fh) if r["split"] == which]


# ----------------------------------------------------------------- commands

def cmd_train(args) -> int:
    from .retrieval.manifest import read_manifest
    from .retrieval.pipeline import save_artifacts, train_detector, training_set
    cfg = _config(args)
    manifest = read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_ids = [e.doc_id for e in manifest.entries]
    if args.train_fraction is not None:
        if not 0 < args.train_fraction <= 1:
            raise UsageError("--train-fraction must be in (0, 1]")
        from .retrieval.pipeline import split_documents
        train_ids, test_ids = split_documents([e.doc_id for e in manifest.entries],
                                              args.train_fraction, cfg.seed)
        _write_split(out / SPLIT_FILE, train_ids, test_ids)
    sub = manifest.subset(train_ids)
    pages = ((load_image(e.path), sub.regions_for(e.doc_id)) for e in sub.entries)
    ts = training_set(pages, cfg)
    classes = args.classes.split(",") if args.classes else None
    det = train_detector(ts, cfg, args.positive, classes)
    save_artifacts(out, det, cfg)
    print(f"trained on {len(ts.labels)} components from {len(sub)} documents; "
          f"classes {','.join(det.classes)}; artifacts in {out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    from .retrieval.pipeline import detect_signatures, load_artifacts
    det, base = load_artifacts(args.artifacts)
    cfg = _config(args, base)
    img = load_image(args.doc)
    res = detect_signatures(img, det, cfg)
    write_components_csv(args.out, res.components,
                         {"label": res.labels, "decision": [f"{v:.9g}" for v in res.decision]})
    if args.overlay:
        over = np.asarray(img, dtype=np.float64).copy()
        for c in res.positives:
            r0, c0, r1, c1 = c.bbox
            over[r0:r1 + 1, [c0, c1]] = 0.0
            over[[r0, r1], c0:c1 + 1] = 0.0
        save_image(args.overlay, over)
    print(f"{len(res.positives)} of {len(res.components)} components labelled {det.positive}")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    from .retrieval.manifest import read_manifest
    from .retrieval.pipeline import load_artifacts, make_query, prepare_corpus, rank_documents
    det, base = load_artifacts(args.artifacts)
    cfg = _config(args, base)
    mode = "foreground" if args.logo else args.mode
    queries = [(Path(q).stem, load_image(q)) for q in args.query]
    manifest = read_manifest(args.manifest)
    prepared = prepare_corpus(manifest, det, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, img in queries:
        q = make_query(img, det.codebook, cfg)
        run = rank_documents(q, prepared, args.measure, mode, det.codebook, cfg, threshold=args.threshold)
        write_ranked_csv(out / f"{name}.csv", run.ranked)
        if args.log_dir:
            logs = Path(args.log_dir) / name
            logs.mkdir(parents=True, exist_ok=True)
            for doc_id, res in run.results.items():
                write_log_csv(logs / f"{doc_id}.csv", res)
        top = run.ranked[0].doc_id if run.ranked else "-"
        print(f"{name}: {len(run.ranked)} documents ranked ({args.measure}, {mode}); top {top}")
    return EXIT_OK


def _retrieval_metrics(args, manifest, out):
    from .retrieval.metrics import average_precision, pr_curve, write_curve_csv
    aps = []
    for item in args.runs:
        ident, _, path = item.rpartition("=")
        path = Path(path)
        ident = ident or path.stem
        ranked = read_ranked_csv(path)
        relevant = manifest.relevant(ident)
        if not relevant:
            raise UsageError(f"identity {ident!r} has no relevant documents in the manifest")
        aps.append(average_precision([r.doc_id for r in ranked], relevant))
        measure = ranked[0].measure if ranked else "euclidean"
        write_curve_csv(out / f"pr_{ident}.csv", pr_curve(ranked, relevant, measure))
    return float(np.mean(aps)) if aps else None


def _detection_metrics(args, manifest, out):
    from .retrieval.metrics import (accuracy, confusion_matrix, roc_auc, write_confusion_csv,
                                    write_curve_csv)
    from .retrieval.pipeline import detect_signatures, label_components, load_artifacts, page_components
    det, base = load_artifacts(args.artifacts)
    cfg = _config(args, base)
    ids = [e.doc_id for e in manifest.entries]
    split = Path(args.artifacts) / SPLIT_FILE
    if args.split != "all":
        if not split.exists():
            raise UsageError(f"--split {args.split} needs {split} (train with --train-fraction)")
        ids = _read_split(split, args.split)
    sub = manifest.subset(ids)
    truth, pred, score = [], [], []
    multi = len(det.classes) > 2
    other = [c for c in det.classes if c != det.positive][0]
    for e in sub.entries:
        img = load_image(e.path)
        page = page_components(img, cfg)
        labels = label_components(page.components, sub.regions_for(e.doc_id))
        res = detect_signatures(img, det, cfg, page)
        if not multi:
            labels = [lab if lab == det.positive else other for lab in labels]
        truth += labels
        pred += res.labels
        score += list(res.decision)
    if not truth:
        raise UsageError("no components to evaluate")
    acc = accuracy(pred, truth)
    auc = None
    pos = np.array([t == det.positive for t in truth])
    if pos.any() and not pos.all():
        curve = roc_auc(score, pos)
        auc = curve.auc
        write_curve_csv(out / "roc.csv", curve)
    classes = det.classes
    keep = [i for i, t in enumerate(truth) if t in classes]
    cm = confusion_matrix([pred[i] for i in keep], [truth[i] for i in keep], classes)
    write_confusion_csv(out / "confusion.csv", cm, classes)
    return acc, auc, len(truth)


def cmd_evaluate(args) -> int:
    from .retrieval.manifest import read_manifest
    from .retrieval.metrics import write_metrics_csv
    if not args.runs and not args.artifacts:
        raise UsageError("give ranked CSVs to score and/or --artifacts for detection metrics")
    manifest = read_manifest(args.manifest, check_paths=bool(args.artifacts))
    if not any(e.identity for e in manifest.entries) and args.runs:
        raise UsageError("manifest carries no ground-truth identities")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    map_ = _retrieval_metrics(args, manifest, out) if args.runs else None
    acc = auc = n = None
    if args.artifacts:
        acc, auc, n = _detection_metrics(args, manifest, out)
    write_metrics_csv(out / "metrics.csv", map=map_, auc=auc, accuracy=acc,
                      queries=len(args.runs), components=n)
    print(f"MAP={'' if map_ is None else f'{map_:.4f}'} AUC={'' if auc is None else f'{auc:.4f}'} "
          f"accuracy={'' if acc is None else f'{acc:.4f}'}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .retrieval.synth import SynthSpec, generate_corpus
    cfg = _config(args)
    spec = SynthSpec(identities=args.identities, docs_per_identity=args.docs, jitter=args.jitter,
                     handwritten_lines=args.handwritten, logos=args.logos,
                     noise=tuple(args.noise or ()), seed=cfg.seed)
    if spec.identities < 1 or spec.docs_per_identity < 1:
        raise UsageError("--identities and --docs must be positive")
    if any(v < 0 for v in spec.noise):
        raise UsageError("noise variance must be non-negative")
    m = generate_corpus(args.out, spec, cfg.binarize_median)
    print(f"wrote {len(m)} documents to {args.out}")
    return EXIT_OK


def cmd_noise(args) -> int:
    from .imaging import add_gaussian_noise
    from .retrieval.manifest import CorpusManifest, ManifestEntry, read_manifest, write_manifest
    from .retrieval.pipeline import stream_seed
    cfg = _config(args)
    if args.variance < 0:
        raise UsageError("variance must be non-negative")
    if args.image:
        save_image(args.out, add_gaussian_noise(load_image(args.image), args.variance, cfg.seed))
        return EXIT_OK
    manifest = read_manifest(args.manifest)
    out = Path(args.out)
    (out / "docs").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, e in enumerate(manifest.entries):
        seed = stream_seed(cfg.seed, f"noise-{e.doc_id}")
        p = out / "docs" / Path(e.path).name
        save_image(p, add_gaussian_noise(load_image(e.path), args.variance, seed))
        entries.append(ManifestEntry(e.doc_id, p, e.identity, e.bbox))
    write_manifest(out / "manifest.csv", CorpusManifest(entries, manifest.regions))
    print(f"wrote {len(entries)} noisy documents to {out}")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file (default: $SIGR_CONFIG)")
    common.add_argument("--seed", type=int, help="run seed (overrides the config)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value")

    p = argparse.ArgumentParser(prog="sigr", description="Signature detection and document retrieval.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="learn codebook and SVM from a labelled corpus")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="artifact directory")
    t.add_argument("--classes", help="comma-separated classes for a one-vs-rest model")
    t.add_argument("--positive", default="signature", help="class treated as signature/logo")
    t.add_argument("--train-fraction", type=float, help="train on this share of documents, keep the rest for testing")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", parents=[common], help="label the components of one page")
    d.add_argument("--doc", required=True)
    d.add_argument("--artifacts", required=True)
    d.add_argument("--out", required=True, help="component CSV")
    d.add_argument("--overlay", help="PGM with boxes around detected components")
    d.set_defaults(func=cmd_detect)

    r = sub.add_parser("retrieve", parents=[common], help="rank documents against query signatures")
    r.add_argument("--query", required=True, action="append", help="query image (repeatable)")
    r.add_argument("--manifest", required=True)
    r.add_argument("--artifacts", required=True)
    r.add_argument("--measure", choices=MEASURES, default="dtw")
    r.add_argument("--mode", choices=MODES, default="combined")
    r.add_argument("--logo", action="store_true", help="logo search (foreground features only)")
    r.add_argument("--threshold", type=float, help="drop documents whose score fails this threshold")
    r.add_argument("--out", required=True, help="directory for <query>.csv rankings")
    r.add_argument("--log-dir", help="per-document grouping logs")
    r.set_defaults(func=cmd_retrieve)

    e = sub.add_parser("evaluate", parents=[common], help="MAP, PR/ROC curves and confusion matrix")
    e.add_argument("runs", nargs="*", metavar="[IDENTITY=]RANKED_CSV",
                   help="ranked output; identity defaults to the file stem")
    e.add_argument("--manifest", required=True)
    e.add_argument("--artifacts", help="also measure detection with these artifacts")
    e.add_argument("--split", choices=("all", "train", "test"), default="all")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic signed-document corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--identities", type=int, default=20)
    s.add_argument("--docs", type=int, default=10, help="documents per identity")
    s.add_argument("--jitter", type=float, default=2.0, help="control-point jitter (pixels)")
    s.add_argument("--handwritten", type=int, default=0, help="handwritten lines per page")
    s.add_argument("--logos", type=int, default=0, help="number of distinct logos")
    s.add_argument("--noise", type=float, action="append", help="also write noisy twins at this variance")
    s.set_defaults(func=cmd_synth)

    n = sub.add_parser("noise", parents=[common], help="add Gaussian noise to an image or a corpus")
    src = n.add_mutually_exclusive_group(required=True)
    src.add_argument("--image")
    src.add_argument("--manifest")
    n.add_argument("--variance", type=float, required=True)
    n.add_argument("--out", required=True, help="output image, or directory for a corpus")
    n.set_defaults(func=cmd_noise)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"sigr: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"sigr: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        print(f"sigr: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
