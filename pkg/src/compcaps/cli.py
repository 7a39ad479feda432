"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import audio, config, data, metrics, pipeline, plotting, synth
from .config import SynthSpec, TrainConfig
from .errors import CompCapsError, DomainError, FormatError, NonFiniteError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load_config(path) -> TrainConfig:
    return config.from_file(TrainConfig, path) if path else TrainConfig()


def cmd_synth(args) -> int:
    spec = config.from_file(SynthSpec, args.spec) if args.spec else SynthSpec()
    m = synth.synth_corpus(spec, args.seed, args.out)
    print(f"wrote {len(m)} clips, manifest.csv, train.csv and test.csv to {args.out}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    cfg = _load_config(args.config)
    manifest = data.load_manifest(args.manifest)
    feats = pipeline.featurize(manifest, cfg)
    out = Path(args.out)
    rows = []
    for rec, f in zip(manifest.records, feats):
        target = out / Path(rec.path).with_suffix(".npz")
        target.parent.mkdir(parents=True, exist_ok=True)
        np.savez(target, mfcc=f.mfcc, pitch=f.pitch, energy=f.energy)
        rows.append((rec.path, str(target.relative_to(out)), f.mfcc.shape[0]))
    with open(out / "features.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "features", "frames"])
        w.writerows(rows)
    print(f"featurized {len(rows)} clips into {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    manifest = data.load_manifest(args.manifest)
    model = pipeline.train(cfg, manifest, compression=not args.no_compression)
    blob = model.save(args.out)
    rep = pipeline.compression_summary(model)
    print(f"checkpoint {args.out} ({len(blob)} bytes); eliminated coordinates {list(model.mask.eliminated)}; "
          f"transform parameters {rep['params_after']}/{rep['params_before']} (ratio {rep['ratio']:.4f})")
    if args.history:
        with open(args.history, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["stage", "epoch", "loss", "accuracy", "seconds"])
            w.writeheader()
            w.writerows(model.history)
    return EXIT_OK


def write_report(ev: pipeline.Evaluation, model: pipeline.Model, out) -> list[Path]:
    """CSV tables, a text summary and PNG figures for one evaluation."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    labels = list(ev.labels)
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)

    put("confusion.csv", ev.confusion.to_csv(labels))
    put("confusion_percent.csv", ev.confusion.to_csv(labels, percent=True))
    put("metrics.csv", ev.report.to_csv(labels))
    lines = ["sample,true,pred," + ",".join(labels)]
    for i, (t, p, s) in enumerate(zip(ev.y_true, ev.y_pred, ev.scores)):
        lines.append(f"{i},{labels[t]},{labels[p]}," + ",".join(f"{v:.6f}" for v in s))
    put("scores.csv", "\n".join(lines) + "\n")
    roc_lines = ["class,fpr,tpr"]
    for k, name in enumerate(labels):
        if np.any(ev.y_true == k) and np.any(ev.y_true != k):
            for fpr, tpr in metrics.roc_points(ev.scores, ev.y_true, k):
                roc_lines.append(f"{name},{fpr:.6f},{tpr:.6f}")
    put("roc.csv", "\n".join(roc_lines) + "\n")
    rep = pipeline.compression_summary(model)
    put("summary.txt", f"samples = {ev.confusion.total}\naccuracy = {ev.accuracy:.4f}\n"
                       f"macro precision = {ev.report.macro_precision:.4f}\n"
                       f"macro recall = {ev.report.macro_recall:.4f}\n"
                       f"eliminated coordinates = {list(model.mask.eliminated)}\n"
                       f"transform parameter ratio = {rep['ratio']:.4f}\n")
    written.append(plotting.confusion_heatmap(ev.confusion, labels, out / "confusion.png"))
    written.append(plotting.roc_curves(ev.scores, ev.y_true, labels, out / "roc.png"))
    if model.history:
        written.append(plotting.training_curves(model.history, out / "training.png"))
    return written


def cmd_evaluate(args) -> int:
    model = pipeline.Model.load(args.ckpt)
    manifest = data.load_manifest(args.manifest)
    ev = pipeline.evaluate(model, manifest)
    files = write_report(ev, model, args.report)
    print(f"accuracy {ev.accuracy:.4f} on {ev.confusion.total} samples; wrote {len(files)} files to {args.report}")
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    cfg = _load_config(args.config)
    grid = pipeline.parse_grid(Path(args.grid).read_text(encoding="utf-8"), args.grid)
    manifest = data.load_manifest(args.manifest)
    best, rows = pipeline.grid_search(grid, cfg, manifest, args.folds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cv.csv").write_text(pipeline.grid_table_csv(rows), encoding="utf-8")
    (out / "best.cfg").write_text(config.echo(best), encoding="utf-8")
    top = max(r["mean"] for r in rows)
    print(f"{len(rows)} candidates; best mean accuracy {top:.4f}; best config in {out / 'best.cfg'}")
    return EXIT_OK


def _read_runs(path) -> list[float]:
    text = Path(path).read_text(encoding="utf-8").replace(",", " ")
    try:
        return [float(v) for v in text.split()]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def cmd_compare(args) -> int:
    res = pipeline.compare_runs(_read_runs(args.runs_a), _read_runs(args.runs_b), args.acc_a, args.acc_b)
    print(res.text, end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = pipeline.Model.load(args.ckpt)
    clip = audio.read_wav(args.wav)
    inputs = model.inputs_for([pipeline.featurize_clip(clip, model.config)])
    scores = model.scores(inputs)[0]
    k = int(np.argmax(scores))
    print(model.labels[k])
    for name, s in zip(model.labels, scores):
        print(f"  {name}: {s:.4f}")
    return EXIT_OK


def cmd_baselines(args) -> int:
    model = pipeline.Model.load(args.ckpt)
    train_m, test_m = data.load_manifest(args.train), data.load_manifest(args.test)
    tr, te = pipeline.featurize(train_m, model.config), pipeline.featurize(test_m, model.config)
    for name in ("knn", "nb", "mlp"):
        acc = pipeline.baseline_accuracy(name, model, tr, train_m, te, test_m)
        print(f"{name}: {acc:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="compcaps", description="Speech emotion recognition with compressed capsule networks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--spec", help="key=value corpus spec (defaults if omitted)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("featurize", help="extract features for every clip in a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train", help="train and write a checkpoint")
    s.add_argument("--config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-compression", action="store_true", help="skip mask calibration")
    s.add_argument("--history", help="write per-epoch CSV here")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score a manifest and write CSV and PNG reports")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gridsearch", help="speaker-fold cross-validated grid search")
    s.add_argument("--grid", required=True)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gridsearch)

    s = sub.add_parser("compare", help="t statistic and relative improvement between two sets of runs")
    s.add_argument("--runs-a", required=True)
    s.add_argument("--runs-b", required=True)
    s.add_argument("--acc-a", type=float)
    s.add_argument("--acc-b", type=float)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("predict", help="classify one WAV file")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--wav", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("baselines", help="KNN, naive Bayes and MLP accuracies on pooled features")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.set_defaults(func=cmd_baselines)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"compcaps: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", UserWarning)
    try:
        return args.func(args)
    except (NonFiniteError, DomainError, FloatingPointError) as exc:
        print(f"compcaps: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CompCapsError, OSError, IndexError) as exc:
        print(f"compcaps: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
