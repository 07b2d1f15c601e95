"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import cascade as cas
from .evaluation import evaluate_batch, write_report_csv, write_report_json
from .forest import TrainConfig
from .postprocess import FilterConfig, write_sweep_csv
from .raster import (DimensionMismatchError, FormatError, Roi, load_depth, load_manifest,
                     read_manifest, save_labels, save_probability)
from .synth import generate_corpus
from .training import train_forest

log = logging.getLogger("handseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------
# Training configuration
# ---------------------------------------------------------------------
def read_config_file(path: str | Path) -> dict:
    """``key = value`` lines, optionally under a ``[train]`` section."""
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        try:
            parser.read_string(text, source=str(path))
        except configparser.MissingSectionHeaderError:
            parser.read_string("[train]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not parser.has_section("train"):
        raise FormatError(f"{path}: no [train] section")
    return dict(parser.items("train"))


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training (overrides --config)")
    for name, typ in TrainConfig.field_types().items():
        flag = "--" + name.replace("_", "-")
        g.add_argument(flag, dest=f"cfg_{name}", type=typ, default=None, metavar=typ.__name__.upper())


def build_config(args) -> TrainConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in TrainConfig.field_types():
        v = getattr(args, f"cfg_{name}", None)
        if v is not None:
            values[name] = v
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid training configuration: {exc}") from exc


def read_roi_file(path: str | Path, manifest: str | Path) -> list[list[Roi]]:
    """``<depth_path>\\t<x0>\\t<y0>\\t<w>\\t<h>`` lines, several per image allowed.

    Paths resolve against the ROI file's directory and are matched to the
    manifest's depth entries; images without a line get no ROI.
    """
    base = Path(path).parent
    by_path: dict[Path, list[Roi]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\r\n").split("\t")
            if len(parts) != 5:
                raise FormatError(f"{path}:{lineno}: expected '<depth>\\t<x0>\\t<y0>\\t<w>\\t<h>'")
            try:
                roi = Roi(*(int(v) for v in parts[1:]))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            p = Path(parts[0])
            key = (p if p.is_absolute() else base / p).resolve()
            by_path.setdefault(key, []).append(roi)
    return [cas.merge_rois(by_path.get(Path(d).resolve(), [])) for d, _ in read_manifest(manifest)]


# ---------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------
def cmd_synth(args) -> int:
    if args.n < 3:
        raise UsageError("--n must be at least 3")
    manifests = generate_corpus(args.n, args.out, seed=args.seed, width=args.width, height=args.height)
    for name, path in manifests.items():
        print(f"{name}\t{path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = build_config(args)
    dataset = load_manifest(args.manifest)
    if args.stage == 1:
        forest = train_forest(dataset, None, cfg)
        model = cas.CascadeModel(forest, None, boundary1=args.boundary1, roi_margin=args.margin,
                                 min_blob_area=args.min_blob_area)
    else:
        base = cas.load_model(args.stage1_model) if args.stage1_model else None
        if args.rois:
            rois = read_roi_file(args.rois, args.manifest)
        elif args.gt_rois:
            margin = base.roi_margin if base else args.margin
            rois = [cas.ground_truth_rois(p.labels, margin) for p in dataset]
        elif base is not None and base.stage1 is not None:
            rois = cas.stage2_training_rois(base.stage1, dataset, base.boundary1, base.roi_margin,
                                            base.min_blob_area, base.stage1_stride)
        else:
            raise UsageError("stage 2 needs --stage1-model, --gt-rois or --rois")
        forest = train_forest(dataset, rois, cfg)
        if base is not None:
            model = replace(base, stage2=forest)
        else:
            model = cas.CascadeModel(None, forest, boundary1=args.boundary1, roi_margin=args.margin,
                                     min_blob_area=args.min_blob_area)
    cas.save_model(model, args.out)
    return EXIT_OK


def cmd_train_cascade(args) -> int:
    cfg = build_config(args)
    train = load_manifest(args.manifest)
    val = load_manifest(args.val_manifest) if args.val_manifest else None
    model, sweep = cas.train_cascade(
        train, val, cfg, boundary1=args.boundary1, roi_margin=args.margin,
        min_blob_area=args.min_blob_area, filter=None if args.no_filter else FilterConfig(),
        gt_rois=args.gt_rois,
    )
    cas.save_model(model, args.out)
    if sweep is not None:
        print(f"boundary2={sweep.best_boundary:g} f1={sweep.best_f1:.6f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not 0 < args.step < 0.5:
        raise UsageError("--step must lie in (0, 0.5)")
    model = cas.load_model(args.model)
    dataset = load_manifest(args.manifest)
    result = cas.sweep_stage(model, dataset, args.stage, args.step, use_filter=not args.no_filter)
    write_sweep_csv(result, args.out)
    if args.stage == 1:
        model.boundary1 = result.best_boundary
    else:
        model.boundary2 = result.best_boundary
    cas.save_model(model, args.model)
    print(f"boundary{args.stage}={result.best_boundary:g} f1={result.best_f1:.6f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = cas.load_model(args.model)
    depth = load_depth(args.depth)
    prob, mask, rois = cas.run_cascade(model, depth, use_filter=not args.no_filter)
    save_labels(mask, args.out_mask)
    if args.out_prob:
        save_probability(prob, args.out_prob)
    for r in rois:
        print(f"roi\t{r.x0}\t{r.y0}\t{r.w}\t{r.h}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = cas.load_model(args.model)
    entries = read_manifest(args.manifest)
    dataset = load_manifest(args.manifest)
    names = [Path(d).name for d, _ in entries]
    report = evaluate_batch(model, dataset, use_filter=not args.no_filter, names=names)
    write_report_csv(report, args.report, timing=not args.no_timing)
    if args.json:
        write_report_json(report, args.json)
    s, t = report.scores, report.timing["image_ms"]
    print(f"precision={s.precision:.6f} recall={s.recall:.6f} f1={s.f1:.6f} "
          f"mean_ms={t['mean']:.3f} median_ms={t['median']:.3f} p95_ms={t['p95']:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="handseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic train/val/test corpus")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=512)
    s.add_argument("--height", type=int, default=424)
    s.set_defaults(func=cmd_synth)

    def cascade_flags(q):
        q.add_argument("--boundary1", type=float, default=0.5)
        q.add_argument("--margin", type=int, default=20, help="ROI margin in pixels")
        q.add_argument("--min-blob-area", type=int, default=50)

    t = sub.add_parser("train", help="train one stage")
    t.add_argument("--stage", type=int, choices=(1, 2), required=True)
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--rois", help="ROI file for stage 2")
    t.add_argument("--stage1-model", help="model whose stage 1 supplies stage-2 ROIs")
    t.add_argument("--gt-rois", action="store_true", help="train stage 2 in ground-truth boxes")
    cascade_flags(t)
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("train-cascade", help="train both stages")
    c.add_argument("--manifest", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--config")
    c.add_argument("--val-manifest", help="sweep the stage-2 boundary on this split")
    c.add_argument("--gt-rois", action="store_true")
    c.add_argument("--no-filter", action="store_true")
    cascade_flags(c)
    _add_train_flags(c)
    c.set_defaults(func=cmd_train_cascade)

    w = sub.add_parser("sweep", help="search a decision boundary and store it in the model")
    w.add_argument("--model", required=True)
    w.add_argument("--manifest", required=True)
    w.add_argument("--stage", type=int, choices=(1, 2), required=True)
    w.add_argument("--step", type=float, default=0.01)
    w.add_argument("--out", required=True)
    w.add_argument("--no-filter", action="store_true")
    w.set_defaults(func=cmd_sweep)

    i = sub.add_parser("infer", help="segment one depth map")
    i.add_argument("--model", required=True)
    i.add_argument("--depth", required=True)
    i.add_argument("--out-mask", required=True)
    i.add_argument("--out-prob")
    i.add_argument("--no-filter", action="store_true")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score a model on a manifest")
    e.add_argument("--model", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--json", help="also write a structured JSON report")
    e.add_argument("--no-filter", action="store_true")
    e.add_argument("--no-timing", action="store_true", help="leave the ms column empty")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"handseg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DimensionMismatchError, cas.ModelFormatError, OSError) as exc:
        print(f"handseg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"handseg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"handseg: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
