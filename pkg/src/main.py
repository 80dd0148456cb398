"""
Command-line entry point: python -m src.main <subcommand> [flags]

  assign  label every anchor of every image (fixed thresholds or ATSS)
  stats   MOB-ratio histogram of the ground truths
  hist2d  joint histogram of two proximity measures over anchor x gt pairs
  check   integral-image GmaIoU vs brute force, plus the P=B >= P=M ordering
  bench   brute force vs integral-image timing

Exit codes: 0 success, 1 bad flags / unreadable or invalid input, 2 check failure.

Output schemas
  assign  JSON {"run": {...}, "images": [{"image_id", "width", "height",
          "ground_truths": [...], "counts": {...}, "positives_per_gt": [...],
          "anchors": [{"label", "score", "gt_index"?}, ...]}], "summary": {...}}
  stats   CSV bin_lo,bin_hi,count,cumulative_fraction
  hist2d  CSV x_lo,x_hi,y_lo,y_hi,count (non-empty cells only)
  bench   JSON report (with --output)
"""
import argparse
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, TypeVar

import numpy as np

from .assign import (
    ANCHOR_PRESETS,
    MEASURE_RANGES,
    MEASURES,
    THRESHOLD_PRESETS,
    AnchorLevel,
    AtssConfig,
    FixedThresholdConfig,
    Label,
    assign_atss,
    assign_fixed,
    generate_anchors,
    load_anchor_config,
)
from .gmaiou import GmaMode, histogram2d_counts, mob_ratio
from .ingest import BOX_SOURCES, DatasetImage, load_annotations, map_dataset
from .oracle import CheckReport, benchmark_pairing, run_dataset_checks, run_random_checks
from .storage import HIST2D_HEADER, MOB_HISTOGRAM_HEADER, write_csv, write_json, write_json_stream
from .utils import ConfigError, GmaError, load_config, resolve_threads

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2

CONFIG_KEYS = ("anchor_config", "pos_thr", "neg_thr", "k", "bins", "hist2d_bins", "threads", "seed", "gt_box")
DEFAULT_ANCHORS = {"fixed": "yolact-550", "atss": "atss-550"}
MAX_REPORTED_VIOLATIONS = 20

T = TypeVar("T")


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so bad flags map to exit code 1."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class RunConfig:
    command: str
    threads: int
    verbose: bool = False
    annotations: Optional[str] = None
    output: Optional[str] = None
    gt_box: str = "tight"
    anchor_config: Optional[str] = None
    # assign
    assigner: str = "fixed"
    measure: str = "iou"
    k: int = 9
    pos_thr: float = 0.5
    neg_thr: float = 0.4
    # stats / hist2d
    bins: int = 20
    measure_x: str = "iou"
    measure_y: str = "gmaiou-b"
    # check / bench
    random_trials: Optional[int] = None
    seed: int = 0
    samples: int = 200
    corrupt_integral: bool = False
    anchors: int = 10000
    gts: int = 50
    mask_size: int = 128
    repeats: int = 5
    mode: str = "box"

    def validate(self):
        if self.gt_box not in BOX_SOURCES:
            raise ConfigError(f"gt_box must be one of {BOX_SOURCES}, got {self.gt_box!r}")
        if self.command == "assign":
            # constructing the configs runs their own range checks
            FixedThresholdConfig(pos_thr=self.pos_thr, neg_thr=self.neg_thr)
            AtssConfig(k=self.k, measure=self.measure)
        if self.command in ("stats", "hist2d") and self.bins < 1:
            raise ConfigError(f"--bins must be >= 1, got {self.bins}")
        if self.command == "check":
            if self.annotations is None and self.random_trials is None:
                raise ConfigError("check needs --annotations or --random-trials")
            if self.random_trials is not None and self.random_trials < 1:
                raise ConfigError(f"--random-trials must be >= 1, got {self.random_trials}")
            if self.samples < 1:
                raise ConfigError(f"--samples must be >= 1, got {self.samples}")
        if self.command == "bench":
            for name in ("anchors", "gts", "mask_size", "repeats"):
                if getattr(self, name) < 1:
                    raise ConfigError(f"--{name.replace('_', '-')} must be >= 1, got {getattr(self, name)}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="YAML file with run defaults (see config.example.yaml)")
    common.add_argument("--threads", type=int, default=None, help="Worker threads for per-image work (0 = all cores)")
    common.add_argument("--verbose", action="store_true")

    data = _Parser(add_help=False)
    data.add_argument("--annotations", default=None, help="COCO-style instance annotation JSON")
    data.add_argument("--gt-box", choices=BOX_SOURCES, default=None,
                      help="Ground-truth box: tight box of the mask, or the stored bbox widened to cover it")

    anchors = _Parser(add_help=False)
    anchors.add_argument("--anchor-config", default=None,
                         help=f"Anchor preset ({', '.join(sorted(ANCHOR_PRESETS))}) or a YAML/JSON level file")

    ap = _Parser(prog="gmaiou", description="GmaIoU anchor assignment, statistics, checks and benchmarks")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assign", parents=[common, data, anchors], help="Label anchors of every image")
    p.add_argument("--assigner", choices=("fixed", "atss"), default="fixed")
    p.add_argument("--measure", choices=sorted(MEASURES), default="iou")
    p.add_argument("--k", type=int, default=None, help="ATSS candidates per pyramid level (default 9)")
    p.add_argument("--thresholds", choices=sorted(THRESHOLD_PRESETS), default=None,
                   help="Fixed-threshold preset; --pos-thr/--neg-thr override it")
    p.add_argument("--pos-thr", type=float, default=None, help="Positive if best score >= this (default 0.5)")
    p.add_argument("--neg-thr", type=float, default=None, help="Negative if best score < this (default 0.4)")
    p.add_argument("--output", required=True)

    p = sub.add_parser("stats", parents=[common, data], help="MOB-ratio histogram (CSV)")
    p.add_argument("--bins", type=int, default=None, help="Histogram bins over [0, 1] (default 20)")
    p.add_argument("--output", required=True)

    p = sub.add_parser("hist2d", parents=[common, data, anchors], help="Joint measure histogram (CSV)")
    p.add_argument("--measure-x", choices=sorted(MEASURES), required=True)
    p.add_argument("--measure-y", choices=sorted(MEASURES), required=True)
    p.add_argument("--bins", type=int, default=None, help="Bins per axis (default 25)")
    p.add_argument("--output", required=True)

    p = sub.add_parser("check", parents=[common, data, anchors], help="Audit the fast path against brute force")
    p.add_argument("--random-trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--samples", type=int, default=200, help="Anchors sampled per ground truth with --annotations")
    p.add_argument("--corrupt-integral", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("bench", parents=[common], help="Brute force vs integral image timing")
    p.add_argument("--anchors", type=int, default=10000)
    p.add_argument("--gts", type=int, default=50)
    p.add_argument("--mask-size", type=int, default=128)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=[m.value for m in GmaMode], default="box")
    p.add_argument("--output", default=None)
    return ap


def _from_config(cfg: Dict[str, Any], key: str, default, kind: type):
    """Typed config-file value; a bad value is a ConfigError naming the key."""
    value = cfg.get(key)
    if value is None:
        return default
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"config key '{key}' must be a string, got {value!r}")
        return value
    if isinstance(value, bool) or (kind is int and isinstance(value, float) and not value.is_integer()):
        raise ConfigError(f"config key '{key}' must be {kind.__name__}, got {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key '{key}' must be {kind.__name__}, got {value!r}") from None


def _pick(flag, cfg: Dict[str, Any], key: str, default, kind: type = int):
    # flag > config file > built-in default; argparse has already typed the flag
    if flag is not None:
        return flag
    return _from_config(cfg, key, default, kind)


def build_run_config(args: argparse.Namespace, cfg: Dict[str, Any]) -> RunConfig:
    unknown = sorted(set(cfg) - set(CONFIG_KEYS))
    if unknown:
        logger.warning("[CONFIG] ignoring unknown config keys: %s", ", ".join(unknown))

    cmd = args.command
    opts = vars(args)
    fields: Dict[str, Any] = {
        "command": cmd,
        "threads": resolve_threads(_pick(opts.get("threads"), cfg, "threads", 0)),
        "verbose": bool(opts.get("verbose", False)),
        "annotations": opts.get("annotations"),
        "output": opts.get("output"),
        "gt_box": _pick(opts.get("gt_box"), cfg, "gt_box", "tight", str),
        "seed": _pick(opts.get("seed"), cfg, "seed", 0),
    }
    if cmd in ("assign", "hist2d", "check"):
        fields["anchor_config"] = _pick(opts.get("anchor_config"), cfg, "anchor_config", None, str)
    if cmd == "assign":
        preset = THRESHOLD_PRESETS.get(args.thresholds) if args.thresholds else None
        fields.update(
            assigner=args.assigner,
            measure=args.measure,
            k=_pick(args.k, cfg, "k", 9),
            pos_thr=_pick(args.pos_thr if args.pos_thr is not None else preset.pos_thr if preset else None,
                          cfg, "pos_thr", 0.5, float),
            neg_thr=_pick(args.neg_thr if args.neg_thr is not None else preset.neg_thr if preset else None,
                          cfg, "neg_thr", 0.4, float),
        )
    elif cmd == "stats":
        fields["bins"] = _pick(args.bins, cfg, "bins", 20)
    elif cmd == "hist2d":
        fields.update(measure_x=args.measure_x, measure_y=args.measure_y,
                      bins=_pick(args.bins, cfg, "hist2d_bins", 25))
    elif cmd == "check":
        fields.update(random_trials=args.random_trials, samples=args.samples,
                      corrupt_integral=args.corrupt_integral)
    elif cmd == "bench":
        fields.update(anchors=args.anchors, gts=args.gts, mask_size=args.mask_size,
                      repeats=args.repeats, mode=args.mode)

    run = RunConfig(**fields)
    run.validate()
    return run


# -- shared plumbing ---------------------------------------------------------

def _map_images(run: RunConfig, fn: Callable[[DatasetImage], T]) -> Iterator[T]:
    """fn over every image of --annotations, in image-id order, one window of images in memory at a time."""
    if not run.annotations:
        raise ConfigError(f"{run.command} needs --annotations")
    parsed = load_annotations(run.annotations)
    if parsed.skipped:
        print(f"[INGEST] skipped {parsed.skipped} annotation(s); see warnings above")
    return map_dataset(parsed, fn, box_source=run.gt_box, threads=run.threads)


def _levels(run: RunConfig, default: str) -> Sequence[AnchorLevel]:
    return load_anchor_config(run.anchor_config or default)


# -- subcommands -------------------------------------------------------------

def _assign_image(image: DatasetImage, levels: Sequence[AnchorLevel], run: RunConfig) -> Dict[str, Any]:
    grid = generate_anchors(image.width, image.height, levels)
    gts = list(image.ground_truths)
    if run.assigner == "fixed":
        result = assign_fixed(grid, gts, FixedThresholdConfig(pos_thr=run.pos_thr, neg_thr=run.neg_thr), run.measure)
    else:
        result = assign_atss(grid, gts, AtssConfig(k=run.k, measure=run.measure))

    anchors = []
    for label, gt_index, score in zip(result.labels.tolist(), result.gt_index.tolist(), result.scores.tolist()):
        entry = {"label": Label(label).name.lower(), "score": score}
        if label == Label.POSITIVE:
            entry["gt_index"] = gt_index
        anchors.append(entry)

    return {
        "image_id": image.id,
        "width": image.width,
        "height": image.height,
        "ground_truths": [
            {"annotation_id": gt.annotation_id, "category_id": gt.class_id, "box": list(gt.box.as_tuple()), "area": gt.area}
            for gt in gts
        ],
        "counts": result.counts,
        "positives_per_gt": result.positives_per_gt(len(gts)),
        "anchors": anchors,
    }


def cmd_assign(run: RunConfig) -> int:
    anchor_config = run.anchor_config or DEFAULT_ANCHORS[run.assigner]
    levels = load_anchor_config(anchor_config)
    per_image = _map_images(run, lambda img: _assign_image(img, levels, run))

    summary = {"images": 0, "anchors": 0, "positive": 0, "negative": 0, "ignore": 0,
               "ground_truths": 0, "gts_without_positive": 0}

    def tallied():
        for rec in per_image:
            summary["images"] += 1
            summary["anchors"] += len(rec["anchors"])
            for key in ("positive", "negative", "ignore"):
                summary[key] += rec["counts"][key]
            summary["ground_truths"] += len(rec["ground_truths"])
            summary["gts_without_positive"] += sum(1 for n in rec["positives_per_gt"] if n == 0)
            yield rec

    run_info: Dict[str, Any] = {"assigner": run.assigner, "measure": run.measure,
                                "anchor_config": anchor_config, "gt_box": run.gt_box}
    if run.assigner == "fixed":
        run_info.update(pos_thr=run.pos_thr, neg_thr=run.neg_thr)
    else:
        run_info["k"] = run.k
    # "summary" sorts after "images", so it is written once every image is tallied
    write_json_stream(run.output, {"run": run_info, "summary": summary}, "images", tallied())

    print(f"[ASSIGN] {run.assigner}/{run.measure}: {summary['images']} images, {summary['anchors']} anchors")
    print(f"[ASSIGN] positive={summary['positive']} negative={summary['negative']} ignore={summary['ignore']}")
    print(f"[ASSIGN] ground truths without a positive anchor: {summary['gts_without_positive']}/{summary['ground_truths']}")
    print(f"[ASSIGN] wrote {run.output}")
    return EXIT_OK


def mob_histogram(values: Sequence[float], bins: int) -> List[tuple]:
    """Rows (bin_lo, bin_hi, count, cumulative_fraction) over [0, 1]; 1.0 lands in the top bin."""
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64), bins=bins, range=(0.0, 1.0))
    total = int(counts.sum())
    running = np.cumsum(counts)
    rows = []
    for i, c in enumerate(counts.tolist()):
        frac = float(running[i]) / total if total else 0.0
        rows.append((round(float(edges[i]), 10), round(float(edges[i + 1]), 10), int(c), frac))
    return rows


def cmd_stats(run: RunConfig) -> int:
    per_image = _map_images(run, lambda img: [mob_ratio(gt.box, gt) for gt in img.ground_truths])
    values = [v for ratios in per_image for v in ratios]
    write_csv(run.output, MOB_HISTOGRAM_HEADER, mob_histogram(values, run.bins))

    below = sum(1 for v in values if v < 0.5)
    frac = below / len(values) if values else 0.0
    print(f"[STATS] {len(values)} ground truths, {run.bins} bins")
    print(f"[STATS] MOB < 0.5: {below}/{len(values)} ({frac:.2%})")
    print(f"[STATS] wrote {run.output}")
    return EXIT_OK


def hist2d_rows(counts: np.ndarray, x_range, y_range) -> List[tuple]:
    bins = counts.shape[0]
    xe = np.linspace(x_range[0], x_range[1], bins + 1)
    ye = np.linspace(y_range[0], y_range[1], bins + 1)
    rows = []
    for i, j in zip(*np.nonzero(counts)):
        rows.append((round(float(xe[i]), 10), round(float(xe[i + 1]), 10),
                     round(float(ye[j]), 10), round(float(ye[j + 1]), 10), int(counts[i, j])))
    return rows


def cmd_hist2d(run: RunConfig) -> int:
    levels = _levels(run, "yolact-550")
    x_range, y_range = MEASURE_RANGES[run.measure_x], MEASURE_RANGES[run.measure_y]
    fx, fy = MEASURES[run.measure_x], MEASURES[run.measure_y]

    def image_counts(image: DatasetImage) -> np.ndarray:
        gts = list(image.ground_truths)
        if not gts:
            return np.zeros((run.bins, run.bins), dtype=np.int64)
        snapped = generate_anchors(image.width, image.height, levels).snapped
        return histogram2d_counts(fx(snapped, gts), fy(snapped, gts), run.bins, x_range, y_range)

    total = np.zeros((run.bins, run.bins), dtype=np.int64)
    n_images = 0
    for counts in _map_images(run, image_counts):
        total += counts
        n_images += 1
    write_csv(run.output, HIST2D_HEADER, hist2d_rows(total, x_range, y_range))

    print(f"[HIST2D] {run.measure_x} x {run.measure_y}: {int(total.sum())} anchor/gt pairs in {n_images} images")
    print(f"[HIST2D] wrote {run.output}")
    return EXIT_OK


def _print_report(report: CheckReport):
    print(f"[CHECK] pairs checked: {report.pairs_checked}")
    print(f"[CHECK] ordering witnesses: strict={report.strict_witnesses} equal={report.equality_witnesses}")
    if report.ok:
        print("[CHECK] OK: integral-image results match brute force")
        return
    print(f"[CHECK] FAILED: {len(report.violations)} violation(s)")
    for v in report.violations[:MAX_REPORTED_VIOLATIONS]:
        print(f"  {v.describe()}")
    if len(report.violations) > MAX_REPORTED_VIOLATIONS:
        print(f"  ... {len(report.violations) - MAX_REPORTED_VIOLATIONS} more")


def cmd_check(run: RunConfig) -> int:
    report = CheckReport()
    if run.annotations:
        levels = _levels(run, "yolact-550")
        pairs = _map_images(
            run, lambda img: (list(img.ground_truths), generate_anchors(img.width, img.height, levels).snapped))
        dataset = run_dataset_checks(pairs, samples=run.samples, seed=run.seed, corrupt_integral=run.corrupt_integral)
        report.merge(dataset)
    if run.random_trials is not None:
        randoms = run_random_checks(run.random_trials, seed=run.seed, corrupt_integral=run.corrupt_integral)
        report.merge(randoms)
    _print_report(report)
    return EXIT_OK if report.ok else EXIT_CHECK_FAILED


def cmd_bench(run: RunConfig) -> int:
    report = benchmark_pairing(run.anchors, run.gts, run.mask_size, run.repeats, seed=run.seed, mode=GmaMode(run.mode))
    print(f"[BENCH] {report.n_anchors} anchors x {report.n_gts} gts, {report.mask_size}px masks, "
          f"mode={report.mode}, {len(report.brute_ns)} repeat(s)")
    print(f"[BENCH] brute force median: {report.brute_median_ns / 1e6:.1f} ms")
    print(f"[BENCH] integral image median: {report.fast_median_ns / 1e6:.1f} ms")
    print(f"[BENCH] speedup: {report.speedup:.1f}x")
    if run.output:
        write_json(run.output, report.to_dict())
        print(f"[BENCH] wrote {run.output}")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "assign": cmd_assign,
    "stats": cmd_stats,
    "hist2d": cmd_hist2d,
    "check": cmd_check,
    "bench": cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format='%(asctime)s - %(levelname)s - %(message)s',
        )
        run = build_run_config(args, load_config(args.config))
        logger.debug("[CONFIG] %s", run)
        return COMMANDS[run.command](run)
    except (GmaError, OSError) as e:
        logger.error("[ERROR] %s", e)
        print(f"[ERROR] {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
