"""detbench command line: gen-data, train, detect, evaluate, bench, analyze, report.

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import analysis, bench, data, evaluation
from .checkpoint import load_weights, save_weights
from .data import DataError
from .model.detector import Detector
from .runconfig import RunConfig, load_run_config
from .train import TrainingDiverged, train_head

log = logging.getLogger("detbench")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(args) -> RunConfig:
    return load_run_config(args.config) if args.config else RunConfig()


def _scenes_from_disk(images_dir, gt_path) -> tuple[list[int], list[data.Scene]]:
    gt = data.load_coco_groundtruth(gt_path)
    ids, scenes = [], []
    for img_id in sorted(gt.images):
        info = gt.images[img_id]
        path = Path(images_dir) / info.get("file_name", data.image_filename(img_id))
        if not path.exists():
            raise DataError(f"missing image {path}")
        image = data.read_ppm(path)
        g = gt.gts[img_id]
        ids.append(img_id)
        scenes.append(data.Scene(image, g.boxes, g.classes, (0, img_id)))
    return ids, scenes


def _images_from_disk(images_dir) -> dict[int, np.ndarray]:
    paths = sorted(Path(images_dir).glob("*.ppm"))
    if not paths:
        raise DataError(f"no .ppm images in {images_dir}")
    out = {}
    for p in paths:
        try:
            img_id = int(p.stem)
        except ValueError as exc:
            raise DataError(f"{p}: image file names must be integer ids") from exc
        out[img_id] = data.read_ppm(p)
    return out


# -------------------------------------------------------------- subcommands


def cmd_gen_data(args) -> int:
    rc = _config(args)
    spec = rc.dataset if args.seed is None else replace(rc.dataset, seed=args.seed)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    scenes = data.generate_dataset(spec)
    ids = list(range(1, len(scenes) + 1))
    for img_id, s in zip(ids, scenes):
        data.write_ppm(s.image, out / "images" / data.image_filename(img_id))
    data.write_coco_groundtruth(scenes, out / "gt.json", spec.classes, ids)
    print(f"wrote {len(scenes)} scenes to {out}", file=sys.stderr)
    return 0


class TrainedWeights:
    """Picklable ``cfg -> weights`` callable that trains each config's head."""

    def __init__(self, rc: RunConfig, seed: int | None = None):
        self.train = rc.train if seed is None else replace(rc.train, seed=seed)
        self.dataset = rc.dataset

    def __call__(self, cfg):
        return train_head(cfg, self.train, data.generate_dataset(self.dataset)).weights


def cmd_train(args) -> int:
    rc = _config(args)
    tcfg = rc.train if args.seed is None else replace(rc.train, seed=args.seed)
    if args.images or args.gt:
        if not (args.images and args.gt):
            raise UsageError("train: --images and --gt must be given together")
        _, scenes = _scenes_from_disk(args.images, args.gt)
    else:
        scenes = data.generate_dataset(rc.dataset)
    cfg = rc.detector
    bad = [s.image.shape for s in scenes if s.image.shape != (cfg.resolution, cfg.resolution, 3)]
    if bad:
        raise DataError(f"training images must be {cfg.resolution}x{cfg.resolution}, got {bad[0]}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    trace_path = out.with_name(out.stem + ".loss.csv")
    try:
        result = train_head(cfg, tcfg, scenes, trace_path=trace_path)
    except TrainingDiverged as exc:
        print(f"train: {exc}", file=sys.stderr)
        return 2
    save_weights(result.weights, out, {"detector": cfg.to_dict(), "train": tcfg.to_dict()})
    print(f"wrote {out} and {trace_path}", file=sys.stderr)
    return 0


def cmd_detect(args) -> int:
    for flag in ("checkpoint", "images"):
        if getattr(args, flag) is None:
            raise UsageError(f"detect: --{flag} is required")
    rc = _config(args)
    cfg = rc.detector
    weights, _ = load_weights(args.checkpoint)
    det = Detector(cfg)
    missing = [l.name for l in det.layers() if l.has_weights and f"{l.name}/kernel" not in weights]
    if missing:
        raise DataError(f"checkpoint lacks weights for {missing[:3]}")
    if args.gt:
        ids, scenes = _scenes_from_disk(args.images, args.gt)
        images = {i: s.image for i, s in zip(ids, scenes)}
    else:
        images = _images_from_disk(args.images)
    dets = {}
    for img_id, image in sorted(images.items()):
        if image.shape != (cfg.resolution, cfg.resolution, 3):
            raise DataError(f"image {img_id} must be {cfg.resolution}x{cfg.resolution}")
        dets[img_id] = det.detect(image, weights)
    data.write_coco_detections(dets, args.out)
    return 0


def cmd_evaluate(args) -> int:
    for flag in ("gt", "dets"):
        if getattr(args, flag) is None:
            raise UsageError(f"evaluate: --{flag} is required")
    gt = data.load_coco_groundtruth(args.gt)
    dets = data.load_coco_detections(args.dets, gt)
    result = evaluation.evaluate(dets, gt.gts, categories=sorted(gt.categories))
    text = json.dumps({"schema_version": 1, **result.to_dict()}, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_bench(args) -> int:
    rc = _config(args)
    configs = rc.sweep_configs()
    scenes = data.generate_dataset(rc.test_dataset)
    weights_fn = TrainedWeights(rc, args.seed)
    bench.sweep(configs, scenes, args.out, weights_fn, rc.warmup, rc.timed, args.jobs)
    return 0


def cmd_analyze(args) -> int:
    records = bench.read_records(args.records)
    if not records:
        raise DataError(f"{args.records}: no records")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    front = {r.config_id for r in analysis.pareto_frontier(records)}
    doc = {
        "schema_version": 1,
        "frontier": [r.config_id for r in analysis.pareto_frontier(records)],
        "bang_for_buck": {r.config_id: analysis.bang_for_buck(r) for r in records},
        "flops_time_ratio": analysis.flops_time_ratio(records),
        "on_frontier": {r.config_id: r.config_id in front for r in records},
    }
    finite = [r for r in records if np.isfinite([r.map, r.map50, r.map75]).all()]
    if len({r.map for r in finite}) >= 2:
        doc["fits"] = {
            k: dict(zip(("slope", "intercept", "r2"), analysis.linear_fit_r2([r.map for r in finite], [getattr(r, k) for r in finite])))
            for k in ("map50", "map75")
        }
    (out / "analysis.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return 0


def cmd_report(args) -> int:
    records = bench.read_records(args.records)
    if not records:
        raise DataError(f"{args.records}: no records")
    analysis.emit_report(records, args.out)
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="detbench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, fn, help_, flags):
        sp = sub.add_parser(name, help=help_, description=help_)
        for flag, kw in flags:
            sp.add_argument(flag, **kw)
        sp.set_defaults(fn=fn)

    config = ("--config", {"help": "JSON run config (schema_version 1); built-in defaults when omitted"})
    seed = ("--seed", {"type": int, "default": None, "help": "override the config seed (default: the config's, 0)"})

    def out(help_):
        return ("--out", {"required": True, "help": help_})

    add("gen-data", cmd_gen_data, "render synthetic scenes (PPM) and COCO-JSON groundtruth", [config, seed, out("output directory")])
    add(
        "train",
        cmd_train,
        "train the detector head; writes a checkpoint, its manifest and a loss CSV",
        [
            config,
            seed,
            ("--images", {"help": "directory of PPM training images (default: generate from config)"}),
            ("--gt", {"help": "COCO-JSON groundtruth for --images"}),
            out("checkpoint path (.bin)"),
        ],
    )
    add(
        "detect",
        cmd_detect,
        "run a trained detector over a directory of PPM images; writes COCO-JSON detections",
        [
            config,
            ("--checkpoint", {"help": "weights written by train"}),
            ("--images", {"help": "directory of PPM images named <image id>.ppm"}),
            ("--gt", {"help": "optional COCO-JSON groundtruth naming the images"}),
            out("detections JSON path"),
        ],
    )
    add(
        "evaluate",
        cmd_evaluate,
        "COCO-style evaluation of detections against groundtruth",
        [
            ("--gt", {"help": "COCO-JSON groundtruth"}),
            ("--dets", {"help": "COCO-JSON detections"}),
            ("--out", {"help": "result JSON path (default: standard output)"}),
        ],
    )
    add(
        "bench",
        cmd_bench,
        "train, evaluate, time and cost every sweep config; appends rows to a records CSV",
        [
            config,
            seed,
            ("--jobs", {"type": int, "default": 1, "help": "worker processes for training/evaluation (default 1)"}),
            out("records CSV path (resumed if it exists)"),
        ],
    )
    add(
        "analyze",
        cmd_analyze,
        "frontier, bang-for-buck, FLOPs/time ratios and metric fits as JSON",
        [("--records", {"required": True, "help": "records CSV"}), out("output directory")],
    )
    add(
        "report",
        cmd_report,
        "SVG scatter plots and companion CSV tables",
        [("--records", {"required": True, "help": "records CSV"}), out("output directory")],
    )
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("detbench: a subcommand is required (see --help)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
        with threadpool_limits(1):
            return args.fn(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DataError, bench.PartialRecordError, FileNotFoundError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
