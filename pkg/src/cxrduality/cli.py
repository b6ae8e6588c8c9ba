"""Command-line front end.

    cxrduality [--config FILE] [--seed N] [--threads N] --out DIR <command> ...

Commands: phantom, drr, score, monitor, eval. Exit codes: 0 success, 1 usage,
2 data error, 3 internal error. A config file holds flat ``key=value`` lines
whose keys are option names (dashes or underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import images, metrics, monitor, pipeline
from .mapalgebra import BBox, LOCALIZATION_THRESHOLD
from .monitor import ProfileError
from .projector import AttenuationTable, DetectorGeometry, Spectrum
from .severity import records_to_csv, volume_ratio
from .volume import PhantomSpec, VolumeFormatError, generate_phantom, load_mask, load_volume, save_mask, save_volume

log = logging.getLogger("cxrduality")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DETECTION_THRESHOLD = 0.62


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _unit_interval(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} not in [0, 1]")
    return value


def read_config(path) -> dict[str, str]:
    entries = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        entries[key.strip().replace("-", "_")] = value.strip()
    return entries


# --------------------------------------------------------------------------
# output handling
# --------------------------------------------------------------------------


class Staging:
    """Collect outputs in a hidden dir inside ``out`` and publish them only on success."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.created = not self.out.exists()
        self.out.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=".staging.", dir=self.out))

    def path(self, name: str) -> Path:
        return self.dir / name

    def commit(self) -> None:
        for item in sorted(self.dir.iterdir()):
            os.replace(item, self.out / item.name)
        self.dir.rmdir()

    def abort(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)
        if self.created:
            try:
                self.out.rmdir()
            except OSError:
                pass


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_phantom(args, stage: Staging) -> None:
    spec = PhantomSpec.load(args.spec)
    stop = spec.time_points if args.t_stop is None else args.t_stop
    times = range(args.t_start, stop)
    if not times:
        raise ValueError("empty time range")
    for t in times:
        volume, lungs, lesion = generate_phantom(spec, t)
        stem = f"{args.name}_t{t}"
        save_volume(volume, stage.path(stem))
        save_mask(lungs, stage.path(f"{stem}_lungs"), volume.spacing, volume.origin)
        save_mask(lesion, stage.path(f"{stem}_lesion"), volume.spacing, volume.origin)
        log.info("phantom t=%d: lungs %d voxels, lesion %d voxels", t, lungs.count(), lesion.count())


def _geometry(args, view: str) -> DetectorGeometry:
    return DetectorGeometry(
        width=args.width, height=args.height, pixel_mm=args.pixel_mm, mode=args.mode,
        sdd_mm=args.sdd, sad_mm=args.sad, view=view,
    )


def cmd_drr(args, stage: Staging) -> None:
    try:
        volume = load_volume(args.volume)
        spectrum = Spectrum.load(args.spectrum)
        if args.photons is not None:
            spectrum = spectrum.scaled(args.photons)
        att = AttenuationTable.load(args.mu, args.densities)
    except (OSError, ValueError) as exc:
        raise pipeline.StageError("load", exc) from exc
    settings = pipeline.DrrSettings(
        air_max=args.air_max, bone_min=args.bone_min,
        scatter=args.scatter, scatter_fraction=args.scatter_fraction, scatter_sigma=args.scatter_sigma,
        noise=args.noise, seed=args.seed, threads=args.threads,
    )
    lungs = lesion = None
    if args.lungs or args.lesion:
        if not (args.lungs and args.lesion):
            raise UsageError("--lungs and --lesion must be given together")
        lungs, lesion = load_mask(args.lungs), load_mask(args.lesion)
    name = args.name or Path(args.volume).name.removesuffix(".raw").removesuffix(".meta")
    for view in args.views.split(","):
        det = _geometry(args, view.strip())
        image, image8 = pipeline.render_drr(volume, det, spectrum, att, settings)
        stem = f"{name}_{det.view}"
        images.save_float_image(
            stage.path(stem), image.values, pixel_mm=det.pixel_mm, mode=det.mode, view=det.view,
            sdd_mm=det.sdd_mm, sad_mm=det.sad_mm,
        )
        images.write_pgm(stage.path(f"{stem}.pgm"), image8)
        if args.png:
            images.write_png(stage.path(f"{stem}.png"), image8)
        if lungs is not None:
            lesion2d, lungs2d = pipeline.project_region_masks(volume, lungs, lesion, det, threads=args.threads)
            images.write_pgm(stage.path(f"{stem}_lungs.pgm"), lungs2d)
            images.write_pgm(stage.path(f"{stem}_lesion.pgm"), lesion2d)


def _overlay(base: np.ndarray, lesion: np.ndarray) -> np.ndarray:
    """Draw the lesion outline at full intensity."""
    pad = np.pad(lesion, 1)
    interior = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    out = base.copy()
    out[lesion & ~interior] = 255
    return out


def cmd_score(args, stage: Staging) -> None:
    lungs = images.read_mask_pgm(args.lungs)
    if args.heatmap:
        lesion = pipeline.lesion_from_heatmaps(images.load_heatmap_stack(args.heatmap), lungs.shape, args.threshold)
    elif args.lesion:
        lesion = images.read_mask_pgm(args.lesion)
    else:
        raise UsageError("score needs --heatmap or --lesion")
    record = pipeline.gated_score(lesion, lungs, args.detection_score, args.detection_threshold)
    row = record.row(args.patient_id, args.time)
    extra = ("negative",)
    row["negative"] = int(record.negative)
    if args.ct_lesion or args.ct_lungs:
        if not (args.ct_lesion and args.ct_lungs):
            raise UsageError("--ct-lesion and --ct-lungs must be given together")
        row["ratio_3d"] = f"{volume_ratio(load_mask(args.ct_lesion), load_mask(args.ct_lungs)):.6f}"
        extra += ("ratio_3d",)
    stage.path(f"{args.name}.csv").write_text(records_to_csv([row], extra))
    base = images.read_pgm(args.image) if args.image else (lungs.astype(np.uint8) * 96)
    if base.shape != lesion.shape:
        raise ValueError("overlay image and masks differ in shape")
    shown = lesion & lungs if not record.negative else np.zeros_like(lesion)
    images.write_pgm(stage.path(f"{args.name}_overlay.pgm"), _overlay(base, shown))


def cmd_monitor(args, stage: Staging) -> None:
    rows = []
    for path in args.scores:
        rows += monitor.read_score_csv(Path(path).read_text())
    if not rows:
        raise ValueError("no score rows in input")
    series = monitor.build_profiles(rows)
    stage.path("profiles.csv").write_text(
        monitor.rows_to_csv(monitor.profile_rows(series, args.ct_floor), monitor.PROFILE_FIELDS)
    )
    summary = monitor.summarize(series, args.ct_floor)
    stage.path("summary.csv").write_text(monitor.rows_to_csv(summary, monitor.SUMMARY_FIELDS))
    pooled = summary[-1]
    log.info("pooled agreement %s over %s steps", pooled["agreement"], pooled["n_steps"])


def parse_boxes(text: str) -> list[BBox]:
    """``"x y w h;x y w h"``; blank means no boxes."""
    boxes = []
    for chunk in (text or "").split(";"):
        chunk = chunk.strip()
        if chunk:
            parts = chunk.split()
            if len(parts) != 4:
                raise ValueError(f"bad box {chunk!r}: expected 'x y w h'")
            boxes.append(BBox(*(int(p) for p in parts)))
    return boxes


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10f}"
    return str(value)


def cmd_eval(args, stage: Staging) -> None:
    out_rows: list[tuple[str, object]] = []
    if args.boxes:
        with open(args.boxes, newline="") as fh:
            table = list(csv.DictReader(fh))
        if not table:
            raise ValueError(f"{args.boxes}: no rows")
        dataset = [(parse_boxes(r.get("pred_boxes", "")), parse_boxes(r.get("gt_boxes", ""))) for r in table]
        out_rows += [("n_images", len(dataset)), ("map", metrics.map_score(dataset))]

        scored = [r for r in table if (r.get("score") or "").strip() and (r.get("label") or "").strip()]
        if scored:
            scores = [float(r["score"]) for r in scored]
            labels = [int(r["label"]) for r in scored]
            curve = metrics.roc_curve(scores, labels)
            best = metrics.optimal_operating_point(curve)
            stats = metrics.confusion_stats([int(s >= best.threshold) for s in scores], labels)
            out_rows += [
                ("auc", metrics.auc(curve)),
                ("operating_threshold", best.threshold),
                ("sensitivity", stats.sensitivity),
                ("specificity", stats.specificity),
                ("accuracy", stats.accuracy),
                ("ppv", stats.ppv),
            ]

        if args.sweep:
            base = Path(args.boxes).parent
            maps = []
            for r in table:
                if not (r.get("heatmap") or "").strip():
                    raise ValueError("--sweep needs a heatmap column on every row")
                maps.append(metrics.reduce_heatmap_stack(images.load_heatmap_stack(base / r["heatmap"])))
            sweep = metrics.localization_sweep(maps, [gt for _, gt in dataset])
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["threshold", "map"])
            w.writerows([f"{t:.2f}", _fmt(m)] for t, m in sweep)
            stage.path("sweep.csv").write_text(buf.getvalue())
    for pred_path, gt_path in args.mask or []:
        pred, gt = images.read_mask_pgm(pred_path), images.read_mask_pgm(gt_path)
        tag = Path(pred_path).stem
        out_rows += [(f"dice:{tag}", metrics.dice(pred, gt)), (f"jaccard:{tag}", metrics.jaccard(pred, gt))]
    if not out_rows:
        raise UsageError("eval needs --boxes and/or --mask")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    w.writerows((k, _fmt(v)) for k, v in out_rows)
    stage.path("metrics.csv").write_text(buf.getvalue())


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="cxrduality", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="flat key=value file of option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="voxelize a phantom spec at each time point")
    s.add_argument("--spec", required=True, help="phantom spec (JSON)")
    s.add_argument("--t-start", type=int, default=0)
    s.add_argument("--t-stop", type=int, default=None, help="exclusive; defaults to all time points")
    s.add_argument("--name", default="phantom")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("drr", help="render DRRs from a CT volume")
    s.add_argument("--volume", required=True, help="volume stem (<stem>.raw + <stem>.meta)")
    s.add_argument("--name", default=None)
    s.add_argument("--views", default="PA", help="comma list of PA/AP")
    s.add_argument("--mode", choices=("cone", "parallel"), default="cone")
    s.add_argument("--width", type=int, default=1024)
    s.add_argument("--height", type=int, default=1024)
    s.add_argument("--pixel-mm", type=float, default=0.168)
    s.add_argument("--sdd", type=float, default=1800.0)
    s.add_argument("--sad", type=float, default=1500.0)
    s.add_argument("--spectrum", default=None, help="spectrum TSV (default: bundled 120 kV)")
    s.add_argument("--photons", type=float, default=None, help="rescale spectrum to this many photons/pixel")
    s.add_argument("--mu", default=None, help="mass attenuation TSV")
    s.add_argument("--densities", default=None, help="material density TSV")
    s.add_argument("--air-max", type=float, default=-500.0)
    s.add_argument("--bone-min", type=float, default=300.0)
    s.add_argument("--scatter", action=argparse.BooleanOptionalAction, default=False)
    s.add_argument("--scatter-fraction", type=float, default=0.10)
    s.add_argument("--scatter-sigma", type=float, default=50.0)
    s.add_argument("--noise", action=argparse.BooleanOptionalAction, default=False)
    s.add_argument("--lungs", default=None, help="3-D lung mask to project alongside")
    s.add_argument("--lesion", default=None, help="3-D lesion mask to project alongside")
    s.add_argument("--png", action="store_true")
    s.set_defaults(func=cmd_drr)

    s = sub.add_parser("score", help="pneumonia ratio and 0-8 severity for one image")
    s.add_argument("--lungs", required=True, help="2-D lung mask (PGM)")
    s.add_argument("--lesion", default=None, help="2-D lesion mask (PGM)")
    s.add_argument("--heatmap", default=None, help="heatmap stack (<stem>.raw + .meta)")
    s.add_argument("--threshold", type=_unit_interval, default=LOCALIZATION_THRESHOLD)
    s.add_argument("--detection-score", type=float, default=None)
    s.add_argument("--detection-threshold", type=_unit_interval, default=DETECTION_THRESHOLD)
    s.add_argument("--patient-id", default="patient")
    s.add_argument("--time", type=int, default=0)
    s.add_argument("--ct-lesion", default=None, help="3-D lesion mask for ratio_3d")
    s.add_argument("--ct-lungs", default=None, help="3-D lung mask for ratio_3d")
    s.add_argument("--image", default=None, help="8-bit PGM to draw the contour on")
    s.add_argument("--name", default="score")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("monitor", help="longitudinal profiles and CT/CXR trend agreement")
    s.add_argument("scores", nargs="+", help="score CSV files")
    s.add_argument("--ct-floor", type=float, default=None, help="ignore CT ratios below this (percent)")
    s.set_defaults(func=cmd_monitor)

    s = sub.add_parser("eval", help="mAP / ROC / overlap metrics")
    s.add_argument("--boxes", default=None, help="CSV: image_id,pred_boxes,gt_boxes[,score,label,heatmap]")
    s.add_argument("--sweep", action="store_true", help="localization threshold sweep 0.5..0.9")
    s.add_argument("--mask", nargs=2, action="append", metavar=("PRED", "GT"))
    s.set_defaults(func=cmd_eval)
    return p


def _apply_config(parser: _Parser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    entries = read_config(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices
    targets = [parser, *subparsers.values()]
    dests = {a.dest: a for t in targets for a in t._actions}
    unknown = sorted(set(entries) - set(dests))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    for key, raw in entries.items():
        action = dests[key]
        if isinstance(action, argparse.BooleanOptionalAction) or action.const is True:
            value = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            value = action.type(raw)
        else:
            value = raw
        for t in targets:
            if any(a.dest == key for a in t._actions):
                t.set_defaults(**{key: value})
                for a in t._actions:
                    if a.dest == key:
                        a.required = False


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"cxrduality: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"cxrduality: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    stage = Staging(Path(args.out))
    try:
        args.func(args, stage)
        stage.commit()
        return EXIT_OK
    except UsageError as exc:
        stage.abort()
        print(f"cxrduality {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.StageError as exc:
        stage.abort()
        print(f"cxrduality {args.command}: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc.cause, (ValueError, OSError)) else EXIT_INTERNAL
    except (ValueError, OSError, KeyError, ProfileError, VolumeFormatError) as exc:
        stage.abort()
        print(f"cxrduality {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        stage.abort()
        print(f"cxrduality {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
