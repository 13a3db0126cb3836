"""Command-line entry points: track, eval, train, render.

Every failure path prints one "error: ..." line to stderr and exits nonzero.
Summaries are JSON and embed the fully resolved configuration and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import torch

from . import dataio, tracker, viz
from .config import build_bundle, build_sequences, load_config, resolved_dict
from .errors import DatasetLayoutError, SegTrackError, ShapeMismatch
from .metrics import accuracy_robustness, contour_f, box_iou, jaccard, success_auc
from .geometry import fit_axis_aligned_box
from .training import train_segmentation, train_sem, write_history

EVAL_METRICS = ("jaccard", "contour_f", "iou", "auc", "ar")


def _write_summary(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_checkpoint(bundle, path: str) -> None:
    payload = torch.load(path, weights_only=True)
    state = payload.get("weights", payload) if isinstance(payload, dict) else payload
    bundle.load_state_dict(state)


def cmd_track(args) -> int:
    config = load_config(args.config)
    if args.ablate:
        names = tuple(n.strip() for n in args.ablate.split(",") if n.strip())
        import dataclasses

        config = dataclasses.replace(config, ablate=names)
    sequence = dataio.load_sequence(args.sequence)
    init_mask = sequence.init_mask()
    init_box = sequence.init_box()
    if init_mask is None and init_box is None:
        raise DatasetLayoutError("missing initialization target "
                                 f"(no masks/ or groundtruth.txt under {args.sequence})")

    torch.manual_seed(config.seed)
    bundle = build_bundle(config)
    if args.checkpoint:
        _load_checkpoint(bundle, args.checkpoint)
    bundle.eval()

    run = tracker.run_sequence(bundle, sequence.frames, init_mask=init_mask,
                               init_box=None if init_mask is not None else init_box,
                               config=config.tracker, seed=config.seed)

    os.makedirs(os.path.join(args.output, "masks"), exist_ok=True)
    for name, mask in zip(sequence.frame_names, run.masks):
        out_name = os.path.splitext(name)[0] + ".png"
        dataio.write_mask(os.path.join(args.output, "masks", out_name), mask.probabilities)
    dataio.write_box_file(os.path.join(args.output, "boxes.txt"), run.visible_boxes)
    dataio.write_box_file(os.path.join(args.output, "inherent_boxes.txt"), run.inherent_boxes)

    with open(os.path.join(args.output, "frames.csv"), "w", encoding="ascii") as fh:
        fh.write("frame,flags,elapsed_s\n")
        for log in run.logs:
            flags = "|".join(log["flags"])
            fh.write(f"{log['frame']},{flags},{log.get('elapsed_s', 0.0):.6f}\n")

    _write_summary(os.path.join(args.output, "summary.json"), {
        "command": "track",
        "sequence": args.sequence,
        "frames": len(sequence),
        "ablate": args.ablate or "",
        "checkpoint": args.checkpoint or None,
        "mask_threshold": config.tracker.mask_threshold,
        "mask_quantization_levels": 256,
        "seed": config.seed,
        "config": resolved_dict(config),
    })
    return 0


def _frame_overlaps(pred_masks, gt_masks):
    overlaps = []
    for t, (pred, gt) in enumerate(zip(pred_masks, gt_masks)):
        if pred.shape != gt.shape:
            raise ShapeMismatch(f"frame {t}: mask shapes {pred.shape} vs {gt.shape}")
        overlaps.append(jaccard(pred, gt))
    return overlaps


def cmd_eval(args) -> int:
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    unknown = sorted(set(metrics) - set(EVAL_METRICS))
    if unknown:
        raise SegTrackError(f"unknown metric {unknown[0]!r}; choose from {', '.join(EVAL_METRICS)}")

    pred_masks = dataio.load_result_masks(args.predictions)
    gt = dataio.load_sequence(args.ground_truth)
    if gt.masks is None:
        raise DatasetLayoutError(f"no ground-truth masks under {args.ground_truth}")
    if len(pred_masks) != len(gt.masks):
        raise DatasetLayoutError(
            f"{len(pred_masks)} predicted masks vs {len(gt.masks)} ground-truth frames")

    overlaps = _frame_overlaps(pred_masks, gt.masks)
    contours = [contour_f(p, g) for p, g in zip(pred_masks, gt.masks)]

    pred_boxes = None
    box_path = os.path.join(args.predictions, "boxes.txt")
    if os.path.isfile(box_path):
        pred_boxes = dataio.read_box_file(box_path)
    # a frame with no visible ground truth has no box to compare against;
    # such frames score 0 in the box column (the mask metrics still apply)
    gt_boxes = gt.boxes or [fit_axis_aligned_box(m, 0.5) if m.any() else None
                            for m in gt.masks]
    ious = None
    if pred_boxes is not None and len(pred_boxes) == len(gt_boxes):
        ious = [box_iou(p, g) if g is not None else 0.0
                for p, g in zip(pred_boxes, gt_boxes)]

    out_dir = args.output
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "frames.csv"), "w", encoding="ascii") as fh:
        header = "frame,jaccard,contour_f" + (",iou" if ious else "") + "\n"
        fh.write(header)
        for t in range(len(overlaps)):
            row = f"{t},{overlaps[t]:.10g},{contours[t]:.10g}"
            if ious:
                row += f",{ious[t]:.10g}"
            fh.write(row + "\n")

    summary: dict = {}
    if "jaccard" in metrics:
        summary["jaccard"] = float(np.mean(overlaps))
    if "contour_f" in metrics:
        summary["contour_f"] = float(np.mean(contours))
    if "iou" in metrics:
        summary["iou"] = float(np.mean(ious)) if ious else None
    if "auc" in metrics:
        summary["auc"] = success_auc(overlaps)
    if "ar" in metrics:
        acc, rob, failures = accuracy_robustness(overlaps)
        summary["accuracy"] = acc
        summary["robustness"] = rob
        summary["failures"] = failures

    with open(os.path.join(out_dir, "metrics.txt"), "w", encoding="ascii") as fh:
        for key, value in summary.items():
            fh.write(f"{key}\t{value}\n")
    _write_summary(os.path.join(out_dir, "summary.json"),
                   {"command": "eval", "predictions": args.predictions,
                    "ground_truth": args.ground_truth, "metrics": summary})

    viz.success_plot(overlaps, os.path.join(out_dir, "success_plot.png"))
    viz.overlap_plot(overlaps, os.path.join(out_dir, "overlap_per_frame.png"),
                     failures=summary.get("failures", ()))
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    os.makedirs(args.output, exist_ok=True)
    sequences = build_sequences(config)

    torch.manual_seed(config.seed)
    bundle = build_bundle(config)
    seg_run = train_segmentation(bundle, sequences, config.train_config("segmentation"))
    sem_run = train_sem(bundle, sequences, config.train_config("sem"))

    torch.save({"weights": bundle.state_dict(), "config": resolved_dict(config)},
               os.path.join(args.output, "checkpoint.pt"))
    write_history(os.path.join(args.output, "seg_loss.csv"), seg_run.history)
    write_history(os.path.join(args.output, "sem_loss.csv"), sem_run.history)
    viz.loss_curves({"segmentation": seg_run.history, "scale": sem_run.history},
                    os.path.join(args.output, "loss_curves.png"))
    _write_summary(os.path.join(args.output, "summary.json"), {
        "command": "train",
        "seed": config.seed,
        "sequences": len(sequences),
        "final_losses": {"segmentation": seg_run.history[-1]["loss"],
                         "scale": sem_run.history[-1]["loss"]},
        "config": resolved_dict(config),
    })
    return 0


def cmd_render(args) -> int:
    sequence = dataio.load_sequence(args.sequence)
    masks = dataio.load_result_masks(args.results)
    if len(masks) != len(sequence):
        raise DatasetLayoutError(f"{len(masks)} result masks vs {len(sequence)} frames")
    visible = dataio.read_box_file(os.path.join(args.results, "boxes.txt"))
    inherent_path = os.path.join(args.results, "inherent_boxes.txt")
    inherent = dataio.read_box_file(inherent_path) if os.path.isfile(inherent_path) else visible

    os.makedirs(args.output, exist_ok=True)
    for t, name in enumerate(sequence.frame_names):
        frame = viz.overlay_frame(sequence.frames[t], mask=masks[t],
                                  visible_box=visible[t], inherent_box=inherent[t])
        out_name = os.path.splitext(name)[0] + ".png"
        dataio.write_frame(os.path.join(args.output, out_name), frame)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segtrack",
                                     description="segmentation tracker command line")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="run the tracker over a sequence directory")
    p.add_argument("sequence", help="sequence directory (frames/ plus ground truth)")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("-c", "--config", default=None, help="JSON config path")
    p.add_argument("--checkpoint", default=None, help="trained weights (.pt)")
    p.add_argument("--ablate", default="", help="comma-separated ablation flags")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("predictions", help="tracking output directory")
    p.add_argument("ground_truth", help="sequence directory with ground truth")
    p.add_argument("-o", "--output", required=True, help="report directory")
    p.add_argument("--metrics", default=",".join(EVAL_METRICS),
                   help=f"comma-separated subset of: {', '.join(EVAL_METRICS)}")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train on the synthetic corpus from the config")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("-c", "--config", default=None, help="JSON config path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="write frames with mask and box overlays")
    p.add_argument("sequence", help="sequence directory")
    p.add_argument("results", help="tracking output directory")
    p.add_argument("-o", "--output", required=True, help="overlay output directory")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SegTrackError, OSError, ValueError) as err:
        message = str(err).replace("\n", " ")
        print(f"error: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
