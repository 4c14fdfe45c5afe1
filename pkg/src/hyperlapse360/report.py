"""Summaries of a completed run directory: timings, selection, models, zoom."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import formats
from .errors import IncompleteRun

_REQUIRED = ["stage_timings.json", "path.csv", "plan.csv", "fov.csv", "transforms.csv"]


def summarize_run(run_dir: str | Path) -> dict:
    """Gather per-stage timing, selection, model-kind and zoom statistics."""
    d = Path(run_dir)
    missing = [name for name in _REQUIRED if not (d / name).exists()]
    if missing:
        raise IncompleteRun(f"{d}: missing {', '.join(missing)}")

    with open(d / "stage_timings.json", encoding="utf-8") as fh:
        raw = json.load(fh)
    frame_count = int(raw["frame_count"])
    stages = {
        name: {
            "seconds": float(sec),
            "ms_per_frame": 1000.0 * float(sec) / frame_count,
        }
        for name, sec in raw["stages"].items()
    }

    selected = formats.read_plan_csv(d / "plan.csv")
    jumps = np.diff(selected) if len(selected) > 1 else np.zeros(0)
    selection = {
        "input_frames": frame_count,
        "output_frames": len(selected),
        "achieved_speedup": float((frame_count - 1) / max(1, len(selected) - 1)),
        "mean_jump": float(jumps.mean()) if len(jumps) else 0.0,
        "min_jump": int(jumps.min()) if len(jumps) else 0,
        "max_jump": int(jumps.max()) if len(jumps) else 0,
    }

    _, kinds = formats.read_transforms_csv(d / "transforms.csv")
    histogram: dict[str, int] = {}
    for kind in kinds:
        if kind is None:
            continue
        histogram[kind.value] = histogram.get(kind.value, 0) + 1

    curve = formats.read_fov_csv(d / "fov.csv")
    values = curve.values
    zoom = {
        "min_fov": float(values.min()),
        "max_fov": float(values.max()),
        "mean_fov": float(values.mean()),
        "constant": bool(values.max() - values.min() < 1e-9),
    }
    cfg_path = d / "config.json"
    if cfg_path.exists():
        with open(cfg_path, encoding="utf-8") as fh:
            zoom["default_fov"] = float(json.load(fh)["zoom"]["default_fov"])

    rois_path = d / "rois.json"
    roi_count = len(formats.read_rois_json(rois_path)) if rois_path.exists() else None

    return {
        "stages": stages,
        "total_seconds": float(raw["total_seconds"]),
        "selection": selection,
        "model_kinds": histogram,
        "zoom": zoom,
        "roi_count": roi_count,
    }


def format_report(summary: dict) -> str:
    lines = ["stage timings:"]
    for name, row in summary["stages"].items():
        lines.append(f"  {name:<14} {row['seconds']:8.2f} s  ({row['ms_per_frame']:.1f} ms/frame)")
    lines.append(f"  {'total':<14} {summary['total_seconds']:8.2f} s")

    sel = summary["selection"]
    lines.append(
        f"selection: {sel['output_frames']} of {sel['input_frames']} frames, "
        f"speedup {sel['achieved_speedup']:.1f}x, jumps {sel['min_jump']}..{sel['max_jump']} "
        f"(mean {sel['mean_jump']:.1f})"
    )

    if summary["model_kinds"]:
        parts = ", ".join(f"{k}: {n}" for k, n in sorted(summary["model_kinds"].items()))
        lines.append(f"motion models: {parts}")

    zoom = summary["zoom"]
    if zoom["constant"]:
        suffix = ""
        if "default_fov" in zoom and abs(zoom["mean_fov"] - zoom["default_fov"]) < 1e-9:
            suffix = " (default)"
        lines.append(f"zoom: constant FOV {zoom['mean_fov']:.2f} deg{suffix}")
    else:
        lines.append(
            f"zoom: FOV {zoom['min_fov']:.2f}..{zoom['max_fov']:.2f} deg "
            f"(mean {zoom['mean_fov']:.2f})"
        )
    if summary["roi_count"] is not None:
        lines.append(f"rois: {summary['roi_count']}")
    return "\n".join(lines)
