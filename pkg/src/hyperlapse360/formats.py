"""On-disk formats for every pipeline artifact.

Everything round-trips: write -> read -> write produces identical bytes. CSVs
use a required header row, UTF-8 and LF endings; floats are serialized with
repr (shortest exact form) except the camera path, which is fixed at six
decimals. Binary grids are little-endian raw arrays next to a JSON index.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .content import ClassProbabilityMap, RoiTrack
from .errors import BadFileFormat, DimensionMismatch
from .geometry import SphericalDirection, UnitQuaternion
from .motion import ModelKind
from .render import FovCurve
from .tracking import FeatureTrack
from .viewplan import CameraPath

FLO_MAGIC = 202021.25


# CSV plumbing


def _write_csv(path, header: list[str], rows):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path, header: list[str]) -> list[list[str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        r = csv.reader(f)
        try:
            got = next(r)
        except StopIteration:
            raise BadFileFormat(f"{path}: empty file") from None
        if got != header:
            raise BadFileFormat(f"{path}: expected header {header}, got {got}")
        rows = []
        for row in r:
            if len(row) != len(header):
                raise BadFileFormat(f"{path}: row {r.line_num} has {len(row)} fields")
            rows.append(row)
        return rows


def _json_dump(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _json_load(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# optical flow (.flo)


def read_flo(path) -> np.ndarray:
    """Read a Middlebury flow file as a (H, W, 2) float64 array (u, v)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise BadFileFormat(f"{path}: truncated header")
    magic, w, h = struct.unpack("<fii", raw[:12])
    if abs(magic - FLO_MAGIC) > 1e-3:
        raise BadFileFormat(f"{path}: bad magic {magic}")
    if w <= 0 or h <= 0:
        raise BadFileFormat(f"{path}: bad size {w}x{h}")
    data = np.frombuffer(raw[12:], dtype="<f4")
    if data.size != 2 * w * h:
        raise BadFileFormat(f"{path}: expected {2 * w * h} floats, found {data.size}")
    return data.reshape(h, w, 2).astype(np.float64)


def write_flo(path, flow: np.ndarray):
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise DimensionMismatch(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<fii", FLO_MAGIC, w, h))
        f.write(flow.astype("<f4").tobytes())


# feature tracks


def write_tracks_csv(path, tracks: list[FeatureTrack]):
    rows = []
    for tr in tracks:
        for off, (x, y) in enumerate(tr.points):
            rows.append([tr.track_id, tr.start_frame + off, repr(float(x)), repr(float(y))])
    _write_csv(path, ["track_id", "frame", "x", "y"], rows)


def read_tracks_csv(path) -> list[FeatureTrack]:
    rows = _read_csv(path, ["track_id", "frame", "x", "y"])
    by_id: dict[int, list[tuple[int, float, float]]] = {}
    order: list[int] = []
    for tid_s, frame_s, x_s, y_s in rows:
        tid = int(tid_s)
        if tid not in by_id:
            by_id[tid] = []
            order.append(tid)
        by_id[tid].append((int(frame_s), float(x_s), float(y_s)))
    tracks = []
    for tid in order:
        pts = sorted(by_id[tid])
        frames = [p[0] for p in pts]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise BadFileFormat(f"{path}: track {tid} frames are not contiguous")
        tracks.append(FeatureTrack(tid, frames[0], [(x, y) for _, x, y in pts]))
    return tracks


# rotation sequences


def write_rotations_csv(path, quats: list[UnitQuaternion]):
    rows = [
        [t] + [repr(float(v)) for v in (q.w, q.x, q.y, q.z)] for t, q in enumerate(quats)
    ]
    _write_csv(path, ["frame", "qw", "qx", "qy", "qz"], rows)


def read_rotations_csv(path) -> list[UnitQuaternion]:
    rows = _read_csv(path, ["frame", "qw", "qx", "qy", "qz"])
    quats = []
    for t, row in enumerate(rows):
        if int(row[0]) != t:
            raise BadFileFormat(f"{path}: expected frame {t}, got {row[0]}")
        quats.append(UnitQuaternion(*(float(v) for v in row[1:])))
    return quats


# FOE observations


def write_foe_csv(path, rows: list[tuple[int, SphericalDirection, float]]):
    out = [
        [frame, repr(float(d.theta)), repr(float(d.phi)), repr(float(conf))]
        for frame, d, conf in rows
    ]
    _write_csv(path, ["frame", "theta", "phi", "confidence"], out)


def read_foe_csv(path) -> list[tuple[int, SphericalDirection, float]]:
    rows = _read_csv(path, ["frame", "theta", "phi", "confidence"])
    return [
        (int(f), SphericalDirection(float(th), float(ph)), float(c))
        for f, th, ph, c in rows
    ]


# camera path


def write_path_csv(path, cam: CameraPath):
    rows = [
        [t, f"{p.theta:.6f}", f"{p.phi:.6f}"] for t, p in enumerate(cam.poses)
    ]
    _write_csv(path, ["frame", "theta", "phi"], rows)


def read_path_csv(path) -> CameraPath:
    rows = _read_csv(path, ["frame", "theta", "phi"])
    poses = []
    for t, row in enumerate(rows):
        if int(row[0]) != t:
            raise BadFileFormat(f"{path}: expected frame {t}, got {row[0]}")
        poses.append(SphericalDirection(float(row[1]), float(row[2])))
    return CameraPath(poses)


# frame selection plan


def write_plan_csv(path, frames: list[int]):
    _write_csv(path, ["output_index", "input_frame"], list(enumerate(frames)))


def read_plan_csv(path) -> list[int]:
    rows = _read_csv(path, ["output_index", "input_frame"])
    frames = []
    for i, row in enumerate(rows):
        if int(row[0]) != i:
            raise BadFileFormat(f"{path}: expected output index {i}, got {row[0]}")
        frames.append(int(row[1]))
    return frames


# zoom curve


def write_fov_csv(path, curve: FovCurve):
    rows = [[t, repr(float(v))] for t, v in enumerate(curve.values)]
    _write_csv(path, ["frame", "fov_deg"], rows)


def read_fov_csv(path) -> FovCurve:
    rows = _read_csv(path, ["frame", "fov_deg"])
    values = []
    for t, row in enumerate(rows):
        if int(row[0]) != t:
            raise BadFileFormat(f"{path}: expected frame {t}, got {row[0]}")
        values.append(float(row[1]))
    return FovCurve(np.array(values))


# stabilizing transforms


def write_transforms_csv(path, mats: list[np.ndarray], kinds: list[ModelKind | None]):
    if len(mats) != len(kinds):
        raise DimensionMismatch(f"{len(mats)} matrices vs {len(kinds)} kinds")
    rows = []
    for t, (m, kind) in enumerate(zip(mats, kinds)):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise DimensionMismatch(f"transform {t} has shape {m.shape}")
        rows.append([t, kind.value if kind else "-"] + [repr(float(v)) for v in m.ravel()])
    header = ["frame", "kind"] + [f"h{r}{c}" for r in (1, 2, 3) for c in (1, 2, 3)]
    _write_csv(path, header, rows)


def read_transforms_csv(path) -> tuple[list[np.ndarray], list[ModelKind | None]]:
    header = ["frame", "kind"] + [f"h{r}{c}" for r in (1, 2, 3) for c in (1, 2, 3)]
    rows = _read_csv(path, header)
    mats, kinds = [], []
    for t, row in enumerate(rows):
        if int(row[0]) != t:
            raise BadFileFormat(f"{path}: expected frame {t}, got {row[0]}")
        try:
            kinds.append(None if row[1] == "-" else ModelKind(row[1]))
        except ValueError:
            raise BadFileFormat(f"{path}: unknown model kind {row[1]!r}") from None
        mats.append(np.array([float(v) for v in row[2:]]).reshape(3, 3))
    return mats, kinds


# region id maps


def write_region_maps(directory, maps: dict[int, np.ndarray]):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if not maps:
        raise BadFileFormat("no region maps to write")
    frames = sorted(maps)
    shape = maps[frames[0]].shape
    id_max = 0
    for t in frames:
        m = np.asarray(maps[t])
        if m.ndim != 2 or m.shape != shape:
            raise DimensionMismatch(f"frame {t} grid {m.shape} != {shape}")
        id_max = max(id_max, int(m.max()))
        (d / f"{t:06d}.u32").write_bytes(m.astype("<u4").tobytes())
    _json_dump(
        d / "index.json",
        {"width": shape[1], "height": shape[0], "frames": frames, "id_count": id_max + 1},
    )


def read_region_maps(directory) -> dict[int, np.ndarray]:
    d = Path(directory)
    idx = _json_load(d / "index.json")
    w, h = int(idx["width"]), int(idx["height"])
    maps = {}
    for t in idx["frames"]:
        raw = (d / f"{int(t):06d}.u32").read_bytes()
        grid = np.frombuffer(raw, dtype="<u4")
        if grid.size != w * h:
            raise BadFileFormat(f"frame {t}: expected {w * h} ids, found {grid.size}")
        maps[int(t)] = grid.reshape(h, w).astype(np.uint32)
    return maps


# class probability maps


def write_prob_maps(directory, maps: list[ClassProbabilityMap]):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if not maps:
        raise BadFileFormat("no probability maps to write")
    classes = maps[0].classes
    shape = maps[0].probs.shape
    for pm in maps:
        if pm.classes != classes:
            raise DimensionMismatch(f"frame {pm.frame} class list differs")
        if pm.probs.shape != shape:
            raise DimensionMismatch(f"frame {pm.frame} grid {pm.probs.shape} != {shape}")
        (d / f"{pm.frame:06d}.f32").write_bytes(pm.probs.astype("<f4").tobytes())
    _json_dump(
        d / "index.json",
        {
            "width": shape[2],
            "height": shape[1],
            "classes": list(classes),
            "frames": sorted(pm.frame for pm in maps),
        },
    )


def read_prob_maps(directory) -> list[ClassProbabilityMap]:
    d = Path(directory)
    idx = _json_load(d / "index.json")
    w, h = int(idx["width"]), int(idx["height"])
    classes = [str(c) for c in idx["classes"]]
    maps = []
    for t in idx["frames"]:
        raw = (d / f"{int(t):06d}.f32").read_bytes()
        grid = np.frombuffer(raw, dtype="<f4")
        if grid.size != len(classes) * w * h:
            raise BadFileFormat(f"frame {t}: probability grid size {grid.size}")
        probs = grid.reshape(len(classes), h, w).astype(np.float64)
        maps.append(ClassProbabilityMap(int(t), classes, probs))
    return maps


# ROI tracks


def write_rois_json(path, rois: list[RoiTrack]):
    recs = []
    for r in rois:
        recs.append(
            {
                "tsp_id": r.tsp_id,
                "start_frame": r.start_frame,
                "end_frame": r.end_frame,
                "saliency": r.saliency,
                "label": r.label,
                "poses": [[p.theta, p.phi] for p in r.poses],
                "areas": [float(a) for a in r.areas],
            }
        )
    _json_dump(path, recs)


def read_rois_json(path) -> list[RoiTrack]:
    recs = _json_load(path)
    rois = []
    for rec in recs:
        rois.append(
            RoiTrack(
                tsp_id=int(rec["tsp_id"]),
                start_frame=int(rec["start_frame"]),
                end_frame=int(rec["end_frame"]),
                poses=[SphericalDirection(t, p) for t, p in rec["poses"]],
                areas=[float(a) for a in rec["areas"]],
                saliency=float(rec["saliency"]),
                label=None if rec["label"] is None else int(rec["label"]),
            )
        )
    return rois


# image frames (PNG or binary PPM) + sequence manifest


def _as_rgb(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.dtype != np.uint8:
        raise BadFileFormat(f"frames must be uint8, got {frame.dtype}")
    if frame.ndim == 2:
        return np.repeat(frame[:, :, None], 3, axis=2)
    if frame.ndim == 3 and frame.shape[2] == 3:
        return frame
    raise DimensionMismatch(f"frame shape {frame.shape} is not (H, W) or (H, W, 3)")


def write_frame(path, frame: np.ndarray):
    rgb = _as_rgb(frame)
    path = Path(path)
    if path.suffix == ".ppm":
        h, w = rgb.shape[:2]
        with open(path, "wb") as f:
            f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            f.write(rgb.tobytes())
    elif path.suffix == ".png":
        Image.fromarray(rgb).save(path)
    else:
        raise BadFileFormat(f"unsupported frame extension {path.suffix!r}")


def read_frame(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".ppm":
        raw = path.read_bytes()
        parts = raw.split(maxsplit=4)
        if len(parts) < 5 or parts[0] != b"P6" or parts[3] != b"255":
            raise BadFileFormat(f"{path}: not an 8-bit P6 file")
        w, h = int(parts[1]), int(parts[2])
        data = parts[4]
        if len(data) != 3 * w * h:
            raise BadFileFormat(f"{path}: expected {3 * w * h} bytes, found {len(data)}")
        return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()
    if path.suffix == ".png":
        return np.asarray(Image.open(path).convert("RGB"))
    raise BadFileFormat(f"unsupported frame extension {path.suffix!r}")


def write_frames(directory, frames, fps: float = 30.0, ext: str = ".png"):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if not frames:
        raise BadFileFormat("no frames to write")
    rgb0 = _as_rgb(frames[0])
    for t, frame in enumerate(frames):
        rgb = _as_rgb(frame)
        if rgb.shape != rgb0.shape:
            raise DimensionMismatch(f"frame {t} shape {rgb.shape} != {rgb0.shape}")
        write_frame(d / f"{t:06d}{ext}", rgb)
    _json_dump(
        d / "manifest.json",
        {
            "fps": float(fps),
            "width": rgb0.shape[1],
            "height": rgb0.shape[0],
            "count": len(frames),
        },
    )


def read_manifest(directory) -> dict:
    m = _json_load(Path(directory) / "manifest.json")
    for key in ("fps", "width", "height", "count"):
        if key not in m:
            raise BadFileFormat(f"manifest missing {key!r}")
    return m


def read_frames(directory) -> tuple[list[np.ndarray], dict]:
    d = Path(directory)
    m = read_manifest(d)
    frames = []
    for t in range(int(m["count"])):
        png = d / f"{t:06d}.png"
        ppm = d / f"{t:06d}.ppm"
        if png.exists():
            frames.append(read_frame(png))
        elif ppm.exists():
            frames.append(read_frame(ppm))
        else:
            raise BadFileFormat(f"missing frame {t:06d} in {d}")
    return frames, m
