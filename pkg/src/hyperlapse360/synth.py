"""Synthetic 360 scenes with analytic ground truth.

Everything here is built so the downstream estimators' model assumptions hold
exactly: forward-motion flow pushes each pixel direction along the great
circle away from the FOE (so every flow vector's circle passes through the
true FOE), frames are rewarps of one world texture under known rotations, and
tracks are projections of fixed world directions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .content import ClassProbabilityMap
from .errors import OutOfBounds
from .foe import FlowField
from .geometry import (
    EquirectGeometry,
    SphericalDirection,
    UnitQuaternion,
    dir_to_vec,
    dirs_to_points,
    dirs_to_vecs,
    points_to_dirs,
    quat_from_axis_angle,
    quat_mul,
    quat_to_matrix,
    vecs_to_dirs,
)
from .stab360 import warp_equirect
from .tracking import FeatureTrack


def _push_from(z: np.ndarray, pole: np.ndarray, step_deg: float, profile: str) -> np.ndarray:
    """Move unit vectors along great circles away from `pole`.

    Step size is step_deg * sin(angular distance) for the "sin" profile,
    constant step_deg away from the poles for "uniform".
    """
    if profile not in ("sin", "uniform"):
        raise OutOfBounds(f"unknown magnitude profile {profile!r}")
    dots = z @ pole
    away = dots[..., None] * z - pole
    norms = np.linalg.norm(away, axis=-1)
    sin_a = np.clip(norms, 0.0, 1.0)
    safe = np.maximum(norms, 1e-12)
    away = away / safe[..., None]
    step = np.radians(step_deg) * (sin_a if profile == "sin" else np.minimum(1.0, sin_a * 1e6))
    return np.cos(step)[..., None] * z + np.sin(step)[..., None] * away


def forward_flow(
    g: EquirectGeometry,
    foe: SphericalDirection,
    step_deg: float = 1.0,
    magnitude_profile: str = "sin",
) -> FlowField:
    """Flow of a forward-translating camera aimed at `foe`.

    Each pixel direction moves along the great circle away from the FOE, so
    every flow vector's circle passes through the true FOE by construction.
    """
    xs = np.arange(g.width, dtype=np.float64)
    ys = np.arange(g.height, dtype=np.float64)
    xx, yy = np.meshgrid(xs, ys)
    th, ph = points_to_dirs(xx, yy, g)
    z = dirs_to_vecs(th, ph)
    f = dir_to_vec(foe).as_array()
    z2 = _push_from(z, f, step_deg, magnitude_profile)
    th2, ph2 = vecs_to_dirs(z2)
    x2, y2 = dirs_to_points(th2, ph2, g)
    du = (x2 - xx + g.width / 2.0) % g.width - g.width / 2.0
    dv = y2 - yy
    return FlowField(du, dv)


def rotation_sequence(
    frame_count: int,
    jitter_deg: float = 0.0,
    drift_axis=(0.0, 1.0, 0.0),
    drift_deg_per_frame: float = 0.0,
    seed: int = 0,
) -> list[UnitQuaternion]:
    """Per-frame camera rotations: smooth drift plus independent jitter."""
    rng = np.random.default_rng(seed)
    out = []
    for t in range(frame_count):
        q = quat_from_axis_angle(drift_axis, drift_deg_per_frame * t) if drift_deg_per_frame else UnitQuaternion.identity()
        if jitter_deg > 0.0:
            axis = rng.normal(size=3)
            q = quat_mul(quat_from_axis_angle(axis, rng.uniform(-jitter_deg, jitter_deg)), q)
        out.append(q)
    return out


def smooth_texture(g: EquirectGeometry, seed: int = 0, passes: int = 8, color: bool = True) -> np.ndarray:
    """Seeded band-limited random texture, uint8, trackable but smooth."""
    rng = np.random.default_rng(seed)
    channels = 3 if color else 1
    img = rng.uniform(0.0, 255.0, (g.height, g.width, channels))
    for _ in range(passes):
        img = (
            img
            + np.roll(img, 1, axis=0)
            + np.roll(img, -1, axis=0)
            + np.roll(img, 1, axis=1)
            + np.roll(img, -1, axis=1)
        ) / 5.0
    # stretch back to full range after the blur shrank the contrast
    img = (img - img.min()) / max(1e-9, img.max() - img.min()) * 255.0
    return img.astype(np.uint8) if channels == 3 else img[..., 0].astype(np.uint8)


def project_world_tracks(
    world_vecs: np.ndarray,
    rotations: list[UnitQuaternion],
    g: EquirectGeometry,
    noise_px: float = 0.0,
    seed: int = 0,
) -> list[FeatureTrack]:
    """Tracks of static world directions as seen under each frame rotation.

    rotations[t] maps frame-0 directions to frame-t directions (the cumulative
    convention used by the stabilizer).
    """
    rng = np.random.default_rng(seed)
    tracks = []
    mats = [quat_to_matrix(q) for q in rotations]
    for i, v in enumerate(np.asarray(world_vecs, dtype=np.float64)):
        pts = []
        for m in mats:
            w = m @ v
            th, ph = vecs_to_dirs(w[None, :])
            x, y = dirs_to_points(th, ph, g)
            pts.append((float(x[0]), float(y[0])))
        if noise_px > 0.0:
            pts = [(x + rng.normal(0, noise_px), y + rng.normal(0, noise_px)) for x, y in pts]
        tracks.append(FeatureTrack(i, 0, pts))
    return tracks


# full scene datasets with ground truth


@dataclass
class PlantedRoi:
    """A world-anchored blob the generated dataset treats as interesting."""

    theta: float
    phi: float
    start_frame: int
    end_frame: int
    radius_deg: float = 10.0
    contrast: float = 1.0  # how strongly the blob color replaces the texture
    label: int = 1  # class index in the probability maps; 0 is background

    def __post_init__(self):
        if self.end_frame < self.start_frame or self.start_frame < 0:
            raise OutOfBounds(f"bad span [{self.start_frame}, {self.end_frame}]")
        if not 0.0 <= self.contrast <= 1.0:
            raise OutOfBounds("contrast must be in [0, 1]")
        if self.radius_deg <= 0.0:
            raise OutOfBounds("radius must be positive")
        if self.label < 1:
            raise OutOfBounds("labels start at 1; 0 is the background class")


@dataclass
class SynthSceneSpec:
    frame_count: int = 300
    width: int = 320
    height: int = 160
    fps: float = 30.0
    seed: int = 0
    jitter_deg: float = 0.0
    drift_axis: tuple = (0.0, 1.0, 0.0)
    drift_deg_per_frame: float = 0.0
    foe: SphericalDirection | None = None
    foe_step_deg: float = 0.5
    track_count: int = 150
    track_noise_px: float = 0.0
    rois: list[PlantedRoi] = field(default_factory=list)
    region_block: int = 40  # background grid tile side, pixels
    region_span: int = 50  # background region lifetime, frames
    prob_stride: int = 10  # probability maps every Nth frame
    emit_prob_maps: bool = True

    def __post_init__(self):
        if self.frame_count < 2:
            raise OutOfBounds("need at least two frames")
        if self.track_noise_px < 0.0 or self.jitter_deg < 0.0:
            raise OutOfBounds("noise levels must be nonnegative")
        if self.region_block < 1 or self.region_span < 1 or self.prob_stride < 1:
            raise OutOfBounds("region and stride sizes must be positive")
        for r in self.rois:
            if r.end_frame >= self.frame_count:
                raise OutOfBounds(f"ROI span exceeds {self.frame_count} frames")

    def geometry(self) -> EquirectGeometry:
        return EquirectGeometry(self.width, self.height)


def spec_to_dict(spec: SynthSceneSpec) -> dict:
    d = {
        "frame_count": spec.frame_count,
        "width": spec.width,
        "height": spec.height,
        "fps": spec.fps,
        "seed": spec.seed,
        "jitter_deg": spec.jitter_deg,
        "drift_axis": list(spec.drift_axis),
        "drift_deg_per_frame": spec.drift_deg_per_frame,
        "foe": None if spec.foe is None else [spec.foe.theta, spec.foe.phi],
        "foe_step_deg": spec.foe_step_deg,
        "track_count": spec.track_count,
        "track_noise_px": spec.track_noise_px,
        "region_block": spec.region_block,
        "region_span": spec.region_span,
        "prob_stride": spec.prob_stride,
        "emit_prob_maps": spec.emit_prob_maps,
        "rois": [
            {
                "theta": r.theta,
                "phi": r.phi,
                "start_frame": r.start_frame,
                "end_frame": r.end_frame,
                "radius_deg": r.radius_deg,
                "contrast": r.contrast,
                "label": r.label,
            }
            for r in spec.rois
        ],
    }
    return d


def spec_from_dict(d: dict) -> SynthSceneSpec:
    d = dict(d)
    rois = [PlantedRoi(**r) for r in d.pop("rois", [])]
    foe = d.pop("foe", None)
    if foe is not None:
        foe = SphericalDirection(foe[0], foe[1])
    drift_axis = tuple(d.pop("drift_axis", (0.0, 1.0, 0.0)))
    return SynthSceneSpec(rois=rois, foe=foe, drift_axis=drift_axis, **d)


_ROI_PALETTE = [
    (235.0, 40.0, 40.0),
    (40.0, 220.0, 60.0),
    (50.0, 70.0, 235.0),
    (235.0, 220.0, 40.0),
    (220.0, 50.0, 220.0),
]


def _grid_vecs(g: EquirectGeometry) -> np.ndarray:
    xs = np.arange(g.width, dtype=np.float64)
    ys = np.arange(g.height, dtype=np.float64)
    xx, yy = np.meshgrid(xs, ys)
    th, ph = points_to_dirs(xx, yy, g)
    return dirs_to_vecs(th, ph)


def _paint_rois(pano: np.ndarray, spec: SynthSceneSpec, world: np.ndarray) -> np.ndarray:
    out = pano.astype(np.float64)
    h, w = out.shape[:2]
    for roi in spec.rois:
        v = dir_to_vec(SphericalDirection(roi.theta, roi.phi)).as_array()
        mask = (world @ v >= np.cos(np.radians(roi.radius_deg))).reshape(h, w)
        color = np.array(_ROI_PALETTE[(roi.label - 1) % len(_ROI_PALETTE)])
        out[mask] = (1.0 - roi.contrast) * out[mask] + roi.contrast * color
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _background_ids(g: EquirectGeometry, block: int) -> np.ndarray:
    tiles_x = (g.width + block - 1) // block
    yy, xx = np.meshgrid(np.arange(g.height), np.arange(g.width), indexing="ij")
    return (yy // block) * tiles_x + (xx // block)


def scene_rotations(spec: SynthSceneSpec) -> list[UnitQuaternion]:
    return rotation_sequence(
        spec.frame_count,
        spec.jitter_deg,
        spec.drift_axis,
        spec.drift_deg_per_frame,
        spec.seed + 1,
    )


def _scene_flows(
    spec: SynthSceneSpec, rotations: list[UnitQuaternion], grid: np.ndarray
) -> list[FlowField]:
    """Analytic flow t -> t+1: forward step in frame coords, then rotation.

    grid holds the (H*W, 3) directions of the pixel centers; at frame t these
    are directions in frame-t coordinates, where the FOE sits at R_t f_world.
    """
    g = spec.geometry()
    h, w = g.height, g.width
    xx = np.tile(np.arange(w, dtype=np.float64), (h, 1))
    yy = np.tile(np.arange(h, dtype=np.float64)[:, None], (1, w))
    mats = [quat_to_matrix(q) for q in rotations]
    foe_vec = None
    if spec.foe is not None:
        foe_vec = dir_to_vec(spec.foe).as_array()
    flows = []
    for t in range(spec.frame_count - 1):
        moved = grid
        if foe_vec is not None:
            f_t = mats[t] @ foe_vec
            moved = _push_from(grid, f_t, spec.foe_step_deg, "sin")
        rel = mats[t + 1] @ mats[t].T
        moved = moved @ rel.T
        th2, ph2 = vecs_to_dirs(moved)
        x2, y2 = dirs_to_points(th2, ph2, g)
        x2 = x2.reshape(h, w)
        y2 = y2.reshape(h, w)
        du = (x2 - xx + w / 2.0) % w - w / 2.0
        dv = y2 - yy
        flows.append(FlowField(du, dv))
    return flows


def synth_scene(spec: SynthSceneSpec, out_dir) -> Path:
    """Write a full synthetic dataset with ground truth under out_dir.

    Produces frames/ (+manifest), flows/*.flo, tracks.csv, regions/, probs/
    (optional), and ground_truth.json. Everything is seeded and analytic so
    each pipeline stage has an oracle to be checked against.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = spec.geometry()
    world = _grid_vecs(g).reshape(-1, 3)

    pano = _paint_rois(smooth_texture(g, spec.seed), spec, world)
    rotations = scene_rotations(spec)
    mats = [quat_to_matrix(q) for q in rotations]

    frames = []
    static = all(q.w == 1.0 and q.x == q.y == q.z == 0.0 for q in rotations)
    for q in rotations:
        if static:
            frames.append(pano.copy())
        else:
            frames.append(warp_equirect(pano, q))
    formats.write_frames(out / "frames", frames, fps=spec.fps)

    flow_dir = out / "flows"
    flow_dir.mkdir(exist_ok=True)
    flows = _scene_flows(spec, rotations, world)
    for t, fl in enumerate(flows):
        formats.write_flo(flow_dir / f"{t:06d}.flo", np.stack([fl.u, fl.v], axis=2))

    rng = np.random.default_rng(spec.seed + 2)
    vecs = rng.normal(size=(spec.track_count, 3))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    tracks = project_world_tracks(vecs, rotations, g, spec.track_noise_px, spec.seed + 3)
    formats.write_tracks_csv(out / "tracks.csv", tracks)

    background = _background_ids(g, spec.region_block)
    tiles = int(background.max()) + 1
    blob_base = ((spec.frame_count + spec.region_span - 1) // spec.region_span) * tiles
    id_maps = {}
    roi_vecs = [dir_to_vec(SphericalDirection(r.theta, r.phi)).as_array() for r in spec.rois]
    for t in range(spec.frame_count):
        ids = background + (t // spec.region_span) * tiles
        ids = ids.astype(np.uint32)
        frame_world = world @ mats[t]  # R^-1 applied to the frame-t pixel grid
        for i, roi in enumerate(spec.rois):
            if roi.start_frame <= t <= roi.end_frame:
                mask = (frame_world @ roi_vecs[i]) >= np.cos(np.radians(roi.radius_deg))
                ids[mask.reshape(g.height, g.width)] = blob_base + i
        id_maps[t] = ids
    formats.write_region_maps(out / "regions", id_maps)

    if spec.emit_prob_maps:
        n_classes = 1 + max((r.label for r in spec.rois), default=0)
        classes = ["background"] + [f"object{k}" for k in range(1, n_classes)]
        prob_maps = []
        for t in range(0, spec.frame_count, spec.prob_stride):
            probs = np.zeros((n_classes, g.height, g.width))
            if n_classes == 1:
                probs[0] = 1.0
            else:
                rest = 0.1 / (n_classes - 1)
                probs[0] = 0.9
                probs[1:] = rest
                frame_world = world @ mats[t]
                for i, roi in enumerate(spec.rois):
                    if roi.start_frame <= t <= roi.end_frame:
                        m = (frame_world @ roi_vecs[i]) >= np.cos(np.radians(roi.radius_deg))
                        m = m.reshape(g.height, g.width)
                        probs[:, m] = 0.1 / (n_classes - 1)
                        probs[roi.label, m] = 0.9
            prob_maps.append(ClassProbabilityMap(t, classes, probs))
        formats.write_prob_maps(out / "probs", prob_maps)

    truth = {
        "spec": spec_to_dict(spec),
        "rotations": [[q.w, q.x, q.y, q.z] for q in rotations],
        "foe": None if spec.foe is None else [spec.foe.theta, spec.foe.phi],
        "rois": [
            {
                "theta": r.theta,
                "phi": r.phi,
                "start_frame": r.start_frame,
                "end_frame": r.end_frame,
                "label": r.label,
                "region_id": blob_base + i,
            }
            for i, r in enumerate(spec.rois)
        ],
    }
    with open(out / "ground_truth.json", "w", encoding="utf-8") as f:
        json.dump(truth, f, indent=2, sort_keys=True)
        f.write("\n")
    return out
