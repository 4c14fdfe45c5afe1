"""End-to-end orchestration: input directory in, planned hyperlapse out.

Stages run in a fixed order (stabilize360, foe, analyze, plan, select,
render, stab2d); each one reads whatever it needs from memory or from the
artifacts an earlier invocation left in the output directory, so single
stages can be rerun in isolation. All estimated directions downstream of
stabilization live in stabilized coordinates: anything measured on the
input frames (FOE, region poses, track points) is rotated by the per-frame
corrective rotation before use.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .config import PipelineConfig, save_config
from .content import (
    ClassProbabilityMap,
    RoiTrack,
    fallback_segmentation,
    regions_from_id_maps,
    rgb_to_lab,
    select_rois,
    tsp_features,
    tsp_saliency,
    tsp_semantic_label,
)
from .errors import AllMissing, BadFileFormat, Hyperlapse360Error, StageFailure
from .foe import FlowField, derotate_flow, locate_foe, smooth_foe_track, vote_frame
from .frameselect import FramePlan, alignment_cost, frame_importance, select_frames
from .geometry import (
    EquirectGeometry,
    SphericalDirection,
    UnitQuaternion,
    dir_to_vec,
    dirs_to_vecs,
    points_to_dirs,
    quat_rotate,
    quat_to_matrix,
    vec_to_dir,
    vecs_to_dirs,
)
from .render import FovCurve, fov_curve, render_nfov, project_dirs_to_nfov, warp_frame
from .stab2d import stabilize_video
from .stab360 import RotationTrack, compute_rotation_track, warp_equirect
from .tracking import FeatureTrack, track_video, tracks_covering
from .viewplan import CameraPath, plan_view_path

log = logging.getLogger(__name__)

STAGE_ORDER = ["stabilize360", "foe", "analyze", "plan", "select", "render", "stab2d"]


@dataclass
class Dataset:
    """In-memory view of an input directory."""

    frames: list[np.ndarray]
    fps: float
    tracks: list[FeatureTrack] | None = None
    flows: dict[int, FlowField] = field(default_factory=dict)
    id_maps: dict[int, np.ndarray] | None = None
    prob_maps: list[ClassProbabilityMap] | None = None

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def geometry(self) -> EquirectGeometry:
        h, w = self.frames[0].shape[:2]
        return EquirectGeometry(w, h)


def load_dataset(input_dir: str | Path) -> Dataset:
    """Read frames plus whichever auxiliary inputs are present.

    frames/ is mandatory; tracks.csv, flows/, regions/ and probs/ are
    optional and the pipeline degrades per stage when they are missing.
    Auxiliary grids must match the frame size.
    """
    d = Path(input_dir)
    if not (d / "frames" / "manifest.json").exists():
        raise BadFileFormat(f"{d}: no frames/manifest.json; not an input directory")
    frames, _ = formats.read_frames(d / "frames")
    data = Dataset(frames=frames, fps=float(formats.read_manifest(d / "frames")["fps"]))
    h, w = frames[0].shape[:2]

    if (d / "tracks.csv").exists():
        data.tracks = formats.read_tracks_csv(d / "tracks.csv")

    flow_dir = d / "flows"
    if flow_dir.is_dir():
        for path in sorted(flow_dir.glob("*.flo")):
            try:
                t = int(path.stem)
            except ValueError:
                continue
            arr = formats.read_flo(path)
            if arr.shape[:2] != (h, w):
                raise BadFileFormat(f"{path}: flow {arr.shape[1]}x{arr.shape[0]} vs frames {w}x{h}")
            if t >= data.frame_count - 1:
                log.warning("ignoring flow %s: no frame pair %d..%d", path.name, t, t + 1)
                continue
            data.flows[t] = FlowField(arr[:, :, 0], arr[:, :, 1])

    if (d / "regions" / "index.json").exists():
        data.id_maps = formats.read_region_maps(d / "regions")
        for t, grid in data.id_maps.items():
            if grid.shape != (h, w):
                raise BadFileFormat(f"region map {t}: {grid.shape} vs frames {(h, w)}")

    if (d / "probs" / "index.json").exists():
        data.prob_maps = formats.read_prob_maps(d / "probs")
        for pm in data.prob_maps:
            if pm.probs.shape[1:] != (h, w):
                raise BadFileFormat(f"probability map {pm.frame}: {pm.probs.shape[1:]} vs frames {(h, w)}")

    return data


_ROTATION_FILES = {
    "rel": "rotations_relative.csv",
    "cum": "rotations_cumulative.csv",
    "smooth": "rotations_smoothed.csv",
    "corr": "rotations_corrective.csv",
}


class RunContext:
    """Holds stage products, falling back to artifacts already on disk."""

    def __init__(self, data: Dataset, out_dir: str | Path, cfg: PipelineConfig):
        self.data = data
        self.out = Path(out_dir)
        self.cfg = cfg
        self._tracks = data.tracks
        self._rot: RotationTrack | None = None
        self._foe_smoothed: list[SphericalDirection] | None = None
        self._foe_done = False
        self._rois: list[RoiTrack] | None = None
        self._path: CameraPath | None = None
        self._plan: FramePlan | None = None
        self._fov: FovCurve | None = None
        self._nfov: list[np.ndarray] | None = None

    # accessors: memory first, then the output directory

    def tracks(self) -> list[FeatureTrack]:
        if self._tracks is None:
            cached = self.out / "tracks.csv"
            if cached.exists():
                self._tracks = formats.read_tracks_csv(cached)
            else:
                log.info("no feature tracks supplied; tracking %d frames", self.data.frame_count)
                self._tracks = track_video(self.data.frames)
                formats.write_tracks_csv(cached, self._tracks)
        return self._tracks

    def rotation_track(self) -> RotationTrack:
        if self._rot is None:
            parts = {
                key: formats.read_rotations_csv(self.out / name)
                for key, name in _ROTATION_FILES.items()
            }
            self._rot = RotationTrack(parts["rel"], parts["cum"], parts["smooth"], parts["corr"])
        return self._rot

    def foe_smoothed(self) -> list[SphericalDirection] | None:
        if not self._foe_done:
            path = self.out / "foe_smoothed.csv"
            if path.exists():
                self._foe_smoothed = [d for _, d, _ in formats.read_foe_csv(path)]
            self._foe_done = True
        return self._foe_smoothed

    def rois(self) -> list[RoiTrack]:
        if self._rois is None:
            self._rois = formats.read_rois_json(self.out / "rois.json")
        return self._rois

    def path(self) -> CameraPath:
        if self._path is None:
            self._path = formats.read_path_csv(self.out / "path.csv")
        return self._path

    def plan(self) -> FramePlan:
        if self._plan is None:
            self._plan = FramePlan(formats.read_plan_csv(self.out / "plan.csv"))
        return self._plan

    def fov(self) -> FovCurve:
        if self._fov is None:
            self._fov = formats.read_fov_csv(self.out / "fov.csv")
        return self._fov

    def nfov_frames(self) -> list[np.ndarray]:
        if self._nfov is None:
            self._nfov, _ = formats.read_frames(self.out / "frames_nfov")
        return self._nfov


def _rotate_dirs(theta: np.ndarray, phi: np.ndarray, q: UnitQuaternion) -> tuple[np.ndarray, np.ndarray]:
    vecs = dirs_to_vecs(np.asarray(theta, dtype=np.float64), np.asarray(phi, dtype=np.float64))
    return vecs_to_dirs(vecs @ quat_to_matrix(q).T)


def _stage_stabilize360(ctx: RunContext) -> None:
    tracks = ctx.tracks()
    rot = compute_rotation_track(
        tracks,
        ctx.data.geometry,
        ctx.data.frame_count,
        sigma=ctx.cfg.stab360.smooth_sigma,
        rng=ctx.cfg.seed,
        on_insufficient="identity",
    )
    ctx._rot = rot
    for key, name in _ROTATION_FILES.items():
        formats.write_rotations_csv(ctx.out / name, getattr(rot, key))


def _stage_foe(ctx: RunContext) -> None:
    """Locate the focus of expansion on every flow field, then smooth.

    Flows describe the raw input frames: the estimated camera rotation is
    subtracted first (a rotational field would otherwise vote its axis in as
    a spurious FOE), and each estimate is rotated into stabilized
    coordinates before smoothing. Frames whose flow is missing or votes
    inconclusively are filled by the smoother.
    """
    ctx._foe_done = True
    ctx._foe_smoothed = None
    if not ctx.data.flows:
        log.info("no flow fields supplied; planning without an FOE track")
        return
    rot = ctx.rotation_track()
    g = ctx.data.geometry
    fc = ctx.cfg.foe
    raw: list[tuple[int, SphericalDirection, float]] = []
    track: list[SphericalDirection | None] = [None] * ctx.data.frame_count
    for t in sorted(ctx.data.flows):
        flow = ctx.data.flows[t]
        if fc.derotate:
            flow = derotate_flow(flow, rot.rel[t], g)
        try:
            votes = vote_frame(
                flow,
                g,
                steps=fc.circle_steps,
                stride=fc.vote_stride,
                flow_min=fc.flow_min,
                downscale=fc.downscale,
            )
            foe, _, conf = locate_foe(votes, flow)
        except Hyperlapse360Error as exc:
            log.debug("frame %d: no FOE (%s)", t, exc)
            continue
        stab = vec_to_dir(quat_rotate(rot.corr[t], dir_to_vec(foe)))
        raw.append((t, stab, conf))
        track[t] = stab
    formats.write_foe_csv(ctx.out / "foe_raw.csv", raw)
    try:
        smoothed = smooth_foe_track(track, ctx.cfg.foe.smooth_sigma)
    except AllMissing:
        log.warning("no frame produced a confident FOE; planning without an FOE track")
        return
    ctx._foe_smoothed = smoothed
    formats.write_foe_csv(
        ctx.out / "foe_smoothed.csv", [(t, d, 1.0) for t, d in enumerate(smoothed)]
    )


def _stage_analyze(ctx: RunContext) -> None:
    """Segment, score and label space-time regions; keep the top ROI tracks."""
    data = ctx.data
    g = data.geometry
    cc = ctx.cfg.content
    if data.id_maps is not None:
        regions = regions_from_id_maps(data.id_maps)
    else:
        log.info("no region maps supplied; using a fixed grid segmentation")
        regions = fallback_segmentation(g, data.frame_count, block=cc.fallback_block, span=cc.fallback_span)
    lab_frames = {t: rgb_to_lab(f) for t, f in enumerate(data.frames)}
    for region in regions:
        region.feature = tsp_features(region, lab_frames, data.flows)
    scores = tsp_saliency(regions, g, window=cc.saliency_window, sigma=cc.saliency_sigma)
    for region, s in zip(regions, scores):
        region.saliency = float(s)
    if data.prob_maps:
        for region in regions:
            region.label = tsp_semantic_label(region, data.prob_maps)
    else:
        log.warning("no probability maps supplied; ROIs are saliency-only (all label 0)")
        for region in regions:
            region.label = 0
    labels = None if cc.labels is None else set(cc.labels)
    rois = select_rois(regions, g, chosen_labels=labels, subsequence=cc.subsequence, k=cc.max_rois)

    rot = ctx.rotation_track()
    stabilized = []
    for roi in rois:
        poses = [
            vec_to_dir(quat_rotate(rot.corr[t], dir_to_vec(roi.pose_at(t))))
            for t in range(roi.start_frame, roi.end_frame + 1)
        ]
        stabilized.append(
            RoiTrack(roi.tsp_id, roi.start_frame, roi.end_frame, poses, roi.areas, roi.saliency, roi.label)
        )
    ctx._rois = stabilized
    formats.write_rois_json(ctx.out / "rois.json", stabilized)


def _stage_plan(ctx: RunContext) -> None:
    params = ctx.cfg.plan.to_params(ctx.cfg.select.speedup)
    path = plan_view_path(ctx.rois(), ctx.foe_smoothed(), ctx.data.frame_count, params)
    for message in path.warnings:
        log.warning("plan: %s", message)
    ctx._path = path
    formats.write_path_csv(ctx.out / "path.csv", path)


def _stage_select(ctx: RunContext) -> None:
    """Pick output frames; alignment cost projects shared tracks into both views."""
    path = ctx.path()
    tracks = ctx.tracks()
    rot = ctx.rotation_track()
    params = ctx.cfg.select.to_params()
    curve = frame_importance(path, ctx.rois())
    out_w, out_h = ctx.cfg.render.out_width, ctx.cfg.render.out_height
    fov = ctx.cfg.zoom.default_fov
    g = ctx.data.geometry

    def project(points: np.ndarray, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        th, ph = points_to_dirs(points[:, 0], points[:, 1], g)
        th, ph = _rotate_dirs(th, ph, rot.corr[t])
        return project_dirs_to_nfov(th, ph, path.poses[t], fov, out_w, out_h)

    def alignment(i: int, j: int) -> float:
        shared = tracks_covering(tracks, i, j)
        if not shared:
            return alignment_cost(
                np.zeros((0, 2)), np.zeros((0, 2)), out_w, out_h,
                params.tau_m_fraction, params.gamma_fraction,
            )
        pa = np.array([tr.point_at(i) for tr in shared], dtype=np.float64)
        pb = np.array([tr.point_at(j) for tr in shared], dtype=np.float64)
        xa, ya, fa = project(pa, i)
        xb, yb, fb = project(pb, j)
        keep = fa & fb
        return alignment_cost(
            np.column_stack([xa[keep], ya[keep]]),
            np.column_stack([xb[keep], yb[keep]]),
            out_w, out_h, params.tau_m_fraction, params.gamma_fraction,
        )

    plan = select_frames(ctx.data.frame_count, params, curve=curve, alignment=alignment)
    ctx._plan = plan
    formats.write_plan_csv(ctx.out / "plan.csv", plan.frames)


def _stage_render(ctx: RunContext) -> None:
    """Zoom curve plus NFOV rendering of the selected, stabilized frames."""
    g = ctx.data.geometry
    path = ctx.path()
    plan = ctx.plan()
    rot = ctx.rotation_track()
    curve = fov_curve(ctx.rois(), path, g, ctx.cfg.zoom.to_params())
    ctx._fov = curve
    formats.write_fov_csv(ctx.out / "fov.csv", curve)

    out_w, out_h = ctx.cfg.render.out_width, ctx.cfg.render.out_height
    stabilized = [warp_equirect(ctx.data.frames[f], rot.corr[f]) for f in plan.frames]
    nfov = [
        render_nfov(frame, path.poses[f], curve.at(f), out_w, out_h)
        for frame, f in zip(stabilized, plan.frames)
    ]
    ctx._nfov = nfov
    formats.write_frames(ctx.out / "frames_stabilized", stabilized, fps=ctx.data.fps, ext=ctx.cfg.render.ext)
    formats.write_frames(ctx.out / "frames_nfov", nfov, fps=ctx.data.fps, ext=ctx.cfg.render.ext)


def _stage_stab2d(ctx: RunContext) -> None:
    frames = ctx.nfov_frames()
    transforms, kinds = stabilize_video(frames, params=ctx.cfg.stab2d.to_params(), seed=ctx.cfg.seed)
    final = [warp_frame(f, b) for f, b in zip(frames, transforms)]
    formats.write_transforms_csv(ctx.out / "transforms.csv", transforms, [None] + list(kinds))
    formats.write_frames(ctx.out / "frames_final", final, fps=ctx.data.fps, ext=ctx.cfg.render.ext)


_STAGES = {
    "stabilize360": _stage_stabilize360,
    "foe": _stage_foe,
    "analyze": _stage_analyze,
    "plan": _stage_plan,
    "select": _stage_select,
    "render": _stage_render,
    "stab2d": _stage_stab2d,
}


def run_stage(ctx: RunContext, name: str) -> float:
    """Run one stage; returns its wall time. Module errors become StageFailure."""
    if name not in _STAGES:
        raise BadFileFormat(f"unknown stage {name!r}")
    ctx.out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        _STAGES[name](ctx)
    except StageFailure:
        raise
    except Hyperlapse360Error as exc:
        raise StageFailure(name, exc) from exc
    elapsed = time.perf_counter() - start
    log.info("stage %s: %.2fs", name, elapsed)
    return elapsed


def run_pipeline(input_dir: str | Path, out_dir: str | Path, cfg: PipelineConfig | None = None) -> RunContext:
    """Execute every stage in order and write all artifacts to out_dir."""
    cfg = (cfg or PipelineConfig()).validate()
    data = load_dataset(input_dir)
    ctx = RunContext(data, out_dir, cfg)
    ctx.out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, ctx.out / "config.json")
    timings = {}
    for name in STAGE_ORDER:
        timings[name] = run_stage(ctx, name)
    summary = {
        "stages": timings,
        "total_seconds": float(sum(timings.values())),
        "frame_count": data.frame_count,
        "selected_count": len(ctx.plan()),
    }
    with open(ctx.out / "stage_timings.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ctx
