"""Region saliency, semantic labels, and ROI track selection.

Regions are space-time superpixels: per-frame pixel masks over a frame span.
Each region gets a 56-dim appearance/motion feature (24 Lab color bins + 16
flow magnitude bins + 16 flow orientation bins, each sub-histogram unit L2),
a contrast saliency against nearby regions, and a semantic label from mean
class probabilities. The top scoring regions become ROI tracks with a
per-frame pointing direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyMask,
    EmptyRegion,
    LengthMismatch,
    MissingFrames,
    OutOfBounds,
)
from .foe import FlowField
from .geometry import EquirectGeometry, SphericalDirection, points_to_dirs, wrap_longitude

COLOR_BINS = 8  # per Lab channel
MAG_BINS = 16  # includes the >= 32 px overflow bin
ORI_BINS = 16
FEATURE_DIM = 3 * COLOR_BINS + MAG_BINS + ORI_BINS

SALIENCY_SIGMA = 0.04  # center-of-mass distance scale, normalized units
SALIENCY_WINDOW = 200  # frames

# Lab channel ranges used for binning; a/b rarely exceed +-110 for sRGB input
_L_RANGE = (0.0, 100.0)
_AB_RANGE = (-110.0, 110.0)

# magnitude bin edges: [0, 0.25) then log-spaced up to 32, overflow above
_MAG_EDGES = np.concatenate([[0.0], np.geomspace(0.25, 32.0, MAG_BINS - 1)])


@dataclass
class TspRegion:
    """Space-time region: per-frame pixel index sets plus derived stats."""

    tsp_id: int
    masks: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    feature: np.ndarray | None = None
    saliency: float = 0.0
    label: int | None = None

    def __post_init__(self):
        for frame, (ys, xs) in self.masks.items():
            if len(ys) == 0 or len(ys) != len(xs):
                raise EmptyRegion(f"region {self.tsp_id} has an empty mask at frame {frame}")

    @property
    def start_frame(self) -> int:
        return min(self.masks)

    @property
    def end_frame(self) -> int:
        return max(self.masks)

    @property
    def midpoint(self) -> float:
        return (self.start_frame + self.end_frame) / 2.0

    def area_at(self, frame: int) -> int:
        return len(self.masks[frame][0])

    def pixel_count(self) -> int:
        return sum(len(ys) for ys, _ in self.masks.values())

    def center_of_mass(self, g: EquirectGeometry) -> np.ndarray:
        """Mean member-pixel position over the whole span, in [0,1]^2."""
        sx = sy = n = 0.0
        for ys, xs in self.masks.values():
            sx += float(np.sum(xs) + 0.5 * len(xs))
            sy += float(np.sum(ys) + 0.5 * len(ys))
            n += len(xs)
        if n == 0:
            raise EmptyRegion(f"region {self.tsp_id} has no pixels")
        return np.array([sx / n / g.width, sy / n / g.height])


@dataclass
class RoiTrack:
    tsp_id: int
    start_frame: int
    end_frame: int
    poses: list[SphericalDirection]
    areas: list[float]
    saliency: float
    label: int | None = None

    def __post_init__(self):
        span = self.end_frame - self.start_frame + 1
        if len(self.poses) != span:
            raise LengthMismatch(f"{len(self.poses)} poses for a {span}-frame span")
        if len(self.areas) != span:
            raise LengthMismatch(f"{len(self.areas)} areas for a {span}-frame span")

    def pose_at(self, frame: int) -> SphericalDirection:
        return self.poses[frame - self.start_frame]

    def area_at(self, frame: int) -> float:
        return self.areas[frame - self.start_frame]

    def covers(self, frame: int) -> bool:
        return self.start_frame <= frame <= self.end_frame


@dataclass
class ClassProbabilityMap:
    frame: int
    classes: list[str]
    probs: np.ndarray  # (C, H, W) float

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 3 or self.probs.shape[0] != len(self.classes):
            raise DimensionMismatch(
                f"probability grid {self.probs.shape} does not match {len(self.classes)} classes"
            )
        sums = self.probs.sum(axis=0)
        if not np.allclose(sums, 1.0, atol=1e-3):
            worst = float(np.abs(sums - 1.0).max())
            raise OutOfBounds(f"per-pixel class probabilities sum to 1 +- {worst:.4f}")


def fallback_segmentation(
    g: EquirectGeometry, frame_count: int, block: int = 64, span: int = 50
) -> list[TspRegion]:
    """Regular grid of block x block x span boxes as stand-in regions.

    Lets the pipeline run without an external segmenter. Edge blocks may be
    smaller; every pixel of every frame belongs to exactly one region.
    """
    if block < 1 or span < 1:
        raise OutOfBounds("block and span must be positive")
    regions = []
    next_id = 0
    ys_all = np.arange(g.height)
    xs_all = np.arange(g.width)
    for t0 in range(0, frame_count, span):
        t1 = min(t0 + span, frame_count)
        for by in range(0, g.height, block):
            rows = ys_all[by : by + block]
            for bx in range(0, g.width, block):
                cols = xs_all[bx : bx + block]
                yy, xx = np.meshgrid(rows, cols, indexing="ij")
                ys = yy.ravel()
                xs = xx.ravel()
                masks = {t: (ys, xs) for t in range(t0, t1)}
                regions.append(TspRegion(next_id, masks))
                next_id += 1
    return regions


def regions_from_id_maps(id_maps: dict[int, np.ndarray]) -> list[TspRegion]:
    """Build regions from per-frame integer id grids (one pass per frame)."""
    masks: dict[int, dict[int, tuple[np.ndarray, np.ndarray]]] = {}
    for frame in sorted(id_maps):
        grid = np.asarray(id_maps[frame])
        ids = np.unique(grid)
        for rid in ids:
            ys, xs = np.nonzero(grid == rid)
            masks.setdefault(int(rid), {})[frame] = (ys, xs)
    return [TspRegion(rid, frame_masks) for rid, frame_masks in sorted(masks.items())]


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """sRGB uint8 (or float in [0,255]) to CIE Lab, D65 white point."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    m = np.array(
        [
            [0.4124564, 0.3575761, 0.1804375],
            [0.2126729, 0.7151522, 0.0721750],
            [0.0193339, 0.1191920, 0.9503041],
        ]
    )
    xyz = lin @ m.T
    white = np.array([0.95047, 1.0, 1.08883])
    t = xyz / white
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3 * delta * delta) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def _channel_hist(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    return np.bincount(idx, minlength=bins).astype(np.float64)


def _unit(h: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(h))
    return h / n if n > 0 else h


def tsp_features(
    region: TspRegion,
    lab_frames: dict[int, np.ndarray],
    flows: dict[int, FlowField],
) -> np.ndarray:
    """Concatenated unit-L2 histograms: Lab color, flow magnitude, orientation.

    Flow histograms count every member pixel of every covered frame that has
    a flow field; zero-flow pixels land in magnitude bin 0 and orientation
    bin 0 (atan2(0, 0) = 0). A region with no flow coverage at all is treated
    as static: magnitude and orientation mass go entirely to bin 0.
    """
    if not region.masks:
        raise EmptyRegion(f"region {region.tsp_id} has no pixels")
    color = np.zeros(3 * COLOR_BINS)
    mag_hist = np.zeros(MAG_BINS)
    ori_hist = np.zeros(ORI_BINS)
    for frame, (ys, xs) in region.masks.items():
        if frame not in lab_frames:
            raise MissingFrames(f"no color frame {frame} for region {region.tsp_id}")
        lab = lab_frames[frame]
        if ys.max() >= lab.shape[0] or xs.max() >= lab.shape[1]:
            raise OutOfBounds(f"region {region.tsp_id} mask exceeds frame bounds at {frame}")
        px = lab[ys, xs]
        color[:COLOR_BINS] += _channel_hist(px[:, 0], *_L_RANGE, COLOR_BINS)
        color[COLOR_BINS : 2 * COLOR_BINS] += _channel_hist(px[:, 1], *_AB_RANGE, COLOR_BINS)
        color[2 * COLOR_BINS :] += _channel_hist(px[:, 2], *_AB_RANGE, COLOR_BINS)
        fl = flows.get(frame)
        if fl is None:
            continue
        u = fl.u[ys, xs]
        v = fl.v[ys, xs]
        mag = np.hypot(u, v)
        mi = np.searchsorted(_MAG_EDGES, mag, side="right") - 1
        np.clip(mi, 0, MAG_BINS - 1, out=mi)
        mag_hist += np.bincount(mi, minlength=MAG_BINS)
        ang = np.degrees(np.arctan2(v, u)) % 360.0
        oi = np.floor(ang / (360.0 / ORI_BINS)).astype(np.int64)
        np.clip(oi, 0, ORI_BINS - 1, out=oi)
        ori_hist += np.bincount(oi, minlength=ORI_BINS)
    if mag_hist.sum() == 0:
        mag_hist[0] = 1.0
        ori_hist[0] = 1.0
    return np.concatenate([_unit(color), _unit(mag_hist), _unit(ori_hist)])


def tsp_saliency(
    regions: list[TspRegion],
    g: EquirectGeometry,
    window: int | None = SALIENCY_WINDOW,
    sigma: float = SALIENCY_SIGMA,
) -> np.ndarray:
    """Feature-contrast saliency per region.

    s_c = |r_c| * sum_i exp(-|m_i - m_c| / sigma) * |x_i - x_c|^2, summed over
    regions i whose temporal midpoint falls within window/2 frames of c's
    (all regions when window is None). The i = c term vanishes on its own.
    """
    n = len(regions)
    if n == 0:
        return np.zeros(0)
    feats = np.stack([r.feature for r in regions])
    if feats.shape[1] != FEATURE_DIM:
        raise DimensionMismatch(f"features are {feats.shape[1]}-dim, expected {FEATURE_DIM}")
    centers = np.stack([r.center_of_mass(g) for r in regions])
    sizes = np.array([r.pixel_count() for r in regions], dtype=np.float64)
    mids = np.array([r.midpoint for r in regions])
    order = np.argsort(mids, kind="stable")
    sorted_mids = mids[order]
    out = np.zeros(n)
    half = np.inf if window is None else window / 2.0
    for c in range(n):
        if np.isinf(half):
            sel = slice(0, n)
            idx = order[sel]
        else:
            lo = np.searchsorted(sorted_mids, mids[c] - half, side="left")
            hi = np.searchsorted(sorted_mids, mids[c] + half, side="right")
            idx = order[lo:hi]
        d2 = np.sum((feats[idx] - feats[c]) ** 2, axis=1)
        w = np.exp(-np.linalg.norm(centers[idx] - centers[c], axis=1) / sigma)
        out[c] = sizes[c] * float(w @ d2)
    return out


def tsp_semantic_label(region: TspRegion, prob_maps: list[ClassProbabilityMap]) -> int:
    """Class with the highest mean probability over the region's support.

    Frames without their own probability map use the nearest available
    frame's map. Ties break toward the lowest class index.
    """
    if not prob_maps:
        raise MissingFrames("no probability maps given")
    classes = prob_maps[0].classes
    for m in prob_maps[1:]:
        if m.classes != classes:
            raise DimensionMismatch("probability maps disagree on the class list")
    map_frames = np.array([m.frame for m in prob_maps])
    sums = np.zeros(len(classes))
    count = 0
    for frame, (ys, xs) in region.masks.items():
        nearest = int(np.argmin(np.abs(map_frames - frame)))
        probs = prob_maps[nearest].probs
        sums += probs[:, ys, xs].sum(axis=1)
        count += len(ys)
    if count == 0:
        raise EmptyRegion(f"region {region.tsp_id} has no pixels")
    return int(np.argmax(sums / count))


def default_label(regions: list[TspRegion]) -> int | None:
    """Label with the highest cumulative saliency; ties to the lowest id."""
    totals: dict[int, float] = {}
    for r in regions:
        if r.label is None:
            continue
        totals[r.label] = totals.get(r.label, 0.0) + r.saliency
    if not totals:
        return None
    best = max(sorted(totals), key=lambda k: totals[k])
    return best


def roi_pose(mask: tuple[np.ndarray, np.ndarray], g: EquirectGeometry) -> SphericalDirection:
    """Center of mass of a pixel mask in (theta, phi) degrees.

    Longitudes are unwrapped around their circular mean before averaging so
    a mask straddling the +-180 seam lands on the seam, not at 0.
    """
    ys, xs = mask
    if len(ys) == 0:
        raise EmptyMask("empty mask")
    th, ph = points_to_dirs(np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64), g)
    rad = np.radians(th)
    anchor = np.degrees(np.arctan2(np.mean(np.sin(rad)), np.mean(np.cos(rad))))
    th = anchor + (th - anchor + 180.0) % 360.0 - 180.0
    return SphericalDirection(wrap_longitude(float(np.mean(th))), float(np.mean(ph)))


def region_to_roi(region: TspRegion, g: EquirectGeometry) -> RoiTrack:
    start, end = region.start_frame, region.end_frame
    poses = []
    areas = []
    for t in range(start, end + 1):
        if t not in region.masks:
            raise MissingFrames(f"region {region.tsp_id} missing frame {t} inside its span")
        poses.append(roi_pose(region.masks[t], g))
        areas.append(float(region.area_at(t)))
    return RoiTrack(region.tsp_id, start, end, poses, areas, region.saliency, region.label)


def select_rois(
    regions: list[TspRegion],
    g: EquirectGeometry,
    chosen_labels: set[int] | None = None,
    subsequence: int = 2000,
    k: int = 3,
) -> list[RoiTrack]:
    """Top-k regions by saliency per temporal subsequence, as ROI tracks.

    When no labels are chosen, only the label with the highest cumulative
    saliency competes. Regions fall into subsequences by temporal midpoint.
    The final list is sorted by saliency, highest first.
    """
    if k < 1:
        raise OutOfBounds("k must be at least 1")
    labels = chosen_labels
    if labels is None:
        d = default_label(regions)
        labels = set() if d is None else {d}
    eligible = [r for r in regions if r.label is not None and r.label in labels]
    buckets: dict[int, list[TspRegion]] = {}
    for r in eligible:
        buckets.setdefault(int(r.midpoint // subsequence), []).append(r)
    picked: list[TspRegion] = []
    for key in sorted(buckets):
        group = sorted(buckets[key], key=lambda r: (-r.saliency, r.tsp_id))
        picked.extend(group[:k])
    picked.sort(key=lambda r: (-r.saliency, r.tsp_id))
    return [region_to_roi(r, g) for r in picked]
