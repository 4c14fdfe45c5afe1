"""Harris corner detection, NCC patch matching, and track chaining.

Feature tracks are the raw material for both the 360 rotation estimator and
the 2D stabilizer. Matching is template NCC over an integer search window with
a parabola sub-pixel refinement; on panoramic frames the search wraps across
the vertical seam.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMatches, LengthMismatch
from .sampling import to_gray

HARRIS_K = 0.05
NMS_SPACING = 8
PATCH = 15  # odd; NCC template side
SEARCH = 16  # +- pixels around the previous position
NCC_MIN = 0.8


@dataclass
class Match:
    track_id: int
    x_a: float
    y_a: float
    x_b: float
    y_b: float
    score: float


@dataclass
class FeatureTrack:
    track_id: int
    start_frame: int
    points: list[tuple[float, float]] = field(default_factory=list)

    @property
    def end_frame(self) -> int:
        # inclusive index of the last frame the track covers
        return self.start_frame + len(self.points) - 1

    def point_at(self, frame: int) -> tuple[float, float]:
        return self.points[frame - self.start_frame]

    def covers(self, frame: int) -> bool:
        return self.start_frame <= frame <= self.end_frame


def _box_sum(img: np.ndarray, radius: int) -> np.ndarray:
    """Sum over a (2r+1)^2 window via an integral image, edge-padded."""
    pad = np.pad(img, radius + 1, mode="edge")
    ii = np.cumsum(np.cumsum(pad, axis=0), axis=1)
    k = 2 * radius + 1
    h, w = img.shape
    return (
        ii[k : k + h, k : k + w]
        - ii[0:h, k : k + w]
        - ii[k : k + h, 0:w]
        + ii[0:h, 0:w]
    )


def harris_response(gray: np.ndarray, window_radius: int = 1) -> np.ndarray:
    gy, gx = np.gradient(gray.astype(np.float64))
    sxx = _box_sum(gx * gx, window_radius)
    syy = _box_sum(gy * gy, window_radius)
    sxy = _box_sum(gx * gy, window_radius)
    det = sxx * syy - sxy * sxy
    tr = sxx + syy
    return det - HARRIS_K * tr * tr


def detect_corners(
    image: np.ndarray,
    max_count: int = 400,
    quality: float = 0.01,
    min_spacing: int = NMS_SPACING,
    border: int = PATCH // 2 + 1,
) -> list[tuple[float, float]]:
    """Top Harris corners with greedy non-maximum suppression.

    Returns at most max_count (x, y) positions, strongest first, no two closer
    than min_spacing pixels, none closer than `border` to the image edge.
    """
    if not 0.0 < quality <= 1.0:
        raise LengthMismatch(f"quality fraction {quality} outside (0, 1]")
    gray = to_gray(image)
    h, w = gray.shape
    resp = harris_response(gray)
    resp[:border, :] = -np.inf
    resp[-border:, :] = -np.inf
    resp[:, :border] = -np.inf
    resp[:, -border:] = -np.inf

    peak = float(resp.max())
    if not np.isfinite(peak) or peak <= 0.0:
        return []
    ys, xs = np.nonzero(resp >= quality * peak)
    order = np.argsort(resp[ys, xs])[::-1]
    ys, xs = ys[order], xs[order]

    # greedy NMS on an occupancy grid of min_spacing-sized cells
    cell = max(1, min_spacing)
    occ_points: dict[tuple[int, int], list[tuple[int, int]]] = {}
    out: list[tuple[float, float]] = []
    for y, x in zip(ys, xs):
        cx, cy = int(x // cell), int(y // cell)
        ok = True
        for qx, qy in _neighbors(occ_points, cx, cy):
            if (qx - x) ** 2 + (qy - y) ** 2 < min_spacing**2:
                ok = False
                break
        if not ok:
            continue
        out.append((float(x), float(y)))
        occ_points.setdefault((cx, cy), []).append((int(x), int(y)))
        if len(out) >= max_count:
            break
    return out


def _neighbors(grid: dict, cx: int, cy: int):
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            for p in grid.get((cx + dx, cy + dy), ()):  # type: ignore[call-overload]
                yield p


def track_features(
    frame_a: np.ndarray,
    frame_b: np.ndarray,
    points: list[tuple[float, float]],
    panoramic: bool = False,
    patch: int = PATCH,
    search: int = SEARCH,
    ncc_min: float = NCC_MIN,
    track_ids: list[int] | None = None,
) -> list[Match]:
    """Match points from frame_a into frame_b by normalized cross-correlation.

    Points whose best NCC falls below ncc_min, or whose template leaves the
    frame (non-panoramic case), are dropped. Matched positions get a parabola
    sub-pixel refinement along each axis.
    """
    if frame_a.shape != frame_b.shape:
        raise LengthMismatch(f"frame shapes differ: {frame_a.shape} vs {frame_b.shape}")
    if track_ids is not None and len(track_ids) != len(points):
        raise LengthMismatch("track_ids and points length differ")
    a = to_gray(frame_a)
    b = to_gray(frame_b)
    h, w = a.shape
    half = patch // 2
    out: list[Match] = []
    for idx, (px, py) in enumerate(points):
        ix, iy = int(round(px)), int(round(py))
        if not (0 <= iy - half and iy + half < h):
            continue
        if not panoramic and not (0 <= ix - half and ix + half < w):
            continue
        cols_a = np.arange(ix - half, ix + half + 1)
        tpl = a[iy - half : iy + half + 1][:, np.mod(cols_a, w)] if panoramic else a[
            iy - half : iy + half + 1, ix - half : ix + half + 1
        ]
        t0 = tpl - tpl.mean()
        tn = np.sqrt((t0 * t0).sum())
        if tn < 1e-9:
            continue  # flat template, correlation undefined

        row0 = max(0, iy - search - half)
        row1 = min(h, iy + search + half + 1)
        if panoramic:
            cols = np.arange(ix - search - half, ix + search + half + 1)
            region = b[row0:row1][:, np.mod(cols, w)]
            col0 = int(cols[0])  # virtual (unwrapped) first column
        else:
            col0 = max(0, ix - search - half)
            col1 = min(w, ix + search + half + 1)
            region = b[row0:row1, col0:col1]
        surf = _ncc_surface(region, t0, tn, patch)
        if surf.size == 0:
            continue
        best = np.unravel_index(int(np.argmax(surf)), surf.shape)
        score = float(surf[best])
        if score < ncc_min:
            continue
        sy, sx = _subpixel_peak(surf, best)
        bx = col0 + half + sx
        by = row0 + half + sy
        if panoramic:
            bx = float(np.mod(bx, w))
        tid = track_ids[idx] if track_ids is not None else idx
        out.append(Match(tid, float(px), float(py), float(bx), float(by), score))
    return out


def _ncc_surface(region: np.ndarray, tpl0: np.ndarray, tpl_norm: float, patch: int) -> np.ndarray:
    """NCC of a zero-mean template against every patch position in region."""
    rh, rw = region.shape
    if rh < patch or rw < patch:
        return np.zeros((0, 0))
    windows = np.lib.stride_tricks.sliding_window_view(region, (patch, patch))
    n = patch * patch
    sums = windows.sum(axis=(2, 3))
    sqs = (windows * windows).sum(axis=(2, 3))
    cross = np.einsum("ijkl,kl->ij", windows, tpl0)
    var = sqs - sums * sums / n
    denom = np.sqrt(np.maximum(var, 0.0)) * tpl_norm
    with np.errstate(invalid="ignore", divide="ignore"):
        ncc = np.where(denom > 1e-9, cross / denom, -1.0)
    return ncc


def _subpixel_peak(surf: np.ndarray, best: tuple) -> tuple[float, float]:
    """One-dimensional parabola refinement around an integer argmax."""
    by, bx = int(best[0]), int(best[1])

    def refine(vm, v0, vp):
        d = vm - 2.0 * v0 + vp
        if d >= -1e-12:
            return 0.0
        off = 0.5 * (vm - vp) / d
        return float(np.clip(off, -0.5, 0.5))

    dy = dx = 0.0
    if 0 < by < surf.shape[0] - 1:
        dy = refine(surf[by - 1, bx], surf[by, bx], surf[by + 1, bx])
    if 0 < bx < surf.shape[1] - 1:
        dx = refine(surf[by, bx - 1], surf[by, bx], surf[by, bx + 1])
    return by + dy, bx + dx


def build_tracks(per_pair_matches: list[list[Match]], start_frame: int = 0) -> list[FeatureTrack]:
    """Chain adjacent-pair matches into tracks.

    per_pair_matches[t] holds matches between frame start_frame+t and
    start_frame+t+1. A track continues while successive pairs agree on its
    position (the matcher echoes query points verbatim, so equality is exact);
    unmatched positions end the track and new source points spawn new tracks.
    """
    next_id = 0
    open_tracks: dict[tuple[float, float], FeatureTrack] = {}
    done: list[FeatureTrack] = []
    for t, matches in enumerate(per_pair_matches):
        frame = start_frame + t
        still_open: dict[tuple[float, float], FeatureTrack] = {}
        for m in matches:
            key = (m.x_a, m.y_a)
            tr = open_tracks.pop(key, None)
            if tr is None:
                tr = FeatureTrack(next_id, frame, [(m.x_a, m.y_a)])
                next_id += 1
            tr.points.append((m.x_b, m.y_b))
            still_open[(m.x_b, m.y_b)] = tr
        done.extend(open_tracks.values())
        open_tracks = still_open
    done.extend(open_tracks.values())
    done.sort(key=lambda tr: tr.track_id)
    return done


def track_video(
    frames: list[np.ndarray],
    panoramic: bool = False,
    max_count: int = 400,
    quality: float = 0.01,
    redetect_floor: int | None = None,
    **match_kwargs,
) -> list[FeatureTrack]:
    """Detect-and-track over a whole sequence, replenishing lost features.

    New corners are detected whenever live features drop below redetect_floor
    (default max_count // 2); detections landing within the NMS spacing of a
    live feature are discarded so tracks never collide.
    """
    if len(frames) < 2:
        raise EmptyMatches("need at least two frames to track")
    if redetect_floor is None:
        redetect_floor = max_count // 2

    per_pair: list[list[Match]] = []
    live: list[tuple[float, float]] = []
    live_ids: list[int] = []
    next_id = 0
    id_points: dict[int, tuple[float, float]] = {}

    for t in range(len(frames) - 1):
        if len(live) < redetect_floor:
            fresh = detect_corners(frames[t], max_count=max_count, quality=quality)
            for p in fresh:
                if len(live) >= max_count:
                    break
                if any((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 < NMS_SPACING**2 for q in live):
                    continue
                live.append(p)
                live_ids.append(next_id)
                next_id += 1
        matches = track_features(
            frames[t], frames[t + 1], live, panoramic=panoramic, track_ids=live_ids, **match_kwargs
        )
        per_pair.append(matches)
        live = [(m.x_b, m.y_b) for m in matches]
        live_ids = [m.track_id for m in matches]
    return _tracks_from_id_matches(per_pair)


def _tracks_from_id_matches(per_pair: list[list[Match]]) -> list[FeatureTrack]:
    tracks: dict[int, FeatureTrack] = {}
    for t, matches in enumerate(per_pair):
        for m in matches:
            tr = tracks.get(m.track_id)
            if tr is None or tr.end_frame != t:
                # a reused id after a gap would corrupt the chain; ids are
                # never reused by track_video, so this only creates new tracks
                tr = FeatureTrack(m.track_id, t, [(m.x_a, m.y_a)])
                tracks[m.track_id] = tr
            tr.points.append((m.x_b, m.y_b))
    return sorted(tracks.values(), key=lambda tr: tr.track_id)


def tracks_covering(tracks: list[FeatureTrack], frame_a: int, frame_b: int) -> list[FeatureTrack]:
    return [t for t in tracks if t.covers(frame_a) and t.covers(frame_b)]
