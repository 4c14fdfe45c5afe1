"""2D inter-frame motion models: translation, similarity, homography.

All models are 3x3 row-major matrices acting on homogeneous pixel coordinates,
normalized so h33 = 1. Model selection uses AIC over the full match set with
the parameter counts k = 2 / 4 / 8.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import Degenerate, NoConsensus, TooFewMatches

AIC_VARIANCE_FLOOR = 1e-12
RANSAC_ITERATIONS = 500
RANSAC_THRESHOLD = 2.0
HORN_RANK_TOL = 1e-9  # singular-value ratio below which DLT is rank-deficient


class ModelKind(Enum):
    TRANSLATION = "translation"
    SIMILARITY = "similarity"
    HOMOGRAPHY = "homography"

    @property
    def dof(self) -> int:
        return {ModelKind.TRANSLATION: 2, ModelKind.SIMILARITY: 4, ModelKind.HOMOGRAPHY: 8}[self]

    @property
    def min_samples(self) -> int:
        return {ModelKind.TRANSLATION: 1, ModelKind.SIMILARITY: 2, ModelKind.HOMOGRAPHY: 4}[self]


def _as_points(pts) -> np.ndarray:
    a = np.asarray(pts, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 2:
        raise TooFewMatches(f"expected (N, 2) point array, got {a.shape}")
    return a


def fit_translation(src, dst) -> np.ndarray:
    src, dst = _as_points(src), _as_points(dst)
    if len(src) == 0:
        raise TooFewMatches("no matches")
    t = (dst - src).mean(axis=0)
    h = np.eye(3)
    h[0, 2], h[1, 2] = t
    return h


def fit_similarity(src, dst) -> np.ndarray:
    """Least-squares 4-DOF fit of [[a, -b, tx], [b, a, ty]]."""
    src, dst = _as_points(src), _as_points(dst)
    if len(src) < 2:
        raise TooFewMatches(f"similarity needs >= 2 matches, got {len(src)}")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    p = src - cs
    q = dst - cd
    denom = float((p * p).sum())
    if denom < 1e-12:
        raise Degenerate("source points coincide")
    a = float((p[:, 0] * q[:, 0] + p[:, 1] * q[:, 1]).sum()) / denom
    b = float((p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]).sum()) / denom
    h = np.eye(3)
    h[0, 0], h[0, 1] = a, -b
    h[1, 0], h[1, 1] = b, a
    h[:2, 2] = cd - h[:2, :2] @ cs
    return h


def fit_homography(src, dst) -> np.ndarray:
    """Normalized DLT (translate to centroid, scale to mean distance sqrt(2))."""
    src, dst = _as_points(src), _as_points(dst)
    n = len(src)
    if n < 4:
        raise TooFewMatches(f"homography needs >= 4 matches, got {n}")
    ts, ps = _hartley_normalize(src)
    td, pd = _hartley_normalize(dst)
    a = np.zeros((2 * n, 9))
    x, y = ps[:, 0], ps[:, 1]
    u, v = pd[:, 0], pd[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v
    _, s, vt = np.linalg.svd(a)
    if s[0] <= 0.0 or s[-2] / s[0] < HORN_RANK_TOL:
        raise Degenerate("point configuration does not determine a homography")
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ h @ ts
    if abs(h[2, 2]) < 1e-12:
        raise Degenerate("homography maps the origin plane to infinity")
    return h / h[2, 2]


def _hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise Degenerate("points coincide")
    s = np.sqrt(2.0) / d
    t = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return t, (pts - c) * s


def apply_model(h: np.ndarray, pts) -> np.ndarray:
    pts = _as_points(pts)
    ph = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    out = ph @ np.asarray(h, dtype=np.float64).T
    w = out[:, 2]
    safe = np.where(np.abs(w) < 1e-12, np.nan, w)
    return out[:, :2] / safe[:, None]


def residuals(h: np.ndarray, src, dst) -> np.ndarray:
    """Euclidean reprojection distances; points mapped behind the plane get +inf."""
    dst = _as_points(dst)
    proj = apply_model(h, src)
    r = np.sqrt(((proj - dst) ** 2).sum(axis=1))
    return np.where(np.isnan(r), np.inf, r)


_FITTERS = {
    ModelKind.TRANSLATION: fit_translation,
    ModelKind.SIMILARITY: fit_similarity,
    ModelKind.HOMOGRAPHY: fit_homography,
}


def ransac_fit(
    src,
    dst,
    kind: ModelKind,
    iterations: int = RANSAC_ITERATIONS,
    threshold: float = RANSAC_THRESHOLD,
    rng: np.random.Generator | int | None = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded RANSAC around the kind's fitter; returns (model, inlier mask).

    The winning hypothesis (most inliers, first found on ties) is refit on its
    inlier set. Raises NoConsensus when even the best hypothesis explains no
    point beyond its own minimal sample (for match sets larger than the sample).
    """
    src, dst = _as_points(src), _as_points(dst)
    n = len(src)
    m = kind.min_samples
    if n < m:
        raise TooFewMatches(f"{kind.value} needs >= {m} matches, got {n}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    fitter = _FITTERS[kind]

    best_mask: np.ndarray | None = None
    best_count = 0
    for _ in range(iterations):
        idx = rng.choice(n, size=m, replace=False) if n > m else np.arange(n)
        try:
            h = fitter(src[idx], dst[idx])
        except Degenerate:
            continue
        mask = residuals(h, src, dst) < threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
        if n == m:
            break
    if best_mask is None or best_count < min(m + 1, n):
        raise NoConsensus(f"{kind.value}: best hypothesis kept {best_count}/{n} matches")
    try:
        h = fitter(src[best_mask], dst[best_mask])
    except Degenerate as e:
        raise NoConsensus(f"{kind.value}: inlier refit degenerate") from e
    return h, best_mask


def aic_score(res, k: int) -> float:
    """n * ln(max(mean squared residual, 1e-12)) + 2k."""
    r = np.asarray(res, dtype=np.float64)
    n = len(r)
    if n == 0:
        raise TooFewMatches("no residuals")
    mean_sq = float((r * r).mean())
    return n * np.log(max(mean_sq, AIC_VARIANCE_FLOOR)) + 2.0 * k


def admissible_kinds(n: int) -> list[ModelKind]:
    if n >= 4:
        return [ModelKind.TRANSLATION, ModelKind.SIMILARITY, ModelKind.HOMOGRAPHY]
    if n >= 2:
        return [ModelKind.TRANSLATION, ModelKind.SIMILARITY]
    if n >= 1:
        return [ModelKind.TRANSLATION]
    raise TooFewMatches("no matches")


def select_model_aic(
    src,
    dst,
    iterations: int = RANSAC_ITERATIONS,
    threshold: float = RANSAC_THRESHOLD,
    seed: int = 0,
    use_ransac: bool = True,
) -> tuple[ModelKind, np.ndarray]:
    """Fit every admissible model kind and keep the AIC minimizer.

    AIC is evaluated on residuals over ALL matches (outliers included), so a
    RANSAC fit that ignores outliers still pays for them here. Ties prefer the
    model with fewer parameters. use_ransac=False switches to direct
    least-squares fits on the full match set.
    """
    src, dst = _as_points(src), _as_points(dst)
    n = len(src)
    best: tuple[float, ModelKind, np.ndarray] | None = None
    for kind in admissible_kinds(n):
        try:
            if use_ransac:
                h, _ = ransac_fit(src, dst, kind, iterations, threshold, rng=seed)
            else:
                h = _FITTERS[kind](src, dst)
        except (Degenerate, NoConsensus):
            continue
        r = residuals(h, src, dst)
        if not np.all(np.isfinite(r)):
            continue
        score = aic_score(r, kind.dof)
        if best is None or score < best[0]:
            best = (score, kind, h)
    if best is None:
        # wild tiny match sets can fail consensus for every kind; the mean
        # displacement is always defined, so fall back to it
        return ModelKind.TRANSLATION, fit_translation(src, dst)
    return best[1], best[2]
