import numpy as np
import pytest

from hyperlapse360.content import (
    ClassProbabilityMap,
    RoiTrack,
    TspRegion,
    default_label,
    fallback_segmentation,
    region_to_roi,
    regions_from_id_maps,
    rgb_to_lab,
    roi_pose,
    select_rois,
    tsp_features,
    tsp_saliency,
    tsp_semantic_label,
    FEATURE_DIM,
)
from hyperlapse360.errors import (
    DimensionMismatch,
    EmptyMask,
    EmptyRegion,
    LengthMismatch,
    MissingFrames,
    OutOfBounds,
)
from hyperlapse360.foe import FlowField
from hyperlapse360.geometry import EquirectGeometry, points_to_dirs

G = EquirectGeometry(256, 128)


def _box_region(tsp_id, frames, y0, y1, x0, x1):
    yy, xx = np.meshgrid(np.arange(y0, y1), np.arange(x0, x1), indexing="ij")
    masks = {t: (yy.ravel(), xx.ravel()) for t in frames}
    return TspRegion(tsp_id, masks)


def _pixel_region(tsp_id, frames, y, x):
    masks = {t: (np.array([y]), np.array([x])) for t in frames}
    return TspRegion(tsp_id, masks)


class TestFallbackSegmentation:
    def test_region_count_full_hd(self):
        big = EquirectGeometry(1920, 960)
        regions = fallback_segmentation(big, 5, block=64, span=5)
        assert len(regions) == 30 * 15

    def test_single_slab_when_span_covers_all(self):
        regions = fallback_segmentation(G, 7, block=64, span=7)
        assert len(regions) == (256 // 64) * (128 // 64)
        for r in regions:
            assert r.start_frame == 0
            assert r.end_frame == 6

    def test_masks_partition_every_pixel(self):
        regions = fallback_segmentation(G, 3, block=48, span=2)
        for t in range(3):
            cover = np.zeros((G.height, G.width), dtype=np.int64)
            for r in regions:
                if t in r.masks:
                    ys, xs = r.masks[t]
                    cover[ys, xs] += 1
            assert np.all(cover == 1)

    def test_temporal_slabs(self):
        regions = fallback_segmentation(G, 10, block=128, span=4)
        spans = {(r.start_frame, r.end_frame) for r in regions}
        assert spans == {(0, 3), (4, 7), (8, 9)}

    def test_ids_unique(self):
        regions = fallback_segmentation(G, 4, block=32, span=2)
        ids = [r.tsp_id for r in regions]
        assert len(ids) == len(set(ids))


class TestRegionsFromIdMaps:
    def test_roundtrip_against_grid(self):
        grid = np.zeros((8, 16), dtype=np.uint32)
        grid[:, 8:] = 1
        regions = regions_from_id_maps({0: grid, 1: grid})
        assert [r.tsp_id for r in regions] == [0, 1]
        assert regions[0].pixel_count() == 8 * 8 * 2
        assert regions[1].start_frame == 0 and regions[1].end_frame == 1


class TestRgbToLab:
    def test_white_black_red_anchors(self):
        lab = rgb_to_lab(np.array([[[255, 255, 255], [0, 0, 0], [255, 0, 0]]], dtype=np.uint8))
        assert lab[0, 0] == pytest.approx([100.0, 0.0, 0.0], abs=0.01)
        assert lab[0, 1] == pytest.approx([0.0, 0.0, 0.0], abs=0.01)
        # standard sRGB red in Lab under D65
        assert lab[0, 2] == pytest.approx([53.24, 80.09, 67.20], abs=0.05)


class TestTspFeatures:
    def test_uniform_static_region(self):
        img = np.full((G.height, G.width, 3), 128, dtype=np.uint8)
        lab = {0: rgb_to_lab(img)}
        zero = {0: FlowField(np.zeros((G.height, G.width)), np.zeros((G.height, G.width)))}
        r = _box_region(0, [0], 10, 20, 10, 20)
        f = tsp_features(r, lab, zero)
        assert f.shape == (FEATURE_DIM,)
        color = f[:24]
        # one occupied bin per Lab channel, unit L2 over the 24-dim block
        assert np.count_nonzero(color) == 3
        assert np.linalg.norm(color) == pytest.approx(1.0)
        assert np.allclose(color[color > 0], 1.0 / np.sqrt(3.0))
        mag = f[24:40]
        assert mag[0] == pytest.approx(1.0)
        assert np.all(mag[1:] == 0)

    def test_identical_regions_identical_features(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, (G.height, G.width, 3), dtype=np.uint8)
        lab = {0: rgb_to_lab(img)}
        u = rng.normal(0, 2, (G.height, G.width))
        v = rng.normal(0, 2, (G.height, G.width))
        # duplicate the patch content and flow at a second location
        img2 = img.copy()
        img2[50:60, 100:110] = img[10:20, 30:40]
        lab = {0: rgb_to_lab(img2)}
        u[50:60, 100:110] = u[10:20, 30:40]
        v[50:60, 100:110] = v[10:20, 30:40]
        flows = {0: FlowField(u, v)}
        ra = _box_region(0, [0], 10, 20, 30, 40)
        rb = _box_region(1, [0], 50, 60, 100, 110)
        fa = tsp_features(ra, lab, flows)
        fb = tsp_features(rb, lab, flows)
        assert np.allclose(fa, fb)
        assert np.linalg.norm(fa - fb) == pytest.approx(0.0)

    def test_rotating_vs_translating_flow(self):
        img = np.full((G.height, G.width, 3), 77, dtype=np.uint8)
        lab = {0: rgb_to_lab(img)}
        yy, xx = np.meshgrid(np.arange(G.height), np.arange(G.width), indexing="ij")
        # rotation about patch center vs uniform rightward translation
        cu = -(yy - 15.0) * 0.5
        cv = (xx - 35.0) * 0.5
        rot = {0: FlowField(cu, cv)}
        tra = {0: FlowField(np.full((G.height, G.width), 2.0), np.zeros((G.height, G.width)))}
        r = _box_region(0, [0], 10, 20, 30, 40)
        f_rot = tsp_features(r, lab, rot)
        f_tra = tsp_features(r, lab, tra)
        assert np.allclose(f_rot[:24], f_tra[:24])
        assert not np.allclose(f_rot[40:], f_tra[40:])

    def test_magnitude_binning_extremes(self):
        img = np.zeros((G.height, G.width, 3), dtype=np.uint8)
        lab = {0: rgb_to_lab(img)}
        u = np.zeros((G.height, G.width))
        u[5, 5] = 100.0  # far past the 32 px top edge: overflow bin
        flows = {0: FlowField(u, np.zeros_like(u))}
        r = _pixel_region(0, [0], 5, 5)
        f = tsp_features(r, lab, flows)
        mag = f[24:40]
        assert mag[15] == pytest.approx(1.0)

    def test_no_flow_treated_as_static(self):
        img = np.zeros((G.height, G.width, 3), dtype=np.uint8)
        lab = {0: rgb_to_lab(img)}
        r = _pixel_region(0, [0], 5, 5)
        f = tsp_features(r, lab, {})
        assert f[24] == pytest.approx(1.0)  # magnitude bin 0
        assert f[40] == pytest.approx(1.0)  # orientation bin 0

    def test_empty_region_rejected(self):
        img = np.zeros((G.height, G.width, 3), dtype=np.uint8)
        with pytest.raises(EmptyRegion):
            tsp_features(TspRegion(0, {}), {0: rgb_to_lab(img)}, {})

    def test_missing_color_frame_rejected(self):
        r = _pixel_region(0, [3], 5, 5)
        with pytest.raises(MissingFrames):
            tsp_features(r, {0: np.zeros((G.height, G.width, 3))}, {})


def _brute_force_saliency(regions, g, window, sigma):
    # direct double loop over the weighted feature-contrast sum
    out = np.zeros(len(regions))
    half = np.inf if window is None else window / 2.0
    for c, rc in enumerate(regions):
        mc = rc.center_of_mass(g)
        total = 0.0
        for i, ri in enumerate(regions):
            if i == c:
                continue
            if abs(ri.midpoint - rc.midpoint) > half:
                continue
            w = np.exp(-np.linalg.norm(ri.center_of_mass(g) - mc) / sigma)
            total += w * float(np.sum((ri.feature - rc.feature) ** 2))
        out[c] = rc.pixel_count() * total
    return out


def _random_region(rng, tsp_id):
    t0 = int(rng.integers(0, 300))
    t1 = t0 + int(rng.integers(0, 5))
    y = int(rng.integers(0, G.height - 4))
    x = int(rng.integers(0, G.width - 4))
    side = int(rng.integers(1, 4))
    yy, xx = np.meshgrid(np.arange(y, y + side), np.arange(x, x + side), indexing="ij")
    masks = {t: (yy.ravel(), xx.ravel()) for t in range(t0, t1 + 1)}
    r = TspRegion(tsp_id, masks)
    f = rng.random(FEATURE_DIM)
    r.feature = f / np.linalg.norm(f)
    return r


class TestTspSaliency:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        regions = [_random_region(rng, i) for i in range(50)]
        got = tsp_saliency(regions, G, window=200)
        want = _brute_force_saliency(regions, G, 200, 0.04)
        assert np.allclose(got, want, atol=1e-9)

    def test_matches_brute_force_unwindowed(self):
        rng = np.random.default_rng(12)
        regions = [_random_region(rng, i) for i in range(30)]
        got = tsp_saliency(regions, G, window=None)
        want = _brute_force_saliency(regions, G, None, 0.04)
        assert np.allclose(got, want, atol=1e-9)

    def test_identical_features_zero(self):
        rng = np.random.default_rng(13)
        regions = [_random_region(rng, i) for i in range(8)]
        shared = regions[0].feature
        for r in regions:
            r.feature = shared
        assert np.allclose(tsp_saliency(regions, G), 0.0)

    def test_single_region_zero(self):
        rng = np.random.default_rng(14)
        assert tsp_saliency([_random_region(rng, 0)], G)[0] == 0.0

    def test_distinct_region_wins(self):
        # equal sizes and temporal spans; one region has a different feature
        base = np.zeros(FEATURE_DIM)
        base[0] = 1.0
        odd = np.zeros(FEATURE_DIM)
        odd[1] = 1.0
        regions = []
        for i, feat in enumerate([base, base, odd]):
            r = _pixel_region(i, [0, 1], 10, 20 + i)
            r.feature = feat
            regions.append(r)
        s = tsp_saliency(regions, G)
        assert s[2] > s[0]
        assert s[2] > s[1]
        want = _brute_force_saliency(regions, G, 200, 0.04)
        assert np.allclose(s, want, atol=1e-9)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(15)
        regions = [_random_region(rng, i) for i in range(20)]
        s0 = tsp_saliency(regions, G)
        perm = rng.permutation(20)
        shuffled = [regions[i] for i in perm]
        s1 = tsp_saliency(shuffled, G)
        assert np.allclose(s1, s0[perm])

    def test_joint_translation_invariant(self):
        rng = np.random.default_rng(16)

        def build(dy, dx):
            out = []
            for i in range(6):
                r = _pixel_region(i, [0], 30 + 3 * i + dy, 40 + 5 * i + dx)
                f = np.zeros(FEATURE_DIM)
                f[i % 4] = 1.0
                r.feature = f
                out.append(r)
            return out

        s0 = tsp_saliency(build(0, 0), G)
        s1 = tsp_saliency(build(7, 11), G)
        assert np.allclose(s0, s1, atol=1e-12)


class TestSemanticLabel:
    def _one_hot_map(self, frame, cls, n_classes=10, h=8, w=16):
        probs = np.zeros((n_classes, h, w))
        probs[cls] = 1.0
        return ClassProbabilityMap(frame, [f"c{i}" for i in range(n_classes)], probs)

    def test_one_hot_class(self):
        r = _box_region(0, [0], 0, 4, 0, 4)
        assert tsp_semantic_label(r, [self._one_hot_map(0, 7)]) == 7

    def test_uniform_ties_to_class_zero(self):
        probs = np.full((5, 8, 16), 0.2)
        m = ClassProbabilityMap(0, list("abcde"), probs)
        r = _box_region(0, [0], 0, 4, 0, 4)
        assert tsp_semantic_label(r, [m]) == 0

    def test_mixed_region_mean(self):
        # 60% of pixels one-hot class 3, 40% one-hot class 5
        probs = np.zeros((6, 10, 10))
        probs[3, :, :6] = 1.0
        probs[5, :, 6:] = 1.0
        m = ClassProbabilityMap(0, [f"c{i}" for i in range(6)], probs)
        r = _box_region(0, [0], 0, 10, 0, 10)
        assert tsp_semantic_label(r, [m]) == 3

    def test_sparse_maps_use_nearest(self):
        maps = [self._one_hot_map(0, 1), self._one_hot_map(10, 2)]
        near_first = _box_region(0, [4], 0, 2, 0, 2)
        near_second = _box_region(1, [6], 0, 2, 0, 2)
        assert tsp_semantic_label(near_first, maps) == 1
        assert tsp_semantic_label(near_second, maps) == 2

    def test_no_maps_rejected(self):
        r = _box_region(0, [0], 0, 2, 0, 2)
        with pytest.raises(MissingFrames):
            tsp_semantic_label(r, [])

    def test_class_list_disagreement_rejected(self):
        a = self._one_hot_map(0, 1)
        probs = np.zeros((3, 8, 16))
        probs[0] = 1.0
        b = ClassProbabilityMap(1, list("xyz"), probs)
        r = _box_region(0, [0], 0, 2, 0, 2)
        with pytest.raises(DimensionMismatch):
            tsp_semantic_label(r, [a, b])

    def test_probability_sum_validated(self):
        probs = np.zeros((4, 4, 4))
        probs[0] = 0.7  # columns sum to 0.7, not 1
        with pytest.raises(OutOfBounds):
            ClassProbabilityMap(0, list("abcd"), probs)


class TestRoiPose:
    def test_mean_of_two_pixels_same_row(self):
        mask = (np.array([64, 64]), np.array([100, 110]))
        th, _ = points_to_dirs(np.array([100.0, 110.0]), np.array([64.0, 64.0]), G)
        pose = roi_pose(mask, G)
        assert pose.theta == pytest.approx(np.mean(th), abs=1e-9)

    def test_symmetric_mask_centers(self):
        yy, xx = np.meshgrid(np.arange(60, 69), np.arange(120, 129), indexing="ij")
        pose = roi_pose((yy.ravel(), xx.ravel()), G)
        th, ph = points_to_dirs(np.array([124.0]), np.array([64.0]), G)
        assert pose.theta == pytest.approx(th[0], abs=1e-6)
        assert pose.phi == pytest.approx(ph[0], abs=1e-6)

    def test_seam_straddling_mask(self):
        # pixels just left and right of the +-180 seam must average to the
        # seam, never to 0
        mask = (np.array([64, 64]), np.array([0, G.width - 1]))
        pose = roi_pose(mask, G)
        assert abs(pose.theta) == pytest.approx(180.0)

    def test_empty_mask_rejected(self):
        with pytest.raises(EmptyMask):
            roi_pose((np.array([]), np.array([])), G)


class TestSelectRois:
    def _scored_region(self, tsp_id, frames, saliency, label, x=50):
        r = _pixel_region(tsp_id, frames, 40, x)
        r.saliency = saliency
        r.label = label
        return r

    def test_top_k_matches_sort_oracle(self):
        sal = [3.0, 9.0, 1.0, 7.0, 5.0]
        regions = [self._scored_region(i, [0, 1], s, 4) for i, s in enumerate(sal)]
        tracks = select_rois(regions, G, chosen_labels={4}, k=3)
        want = sorted(sal, reverse=True)[:3]
        assert [t.saliency for t in tracks] == want
        assert all(t.label == 4 for t in tracks)

    def test_no_matching_label_empty(self):
        regions = [self._scored_region(0, [0], 5.0, 2)]
        assert select_rois(regions, G, chosen_labels={9}) == []

    def test_default_label_by_cumulative_saliency(self):
        regions = [
            self._scored_region(0, [0], 6.0, 1),
            self._scored_region(1, [0], 4.0, 1),
            self._scored_region(2, [0], 7.0, 2),
        ]
        assert default_label(regions) == 1  # 10 vs 7
        tracks = select_rois(regions, G, chosen_labels=None, k=5)
        assert {t.label for t in tracks} == {1}
        assert len(tracks) == 2

    def test_subsequences_bucket_independently(self):
        early = [self._scored_region(i, [100], float(i), 3) for i in range(4)]
        late = [self._scored_region(10 + i, [2500], float(i), 3) for i in range(4)]
        tracks = select_rois(early + late, G, chosen_labels={3}, subsequence=2000, k=1)
        assert len(tracks) == 2
        assert {t.tsp_id for t in tracks} == {3, 13}

    def test_output_sorted_nonincreasing(self):
        rng = np.random.default_rng(17)
        regions = [
            self._scored_region(i, [int(rng.integers(0, 4000))], float(rng.random()), 1)
            for i in range(12)
        ]
        tracks = select_rois(regions, G, chosen_labels={1}, subsequence=1000, k=2)
        sals = [t.saliency for t in tracks]
        assert sals == sorted(sals, reverse=True)

    def test_roi_track_pose_per_frame(self):
        r = self._scored_region(0, [2, 3, 4, 5], 1.0, 1)
        track = region_to_roi(r, G)
        assert track.start_frame == 2 and track.end_frame == 5
        assert len(track.poses) == 4
        assert track.area_at(3) == 1.0
        assert track.covers(4) and not track.covers(6)

    def test_gap_in_span_rejected(self):
        r = _pixel_region(0, [2, 4], 10, 10)  # frame 3 missing
        with pytest.raises(MissingFrames):
            region_to_roi(r, G)

    def test_roi_track_length_validated(self):
        with pytest.raises(LengthMismatch):
            RoiTrack(0, 0, 2, [], [], 0.0)
