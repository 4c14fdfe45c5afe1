import math

import numpy as np
import pytest

from hyperlapse360.content import RoiTrack
from hyperlapse360.errors import InfeasibleWindow, OutOfBounds
from hyperlapse360.frameselect import (
    FramePlan,
    FrameSelectParams,
    ImportanceCurve,
    acceleration_cost,
    alignment_cost,
    frame_importance,
    saliency_cost,
    select_frames,
    velocity_cost,
)
from hyperlapse360.geometry import SphericalDirection
from hyperlapse360.viewplan import CameraPath


def _static_roi(tsp_id, start, end, theta, phi, saliency):
    span = end - start + 1
    return RoiTrack(
        tsp_id, start, end, [SphericalDirection(theta, phi)] * span, [10.0] * span, saliency
    )


def _zero_path(t):
    return CameraPath([SphericalDirection(0.0, 0.0)] * t)


class TestFrameImportance:
    def test_no_rois_all_zero(self):
        curve = frame_importance(_zero_path(12), [])
        assert np.all(curve.scores == 0)
        assert curve.mean == 0.0

    def test_single_roi_span(self):
        roi = _static_roi(0, 3, 7, 20.0, 0.0, 0.7)
        curve = frame_importance(_zero_path(12), [roi])
        assert np.all(curve.scores[3:8] == 0.7)
        assert np.all(curve.scores[:3] == 0)
        assert np.all(curve.scores[8:] == 0)

    def test_nearest_roi_wins(self):
        near = _static_roi(0, 0, 5, 10.0, 0.0, 0.3)
        far = _static_roi(1, 0, 5, 40.0, 0.0, 0.9)
        curve = frame_importance(_zero_path(6), [far, near])
        assert np.all(curve.scores == 0.3)


class TestCostTerms:
    def test_saliency_uniform_at_target_rate_is_free(self):
        curve = ImportanceCurve(np.full(10, 0.4))
        assert saliency_cost(2, 5, curve, speedup=3.0) == pytest.approx(0.0)

    def test_saliency_zero_curve_free(self):
        curve = ImportanceCurve(np.zeros(10))
        assert saliency_cost(0, 7, curve, speedup=3.0) == 0.0

    def test_saliency_hand_value(self):
        # curve mean exactly 1; jump picks up 4 + 1 against a target of 2
        curve = ImportanceCurve(np.array([1, 1, 4, 1, 1, 0, 0, 0], dtype=float))
        assert curve.mean == pytest.approx(1.0)
        assert saliency_cost(2, 4, curve, speedup=2.0) == pytest.approx(9.0)

    def test_saliency_inclusive_flag(self):
        curve = ImportanceCurve(np.array([1, 1, 4, 1, 1, 0, 0, 0], dtype=float))
        assert saliency_cost(2, 4, curve, 2.0, inclusive=True) == pytest.approx(16.0)

    def test_velocity_values(self):
        assert velocity_cost(0, 5, 5.0) == 0.0
        assert velocity_cost(0, 25, 5.0, tau_v=200.0) == 200.0
        assert velocity_cost(0, 8, 5.0) == 9.0

    def test_acceleration_values(self):
        assert acceleration_cost(0, 3, 6) == 0.0
        assert acceleration_cost(0, 2, 7) == 9.0
        assert acceleration_cost(0, 1, 31, tau_a=200.0) == 200.0

    def test_costs_nonnegative_and_truncated(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            h = int(rng.integers(0, 5))
            i = h + int(rng.integers(1, 40))
            j = i + int(rng.integers(1, 40))
            v = velocity_cost(i, j, 4.0)
            a = acceleration_cost(h, i, j)
            assert 0.0 <= v <= 200.0
            assert 0.0 <= a <= 200.0


class TestAlignmentCost:
    W, H = 320, 240

    def test_identical_points_zero(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(0, 200, (10, 2))
        assert alignment_cost(pts, pts, self.W, self.H) == pytest.approx(0.0, abs=1e-9)

    def test_pure_translation_center_drift(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(20, 200, (8, 2))
        moved = pts + np.array([3.0, 4.0])
        cost = alignment_cost(pts, moved, self.W, self.H)
        assert cost == pytest.approx(25.0, abs=1e-6)

    def test_too_few_matches_full_penalty(self):
        d = math.hypot(self.W, self.H)
        pts = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        assert alignment_cost(pts, pts, self.W, self.H) == pytest.approx(0.5 * d)

    def test_unregistrable_pairs_full_penalty(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(0, self.W, (20, 2))
        b = rng.uniform(0, self.W, (20, 2))
        d = math.hypot(self.W, self.H)
        assert alignment_cost(a, b, self.W, self.H) == pytest.approx(0.5 * d)

    def test_length_mismatch_rejected(self):
        with pytest.raises(OutOfBounds):
            alignment_cost(np.zeros((4, 2)), np.zeros((5, 2)), self.W, self.H)


def _brute_force_plan_cost(t_count, params, curve, alignment):
    # exhaustive recursion over every monotone plan; completely independent
    # of the DP implementation
    window = params.window
    v = params.speedup
    s_mean = curve.mean
    scores = curve.scores
    end_lo = math.floor((t_count - 1) - v) + 1

    def pair(i, j):
        hi = j + 1 if params.inclusive_saliency_sum else j
        c = params.w_s * (float(np.sum(scores[i:hi])) - v * s_mean) ** 2
        c += params.w_v_sel * min(((j - i) - v) ** 2, params.tau_v)
        if alignment is not None:
            c += alignment(i, j)
        return c

    best = [math.inf]

    def rec(path, cost):
        last = path[-1]
        if len(path) >= 2 and last >= end_lo:
            best[0] = min(best[0], cost)
        for j in range(1, window + 1):
            nxt = last + j
            if nxt >= t_count:
                break
            c = pair(last, nxt)
            if len(path) >= 2:
                c += params.w_a_sel * min(
                    ((nxt - last) - (last - path[-2])) ** 2, params.tau_a
                )
            rec(path + [nxt], cost + c)

    rec([0], 0.0)
    return best[0]


def _plan_cost(plan, params, curve, alignment):
    # evaluate a plan with the cost formula written out longhand
    total = 0.0
    fr = plan.frames
    for k in range(1, len(fr)):
        i, j = fr[k - 1], fr[k]
        hi = j + 1 if params.inclusive_saliency_sum else j
        total += params.w_s * (float(np.sum(curve.scores[i:hi])) - params.speedup * curve.mean) ** 2
        total += params.w_v_sel * min(((j - i) - params.speedup) ** 2, params.tau_v)
        if alignment is not None:
            total += alignment(i, j)
        if k >= 2:
            h = fr[k - 2]
            total += params.w_a_sel * min(((j - i) - (i - h)) ** 2, params.tau_a)
    return total


class TestSelectFrames:
    def test_uniform_instance_regular_spacing(self):
        params = FrameSelectParams(speedup=2.0)
        plan = select_frames(10, params, ImportanceCurve(np.zeros(10)))
        assert plan.frames == [0, 2, 4, 6, 8]

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(20)
        for trial in range(30):
            t = int(rng.integers(6, 15))
            window = int(rng.integers(2, 7))
            v = float(rng.uniform(1.0, window / 2.0 + 1.0))
            params = FrameSelectParams(speedup=v, jump_window=window)
            curve = ImportanceCurve(rng.uniform(0, 2, t))
            table = rng.uniform(0, 50, (t, t))

            def alignment(i, j, table=table):
                return float(table[i, j])

            plan = select_frames(t, params, curve, alignment)
            got = _plan_cost(plan, params, curve, alignment)
            want = _brute_force_plan_cost(t, params, curve, alignment)
            assert got == pytest.approx(want, rel=1e-12), f"trial {trial}"

    def test_plan_validity_properties(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            t = int(rng.integers(10, 60))
            v = float(rng.uniform(1.0, 6.0))
            params = FrameSelectParams(speedup=v)
            curve = ImportanceCurve(rng.uniform(0, 1, t))
            plan = select_frames(t, params, curve)
            assert plan.frames[0] == 0
            jumps = plan.jumps()
            assert np.all(jumps >= 1)
            assert np.all(jumps <= params.window)
            assert plan.frames[-1] > (t - 1) - v

    def test_burst_slows_selection(self):
        t = 80
        scores = np.full(t, 0.05)
        scores[30:40] = 10.0
        params = FrameSelectParams(speedup=4.0)
        plan = select_frames(t, params, ImportanceCurve(scores))
        jumps = plan.jumps()
        mids = (np.array(plan.frames[:-1]) + np.array(plan.frames[1:])) / 2.0
        inside = jumps[(mids >= 30) & (mids < 40)]
        outside = jumps[(mids < 30) | (mids >= 40)]
        assert len(inside) > 0
        assert float(np.mean(inside)) < float(np.mean(outside))

    def test_deterministic(self):
        rng = np.random.default_rng(22)
        curve = ImportanceCurve(rng.uniform(0, 1, 40))
        params = FrameSelectParams(speedup=3.0)
        a = select_frames(40, params, curve)
        b = select_frames(40, params, curve)
        assert a.frames == b.frames

    def test_window_default_and_infeasible(self):
        assert FrameSelectParams(speedup=2.5).window == 5
        with pytest.raises(InfeasibleWindow):
            select_frames(10, FrameSelectParams(speedup=2.0, jump_window=0))

    def test_too_short_video_rejected(self):
        with pytest.raises(OutOfBounds):
            select_frames(1, FrameSelectParams(speedup=2.0))

    def test_curve_length_checked(self):
        with pytest.raises(OutOfBounds):
            select_frames(10, FrameSelectParams(speedup=2.0), ImportanceCurve(np.zeros(5)))


class TestPlanTypes:
    def test_plan_must_start_at_zero(self):
        with pytest.raises(OutOfBounds):
            FramePlan([1, 3, 5])

    def test_plan_must_increase(self):
        with pytest.raises(OutOfBounds):
            FramePlan([0, 4, 4])

    def test_negative_importance_rejected(self):
        with pytest.raises(OutOfBounds):
            ImportanceCurve(np.array([0.5, -0.1]))

    def test_speedup_floor(self):
        with pytest.raises(OutOfBounds):
            FrameSelectParams(speedup=0.5)
