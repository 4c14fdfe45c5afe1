import json
import logging
import shutil

import numpy as np
import pytest

from conftest import ROI, run_config
from hyperlapse360 import formats
from hyperlapse360.config import PipelineConfig
from hyperlapse360.errors import BadFileFormat, StageFailure
from hyperlapse360.geometry import SphericalDirection, angle_between_dirs
from hyperlapse360.pipeline import (
    STAGE_ORDER,
    RunContext,
    load_dataset,
    run_pipeline,
    run_stage,
)

CSV_ARTIFACTS = [
    "rotations_relative.csv",
    "rotations_cumulative.csv",
    "rotations_smoothed.csv",
    "rotations_corrective.csv",
    "foe_raw.csv",
    "path.csv",
    "plan.csv",
    "fov.csv",
    "transforms.csv",
]


class TestLoadDataset:
    def test_missing_frames_rejected(self, tmp_path):
        with pytest.raises(BadFileFormat):
            load_dataset(tmp_path)

    def test_aux_inputs_loaded(self, roi_scene_dir):
        data = load_dataset(roi_scene_dir)
        assert data.frame_count == 60
        assert data.geometry.width == 256
        assert data.tracks is not None
        assert len(data.flows) == 59
        assert data.id_maps is not None and len(data.id_maps) == 60
        assert data.prob_maps is not None

    def test_flow_size_mismatch_rejected(self, roi_scene_dir, tmp_path):
        clone = tmp_path / "data"
        shutil.copytree(roi_scene_dir, clone)
        bad = np.zeros((10, 20, 2), dtype=np.float32)
        formats.write_flo(clone / "flows" / "000000.flo", bad)
        with pytest.raises(BadFileFormat):
            load_dataset(clone)


class TestFullRun:
    def test_all_artifacts_written(self, roi_run):
        for name in CSV_ARTIFACTS + ["foe_smoothed.csv"]:
            present = (roi_run / name).exists()
            # pure-jitter scene: derotated flow is ~zero, so no FOE track
            assert present == (name != "foe_smoothed.csv"), name
        assert (roi_run / "rois.json").exists()
        assert (roi_run / "config.json").exists()
        assert (roi_run / "stage_timings.json").exists()
        for d in ("frames_stabilized", "frames_nfov", "frames_final"):
            assert (roi_run / d / "manifest.json").exists(), d

    def test_rotation_track_lengths(self, roi_run):
        rel = formats.read_rotations_csv(roi_run / "rotations_relative.csv")
        cum = formats.read_rotations_csv(roi_run / "rotations_cumulative.csv")
        corr = formats.read_rotations_csv(roi_run / "rotations_corrective.csv")
        assert len(rel) == 59 and len(cum) == 60 and len(corr) == 60

    def test_path_tracks_planted_roi(self, roi_run):
        path = formats.read_path_csv(roi_run / "path.csv")
        target = SphericalDirection(ROI["theta"], ROI["phi"])
        span = range(ROI["start_frame"] + 5, ROI["end_frame"] - 4)
        worst = max(angle_between_dirs(path.poses[t], target) for t in span)
        assert worst < 5.0

    def test_roi_selection(self, roi_run):
        rois = formats.read_rois_json(roi_run / "rois.json")
        assert len(rois) == 1
        assert rois[0].label == 1
        assert (rois[0].start_frame, rois[0].end_frame) == (ROI["start_frame"], ROI["end_frame"])

    def test_plan_monotone_and_reaches_end(self, roi_run):
        frames = formats.read_plan_csv(roi_run / "plan.csv")
        assert frames[0] == 0
        assert all(b > a for a, b in zip(frames, frames[1:]))
        assert frames[-1] > 59 - 6.0  # within one target jump of the end

    def test_fov_constant_default(self, roi_run):
        # the planted blob is far bigger than the target area ratio, so the
        # zoom clamps at the default FOV on every frame
        curve = formats.read_fov_csv(roi_run / "fov.csv")
        assert len(curve) == 60
        np.testing.assert_allclose(curve.values, 100.0, atol=1e-9)

    def test_output_frame_dirs_consistent(self, roi_run):
        frames = formats.read_plan_csv(roi_run / "plan.csv")
        for d in ("frames_stabilized", "frames_nfov", "frames_final"):
            m = formats.read_manifest(roi_run / d)
            assert m["count"] == len(frames), d
        nfov, m = formats.read_frames(roi_run / "frames_nfov")
        assert nfov[0].shape == (240, 320, 3)
        assert m["fps"] == 30.0
        stab, _ = formats.read_frames(roi_run / "frames_stabilized")
        assert stab[0].shape == (128, 256, 3)

    def test_transforms_cover_selected_frames(self, roi_run):
        mats, kinds = formats.read_transforms_csv(roi_run / "transforms.csv")
        frames = formats.read_plan_csv(roi_run / "plan.csv")
        assert len(mats) == len(frames)
        assert kinds[0] is None and all(k is not None for k in kinds[1:])
        for m in mats:
            assert m[2, 2] == pytest.approx(1.0)

    def test_stage_timings_complete(self, roi_run):
        with open(roi_run / "stage_timings.json") as fh:
            t = json.load(fh)
        assert set(t["stages"]) == set(STAGE_ORDER)
        assert all(v >= 0.0 for v in t["stages"].values())
        assert t["frame_count"] == 60
        assert t["selected_count"] == len(formats.read_plan_csv(roi_run / "plan.csv"))

    def test_rerun_is_byte_identical(self, roi_scene_dir, roi_run, tmp_path):
        again = tmp_path / "again"
        run_pipeline(roi_scene_dir, again, run_config())
        for name in CSV_ARTIFACTS + ["rois.json", "config.json"]:
            assert (again / name).read_bytes() == (roi_run / name).read_bytes(), name


class TestFoeFallback:
    def test_path_tracks_smoothed_foe(self, forward_scene_dir, tmp_path):
        cfg = PipelineConfig()
        cfg.content.labels = [99]  # no region carries this label
        cfg.select.speedup = 5.0
        cfg.render.out_width = 160
        cfg.render.out_height = 120
        run_pipeline(forward_scene_dir, tmp_path / "run", cfg)
        assert formats.read_rois_json(tmp_path / "run" / "rois.json") == []
        path = formats.read_path_csv(tmp_path / "run" / "path.csv")
        target = SphericalDirection(25.0, -5.0)
        worst = max(angle_between_dirs(p, target) for p in path.poses)
        assert worst < 3.0

    def test_raw_foe_close_to_truth(self, forward_scene_dir, tmp_path):
        cfg = PipelineConfig()
        cfg.content.labels = [99]
        ctx = RunContext(load_dataset(forward_scene_dir), tmp_path / "out", cfg)
        run_stage(ctx, "stabilize360")
        run_stage(ctx, "foe")
        raw = formats.read_foe_csv(tmp_path / "out" / "foe_raw.csv")
        assert len(raw) > 30
        target = SphericalDirection(25.0, -5.0)
        errs = [angle_between_dirs(d, target) for _, d, _ in raw]
        assert float(np.mean(errs)) < 3.0


class TestDegradations:
    def _clone_without(self, src, tmp_path, *names):
        clone = tmp_path / "data"
        shutil.copytree(src, clone)
        for name in names:
            target = clone / name
            if target.is_dir():
                shutil.rmtree(target)
            else:
                target.unlink()
        return clone

    def test_no_prob_maps_labels_zero(self, roi_scene_dir, tmp_path, caplog):
        clone = self._clone_without(roi_scene_dir, tmp_path, "probs")
        cfg = PipelineConfig()
        ctx = RunContext(load_dataset(clone), tmp_path / "out", cfg)
        run_stage(ctx, "stabilize360")
        with caplog.at_level(logging.WARNING, logger="hyperlapse360.pipeline"):
            run_stage(ctx, "analyze")
        assert any("probability maps" in r.message for r in caplog.records)
        rois = formats.read_rois_json(tmp_path / "out" / "rois.json")
        assert rois and all(r.label == 0 for r in rois)

    def test_no_flows_no_foe_artifacts(self, roi_scene_dir, tmp_path):
        clone = self._clone_without(roi_scene_dir, tmp_path, "flows")
        ctx = RunContext(load_dataset(clone), tmp_path / "out", PipelineConfig())
        run_stage(ctx, "stabilize360")
        run_stage(ctx, "foe")
        assert not (tmp_path / "out" / "foe_raw.csv").exists()
        assert ctx.foe_smoothed() is None

    def test_no_tracks_are_derived_and_cached(self, forward_scene_dir, tmp_path):
        clone = self._clone_without(forward_scene_dir, tmp_path, "tracks.csv")
        data = load_dataset(clone)
        assert data.tracks is None
        ctx = RunContext(data, tmp_path / "out", PipelineConfig())
        run_stage(ctx, "stabilize360")
        cached = formats.read_tracks_csv(tmp_path / "out" / "tracks.csv")
        assert len(cached) >= 3


class TestStagewise:
    def test_fresh_context_reads_prior_artifacts(self, forward_scene_dir, tmp_path):
        # each stage in its own context: everything must round-trip via disk
        cfg = PipelineConfig()
        cfg.content.labels = [99]
        cfg.select.speedup = 5.0
        cfg.render.out_width = 160
        cfg.render.out_height = 120
        out = tmp_path / "out"
        for name in STAGE_ORDER:
            ctx = RunContext(load_dataset(forward_scene_dir), out, cfg)
            run_stage(ctx, name)
        assert (out / "transforms.csv").exists()
        assert (out / "frames_final" / "manifest.json").exists()

    def test_missing_prerequisite_raises_file_not_found(self, forward_scene_dir, tmp_path):
        ctx = RunContext(load_dataset(forward_scene_dir), tmp_path / "out", PipelineConfig())
        with pytest.raises(FileNotFoundError):
            run_stage(ctx, "plan")

    def test_unknown_stage_rejected(self, forward_scene_dir, tmp_path):
        ctx = RunContext(load_dataset(forward_scene_dir), tmp_path / "out", PipelineConfig())
        with pytest.raises(BadFileFormat):
            run_stage(ctx, "warp")


class TestStageFailure:
    def test_failure_carries_stage_name(self, forward_scene_dir, tmp_path):
        cfg = PipelineConfig()
        cfg.content.labels = [99]
        cfg.select.jump_window = 0  # empty window: selection cannot move
        with pytest.raises(StageFailure) as err:
            run_pipeline(forward_scene_dir, tmp_path / "run", cfg)
        assert err.value.stage == "select"
        assert "select" in str(err.value)
