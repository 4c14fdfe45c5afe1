"""Shared fixtures: one synthetic scene and one completed pipeline run."""

import pytest

from hyperlapse360.config import PipelineConfig
from hyperlapse360.geometry import SphericalDirection
from hyperlapse360.pipeline import run_pipeline
from hyperlapse360.synth import PlantedRoi, SynthSceneSpec, synth_scene

ROI = dict(theta=40.0, phi=5.0, start_frame=10, end_frame=45, radius_deg=12.0, label=1)


@pytest.fixture(scope="session")
def roi_scene_dir(tmp_path_factory):
    """Jittery 60-frame scene with one planted, labeled ROI and all aux inputs."""
    out = tmp_path_factory.mktemp("scene") / "data"
    spec = SynthSceneSpec(
        frame_count=60,
        width=256,
        height=128,
        seed=3,
        jitter_deg=0.8,
        track_count=120,
        rois=[PlantedRoi(**ROI)],
        region_block=32,
        region_span=20,
        prob_stride=10,
    )
    synth_scene(spec, out)
    return out


def run_config() -> PipelineConfig:
    cfg = PipelineConfig()
    cfg.content.labels = [1]
    cfg.select.speedup = 6.0
    cfg.render.out_width = 320
    cfg.render.out_height = 240
    return cfg.validate()


@pytest.fixture(scope="session")
def roi_run(roi_scene_dir, tmp_path_factory):
    """One full pipeline run over the ROI scene; tests only read from it."""
    out = tmp_path_factory.mktemp("run") / "out"
    run_pipeline(roi_scene_dir, out, run_config())
    return out


@pytest.fixture(scope="session")
def forward_scene_dir(tmp_path_factory):
    """Forward-motion scene (known FOE), no planted ROIs."""
    out = tmp_path_factory.mktemp("fwd") / "data"
    spec = SynthSceneSpec(
        frame_count=40,
        width=192,
        height=96,
        seed=7,
        jitter_deg=0.5,
        foe=SphericalDirection(25.0, -5.0),
        foe_step_deg=0.6,
        track_count=100,
        region_block=32,
        region_span=20,
    )
    synth_scene(spec, out)
    return out
