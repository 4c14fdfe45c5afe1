import json

import pytest

from hyperlapse360.cli import main
from hyperlapse360.pipeline import STAGE_ORDER

SET_ARGS = [
    "--set", "select.speedup=4",
    "--set", "render.out_width=96",
    "--set", "render.out_height=72",
]


@pytest.fixture(scope="module")
def cli_scene(tmp_path_factory):
    out = tmp_path_factory.mktemp("cliscene") / "data"
    rc = main([
        "synth", "--out", str(out),
        "--set", "frame_count=24",
        "--set", "width=128",
        "--set", "height=64",
        "--set", "seed=11",
        "--set", "jitter_deg=0.5",
        "--set", "track_count=60",
        "--set", "region_block=32",
        "--set", "region_span=12",
    ])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def cli_run(cli_scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("clirun") / "out"
    assert main(["run", "--input", str(cli_scene), "--out", str(out), *SET_ARGS]) == 0
    return out


class TestSynth:
    def test_writes_dataset(self, cli_scene):
        assert (cli_scene / "frames" / "manifest.json").exists()
        assert (cli_scene / "tracks.csv").exists()
        assert (cli_scene / "flows").is_dir()
        assert (cli_scene / "ground_truth.json").exists()

    def test_prints_frame_count(self, tmp_path, capsys):
        rc = main([
            "synth", "--out", str(tmp_path / "mini"),
            "--set", "frame_count=6",
            "--set", "width=64",
            "--set", "height=32",
            "--set", "track_count=20",
            "--set", "region_block=16",
            "--set", "region_span=4",
        ])
        assert rc == 0
        assert "6 frames ->" in capsys.readouterr().out

    def test_invalid_spec_is_input_error(self, tmp_path):
        rc = main(["synth", "--out", str(tmp_path / "bad"), "--set", "frame_count=1"])
        assert rc == 2


class TestRun:
    def test_artifacts_exist(self, cli_run):
        for name in ("path.csv", "plan.csv", "fov.csv", "transforms.csv", "stage_timings.json"):
            assert (cli_run / name).exists(), name

    def test_stagewise_matches_run_command(self, cli_scene, tmp_path, capsys):
        out = tmp_path / "out"
        for name in STAGE_ORDER:
            rc = main([name, "--input", str(cli_scene), "--out", str(out), *SET_ARGS])
            assert rc == 0, name
            assert f"{name}:" in capsys.readouterr().out
        assert (out / "transforms.csv").exists()
        assert (out / "frames_final" / "manifest.json").exists()

    def test_stage_failure_exit_code(self, cli_scene, tmp_path, capsys):
        rc = main([
            "run", "--input", str(cli_scene), "--out", str(tmp_path / "out"),
            "--set", "select.jump_window=0",
        ])
        assert rc == 3
        assert "select" in capsys.readouterr().err


class TestInputErrors:
    def test_missing_input_dir(self, tmp_path):
        rc = main(["run", "--input", str(tmp_path / "nope"), "--out", str(tmp_path / "out")])
        assert rc == 2

    def test_malformed_config(self, cli_scene, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        rc = main([
            "run", "--input", str(cli_scene), "--out", str(tmp_path / "out"),
            "--config", str(cfg),
        ])
        assert rc == 2

    def test_unknown_override_key(self, cli_scene, tmp_path, capsys):
        rc = main([
            "run", "--input", str(cli_scene), "--out", str(tmp_path / "out"),
            "--set", "plam.speedup=3",
        ])
        assert rc == 2
        assert "plam" in capsys.readouterr().err

    def test_override_missing_equals(self, cli_scene, tmp_path):
        rc = main([
            "run", "--input", str(cli_scene), "--out", str(tmp_path / "out"),
            "--set", "select.speedup",
        ])
        assert rc == 2

    def test_stage_before_prerequisites(self, cli_scene, tmp_path):
        rc = main(["plan", "--input", str(cli_scene), "--out", str(tmp_path / "out")])
        assert rc == 2


class TestReport:
    def test_text_output(self, cli_run, capsys):
        assert main(["report", "--run", str(cli_run)]) == 0
        out = capsys.readouterr().out
        assert "stage timings:" in out
        assert "selected" in out or "frames" in out

    def test_json_output(self, cli_run, capsys):
        assert main(["report", "--run", str(cli_run), "--json"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert set(data["stages"]) == set(STAGE_ORDER)

    def test_incomplete_run(self, tmp_path):
        assert main(["report", "--run", str(tmp_path)]) == 2
