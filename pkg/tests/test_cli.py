"""Command line entry point: commands, outputs and exit codes."""
import numpy as np
import pytest

from src.pipeline.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from src.pipeline.io import read_density_grid, read_pointcloud


@pytest.fixture
def sphere_files(tmp_path):
    sparse = str(tmp_path / "sparse.xyz")
    dense = str(tmp_path / "dense.xyz")
    mesh = str(tmp_path / "sphere.obj")
    assert main(["gen", "--shape", "sphere", "-n", "300", "-o", sparse, "--mesh-output", mesh]) == EXIT_OK
    assert main(["gen", "--shape", "sphere", "-n", "900", "--seed", "1", "-o", dense]) == EXIT_OK
    return sparse, dense, mesh


def test_upsample_writes_the_exact_count(tmp_path, sphere_files):
    sparse, _, _ = sphere_files
    output = str(tmp_path / "out.ply")
    assert main(["upsample", "-i", sparse, "-o", output, "--rate", "2.5", "--patch-size", "128"]) == EXIT_OK
    assert len(read_pointcloud(output)) == 750


def test_flags_override_the_config_file(tmp_path, sphere_files):
    sparse, _, _ = sphere_files
    config = tmp_path / "run.cfg"
    output = str(tmp_path / "out.xyz")
    config.write_text(f"input={sparse}\noutput={output}\nrate=2\npatch-size=128\n")
    assert main(["upsample", "--config", str(config)]) == EXIT_OK
    assert len(read_pointcloud(output)) == 600
    assert main(["upsample", "--config", str(config), "--rate", "3"]) == EXIT_OK
    assert len(read_pointcloud(output)) == 900


def test_evaluate_prints_key_values(sphere_files, capsys):
    sparse, dense, mesh = sphere_files
    assert main(["evaluate", "-i", sparse, "--gt", dense, "--mesh", mesh]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert [line.split("=")[0] for line in lines] == ["cd", "hd", "p2f_mean", "p2f_max"]
    assert all(float(line.split("=")[1]) >= 0 for line in lines)

    assert main(["evaluate", "-i", sparse, "--gt", dense, "--table"]) == EXIT_OK
    header = capsys.readouterr().out.splitlines()[0].split()
    assert header == ["cd", "hd"]


def test_diagnose_planted(capsys):
    assert main(["diagnose", "--multipliers", "1,2", "--methods", "topk,mdfps", "--repeats", "2"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "# topk"
    assert "# mdfps" in out
    assert out[1].split() == ["multiplier", "precision", "missing_rate", "cell_cd"]
    assert len(out) == 2 * (2 + 2)


def test_density_file_feeds_the_file_backend(tmp_path, sphere_files):
    sparse, _, _ = sphere_files
    grids = str(tmp_path / "grids")
    assert main(["density", "-i", sparse, "-o", grids, "--per-patch", "--patch-size", "128"]) == EXIT_OK
    assert read_density_grid(f"{grids}/patch_0000.puvx").resolution == 32
    output = str(tmp_path / "out.xyz")
    assert main(["upsample", "-i", sparse, "-o", output, "--patch-size", "128", "--backend", f"file:{grids}", "--rate", "2"]) == EXIT_OK
    assert len(read_pointcloud(output)) == 600


def test_gc_loss_and_encoder_export(tmp_path, sphere_files, capsys):
    _, dense, _ = sphere_files
    weights = str(tmp_path / "encoder.pugc")
    assert main(["gc-loss", "-i", dense, "--gt", dense, "--export-encoder", weights]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "gc_loss=0"
    assert main(["gc-loss", "-i", dense, "--gt", dense, "--encoder", weights]) == EXIT_OK


def test_losses_command(sphere_files, capsys):
    sparse, dense, _ = sphere_files
    assert main(["losses", "-i", sparse, "--gt", dense]) == EXIT_OK
    names = [line.split("=")[0] for line in capsys.readouterr().out.splitlines()]
    assert names == ["cd_coarse", "sharp_cd_coarse", "cd_refined", "gc", "reg", "bce", "mse", "total"]


def test_usage_errors_exit_with_one(tmp_path):
    with pytest.raises(SystemExit) as error:
        main(["upsample", "-o", str(tmp_path / "out.xyz")])
    assert error.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as error:
        main(["shuffle"])
    assert error.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as error:
        main(["upsample", "--sampler", "random"])
    assert error.value.code == EXIT_USAGE


def test_bad_settings_exit_with_one(tmp_path, sphere_files, capsys):
    sparse, _, _ = sphere_files
    output = str(tmp_path / "out.xyz")
    with pytest.raises(SystemExit) as error:
        main(["upsample", "-i", sparse, "-o", output, "--multiplier", "0.5"])
    assert error.value.code == EXIT_USAGE
    assert "resample_multiplier" in capsys.readouterr().err

    config = tmp_path / "run.cfg"
    config.write_text("rate=2\nwarp=9\n")
    with pytest.raises(SystemExit) as error:
        main(["upsample", "-i", sparse, "-o", output, "--config", str(config)])
    assert error.value.code == EXIT_USAGE
    assert "run.cfg:2:" in capsys.readouterr().err


def test_data_errors_exit_with_two(tmp_path, capsys):
    broken = tmp_path / "broken.xyz"
    broken.write_text("1 2 three\n")
    assert main(["upsample", "-i", str(broken), "-o", str(tmp_path / "out.xyz")]) == EXIT_DATA
    assert "broken.xyz:1:" in capsys.readouterr().err
    assert main(["upsample", "-i", str(tmp_path / "missing.xyz"), "-o", str(tmp_path / "out.xyz")]) == EXIT_DATA


def test_results_are_stored(tmp_path, sphere_files):
    from src.database.db_setup import get_db_session
    from src.database.models import DiagnosticRun, EvaluationRun

    sparse, dense, _ = sphere_files
    url = f"sqlite:///{tmp_path / 'results.db'}"
    assert main(["evaluate", "-i", sparse, "--gt", dense, "--db", url]) == EXIT_OK
    assert main(["diagnose", "--multipliers", "1", "--methods", "topk", "--repeats", "1", "--db", url]) == EXIT_OK
    for db in get_db_session(url):
        evaluation = db.query(EvaluationRun).one()
        assert evaluation.gt_path == dense and evaluation.p2f_mean is None
        run = db.query(DiagnosticRun).one()
        assert run.source == "planted" and len(run.rows) == 1


@pytest.mark.slow
def test_upsample_files_identical_across_thread_counts(tmp_path):
    sparse = str(tmp_path / "sphere.xyz")
    assert main(["gen", "--shape", "sphere", "-n", "2048", "-o", sparse]) == EXIT_OK
    outputs = []
    for threads in ("1", "4"):
        output = tmp_path / f"out_{threads}.xyz"
        assert main(["upsample", "-i", sparse, "-o", str(output), "--rate", "4", "--seed", "7", "--threads", threads]) == EXIT_OK
        outputs.append(output.read_bytes())
    assert len(read_pointcloud(str(tmp_path / "out_1.xyz"))) == 8192
    assert outputs[0] == outputs[1]
