import math
import shutil
import subprocess
import sys

import numpy as np
import pytest

from gridfig.render import PlotJob, SchemaError, build_figure, main, pivot_heatmap, render

HEATMAP_HEADER = "gamma,w,snr,rep_count,mean_mse,se\n"


def grid_csv(tmp_path, name="grid.csv"):
    rows = [HEATMAP_HEADER]
    for g in (0.1, 0.5):
        for w in ("0", "1", "inf"):
            mse = 0.3 - 0.1 * g + (0.02 if w == "inf" else 0.0)
            rows.append(f"{g},{w},2.0,4,{mse},0.01\n")
    path = tmp_path / name
    path.write_text("".join(rows))
    return str(path)


def lines_csv(tmp_path):
    path = tmp_path / "curve.csv"
    path.write_text(
        "policy,n,estimate,se\n"
        "greedy,100,1.2,0.01\ngreedy,200,1.25,0.01\n"
        "exploratory,100,5.0,0.5\nexploratory,200,40.0,4.0\n"
    )
    return str(path)


class TestPivot:
    def test_axes_sorted_and_complete(self, tmp_path):
        from gridfig.render import read_rows

        rows = read_rows(grid_csv(tmp_path))
        gammas, ws, matrix = pivot_heatmap(rows)
        assert gammas == [0.1, 0.5]
        assert ws == [0.0, 1.0, math.inf]
        assert matrix.shape == (2, 3)
        # gamma indexes rows (vertical axis), w indexes columns (horizontal)
        assert matrix[0, 0] == pytest.approx(0.29)
        assert matrix[1, 2] == pytest.approx(0.27)

    def test_incomplete_grid_rejected(self, tmp_path):
        path = tmp_path / "partial.csv"
        path.write_text(HEATMAP_HEADER + "0.1,0,2.0,4,0.3,0.01\n0.5,1,2.0,4,0.2,0.01\n")
        from gridfig.render import read_rows

        with pytest.raises(SchemaError, match="not complete"):
            pivot_heatmap(read_rows(path))


class TestHeatmap:
    def test_renders_file(self, tmp_path):
        out = tmp_path / "fig.png"
        render(PlotJob(input_csv=grid_csv(tmp_path), kind="heatmap", output=str(out)))
        assert out.exists() and out.stat().st_size > 0

    def test_axis_orientation(self, tmp_path):
        fig = build_figure(PlotJob(input_csv=grid_csv(tmp_path), kind="heatmap", output="unused.png"))
        ax = fig.axes[0]
        assert ax.get_xlabel() == "w"
        assert ax.get_ylabel() == "gamma"
        assert [t.get_text() for t in ax.get_xticklabels()] == ["0", "1", "inf"]
        assert [t.get_text() for t in ax.get_yticklabels()] == ["0.1", "0.5"]

    def test_deterministic_bytes(self, tmp_path):
        csv_path = grid_csv(tmp_path)
        out1, out2 = tmp_path / "a.png", tmp_path / "b.png"
        render(PlotJob(input_csv=csv_path, kind="heatmap", output=str(out1)))
        render(PlotJob(input_csv=csv_path, kind="heatmap", output=str(out2)))
        assert out1.read_bytes() == out2.read_bytes()

    def test_missing_value_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("gamma,w,se\n0.1,0,0.01\n")
        job = PlotJob(input_csv=str(path), kind="heatmap", output=str(tmp_path / "x.png"))
        with pytest.raises(SchemaError, match="mean_mse"):
            render(job)

    def test_input_untouched(self, tmp_path):
        csv_path = grid_csv(tmp_path)
        before = open(csv_path).read()
        render(PlotJob(input_csv=csv_path, kind="heatmap", output=str(tmp_path / "fig.png")))
        assert open(csv_path).read() == before


class TestLines:
    def test_renders_grouped_curves(self, tmp_path):
        out = tmp_path / "curves.png"
        job = PlotJob(input_csv=lines_csv(tmp_path), kind="lines", output=str(out), log_y=True)
        render(job)
        assert out.exists() and out.stat().st_size > 0

    def test_missing_x_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        job = PlotJob(input_csv=str(path), kind="lines", output=str(tmp_path / "x.png"))
        with pytest.raises(SchemaError):
            render(job)


class TestCli:
    def test_ok_run(self, tmp_path):
        out = tmp_path / "fig.png"
        code = main(["--in", grid_csv(tmp_path), "--kind", "heatmap", "--out", str(out)])
        assert code == 0 and out.exists()

    def test_schema_error_exit(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("gamma,w\n0.1,0\n")
        code = main(["--in", str(path), "--kind", "heatmap", "--out", str(tmp_path / "x.png")])
        assert code == 1
        assert "mean_mse" in capsys.readouterr().err

    def test_unknown_kind_usage_error(self, tmp_path):
        assert main(["--in", "x.csv", "--kind", "pie", "--out", "y.png"]) == 2


@pytest.mark.skipif(shutil.which("splitalloc") is None, reason="core CLI not installed")
class TestEndToEnd:
    def test_consumes_core_heatmap_csv(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            '{"d": 6, "s": 2, "snr": 2.0, "gamma_grid": [0.5, 1.0], "w_grid": [0, "inf"],'
            ' "reps": 2, "n0": 60, "ell": 2, "min_leaf": 4, "B": 4, "n_test": 15}'
        )
        csv_path = tmp_path / "grid.csv"
        proc = subprocess.run(
            ["splitalloc", "forest", "heatmap", "--config", str(cfg), "--out", str(csv_path)],
            capture_output=True,
        )
        assert proc.returncode == 0, proc.stderr
        out = tmp_path / "fig.png"
        assert main(["--in", str(csv_path), "--kind", "heatmap", "--out", str(out)]) == 0
        assert out.exists()
