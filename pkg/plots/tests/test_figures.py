"""Tests for the figure builders: all five kinds render, slope
annotations match the CSV fit to two decimals, and bad inputs fail with
named errors."""

import json

import numpy as np
import pytest

from plots import cli
from plots import figures as fg

HEADER = "# config: experiment = test\n# version: 0.0\n# config_hash: x\n"


def write_csv(path, columns, rows):
    lines = [HEADER + ",".join(columns)]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture
def convergence_csv(tmp_path):
    p = tmp_path / "convergence.csv"
    hs = [0.25, 0.1667, 0.125, 0.1]
    rows = [[h, 600, 50, 0.3 * h ** 1.2, "ok"] for h in hs]
    write_csv(p, ["h", "dofs", "iterations", "energy_error", "status"],
              rows)
    return p


def all_texts(fig):
    out = []
    for ax in fig.axes:
        out += [t.get_text() for t in ax.texts]
    return out


class TestKinds:
    def test_rcs(self, tmp_path):
        p = tmp_path / "mie.csv"
        theta = np.linspace(0, 180, 19)
        write_csv(p, ["theta_deg", "rcs_solver", "rcs_mie"],
                  [[t, 1 + np.cos(np.radians(t)) ** 2,
                    1 + np.cos(np.radians(t)) ** 2] for t in theta])
        out = fg.render({"kind": "rcs", "csv": str(p),
                         "output": str(tmp_path / "rcs.png")})
        assert (tmp_path / "rcs.png").stat().st_size > 0
        assert out.endswith("rcs.png")

    def test_convergence(self, convergence_csv, tmp_path):
        fg.render({"kind": "convergence", "csv": str(convergence_csv),
                   "output": str(tmp_path / "conv.png")})
        assert (tmp_path / "conv.png").stat().st_size > 0

    def test_iterations(self, tmp_path):
        p = tmp_path / "it.csv"
        hs = [0.25, 0.125, 0.1]
        write_csv(p, ["h", "it_classic", "it_ql"],
                  [[h, int(40 / h), int(50 - 5 * np.log(h))] for h in hs])
        fg.render({"kind": "iterations", "csv": str(p),
                   "output": str(tmp_path / "it.png")})
        assert (tmp_path / "it.png").stat().st_size > 0

    def test_condition(self, tmp_path):
        p = tmp_path / "cond.csv"
        ks = np.linspace(5, 8, 7)
        write_csv(p, ["kappa0", "cond_ql", "cond_classic_preconditioned"],
                  [[k, 20 + k, 15 + k] for k in ks])
        fg.render({"kind": "condition", "csv": str(p),
                   "output": str(tmp_path / "cond.png")})
        assert (tmp_path / "cond.png").stat().st_size > 0

    def test_delta(self, tmp_path):
        p = tmp_path / "delta.csv"
        write_csv(p, ["delta", "dofs", "iterations", "nnz_per_column",
                      "status"],
                  [[0.24, 600, 50, 900, "ok"], [0.12, 600, 55, 240, "ok"],
                   [0.06, 600, 70, 80, "ok"]])
        fg.render({"kind": "delta", "csv": str(p),
                   "output": str(tmp_path / "delta.png")})
        assert (tmp_path / "delta.png").stat().st_size > 0


class TestSlopes:
    def test_annotation_matches_fit(self, convergence_csv):
        data = fg.load_csv(str(convergence_csv))
        h, err = fg.numeric_columns(data, ("h", "energy_error"),
                                    str(convergence_csv))
        expected = fg.fit_slope(h, err)
        fig = fg.build({"kind": "convergence",
                        "csv": str(convergence_csv)})
        texts = " ".join(all_texts(fig))
        assert f"slope {expected:.2f}" in texts

    def test_guide_parsing(self, convergence_csv, tmp_path):
        fg.render({"kind": "convergence", "csv": str(convergence_csv),
                   "guides": ["h^1", "h^1.25", "log:-200,-89"],
                   "output": str(tmp_path / "g.png")})
        assert (tmp_path / "g.png").stat().st_size > 0

    def test_unknown_guide(self, convergence_csv):
        with pytest.raises(fg.PlotError, match="guide"):
            fg.build({"kind": "convergence", "csv": str(convergence_csv),
                      "guides": ["exp(h)"]})


class TestErrors:
    def test_missing_column_named(self, tmp_path):
        p = tmp_path / "bad.csv"
        write_csv(p, ["h", "dofs"], [[0.25, 600]])
        with pytest.raises(fg.PlotError, match="energy_error"):
            fg.build({"kind": "convergence", "csv": str(p)})

    def test_empty_csv(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text(HEADER + "h,energy_error\n")
        with pytest.raises(fg.PlotError, match="no data rows"):
            fg.build({"kind": "convergence", "csv": str(p)})
        assert not (tmp_path / "never.png").exists()

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(fg.PlotError, match="kind"):
            fg.build({"kind": "pie", "csv": "x.csv"})

    def test_failed_rows_skipped(self, tmp_path):
        p = tmp_path / "mixed.csv"
        write_csv(p, ["h", "energy_error", "status"],
                  [[0.25, 0.1, "ok"], ["0.2", "", "failed"],
                   [0.125, 0.05, "ok"]])
        fig = fg.build({"kind": "convergence", "csv": str(p)})
        line = fig.axes[0].lines[0]
        assert len(line.get_xdata()) == 2


class TestCli:
    def test_render_single(self, convergence_csv, tmp_path):
        spec = tmp_path / "spec.json"
        out = tmp_path / "fig.png"
        spec.write_text(json.dumps({"kind": "convergence",
                                    "csv": str(convergence_csv),
                                    "output": str(out)}))
        assert cli.main(["render", str(spec)]) == 0
        assert out.stat().st_size > 0

    def test_render_list(self, convergence_csv, tmp_path):
        spec = tmp_path / "spec.json"
        specs = [{"kind": "convergence", "csv": str(convergence_csv),
                  "output": str(tmp_path / f"f{i}.png")} for i in range(2)]
        spec.write_text(json.dumps(specs))
        assert cli.main(["render", str(spec)]) == 0

    def test_bad_spec_exit(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text("{not json")
        assert cli.main(["render", str(spec)]) == 1

    def test_error_exit(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"kind": "pie", "csv": "x",
                                    "output": "y"}))
        assert cli.main(["render", str(spec)]) == 1
