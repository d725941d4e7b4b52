"""Tests for the experiment driver: config grammar, validation errors,
exit codes, CSV provenance and bit-identical reruns."""

import numpy as np
import pytest

from qlbem import cli
from qlbem import geometry as geo

TINY_DELTA = """
experiment = delta
geometry = sphere
kappa0 = 1
h = 0.5
delta_list = 0.5
[domain 1]
epsilon = 2
mu = 1
"""


class TestConfigParsing:
    def test_full_roundtrip(self):
        cfg = cli.parse_config("""
            experiment = iterations
            geometry = two_cubes
            kappa0 = 6
            h_list = 0.25, 0.2
            gmres_tol = 1e-4
            identity_term = false
            [domain 1]
            epsilon = 2
            [domain 2]
            epsilon = 4+0j
            mu = 1
        """)
        assert cfg.experiment == "iterations"
        assert cfg.h_list == [0.25, 0.2]
        assert cfg.identity_term is False
        assert cfg.domains[2] == (4 + 0j, 1 + 0j)

    def test_unknown_experiment(self):
        with pytest.raises(cli.ConfigError, match="experiment"):
            cli.parse_config("experiment = nope\nkappa0 = 1\nh = 0.2")

    def test_unknown_key_named(self):
        with pytest.raises(cli.ConfigError, match="frob"):
            cli.parse_config("experiment = delta\nfrob = 1")

    def test_missing_required_key(self):
        with pytest.raises(cli.ConfigError, match="kappa0"):
            cli.parse_config("experiment = identity\nh = 0.2")

    def test_positive_checks(self):
        with pytest.raises(cli.ConfigError, match="'h'"):
            cli.parse_config("experiment = identity\nkappa0 = 1\nh = -0.2")

    def test_empty_list_rejected(self):
        with pytest.raises(cli.ConfigError, match="h_list"):
            cli.parse_config("experiment = convergence\nkappa0 = 1\n"
                             "h_list = ,")

    def test_sweep_needs_all_three_keys(self):
        with pytest.raises(cli.ConfigError, match="kappa0_count"):
            cli.parse_config("experiment = resonance\nh = 0.25\n"
                             "kappa0_start = 5\nkappa0_stop = 8")

    def test_sweep_study_requires_sweep(self):
        with pytest.raises(cli.ConfigError, match="kappa0_start"):
            cli.parse_config("experiment = resonance\nh = 0.25\nkappa0 = 6")

    def test_bad_domain_material(self):
        with pytest.raises(cli.ConfigError, match="epsilon"):
            cli.parse_config("experiment = delta\nkappa0 = 1\nh = 0.2\n"
                             "delta_list = 0.2\n[domain 1]\nepsilon = cow")

    def test_duplicate_key_rejected(self):
        with pytest.raises(cli.ConfigError, match="duplicated"):
            cli.parse_config("experiment = delta\nkappa0 = 1\nkappa0 = 2\n"
                             "h = 0.2\ndelta_list = 0.2")

    def test_comments_and_blank_lines(self):
        cfg = cli.parse_config("# a comment\n\nexperiment = identity\n"
                               "kappa0 = 1  # trailing\nh = 0.2\n")
        assert cfg.kappa0 == 1.0

    def test_hash_is_stable_and_key_order_independent(self):
        a = cli.parse_config("experiment = identity\nkappa0 = 1\nh = 0.2")
        b = cli.parse_config("h = 0.2\nkappa0 = 1\nexperiment = identity")
        assert cli.config_hash(a) == cli.config_hash(b)
        c = cli.parse_config("experiment = identity\nkappa0 = 2\nh = 0.2")
        assert cli.config_hash(a) != cli.config_hash(c)


class TestMainExitCodes:
    def test_unknown_experiment_exits_nonzero(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("experiment = nope\n")
        assert cli.main(["run", str(p)]) == 1

    def test_missing_config_file(self):
        assert cli.main(["run", "/does/not/exist.cfg"]) == 1

    def test_runtime_error_exits_two(self, tmp_path):
        p = tmp_path / "bad.cfg"
        # valid config, but the mesh file is missing at run time
        p.write_text("experiment = identity\ngeometry = mesh\n"
                     "mesh = /does/not/exist.msh\nkappa0 = 1\nh = 0.2\n")
        assert cli.main(["run", str(p)]) == 2

    def test_mesh_subcommand(self, tmp_path):
        out = tmp_path / "sphere.msh"
        assert cli.main(["mesh", "sphere", "0.4", "--out", str(out)]) == 0
        mesh = geo.load_mesh(str(out))
        assert mesh.domain_count == 2


@pytest.fixture(scope="module")
def delta_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("delta")
    cfg = cli.parse_config(TINY_DELTA)
    cli.run(cfg, str(out))
    return out / "delta.csv", cfg


class TestRunOutputs:
    def test_provenance_header(self, delta_run):
        path, cfg = delta_run
        text = path.read_text()
        assert "# config: experiment = delta" in text
        assert "# config: kappa0 = 1.0" in text
        assert f"# config_hash: {cli.config_hash(cfg)}" in text
        header = [ln for ln in text.splitlines()
                  if not ln.startswith("#")][0]
        assert header.split(",")[-2:] == ["version", "config_hash"]

    def test_row_contents(self, delta_run):
        path, cfg = delta_run
        rows = [ln.split(",") for ln in path.read_text().splitlines()
                if not ln.startswith("#")][1:]
        assert len(rows) == 1
        assert rows[0][-1] == cli.config_hash(cfg)
        assert rows[0][4] == "ok"
        assert int(rows[0][2]) > 0          # iterations
        assert float(rows[0][3]) > 0        # nnz per column

    def test_rerun_is_bit_identical(self, delta_run, tmp_path):
        path, cfg = delta_run
        cli.run(cfg, str(tmp_path))
        assert (tmp_path / "delta.csv").read_bytes() == path.read_bytes()
