import csv
import json

import numpy as np
import pytest

import lsmpc.cli as cli
from lsmpc.config import ConfigError, RunConfig, parse_config, read_config_file
from lsmpc.errors import ConvergenceError

FILES = ("trajectory.csv", "control.csv", "gmres.csv", "residual.csv")
HEADERS = {
    "trajectory.csv": ["step", "t", "x", "y", "z"],
    "control.csv": ["step", "t", "u", "u_lo", "u_hi"],
    "gmres.csv": ["step", "iters", "final_relres"],
    "residual.csv": ["step", "f_norm2"],
}


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def default_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("default")
    code = cli.main(["--out", str(out)])
    return code, out


class TestParseConfig:
    def test_defaults(self):
        cfg, _ = parse_config([])
        assert (cfg.n, cfg.dt, cfg.h, cfg.tol, cfg.c, cfg.r, cfg.wd, cfg.beta) == (10, 0.005, 1e-8, 1e-5, 0.5, 0.1, 0.005, 10.0)
        assert cfg.jacobian == "gmres"

    def test_beta_zero(self):
        cfg, _ = parse_config(["--beta", "0"])
        assert cfg.beta == 0.0 and cfg.sphere_params().beta == 0.0

    def test_print_config_reflects_overrides(self, capsys):
        assert cli.main(["--n", "20", "--dt", "0.0025", "--print-config"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert "n = 20" in lines and "dt = 0.0025" in lines

    def test_printed_config_reads_back(self, tmp_path, capsys):
        cli.main(["--beta", "3", "--xf", "0,1,0", "--print-config"])
        path = tmp_path / "run.cfg"
        path.write_text(capsys.readouterr().out)
        cfg, _ = parse_config(["--config", str(path)])
        assert cfg.beta == 3.0 and cfg.xf == (0.0, 1.0, 0.0)

    def test_precedence(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment line\nbeta = 2.5\nn = 12  # trailing\nmax-iters = 40\n")
        cfg, _ = parse_config(["--config", str(path), "--n", "8"])
        assert (cfg.beta, cfg.n, cfg.max_iters) == (2.5, 8, 40)
        assert cfg.dt == RunConfig().dt

    def test_unknown_file_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("gamma = 1\n")
        with pytest.raises(ConfigError, match="gamma"):
            read_config_file(path)

    def test_malformed_value_names_key(self):
        with pytest.raises(ConfigError, match="^n:"):
            parse_config(["--n", "ten"])

    def test_rejects_non_unit(self):
        with pytest.raises(ConfigError, match="x0"):
            parse_config(["--x0", "0,0,2"])

    def test_normalize(self):
        cfg, _ = parse_config(["--x0", "0,0,2", "--normalize"])
        assert cfg.x0 == (0.0, 0.0, 1.0)

    @pytest.mark.parametrize("argv", [["--bogus"], ["--n", "ten"], ["--jacobian", "lu"], ["--r", "-1"], ["--xf", "1,0"], ["--h", "0"]])
    def test_usage_errors_exit_64(self, argv, capsys):
        assert cli.main(argv) == cli.EXIT_USAGE
        assert "configuration error" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["--config", str(tmp_path / "nope.cfg")]) == cli.EXIT_USAGE


class TestRunSimulation:
    def test_default_run(self, default_run):
        code, out = default_run
        assert code == 0
        lengths = set()
        for name in FILES:
            rows = read(out / name)
            assert rows[0] == HEADERS[name]
            lengths.add(len(rows))
        assert len(lengths) == 1
        traj = np.array(read(out / "trajectory.csv")[1:], dtype=float)
        np.testing.assert_array_equal(traj[:, 0], np.arange(len(traj)))
        np.testing.assert_allclose(np.linalg.norm(traj[:, 2:], axis=1), 1.0, atol=1e-12)

    def test_control_within_bounds(self, default_run):
        _, out = default_run
        ctl = np.array(read(out / "control.csv")[1:], dtype=float)
        u, lo, hi = ctl[:, 2], ctl[:, 3], ctl[:, 4]
        assert np.all(lo - 1e-6 <= u) and np.all(u <= hi + 1e-6)
        assert np.all(lo == 0.4) and np.all(hi == 0.6)

    def test_full_precision(self, default_run):
        _, out = default_run
        t = read(out / "trajectory.csv")[3][1]
        assert float(t) == 2 * 0.005 and len(read(out / "trajectory.csv")[5][2]) >= 16

    def test_single_step(self, tmp_path, capsys):
        assert cli.main(["--steps", "1", "--out", str(tmp_path)]) == cli.EXIT_BUDGET
        assert "step budget" in capsys.readouterr().err
        for name in FILES:
            assert len(read(tmp_path / name)) == 2

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            cli.main(["--steps", "6", "--out", str(out)])
        for name in FILES:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_dense_mode(self, tmp_path):
        assert cli.main(["--steps", "3", "--jacobian", "dense", "--out", str(tmp_path)]) == cli.EXIT_BUDGET
        gm = read(tmp_path / "gmres.csv")
        assert [r[1] for r in gm[1:]] == ["0", "0", "0"]

    def test_init_failure(self, tmp_path, monkeypatch, capsys):
        def fail(*args, **kwargs):
            raise ConvergenceError("no luck", best=np.zeros(33), history=[1.0, 0.5, 0.25])

        monkeypatch.setattr(cli, "initialize_U0", fail)
        assert cli.main(["--out", str(tmp_path)]) == cli.EXIT_INIT
        err = capsys.readouterr().err
        assert "initialization failed" in err and "2: 2.500000e-01" in err
        assert not list(tmp_path.iterdir())


class TestWriteCsv:
    def test_replaces_atomically(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("old\n")
        cli.write_csv(str(path), ["a"], [[1], [2]])
        assert path.read_text() == "a\n1\n2\n"
        assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]

    def test_failure_leaves_original(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("old\n")
        with pytest.raises(TypeError):
            cli.write_csv(str(path), ["a"], 5)
        assert path.read_text() == "old\n"
        assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]


class TestOracleCheck:
    def test_default_passes(self, tmp_path, capsys):
        assert cli.main(["--oracle-check", "--out", str(tmp_path)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["passed"]
        names = {c["name"] for c in report["checks"]}
        assert {"dense_vs_gmres", "stationarity", "fd_lagrangian", "symmetry"} <= names
        assert json.loads((tmp_path / "oracle_report.json").read_text()) == report

    def test_coarse_step_degrades_symmetry(self, tmp_path, capsys):
        assert cli.main(["--oracle-check", "--h", "1e-2", "--out", str(tmp_path)]) == cli.EXIT_SOLVER
        checks = {c["name"]: c for c in json.loads(capsys.readouterr().out)["checks"]}
        assert not checks["symmetry"]["passed"] and checks["symmetry"]["measured"] > 1e-4

    def test_beta_zero_skips_sweep(self, tmp_path, capsys):
        cli.main(["--oracle-check", "--beta", "0", "--out", str(tmp_path)])
        checks = {c["name"]: c for c in json.loads(capsys.readouterr().out)["checks"]}
        sweep = checks["beta_monotonicity"]
        assert sweep["skipped"] and "skipped" in sweep["detail"]
