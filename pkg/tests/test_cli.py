"""End-to-end tests for the fluidnet command line."""

import pytest

from fluidnet import __version__
from fluidnet.cli import EXIT_INFEASIBLE, EXIT_INVALID, EXIT_OK, main
from fluidnet.report import SIMULATE_HEADER, parse_decay, read_csv
from fluidnet.runlog import read_manifests

WITNESS_PATHS = """\
T=1.0
# node 1 starts with a backlog, node 2 jumps at the horizon
drift=-2.0; origin=0.0; jumps=(0.0,2.0)
drift=1.0; origin=0.0; jumps=(1.0,1.0)
"""

PARALLEL_TOML = """\
[network]
d = 2
alpha = 0.5
T = 1.0
Q = [[0.0, 0.0], [0.0, 0.0]]
r = [2.0, 1.0]
mu = [1.0, 0.0]
c = [1.0, 1.0]
exogenous = [1]
"""

# only node 1 is fed from outside; node 2 sees routed fluid
ROUTED_TOML = """\
[network]
d = 2
alpha = 0.5
T = 1.0
Q = [[0.0, 1.0], [0.0, 0.0]]
r = [3.0, 2.0]
mu = [1.0, 0.0]
c = [0.2, 1.0]
exogenous = [1]
"""


@pytest.fixture
def write(tmp_path):
    def _write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    return _write


class TestBasics:
    def test_version(self, capsys):
        assert main(["--version"]) == EXIT_OK
        assert __version__ in capsys.readouterr().out

    def test_help(self, capsys):
        assert main([]) == EXIT_OK
        assert "EXIT CODES" in capsys.readouterr().out

    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == EXIT_INVALID
        assert "Unknown command" in capsys.readouterr().err


class TestValidate:
    def test_tandem_config(self, tandem_toml, capsys):
        assert main(["validate", str(tandem_toml)]) == EXIT_OK
        assert "Spectral radius" in capsys.readouterr().out

    def test_row_sum_is_named(self, tandem_toml, write, capsys):
        text = tandem_toml.read_text(encoding="utf-8")
        path = write("bad.toml", text.replace("[0.0, 1.0], [0.0, 0.0]", "[0.0, 1.2], [0.0, 0.0]"))
        assert main(["validate", path]) == EXIT_INVALID
        captured = capsys.readouterr()
        assert "row 1 sums to 1.2" in captured.out + captured.err

    def test_malformed_toml_reports_line(self, write, capsys):
        path = write("broken.toml", "[network]\nd = 2\nalpha = \n")
        assert main(["validate", path]) == EXIT_INVALID
        assert "line 3" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["validate", str(tmp_path / "nope.toml")]) == EXIT_INVALID
        assert "cannot read" in capsys.readouterr().err

    def test_run_is_logged(self, tandem_toml, fluidnet_home):
        main(["validate", str(tandem_toml)])
        (manifest,) = read_manifests(fluidnet_home / "runs.log")
        assert manifest.command.startswith("validate ")
        assert len(manifest.config_hash) == 64
        assert manifest.version == __version__


class TestTandem:
    def test_example_value(self, tandem_toml, capsys):
        assert main(["tandem", str(tandem_toml), "--y", "2"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "1.28284271" in out
        assert "case iii" in out

    def test_sweep_lists_regimes(self, tandem_toml, capsys):
        assert main(["tandem", str(tandem_toml), "--y", "0.5,2"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "regime=2" in out
        assert "regime=3" in out

    def test_missing_threshold(self, tandem_toml, capsys):
        assert main(["tandem", str(tandem_toml)]) == EXIT_INVALID
        assert "--y" in capsys.readouterr().err


class TestRate:
    def test_csv_output(self, tandem_toml, tmp_path):
        out = tmp_path / "rate.csv"
        code = main(["rate", str(tandem_toml), "--b", "0,1", "--y", "0.5,2", "--csv", str(out)])
        assert code == EXIT_OK
        header, rows = read_csv(out)
        assert header == ["y", "v_star", "x_1", "x_2", "u_1", "u_2"]
        assert [row["y"] for row in rows] == ["0.5", "2"]
        assert float(rows[1]["v_star"]) == pytest.approx(0.2 * 2**0.5 + 1.0, rel=1e-3)

    def test_infeasible_exit_code(self, write):
        path = write("parallel.toml", PARALLEL_TOML)
        assert main(["rate", path, "--b", "0,1", "--y", "1"]) == EXIT_INFEASIBLE

    def test_bad_grid(self, tandem_toml, capsys):
        code = main(["rate", str(tandem_toml), "--b", "0,1", "--y", "2", "--grid", "abc"])
        assert code == EXIT_INVALID
        assert "--grid must be an integer" in capsys.readouterr().err

    def test_bad_weights(self, tandem_toml, capsys):
        assert main(["rate", str(tandem_toml), "--b", "0,x", "--y", "2"]) == EXIT_INVALID
        assert "comma-separated" in capsys.readouterr().err

    def test_every_threshold_is_validated(self, tandem_toml, capsys):
        assert main(["rate", str(tandem_toml), "--b", "0,1", "--y", "1,-1"]) == EXIT_INVALID
        assert "greater than 0" in capsys.readouterr().err
        assert main(["tandem", str(tandem_toml), "--y", "2,0"]) == EXIT_INVALID

    def test_unweighted_input_is_flagged(self, write, capsys):
        path = write("routed.toml", ROUTED_TOML)
        assert main(["rate", path, "--b", "0,1", "--y", "0.5"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "no weighted node has exogenous input" in out


class TestReflect:
    def test_csv_ends_at_witness(self, tandem_toml, write, tmp_path, fluidnet_home):
        paths = write("witness.paths", WITNESS_PATHS)
        out = tmp_path / "z.csv"
        assert main(["reflect", str(tandem_toml), paths, "--csv", str(out)]) == EXIT_OK
        header, rows = read_csv(out)
        assert header == ["t", "Z_1", "Z_2", "Y_1", "Y_2"]
        last = rows[-1]
        assert float(last["t"]) == 1.0
        assert float(last["Z_1"]) == pytest.approx(0.0)
        assert float(last["Z_2"]) == pytest.approx(2.0)
        (manifest,) = read_manifests(fluidnet_home / "runs.log")
        assert manifest.outputs == [str(out)]

    def test_oracle_gap_printed(self, tandem_toml, write, capsys):
        paths = write("witness.paths", WITNESS_PATHS)
        assert main(["reflect", str(tandem_toml), paths, "--oracle-grid", "200"]) == EXIT_OK
        assert "oracle grid 200" in capsys.readouterr().out

    def test_dimension_mismatch(self, tandem_toml, write, capsys):
        paths = write("one.paths", "T=1.0\ndrift=-1.0; origin=0.0; jumps=\n")
        assert main(["reflect", str(tandem_toml), paths]) == EXIT_INVALID
        assert "1 coordinates" in capsys.readouterr().err

    def test_malformed_literal(self, tandem_toml, write, capsys):
        text = WITNESS_PATHS.replace("jumps=(1.0,1.0)", "jumps=(1.0 1.0)")
        paths = write("bad.paths", text)
        assert main(["reflect", str(tandem_toml), paths]) == EXIT_INVALID
        assert "line 4: jumps must be" in capsys.readouterr().err


class TestSimulate:
    def test_zero_threshold(self, tandem_toml, tmp_path, monkeypatch, fluidnet_home):
        monkeypatch.setenv("FLUIDNET_THREADS", "1")
        out = tmp_path / "mc.csv"
        code = main(["simulate", str(tandem_toml), "--b", "0,1", "--y", "0", "--n", "2,3",
                     "--reps", "20", "--seed", "5", "--csv", str(out)])
        assert code == EXIT_OK
        header, rows = read_csv(out)
        assert header == SIMULATE_HEADER
        assert [row["hits"] for row in rows] == ["20", "20"]
        (manifest,) = read_manifests(fluidnet_home / "runs.log")
        assert manifest.seed == 5

    def test_csv_independent_of_threads(self, tandem_toml, tmp_path, monkeypatch):
        outputs = []
        for threads in ("1", "8"):
            monkeypatch.setenv("FLUIDNET_THREADS", threads)
            out = tmp_path / f"mc_{threads}.csv"
            code = main(["simulate", str(tandem_toml), "--b", "0,1", "--y", "0.3",
                         "--n", "2,4", "--reps", "400", "--seed", "11", "--csv", str(out)])
            assert code == EXIT_OK
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]

    def test_rejects_several_thresholds(self, tandem_toml, capsys):
        code = main(["simulate", str(tandem_toml), "--b", "0,1", "--y", "1,2", "--n", "2",
                     "--reps", "10"])
        assert code == EXIT_INVALID
        assert "single --y" in capsys.readouterr().err

    def test_bad_thread_setting(self, tandem_toml, monkeypatch, capsys):
        monkeypatch.setenv("FLUIDNET_THREADS", "0")
        code = main(["simulate", str(tandem_toml), "--b", "0,1", "--y", "1", "--n", "2",
                     "--reps", "10"])
        assert code == EXIT_INVALID
        assert "FLUIDNET_THREADS" in capsys.readouterr().err


class TestCompare:
    def test_small_threshold_uses_backlog(self, tandem_toml, tmp_path, monkeypatch):
        # node 2 drains while node 1 is empty, so even y = 0.1 needs a node 1 backlog
        monkeypatch.setenv("FLUIDNET_THREADS", "1")
        out = tmp_path / "cmp.csv"
        code = main(["compare", str(tandem_toml), "--b", "0,1", "--y", "0.1", "--n", "2",
                     "--reps", "30", "--csv", str(out)])
        assert code == EXIT_OK
        header, rows = read_csv(out)
        assert header == ["y", "v_star", "decay_n2"]
        assert float(rows[0]["v_star"]) == pytest.approx(0.2 * 0.2**0.5, rel=1e-6)

    def test_rejects_nonpositive_threshold(self, tandem_toml, monkeypatch):
        monkeypatch.setenv("FLUIDNET_THREADS", "1")
        code = main(["compare", str(tandem_toml), "--b", "0,1", "--y", "0.5,-1", "--n", "2",
                     "--reps", "10"])
        assert code == EXIT_INVALID


@pytest.mark.slow
class TestDeskScale:
    ARGS = ["--b", "0,1", "--y", "1", "--n", "5,10,20", "--reps", "1000000", "--seed", "0"]

    def test_compare_decay_approaches_rate(self, tandem_toml, tmp_path, monkeypatch):
        monkeypatch.setenv("FLUIDNET_THREADS", "8")
        out = tmp_path / "cmp.csv"
        assert main(["compare", str(tandem_toml), *self.ARGS, "--csv", str(out)]) == EXIT_OK
        _, (row,) = read_csv(out)
        v_star = float(row["v_star"])
        decays = [parse_decay(row[f"decay_n{n}"])[0] for n in (5, 10, 20)]
        assert all(decay > 0.0 for decay in decays)
        assert v_star / 3.0 <= decays[-1] <= 3.0 * v_star
        gaps = [abs(decay - v_star) for decay in decays]
        assert sum(1 for a, b in zip(gaps, gaps[1:]) if b > a) <= 1

    def test_threads_do_not_change_csv(self, tandem_toml, tmp_path, monkeypatch):
        outputs = []
        for threads in ("1", "8"):
            monkeypatch.setenv("FLUIDNET_THREADS", threads)
            out = tmp_path / f"mc_{threads}.csv"
            args = ["simulate", str(tandem_toml), *self.ARGS, "--csv", str(out)]
            assert main(args) == EXIT_OK
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]
