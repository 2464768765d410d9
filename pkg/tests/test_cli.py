import csv
import warnings

import pytest

from phifem_heat.analysis import CSV_COLUMNS
from phifem_heat.cli import main

TIMING_COLUMNS = {"t_assemble_s", "t_factor_s", "t_solve_s"}


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def run_cli(args):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return main(args)


class TestRun:
    def test_single_run_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "single.csv"
        code = run_cli(["run", "--case", "circle", "--n", "8", "--output", str(out)])
        assert code == 0
        rows = read_csv(out)
        assert rows[0] == CSV_COLUMNS
        assert len(rows) == 2
        assert "err_l2h1" in capsys.readouterr().out

    def test_ladder_reports_order(self, tmp_path, capsys):
        out = tmp_path / "ladder.csv"
        code = run_cli(["run", "--ladder", "8,16", "--output", str(out)])
        assert code == 0
        assert len(read_csv(out)) == 3
        assert "fitted" in capsys.readouterr().out

    def test_idempotent_except_timings(self, tmp_path):
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        run_cli(["run", "--n", "8", "--output", str(out1)])
        run_cli(["run", "--n", "8", "--output", str(out2)])
        rows1, rows2 = read_csv(out1), read_csv(out2)
        keep = [i for i, c in enumerate(CSV_COLUMNS) if c not in TIMING_COLUMNS]
        for r1, r2 in zip(rows1, rows2):
            assert [r1[i] for i in keep] == [r2[i] for i in keep]

    def test_sigma_sweep(self, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        code = run_cli(["run", "--n", "8", "--sweep-sigma", "0.5,1,2", "--output", str(out)])
        assert code == 0
        assert len(read_csv(out)) == 4
        assert capsys.readouterr().out.count("sigma=") == 3

    def test_config_file_case(self, tmp_path):
        cfg = tmp_path / "case.toml"
        cfg.write_text(
            '\n'.join(
                [
                    'name = "config-circle"',
                    "dimension = 2",
                    'phi = "-1 + x^2 + y^2"',
                    'f = "exp(x) * sin(t)"',
                ]
            )
        )
        out = tmp_path / "cfg.csv"
        code = run_cli(["run", "--config", str(cfg), "--n", "8", "--output", str(out)])
        assert code == 0
        rows = read_csv(out)
        assert rows[1][0] == "config-circle"


class TestSweep:
    def test_levelset_degree_sweep(self, tmp_path, capsys):
        out = tmp_path / "l.csv"
        code = run_cli(["sweep", "--n", "8", "--sweep-l", "1,2", "--output", str(out)])
        assert code == 0
        rows = read_csv(out)
        assert [row[2] for row in rows[1:]] == ["1", "2"]  # l column
        assert capsys.readouterr().out.count("l=") == 2

    def test_sweep_requires_a_parameter(self, tmp_path):
        with pytest.raises(SystemExit):
            run_cli(["sweep", "--n", "8", "--output", str(tmp_path / "x.csv")])


class TestInfo:
    def test_info_reports_classification(self, capsys):
        code = run_cli(["info", "--case", "circle", "--n", "8"])
        assert code == 0
        out = capsys.readouterr().out
        assert "active cells" in out
        assert "cut cells" in out


class TestValidation:
    def test_unknown_case_exits(self):
        with pytest.raises(SystemExit):
            run_cli(["run", "--case", "nope", "--n", "8", "--output", "/dev/null"])

    def test_bad_flags_are_collected(self, capsys):
        with pytest.raises(SystemExit):
            run_cli(["run", "--k", "5", "--sigma", "-1", "--dt-rule", "zz"])
        err = capsys.readouterr().err
        assert "--k" in err
        assert "--sigma" in err

    def test_bad_ladder_rejected(self):
        with pytest.raises(SystemExit):
            run_cli(["run", "--ladder", "16,8"])
