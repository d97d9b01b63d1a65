import csv

import numpy as np
import pytest

from varq.cli import gap_rows, main, parse_config, run_command, write_report
from varq.dp import read_qtensor
from varq.errors import IoError, MissingRequired, TypeMismatch, UnknownKey
from varq.mdp import gen_gamblers_ruin

CHAIN = "idstatefrom,idaction,idstateto,probability,reward\n" + "".join(
    f"{s},{a},{min(s + 1, 3)},1.0,{0.0 if s == 3 else 1.0 + a}\n" for s in range(4) for a in range(2))


@pytest.fixture
def chain_csv(tmp_path):
    path = tmp_path / "chain.csv"
    path.write_text(CHAIN)
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestParse:
    def test_defaults(self):
        cfg = parse_config(["--domain", "cliffwalk", "--alpha0", "0.25", "--J", "4096"])
        assert (cfg.T, cfg.effective_gamma, cfg.J, cfg.alpha0) == (100, 0.9, 4096, 0.25)
        assert cfg.start_state() == 36

    def test_alpha_range(self):
        with pytest.raises(TypeMismatch):
            parse_config(["--domain", "cliffwalk", "--alpha0", "1.5"])

    def test_not_a_number(self):
        with pytest.raises(TypeMismatch):
            parse_config(["--domain", "cliffwalk", "--J", "many"])

    def test_flag_beats_file(self):
        cfg = parse_config(["--J", "256"], file=b"domain = gamblers_ruin\nJ = 16  # coarse\n")
        assert cfg.J == 256 and cfg.domain.kind == "gamblers_ruin"

    def test_config_file_on_disk(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("domain = random\nparam.S = 3\nT = 4\n")
        cfg = parse_config(["--config", str(path)])
        assert cfg.T == 4 and cfg.build_mdp().n_states == 3

    def test_params_and_switches(self):
        cfg = parse_config(["--domain", "gamblers_ruin", "--param", "capital_max=9", "--time-free",
                            "--alphas", "0.1,0.9"])
        assert cfg.time_free and cfg.alphas == (0.1, 0.9)
        assert cfg.build_mdp().n_states == 10

    def test_unknown_key(self):
        with pytest.raises(UnknownKey):
            parse_config(["--domain", "cliffwalk", "--colour", "red"])
        with pytest.raises(UnknownKey):
            parse_config([], file="domain = cliffwalk\ncolour = red\n")

    def test_missing_domain(self):
        with pytest.raises(MissingRequired):
            parse_config(["--J", "16"])

    def test_csv_needs_existing_path(self, tmp_path):
        with pytest.raises(MissingRequired):
            parse_config(["--domain", "csv"])
        with pytest.raises(MissingRequired):
            parse_config(["--domain", "csv", "--path", str(tmp_path / "nope.csv")])


class TestReport:
    def test_header_only(self, tmp_path):
        path = tmp_path / "r.csv"
        write_report([], path, ["alpha", "value"])
        assert path.read_text() == "alpha,value\n"

    def test_byte_identical(self, tmp_path):
        rows = [(0.1, 1 / 3, 7), (0.2, -2.5e-17, 8)]
        write_report(rows, tmp_path / "a.csv", ["x", "y", "n"])
        write_report(rows, tmp_path / "b.csv", ["x", "y", "n"])
        a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
        assert a == b
        assert float(a.decode().splitlines()[1].split(",")[1]) == 1 / 3

    def test_unwritable(self, tmp_path):
        bad = tmp_path / "missing" / "r.csv"
        with pytest.raises(IoError, match="missing"):
            write_report([(1,)], bad, ["x"])


class TestCommands:
    def test_solve_chain_bounds_coincide(self, chain_csv, tmp_path):
        cfg = parse_config(["--domain", "csv", "--path", chain_csv, "--J", "8", "--T", "3",
                            "--out", str(tmp_path / "o")])
        assert run_command("solve", cfg) == 0
        lo = read_qtensor(str(tmp_path / "o" / "q_lower"))
        up = read_qtensor(str(tmp_path / "o" / "q_upper"))
        assert np.array_equal(lo.values[:, :, 1:7], up.values[:, :, 1:7])
        assert lo.values[3, 0, 4, 1] == pytest.approx(2 + 0.9 * 2 + 0.81 * 2)

    def test_gap_shrinks(self, tmp_path):
        mdp = gen_gamblers_ruin(7, 0.7)
        coarse = {round(a, 6): g for a, _, _, g in gap_rows(mdp, 6, 16, 5)}
        fine = {round(a, 6): g for a, _, _, g in gap_rows(mdp, 6, 256, 5)}
        assert all(fine[a] <= coarse[a] + 1e-12 for a in coarse)

    def test_gap_command_files(self, tmp_path):
        cfg = parse_config(["--domain", "gamblers_ruin", "--T", "3", "--out", str(tmp_path)])
        run_command("gap", cfg)
        rows = read_rows(tmp_path / "gap_J16.csv")
        assert len(rows) == 16 and list(rows[0]) == ["alpha", "lower", "upper", "gap"]
        assert all(float(r["gap"]) >= 0 for r in rows)

    def test_oracle_passes(self, tmp_path):
        cfg = parse_config(["--domain", "random", "--param", "S=3", "--param", "A=2", "--T", "3",
                            "--J", "512", "--seed", "5", "--out", str(tmp_path)])
        run_command("oracle", cfg)
        rows = read_rows(tmp_path / "oracle.csv")
        assert len(rows) == 2 * 19
        assert {r["verdict"] for r in rows} == {"PASS"}

    def test_eval_and_train(self, tmp_path):
        cfg = parse_config(["--domain", "gamblers_ruin", "--T", "5", "--J", "16", "--episodes", "200",
                            "--sweeps", "20", "--out", str(tmp_path)])
        run_command("eval", cfg)
        for name in ("VaR", "E", "nVaR", "dVaR"):
            assert len(read_rows(tmp_path / f"eval_{name}.csv")) == 19
        run_command("train", cfg)
        assert len(read_rows(tmp_path / "train_w1.csv")) == 20
        assert read_qtensor(str(tmp_path / "q_trained")).values.shape == (6, 8, 16, 4)


class TestExitCodes:
    def test_ok(self, tmp_path, capsys):
        assert main(["gap", "--domain", "gamblers_ruin", "--T", "2", "--out", str(tmp_path)]) == 0
        assert "gap_J4096.csv" in capsys.readouterr().out

    def test_config_error(self, capsys):
        assert main(["solve", "--domain", "cliffwalk", "--alpha0", "2"]) == 1
        assert "TypeMismatch" in capsys.readouterr().err

    def test_unknown_command(self):
        assert main(["fly", "--domain", "cliffwalk"]) == 1

    def test_data_error(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("idstatefrom,idaction,idstateto,probability,reward\n0,0,0,0.5,0\n")
        assert main(["solve", "--domain", "csv", "--path", str(path), "--out", str(tmp_path)]) == 2

    def test_reward_bounds_are_data_errors(self, tmp_path):
        # strictly positive rewards with discounting violate the bound convention of the sweeps
        path = tmp_path / "pos.csv"
        path.write_text("idstatefrom,idaction,idstateto,probability,reward\n0,0,0,1.0,1.0\n")
        assert main(["solve", "--domain", "csv", "--path", str(path), "--T", "2", "--out", str(tmp_path)]) == 2

    def test_numerical_error(self, tmp_path, capsys):
        # exhaustive policy search on cliffwalk is far beyond the enumeration budget
        assert main(["oracle", "--domain", "cliffwalk", "--T", "12", "--J", "4", "--out", str(tmp_path)]) == 3
        assert "BudgetExceeded" in capsys.readouterr().err

    def test_usage(self, capsys):
        assert main([]) == 1
        assert "varq solve" in capsys.readouterr().out
