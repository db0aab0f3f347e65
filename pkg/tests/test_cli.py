import json

import pytest

from gendiff.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, args_from_config, build_parser, config_from_args, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestCommands:
    def test_classify(self, capsys):
        code, out, _ = run(capsys, "classify", "--spec", "power_drift_nu3")
        assert code == EXIT_PASS
        assert "entrance" in out

    def test_eigen_json(self, capsys):
        code, out, _ = run(capsys, "--format", "json", "eigen", "--spec", "reflected_bm", "--q", "0.5",
                           "--grid", "512")
        d = json.loads(out)
        assert code == EXIT_PASS
        assert float(d["H"]) == pytest.approx(1.0, rel=1e-5)
        assert d["columns"] == ["x", "phi", "psi", "rho"]

    def test_law_hitting(self, capsys):
        code, out, _ = run(capsys, "law", "--spec", "reflected_bm", "--clock", "hit:2", "--x", "0")
        assert code == EXIT_PASS
        # from 0, L_{T_2} ~ Exp(mean 2): E e^{-L} = 1/3
        assert float(out.strip().splitlines()[-1]) == pytest.approx(1 / 3)

    def test_simulate_rows(self, capsys):
        code, out, _ = run(capsys, "simulate", "--spec", "reflected_bm", "--horizon", "0.01", "--dt", "0.005",
                           "--n", "3", "--track", "0.5")
        lines = [l for l in out.splitlines() if not l.startswith("#")]
        assert code == EXIT_PASS
        assert lines[0] == "path,t,x,L0,L_0.5"
        assert len(lines) == 1 + 3 * 3

    def test_penalize(self, capsys):
        code, out, _ = run(capsys, "penalize", "--c", "1", "--q", "1", "--points", "0")
        assert code == EXIT_PASS
        assert "0,0,0.414213562" in out

    def test_verify_fail_exit(self, capsys):
        code, out, _ = run(capsys, "verify", "--theorem", "1.2", "--schedule", "4", "--x", "1", "--n", "2000",
                           "--dt", "1e-3")
        assert code == EXIT_FAIL
        assert out.strip().endswith("FAIL")

    def test_out_dir(self, capsys, tmp_path):
        code, out, _ = run(capsys, "--out", str(tmp_path), "classify", "--spec", "exp_decay")
        assert code == EXIT_PASS
        assert (tmp_path / "classify.csv").read_text().startswith("name,")


class TestExitCodes:
    def test_unknown_spec(self, capsys):
        code, _, err = run(capsys, "classify", "--spec", "nope")
        assert code == EXIT_CONFIG and "nope" in err

    def test_bad_args(self, capsys):
        assert run(capsys, "eigen", "--spec", "reflected_bm")[0] == EXIT_CONFIG
        assert run(capsys)[0] == EXIT_CONFIG

    def test_bad_value(self, capsys):
        assert run(capsys, "eigen", "--spec", "reflected_bm", "--q", "-1")[0] == EXIT_CONFIG

    def test_bad_config_file(self, capsys, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{")
        assert run(capsys, "--config", str(p))[0] == EXIT_CONFIG


class TestConfigRoundTrip:
    @pytest.mark.parametrize("argv", [
        ["penalize", "--c", "1", "--q", "1", "--points", "0,0.5"],
        ["verify", "--theorem", "1.3", "--schedule", "4,8", "--x", "1", "--a", "2"],
        ["simulate", "--spec", "exp_decay", "--horizon", "1", "--track", "0.5,1"],
        ["law", "--spec", "reflected_bm", "--clock", "ilt:1,2", "--x", "0.25"],
    ])
    def test_parse_emit_parse(self, argv):
        p = build_parser()
        cfg = config_from_args(p.parse_args(argv))
        again = config_from_args(p.parse_args(args_from_config(cfg)))
        assert again == cfg
        assert json.loads(json.dumps(cfg)) == cfg

    def test_config_file(self, capsys, tmp_path):
        code, out, _ = run(capsys, "--dump-config", "classify", "--spec", "exp_decay")
        p = tmp_path / "c.json"
        p.write_text(out)
        code, out2, _ = run(capsys, "--config", str(p))
        assert code == EXIT_PASS and "entrance" in out2


class TestSeed:
    def test_subcommand_seed_overrides_global(self, capsys):
        argv = ["simulate", "--spec", "reflected_bm", "--horizon", "0.002", "--dt", "0.001"]
        a = run(capsys, "--seed", "5", *argv)[1]
        b = run(capsys, *argv, "--seed", "5")[1]
        c = run(capsys, *argv)[1]
        assert a == b
        assert a != c
