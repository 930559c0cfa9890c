import hashlib
import subprocess
import sys

import pytest

from vdlab.cli import (
    EXIT_ASSERT,
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    KEYS,
    Assertion,
    ConfigError,
    main,
    parse_config,
)

FAST_SIM = ["--grid.n_x", "16", "--grid.n_v", "128", "--horizon", "1.0", "--stride", "8"]


def read_metrics(out):
    pairs = (line.split(" = ") for line in (out / "metrics.txt").read_text().splitlines())
    return {k: float(v) for k, v in pairs}


class TestParseConfig:
    def test_defaults(self, tmp_path):
        empty = tmp_path / "empty.cfg"
        empty.write_text("# nothing but a comment\n\n")
        cfg = parse_config(["simulate", "--config", str(empty)])
        for key in KEYS:
            assert cfg[key.name] == key.default or key.name == "assert"
        assert cfg["dt"] == 1 / 64 and cfg["grid.n_v"] == 512

    def test_negative_dt_names_key(self, tmp_path):
        with pytest.raises(ConfigError, match="dt"):
            parse_config(["simulate", "--dt", "-0.1"])
        bad = tmp_path / "bad.cfg"
        bad.write_text("horizon = 5\ndt = -0.1\n")
        with pytest.raises(ConfigError, match=r"bad\.cfg:2.*dt"):
            parse_config(["simulate", "--config", str(bad)])

    def test_unknown_key(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("grid.nv = 128\n")
        with pytest.raises(ConfigError, match="grid.nv"):
            parse_config(["simulate", "--config", str(bad)])

    def test_type_mismatch(self):
        with pytest.raises(ConfigError, match="grid.n_x"):
            parse_config(["simulate", "--grid.n_x", "thirty"])
        with pytest.raises(ConfigError, match="grid.n_x"):
            parse_config(["simulate", "--grid.n_x", "48"])

    def test_file_and_flags_agree(self, tmp_path):
        settings = {"subcommand": "simulate", "horizon": "5.0", "dt": "0.03125", "grid.n_v": "256",
                    "interaction.A": "0.5", "filter": "true"}
        cfg_file = tmp_path / "a.cfg"
        cfg_file.write_text("".join(f"{k} = {v}  # comment\n" for k, v in settings.items()))
        flags = ["simulate"] + [x for k, v in settings.items() if k != "subcommand" for x in (f"--{k}", v)]
        a = parse_config(["--config", str(cfg_file)]).resolved_text()
        b = parse_config(flags).resolved_text()
        assert a.encode() == b.encode()

    def test_flags_override_file(self, tmp_path):
        cfg_file = tmp_path / "a.cfg"
        cfg_file.write_text("subcommand = volterra\nhorizon = 5\n")
        cfg = parse_config(["--config", str(cfg_file), "--horizon", "3"])
        assert cfg.subcommand == "volterra" and cfg["horizon"] == 3.0

    def test_missing_files(self, tmp_path):
        with pytest.raises(ConfigError, match="profile.file"):
            parse_config(["stability", "--profile.kind", "tabulated", "--profile.file", str(tmp_path / "none.csv")])
        with pytest.raises(ConfigError):
            parse_config(["stability", "--profile.kind", "tabulated"])
        with pytest.raises(ConfigError):
            parse_config(["stability", "--config", str(tmp_path / "none.cfg")])

    def test_fit_window_order(self):
        with pytest.raises(ConfigError, match="fit.t_end"):
            parse_config(["volterra", "--fit.t_start", "3", "--fit.t_end", "2"])

    def test_out_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("VDL_OUT", str(tmp_path / "env"))
        assert parse_config(["stability"]).out_dir == tmp_path / "env"
        assert parse_config(["stability", "--out", str(tmp_path / "x")]).out_dir == tmp_path / "x"
        monkeypatch.delenv("VDL_OUT")
        assert str(parse_config(["stability"]).out_dir) == "vdl_out"


class TestAssertion:
    @pytest.mark.parametrize("text,value,ok", [("kappa>=0.5", 0.6, True), ("kappa>=0.5", 0.4, False),
                                               ("rate<2", 1.0, True), ("n==3", 3.0, True), ("x>1e-3", 1e-4, False)])
    def test_check(self, text, value, ok):
        a = Assertion.parse(text, "--assert")
        assert a.check({a.metric: value})[0] is ok

    def test_malformed(self):
        with pytest.raises(ConfigError):
            Assertion.parse("kappa~0.5", "--assert")

    def test_unknown_metric_fails(self):
        assert not Assertion.parse("nope>=1", "--assert").check({"kappa": 1.0})[0]


class TestDispatch:
    def test_stability_assert_passes(self, tmp_path):
        out = tmp_path / "stab"
        code = main(["stability", "--out", str(out), "--stability.k_max", "3", "--assert", "kappa>=0.5"])
        assert code == EXIT_OK
        m = read_metrics(out)
        assert m["kappa"] >= 0.5 and m["n_unstable"] == 0
        assert (out / "stability.csv").read_text().startswith("k,")

    def test_assert_failure_exit_code(self, tmp_path):
        code = main(["stability", "--out", str(tmp_path), "--stability.k_max", "2",
                     "--stability.roots", "false", "--assert", "kappa>=0.99"])
        assert code == EXIT_ASSERT

    def test_blowup_keeps_partial_csv(self, tmp_path):
        out = tmp_path / "blow"
        code = main(["simulate", "--out", str(out), "--dt", "0.5", "--epsilon", "0.5", "--interaction.A", "50"])
        assert code == EXIT_NUMERICAL
        lines = (out / "trajectory.csv").read_text().splitlines()
        assert lines[0].startswith("t,") and len(lines) >= 2
        assert "trajectory.csv" in (out / "manifest.txt").read_text()

    def test_unknown_subcommand(self, tmp_path, capsys):
        assert main(["frobnicate", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "frobnicate" in capsys.readouterr().err

    def test_bad_flag_exits_one(self):
        with pytest.raises(SystemExit) as info:
            main(["simulate", "--no-such-flag", "1"])
        assert info.value.code == EXIT_CONFIG

    def test_manifest_hashes(self, tmp_path):
        out = tmp_path / "sim"
        assert main(["simulate", "--out", str(out)] + FAST_SIM) == EXIT_OK
        entries = [line.split() for line in (out / "manifest.txt").read_text().splitlines()]
        names = {e[2] for e in entries}
        assert {"resolved_config.txt", "trajectory.csv", "metrics.txt", "final_state.bin"} <= names
        for digest, size, name in entries:
            data = (out / name).read_bytes()
            assert hashlib.sha256(data).hexdigest() == digest and len(data) == int(size)

    def test_deterministic_outputs(self, tmp_path):
        for name in ("a", "b"):
            assert main(["simulate", "--out", str(tmp_path / name), "--threads", "1"] + FAST_SIM) == EXIT_OK
        for f in ("trajectory.csv", "final_state.bin", "resolved_config.txt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_resolved_config_echoed(self, tmp_path):
        out = tmp_path / "v"
        assert main(["volterra", "--out", str(out), "--horizon", "3", "--svg", "true"]) == EXIT_OK
        text = (out / "resolved_config.txt").read_text()
        assert "subcommand = volterra" in text and "horizon = 3.0" in text
        assert (out / "mode_1.csv").exists() and (out / "mode_1.svg").exists()

    @pytest.mark.parametrize("argv,outputs", [
        (["echo", "--grid.n_x", "16", "--horizon", "8", "--stride", "2"], ["echo_trajectory.csv", "echo_peaks.csv"]),
        (["newton", "--newton.n_max", "2", "--horizon", "1"] + FAST_SIM[:4], ["newton_levels.csv"]),
        (["norms", "--norm.lambda", "0.05", "--norm.algebra_pairs", "20"] + FAST_SIM[:4], ["norms.csv"]),
        (["characteristics", "--horizon", "4", "--characteristics.samples", "4"] + FAST_SIM[:4], ["scattering.csv"]),
    ])
    def test_other_subcommands(self, tmp_path, argv, outputs):
        out = tmp_path / argv[0]
        assert main(argv + ["--out", str(out)]) == EXIT_OK
        for name in outputs:
            assert (out / name).read_text().count("\n") >= 2

    def test_console_script(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "vdlab.cli", "volterra", "--horizon", "2",
                               "--out", str(tmp_path), "--assert", "rate>0"], capture_output=True, text=True)
        assert proc.returncode == EXIT_OK, proc.stderr
        assert "rate" in proc.stdout
