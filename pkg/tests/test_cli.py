import csv
import io

import numpy as np
import pytest

from trackleg import cli, model


@pytest.fixture(scope="module")
def table_file(tmp_path_factory, table):
    p = tmp_path_factory.mktemp("tbl") / "table.csv"
    table.save(p)
    return str(p)


def test_parse_heights():
    assert cli.parse_height("2h", 0.08) == pytest.approx(0.16)
    assert cli.parse_height("3", 0.08) == pytest.approx(0.24)
    assert cli.parse_height("0.16m", 0.08) == 0.16
    assert cli.parse_heights(["1h,2h", "3h"], 0.1) == pytest.approx([0.1, 0.2, 0.3])
    for bad in ("x", "-1h", "0m"):
        with pytest.raises(cli.CliError) as e:
            cli.parse_height(bad, 0.08)
        assert e.value.category == "usage"
    with pytest.raises(cli.CliError):
        cli.parse_heights([], 0.08)


def test_exit_codes_are_distinct():
    assert cli.EXIT_CODES["ok"] == 0
    assert len(set(cli.EXIT_CODES.values())) == len(cli.EXIT_CODES)


def test_usage_errors(tmp_path, capsys):
    assert cli.main(["prestudy", "--heights", "--out", str(tmp_path / "t.csv")]) == cli.EXIT_CODES["usage"]
    assert "error[usage]" in capsys.readouterr().err
    assert cli.main(["bogus"]) == cli.EXIT_CODES["usage"]
    assert cli.main(["run", "--height", "1h", "--out", str(tmp_path)]) == cli.EXIT_CODES["usage"]


def test_config_and_io_errors(tmp_path, table_file):
    bad = tmp_path / "bad.json"
    bad.write_text('{"mass": {"total_mass_kg": -1}}')
    args = ["run", "--table", table_file, "--height", "1h", "--out", str(tmp_path / "o")]
    assert cli.main(args + ["--model", str(bad)]) == cli.EXIT_CODES["config"]
    bad.write_text("{not json")
    assert cli.main(args + ["--model", str(bad)]) == cli.EXIT_CODES["config"]
    assert cli.main(args + ["--model", str(tmp_path / "missing.json")]) == cli.EXIT_CODES["io"]


def test_table_errors(tmp_path, table_file):
    broken = tmp_path / "broken.csv"
    broken.write_text("height,E\n1,2\n")
    out = str(tmp_path / "o")
    assert cli.main(["run", "--table", str(broken), "--height", "1h", "--out", out]) == cli.EXIT_CODES["table-format"]
    assert cli.main(["run", "--table", table_file, "--height", "4h", "--out", out]) == cli.EXIT_CODES["table-range"]
    assert cli.main(["run", "--baseline", "--height", "4h", "--out", out]) == cli.EXIT_CODES["negotiation-failed"]


def test_run_writes_timeseries_and_plot(tmp_path, table_file, robot):
    out = tmp_path / "run"
    rc = cli.main(["run", "--table", table_file, "--height", "1h", "--out", str(out), "--plot",
                   "--normalized-time"])
    assert rc == 0
    with open(out / "timeseries.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert tuple(rows[0]) == cli.TIMESERIES_COLUMNS + ("t_norm",)
    t = np.array([float(r["t_s"]) for r in rows])
    np.testing.assert_allclose(np.diff(t), robot.cfg.dt_s, atol=1e-9)
    assert [int(r["tick"]) for r in rows] == list(range(1, len(rows) + 1))
    assert float(rows[-1]["t_norm"]) == 1.0
    assert {r["mode"] for r in rows} == {"rolling"}
    E = np.array([float(r["E_RW_J"]) for r in rows])
    assert np.all(np.diff(E) >= 0)
    svg = (out / "energy.svg").read_text()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_sweep_reports_uncovered_height(tmp_path, table_file):
    out = tmp_path / "sweep"
    buf = io.StringIO()
    with pytest.raises(cli.CliError) as e:
        cli.cmd_sweep("reference", table_file, ["1h", "4h"], str(out), stream=buf)
    assert e.value.category == "negotiation-failed"
    with open(out / "summary.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert tuple(rows[0]) == cli.SUMMARY_COLUMNS
    assert rows[0]["outcome"] == "completed-rolling"
    assert rows[1]["outcome"] == "failed" and "rolling-infeasible" in rows[1]["reason"]
    assert (out / "height_0.0800m" / "timeseries.csv").exists()
    assert (out / "height_0.3200m" / "baseline.csv").exists()


def test_prestudy_command(tmp_path, h):
    out = tmp_path / "t.csv"
    buf = io.StringIO()
    table = cli.cmd_prestudy("reference", ["1h"], str(out), stream=buf)
    assert out.read_text().splitlines()[0] == "height_m,E_Cw_J,E_Cr_J"
    assert table.heights == (pytest.approx(h),)
    assert "E_Cw" in buf.getvalue()


def test_model_round_trip(tmp_path):
    cfg = model.reference_model()
    p = tmp_path / "m.json"
    model.save_model(cfg, p)
    assert model.load_model(p) == cfg
    assert model.ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(model.ConfigError):
        model.ModelConfig.from_dict({"nope": 1})
