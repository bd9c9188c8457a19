import json
from pathlib import Path

import jsonschema
import pytest

from gl2harmonic.cli import (
    SCHEMA_VERSION,
    SUITES,
    Case,
    ConfigError,
    Constant,
    Report,
    ResourceBudgetError,
    RunConfig,
    export,
    load_config,
    main,
    parse_config_text,
    read_report,
    report_csv_tables,
    report_json,
    run_suite,
)

ROOT = Path(__file__).resolve().parents[1]
SCHEMA = json.loads((ROOT / "docs" / "report.schema.json").read_text())


@pytest.fixture(scope="module")
def specfun_report():
    return run_suite(RunConfig.build("specfun-selftest"))


def _synthetic(passed=True):
    rep = Report("kl-bispectral", RunConfig.build("kl-bispectral").effective())
    rep.cases.append(Case("a", {"x": 0.2, "z": 1 + 2j}, {"r": 1e-17, "bad": float("nan")}, {"r": 1e-8}, True))
    rep.cases.append(Case("b", {"x": 0.3}, {"r": float("inf"), "v": [1.0, 2.0]}, {"r": 1e-8}, passed))
    rep.constants.append(Constant("D_sign", -1, 1, "sign"))
    rep.refinement.append({"case": "a", "coarse": 1e-3, "fine": 1e-6, "ratio": 1000.0})
    return rep


def test_parse_config_text():
    raw = parse_config_text("suite = parseval  # trailing\n\n# comment\nparseval.n_tau = 64\n")
    assert raw == {"suite": "parseval", "parseval.n_tau": "64"}
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign\n")
    with pytest.raises(ConfigError):
        parse_config_text("a = 1\na = 2\n")


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig.build("no-such-suite")
    with pytest.raises(ConfigError):
        RunConfig.build("parseval", {"opcalc.n_grid": "8"})
    with pytest.raises(ConfigError):
        RunConfig.build("parseval", {"parseval.n_tau": "3"})
    with pytest.raises(ConfigError):
        RunConfig.build("parseval", {"parseval.n_tau": "many"})
    with pytest.raises(ConfigError):
        RunConfig.build("opcalc-verify", {"opcalc.points": "1 2 3"})
    with pytest.raises(ConfigError):
        RunConfig.build("comp-series", {"comp.convention": "other"})
    with pytest.raises(ConfigError):
        RunConfig.build("parseval", {"cache": "maybe"})
    cfg = RunConfig.build("opcalc-verify", {"opcalc.points": "0.3 0 0 -0.2 0 1", "cache": "yes"})
    assert cfg["opcalc.points"] == [(0.3, 0.0, 0, -0.2, 0.0, 1)] and cfg["cache"] is True


def test_effective_config_round_trips(tmp_path):
    for suite in SUITES:
        cfg = RunConfig.build(suite)
        path = tmp_path / f"{suite}.conf"
        path.write_text(cfg.to_text())
        again = load_config(str(path))
        assert again.values == cfg.values and again.effective() == cfg.effective()


def test_shipped_configs_match_defaults():
    for suite in SUITES:
        cfg = load_config(str(ROOT / "configs" / f"{suite}.conf"))
        assert cfg.values == RunConfig.build(suite).values


def test_load_config_suite_conflicts(tmp_path):
    path = tmp_path / "c.conf"
    path.write_text("suite = parseval\n")
    with pytest.raises(ConfigError):
        load_config(str(path), "kl-bispectral")
    with pytest.raises(ConfigError):
        load_config(None)
    assert load_config(str(path), overrides={"parseval.n_tau": "32"})["parseval.n_tau"] == 32


def test_budget_cap():
    with pytest.raises(ResourceBudgetError):
        run_suite(RunConfig.build("specfun-selftest", {"max_evaluations": "10"}))


def test_specfun_suite(specfun_report):
    rep = specfun_report
    assert rep.passed and len(rep.cases) >= 5
    assert rep.wall_clock < 10
    assert rep.config["suite"] == "specfun-selftest"


def test_export_is_byte_stable(tmp_path, specfun_report):
    rep = _synthetic()
    for fmt in ("json", "csv"):
        a = [Path(p).read_bytes() for p in export(rep, fmt, str(tmp_path / "a"))]
        b = [Path(p).read_bytes() for p in export(rep, fmt, str(tmp_path / "b"))]
        assert a == b
    assert report_json(specfun_report) == report_json(specfun_report)


def test_json_round_trip_and_schema(tmp_path, specfun_report):
    for rep in (_synthetic(), specfun_report):
        (path,) = export(rep, "json", str(tmp_path))
        data = json.loads(Path(path).read_text())
        jsonschema.validate(data, SCHEMA)
        assert data["schema"] == SCHEMA_VERSION
        back = read_report(path)
        assert report_json(back) == Path(path).read_text()
    bad = json.loads(Path(path).read_text())
    bad["schema"] = "other/0"
    with pytest.raises(ValueError):
        Report.from_dict(bad)


def test_csv_row_counts():
    rep = _synthetic()
    tables = report_csv_tables(rep)
    assert len(tables["cases"].splitlines()) == 1 + len(rep.cases)
    assert len(tables["constants"].splitlines()) == 1 + len(rep.constants)
    assert len(tables["refinement"].splitlines()) == 1 + len(rep.refinement)
    header = tables["cases"].splitlines()[0].split(",")
    assert header[:2] == ["name", "passed"] and "metrics.r" in header


def test_report_verdict():
    assert _synthetic().passed
    assert not _synthetic(passed=False).passed
    assert not Report("parseval", {}).passed
    assert "FAIL b" in _synthetic(passed=False).summary()


def test_main_exit_codes(tmp_path, capsys):
    assert main(["list"]) == 0
    assert capsys.readouterr().out.split() == list(SUITES)
    assert main(["config", "--suite", "kl-bispectral"]) == 0
    assert "kl.taus = 0.5,1,2" in capsys.readouterr().out
    assert main(["run", "--suite", "specfun-selftest", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "specfun-selftest.json").exists()
    assert main(["run", "--suite", "specfun-selftest", "--set", "max_evaluations=10"]) == 2
    assert main(["run", "--suite", "specfun-selftest", "--set", "nokey=1"]) == 2
    assert main(["run", "--suite", "specfun-selftest", "--set", "noequals"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.conf"), "--out", str(tmp_path)]) == 3
    with pytest.raises(SystemExit):
        main(["run", "--suite", "unknown"])
    (failing,) = export(_synthetic(passed=False), "json", str(tmp_path / "f"))
    assert main(["export", "--report", failing, "--format", "csv", "--out", str(tmp_path / "csv")]) == 1
    assert (tmp_path / "csv" / "kl-bispectral_cases.csv").exists()
    assert main(["export", "--report", str(tmp_path / "specfun-selftest.json"), "--format", "json",
                 "--out", str(tmp_path / "j")]) == 0
    assert (tmp_path / "j" / "specfun-selftest.json").read_bytes() == (tmp_path / "specfun-selftest.json").read_bytes()


def test_parallel_and_serial_reports_agree():
    base = {"comp.s_q2": "0.1,0.3", "comp.s_q3": "0.3,0.7", "comp.n_q2": "64", "comp.n_q3": "12",
            "comp.equator_levels": "16,32,64"}
    serial = run_suite(RunConfig.build("comp-series", {**base, "workers": "1"}))
    parallel = run_suite(RunConfig.build("comp-series", {**base, "workers": "2"}))
    a, b = serial.as_dict(), parallel.as_dict()
    for d in (a, b):
        d.pop("wall_clock")
        d["config"].pop("workers")
    assert a == b
