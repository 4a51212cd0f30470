import numpy as np
import pytest

from conftest import MINI_CONFIG, read_rows
from soundboard_lab import cli, runner
from soundboard_lab.fdtd.solver import ImpulseResponse


def test_spec_loading_and_validation(mini):
    spec = runner.load_spec(mini)
    assert spec.damping_targets == (0.03, 0.05) and spec.seed == 7 and spec.duration == 0.12
    with pytest.raises(ValueError):
        runner.load_spec(mini, damping_targets=(0.1,))
    bad = mini.with_name("bad.toml")
    bad.write_text(MINI_CONFIG.replace('layout = "layout.toml"', 'layout = "missing.toml"'))
    with pytest.raises(FileNotFoundError):
        runner.load_spec(bad)


def test_station_filter(mini):
    layout, _ = runner.prepare(runner.load_spec(mini))
    assert len(runner.select_stations(layout, "all")) == 10
    assert runner.select_stations(layout, "four_foot:2-3") == ["four_foot_02", "four_foot_03"]
    assert runner.select_stations(layout, "eight_foot:4, four_foot_01") == ["eight_foot_04", "four_foot_01"]


def test_aging_counting_contract_and_determinism(mini, tmp_path):
    spec = runner.load_spec(mini)
    a = runner.run_aging_experiment(spec, out_dir=tmp_path / "a", jobs=1)
    assert len(list((tmp_path / "a" / "wav").glob("*.wav"))) == 20
    assert len(read_rows(a.files["metrics"])) == 20
    assert len(read_rows(a.files["difference"])) == 10
    assert len(a.statuses) == 20 and not a.partial
    report = a.files["report"].read_text()
    assert report.count("T60=") == 20 and "seed: 7" in report
    for target, cal in a.calibrations.items():
        assert abs(cal.t60 - target) <= spec.calibration_tolerance
    b = runner.run_aging_experiment(spec, out_dir=tmp_path / "b", jobs=3)
    for name in ("metrics", "difference", "manifest", "calibration"):
        assert a.files[name].read_bytes() == b.files[name].read_bytes()


def test_statics_experiment(mini, tmp_path):
    rep = runner.run_statics_experiment(runner.load_spec(mini), out_dir=tmp_path / "s")
    rows = {r["case"]: r for r in read_rows(rep.files["summary"])}
    assert set(rows) == set(runner.STATICS_CASES)
    none = rows["none"]
    assert float(none["integrated_stress_n"]) == 0 and float(none["max_outward_m"]) == 0
    assert float(rows["only_bridge8"]["net_normal_force_n"]) < 0
    assert len(read_rows(rep.files["forces"])) == 10
    shares = [float(r["share_pct"]) for r in read_rows(rep.files["breakdown"])]
    assert sum(shares) == pytest.approx(100.0, abs=0.1)
    again = runner.run_statics_experiment(runner.load_spec(mini), out_dir=tmp_path / "s2")
    assert rep.files["summary"].read_bytes() == again.files["summary"].read_bytes()


def test_single_string_schedule(tmp_path, mini):
    layout = (tmp_path / "layout.toml").read_text()
    start = layout.index('rows = """') + len('rows = """\n')
    end = layout.index('"""', start)
    one = layout[:start] + "1,eight_foot,0.04,0.30,0.55,0.0003,iron,116.5,10\n" + layout[end:]
    (tmp_path / "layout.toml").write_text(one)
    cases = {"only_bridge8": ("bridge8_bearing",)}
    rep = runner.run_statics_experiment(runner.load_spec(mini), out_dir=tmp_path / "one", cases=cases)
    assert len(read_rows(rep.files["forces"])) == 1


def test_cli_exit_codes(mini, tmp_path, capsys):
    assert cli.main(["thickness", "--config", str(mini), "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "thickness_map.csv").exists()
    assert cli.main(["simulate", "--config", str(mini), "--out", str(tmp_path / "w"),
                     "--stations", "eight_foot_01,four_foot_02", "--gamma", "0.999"]) == 0
    assert len(list((tmp_path / "w").glob("*.wav"))) == 2
    assert cli.main(["analyze", str(tmp_path / "w")]) == 0
    assert len(read_rows(tmp_path / "w" / "metrics.csv")) == 2
    assert cli.main(["statics", "--config", str(mini), "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["simulate", "--config", str(mini), "--out", str(tmp_path / "x"),
                     "--stations", "eight_foot_99"]) == 1
    assert cli.main(["analyze", str(tmp_path / "empty")]) == 1
    assert "error:" in capsys.readouterr().err


def test_cli_partial_exit_code(mini, tmp_path, monkeypatch):
    def diverging(config, ids, parallelism=1):
        return [ImpulseResponse(i, np.zeros(0), 48_000, config.gamma, status="diverged", message="step 5")
                for i in ids]

    monkeypatch.setattr(cli, "run_batch", diverging)
    code = cli.main(["simulate", "--config", str(mini), "--out", str(tmp_path / "p"), "--stations", "eight_foot_01"])
    assert code == 2
    assert read_rows(tmp_path / "p" / "metrics.csv")[0]["status"] == "diverged"
