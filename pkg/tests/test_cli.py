import json
import math
from importlib import resources

import pytest

from fbquantile import figures
from fbquantile.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_rows_and_manifest(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    code, _, _ = run(capsys, "simulate", "--protocol", "mbf", "--m", "11", "--alpha", "0.3", "--K", "1", "--n", "2000",
                     "--dist", "uniform:0,1", "--seed", "7", "--out", str(out))
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,theta,aggregate,z" and len(lines) == 2002
    manifest = json.loads((tmp_path / "traj.csv.manifest.json").read_text())
    assert manifest["master_seed"] == 7 and manifest["config"]["alpha"] == "3/10"
    assert manifest["outputs"][0]["path"] == str(out)


def test_alpha_out_of_range(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--alpha", "1.2", "--out", str(tmp_path / "x.csv"))
    assert code == 2
    assert "0 < alpha* < 1" in err and len(err.strip().splitlines()) == 1


def test_decaying_gain_recorded(tmp_path, capsys):
    out = tmp_path / "o.csv"
    code, _, _ = run(capsys, "simulate", "--protocol", "obf", "--gain", "decaying", "--K", "1", "--m", "101",
                     "--n", "50", "--out", str(out))
    assert code == 0
    manifest = json.loads((tmp_path / "o.csv.manifest.json").read_text())
    assert manifest["derived"]["gain_value"] == pytest.approx(1 / math.sqrt(101))


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"protocol": "obf", "m": 21, "alpha": "1/4", "horizon": 30}))
    out = tmp_path / "t.csv"
    assert run(capsys, "simulate", "--config", str(cfg), "--m", "7", "--out", str(out))[0] == 0
    manifest = json.loads((tmp_path / "t.csv.manifest.json").read_text())
    assert manifest["config"]["m"] == 7 and manifest["config"]["protocol"] == "obf"


def test_missing_config_is_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--config", str(tmp_path / "nope.json"))
    assert code == 3 and err.startswith("error:")


def test_replay_byte_identical(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    run(capsys, "simulate", "--protocol", "obf", "--eps", "1/10", "--n", "300", "--seed", "4", "--out", str(out))
    original = out.read_bytes()
    out.unlink()
    code, stdout, _ = run(capsys, "replay", str(tmp_path / "traj.csv.manifest.json"))
    assert code == 0 and "match" in stdout
    assert out.read_bytes() == original


def test_predict_mbf(capsys):
    code, out, _ = run(capsys, "predict", "--protocol", "mbf", "--m", "11", "--alpha", "0.3", "--K", "1")
    rec = json.loads(out)[0]
    assert code == 0 and rec["scaled_variance"] == pytest.approx(0.019091, abs=1e-6)
    for key in ("protocol", "m", "alpha", "eps", "gain", "scaled_variance", "mse_rate", "stability_margin"):
        assert key in rec


def test_predict_obf_optimal_ratio(capsys):
    _, out, _ = run(capsys, "predict", "--protocol", "obf", "--gain", "decaying", "--K", "optimal", "--m", "1001")
    assert json.loads(out)[0]["limit_ratio_to_centralized"] == pytest.approx(math.pi / 2, abs=1e-10)


def test_predict_qbf_kappa(capsys):
    _, out, _ = run(capsys, "predict", "--protocol", "qbf", "--quantizer", "uniform:8", "--m", "4000")
    assert "kappa" in json.loads(out)[0]


def test_predict_unstable_is_data(capsys):
    code, out, err = run(capsys, "predict", "--protocol", "mbf", "--K", "0.4")
    rec = json.loads(out)[0]
    assert code == 0 and rec["stability_ok"] is False and rec["scaled_variance"] is None
    assert "warning" in err


def test_shipped_plans_validate():
    names = sorted(p.name for p in resources.files("fbquantile").joinpath("plans").iterdir() if p.name.endswith(".json"))
    assert names == ["eps_axis_mbf.json", "m_axis_mbf.json", "m_axis_obf.json"]


def test_sweep_and_replay(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"base": {"protocol": "obf", "horizon": 200}, "L": 6, "window": [150, 200],
                                "axis": {"name": "m", "values": [5, 9]}, "master_seed": 3}))
    out = tmp_path / "s.csv"
    assert run(capsys, "sweep", str(plan), "--out", str(out))[0] == 0
    original = out.read_bytes()
    replay_dir = tmp_path / "again"
    code, stdout, _ = run(capsys, "replay", str(tmp_path / "s.csv.manifest.json"), "--outdir", str(replay_dir),
                          "--workers", "2")
    assert code == 0 and (replay_dir / "s.csv").read_bytes() == original


def test_sweep_bad_plan(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"base": {"horizon": 100}, "window": [50, 500]}))
    assert run(capsys, "sweep", str(plan))[0] == 2


def _series(path):
    rows = [line.split() for line in path.read_text().splitlines() if not line.startswith("#")]
    return [[float(v) for v in row] for row in rows]


def test_figure_3b(tmp_path, capsys):
    assert run(capsys, "figure", "--id", "3b", "--outdir", str(tmp_path))[0] == 0
    for name in ("3b_V_m.dat", "3b_V_1.dat"):
        vals = [v for _, v in _series(tmp_path / name)]
        assert all(b > a for a, b in zip(vals, vals[1:]))
        assert vals[-1] > 50 * vals[0]
    assert (tmp_path / "README_3b.txt").exists()


def test_figure_2a(tmp_path, capsys):
    run(capsys, "figure", "--id", "2a", "--outdir", str(tmp_path))
    paths = sorted(tmp_path.glob("2a_*.dat"))
    assert len(paths) >= 3
    for p in paths:
        rows = _series(p)
        assert len(rows) == 2001 and abs(rows[-1][1] - 0.3) < 0.05


def test_figure_3a(tmp_path, capsys):
    run(capsys, "figure", "--id", "3a", "--outdir", str(tmp_path))
    vals = [v for _, v in _series(tmp_path / "3a_kappa_exact.dat")]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert all(1.0 <= v <= math.pi / 2 + 0.05 for v in vals)


def test_unknown_figure():
    with pytest.raises(ValueError):
        figures.figure_series("9z")
    with pytest.raises(SystemExit):
        main(["figure", "--id", "9z"])
