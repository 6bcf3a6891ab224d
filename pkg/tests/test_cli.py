"""Command-line parsing, CSV emission, and subcommand behavior."""

import json
import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd
import pytest

from gmethods.cli import (
    TypeMismatch,
    UnknownKey,
    emit_csv,
    main,
    parse_config,
    write_bias_svg,
)
from gmethods.longdata import load_long_csv
from gmethods.oracle import reference_truth
from gmethods.study import PerformanceReport


def test_defaults_match_documented_scale():
    cfg = parse_config(["study"])
    assert cfg.scenario == tuple(range(1, 10))
    assert cfg.n == 10_000
    assert cfg.nsim == 200
    assert cfg.rct_n == 1_000_000
    assert cfg.method == ("iptw", "censor", "seqtrial", "gformula", "gest")
    assert cfg.truncate is None


def test_flags_override_file_override_defaults(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[study]\nn = 5000\nnsim = 7\n")
    cfg = parse_config(["study", "--config", str(ini)])
    assert cfg.n == 5000 and cfg.nsim == 7
    cfg = parse_config(["study", "--config", str(ini), "--n", "2500"])
    assert cfg.n == 2500 and cfg.nsim == 7


def test_unknown_config_key_and_section_rejected(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[study]\nbogus = 1\n")
    with pytest.raises(UnknownKey, match="bogus"):
        parse_config(["study", "--config", str(ini)])
    ini.write_text("[nonsense]\nn = 5\n")
    with pytest.raises(UnknownKey, match="nonsense"):
        parse_config(["study", "--config", str(ini)])


def test_unknown_method_and_scenario_named():
    with pytest.raises(UnknownKey) as err:
        parse_config(["study", "--method", "bogus"])
    for name in ("iptw", "censor", "seqtrial", "gformula", "gest"):
        assert name in str(err.value)
    with pytest.raises(UnknownKey, match="1..9"):
        parse_config(["study", "--scenario", "12"])


def test_scenario_ranges_and_type_errors():
    assert parse_config(["study", "--scenario", "2..4,9"]).scenario == (2, 3, 4, 9)
    assert parse_config(["truth", "--scenario", "7"]).scenario == (7,)
    with pytest.raises(TypeMismatch, match="n expects an integer"):
        parse_config(["study", "--n", "abc"])
    with pytest.raises(TypeMismatch, match="backwards"):
        parse_config(["study", "--scenario", "5..2"])


def test_truncate_forms():
    assert parse_config(["weights", "--data", "x"]).truncate is None
    bare = parse_config(["weights", "--data", "x", "--truncate"])
    assert bare.truncate == (10.0, 90.0)
    custom = parse_config(["weights", "--data", "x", "--truncate", "5,95"])
    assert custom.truncate == (5.0, 95.0)
    with pytest.raises(TypeMismatch):
        parse_config(["weights", "--data", "x", "--truncate", "95,5"])
    with pytest.raises(TypeMismatch):
        parse_config(["weights", "--data", "x", "--truncate", "wide"])


def test_simulate_then_estimate_round_trip(tmp_path):
    data = tmp_path / "d.csv"
    out = tmp_path / "e.csv"
    assert main(["simulate", "--scenario", "1", "--n", "250", "--seed", "5",
                 "--out", str(data)]) == 0
    ds = load_long_csv(data)
    assert ds.n == 250 and ds.horizon == 5

    assert main(["estimate", "--data", str(data), "--method", "gformula",
                 "--out", str(out)]) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["method", "comparison", "horizon",
                                   "estimate"]
    assert len(frame) == 30
    assert (frame["method"] == "gformula").all()


def test_estimate_bootstrap_adds_se(tmp_path):
    data = tmp_path / "d.csv"
    out = tmp_path / "e.csv"
    main(["simulate", "--scenario", "1", "--n", "200", "--seed", "8",
          "--out", str(data)])
    assert main(["estimate", "--data", str(data), "--method", "iptw",
                 "--bootstrap", "50", "--seed", "3", "--out", str(out)]) == 0
    frame = pd.read_csv(out)
    assert "se" in frame.columns
    assert (frame["se"] > 0).all()


def test_estimate_failure_is_machine_readable(tmp_path, capsys):
    # Eight untreated people cannot identify any treatment model.
    data = tmp_path / "flat.csv"
    rows = ["id,time,a,b,l,y"]
    rng = np.random.default_rng(0)
    for i in range(8):
        for t in range(6):
            rows.append(f"{i},{t},0,0,{rng.normal():.4f},{rng.normal():.4f}")
    data.write_text("\n".join(rows) + "\n")
    assert main(["estimate", "--data", str(data), "--method", "iptw"]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "Separation"


def test_weights_subcommand_reports_diagnostics(tmp_path, capsys):
    data = tmp_path / "d.csv"
    main(["simulate", "--scenario", "1", "--n", "400", "--seed", "2",
          "--out", str(data)])
    assert main(["weights", "--data", str(data)]) == 0
    frame = pd.read_csv(pd.io.common.StringIO(capsys.readouterr().out))
    assert list(frame.columns) == ["time", "mean_w", "max_w", "ess"]
    assert len(frame) == 5
    assert frame["mean_w"].to_numpy() == pytest.approx(1.0, abs=0.15)


def test_truth_closed_form_matches_reference(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["truth", "--scenario", "1", "--rct-n", "0",
                 "--out", str(out)]) == 0
    frame = pd.read_csv(out).set_index(["comparison", "horizon"])
    ref = reference_truth(1)
    for key, val in ref.items():
        got = frame.loc[(key.comparison, key.horizon), "value"]
        # Reference entries are rounded to two decimals and carry their own
        # Monte Carlo noise, hence the 0.01 window.
        assert got == pytest.approx(val, abs=0.01)
    assert (frame["mc_se"] == 0).all()


def test_emit_csv_round_trips_and_sorts(tmp_path):
    cols = ["scenario", "method", "comparison", "horizon", "n_effective",
            "mean", "bias", "bias_mcse", "empse", "empse_mcse"]
    rows = [(1, "b", "A-0", 2, 50, 1.0, 1 / 3, 0.01, 0.123456789012, 0.01),
            (1, "a", "A-0", 1, 50, 1.0, -1 / 7, 0.01, 0.2, 0.01)]
    report = PerformanceReport(pd.DataFrame(rows, columns=cols))
    path = tmp_path / "p.csv"
    emit_csv(report, path)
    back = pd.read_csv(path)
    assert list(back["method"]) == ["a", "b"]  # sorted on key columns
    assert back["bias"].to_numpy() == pytest.approx([-1 / 7, 1 / 3],
                                                    abs=1e-10)

    empty = PerformanceReport(pd.DataFrame(columns=cols))
    emit_csv(empty, path)
    assert path.read_text().strip() == ",".join(cols)


def test_study_is_byte_deterministic(tmp_path):
    args = ["study", "--scenario", "1", "--method", "gformula", "--nsim",
            "1", "--n", "300", "--seed", "4"]
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(first)]) == 0
    assert main(args + ["--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    assert len(pd.read_csv(first)) == 30


def test_study_failures_set_exit_code(tmp_path, capsys):
    out = tmp_path / "s.csv"
    code = main(["study", "--scenario", "2", "--method", "iptw", "--nsim",
                 "2", "--n", "70", "--seed", "3", "--out", str(out)])
    assert code == 1
    summary = json.loads(capsys.readouterr().err)
    assert summary["error"] == "CellFailures"
    assert summary["failed_cells"] == 60
    frame = pd.read_csv(out)
    assert frame["estimate"].isna().sum() == 60


def test_reproduce_writes_panel_and_resumes(tmp_path):
    art = tmp_path / "art"
    args = ["reproduce", "--scenario", "1", "--method", "iptw,gformula",
            "--nsim", "2", "--n", "300", "--rct-n", "0", "--seed", "9",
            "--out", str(art)]
    assert main(args) == 0
    expected = ["bias_flags.csv", "bias_s1.svg", "empse_growth.csv",
                "empse_rank.csv", "performance.csv", "performance_s1.csv",
                "replications_s1.csv", "truth_s1.csv"]
    assert sorted(p.name for p in art.iterdir()) == expected
    perf = (art / "performance.csv").read_bytes()
    assert main(args) == 0  # resumes from the files already on disk
    assert (art / "performance.csv").read_bytes() == perf


def test_bias_svg_is_wellformed(tmp_path):
    cols = ["scenario", "method", "comparison", "horizon", "n_effective",
            "mean", "bias", "bias_mcse", "empse", "empse_mcse"]
    rows = [(1, m, "AB-B", h, 50, 1.0, 0.01 * h * (1 if m == "x" else -1),
             0.005, 0.1, 0.01)
            for m in ("x", "y", "z") for h in (1, 2, 3, 4, 5)]
    report = PerformanceReport(pd.DataFrame(rows, columns=cols))
    path = tmp_path / "chart.svg"
    write_bias_svg(report, 1, path)
    root = ET.fromstring(path.read_text())
    polylines = [e for e in root.iter() if e.tag.endswith("polyline")]
    assert len(polylines) == 3
    with pytest.raises(ValueError, match="no rows"):
        write_bias_svg(report, 2, tmp_path / "nope.svg")
