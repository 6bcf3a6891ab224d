"""Replication-study orchestration and performance summaries."""

import math

import numpy as np
import pandas as pd
import pytest

from gmethods.longdata import COMPARISONS, EstimandId
from gmethods.oracle import TrueEffects
from gmethods.study import (
    InsufficientReplications,
    PerformanceReport,
    ReplicationTable,
    StudyError,
    compare_report,
    performance,
    run_study,
)

_COLS = ["scenario", "replication", "method", "comparison", "horizon",
         "estimate", "status"]


def _table(rows):
    return ReplicationTable(pd.DataFrame(rows, columns=_COLS))


def _truth(values, horizon=5):
    """TrueEffects carrying just the contrasts the test needs."""
    return TrueEffects(horizon=horizon, arm_means={}, contrasts=dict(values),
                       mc_se={})


def test_run_study_one_replication_yields_thirty_rows():
    tab = run_study([1], ["gformula"], n_sim=1, n=400, master_seed=7,
                    workers=1)
    assert list(tab.frame.columns) == _COLS
    assert len(tab.frame) == 30
    assert (tab.frame["status"] == "ok").all()
    assert set(tab.frame["comparison"]) == {c for c, _, _ in COMPARISONS}
    assert sorted(tab.frame["horizon"].unique()) == [1, 2, 3, 4, 5]
    assert tab.frame["estimate"].notna().all()


def test_run_study_rejects_bad_arguments():
    with pytest.raises(ValueError, match="unknown scenario"):
        run_study([12], ["iptw"], n_sim=1, n=200)
    with pytest.raises(ValueError, match="unknown method"):
        run_study([1], ["ipw"], n_sim=1, n=200)
    with pytest.raises(ValueError, match="n_sim"):
        run_study([1], ["iptw"], n_sim=0, n=200)
    with pytest.raises(ValueError, match="workers"):
        run_study([1], ["iptw"], n_sim=1, n=200, workers=0)


def test_run_study_deterministic_and_worker_invariant():
    args = dict(scenarios=[1, 3], methods=["iptw", "gformula"], n_sim=2,
                n=400, master_seed=11)
    seq = run_study(workers=1, **args)
    again = run_study(workers=1, **args)
    par = run_study(workers=2, **args)
    assert seq.frame.equals(again.frame)
    assert seq.frame.equals(par.frame)
    assert len(seq.frame) == 2 * 2 * 2 * 30


def test_run_study_records_failures_and_continues():
    # Scenario 2 makes treatment A rare, so at n=70 some replications lack
    # whole treatment combinations and the weight fits fail.  Seed 3 gives
    # two clean replications and four distinct failures.
    tab = run_study([2], ["iptw"], n_sim=6, n=70, master_seed=3, workers=1)
    assert len(tab.frame) == 6 * 30
    failed = tab.frame[tab.frame["status"] != "ok"]
    assert len(tab.successes()) == 60
    assert failed["estimate"].isna().all()
    kinds = {s.split(":")[0] for s in failed["status"]}
    assert kinds <= {"RankDeficient", "NoConvergence", "Separation"}
    assert len(kinds) >= 2


def test_replication_table_checks_columns():
    with pytest.raises(StudyError, match="columns"):
        ReplicationTable(pd.DataFrame({"scenario": [1]}))


def test_performance_two_point_cell():
    rows = [(1, r, "iptw", "A-0", 1, est, "ok")
            for r, est in enumerate([0.9, 1.1])]
    rep = performance(_table(rows), _truth({EstimandId("A-0", 1): 1.0}))
    row = rep.frame.iloc[0]
    assert row["n_effective"] == 2
    assert row["bias"] == pytest.approx(0.0, abs=1e-15)
    assert row["empse"] == pytest.approx(math.sqrt(0.02), rel=1e-12)
    assert row["bias_mcse"] == pytest.approx(math.sqrt(0.02) / math.sqrt(2),
                                             rel=1e-12)
    assert row["empse_mcse"] == pytest.approx(0.1, rel=1e-12)


def test_performance_constant_offset_is_pure_bias():
    rows = [(1, r, "gest", "AB-B", 3, 1.2, "ok") for r in range(5)]
    rep = performance(_table(rows), _truth({EstimandId("AB-B", 3): 1.0}))
    row = rep.frame.iloc[0]
    assert row["bias"] == pytest.approx(0.2, rel=1e-12)
    assert row["empse"] == 0.0
    assert row["n_effective"] == 5


def test_performance_ignores_failed_rows_and_row_order():
    rows = [(1, 0, "iptw", "A-0", 1, 0.9, "ok"),
            (1, 1, "iptw", "A-0", 1, float("nan"), "Separation: diverged"),
            (1, 2, "iptw", "A-0", 1, 1.1, "ok"),
            (1, 3, "iptw", "A-0", 1, 1.0, "ok")]
    truth = _truth({EstimandId("A-0", 1): 1.0})
    rep = performance(_table(rows), truth)
    assert rep.frame.iloc[0]["n_effective"] == 3
    shuffled = _table([rows[i] for i in (2, 0, 3, 1)])
    assert performance(shuffled, truth).frame.equals(rep.frame)


def test_performance_requires_two_successes_per_cell():
    rows = [(1, 0, "iptw", "A-0", 1, 0.9, "ok"),
            (1, 1, "iptw", "A-0", 1, float("nan"), "Separation: diverged")]
    with pytest.raises(InsufficientReplications, match="1 successful"):
        performance(_table(rows), _truth({EstimandId("A-0", 1): 1.0}))


def test_performance_single_truth_needs_single_scenario():
    rows = [(1, 0, "iptw", "A-0", 1, 1.0, "ok"),
            (2, 0, "iptw", "A-0", 1, 1.0, "ok")]
    with pytest.raises(StudyError, match="mapping"):
        performance(_table(rows), _truth({EstimandId("A-0", 1): 1.0}))


def test_performance_accepts_truth_mapping():
    rows = [(s, r, "iptw", "A-0", 1, s + 0.1 * r, "ok")
            for s in (1, 2) for r in range(2)]
    truth = {s: _truth({EstimandId("A-0", 1): float(s)}) for s in (1, 2)}
    rep = performance(_table(rows), truth)
    assert len(rep.frame) == 2
    assert rep.frame["bias"].to_numpy() == pytest.approx([0.05, 0.05])


def _synthetic_report():
    rows = []
    # Method "a" has the smaller EmpSE everywhere and grows with horizon;
    # method "b" dips at horizon 3 and carries one flagged bias.
    empse_b = {1: 0.30, 2: 0.35, 3: 0.20}
    for h in (1, 2, 3):
        rows.append((1, "a", "A-0", h, 50, 1.0, 0.001, 0.01, 0.10 * h, 0.01))
        bias = 0.5 if h == 2 else 0.001
        rows.append((1, "b", "A-0", h, 50, 1.0, bias, 0.01, empse_b[h], 0.03))
    cols = ["scenario", "method", "comparison", "horizon", "n_effective",
            "mean", "bias", "bias_mcse", "empse", "empse_mcse"]
    return PerformanceReport(pd.DataFrame(rows, columns=cols))


def test_compare_report_ranks_growth_and_flags():
    cmp = compare_report(_synthetic_report())
    ranks = cmp.empse_rank.set_index(["horizon", "method"])["rank"]
    assert ranks.loc[(1, "a")] == 1 and ranks.loc[(1, "b")] == 2
    assert ranks.loc[(3, "a")] == 2 and ranks.loc[(3, "b")] == 1

    growth = cmp.empse_growth.set_index("method")
    assert bool(growth.loc["a", "monotone"]) is True
    assert bool(growth.loc["b", "monotone"]) is False
    assert growth.loc["b", "increases"] == 1 and growth.loc["b", "steps"] == 2

    flags = cmp.bias_flags.set_index(["method", "horizon"])["flagged"]
    assert bool(flags.loc[("b", 2)]) is True
    assert not flags.drop(index=("b", 2)).any()


def test_compare_report_needs_two_methods():
    rep = _synthetic_report()
    solo = PerformanceReport(rep.frame[rep.frame["method"] == "a"])
    with pytest.raises(ValueError, match="two methods"):
        compare_report(solo)
