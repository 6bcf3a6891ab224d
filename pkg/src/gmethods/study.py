"""Replication studies and Monte Carlo performance measures.

``run_study`` simulates datasets under the scenario presets, applies the
requested estimators to every replication, and collects the contrast
estimates in one flat table; failures are recorded per cell and never stop
the run.  ``performance`` reduces a table against the true effects into
bias and empirical standard error with their Monte Carlo standard errors,
and ``compare_report`` turns a performance report into cross-method
orderings: standard-error ranks, growth-with-horizon checks, and bias
flags.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .estimators import METHODS
from .longdata import EstimandId, all_estimands
from .oracle import TrueEffects
from .simgen import SCENARIOS, SeedSpec, generate, scenario_spec

__all__ = [
    "ReplicationTable",
    "PerformanceReport",
    "ComparisonReport",
    "StudyError",
    "InsufficientReplications",
    "run_study",
    "performance",
    "compare_report",
]


class StudyError(RuntimeError):
    pass


class InsufficientReplications(StudyError):
    """A performance cell has fewer than two successful replications."""


_COLUMNS = ("scenario", "replication", "method", "comparison", "horizon",
            "estimate", "status")


@dataclass(frozen=True)
class ReplicationTable:
    """One row per (scenario, replication, method, estimand).

    ``status`` is ``"ok"`` for a computed estimate and an error description
    otherwise; failed cells carry NaN estimates, never fabricated numbers.
    """

    frame: pd.DataFrame

    def __post_init__(self) -> None:
        if tuple(self.frame.columns) != _COLUMNS:
            raise StudyError(f"replication table needs columns {_COLUMNS}")

    def successes(self) -> pd.DataFrame:
        return self.frame[self.frame["status"] == "ok"]


@dataclass(frozen=True)
class PerformanceReport:
    """Bias and EmpSE with Monte Carlo standard errors per estimand cell."""

    frame: pd.DataFrame


@dataclass(frozen=True)
class ComparisonReport:
    """Cross-method orderings derived from a performance report.

    empse_rank
        Per (scenario, comparison, horizon): methods ranked by empirical
        standard error, 1 = smallest.
    empse_growth
        Per (scenario, method, comparison): count of adjacent horizon steps
        on which the empirical standard error increased.
    bias_flags
        Per performance row: whether |bias| exceeds three Monte Carlo
        standard errors of the bias.
    """

    empse_rank: pd.DataFrame
    empse_growth: pd.DataFrame
    bias_flags: pd.DataFrame


def _one_replication(task) -> list:
    scenario, replication, methods, n, master_seed = task
    ds = generate(scenario_spec(scenario), n,
                  SeedSpec(master_seed, scenario, replication))
    keys = all_estimands(ds.horizon)
    rows = []
    for m in methods:
        try:
            est = METHODS[m](ds).estimates
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            status = f"{type(exc).__name__}: {exc}"
            rows.extend((scenario, replication, m, k.comparison, k.horizon,
                         np.nan, status) for k in keys)
            continue
        rows.extend((scenario, replication, m, k.comparison, k.horizon,
                     float(est[k]), "ok") for k in keys)
    return rows


def _n_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("GMETHODS_THREADS", "0")) or (
            os.cpu_count() or 1)
    if workers < 1:
        raise ValueError("workers must be positive")
    return workers


def run_study(scenarios, methods, n_sim: int = 200, n: int = 10_000,
              master_seed: int = 0, workers: int | None = None) -> ReplicationTable:
    """Simulate and estimate over scenarios x replications x methods.

    The dataset of replication ``r`` of scenario ``s`` comes from the
    dedicated seed stream ``(master_seed, s, r)``, so the table is
    reproducible cell by cell no matter how work is distributed.  The
    worker count defaults to ``GMETHODS_THREADS`` or the machine's CPU
    count.
    """
    scenarios = tuple(int(s) for s in scenarios)
    for s in scenarios:
        if s not in SCENARIOS:
            raise ValueError(f"unknown scenario {s}; choose from 1..9")
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from "
                             f"{', '.join(sorted(METHODS))}")
    if n_sim < 1:
        raise ValueError("n_sim must be at least 1")
    tasks = [(s, r, methods, n, master_seed)
             for s in scenarios for r in range(n_sim)]
    workers = _n_workers(workers)
    if workers == 1 or len(tasks) == 1:
        chunks = map(_one_replication, tasks)
        rows = [row for chunk in chunks for row in chunk]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunksize = max(1, len(tasks) // (workers * 8))
            rows = [row for chunk in pool.map(_one_replication, tasks,
                                              chunksize=chunksize)
                    for row in chunk]
    frame = pd.DataFrame(rows, columns=list(_COLUMNS))
    return ReplicationTable(frame)


def _truth_by_scenario(frame: pd.DataFrame, truth) -> dict:
    if isinstance(truth, TrueEffects):
        present = frame["scenario"].unique()
        if present.size != 1:
            raise StudyError(
                "a single TrueEffects needs a single-scenario table; "
                "pass a {scenario: TrueEffects} mapping instead"
            )
        return {int(present[0]): truth}
    return dict(truth)


def performance(table: ReplicationTable, truth) -> PerformanceReport:
    """Reduce a replication table to bias/EmpSE cells against the truth.

    ``truth`` is a :class:`~gmethods.oracle.TrueEffects` (single-scenario
    table) or a mapping from scenario to one.  Failed replications are
    dropped from each cell with the surviving count reported; a cell with
    fewer than two successes raises :class:`InsufficientReplications`.
    """
    frame = table.frame
    lookup = _truth_by_scenario(frame, truth)
    rows = []
    grouped = frame.groupby(["scenario", "method", "comparison", "horizon"],
                            sort=True)
    for (s, m, comp, h), grp in grouped:
        vals = grp.loc[grp["status"] == "ok", "estimate"].to_numpy()
        if vals.size < 2:
            raise InsufficientReplications(
                f"{m} on scenario {s}, {comp} at horizon {h}: only "
                f"{vals.size} successful replication(s)"
            )
        theta = lookup[int(s)].contrasts[EstimandId(comp, int(h))]
        mean = float(vals.mean())
        empse = float(vals.std(ddof=1))
        rows.append((int(s), m, comp, int(h), int(vals.size), mean,
                     mean - theta, empse / np.sqrt(vals.size), empse,
                     empse / np.sqrt(2.0 * (vals.size - 1))))
    cols = ["scenario", "method", "comparison", "horizon", "n_effective",
            "mean", "bias", "bias_mcse", "empse", "empse_mcse"]
    return PerformanceReport(pd.DataFrame(rows, columns=cols))


def compare_report(report: PerformanceReport) -> ComparisonReport:
    """Cross-method orderings: EmpSE ranks, EmpSE growth, bias flags."""
    perf = report.frame
    if perf["method"].nunique() < 2:
        raise ValueError("need at least two methods to compare")

    rank_rows = []
    for (s, comp, h), grp in perf.groupby(["scenario", "comparison", "horizon"],
                                          sort=True):
        order = grp.sort_values(["empse", "method"], kind="stable")
        for rank, (_, row) in enumerate(order.iterrows(), start=1):
            rank_rows.append((int(s), comp, int(h), row["method"],
                              float(row["empse"]), rank))
    empse_rank = pd.DataFrame(
        rank_rows,
        columns=["scenario", "comparison", "horizon", "method", "empse",
                 "rank"],
    )

    growth_rows = []
    for (s, m, comp), grp in perf.groupby(["scenario", "method", "comparison"],
                                          sort=True):
        es = grp.sort_values("horizon")["empse"].to_numpy()
        steps = es.size - 1
        ups = int((np.diff(es) > 0).sum())
        growth_rows.append((int(s), m, comp, ups, steps, ups == steps))
    empse_growth = pd.DataFrame(
        growth_rows,
        columns=["scenario", "method", "comparison", "increases", "steps",
                 "monotone"],
    )

    bias_flags = perf[["scenario", "method", "comparison", "horizon", "bias",
                       "bias_mcse"]].copy()
    bias_flags["flagged"] = (
        bias_flags["bias"].abs() > 3.0 * bias_flags["bias_mcse"]
    )
    return ComparisonReport(empse_rank=empse_rank, empse_growth=empse_growth,
                            bias_flags=bias_flags)
