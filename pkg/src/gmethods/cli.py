"""Batch command line tying simulation, truth, estimation, and studies together.

The ``gmethods`` executable exposes six subcommands:

``simulate``
    Generate one scenario dataset and write it as a long-format CSV.
``truth``
    True contrast values per scenario, Monte Carlo (``--rct-n``) or closed
    form (``--rct-n 0``).
``estimate``
    Apply one estimator to a long-format CSV, optionally with bootstrap
    standard errors.
``weights``
    Stabilized-weight diagnostics for a dataset, optionally truncated.
``study``
    A replication study over scenarios x methods, written as a flat table.
``reproduce``
    The full scenario panel: replications, truth, performance summaries,
    and bias charts, written per scenario so interrupted runs resume.

Settings resolve as command-line flags over config-file values over the
documented defaults.  The config file is INI-style with one section per
subcommand, keys named like the long flags (``mc-size`` becomes
``mc_size``).  Every emitted data file is deterministic for a fixed seed:
cells are written at 12 significant digits in a fixed column order and row
sort, and no file embeds a timestamp.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .estimators import METHODS, bootstrap_se, gformula
from .longdata import all_estimands, emit_long_csv, load_long_csv
from .oracle import TrueEffects, exact_truth, simulated_truth
from .simgen import SCENARIOS, SeedSpec, generate, scenario_spec
from .study import (
    InsufficientReplications,
    PerformanceReport,
    ReplicationTable,
    compare_report,
    performance,
    run_study,
)
from .weights import fit_numerator, fit_propensity, stabilized_weights
from .weights import truncate as truncate_weights

__all__ = [
    "RunConfig",
    "ConfigError",
    "UnknownKey",
    "TypeMismatch",
    "parse_config",
    "emit_csv",
    "write_bias_svg",
    "main",
]

# Truth simulation draws from this replication slot, far above any plausible
# study size, so a shared master seed never reuses a study stream.
_TRUTH_STREAM = 1_000_000_007


class ConfigError(ValueError):
    pass


class UnknownKey(ConfigError):
    pass


class TypeMismatch(ConfigError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings for one subcommand invocation."""

    subcommand: str
    scenario: tuple[int, ...] = tuple(range(1, 10))
    n: int = 10_000
    nsim: int = 200
    seed: int = 20201
    method: tuple[str, ...] = ("iptw", "censor", "seqtrial", "gformula", "gest")
    mc_size: int | None = None
    bootstrap: int = 0
    truncate: tuple[float, float] | None = None
    rct_n: int = 1_000_000
    data: str | None = None
    out: str | None = None
    svg: str | None = None


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise TypeMismatch(f"{key} expects an integer, got {raw!r}") from None


def _parse_scenarios(key: str, raw: str) -> tuple[int, ...]:
    out: list[int] = []
    for token in raw.split(","):
        token = token.strip()
        if ".." in token:
            lo_s, _, hi_s = token.partition("..")
            lo, hi = _parse_int(key, lo_s), _parse_int(key, hi_s)
            if hi < lo:
                raise TypeMismatch(f"{key} range {token!r} runs backwards")
            out.extend(range(lo, hi + 1))
        else:
            out.append(_parse_int(key, token))
    for s in out:
        if s not in SCENARIOS:
            raise UnknownKey(f"scenario {s}; valid scenarios are 1..9")
    return tuple(out)


def _parse_methods(key: str, raw: str) -> tuple[str, ...]:
    names = tuple(token.strip() for token in raw.split(","))
    for name in names:
        if name not in METHODS:
            raise UnknownKey(
                f"method {name!r}; valid methods are {', '.join(sorted(METHODS))}"
            )
    return names


def _parse_truncate(key: str, raw: str) -> tuple[float, float]:
    parts = raw.split(",")
    try:
        lo, hi = (float(p) for p in parts)
    except ValueError:
        raise TypeMismatch(
            f"{key} expects two percentiles 'lo,hi', got {raw!r}"
        ) from None
    if not (0.0 <= lo < hi <= 100.0):
        raise TypeMismatch(f"{key} needs 0 <= lo < hi <= 100, got {raw!r}")
    return lo, hi


_CONVERTERS = {
    "scenario": _parse_scenarios,
    "method": _parse_methods,
    "truncate": _parse_truncate,
    "n": _parse_int,
    "nsim": _parse_int,
    "seed": _parse_int,
    "mc_size": _parse_int,
    "bootstrap": _parse_int,
    "rct_n": _parse_int,
    "data": lambda key, raw: raw,
    "out": lambda key, raw: raw,
    "svg": lambda key, raw: raw,
}

_SUBCOMMAND_KEYS = {
    "simulate": ("scenario", "n", "seed", "out"),
    "truth": ("scenario", "rct_n", "seed", "out"),
    "estimate": ("data", "method", "bootstrap", "mc_size", "seed", "out"),
    "weights": ("data", "truncate", "out"),
    "study": ("scenario", "method", "nsim", "n", "seed", "out", "svg"),
    "reproduce": ("scenario", "method", "nsim", "n", "seed", "rct_n", "out",
                  "svg"),
}

# Per-subcommand departures from the RunConfig defaults.
_DEFAULT_OVERRIDES: dict[str, dict] = {
    "simulate": {"scenario": (1,)},
    "estimate": {"method": ("iptw",)},
}

_HELP = {
    "scenario": "scenario ids, e.g. 3 or 1..9 or 2,5..7",
    "n": "individuals per simulated dataset",
    "nsim": "replications per scenario",
    "seed": "master seed for all random streams",
    "method": "comma-separated estimator names",
    "mc_size": "Monte Carlo sample size for the g-formula",
    "bootstrap": "bootstrap resamples for standard errors (0 = off)",
    "truncate": "truncation percentiles lo,hi (bare flag means 10,90)",
    "rct_n": "arm size for simulated truth (0 = closed form)",
    "data": "input dataset, long-format CSV",
    "out": "output path (subcommand-dependent); stdout when omitted",
    "svg": "directory for SVG charts",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmethods",
        description="Simulation and estimation of joint treatment strategies.",
    )
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name, keys in _SUBCOMMAND_KEYS.items():
        sp = subparsers.add_parser(name)
        sp.add_argument("--config", metavar="FILE",
                        help="INI config file with a [%s] section" % name)
        for key in keys:
            flag = "--" + key.replace("_", "-")
            if key == "truncate":
                sp.add_argument(flag, dest=key, nargs="?", const="10,90",
                                metavar="LO,HI", help=_HELP[key])
            else:
                sp.add_argument(flag, dest=key, metavar=key.upper(),
                                help=_HELP[key])
    return parser


def _read_config_file(path: str, subcommand: str) -> dict[str, str]:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in _SUBCOMMAND_KEYS:
            raise UnknownKey(f"config section [{section}] is not a subcommand")
    if not parser.has_section(subcommand):
        return {}
    values = dict(parser.items(subcommand))
    for key in values:
        if key not in _SUBCOMMAND_KEYS[subcommand]:
            raise UnknownKey(
                f"config key {key!r} is not valid for {subcommand!r}"
            )
    return values


def parse_config(argv, config_path: str | None = None) -> RunConfig:
    """Resolve argv (plus an optional config file) into a RunConfig.

    Flags override file values, which override defaults.  Unknown config
    keys or method/scenario names raise :class:`UnknownKey`; malformed
    values raise :class:`TypeMismatch`.
    """
    ns = _build_parser().parse_args(list(argv))
    sub = ns.subcommand
    path = ns.config or config_path
    file_values = _read_config_file(path, sub) if path else {}
    overrides = _DEFAULT_OVERRIDES.get(sub, {})
    settings: dict = {}
    for key in _SUBCOMMAND_KEYS[sub]:
        raw = getattr(ns, key)
        if raw is None:
            raw = file_values.get(key)
        if raw is None:
            if key in overrides:
                settings[key] = overrides[key]
            continue
        settings[key] = _CONVERTERS[key](key, raw)
    return RunConfig(subcommand=sub, **settings)


def _truth_frame(truths: dict[int, TrueEffects]) -> pd.DataFrame:
    rows = []
    for scenario, truth in truths.items():
        for key in all_estimands(truth.horizon):
            rows.append((scenario, key.comparison, key.horizon,
                         truth.contrasts[key], truth.mc_se[key]))
    return pd.DataFrame(
        rows, columns=["scenario", "comparison", "horizon", "value", "mc_se"]
    )


_SORT_KEYS = {
    "replications": ["scenario", "replication", "method", "comparison",
                     "horizon"],
    "performance": ["scenario", "method", "comparison", "horizon"],
    "truth": ["scenario", "comparison", "horizon"],
}


def emit_csv(obj, path) -> None:
    """Write a table, report, or truth set as a deterministic CSV.

    Columns keep their defined order, rows are sorted on the table's key
    columns, and floats carry 12 significant digits, so identical inputs
    produce byte-identical files.  ``path`` may be any pandas-writable
    target; ``None`` means stdout.
    """
    if isinstance(obj, ReplicationTable):
        frame, keys = obj.frame, _SORT_KEYS["replications"]
    elif isinstance(obj, PerformanceReport):
        frame, keys = obj.frame, _SORT_KEYS["performance"]
    elif isinstance(obj, TrueEffects):
        frame, keys = _truth_frame({0: obj}), _SORT_KEYS["truth"]
    elif isinstance(obj, dict):
        frame, keys = _truth_frame(obj), _SORT_KEYS["truth"]
    else:
        frame = obj
        keys = [c for c in _SORT_KEYS["performance"] if c in frame.columns]
    if keys:
        frame = frame.sort_values(keys, kind="mergesort", ignore_index=True)
    frame.to_csv(path if path is not None else sys.stdout, index=False,
                 float_format="%.12g")


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def write_bias_svg(report: PerformanceReport, scenario: int, path,
                   comparison: str = "AB-B") -> None:
    """Static SVG line chart: bias by horizon per method, with error bars.

    Error bars span +/- 1.96 Monte Carlo standard errors of the bias.  The
    output is plain hand-assembled SVG, deterministic byte for byte.
    """
    perf = report.frame
    sub = perf[(perf["scenario"] == scenario)
               & (perf["comparison"] == comparison)]
    if sub.empty:
        raise ValueError(f"no rows for scenario {scenario}, {comparison}")
    methods = sorted(sub["method"].unique())
    horizons = sorted(sub["horizon"].unique())
    width, height = 640, 420
    ml, mr, mt, mb = 64, 16, 34, 46
    plot_w, plot_h = width - ml - mr, height - mt - mb

    spans = np.concatenate([
        sub["bias"].to_numpy() - 1.96 * sub["bias_mcse"].to_numpy(),
        sub["bias"].to_numpy() + 1.96 * sub["bias_mcse"].to_numpy(),
        [0.0],
    ])
    lo, hi = float(spans.min()), float(spans.max())
    pad = 0.08 * ((hi - lo) or 1.0)
    bot, top = lo - pad, hi + pad
    h_lo, h_hi = horizons[0], horizons[-1]

    def sx(h: float) -> float:
        return ml + (h - h_lo + 0.5) / (h_hi - h_lo + 1.0) * plot_w

    def sy(v: float) -> float:
        return mt + (top - v) / (top - bot) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">scenario {scenario}: '
        f'bias of {comparison} by horizon</text>',
    ]
    for tick in np.linspace(bot, top, 5):
        y = sy(float(tick))
        parts.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{width - mr}" '
                     f'y2="{y:.2f}" stroke="#dddddd"/>')
        parts.append(f'<text x="{ml - 6}" y="{y + 4:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">'
                     f'{tick:.3g}</text>')
    zero = sy(0.0)
    parts.append(f'<line x1="{ml}" y1="{zero:.2f}" x2="{width - mr}" '
                 f'y2="{zero:.2f}" stroke="#888888" stroke-dasharray="4,3"/>')
    for h in horizons:
        x = sx(h)
        parts.append(f'<text x="{x:.2f}" y="{height - mb + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{h}</text>')
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" '
                 f'stroke="black"/>')
    parts.append(f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" '
                 f'y2="{height - mb}" stroke="black"/>')
    parts.append(f'<text x="{ml + plot_w / 2:.1f}" y="{height - 10}" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">horizon</text>')
    parts.append(f'<text transform="rotate(-90 14 {mt + plot_h / 2:.0f})" '
                 f'x="14" y="{mt + plot_h / 2:.0f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">bias</text>')

    spread = 6.0
    for i, m in enumerate(methods):
        color = _PALETTE[i % len(_PALETTE)]
        rows = sub[sub["method"] == m].sort_values("horizon")
        dx = (i - (len(methods) - 1) / 2.0) * spread
        pts = " ".join(f"{sx(h) + dx:.2f},{sy(b):.2f}"
                       for h, b in zip(rows["horizon"], rows["bias"]))
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        for h, b, se in zip(rows["horizon"], rows["bias"], rows["bias_mcse"]):
            x = sx(h) + dx
            y_lo, y_hi = sy(b - 1.96 * se), sy(b + 1.96 * se)
            parts.append(f'<line x1="{x:.2f}" y1="{y_lo:.2f}" x2="{x:.2f}" '
                         f'y2="{y_hi:.2f}" stroke="{color}"/>')
            for y_cap in (y_lo, y_hi):
                parts.append(f'<line x1="{x - 3:.2f}" y1="{y_cap:.2f}" '
                             f'x2="{x + 3:.2f}" y2="{y_cap:.2f}" '
                             f'stroke="{color}"/>')
            parts.append(f'<circle cx="{x:.2f}" cy="{sy(b):.2f}" r="2.5" '
                         f'fill="{color}"/>')
        ly = mt + 14 + 15 * i
        parts.append(f'<line x1="{ml + 10}" y1="{ly - 4}" x2="{ml + 34}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{ml + 40}" y="{ly}" font-family="sans-serif" '
                     f'font-size="11">{m}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def _scenario_truth(scenario: int, cfg: RunConfig) -> TrueEffects:
    spec = scenario_spec(scenario)
    if cfg.rct_n == 0:
        return exact_truth(spec)
    return simulated_truth(spec, cfg.rct_n,
                           SeedSpec(cfg.seed, scenario, _TRUTH_STREAM))


def _run_simulate(cfg: RunConfig) -> int:
    if len(cfg.scenario) != 1:
        raise ConfigError("simulate takes a single --scenario")
    s = cfg.scenario[0]
    ds = generate(scenario_spec(s), cfg.n, SeedSpec(cfg.seed, s, 0))
    emit_long_csv(ds, cfg.out if cfg.out is not None else sys.stdout)
    return 0


def _run_truth(cfg: RunConfig) -> int:
    truths = {s: _scenario_truth(s, cfg) for s in cfg.scenario}
    emit_csv(truths, cfg.out)
    return 0


def _run_estimate(cfg: RunConfig) -> int:
    if cfg.data is None:
        raise ConfigError("estimate requires --data")
    if len(cfg.method) != 1:
        raise ConfigError("estimate takes a single --method")
    name = cfg.method[0]
    ds = load_long_csv(cfg.data)
    if name == "gformula" and cfg.mc_size is not None:
        est = gformula(ds, mc_size=cfg.mc_size)
    else:
        est = METHODS[name](ds)
    keys = all_estimands(ds.horizon)
    frame = pd.DataFrame({
        "method": name,
        "comparison": [k.comparison for k in keys],
        "horizon": [k.horizon for k in keys],
        "estimate": [est.estimates[k] for k in keys],
    })
    if cfg.bootstrap:
        boot = bootstrap_se(ds, name, b=cfg.bootstrap, seed=cfg.seed)
        frame["se"] = [boot.se[k] for k in keys]
    emit_csv(frame, cfg.out)
    return 0


def _run_weights(cfg: RunConfig) -> int:
    if cfg.data is None:
        raise ConfigError("weights requires --data")
    ds = load_long_csv(cfg.data)
    ws = stabilized_weights(fit_numerator(ds), fit_propensity(ds))
    if cfg.truncate is not None:
        ws = truncate_weights(ws, *cfg.truncate)
    emit_csv(ws.diagnostics(), cfg.out)
    return 0


def _fail_summary(statuses: pd.Series) -> dict:
    bad = statuses[statuses != "ok"]
    kinds = Counter(s.split(":")[0] for s in bad)
    return {"error": "CellFailures", "failed_cells": int(len(bad)),
            "by_type": dict(sorted(kinds.items()))}


def _run_study(cfg: RunConfig) -> int:
    table = run_study(cfg.scenario, cfg.method, n_sim=cfg.nsim, n=cfg.n,
                      master_seed=cfg.seed)
    emit_csv(table, cfg.out)
    if (table.frame["status"] != "ok").any():
        print(json.dumps(_fail_summary(table.frame["status"])),
              file=sys.stderr)
        return 1
    return 0


def _run_reproduce(cfg: RunConfig) -> int:
    outdir = Path(cfg.out if cfg.out is not None else "artifacts")
    outdir.mkdir(parents=True, exist_ok=True)
    svgdir = Path(cfg.svg) if cfg.svg is not None else outdir
    svgdir.mkdir(parents=True, exist_ok=True)

    errors: dict[str, dict] = {}
    perf_frames = []
    status_parts = []
    for s in cfg.scenario:
        methods = cfg.method
        if s == 9 and "gest_const" not in methods:
            # The constant-blip variant is part of the misspecification
            # story in the effect-decay scenario.
            methods = methods + ("gest_const",)
        rep_path = outdir / f"replications_s{s}.csv"
        truth_path = outdir / f"truth_s{s}.csv"
        perf_path = outdir / f"performance_s{s}.csv"
        if rep_path.exists() and truth_path.exists() and perf_path.exists():
            status_parts.append(pd.read_csv(rep_path)["status"])
            perf_frames.append(pd.read_csv(perf_path))
        else:
            table = run_study((s,), methods, n_sim=cfg.nsim, n=cfg.n,
                              master_seed=cfg.seed)
            emit_csv(table, rep_path)
            status_parts.append(table.frame["status"])
            truth = _scenario_truth(s, cfg)
            emit_csv({s: truth}, truth_path)
            try:
                report = performance(table, {s: truth})
            except InsufficientReplications as err:
                errors[f"scenario {s}"] = {
                    "error": type(err).__name__, "message": str(err),
                }
                continue
            emit_csv(report, perf_path)
            perf_frames.append(
                pd.read_csv(perf_path))  # reread so resumes match exactly
        svg_path = svgdir / f"bias_s{s}.svg"
        if not svg_path.exists():
            write_bias_svg(PerformanceReport(perf_frames[-1]), s, svg_path)

    if perf_frames:
        combined = PerformanceReport(
            pd.concat(perf_frames, ignore_index=True))
        emit_csv(combined, outdir / "performance.csv")
        if combined.frame["method"].nunique() >= 2:
            cmp = compare_report(combined)
            emit_csv(cmp.empse_rank, outdir / "empse_rank.csv")
            emit_csv(cmp.empse_growth, outdir / "empse_growth.csv")
            emit_csv(cmp.bias_flags, outdir / "bias_flags.csv")

    statuses = pd.concat(status_parts, ignore_index=True)
    if errors or (statuses != "ok").any():
        summary = _fail_summary(statuses)
        if errors:
            summary["scenarios"] = errors
        print(json.dumps(summary), file=sys.stderr)
        return 1
    return 0


_RUNNERS = {
    "simulate": _run_simulate,
    "truth": _run_truth,
    "estimate": _run_estimate,
    "weights": _run_weights,
    "study": _run_study,
    "reproduce": _run_reproduce,
}


def main(argv=None) -> int:
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except ConfigError as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}),
              file=sys.stderr)
        return 2
    try:
        return _RUNNERS[cfg.subcommand](cfg)
    except ConfigError as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}),
              file=sys.stderr)
        return 2
    except (RuntimeError, ValueError, OSError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
