"""Propensity scores and inverse-probability weights for combo treatments.

The treatment-combination propensity at each time is fit by multinomial
regression: one model for the first treatment time (baseline covariates
only), and one model pooled over later times whose regressors are the three
lagged-combination indicators, the baseline outcome, the previous outcome,
and the current confounder values.  The numerator ("stabilizing") models use
the same structure with all time-varying covariates removed.

Stabilized treatment weights multiply numerator/denominator probability
ratios of the observed combination over all times up to t.  Censoring
weights handle loss to follow-up with two conventions: a stabilized
cumulative product over past times, and an unstabilized forward product over
future times whose numerator is the indicator of reaching the horizon
uncensored.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd

from .glm import DesignMatrix, FitResult, Separation, fit_logistic, fit_multinomial
from .longdata import STRATEGY_LABELS, LongitudinalDataset

__all__ = [
    "PropensityScores",
    "WeightSeries",
    "WeightError",
    "ZeroDenominator",
    "AllCensored",
    "fit_propensity",
    "fit_numerator",
    "stabilized_weights",
    "censoring_weights",
    "truncate",
]


class WeightError(RuntimeError):
    pass


class ZeroDenominator(WeightError):
    pass


class AllCensored(WeightError):
    pass


@dataclass(frozen=True)
class PropensityScores:
    """Predicted combination probabilities per person-time.

    ``probs[i, t]`` is the 4-vector of category probabilities (NaN where the
    person-time is unobserved) and ``observed[i, t]`` the probability of the
    combination actually taken.
    """

    probs: np.ndarray
    observed: np.ndarray
    baseline_fit: FitResult | None = None
    pooled_fit: FitResult | None = None

    def __post_init__(self) -> None:
        ok = np.isfinite(self.probs).all(axis=2)
        sums = self.probs.sum(axis=2)[ok]
        if sums.size and np.abs(sums - 1.0).max() > 1e-10:
            raise WeightError("combination probabilities do not sum to one")

    @property
    def nonreference(self) -> np.ndarray:
        """Probabilities of the three non-reference combinations, (n, T, 3)."""
        return self.probs[:, :, 1:]


def _trial_dummies(trial: np.ndarray | None, rows: np.ndarray) -> dict[str, np.ndarray]:
    """Indicator columns for each non-reference trial label among `rows`.

    Labels contributing no rows to this particular model are skipped, since
    their columns would be identically zero.
    """
    if trial is None:
        return {}
    labels = np.unique(trial[rows])
    return {f"trial_{k}": (trial[rows] == k).astype(float) for k in labels[1:]}


def _lag_indicator_cols(zlag: np.ndarray) -> dict[str, np.ndarray]:
    return {f"zlag_{c}": (zlag == c).astype(float) for c in (1, 2, 3)}


def _require_all_combos(resp: np.ndarray, where: str) -> None:
    # A category with zero observations drives its intercept to -inf, so the
    # multinomial likelihood has no maximum; fail fast instead of diverging.
    missing = [STRATEGY_LABELS[c] for c in range(4) if not (resp == c).any()]
    if missing:
        raise Separation(
            f"combination(s) {', '.join(missing)} never observed {where}; "
            "the treatment model cannot converge"
        )


def _fit_combo_models(
    ds: LongitudinalDataset,
    stabilizer: bool,
    trial: np.ndarray | None,
) -> PropensityScores:
    T = ds.horizon
    z = ds.z
    n = ds.n

    # A person-time enters a treatment model only when the treatment itself
    # is recorded; re-indexed stacks can end with an outcome-only slot.
    base_rows = np.flatnonzero(ds.observed(0) & (z[:, 0] >= 0))
    _require_all_combos(z[base_rows, 0], "at baseline")
    cols0: dict[str, np.ndarray] = {"const": np.ones(base_rows.size)}
    cols0["y0"] = ds.y[base_rows, 0]
    if not stabilizer:
        for k in range(ds.l.shape[2]):
            cols0[f"l{k}" if k else "l"] = ds.l[base_rows, 0, k]
    cols0.update(_trial_dummies(trial, base_rows))
    dm0 = DesignMatrix.from_columns(cols0)
    fit0 = fit_multinomial(dm0, z[base_rows, 0], n_cat=4)

    probs = np.full((n, T, 4), np.nan)
    probs[base_rows, 0] = fit0.predict_probs(dm0.x)

    fit_pool: FitResult | None = None
    if T > 1:
        ii, tt = [], []
        for t in range(1, T):
            rows = np.flatnonzero(ds.observed(t) & (z[:, t] >= 0))
            ii.append(rows)
            tt.append(np.full(rows.size, t))
        ii = np.concatenate(ii)
        tt = np.concatenate(tt)
        _require_all_combos(z[ii, tt], "after baseline")
        cols: dict[str, np.ndarray] = {"const": np.ones(ii.size)}
        cols.update(_lag_indicator_cols(z[ii, tt - 1]))
        cols["y0"] = ds.y[ii, 0]
        if not stabilizer:
            cols["ylag"] = ds.y[ii, tt - 1]
            for k in range(ds.l.shape[2]):
                cols[f"l{k}" if k else "l"] = ds.l[ii, tt, k]
        cols.update(_trial_dummies(trial, ii))
        dm = DesignMatrix.from_columns(cols)
        fit_pool = fit_multinomial(dm, z[ii, tt], n_cat=4)
        probs[ii, tt] = fit_pool.predict_probs(dm.x)

    obs = np.full((n, T), np.nan)
    seen = z[:, :T] >= 0
    idx = np.where(seen, z[:, :T], 0)
    obs[seen] = np.take_along_axis(
        probs, idx[:, :, None], axis=2
    )[:, :, 0][seen]
    return PropensityScores(probs, obs, fit0, fit_pool)


def fit_propensity(ds: LongitudinalDataset, trial: np.ndarray | None = None) -> PropensityScores:
    """Denominator (full-covariate) combination-probability models.

    When ``trial`` labels are given (one per individual of a trial-stacked
    dataset), indicator columns for each non-reference label are appended to
    both the baseline and pooled models.
    """
    return _fit_combo_models(ds, stabilizer=False, trial=trial)


def fit_numerator(ds: LongitudinalDataset, trial: np.ndarray | None = None) -> PropensityScores:
    """Numerator models: treatment history and baseline outcome only."""
    return _fit_combo_models(ds, stabilizer=True, trial=trial)


@dataclass(frozen=True)
class WeightSeries:
    """Per person-time weights; ``sw`` treatment, ``cw`` censoring."""

    sw: np.ndarray
    cw: np.ndarray

    def __post_init__(self) -> None:
        # Treatment weights are strictly positive; censoring weights may be
        # exactly zero (forward mode zeroes anyone censored early).
        sw_vals = self.sw[np.isfinite(self.sw)]
        if sw_vals.size and (sw_vals <= 0).any():
            raise WeightError("treatment weights must be positive")
        cw_vals = self.cw[np.isfinite(self.cw)]
        if cw_vals.size and (cw_vals < 0).any():
            raise WeightError("censoring weights must be nonnegative")

    @cached_property
    def combined(self) -> np.ndarray:
        return self.sw * self.cw

    def diagnostics(self) -> pd.DataFrame:
        rows = []
        w = self.combined
        for t in range(w.shape[1]):
            vals = w[:, t][np.isfinite(w[:, t])]
            if vals.size == 0:
                rows.append((t, np.nan, np.nan, 0.0))
                continue
            ess = float(vals.sum() ** 2 / np.square(vals).sum())
            rows.append((t, float(vals.mean()), float(vals.max()), ess))
        return pd.DataFrame(rows, columns=["time", "mean_w", "max_w", "ess"])


def stabilized_weights(num: PropensityScores, den: PropensityScores) -> WeightSeries:
    """Cumulative stabilized weights SW_t = prod_{j<=t} num_j / den_j."""
    if num.observed.shape != den.observed.shape:
        raise WeightError("numerator and denominator cover different person-times")
    seen = np.isfinite(den.observed)
    if (den.observed[seen] < 1e-12).any():
        raise ZeroDenominator(
            "an observed combination has predicted probability below 1e-12"
        )
    ratio = num.observed / den.observed
    sw = np.cumprod(ratio, axis=1)
    return WeightSeries(sw=sw, cw=np.ones_like(sw))


def _baseline_columns(ds: LongitudinalDataset, names, m_rows) -> dict[str, np.ndarray]:
    cols: dict[str, np.ndarray] = {}
    for name in names:
        if name == "y":
            cols["y0"] = ds.y[m_rows, 0]
        elif name == "l":
            for k in range(ds.l.shape[2]):
                cols[f"l{k}0" if k else "l0"] = ds.l[m_rows, 0, k]
        else:
            raise WeightError(f"unknown baseline covariate {name!r}")
    return cols


def censoring_weights(
    ds: LongitudinalDataset,
    baseline_covariates: tuple[str, ...] = ("l", "y"),
    mode: str = "cumulative",
    stabilize: bool = True,
) -> WeightSeries:
    """Inverse-probability-of-censoring weights.

    ``cumulative`` stabilizes by a baseline-only numerator (set
    ``stabilize=False`` for plain inverse probabilities) and multiplies over
    past times; ``forward`` multiplies inverse probabilities over future
    times with the reached-the-horizon indicator as numerator (zero weight
    for anyone censored early).
    """
    if mode not in ("cumulative", "forward"):
        raise WeightError(f"unknown censoring-weight mode {mode!r}")
    T = ds.horizon
    n = ds.n
    cw = np.full((n, T), np.nan)
    if ds.fully_observed:
        cw[:] = 1.0
        return WeightSeries(sw=np.ones_like(cw), cw=cw)

    # One factor model per step: step j predicts remaining uncensored at j+1
    # among those observed at j.  Cumulative mode conditions on the previous
    # combination; forward mode on the current one.  Times without a single
    # censoring event contribute unit factors; indicator columns that are
    # constant at a given step are dropped from that step's model.
    p_den = np.full((n, T), np.nan)
    p_num = np.full((n, T), np.nan)

    def fit_step(rows, resp, cols):
        cols = {k: v for k, v in cols.items()
                if not (k.startswith("zlag_") and v.std() == 0.0)}
        dm = DesignMatrix.from_columns(cols)
        return fit_logistic(dm, resp).predict_prob(dm.x)

    for j in range(T):
        rows = np.flatnonzero(ds.observed(j))
        if rows.size == 0:
            raise AllCensored(f"no one remains under observation at time {j}")
        resp = (ds.cens_time[rows] > j + 1).astype(float)
        if not resp.any():
            raise AllCensored(f"everyone is censored by time {j + 1}")
        if resp.all():
            p_den[rows, j] = 1.0
            p_num[rows, j] = 1.0
            continue
        cols: dict[str, np.ndarray] = {"const": np.ones(rows.size)}
        cols.update(_baseline_columns(ds, baseline_covariates, rows))
        if mode == "cumulative" and j > 0:
            cols.update(_lag_indicator_cols(ds.z[rows, j - 1]))
        elif mode == "forward":
            cols.update(_lag_indicator_cols(ds.z[rows, j]))
        if j > 0:
            for k in range(ds.l.shape[2]):
                cols[f"l{k}" if k else "l"] = ds.l[rows, j, k]
            cols["y"] = ds.y[rows, j]
        p_den[rows, j] = fit_step(rows, resp, cols)
        if mode == "cumulative" and stabilize:
            cols_n: dict[str, np.ndarray] = {"const": np.ones(rows.size)}
            cols_n.update(_baseline_columns(ds, baseline_covariates, rows))
            p_num[rows, j] = fit_step(rows, resp, cols_n)
        else:
            p_num[rows, j] = 1.0

    if mode == "cumulative":
        ratio = np.where(np.isfinite(p_den), p_num / p_den, np.nan)
        # The weight at t applies to people uncensored through t+1.
        cum = np.cumprod(ratio, axis=1)
        keep = (np.arange(T)[None, :] + 1) < ds.cens_time[:, None]
        cw[keep] = cum[keep]
    else:
        reached = ds.cens_time > T
        inv = np.where(np.isfinite(p_den), 1.0 / p_den, 1.0)
        # suffix[:, t] multiplies the inverse step probabilities for every
        # censoring opportunity after analysis time t (states t .. T-1).
        suffix = np.cumprod(inv[:, ::-1], axis=1)[:, ::-1]
        for t in range(T):
            cw[:, t] = np.where(reached, suffix[:, t], 0.0)
    return WeightSeries(sw=np.ones_like(cw), cw=cw)


def _nearest_rank(sorted_vals: np.ndarray, pct: float) -> float:
    if pct <= 0:
        return float(sorted_vals[0])
    k = int(np.ceil(pct / 100.0 * sorted_vals.size))
    return float(sorted_vals[min(k, sorted_vals.size) - 1])


def truncate(w: WeightSeries, lo_pct: float = 10.0, hi_pct: float = 90.0) -> WeightSeries:
    """Clamp weights to per-time percentile bounds (nearest-rank rule)."""
    if not 0 <= lo_pct < hi_pct <= 100:
        raise ValueError("need 0 <= lo < hi <= 100")

    def clamp(arr: np.ndarray) -> np.ndarray:
        out = arr.copy()
        for t in range(arr.shape[1]):
            col = arr[:, t]
            finite = np.isfinite(col)
            if not finite.any():
                continue
            vals = np.sort(col[finite])
            lo = _nearest_rank(vals, lo_pct)
            hi = _nearest_rank(vals, hi_pct)
            out[finite, t] = np.clip(col[finite], lo, hi)
        return out

    return WeightSeries(sw=clamp(w.sw), cw=clamp(w.cw))
