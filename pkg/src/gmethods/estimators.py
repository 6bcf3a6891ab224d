"""Five estimators of sustained-strategy effects for two binary treatments.

Every estimator maps a :class:`~gmethods.longdata.LongitudinalDataset` to an
:class:`EstimateSet` covering the six strategy comparisons at every horizon:

* ``iptw_msm``          -- weighted regression of a marginal structural model
                           on the full person-time data,
* ``censor_and_weight`` -- the same model fitted after artificially censoring
                           individuals when they leave their baseline
                           combination,
* ``sequential_trials`` -- censoring-and-weighting applied to a stack of
                           re-indexed trials with staggered baselines,
* ``gformula``          -- Monte-Carlo standardisation using fitted outcome
                           and confounder models,
* ``gestimation``       -- recursive blip estimation with propensity-score
                           adjustment.

The marginal structural model regresses the outcome at ``t+1`` on indicators
of the combination in effect 1, 2, ... periods earlier, pooled across
horizons with coefficients shared by distance-to-outcome.  Sharing by
distance (rather than by calendar time) keeps the pooled model correctly
specified when the effect of a treatment decays with the time since it was
taken, which is the usual case; after artificial censoring the two layouts
coincide.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .glm import DesignMatrix, FitResult, NoConvergence, WlsSolver, fit_wls
from .longdata import (
    COMPARISONS,
    STRATEGY_LABELS,
    EstimandId,
    LongitudinalDataset,
    all_estimands,
)
from .weights import (
    WeightSeries,
    censoring_weights,
    fit_numerator,
    fit_propensity,
    stabilized_weights,
)


class EstimationError(RuntimeError):
    """Base class for estimator failures."""


class EmptyArm(EstimationError):
    """Some sustained strategy has no follow-up at a required horizon."""


class MissingStrategy(EstimationError):
    """A contrast was requested between strategies that were not supplied."""


class EmptyTrial(UserWarning):
    """A trial baseline had no eligible individuals and was skipped."""


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class MsmSpec:
    """Layout of the marginal structural model.

    form
        ``"indicators"`` fits one coefficient per (combination, periods
        before outcome); ``"duration"`` fits the cumulative years on A, on B
        and on both.
    intercept
        ``"common"`` shares one intercept across horizons, ``"per_horizon"``
        fits one per outcome time.
    baseline_covariates
        Baseline columns adjusted for in the model.  Must match the
        covariates of the stabilising (numerator) treatment models, which
        use the baseline outcome.
    """

    form: str = "indicators"
    intercept: str = "common"
    baseline_covariates: tuple[str, ...] = ("y0",)

    def __post_init__(self) -> None:
        if self.form not in ("indicators", "duration"):
            raise ValueError(f"unknown MSM form {self.form!r}")
        if self.intercept not in ("common", "per_horizon"):
            raise ValueError(f"unknown intercept layout {self.intercept!r}")


@dataclass(frozen=True)
class SnmmSpec:
    """Blip structure of the structural nested mean model.

    ``"lag_specific"`` gives each combination one parameter per
    treatment-to-outcome distance (3 x horizon parameters); ``"constant"``
    gives each combination a single parameter shared across distances.
    """

    blip: str = "lag_specific"

    def __post_init__(self) -> None:
        if self.blip not in ("lag_specific", "constant"):
            raise ValueError(f"unknown blip structure {self.blip!r}")

    def n_parameters(self, horizon: int) -> int:
        return 3 * horizon if self.blip == "lag_specific" else 3


@dataclass(frozen=True)
class EstimateSet:
    """All strategy contrasts produced by one estimator on one dataset."""

    method: str
    horizon: int
    estimates: dict
    se: dict | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        wanted = all_estimands(self.horizon)
        missing = [e for e in wanted if e not in self.estimates]
        if missing:
            raise EstimationError(f"estimates missing for {missing[:3]} ...")
        bad = [e for e in wanted if not np.isfinite(self.estimates[e])]
        if bad:
            raise EstimationError(f"non-finite estimates for {bad[:3]} ...")


@dataclass(frozen=True)
class BlipResiduals:
    """Outcomes with the estimated effects of later treatments removed.

    ``values[(s, t)]`` holds, per individual, the outcome at time ``s``
    minus the estimated blips of the combinations taken strictly after
    ``t`` (and strictly before ``s``).  An individual with no treatment in
    that window keeps the raw outcome exactly.
    """

    horizon: int
    values: dict

    def get(self, s: int, t: int) -> np.ndarray:
        return self.values[(s, t)]


def contrasts(strategy_values) -> dict:
    """Six pairwise comparisons per horizon from per-strategy value arrays.

    `strategy_values` maps each strategy code 0..3 to a sequence of values
    indexed by horizon - 1.  Differences are first minus second throughout.
    """
    for c in (0, 1, 2, 3):
        if c not in strategy_values:
            raise MissingStrategy(
                f"strategy {STRATEGY_LABELS[c]!r} has no values to compare"
            )
    vals = {c: np.asarray(strategy_values[c], dtype=float) for c in (0, 1, 2, 3)}
    horizon = vals[0].shape[0]
    out: dict[EstimandId, float] = {}
    for name, c1, c2 in COMPARISONS:
        for h in range(1, horizon + 1):
            out[EstimandId(name, h)] = float(vals[c1][h - 1] - vals[c2][h - 1])
    return out


# ---------------------------------------------------------------------------
# person-time design pieces


def _outcome_rows(ds: LongitudinalDataset):
    """(individual, time) pairs with the next outcome observed."""
    ii, tt = [], []
    for t in range(ds.horizon):
        rows = np.flatnonzero(ds.cens_time > t + 1)
        ii.append(rows)
        tt.append(np.full(rows.size, t))
    return np.concatenate(ii), np.concatenate(tt)


def _staircase_columns(z: np.ndarray, ii: np.ndarray, tt: np.ndarray,
                       horizon: int, prefix: str = "z") -> dict:
    """Indicator columns of the combination ``back`` periods before t + 1.

    Column ``{prefix}{c}_back{o}`` is 1 when the combination ``o`` periods
    before the outcome (i.e. at time ``t + 1 - o``) equals ``c``, and 0
    when it differs or the row is too early for that distance.
    """
    cols: dict[str, np.ndarray] = {}
    for back in range(1, horizon + 1):
        j = tt + 1 - back
        ok = j >= 0
        zj = np.full(ii.size, -1)
        zj[ok] = z[ii[ok], j[ok]]
        for c in (1, 2, 3):
            cols[f"{prefix}{c}_back{back}"] = (zj == c).astype(float)
    return cols


def _duration_columns(z: np.ndarray, ii: np.ndarray, tt: np.ndarray) -> dict:
    on_a = np.isin(z, (1, 3)).astype(float)
    on_b = np.isin(z, (2, 3)).astype(float)
    on_ab = (z == 3).astype(float)
    cols = {}
    for name, arr in (("dur_a", on_a), ("dur_b", on_b), ("dur_ab", on_ab)):
        cum = np.cumsum(arr, axis=1)
        cols[name] = cum[ii, tt]
    return cols


def _intercept_columns(msm: MsmSpec, tt: np.ndarray, horizon: int) -> dict:
    if msm.intercept == "common":
        return {"const": np.ones(tt.size)}
    return {f"h{t + 1}": (tt == t).astype(float) for t in range(horizon)}


def _baseline_covariate_columns(ds: LongitudinalDataset, msm: MsmSpec,
                                ii: np.ndarray) -> dict:
    cols: dict[str, np.ndarray] = {}
    for name in msm.baseline_covariates:
        if name == "y0":
            cols["y0"] = ds.y[ii, 0]
        elif name == "l0":
            for k in range(ds.l.shape[2]):
                cols[f"l0_{k}" if k else "l0"] = ds.l[ii, 0, k]
        else:
            raise ValueError(f"unknown baseline covariate {name!r}")
    return cols


def _check_stabilizer_match(msm: MsmSpec) -> None:
    # The numerator treatment models stabilise on the baseline outcome, so a
    # weighted MSM must adjust for exactly that column.
    if tuple(msm.baseline_covariates) != ("y0",):
        raise EstimationError(
            "weighted fits require baseline_covariates ('y0',) to match the "
            "stabilising treatment models"
        )


def _strategy_sums(fit: FitResult, msm: MsmSpec, horizon: int) -> dict:
    """Per-strategy sums of fitted coefficients by horizon.

    For the indicator form this is the cumulative sum of that combination's
    distance coefficients; for the duration form it is the horizon times the
    per-year coefficients.  Baseline and intercept terms are omitted: they
    cancel in every contrast.
    """
    sums: dict[int, np.ndarray] = {0: np.zeros(horizon)}
    if msm.form == "indicators":
        for c in (1, 2, 3):
            per = np.array([fit.coef_for(f"z{c}_back{o}")
                            for o in range(1, horizon + 1)])
            sums[c] = np.cumsum(per)
    else:
        alpha = np.array([fit.coef_for("dur_a"), fit.coef_for("dur_b"),
                          fit.coef_for("dur_ab")])
        loads = {1: (1.0, 0.0, 0.0), 2: (0.0, 1.0, 0.0), 3: (1.0, 1.0, 1.0)}
        hs = np.arange(1, horizon + 1, dtype=float)
        for c in (1, 2, 3):
            sums[c] = hs * float(alpha @ np.array(loads[c]))
    return sums


def _msm_design(ds: LongitudinalDataset, msm: MsmSpec, ii, tt,
                extra_cols: dict | None = None) -> DesignMatrix:
    cols = _intercept_columns(msm, tt, ds.horizon)
    if msm.form == "indicators":
        cols.update(_staircase_columns(ds.z, ii, tt, ds.horizon))
    else:
        cols.update(_duration_columns(ds.z, ii, tt))
    cols.update(_baseline_covariate_columns(ds, msm, ii))
    if extra_cols:
        cols.update(extra_cols)
    return DesignMatrix.from_columns(cols)


# ---------------------------------------------------------------------------
# IPTW-MSM


def iptw_msm(ds: LongitudinalDataset, msm: MsmSpec | None = None) -> EstimateSet:
    """Weighted MSM fit on the full person-time data.

    Stabilized treatment weights are built from pooled multinomial models;
    if the dataset contains dropout, cumulative censoring weights are
    multiplied in.
    """
    msm = msm or MsmSpec()
    _check_stabilizer_match(msm)
    num = fit_numerator(ds)
    den = fit_propensity(ds)
    w = stabilized_weights(num, den)
    if not ds.fully_observed:
        w = WeightSeries(sw=w.sw, cw=censoring_weights(ds).cw)

    ii, tt = _outcome_rows(ds)
    dm = _msm_design(ds, msm, ii, tt)
    fit = fit_wls(dm, ds.y[ii, tt + 1], w.combined[ii, tt])
    sums = _strategy_sums(fit, msm, ds.horizon)
    return EstimateSet(
        method="iptw",
        horizon=ds.horizon,
        estimates=contrasts(sums),
        details={"msm_fit": fit, "weights": w.diagnostics()},
    )


# ---------------------------------------------------------------------------
# censoring-and-weighting and sequential trials


def _eligible(ds: LongitudinalDataset, k: int) -> np.ndarray:
    """Individuals untreated before time k and still under observation."""
    ok = ds.cens_time > k
    if k > 0:
        ok = ok & (ds.z[:, :k] == 0).all(axis=1)
    return np.flatnonzero(ok)


def _pad_tail(arr: np.ndarray, width: int) -> np.ndarray:
    pad = [(0, 0), (0, width - arr.shape[1])] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, pad, constant_values=np.nan)


def _trial_stack(ds: LongitudinalDataset, trials) -> tuple[LongitudinalDataset, np.ndarray]:
    """Stack eligible individuals of each trial, re-indexed to trial time."""
    width = ds.horizon + 1
    parts, labels = [], []
    for k in trials:
        rows = _eligible(ds, k)
        if rows.size == 0:
            warnings.warn(EmptyTrial(f"no eligible individuals at baseline {k}"))
            continue
        parts.append((
            _pad_tail(ds.a[rows, k:], width),
            _pad_tail(ds.b[rows, k:], width),
            _pad_tail(ds.l[rows, k:], width),
            _pad_tail(ds.y[rows, k:], width),
            np.minimum(ds.cens_time[rows] - k, width - k),
        ))
        labels.append(np.full(rows.size, k))
    if not parts:
        raise EmptyArm("no trial has any eligible individuals")
    a, b, l, y, cens = (np.concatenate(x) for x in zip(*parts))
    stack = LongitudinalDataset.from_arrays(a, b, l, y, cens_time=cens)
    return stack, np.concatenate(labels)


def _sustained_mask(z: np.ndarray) -> np.ndarray:
    """mask[i, t]: combination unchanged from baseline through time t."""
    dev = z != z[:, :1]
    return ~np.logical_or.accumulate(dev, axis=1)


def _check_arm_followup(stack: LongitudinalDataset, keep: np.ndarray) -> None:
    z0 = stack.z[:, 0]
    outcome_ok = (np.arange(1, stack.horizon + 1)[None, :]
                  < stack.cens_time[:, None])
    usable = keep[:, :stack.horizon] & outcome_ok
    for c in (0, 1, 2, 3):
        arm = usable[z0 == c]
        depth = 0 if arm.size == 0 else int(arm.any(axis=0).sum())
        if depth < stack.horizon:
            raise EmptyArm(
                f"no individual on sustained {STRATEGY_LABELS[c]!r} has an "
                f"outcome at horizon {depth + 1}"
            )


def _dropout_weights_for_stack(ds: LongitudinalDataset, trials,
                               width: int) -> np.ndarray:
    """Re-index dropout weights to trial time.

    The cumulative inverse-probability-of-dropout weights are fitted once in
    original time; a trial starting at ``k`` conditions on being under
    observation at ``k``, so its rows carry the product of the per-step
    factors from ``k`` onwards, i.e. the cumulative weight divided by its
    value just before the trial baseline.
    """
    cw = censoring_weights(ds).cw
    parts = []
    for k in trials:
        rows = _eligible(ds, k)
        if rows.size == 0:
            continue
        part = cw[rows, k:]
        if k > 0:
            part = part / cw[rows, k - 1][:, None]
        parts.append(_pad_tail(part, width))
    return np.concatenate(parts)


def _censored_msm(ds: LongitudinalDataset, msm: MsmSpec, trials,
                  method: str) -> EstimateSet:
    msm = msm or MsmSpec()
    _check_stabilizer_match(msm)
    stack, labels = _trial_stack(ds, trials)

    num = fit_numerator(stack, trial=labels)
    den = fit_propensity(stack, trial=labels)
    w = stabilized_weights(num, den)
    if not ds.fully_observed:
        w = WeightSeries(sw=w.sw,
                         cw=_dropout_weights_for_stack(ds, trials, ds.horizon))

    keep = _sustained_mask(stack.z)
    _check_arm_followup(stack, keep)
    ii, tt = _outcome_rows(stack)
    on = keep[ii, tt]
    ii, tt = ii[on], tt[on]

    extra = {}
    present = np.unique(labels[ii])
    if present.size > 1:
        extra = {f"trial_{k}": (labels[ii] == k).astype(float)
                 for k in present[1:]}
    dm = _msm_design(stack, msm, ii, tt, extra_cols=extra)
    fit = fit_wls(dm, stack.y[ii, tt + 1], w.combined[ii, tt])
    sums = _strategy_sums(fit, msm, stack.horizon)
    return EstimateSet(
        method=method,
        horizon=stack.horizon,
        estimates=contrasts(sums),
        details={"msm_fit": fit, "weights": w.diagnostics(),
                 "trials": tuple(int(k) for k in present),
                 "rows": int(ii.size)},
    )


def censor_and_weight(ds: LongitudinalDataset, msm: MsmSpec | None = None) -> EstimateSet:
    """Weighted MSM after censoring at the first change of combination."""
    return _censored_msm(ds, msm, trials=(0,), method="censor")


def sequential_trials(ds: LongitudinalDataset, msm: MsmSpec | None = None,
                      trials=None) -> EstimateSet:
    """Pooled censor-and-weight analysis over staggered trial baselines.

    Trial ``k`` enrols everyone still untreated before ``k``; follow-up is
    re-indexed to trial time and censored within trial at the first change
    from the trial-baseline combination.  Treatment coefficients are shared
    across trials; an indicator per trial enters both the treatment models
    and the MSM.  With ``trials=(0,)`` this reproduces
    :func:`censor_and_weight` exactly.
    """
    if trials is None:
        trials = tuple(range(ds.horizon))
    return _censored_msm(ds, msm, trials=trials, method="seqtrial")


# ---------------------------------------------------------------------------
# parametric g-formula


def gformula(ds: LongitudinalDataset, mc_size: int | None = None, seed: int = 0,
             reuse_baselines: bool = False) -> EstimateSet:
    """Monte-Carlo standardisation over the four sustained strategies.

    Pooled linear models are fitted for the outcome given history and for
    each confounder given the previous state; baselines are then resampled
    and the state advanced under each fixed strategy, drawing confounders
    and intermediate outcomes from the fitted normal models.  The horizon-h
    value is the average predicted conditional mean of the outcome at h.
    The outcome-given-state model doubles as the intermediate-outcome model
    since both condition on the same shifted state.
    """
    H = ds.horizon
    n_l = ds.l.shape[2]
    if reuse_baselines:
        mc_size = ds.n
    elif mc_size is None:
        mc_size = max(ds.n, 1000)
    elif mc_size < 1000:
        raise ValueError("mc_size must be at least 1000")

    ii, tt = _outcome_rows(ds)
    ycols: dict[str, np.ndarray] = {"const": np.ones(ii.size)}
    ycols.update(_staircase_columns(ds.z, ii, tt, H))
    for k in range(n_l):
        ycols[f"l_{k}" if k else "l"] = ds.l[ii, tt, k]
    ycols["ylag"] = ds.y[ii, tt]
    ydm = DesignMatrix.from_columns(ycols)
    yfit = fit_wls(ydm, ds.y[ii, tt + 1], np.ones(ii.size))

    lfits: list[FitResult] = []
    if H > 1:
        li, lt = [], []
        for t in range(1, H):
            rows = np.flatnonzero(ds.cens_time > t)
            li.append(rows)
            lt.append(np.full(rows.size, t))
        li, lt = np.concatenate(li), np.concatenate(lt)
        zprev = ds.z[li, lt - 1]
        base: dict[str, np.ndarray] = {"const": np.ones(li.size)}
        for c in (1, 2, 3):
            base[f"z{c}"] = (zprev == c).astype(float)
        for k in range(n_l):
            base[f"llag_{k}" if k else "llag"] = ds.l[li, lt - 1, k]
        base["ylag"] = ds.y[li, lt - 1]
        ldm = DesignMatrix.from_columns(base)
        for k in range(n_l):
            lfits.append(fit_wls(ldm, ds.l[li, lt, k], np.ones(li.size)))

    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 11257)))
    if reuse_baselines:
        idx = np.arange(ds.n)
    else:
        idx = rng.integers(0, ds.n, size=mc_size)
    eps_l = rng.standard_normal((mc_size, max(H - 1, 1), n_l))
    eps_y = rng.standard_normal((mc_size, max(H - 1, 1)))

    def predict_outcome(strategy: int, h: int, l_state, y_state) -> np.ndarray:
        cols = {"const": np.ones(mc_size)}
        for back in range(1, H + 1):
            for c in (1, 2, 3):
                on = float(back <= h and c == strategy)
                cols[f"z{c}_back{back}"] = np.full(mc_size, on)
        for k in range(n_l):
            cols[f"l_{k}" if k else "l"] = l_state[:, k]
        cols["ylag"] = y_state
        dm = DesignMatrix.from_columns(cols)
        if dm.names != yfit.names:
            raise EstimationError("outcome prediction columns do not match the fit")
        return yfit.predict_mean(dm.x)

    values: dict[int, np.ndarray] = {}
    for strategy in (0, 1, 2, 3):
        l_state = ds.l[idx, 0, :].copy()
        y_state = ds.y[idx, 0].copy()
        means = np.empty(H)
        for h in range(1, H + 1):
            pred = predict_outcome(strategy, h, l_state, y_state)
            means[h - 1] = pred.mean()
            if h < H:
                lcols = {"const": np.ones(mc_size)}
                for c in (1, 2, 3):
                    lcols[f"z{c}"] = np.full(mc_size, float(c == strategy))
                for k in range(n_l):
                    lcols[f"llag_{k}" if k else "llag"] = l_state[:, k]
                lcols["ylag"] = y_state
                ldm_mc = DesignMatrix.from_columns(lcols)
                if ldm_mc.names != lfits[0].names:
                    raise EstimationError(
                        "confounder prediction columns do not match the fit"
                    )
                lx = ldm_mc.x
                new_l = np.empty_like(l_state)
                for k in range(n_l):
                    new_l[:, k] = (lfits[k].predict_mean(lx)
                                   + lfits[k].residual_sd * eps_l[:, h - 1, k])
                y_state = pred + yfit.residual_sd * eps_y[:, h - 1]
                l_state = new_l
        values[strategy] = means

    return EstimateSet(
        method="gformula",
        horizon=H,
        estimates=contrasts(values),
        details={"outcome_fit": yfit, "confounder_fits": tuple(lfits),
                 "mc_size": mc_size, "strategy_means": values},
    )


# ---------------------------------------------------------------------------
# g-estimation


def _phi_table(phi: np.ndarray, horizon: int, blip: str) -> np.ndarray:
    """(4, horizon+1) lookup: blip of combination c at distance d."""
    tab = np.zeros((4, horizon + 1))
    if blip == "lag_specific":
        tab[1:, 1:] = phi
    else:
        tab[1:, 1:] = phi[:, None]
    return tab


def blip_residuals(ds: LongitudinalDataset, phi: np.ndarray,
                   blip: str = "lag_specific") -> BlipResiduals:
    """Remove estimated effects of treatments strictly after t from Y_s.

    For each pair ``t < s`` the value is ``Y_s`` minus the blips, at their
    distances to ``s``, of the combinations taken at times ``t+1 .. s-1``.
    Treatments at ``s`` itself act only on later outcomes, so the window
    stops at ``s - 1``.
    """
    H = ds.horizon
    tab = _phi_table(np.asarray(phi, dtype=float), H, blip)
    z = ds.z
    out: dict[tuple[int, int], np.ndarray] = {}
    for s in range(1, H + 1):
        for t in range(s):
            resid = ds.y[:, s].copy()
            for u in range(t + 1, s):
                cu = np.clip(z[:, u], 0, 3)
                resid -= tab[cu, s - u]
            out[(s, t)] = resid
    return BlipResiduals(horizon=H, values=out)


def _gest_pair_design(ds: LongitudinalDataset, ps3: np.ndarray, s: int, t: int,
                      shared_phi: bool) -> tuple[np.ndarray, dict]:
    """Rows and nuisance/blip columns for the pair regression at (s, t)."""
    rows = np.flatnonzero(ds.cens_time > s)
    zt = ds.z[rows, t]
    cols: dict[str, np.ndarray] = {}
    phi_prefix = "phi" if shared_phi else f"phi_d{s - t}"
    for c in (1, 2, 3):
        cols[f"{phi_prefix}_c{c}"] = (zt == c).astype(float)
    for back in range(1, t + 1):
        for c in (1, 2, 3):
            cols[f"hist{c}_back{back}"] = (ds.z[rows, t - back] == c).astype(float)
    for k in range(ds.l.shape[2]):
        cols[f"l_{k}" if k else "l"] = ds.l[rows, t, k]
    cols["ycur"] = ds.y[rows, t]
    for c in range(3):
        cols[f"ps{c + 1}"] = ps3[rows, t, c]
    return rows, cols


def gestimation(ds: LongitudinalDataset, snmm: SnmmSpec | None = None,
                tol: float = 1e-8, max_sweeps: int = 50) -> EstimateSet:
    """Recursive blip estimation with propensity-score regressors.

    Each pair regression explains the blip-adjusted outcome for ``(s, t)``
    by the combination at ``t``, the combination history before ``t``, the
    confounder and outcome at ``t``, and the three non-reference predicted
    combination probabilities.  Distances are processed in increasing order,
    re-using the blips already estimated; sweeps repeat until the estimates
    stop changing.
    """
    snmm = snmm or SnmmSpec()
    H = ds.horizon
    z = ds.z
    never = [STRATEGY_LABELS[c] for c in (1, 2, 3) if not (z[:, :H] == c).any()]
    if never:
        raise EmptyArm(
            f"combination(s) {', '.join(never)} never observed; "
            "blip parameters are not identifiable"
        )
    ps3 = fit_propensity(ds).nonreference

    lag_designs: dict[int, list] = {}
    shared = snmm.blip == "constant"
    for lag in range(1, H + 1):
        lag_designs[lag] = [
            (s, s - lag) + _gest_pair_design(ds, ps3, s, s - lag, shared)
            for s in range(lag, H + 1)
        ]

    def adjusted(tab: np.ndarray, s: int, t: int, rows: np.ndarray) -> np.ndarray:
        resid = ds.y[rows, s].copy()
        for u in range(t + 1, s):
            cu = np.clip(z[rows, u], 0, 3)
            resid -= tab[cu, s - u]
        return resid

    def stack_lag(lag: int) -> DesignMatrix:
        blocks = lag_designs[lag]
        sizes = [rows.size for _, _, rows, _ in blocks]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        m = int(offsets[-1])
        cols: dict[str, np.ndarray] = {"const": np.ones(m)}
        for name in sorted({name for _, _, _, c in blocks for name in c}):
            vec = np.zeros(m)
            for (off, (_, _, rows, c)) in zip(offsets, blocks):
                if name in c:
                    vec[off:off + rows.size] = c[name]
            cols[name] = vec
        return DesignMatrix.from_columns(cols)

    def stack_all_pairs() -> DesignMatrix:
        # Constant blips: one regression over every pair, blip columns
        # shared, nuisance columns and intercepts kept separate per distance.
        pieces = [(lag, s, t, rows, c) for lag in range(1, H + 1)
                  for s, t, rows, c in lag_designs[lag]]
        sizes = [rows.size for _, _, _, rows, _ in pieces]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        m = int(offsets[-1])
        cols: dict[str, np.ndarray] = {}
        for j, (lag, s, t, rows, c) in enumerate(pieces):
            off = offsets[j]
            icol = cols.setdefault(f"const_d{lag}", np.zeros(m))
            icol[off:off + rows.size] = 1.0
            for name, vals in c.items():
                key = name if name.startswith("phi") else f"{name}_d{lag}"
                vec = cols.setdefault(key, np.zeros(m))
                vec[off:off + rows.size] = vals
        return DesignMatrix.from_columns(cols)

    def lag_response(tab: np.ndarray, lag: int) -> np.ndarray:
        return np.concatenate([adjusted(tab, s, t, rows)
                               for s, t, rows, _ in lag_designs[lag]])

    def all_response(tab: np.ndarray) -> np.ndarray:
        return np.concatenate([adjusted(tab, s, t, rows)
                               for lag in range(1, H + 1)
                               for s, t, rows, _ in lag_designs[lag]])

    if snmm.blip == "lag_specific":
        phi = np.zeros((3, H))
        solvers = {lag: WlsSolver(stack_lag(lag)) for lag in range(1, H + 1)}
        phi_idx = {lag: [solvers[lag].names.index(f"phi_d{lag}_c{c}")
                         for c in (1, 2, 3)] for lag in range(1, H + 1)}
    else:
        phi = np.zeros(3)
        solvers = {0: WlsSolver(stack_all_pairs()), 1: WlsSolver(stack_lag(1))}
        phi_idx = {0: [solvers[0].names.index(f"phi_c{c}") for c in (1, 2, 3)],
                   1: [solvers[1].names.index(f"phi_c{c}") for c in (1, 2, 3)]}

    tab0 = _phi_table(phi, H, snmm.blip)
    phi0 = solvers[1].solve(lag_response(tab0, 1))[phi_idx[1]]
    if snmm.blip == "lag_specific":
        phi[:, 0] = phi0
    else:
        phi = phi0.copy()

    converged = False
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        delta = 0.0
        if snmm.blip == "lag_specific":
            for lag in range(1, H + 1):
                coef = solvers[lag].solve(lag_response(_phi_table(phi, H, snmm.blip), lag))
                new = coef[phi_idx[lag]]
                delta = max(delta, float(np.abs(new - phi[:, lag - 1]).max()))
                phi[:, lag - 1] = new
        else:
            coef = solvers[0].solve(all_response(_phi_table(phi, H, snmm.blip)))
            new = coef[phi_idx[0]]
            delta = float(np.abs(new - phi).max())
            phi = new
        if delta < tol:
            converged = True
            break
    if not converged:
        raise NoConvergence(
            f"blip estimates still moving by {delta:.2e} after {sweeps} sweeps"
        )

    tab = _phi_table(phi, H, snmm.blip)
    if snmm.blip == "lag_specific":
        last_fits = {lag: solvers[lag].fit(lag_response(tab, lag))
                     for lag in range(1, H + 1)}
    else:
        last_fits = {0: solvers[0].fit(all_response(tab))}

    hs = np.arange(1, H + 1, dtype=float)
    values = {0: np.zeros(H)}
    for c in (1, 2, 3):
        if snmm.blip == "lag_specific":
            values[c] = np.cumsum(phi[c - 1])
        else:
            values[c] = hs * phi[c - 1]
    return EstimateSet(
        method="gest" if snmm.blip == "lag_specific" else "gest_const",
        horizon=H,
        estimates=contrasts(values),
        details={"phi": phi.copy(), "initial_phi": phi0, "sweeps": sweeps,
                 "fits": last_fits},
    )


def gestimation_constant(ds: LongitudinalDataset) -> EstimateSet:
    return gestimation(ds, SnmmSpec(blip="constant"))


# ---------------------------------------------------------------------------
# bootstrap


@dataclass(frozen=True)
class BootstrapResult:
    se: dict
    b: int
    n_failed: int
    failures: tuple[str, ...] = ()


def _take_individuals(ds: LongitudinalDataset, idx: np.ndarray) -> LongitudinalDataset:
    return LongitudinalDataset(
        ids=np.arange(idx.size, dtype=ds.ids.dtype),
        a=ds.a[idx].copy(), b=ds.b[idx].copy(), l=ds.l[idx].copy(),
        y=ds.y[idx].copy(), cens_time=ds.cens_time[idx].copy(),
    )


def bootstrap_se(ds: LongitudinalDataset, method, b: int = 200,
                 seed: int = 0) -> BootstrapResult:
    """Nonparametric bootstrap over individuals.

    ``method`` is a registry key or a callable mapping a dataset to an
    :class:`EstimateSet`.  Resamples whose fit fails (e.g. an arm empties)
    are recorded and excluded from the standard deviations.
    """
    if b < 50:
        raise ValueError("at least 50 bootstrap resamples are required")
    func = METHODS[method] if isinstance(method, str) else method
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 52021)))
    draws: list[dict] = []
    failures: list[str] = []
    for r in range(b):
        idx = rng.integers(0, ds.n, size=ds.n)
        try:
            draws.append(func(_take_individuals(ds, idx)).estimates)
        except Exception as exc:  # noqa: BLE001 - failure kind is reported
            failures.append(f"resample {r}: {type(exc).__name__}: {exc}")
    if not draws:
        raise EstimationError("every bootstrap resample failed")
    keys = draws[0].keys()
    se = {k: float(np.std([d[k] for d in draws], ddof=1)) for k in keys}
    return BootstrapResult(se=se, b=b, n_failed=len(failures),
                           failures=tuple(failures))


METHODS = {
    "iptw": iptw_msm,
    "censor": censor_and_weight,
    "seqtrial": sequential_trials,
    "gformula": gformula,
    "gest": gestimation,
    "gest_const": gestimation_constant,
}
