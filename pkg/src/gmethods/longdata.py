"""Long-format panel data model for two binary time-varying treatments.

A dataset holds ``n`` individuals followed over treatment times ``t = 0..T-1``
with outcomes measured at ``t = 0..T`` (``Y_0`` is the baseline outcome).  At
each treatment time the pair ``(A_t, B_t)`` is encoded as a single treatment
combination ``Z_t``:

    Z = 0 for (A,B) = (0,0)    Z = 1 for (1,0)
    Z = 2 for (0,1)            Z = 3 for (1,1)

The one external data format is a long CSV with header
``id,time,a,b,l,y[,censored]``; rows run ``t = 0..T`` per individual, and the
terminal row carries only the final outcome (its ``a,b,l`` fields may be left
empty).  ``censored = 1`` is allowed only on an individual's final row and
marks "censored by that time"; such a sentinel row carries no values.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
import pandas as pd

__all__ = [
    "ComboCode",
    "EstimandId",
    "LongitudinalDataset",
    "COMPARISONS",
    "STRATEGY_LABELS",
    "DataError",
    "MissingColumn",
    "UnknownColumn",
    "MissingValue",
    "NonBinaryTreatment",
    "NonContiguousTime",
    "DuplicateRow",
    "IncompleteFollowUp",
    "IndexOutOfRange",
    "encode_combo",
    "decode_combo",
    "combo_codes",
    "history_indicators",
    "all_estimands",
    "load_long_csv",
    "emit_long_csv",
]


class DataError(ValueError):
    """Base class for dataset construction and validation failures."""


class MissingColumn(DataError):
    pass


class UnknownColumn(DataError):
    pass


class MissingValue(DataError):
    pass


class NonBinaryTreatment(DataError):
    pass


class NonContiguousTime(DataError):
    pass


class DuplicateRow(DataError):
    pass


class IncompleteFollowUp(DataError):
    """A person's rows end before the dataset horizon without a censoring flag."""


class IndexOutOfRange(DataError, IndexError):
    pass


ComboCode = int  # value in {0, 1, 2, 3}

#: Treatment-combination value -> strategy label used in reports.
STRATEGY_LABELS = {0: "0", 1: "A", 2: "B", 3: "AB"}

#: The six pairwise comparisons of sustained strategies, in report order:
#: (label, combo held in the first arm, combo held in the second arm).
COMPARISONS = (
    ("A-0", 1, 0),
    ("B-0", 2, 0),
    ("A-B", 1, 2),
    ("AB-0", 3, 0),
    ("AB-A", 3, 1),
    ("AB-B", 3, 2),
)


class EstimandId(NamedTuple):
    """One average-treatment-effect contrast: a comparison at a horizon."""

    comparison: str
    horizon: int


def all_estimands(horizon: int = 5) -> list[EstimandId]:
    """All comparison x horizon estimands for a dataset with `horizon` treatment times."""
    return [EstimandId(c, h) for c, _, _ in COMPARISONS for h in range(1, horizon + 1)]


def encode_combo(a: int, b: int) -> ComboCode:
    """Encode a pair of binary treatment indicators as a combination code."""
    if a not in (0, 1) or b not in (0, 1):
        raise NonBinaryTreatment(f"treatment indicators must be 0/1, got (a={a}, b={b})")
    return int(a) + 2 * int(b)


def decode_combo(z: ComboCode) -> tuple[int, int]:
    """Inverse of :func:`encode_combo`."""
    if z not in (0, 1, 2, 3):
        raise DataError(f"combination code must be in 0..3, got {z}")
    return z & 1, z >> 1


def combo_codes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized combo encoding; NaN treatment entries map to code -1."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    missing = np.isnan(a) | np.isnan(b)
    z = np.where(missing, -1.0, a + 2.0 * b)
    return z.astype(np.int8)


@dataclass(frozen=True)
class LongitudinalDataset:
    """Immutable person x time panel of (A, B, L, Y) with derived combo codes.

    Attributes
    ----------
    ids : ndarray, shape (n,)
        Individual identifiers as loaded (ints when all ids are integral).
    a, b : ndarray, shape (n, T+1)
        Binary treatments as floats; NaN where unobserved.  Treatments are
        defined at t = 0..T-1; the terminal column exists only so loaded
        files round-trip.
    l : ndarray, shape (n, T+1, K)
        Time-varying covariates (K = 1 for the standard schema).
    y : ndarray, shape (n, T+1)
        Outcomes, including the baseline outcome in column 0.
    cens_time : ndarray, shape (n,)
        First time at which an individual is censored; T+1 when never.
        Person-time (i, t) is observed iff t < cens_time[i].
    """

    ids: np.ndarray
    a: np.ndarray
    b: np.ndarray
    l: np.ndarray
    y: np.ndarray
    cens_time: np.ndarray

    def __post_init__(self) -> None:
        n, nt = self.y.shape
        if self.a.shape != (n, nt) or self.b.shape != (n, nt):
            raise DataError("treatment arrays must match the outcome grid")
        if self.l.shape[:2] != (n, nt) or self.l.ndim != 3:
            raise DataError("covariate array must have shape (n, T+1, K)")
        if self.ids.shape != (n,) or self.cens_time.shape != (n,):
            raise DataError("ids and cens_time must have one entry per individual")
        if nt < 2:
            raise DataError("need at least one treatment time and one outcome time")
        obs_a = self.a[~np.isnan(self.a)]
        if not np.isin(obs_a, (0.0, 1.0)).all():
            raise NonBinaryTreatment("treatment a takes values outside {0,1}")
        obs_b = self.b[~np.isnan(self.b)]
        if not np.isin(obs_b, (0.0, 1.0)).all():
            raise NonBinaryTreatment("treatment b takes values outside {0,1}")
        for arr in (self.ids, self.a, self.b, self.l, self.y, self.cens_time):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def horizon(self) -> int:
        """Number of treatment times T (outcomes run to Y_T)."""
        return self.y.shape[1] - 1

    @cached_property
    def z(self) -> np.ndarray:
        """Combo codes, shape (n, T+1), -1 where treatments are unobserved."""
        z = combo_codes(self.a, self.b)
        z.setflags(write=False)
        return z

    @property
    def fully_observed(self) -> bool:
        return bool((self.cens_time > self.horizon).all())

    def observed(self, t: int) -> np.ndarray:
        """Boolean mask of individuals with person-time t observed."""
        return self.cens_time > t

    @classmethod
    def from_arrays(
        cls,
        a: np.ndarray,
        b: np.ndarray,
        l: np.ndarray,
        y: np.ndarray,
        ids: np.ndarray | None = None,
        cens_time: np.ndarray | None = None,
    ) -> "LongitudinalDataset":
        """Build a dataset from arrays with either T or T+1 treatment columns."""
        y = np.ascontiguousarray(y, dtype=float)
        n, nt = y.shape

        def widen(arr, name):
            arr = np.asarray(arr, dtype=float)
            if arr.shape[1] == nt - 1:
                pad = np.full((n,) + (1,) + arr.shape[2:], np.nan)
                arr = np.concatenate([arr, pad], axis=1)
            if arr.shape[1] != nt:
                raise DataError(f"{name} must have T or T+1 time columns")
            return arr

        a = widen(a, "a")
        b = widen(b, "b")
        l = widen(l, "l")
        if l.ndim == 2:
            l = l[:, :, None]
        if ids is None:
            ids = np.arange(1, n + 1, dtype=np.int64)
        if cens_time is None:
            cens_time = np.full(n, nt, dtype=np.int64)
        else:
            # Blank out anything past each person's censoring time so the
            # stored arrays agree with the observability masks.
            cens_time = np.asarray(cens_time, dtype=np.int64)
            gone = np.arange(nt)[None, :] >= cens_time[:, None]
            a, b, y = a.copy(), b.copy(), y.copy()
            l = l.copy()
            a[gone] = np.nan
            b[gone] = np.nan
            y[gone] = np.nan
            l[gone, :] = np.nan
        return cls(np.asarray(ids), a, b, np.ascontiguousarray(l), y,
                   np.asarray(cens_time, dtype=np.int64))


def history_indicators(ds: LongitudinalDataset, i: int, t: int) -> np.ndarray:
    """One-hot treatment-combination history for individual i through time t.

    Returns the vector (I(z_0=1), I(z_0=2), I(z_0=3), ..., I(z_t=1), I(z_t=2),
    I(z_t=3)), i.e. grouped by time with the three non-reference categories
    fastest.  Length 3*(t+1); all-zero blocks correspond to the reference
    combination z = 0.
    """
    if not 0 <= i < ds.n:
        raise IndexOutOfRange(f"individual index {i} outside 0..{ds.n - 1}")
    if not 0 <= t <= ds.horizon - 1:
        raise IndexOutOfRange(f"time {t} outside 0..{ds.horizon - 1}")
    z = ds.z[i, : t + 1]
    if (z < 0).any():
        raise IndexOutOfRange(f"individual {i} is unobserved at or before time {t}")
    out = np.zeros(3 * (t + 1))
    js = np.arange(t + 1)
    hot = z > 0
    out[3 * js[hot] + (z[hot] - 1)] = 1.0
    return out


_REQUIRED = ("id", "time", "a", "b", "l", "y")


def load_long_csv(source) -> LongitudinalDataset:
    """Read and validate a long-format CSV (path, file object, or bytes).

    Raises
    ------
    MissingColumn, UnknownColumn, DuplicateRow, NonContiguousTime,
    NonBinaryTreatment, MissingValue, IncompleteFollowUp
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    df = pd.read_csv(source, dtype={"id": str}, skipinitialspace=True)
    df.columns = [str(c).strip() for c in df.columns]

    missing = [c for c in _REQUIRED if c not in df.columns]
    if missing:
        raise MissingColumn(f"missing required column(s): {', '.join(missing)}")
    extra_l = sorted(
        (c for c in df.columns if re.fullmatch(r"l[2-9]\d*", c)),
        key=lambda c: int(c[1:]),
    )
    known = set(_REQUIRED) | {"censored"} | set(extra_l)
    unknown = [c for c in df.columns if c not in known]
    if unknown:
        raise UnknownColumn(f"unexpected column(s): {', '.join(unknown)}")
    has_cens = "censored" in df.columns
    l_cols = ["l"] + extra_l

    times = pd.to_numeric(df["time"], errors="coerce").to_numpy()
    if np.isnan(times).any() or (times != np.floor(times)).any() or (times < 0).any():
        raise DataError("time must be a nonnegative integer")
    times = times.astype(np.int64)

    # Deterministic person order: numeric when every id parses as an integer.
    raw_ids = df["id"].to_numpy()
    uniq = pd.unique(raw_ids)
    try:
        order = np.argsort(np.asarray([int(u) for u in uniq]), kind="stable")
        uniq_sorted = uniq[order]
        ids_out = np.asarray([int(u) for u in uniq_sorted], dtype=np.int64)
    except (TypeError, ValueError):
        uniq_sorted = np.sort(uniq.astype(str))
        ids_out = uniq_sorted
    code_of = {u: k for k, u in enumerate(uniq_sorted)}
    codes = np.asarray([code_of[u] for u in raw_ids], dtype=np.int64)

    n = len(uniq_sorted)
    T = int(times.max())
    nt = T + 1

    seen = np.zeros((n, nt), dtype=bool)
    for i, t in zip(codes, times):
        if t >= nt:
            raise DataError("internal: time exceeds inferred horizon")
        if seen[i, t]:
            raise DuplicateRow(f"duplicate row for id={uniq_sorted[i]}, time={t}")
        seen[i, t] = True
    counts = seen.sum(axis=1)
    # Contiguity from 0: times seen must be exactly 0..counts-1.
    expected = np.arange(nt)[None, :] < counts[:, None]
    bad = (seen != expected).any(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonContiguousTime(f"id={uniq_sorted[i]} has a gap in its time index")

    def numeric(col):
        vals = pd.to_numeric(df[col], errors="raise").to_numpy(dtype=float)
        out = np.full((n, nt), np.nan)
        out[codes, times] = vals
        return out

    a, b, y = numeric("a"), numeric("b"), numeric("y")
    l = np.stack([numeric(c) for c in l_cols], axis=2)

    last = counts - 1
    if has_cens:
        craw = pd.to_numeric(df["censored"], errors="raise").to_numpy(dtype=float)
        if not np.isin(craw[~np.isnan(craw)], (0.0, 1.0)).all():
            raise DataError("censored flag must be 0 or 1")
        cgrid = np.zeros((n, nt))
        cgrid[codes, times] = np.nan_to_num(craw)
        if (cgrid[expected].reshape(-1) > 0).any():
            flagged = cgrid > 0
            nonfinal = flagged & (np.arange(nt)[None, :] != last[:, None])
            if nonfinal.any():
                i = int(np.flatnonzero(nonfinal.any(axis=1))[0])
                raise DataError(f"id={uniq_sorted[i]} has censored=1 before its final row")
        censored_flag = cgrid[np.arange(n), last] > 0
    else:
        censored_flag = np.zeros(n, dtype=bool)

    short = (last < T) & ~censored_flag
    if short.any():
        i = int(np.flatnonzero(short)[0])
        raise IncompleteFollowUp(
            f"id={uniq_sorted[i]} stops at time {last[i]} of {T} without a censoring flag"
        )
    cens_time = np.where(censored_flag, last, nt).astype(np.int64)

    # Value requirements: full (a,b,l,y) at observed treatment times, y at the
    # uncensored terminal row, nothing on a censored sentinel row.
    tgrid = np.arange(nt)[None, :]
    need_full = tgrid < np.minimum(cens_time, T)[:, None]
    need_y = tgrid < cens_time[:, None]
    for name, arr in (("a", a), ("b", b), ("l", l[:, :, 0]), ("y", y)):
        req = need_y if name == "y" else need_full
        holes = req & np.isnan(arr)
        if holes.any():
            i, t = map(int, np.argwhere(holes)[0])
            raise MissingValue(f"missing {name} for id={uniq_sorted[i]} at time {t}")
    sentinel = censored_flag[:, None] & (tgrid == cens_time[:, None])
    for name, arr in (("a", a), ("b", b), ("l", l[:, :, 0]), ("y", y)):
        if (sentinel & ~np.isnan(arr)).any():
            raise DataError("censored sentinel rows must not carry values")

    return LongitudinalDataset(ids_out, a, b, l, y, cens_time)


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else format(x, ".12g")


def emit_long_csv(ds: LongitudinalDataset, path_or_buf) -> None:
    """Write a dataset in the long CSV schema (inverse of :func:`load_long_csv`)."""
    k = ds.l.shape[2]
    l_names = ["l"] + [f"l{j + 1}" for j in range(1, k)]
    cols = ["id", "time", "a", "b", *l_names, "y"]
    any_cens = not ds.fully_observed
    if any_cens:
        cols.append("censored")
    lines = [",".join(cols)]
    nt = ds.horizon + 1
    for i in range(ds.n):
        upto = min(int(ds.cens_time[i]), nt - 1)
        for t in range(upto + 1):
            if t >= ds.cens_time[i]:
                vals = [""] * (3 + k) + (["1"] if any_cens else [])
            else:
                ab = [_fmt(ds.a[i, t]), _fmt(ds.b[i, t])]
                for s in range(2):
                    if ab[s]:
                        ab[s] = str(int(float(ab[s])))
                vals = ab + [_fmt(ds.l[i, t, j]) for j in range(k)] + [_fmt(ds.y[i, t])]
                if any_cens:
                    vals.append("0")
            lines.append(",".join([str(ds.ids[i]), str(t), *vals]))
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", encoding="utf-8") as fh:
            fh.write(text)
