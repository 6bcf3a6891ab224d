"""Regression kernels: weighted least squares, logistic, multinomial logit.

These are deliberately small, dependency-light fitters with deterministic
behaviour and hard failures (rank deficiency and separation raise instead of
silently regularizing).  All higher-level estimators in this package route
through them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg as sla


class FitError(RuntimeError):
    pass


class EmptyInput(FitError):
    pass


class ColumnMismatch(FitError):
    pass


class RankDeficient(FitError):
    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; offending column(s): "
                         f"{', '.join(self.columns)}")


class Separation(FitError):
    pass


class NoConvergence(FitError):
    pass


@dataclass(frozen=True)
class DesignMatrix:
    """A named design matrix; rows are observations, columns are terms."""

    names: tuple[str, ...]
    x: np.ndarray

    def __post_init__(self) -> None:
        if self.x.ndim != 2 or self.x.shape[1] != len(self.names):
            raise ColumnMismatch(
                f"matrix has {self.x.shape[1] if self.x.ndim == 2 else '?'} columns "
                f"for {len(self.names)} names"
            )
        if not np.isfinite(self.x).all():
            raise FitError("design matrix contains non-finite values")

    @classmethod
    def from_columns(cls, cols: dict[str, np.ndarray]) -> "DesignMatrix":
        names = tuple(cols)
        x = np.column_stack([np.asarray(v, dtype=float) for v in cols.values()])
        return cls(names, x)

    @property
    def m(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class FitResult:
    """Named coefficients plus fit diagnostics for one of the three kernels."""

    kind: str  # "wls" | "logistic" | "multinomial"
    names: tuple[str, ...]
    coef: np.ndarray  # (p,) or (n_cat-1, p) for multinomial
    converged: bool
    iterations: int
    residual_sd: float | None = None
    rss: float | None = None
    loglik: float | None = None

    def coef_for(self, name: str):
        """Coefficient for a named column (a vector over categories if multinomial)."""
        j = self.names.index(name)
        return self.coef[..., j]

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != len(self.names):
            raise ColumnMismatch(
                f"prediction matrix has {x.shape[-1]} columns, model expects "
                f"{len(self.names)}"
            )
        return x

    def predict_mean(self, x: np.ndarray) -> np.ndarray:
        if self.kind != "wls":
            raise FitError("predict_mean is only defined for least-squares fits")
        return self._check(x) @ self.coef

    def predict_prob(self, x: np.ndarray) -> np.ndarray:
        if self.kind != "logistic":
            raise FitError("predict_prob is only defined for logistic fits")
        return expit(self._check(x) @ self.coef)

    def predict_probs(self, x: np.ndarray) -> np.ndarray:
        """Category probabilities (rows sum to one; reference category first)."""
        if self.kind != "multinomial":
            raise FitError("predict_probs is only defined for multinomial fits")
        eta = self._check(x) @ self.coef.T
        return _softmax_ref(eta)


def expit(x) -> np.ndarray:
    """Numerically safe logistic function (scalar or array)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def _softmax_ref(eta: np.ndarray) -> np.ndarray:
    """Softmax over (0, eta_1, .., eta_{K-1}) given eta of shape (m, K-1)."""
    full = np.concatenate([np.zeros((eta.shape[0], 1)), eta], axis=1)
    full -= full.max(axis=1, keepdims=True)
    ex = np.exp(full)
    return ex / ex.sum(axis=1, keepdims=True)


def _as_xyw(design, y, w):
    if isinstance(design, DesignMatrix):
        names, x = design.names, design.x
    else:
        x = np.asarray(design, dtype=float)
        names = tuple(f"x{j}" for j in range(x.shape[1]))
    y = np.asarray(y, dtype=float)
    if x.shape[0] == 0:
        raise EmptyInput("no observations")
    if y.shape[0] != x.shape[0]:
        raise ColumnMismatch("response length does not match design rows")
    if w is None:
        w = np.ones(x.shape[0])
    else:
        w = np.asarray(w, dtype=float)
        if w.shape[0] != x.shape[0]:
            raise ColumnMismatch("weight length does not match design rows")
        if (w < 0).any():
            raise FitError("negative weights")
        if not (w > 0).any():
            raise EmptyInput("all weights are zero")
    return names, x, y, w


_RANK_RTOL = 1e-9


def _qr_solve(x: np.ndarray, y: np.ndarray, names: tuple[str, ...]) -> np.ndarray:
    """Least-squares solve via column-pivoted QR, raising on rank deficiency."""
    q, r, piv = sla.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    cutoff = _RANK_RTOL * max(diag[0], 1e-300)
    rank = int((diag > cutoff).sum())
    p = x.shape[1]
    if rank < p:
        raise RankDeficient([names[j] for j in piv[rank:]])
    z = sla.solve_triangular(r, q.T @ y)
    beta = np.empty(p)
    beta[piv] = z
    return beta


def fit_wls(design, y, w=None) -> FitResult:
    """Weighted least squares with a pivoted-QR rank check."""
    names, x, y, w = _as_xyw(design, y, w)
    sw = np.sqrt(w)
    beta = _qr_solve(x * sw[:, None], y * sw, names)
    resid = y - x @ beta
    rss = float(np.sum(w * resid * resid))
    dof = max(int((w > 0).sum()) - x.shape[1], 1)
    return FitResult(
        kind="wls",
        names=names,
        coef=beta,
        converged=True,
        iterations=1,
        residual_sd=float(np.sqrt(rss / dof)),
        rss=rss,
    )


class WlsSolver:
    """Repeated least squares against one fixed design.

    Factorizing once and re-solving for many responses is much cheaper than
    refitting when only the response changes between iterations.
    """

    def __init__(self, design) -> None:
        if isinstance(design, DesignMatrix):
            names, x = design.names, design.x
        else:
            x = np.asarray(design, dtype=float)
            names = tuple(f"x{j}" for j in range(x.shape[1]))
        if x.shape[0] == 0:
            raise EmptyInput("no observations")
        self.names = names
        self._x = x
        q, r, piv = sla.qr(x, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        cutoff = _RANK_RTOL * max(diag[0], 1e-300)
        rank = int((diag > cutoff).sum())
        if rank < x.shape[1]:
            raise RankDeficient([names[j] for j in piv[rank:]])
        self._q, self._r, self._piv = q, r, piv

    def solve(self, y: np.ndarray) -> np.ndarray:
        z = sla.solve_triangular(self._r, self._q.T @ np.asarray(y, dtype=float))
        beta = np.empty(self._x.shape[1])
        beta[self._piv] = z
        return beta

    def fit(self, y: np.ndarray) -> FitResult:
        y = np.asarray(y, dtype=float)
        beta = self.solve(y)
        resid = y - self._x @ beta
        rss = float(resid @ resid)
        dof = max(y.shape[0] - self._x.shape[1], 1)
        return FitResult(
            kind="wls",
            names=self.names,
            coef=beta,
            converged=True,
            iterations=1,
            residual_sd=float(np.sqrt(rss / dof)),
            rss=rss,
        )


_MAX_ABS_STD_COEF = 30.0


def _col_scales(x: np.ndarray) -> np.ndarray:
    s = x.std(axis=0)
    return np.where(s > 0, s, 1.0)


def fit_logistic(design, y, w=None, tol: float = 1e-8, max_iter: int = 100) -> FitResult:
    """Binary logistic regression by iteratively reweighted least squares."""
    names, x, y, w = _as_xyw(design, y, w)
    if not np.isin(y[w > 0], (0.0, 1.0)).all():
        raise FitError("logistic response must be 0/1")
    scales = _col_scales(x)
    beta = np.zeros(x.shape[1])
    for it in range(1, max_iter + 1):
        eta = x @ beta
        p = expit(eta)
        wk = np.maximum(w * p * (1.0 - p), 1e-12)
        z = eta + (y - p) / np.maximum(p * (1.0 - p), 1e-12)
        new = _qr_solve(x * np.sqrt(wk)[:, None], z * np.sqrt(wk), names)
        step = np.abs(new - beta).max()
        beta = new
        if np.abs(beta * scales).max() > _MAX_ABS_STD_COEF:
            raise Separation("logistic coefficients diverged (separated data?)")
        if step < tol:
            eta = x @ beta
            ll = float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))
            return FitResult("logistic", names, beta, True, it, loglik=ll)
    raise NoConvergence(f"logistic fit did not converge in {max_iter} iterations")


def fit_multinomial(
    design, y, w=None, n_cat: int = 4, tol: float = 1e-8, max_iter: int = 100
) -> FitResult:
    """Multinomial logit (reference category 0) by Newton's method.

    ``y`` holds integer categories ``0..n_cat-1``.  Coefficients come back as
    an ``(n_cat-1, p)`` array, one row per non-reference category.
    """
    names, x, y, w = _as_xyw(design, y, w)
    cats = np.unique(y[w > 0])
    if not np.isin(cats, np.arange(n_cat)).all():
        raise FitError(f"multinomial response must lie in 0..{n_cat - 1}")
    # A rank-deficient design makes every Newton Hessian singular, so check
    # once upfront like the least-squares fitters do.
    _, r, piv = sla.qr(x * np.sqrt(w)[:, None], mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int((diag > _RANK_RTOL * max(diag[0], 1e-300)).sum())
    if rank < x.shape[1]:
        raise RankDeficient([names[j] for j in piv[rank:]])
    m, p = x.shape
    kk = n_cat - 1
    onehot = np.zeros((m, kk))
    for c in range(1, n_cat):
        onehot[:, c - 1] = y == c
    scales = _col_scales(x)

    def loglik(bmat):
        eta = x @ bmat.T
        probs = _softmax_ref(eta)
        return float(np.sum(w * np.log(np.maximum(probs[np.arange(m), y.astype(int)],
                                                  1e-300))))

    beta = np.zeros((kk, p))
    ll = loglik(beta)
    for it in range(1, max_iter + 1):
        probs = _softmax_ref(x @ beta.T)[:, 1:]  # (m, kk)
        grad = x.T @ (w[:, None] * (onehot - probs))  # (p, kk)
        hess = np.empty((kk * p, kk * p))
        for c in range(kk):
            for d in range(c, kk):
                if c == d:
                    wcd = w * probs[:, c] * (1.0 - probs[:, c])
                else:
                    wcd = -w * probs[:, c] * probs[:, d]
                block = (x * wcd[:, None]).T @ x
                hess[c * p:(c + 1) * p, d * p:(d + 1) * p] = block
                hess[d * p:(d + 1) * p, c * p:(c + 1) * p] = block
        gvec = grad.T.reshape(-1)  # category-major, matching beta.reshape(-1)
        try:
            with warnings.catch_warnings():
                # Divergence is detected explicitly below; the solver's
                # ill-conditioning warnings on the way there are noise.
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                step = sla.solve(hess, gvec, assume_a="pos")
        except sla.LinAlgError:
            raise RankDeficient(list(names)) from None
        step = step.reshape(kk, p)
        # Step halving keeps the log likelihood monotone far from the optimum.
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            llc = loglik(cand)
            if llc >= ll - 1e-9 * (1.0 + abs(ll)):
                break
            scale *= 0.5
        else:
            raise NoConvergence("multinomial step halving failed")
        delta = np.abs(cand - beta).max()
        beta, ll = cand, llc
        if np.abs(beta * scales[None, :]).max() > _MAX_ABS_STD_COEF:
            raise Separation("multinomial coefficients diverged (separated data?)")
        if delta < tol:
            return FitResult("multinomial", names, beta, True, it, loglik=ll)
    raise NoConvergence(f"multinomial fit did not converge in {max_iter} iterations")


def predict_probs(fit: FitResult, x: np.ndarray) -> np.ndarray:
    """Category probabilities from a multinomial fit (rows sum to one)."""
    return fit.predict_probs(x)
