"""Synthetic longitudinal data with two confounded binary treatments.

One individual evolves as follows over treatment times ``t = 0..T-1``:

* baseline: ``L_0 ~ N(0,1)`` and ``Y_0 ~ N(0.05 L_0, 1)``;
* confounder: ``L_t ~ N(0.2 L_{t-1} + 0.2 A_{t-1} + 0.2 B_{t-1} + 0.01 Y_{t-1}, 1)``;
* treatments: ``A_t`` and ``B_t`` are independent Bernoulli draws given history,
  with logits linear in ``(1, L_t, A_{t-1}, B_{t-1}, Y_{t-1})`` (baseline
  treatments depend on ``L_0`` only);
* outcome: ``Y_{t+1}`` is Gaussian with unit variance around a mean that is
  linear in ``L_t``, the current treatments, optionally their product, lagged
  ``A`` values, and ``Y_t``; the current-``A`` effect can decay with the
  number of prior treated periods.

Nine preset scenarios vary these coefficients; see :func:`scenario_spec`.
All randomness flows through a counter-based generator keyed by
``(master seed, scenario, replication)``, and the full noise set for a
replication is drawn up front in a fixed order, so counterfactual runs under
different strategies share every residual draw with each other (common random
numbers) regardless of which strategy is simulated first.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .glm import expit
from .longdata import LongitudinalDataset, decode_combo

__all__ = [
    "TreatmentModel",
    "OutcomeModel",
    "ScenarioSpec",
    "SeedSpec",
    "scenario_spec",
    "generate",
    "generate_counterfactual",
    "SCENARIOS",
]


@dataclass(frozen=True)
class TreatmentModel:
    """Logit coefficients for one treatment's assignment model."""

    intercept: float
    l: float
    a_lag: float
    b_lag: float
    y_lag: float

    def logit(self, l_t, a_lag, b_lag, y_lag):
        return (self.intercept + self.l * l_t + self.a_lag * a_lag
                + self.b_lag * b_lag + self.y_lag * y_lag)


@dataclass(frozen=True)
class OutcomeModel:
    """Mean model for the next outcome given current state and treatments.

    ``a_lags[k]`` multiplies the treatment taken k+1 periods earlier; terms
    whose lag precedes the start of follow-up are dropped.  ``decay`` scales
    the current-treatment effect by ``1 - decay * (number of periods treated
    before t)``: accumulated past use attenuates the current dose, so a
    first-ever dose always carries the full effect no matter when it is
    taken.
    """

    intercept: float = 0.0
    l: float = 0.05
    a: float = 1.0
    b: float = 0.5
    ab: float = 0.0
    y_lag: float = 0.1
    a_lags: tuple[float, ...] = ()
    decay: float = 0.0

    def mean(self, t: int, a_hist: np.ndarray, b_t, l_t, y_t) -> np.ndarray:
        a_t = a_hist[..., t]
        if self.decay:
            treated = a_hist[..., :t].sum(axis=-1)
            eff = self.a * (1.0 - self.decay * treated) * a_t
        else:
            eff = self.a * a_t
        mu = (self.intercept + self.l * l_t + eff + self.b * b_t
              + self.ab * a_t * b_t + self.y_lag * y_t)
        for k, c in enumerate(self.a_lags):
            j = t - 1 - k
            if j >= 0:
                mu = mu + c * a_hist[..., j]
        return mu


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int
    treat_a: TreatmentModel
    treat_b: TreatmentModel
    outcome: OutcomeModel
    horizon: int = 5

    def with_outcome(self, **kw) -> "ScenarioSpec":
        return dataclasses.replace(self, outcome=dataclasses.replace(self.outcome, **kw))


_BASE_A = TreatmentModel(0.0, 0.30, 1.80, 0.0, 0.12)
_BASE_B = TreatmentModel(0.0, 0.30, 0.0, 1.80, 0.12)

SCENARIOS: dict[int, str] = {
    1: "baseline",
    2: "low prevalence of a",
    3: "strong confounder-outcome association",
    4: "strong confounder-treatment association",
    5: "dependence between the treatments",
    6: "a has no effect",
    7: "treatment interaction affects the outcome",
    8: "outcome depends on treatment history",
    9: "treatment effect decays with use",
}


def scenario_spec(scenario: int) -> ScenarioSpec:
    """Preset coefficient sets 1..9 (see :data:`SCENARIOS` for labels)."""
    ta, tb, om = _BASE_A, _BASE_B, OutcomeModel()
    if scenario == 1:
        pass
    elif scenario == 2:
        ta = dataclasses.replace(ta, intercept=-2.3)
    elif scenario == 3:
        om = OutcomeModel(l=0.30)
    elif scenario == 4:
        ta = dataclasses.replace(ta, l=1.00)
    elif scenario == 5:
        ta = dataclasses.replace(ta, b_lag=-0.2)
        tb = dataclasses.replace(tb, a_lag=-0.2)
    elif scenario == 6:
        om = OutcomeModel(a=0.0)
    elif scenario == 7:
        om = OutcomeModel(ab=0.25)
    elif scenario == 8:
        om = OutcomeModel(a_lags=(0.2, 0.1, 0.05, 0.001))
    elif scenario == 9:
        om = OutcomeModel(decay=0.2)
    else:
        raise ValueError(f"unknown scenario {scenario}; choose 1..9")
    return ScenarioSpec(scenario, ta, tb, om)


@dataclass(frozen=True)
class SeedSpec:
    """Hierarchical seed: one replication of one scenario under a master seed."""

    master: int
    scenario: int = 0
    replication: int = 0

    def sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence((self.master, self.scenario, self.replication))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.sequence()))


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, SeedSpec):
        return seed.generator()
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


@dataclass(frozen=True)
class _Noise:
    eps_l0: np.ndarray
    eps_y0: np.ndarray
    u_a: np.ndarray
    u_b: np.ndarray
    eps_l: np.ndarray
    eps_y: np.ndarray


def _draw_noise(n: int, horizon: int, rng: np.random.Generator) -> _Noise:
    # Fixed draw order; every simulation draws the full set even if the
    # treatment uniforms go unused, so strategies share residuals.
    return _Noise(
        eps_l0=rng.standard_normal(n),
        eps_y0=rng.standard_normal(n),
        u_a=rng.random((n, horizon)),
        u_b=rng.random((n, horizon)),
        eps_l=rng.standard_normal((n, max(horizon - 1, 0))),
        eps_y=rng.standard_normal((n, horizon)),
    )


def _simulate(spec: ScenarioSpec, noise: _Noise, fixed: tuple | None):
    n = noise.eps_l0.shape[0]
    T = spec.horizon
    a = np.empty((n, T))
    b = np.empty((n, T))
    l = np.empty((n, T))
    y = np.empty((n, T + 1))
    l[:, 0] = noise.eps_l0
    y[:, 0] = 0.05 * l[:, 0] + noise.eps_y0
    for t in range(T):
        if t > 0:
            l[:, t] = (0.2 * l[:, t - 1] + 0.2 * a[:, t - 1] + 0.2 * b[:, t - 1]
                       + 0.01 * y[:, t - 1] + noise.eps_l[:, t - 1])
        if fixed is None:
            if t == 0:
                eta_a = spec.treat_a.intercept + spec.treat_a.l * l[:, 0]
                eta_b = spec.treat_b.intercept + spec.treat_b.l * l[:, 0]
            else:
                eta_a = spec.treat_a.logit(l[:, t], a[:, t - 1], b[:, t - 1], y[:, t - 1])
                eta_b = spec.treat_b.logit(l[:, t], a[:, t - 1], b[:, t - 1], y[:, t - 1])
            a[:, t] = noise.u_a[:, t] < expit(eta_a)
            b[:, t] = noise.u_b[:, t] < expit(eta_b)
        else:
            a[:, t] = fixed[0][t]
            b[:, t] = fixed[1][t]
        y[:, t + 1] = spec.outcome.mean(t, a[:, :t + 1], b[:, t], l[:, t], y[:, t]) \
            + noise.eps_y[:, t]
    return a, b, l, y


def generate(spec: ScenarioSpec, n: int, seed) -> LongitudinalDataset:
    """Simulate n individuals under observational treatment assignment."""
    noise = _draw_noise(n, spec.horizon, _generator(seed))
    a, b, l, y = _simulate(spec, noise, None)
    return LongitudinalDataset.from_arrays(a, b, l, y)


def _fixed_strategy(strategy, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    if np.isscalar(strategy):
        abit, bbit = decode_combo(int(strategy))
        return np.full(horizon, float(abit)), np.full(horizon, float(bbit))
    a_seq, b_seq = strategy
    a_seq = np.asarray(a_seq, dtype=float)
    b_seq = np.asarray(b_seq, dtype=float)
    if a_seq.shape != (horizon,) or b_seq.shape != (horizon,):
        raise ValueError("per-time strategy arrays must have one entry per treatment time")
    return a_seq, b_seq


def generate_counterfactual(spec: ScenarioSpec, n: int, seed, strategy) -> LongitudinalDataset:
    """Simulate n individuals with treatments forced to a strategy.

    ``strategy`` is a combination code 0..3 held at every time, or a pair of
    per-time 0/1 arrays ``(a_seq, b_seq)``.  With the same seed, runs under
    different strategies share all residual draws.
    """
    noise = _draw_noise(n, spec.horizon, _generator(seed))
    a, b, l, y = _simulate(spec, noise, _fixed_strategy(strategy, spec.horizon))
    return LongitudinalDataset.from_arrays(a, b, l, y)
