"""G-methods for two binary time-varying treatments.

Implements five estimators of the joint effects of sustained treatment
strategies under time-dependent confounding (inverse-probability-weighted
marginal structural models, artificial censoring with weighting, sequential
trial emulation, the parametric g-formula, and g-estimation of structural
nested models), together with a data generator and a simulation-study
harness for benchmarking them.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .longdata import (  # noqa: F401
    COMPARISONS,
    STRATEGY_LABELS,
    EstimandId,
    LongitudinalDataset,
    all_estimands,
    combo_codes,
    decode_combo,
    encode_combo,
    history_indicators,
    load_long_csv,
    emit_long_csv,
)
from .simgen import (  # noqa: F401
    SCENARIOS,
    ScenarioSpec,
    SeedSpec,
    generate,
    scenario_spec,
)
from .oracle import (  # noqa: F401
    TrueEffects,
    exact_truth,
    reference_truth,
    simulated_truth,
)
from .estimators import (  # noqa: F401
    METHODS,
    EstimateSet,
    MsmSpec,
    SnmmSpec,
    bootstrap_se,
    censor_and_weight,
    gestimation,
    gestimation_constant,
    gformula,
    iptw_msm,
    sequential_trials,
)
from .study import (  # noqa: F401
    PerformanceReport,
    ReplicationTable,
    compare_report,
    performance,
    run_study,
)
