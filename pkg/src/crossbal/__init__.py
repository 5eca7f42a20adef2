"""Cross-balancing weights for observational studies.

Sample-split construction of balance features (learned functions or
selected variables), variance-minimal approximate-balance weights solved
in dual form, and efficient estimation and inference for counterfactual
means and the ATT, with a Monte Carlo harness for the full evaluation
protocol.
"""

__version__ = "0.1.0"

from .balance import BalanceProblem, BalanceSolution, imbalance, smd_report
from .basis import BasisExpansion, basis_expand
from .data import Dataset
from .dgp import SETTINGS, SyntheticDataset, calibrate_theta0, make_dataset
from .estimator import (
    DictionaryConfig,
    EstimateReport,
    FoldSplit,
    LearnerConfig,
    SelectionConfig,
    aipw_crossfit,
    cross_balance_learned,
    cross_balance_selected,
    naive_balance,
    oracle_estimators,
    sbw_estimator,
    split_folds,
)
from .harness import SimulationConfig, SimulationResult, run_simulation
from .inference import bootstrap_ci, wald_ci
from .selection import SelectionSet, approx_error, combine

__all__ = [
    "__version__",
    "BalanceProblem",
    "BalanceSolution",
    "BasisExpansion",
    "Dataset",
    "DictionaryConfig",
    "EstimateReport",
    "FoldSplit",
    "LearnerConfig",
    "SelectionConfig",
    "SelectionSet",
    "SETTINGS",
    "SimulationConfig",
    "SimulationResult",
    "SyntheticDataset",
    "aipw_crossfit",
    "approx_error",
    "basis_expand",
    "bootstrap_ci",
    "calibrate_theta0",
    "combine",
    "cross_balance_learned",
    "cross_balance_selected",
    "imbalance",
    "make_dataset",
    "naive_balance",
    "oracle_estimators",
    "run_simulation",
    "sbw_estimator",
    "smd_report",
    "split_folds",
    "wald_ci",
]
