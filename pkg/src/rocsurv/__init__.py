"""ROC-guided survival trees and martingale-averaged survival ensembles.

Right-censored data with time-dependent covariates are partitioned by
concordance (ICON) on at-risk ECDF-transformed covariates.  Single trees
are pruned by cross-validated concordance-complexity; ensembles average
per-tree martingale estimating equations.
"""

__version__ = "0.1.0"

from .concordance import ConcordanceReport, con_t, delta_icon, icon, roc_star
from .forest import ForestModel, fit_forest, forest_hazard, forest_survival, local_weights
from .kernels import BandwidthPolicy, KernelSpec, NodeHazardCurve, node_hazard
from .scenarios import ScenarioSpec, calibrate_censoring, generate, iae
from .survival_data import CovariatePath, Dataset, TimeGrid, ingest_long_format, transform, uncensored_quantile_grid
from .tree import PartitionTree, grow, predict_hazard, predict_survival, prune_sequence, select_by_cv

__all__ = [
    "__version__",
    "ConcordanceReport", "con_t", "delta_icon", "icon", "roc_star",
    "ForestModel", "fit_forest", "forest_hazard", "forest_survival", "local_weights",
    "BandwidthPolicy", "KernelSpec", "NodeHazardCurve", "node_hazard",
    "ScenarioSpec", "calibrate_censoring", "generate", "iae",
    "CovariatePath", "Dataset", "TimeGrid", "ingest_long_format", "transform", "uncensored_quantile_grid",
    "PartitionTree", "grow", "predict_hazard", "predict_survival", "prune_sequence", "select_by_cv",
]
