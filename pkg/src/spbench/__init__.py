"""Story-point estimation benchmark: datasets, baselines, TF/IDF-SVM, Deep-SE, metrics, stats."""
from .corpus import CapMode, Issue, IssueDataset, Scenario, SplitPlan
from .metrics import EvalReport, PredictionSet

__version__ = "0.1.0"

__all__ = ["CapMode", "EvalReport", "Issue", "IssueDataset", "PredictionSet", "Scenario", "SplitPlan"]
