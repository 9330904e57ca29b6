from .logistic import ValidityClassifier, fit_logistic_irls, fit_validity_classifier
from .stepwise import InteractionModel, Term, fit_stepwise_interactions
from .transfer import TransferModel, fit_linear, fit_linear_transfer, predict_transfer
from .tree import ImportanceVector, RegressionTree, fit_tree_importance

__all__ = [
    "ImportanceVector",
    "InteractionModel",
    "RegressionTree",
    "Term",
    "TransferModel",
    "ValidityClassifier",
    "fit_linear",
    "fit_linear_transfer",
    "fit_logistic_irls",
    "fit_stepwise_interactions",
    "fit_tree_importance",
    "fit_validity_classifier",
    "predict_transfer",
]
