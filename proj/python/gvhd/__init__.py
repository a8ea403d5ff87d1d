"""GVHD risk model: C++ core exposed through pybind11.

The heavy lifting (autodiff engine, encoders, fusion, AUC-margin training,
cohort generation, metrics) lives in the compiled ``_core`` extension; this
package re-exports its public surface.
"""

from ._core import (  # noqa: F401
    __version__,
    auprc,
    bce_loss,
    confusion_at_threshold,
    cross_validate,
    default_config,
    generate_cohort,
    gradcheck,
    pairwise_auc_margin_loss,
    predict_cohort,
    roc_auc,
    select_threshold,
)

__all__ = [
    "__version__",
    "auprc",
    "bce_loss",
    "confusion_at_threshold",
    "cross_validate",
    "default_config",
    "generate_cohort",
    "gradcheck",
    "pairwise_auc_margin_loss",
    "predict_cohort",
    "roc_auc",
    "select_threshold",
]
