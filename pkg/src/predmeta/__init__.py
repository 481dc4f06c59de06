"""Predictive confidence distributions for random-effects meta-analysis."""

__version__ = "0.1.0"

from .data import MetaDataset, Study, log_or_from_counts, read_csv, validate_dataset  # noqa: E402
from .edgington import EdgingtonCD, irwin_hall_cdf  # noqa: E402
from .heterogeneity import (  # noqa: E402
    estimate_tau2_pm,
    estimate_tau2_reml,
    generalized_q,
    higgins_i2,
    ivw_mean_hksj,
    tau2_q_profile_ci,
)
from .predictive import (  # noqa: E402
    confidence_probability,
    equi_tailed_interval,
    hcdp_interval,
    hts_predictive,
    sample_pcd,
    skipka_predictive,
)

__all__ = [
    "MetaDataset",
    "Study",
    "log_or_from_counts",
    "read_csv",
    "validate_dataset",
    "EdgingtonCD",
    "irwin_hall_cdf",
    "estimate_tau2_pm",
    "estimate_tau2_reml",
    "generalized_q",
    "higgins_i2",
    "ivw_mean_hksj",
    "tau2_q_profile_ci",
    "confidence_probability",
    "equi_tailed_interval",
    "hcdp_interval",
    "hts_predictive",
    "sample_pcd",
    "skipka_predictive",
]
