"""Resting-state fMRI connectivity analysis toolkit.

Subpackages cover the full workflow: per-ROI sample-entropy features,
developmental-stage clustering and classification, Pearson/Fisher-z
connectivity matrices with threshold scanning, ROI network clustering with
2-D embedding checks, within/between-network segregation metrics with age
trends, and a synthetic cohort generator used for end-to-end validation.
"""

from rsfc.errors import ConfigError, DataError, StageError

__all__ = ["ConfigError", "DataError", "StageError"]

__version__ = "0.1.0"
