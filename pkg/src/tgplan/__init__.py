"""Learning planning heuristics with truncated Gaussian output distributions."""

from .trunc_gauss import TruncatedGaussian, truncnorm_log_partition, truncnorm_mean

__version__ = "0.1.0"

__all__ = ["TruncatedGaussian", "truncnorm_mean", "truncnorm_log_partition", "__version__"]
