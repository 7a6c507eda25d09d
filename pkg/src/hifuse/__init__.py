"""Health-index estimation: DeepSAD embeddings fused by isotonic alternating projections."""

from hifuse.errors import ConfigError, DataError, HifuseError, NumericalError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "HifuseError", "NumericalError", "__version__"]
