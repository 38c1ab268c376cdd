"""Mining urban deprivation signals from point-of-interest data.

Wards are profiled by the Offering Advantage of each POI category, categories
are screened against a deprivation index with a spatially corrected Spearman
test plus FDR control, and Gaussian Naive Bayes classifiers are trained on
the surviving features.
"""

from urbandep.errors import (
    ConfigError,
    DataError,
    DegeneracyError,
    UrbandepError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DegeneracyError",
    "UrbandepError",
    "__version__",
]
