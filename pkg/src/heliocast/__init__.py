"""One-hour-ahead forecasting of the direct-to-global irradiance ratio.

Modules: ``timeseries`` (minute grid), ``ingest`` (parsing and cleaning),
``features`` (kb, normalization, lag vectors), ``arima`` (lag selection),
``models`` (boosted trees and MLP ensembles), ``eval`` (metrics and
tables), ``synth`` (synthetic sites) and ``cli``.
"""
from .errors import ConfigError, DataError, HeliocastError, TrainingError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "HeliocastError", "TrainingError", "__version__"]
