"""Daily return forecasting: model zoo, ensembles, evaluation and diagnostics."""

__version__ = "0.1.0"
