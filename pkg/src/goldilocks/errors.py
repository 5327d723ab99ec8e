"""Exception types shared across the pipeline."""


class DataError(ValueError):
    """Input data is missing, malformed or violates a contract.

    The CLI maps this to exit code 2.
    """


class SchemaError(DataError):
    """A required column or manifest key is absent."""


class EstimationError(DataError):
    """A regression cannot be estimated (no variation, too few clusters, ...)."""
