class EstimationError(ValueError):
    """Not enough usable data to form an estimate."""


class FitError(ValueError):
    """A regression could not be carried out."""
