"""Exception and warning types raised across the package."""


class RescueIPWError(Exception):
    """Base class for all package errors."""


class DataError(RescueIPWError):
    """Problems with an input dataset."""


class MissingColumn(DataError):
    pass


class BadValue(DataError):
    pass


class EmptyArm(DataError):
    pass


class MissingL(DataError):
    """A record that needs post-treatment covariates has none."""


class DimensionMismatch(RescueIPWError):
    pass


class EstimationError(RescueIPWError):
    """Failure inside a fitting or estimation step."""


class NonConvergence(EstimationError):
    """An iterative solver stopped without meeting its tolerance.

    ``result`` holds the best iterate when the solver has one to offer.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class RankDeficientDesign(EstimationError):
    pass


class DegenerateArm(EstimationError):
    pass


class AllSwitchers(EstimationError):
    pass


class EmptyStratum(RescueIPWError):
    pass


class VarianceError(RescueIPWError):
    """Failure while computing standard errors."""


class TruncationUnsupported(VarianceError):
    pass


class TooManyFailures(VarianceError):
    pass


class SwitchingImbalanceWarning(UserWarning):
    """An arm has no switchers, so the tilt model cannot be identified there."""
