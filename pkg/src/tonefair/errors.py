"""Exception types raised across the toolkit."""


class TonefairError(Exception):
    """Base class for all toolkit errors."""


class EmptySkinRegion(TonefairError):
    """No pixel survived the lesion and hair masks."""


class EmptySample(TonefairError):
    pass


class MixedBinning(TonefairError):
    """Distributions that must share a binning do not."""


class EmptySupport(TonefairError):
    pass


class ShapeMismatch(TonefairError):
    pass


class NonDistributionPrediction(TonefairError):
    """A prediction row does not sum to one."""


class TooFewBins(TonefairError):
    pass


class DegenerateRange(TonefairError):
    pass


class InvalidSpec(TonefairError):
    pass


class SchemaError(TonefairError):
    """An input file violates its schema; the message carries the line number."""
