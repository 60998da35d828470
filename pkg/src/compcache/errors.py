"""Exception hierarchy shared by every module."""


class CompcacheError(Exception):
    """Base class for all errors raised by this package."""


class TopologyError(CompcacheError, ValueError):
    """Malformed network description."""


class CycleDetected(TopologyError):
    pass


class MultipleRoots(TopologyError):
    pass


class OrphanNode(TopologyError):
    pass


class MissingLatency(TopologyError):
    pass


class NonLeafWithData(TopologyError):
    pass


class InvalidParameter(CompcacheError, ValueError):
    pass


class DeltaOutOfRange(InvalidParameter):
    pass


class UnknownLeaf(CompcacheError, KeyError):
    pass


class InstanceTooLarge(CompcacheError):
    pass


class Infeasible(CompcacheError):
    """No point satisfying the energy/cache/one-copy constraints was found."""


class NonConvergence(CompcacheError):
    """Iteration cap reached; the best iterate is attached as ``result``."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class TerminationCapHit(CompcacheError):
    pass


class InfeasibleInput(CompcacheError, ValueError):
    pass


class RangeExceedsBox(CompcacheError, ValueError):
    pass
