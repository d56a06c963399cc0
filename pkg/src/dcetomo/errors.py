"""Exception hierarchy shared by every dcetomo module."""

from __future__ import annotations


class TomographyError(ValueError):
    """Base class for all dcetomo errors."""


# timing / estimator
class EmptySeries(TomographyError):
    pass


class NonPositiveInterval(TomographyError):
    pass


class LengthMismatch(TomographyError):
    pass


class TooFewSamples(TomographyError):
    pass


class DegenerateVariance(TomographyError):
    pass


# netsim
class TopologyError(TomographyError):
    pass


class RoutingLoop(TopologyError):
    pass


class Disconnected(TopologyError):
    pass


class MultipleParents(TopologyError):
    pass


class UnknownReceiver(TomographyError):
    pass


class NotMeasurementPacket(TomographyError):
    pass


class PacketTooLarge(TomographyError):
    pass


# passive
class TooFewHosts(TomographyError):
    pass


class UnmarkedPair(TomographyError):
    pass


# harness
class ConfigError(TomographyError):
    """Raised with the full list of diagnostics for a rejected config."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class InsufficientSamples(TomographyError):
    pass
