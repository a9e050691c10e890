"""Exception types raised across the package."""


class PenningError(Exception):
    """Base class; ``code`` is the machine-readable tag printed by the CLI."""

    code = "error"


class UnstableTrap(PenningError):
    code = "unstable_trap"

    def __init__(self, msg, max_stable_voltage):
        super().__init__(msg)
        self.max_stable_voltage = max_stable_voltage


class Unreachable(PenningError):
    code = "unreachable"


class NoExpansion(PenningError):
    """Coupling already wins at the trap centre; the ion axialises to r = 0."""

    code = "no_expansion"
    radius = 0.0


class NoStableOrbit(PenningError):
    code = "no_stable_orbit"


class IonEscaped(PenningError):
    code = "ion_escaped"

    def __init__(self, msg, time, ion):
        super().__init__(msg)
        self.time = time
        self.ion = ion


class Overlap(PenningError):
    code = "overlap"


class TooFewPhotons(PenningError):
    code = "too_few_photons"


class NoModulation(PenningError):
    code = "no_modulation"


class FitFailed(PenningError):
    code = "fit_failed"


class IncompleteSwing(PenningError):
    code = "incomplete_swing"


class PeakNotFound(PenningError):
    code = "peak_not_found"


class EmptyTrajectory(PenningError):
    code = "empty_trajectory"


class NoSignal(PenningError):
    code = "no_signal"


class ConfigError(PenningError):
    code = "config_error"
