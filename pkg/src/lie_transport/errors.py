from typing import Any

from lie_transport.utils.constants import (
    EXIT_CONFIG,
    EXIT_CUT_LOCUS,
    EXIT_CONVERGENCE,
    EXIT_SPECTRAL_GAP,
)


class LieTransportError(Exception):
    exit_code = EXIT_CONFIG

    def __init__(
        self, message: str, *, partial: Any = None, report: Any = None
    ):
        super().__init__(message)
        self.partial = partial
        self.report = report


class ConfigError(LieTransportError, ValueError):
    exit_code = EXIT_CONFIG


class DimensionError(ConfigError):
    pass


class DensityMismatch(ConfigError):
    pass


class NotClosed(ConfigError):
    pass


class CutLocusError(LieTransportError, ValueError):
    exit_code = EXIT_CUT_LOCUS


class SingularJet(CutLocusError):
    pass


class NoConvergence(LieTransportError, RuntimeError):
    exit_code = EXIT_CONVERGENCE


class NonConvexBreakdown(NoConvergence):
    pass


class SpectralGapTooSmall(LieTransportError, RuntimeError):
    exit_code = EXIT_SPECTRAL_GAP
