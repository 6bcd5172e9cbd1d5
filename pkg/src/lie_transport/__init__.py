from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("lie-transport")
except PackageNotFoundError:
    __version__ = "0.0.0+local"

from .cost import CostModel, TwistWindow  # noqa: E402
from .grid import (  # noqa: E402
    OneFormField,
    ScalarField,
    PeriodicGrid,
    TwoFormField,
)
from .hodge import MetricField, HarmonicBasis  # noqa: E402
from .config import RunConfig, load_config  # noqa: E402
from .moduli import ModuliChart, ContinuationSettings  # noqa: E402
from .experiment import Experiment  # noqa: E402
from .transport import DensityPair, TransportState  # noqa: E402

__all__ = [
    "CostModel",
    "RunConfig",
    "DensityPair",
    "Experiment",
    "MetricField",
    "ModuliChart",
    "OneFormField",
    "PeriodicGrid",
    "ScalarField",
    "TwistWindow",
    "TwoFormField",
    "HarmonicBasis",
    "TransportState",
    "ContinuationSettings",
    "load_config",
    "__version__",
]
