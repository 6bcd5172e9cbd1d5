from enum import Enum
from typing import TypedDict

from typing_extensions import NotRequired


class CostKind(str, Enum):
    QUADRATIC = "quadratic-periodic"
    PERTURBED = "perturbed-quadratic"


class AuditStrategy(str, Enum):
    RANDOM = "random"
    ORBIT = "orbit"
    BOTH = "both"


class LinearSolver(str, Enum):
    DIRECT = "direct"
    BICGSTAB = "bicgstab"


class KernelVariant(str, Enum):
    FULL = "full"
    # regression controls
    NO_KAHLER = "no-kahler"
    NO_SECOND_ORDER = "no-second-order"
    NO_FIRST_ORDER = "no-first-order"


class TwistReport(TypedDict):
    passed: bool
    samples: int
    min_det: float
    min_eig: float
    max_disp: float
    margin: float


class LBReport(TypedDict):
    sizes: list[int]
    linf: float
    l2: float
    lhs_l2: float
    rhs_l2: float


class DPhiRow(TypedDict):
    eps: float
    kahler_dist: float
    kahler_norm: float
    mass_dist: float
    mass_norm: float
    image_mean: float


class DPhiReport(TypedDict):
    rows: list[DPhiRow]
    kahler_sign: int
    mass_factor: str
    omitted_factor: str
    codiff_factor: NotRequired[float]
    codiff_fit_residual: NotRequired[float]


class TangentReport(TypedDict):
    dtau: float
    harmonic_norm: float
    exact_rel: float
    coexact_rel: float
    parasitic_rel: float


class KernelReport(TypedDict):
    dim: int
    singular_values: list[float]
    largest: float
    threshold: float
    gap_ratio: float
    constant_fraction: float
    variant: str


class HodgeInfo(TypedDict):
    expected_dim: int
    eigenvalues: list[float]
    gap_ratio: float


class FamilyStep(TypedDict):
    step: int
    tau: list[float]
    cost: float
    theta_norm: float
    class_constants: list[float]
    pushforward_norm: float
    newton_iterations: int
    converged: bool
    optimality_gap: NotRequired[float]


class AuditSummary(TypedDict):
    total_cost: float
    violations_found: int
    samples_checked: int
    skipped_pairs: int
    seed: int
    best: NotRequired[dict]
