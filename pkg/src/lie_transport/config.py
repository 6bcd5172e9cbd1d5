import json
import logging
from typing import Any
from pathlib import Path
from functools import cache
from dataclasses import field, asdict, fields, dataclass
from importlib.resources import files

import jsonschema

from lie_transport.cost import CostModel, TwistWindow
from lie_transport.grid import PeriodicGrid
from lie_transport.errors import ConfigError
from lie_transport.moduli import ContinuationSettings
from lie_transport.transport import DensityPair, fourier_density
from lie_transport.utils.miscs import to_builtin
from lie_transport.utils.types import CostKind, LinearSolver, AuditStrategy
from lie_transport.utils.hashing import config_hash
from lie_transport.utils.constants import (
    K_MAX,
    MAX_DISP,
    MAX_NEWTON,
    NEWTON_TOL,
    ARMIJO_SLOPE,
    ARMIJO_FACTOR,
    AUDIT_SAMPLES,
    WINDOW_MARGIN,
    CONTINUATION_STEP,
)

logger = logging.getLogger(__name__)

SCHEMA_FILE = "config.schema.json"


@cache
def config_schema() -> dict[str, Any]:
    text = files("lie_transport").joinpath(SCHEMA_FILE).read_text()
    return json.loads(text)


def validate_schema(data: Any) -> None:
    try:
        jsonschema.validate(instance=data, schema=config_schema())
    except jsonschema.ValidationError as e:
        raise ConfigError(
            f"invalid config at {e.json_path}: {e.message}"
        ) from e


def _build(cls: type, data: dict[str, Any]) -> Any:
    """Instantiate a spec from schema-checked data with exact number types."""
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.type in (int, float):
            value = f.type(value)
        kwargs[f.name] = value
    return cls(**kwargs)


@dataclass(frozen=True)
class GridSpec:
    dim: int = 2
    sizes: list[int] = field(default_factory=lambda: [32, 32])

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GridSpec":
        dim = data.get("dim", 2)
        sizes = [int(s) for s in data.get("sizes", [32] * dim)]
        if len(sizes) != dim:
            raise ConfigError(f"grid.sizes has {len(sizes)} entries for dim {dim}")
        return cls(dim, sizes)

    def build(self) -> PeriodicGrid:
        return PeriodicGrid(tuple(self.sizes))


@dataclass(frozen=True)
class CostSpec:
    kind: str = CostKind.QUADRATIC.value
    epsilon: float = 0.0
    freq: list[int] = field(default_factory=list)
    separable: bool = False
    max_disp: float = MAX_DISP
    margin: float = WINDOW_MARGIN

    def build(self) -> CostModel:
        return CostModel(
            CostKind(self.kind),
            self.epsilon,
            tuple(self.freq),
            self.separable,
            TwistWindow(self.max_disp, self.margin),
        )


@dataclass(frozen=True)
class FourierTerm:
    k: list[int]
    cos: float = 0.0
    sin: float = 0.0


@dataclass(frozen=True)
class DensitySpec:
    base: float = 1.0
    fourier: list[FourierTerm] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DensitySpec":
        return cls(
            float(data.get("base", 1.0)),
            [_build(FourierTerm, t) for t in data.get("fourier", [])],
        )

    def terms(self) -> list[dict[str, Any]]:
        return [asdict(t) for t in self.fourier]


@dataclass(frozen=True)
class SolverSpec:
    step: float = CONTINUATION_STEP
    max_steps: int = 10
    newton_tol: float = NEWTON_TOL
    max_newton: int = MAX_NEWTON
    armijo_factor: float = ARMIJO_FACTOR
    armijo_slope: float = ARMIJO_SLOPE
    linear_solver: str = LinearSolver.DIRECT.value

    def build(self) -> ContinuationSettings:
        return ContinuationSettings(
            step=self.step,
            max_steps=self.max_steps,
            newton_tol=self.newton_tol,
            max_newton=self.max_newton,
            armijo_factor=self.armijo_factor,
            armijo_slope=self.armijo_slope,
            linear_solver=LinearSolver(self.linear_solver),
        )


@dataclass(frozen=True)
class AuditSpec:
    k_max: int = K_MAX
    samples: int = AUDIT_SAMPLES
    seed: int = 0
    strategy: str = AuditStrategy.BOTH.value


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    cost: CostSpec = field(default_factory=CostSpec)
    rho: DensitySpec = field(default_factory=DensitySpec)
    rhobar: DensitySpec = field(default_factory=DensitySpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    audit: AuditSpec = field(default_factory=AuditSpec)
    tau: list[float] | None = None
    seed: int = 0
    out: str = "out"

    @classmethod
    def from_dict(cls, data: Any) -> "RunConfig":
        validate_schema(data)
        grid = GridSpec.from_dict(data.get("grid", {}))
        tau = data.get("tau")
        if tau is not None:
            if len(tau) != grid.dim:
                raise ConfigError(f"tau must be a list of {grid.dim} numbers")
            tau = [float(t) for t in tau]
        config = cls(
            grid=grid,
            cost=_build(CostSpec, data.get("cost", {})),
            rho=DensitySpec.from_dict(data.get("rho", {})),
            rhobar=DensitySpec.from_dict(data.get("rhobar", {})),
            solver=_build(SolverSpec, data.get("solver", {})),
            audit=_build(AuditSpec, data.get("audit", {})),
            tau=tau,
            seed=int(data.get("seed", 0)),
            out=data.get("out", "out"),
        )
        config.validate()
        return config

    def validate(self) -> None:
        """Build every value object once so range checks fire early."""
        grid = self.build_grid()
        cost = self.build_cost()
        if not cost.is_flat and len(cost.freq) != grid.dim:
            raise ConfigError(
                f"cost.freq has {len(cost.freq)} entries for dim {grid.dim}"
            )
        self.build_densities(grid)
        self.solver.build()

    def build_grid(self) -> PeriodicGrid:
        return self.grid.build()

    def build_cost(self) -> CostModel:
        return self.cost.build()

    def build_densities(self, grid: PeriodicGrid | None = None) -> DensityPair:
        grid = grid or self.build_grid()
        return DensityPair(
            fourier_density(grid, self.rho.terms(), self.rho.base),
            fourier_density(grid, self.rhobar.terms(), self.rhobar.base),
        )

    def tau_vector(self) -> list[float]:
        return list(self.tau) if self.tau is not None else [0.0] * self.grid.dim

    def to_dict(self) -> dict[str, Any]:
        return to_builtin(asdict(self))

    @property
    def digest(self) -> str:
        return config_hash(self.to_dict())


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file {path} does not exist") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    config = RunConfig.from_dict(data)
    logger.info(f"loaded config {path} ({config.digest})")
    return config
