import math
import logging
from typing import Any
from functools import cached_property

import numpy as np

from lie_transport.cost import CostModel, check_twist_window
from lie_transport.grid import (
    OneFormField,
    ScalarField,
    PeriodicGrid,
    d0,
    d1,
)
from lie_transport.audit import (
    AuditReport,
    transport_cost,
    cyclical_monotonicity_audit,
)
from lie_transport.hodge import (
    MetricField,
    HarmonicBasis,
    codiff_1,
    harmonic_basis,
    inner_product_k,
)
from lie_transport.config import RunConfig
from lie_transport.moduli import (
    ModuliChart,
    ContinuationSettings,
    solve_lie,
    closed_form,
    verify_dphi,
    continue_family,
)
from lie_transport.transport import (
    DensityPair,
    TransportState,
    lb_check,
    id1_defect,
    assemble_state,
    theta_consistency,
    pushforward_residual,
    volume_element_check,
)
from lie_transport.utils.types import LBReport, DPhiReport, AuditStrategy
from lie_transport.utils.constants import DPHI_EPS

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
PROBE_AMPLITUDE = 0.01
ID1_TOL_FACTOR = 100.0  # w - b DT is O(h^2)
COMPLEX_TOL = 1e-13
ADJOINT_TOL = 1e-12


def probe_potential(grid: PeriodicGrid, amplitude: float) -> ScalarField:
    """Smooth non-solution potential ``a prod_k sin(2 pi x_k)``."""
    return ScalarField.sample(
        grid,
        lambda *x: amplitude * np.prod([np.sin(TWO_PI * c) for c in x], axis=0),
    )


def unit_trig(grid: PeriodicGrid) -> ScalarField:
    """``sqrt(2) cos(2 pi sum x_k)``, unit L2 norm on the torus."""
    return ScalarField.sample(
        grid, lambda *x: math.sqrt(2.0) * np.cos(TWO_PI * sum(x))
    )


def default_zeta(grid: PeriodicGrid) -> OneFormField:
    """``sin(2 pi x_2) dx^1``, a non-closed test direction."""

    def comps(*x: np.ndarray) -> list[Any]:
        out: list[Any] = [0.0] * grid.dim
        out[0] = np.sin(TWO_PI * x[1])
        return out

    return OneFormField.sample(grid, comps)


class Experiment:
    """Builds grid, cost and densities from a config and runs the checks."""

    config: RunConfig

    def __init__(self, config: RunConfig | None = None):
        self.config = config or RunConfig()
        self.config.validate()

    @cached_property
    def grid(self) -> PeriodicGrid:
        return self.config.build_grid()

    @cached_property
    def cost(self) -> CostModel:
        return self.config.build_cost()

    @cached_property
    def dens(self) -> DensityPair:
        return self.config.build_densities(self.grid)

    @cached_property
    def settings(self) -> ContinuationSettings:
        return self.config.solver.build()

    @property
    def tau(self) -> np.ndarray:
        return np.asarray(self.config.tau_vector(), dtype=np.float64)

    def densities_on(self, grid: PeriodicGrid) -> DensityPair:
        return self.config.build_densities(grid)

    def probe_state(self, grid: PeriodicGrid | None = None) -> TransportState:
        """A smooth state off the solution set (``theta != 0``)."""
        grid = grid or self.grid
        dens = self.dens if grid == self.grid else self.densities_on(grid)
        phi = probe_potential(grid, PROBE_AMPLITUDE)
        return assemble_state(
            grid, self.cost, dens, closed_form(grid, self.tau, phi)
        )

    def solve(self, tau: Any = None) -> ModuliChart:
        tau = self.tau if tau is None else tau
        return solve_lie(self.cost, self.dens, tau, None, self.settings)

    def deform(
        self,
        direction: int = 1,
        steps: int | None = None,
        step: float | None = None,
    ) -> list[ModuliChart]:
        settings = ContinuationSettings(
            step=self.settings.step if step is None else step,
            max_steps=self.settings.max_steps if steps is None else steps,
            newton_tol=self.settings.newton_tol,
            max_newton=self.settings.max_newton,
            armijo_factor=self.settings.armijo_factor,
            armijo_slope=self.settings.armijo_slope,
            max_halvings=self.settings.max_halvings,
            linear_solver=self.settings.linear_solver,
        )
        return continue_family(self.solve(), direction, settings)

    def audit(
        self,
        state: TransportState | None = None,
        k_max: int | None = None,
        samples: int | None = None,
        seed: int | None = None,
        strategy: AuditStrategy | str | None = None,
    ) -> AuditReport:
        spec = self.config.audit
        state = state or self.solve().state
        return cyclical_monotonicity_audit(
            state,
            k_max=spec.k_max if k_max is None else k_max,
            num_random=spec.samples if samples is None else samples,
            seed=spec.seed if seed is None else seed,
            strategy=AuditStrategy(strategy or spec.strategy),
        )

    def lb_check(self, sizes: list[int] | None = None) -> list[LBReport]:
        sizes = sizes or [self.grid.sizes[0]]
        reports = []
        for s in sizes:
            grid = PeriodicGrid.cube(self.grid.dim, s)
            reports.append(lb_check(self.probe_state(grid), unit_trig(grid)))
        return reports

    def dphi_check(
        self,
        zeta: OneFormField | None = None,
        eps_list: tuple[float, ...] = DPHI_EPS,
    ) -> DPhiReport:
        chart = self.solve()
        return verify_dphi(
            chart.state, zeta or default_zeta(self.grid), eps_list
        )

    def hodge_info(self, metric: str = "state") -> HarmonicBasis:
        if metric == "flat":
            m = MetricField.flat(self.grid)
        else:
            m = MetricField.from_state(self.solve().state)
        return harmonic_basis(m, self.grid.dim)

    def verify(self, trials: int = 10) -> dict[str, Any]:
        """Discrete complex, twist window, adjointness and id1 checks."""
        g = self.grid
        rng = np.random.default_rng(self.config.seed)
        checks: dict[str, dict[str, Any]] = {}

        worst = 0.0
        for _ in range(trials):
            u = ScalarField(g, rng.standard_normal(g.shape))
            du = d0(u)
            worst = max(worst, d1(du).sup_norm() / max(du.sup_norm(), 1e-300))
        checks["complex"] = {"value": worst, "passed": worst <= COMPLEX_TOL}

        twist = check_twist_window(self.cost, dim=g.dim)
        checks["twist"] = {"value": twist["min_eig"], "passed": twist["passed"]}

        state = self.probe_state()
        metric = MetricField.from_state(state)
        worst = 0.0
        for _ in range(trials):
            a = ScalarField(g, rng.standard_normal(g.shape))
            eta = OneFormField(g, rng.standard_normal((g.dim, *g.shape)))
            lhs = inner_product_k(metric, d0(a), eta)
            rhs = inner_product_k(metric, a, codiff_1(metric, eta))
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
        checks["adjoint"] = {"value": worst, "passed": worst <= ADJOINT_TOL}

        defect = id1_defect(state)
        bound = ID1_TOL_FACTOR * g.max_spacing**2
        checks["id1"] = {"value": defect, "passed": defect <= bound}
        checks["theta_consistency"] = {
            "value": theta_consistency(state),
            "passed": True,
        }
        if g.dim >= 3:
            checks["volume_element"] = {
                "value": volume_element_check(state),
                "passed": True,
            }
        passed = all(c["passed"] for c in checks.values())
        logger.info(f"verify: passed={passed}")
        return {"checks": checks, "passed": passed}

    @staticmethod
    def chart_metrics(chart: ModuliChart) -> dict[str, Any]:
        return {
            "tau": chart.tau.tolist(),
            "converged": chart.converged,
            "iterations": chart.iterations,
            "residual_norm": chart.residual_norm,
            "theta_norm": chart.theta_norm,
            "class_constants": chart.class_constants.tolist(),
            "mass_defect": chart.mass_defect,
            "transport_cost": transport_cost(chart.state),
            "pushforward_norm": pushforward_residual(chart.state).sup_norm(),
            "phi_norm": chart.phi.sup_norm(),
            "nonconvex": chart.state.nonconvex,
        }
