import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad

from lie_transport.cost import CostModel
from lie_transport.grid import (
    OneFormField,
    ScalarField,
    PeriodicGrid,
    d0,
    d1,
    torus_displacement,
)
from lie_transport.audit import transport_cost
from lie_transport.hodge import MetricField, harmonic_basis
from lie_transport.errors import (
    ConfigError,
    CutLocusError,
    NoConvergence,
    DimensionError,
    SpectralGapTooSmall,
)
from lie_transport.moduli import (
    ModuliChart,
    ContinuationSettings,
    solve_lie,
    image_mean,
    closed_form,
    verify_dphi,
    phi_residual,
    n2_kernel_dim,
    family_record,
    continue_family,
    tangent_harmonicity,
)
from lie_transport.transport import (
    DensityPair,
    id1_defect,
    assemble_state,
    fourier_density,
    pushforward_residual,
)
from lie_transport.experiment import default_zeta, probe_potential
from lie_transport.utils.types import LinearSolver, KernelVariant, TangentReport

from tests.conftest import BUMP, TILT, get_run_slow

run_slow = get_run_slow()

TWO_PI = 2.0 * math.pi


def test_closed_form(grid2: PeriodicGrid):
    phi = probe_potential(grid2, 0.02)
    eta = closed_form(grid2, np.array([0.1, -0.2]), phi)
    np.testing.assert_allclose(eta.means(), [0.1, -0.2], atol=1e-14)
    assert d1(eta).sup_norm() < 1e-14


def test_translation_is_immediate(quadratic, uniform2):
    chart = solve_lie(quadratic, uniform2, [0.1, 0.0])
    assert chart.converged
    assert chart.iterations == 0
    assert chart.phi.sup_norm() == 0.0
    np.testing.assert_allclose(
        torus_displacement(uniform2.grid.points, chart.state.T)[..., 0], 0.1
    )


def test_translation_family(quadratic, uniform2):
    base = solve_lie(quadratic, uniform2, [0.0, 0.0])
    settings = ContinuationSettings(step=0.02, max_steps=10)
    charts = continue_family(base, 1, settings)
    assert len(charts) == 11
    for chart in charts:
        tau = float(chart.tau[0])
        assert chart.converged
        assert chart.phi.sup_norm() <= 1e-10
        assert transport_cost(chart.state) == pytest.approx(
            0.5 * tau**2, abs=1e-8
        )
        assert pushforward_residual(chart.state).sup_norm() <= 1e-10
    record = family_record(charts)
    assert [r["step"] for r in record] == list(range(11))
    assert record[-1]["tau"] == pytest.approx([0.2, 0.0])
    assert record[-1]["optimality_gap"] == pytest.approx(0.02, abs=1e-8)


def _density_cdf(x: float) -> float:
    value, _ = quad(lambda s: 1.0 + 0.2 * math.cos(TWO_PI * s), 0.0, x)
    return value


def test_monotone_rearrangement():
    grid = PeriodicGrid((64, 64))
    dens = DensityPair(
        fourier_density(grid, BUMP), ScalarField.constant(grid, 1.0)
    )
    chart = solve_lie(CostModel.quadratic(), dens, [0.0, 0.0])
    assert chart.converged
    cdf = np.array([_density_cdf(a) for a in grid.axis(0)])
    err = torus_displacement(cdf[:, None], chart.state.T[..., 0])
    assert float(np.max(np.abs(err))) <= 1e-4
    drift = torus_displacement(grid.coords[1], chart.state.T[..., 1])
    assert float(np.max(np.abs(drift))) < 1e-10
    assert abs(chart.mass_defect) < 1e-12


@pytest.mark.parametrize("solver", [LinearSolver.DIRECT, LinearSolver.BICGSTAB])
def test_nonuniform_solve(perturbed, solver: LinearSolver):
    grid = PeriodicGrid((16, 16))
    dens = DensityPair.from_fourier(grid, BUMP, [{"k": [1, 1], "sin": 0.1}])
    settings = ContinuationSettings(linear_solver=solver)
    chart = solve_lie(perturbed, dens, [0.05, 0.0], settings=settings)
    assert chart.converged
    assert chart.residual_norm <= settings.newton_tol
    assert chart.history[-1] < chart.history[0]
    assert not chart.state.nonconvex


def test_solver_errors(quadratic, uniform2, bumpy2):
    with pytest.raises(DimensionError):
        solve_lie(quadratic, uniform2, [0.1, 0.0, 0.0])
    with pytest.raises(CutLocusError):
        solve_lie(quadratic, uniform2, [0.41, 0.0])
    settings = ContinuationSettings(max_newton=1)
    with pytest.raises(NoConvergence) as err:
        solve_lie(quadratic, bumpy2, [0.0, 0.0], settings=settings)
    partial = err.value.partial
    assert isinstance(partial, ModuliChart)
    assert not partial.converged
    assert len(partial.history) == 2


def test_continuation_edges(quadratic, uniform2, identity2: ModuliChart):
    assert continue_family(identity2, 1, ContinuationSettings(step=0.0)) == [
        identity2
    ]
    with pytest.raises(ConfigError):
        continue_family(identity2, 3)
    with pytest.raises(ConfigError):
        ContinuationSettings(armijo_factor=1.0)

    base = solve_lie(quadratic, uniform2, [0.3, 0.0])
    with pytest.raises(CutLocusError) as err:
        continue_family(base, 1, ContinuationSettings(step=0.05, max_steps=5))
    partial = err.value.partial
    assert isinstance(partial, list)
    assert 2 <= len(partial) <= 3
    assert all(c.converged for c in partial)


@pytest.fixture(scope="module")
def rearranged(grid2: PeriodicGrid, quadratic) -> ModuliChart:
    dens = DensityPair(
        fourier_density(grid2, BUMP), ScalarField.constant(grid2, 1.0)
    )
    return solve_lie(quadratic, dens, [0.0, 0.0])


@pytest.fixture(scope="module")
def bumpy_chart(perturbed, bumpy2: DensityPair) -> ModuliChart:
    return solve_lie(perturbed, bumpy2, [0.05, 0.0])


def test_class_constants_shrink_with_h(perturbed):
    peaks = []
    for size in (32, 64):
        grid = PeriodicGrid((size, size))
        dens = DensityPair.from_fourier(grid, BUMP, TILT)
        chart = solve_lie(perturbed, dens, [0.05, 0.0])
        assert chart.converged
        assert len(chart.class_constants) == 4
        peak = float(np.max(np.abs(chart.class_constants)))
        # theta equals the class constants up to the Newton residual
        assert abs(chart.theta_norm - peak) <= chart.residual_norm + 1e-15
        peaks.append(peak)
    assert peaks[0] > 1e-7
    assert 3.0 <= peaks[0] / peaks[1] <= 5.5


def test_newton_converges_quadratically(bumpy_chart: ModuliChart):
    merits = bumpy_chart.history
    assert bumpy_chart.converged
    tail = [(a, b) for a, b in zip(merits, merits[1:]) if a < 1e-2]
    assert tail
    for a, b in tail:
        assert b <= 1e3 * a * a + 1e-13


def test_phi_vanishes_at_own_increment(bumpy_chart: ModuliChart):
    state = bumpy_chart.state
    res = phi_residual(state, OneFormField.zeros(state.grid))
    defect = id1_defect(state)
    assert res.kahler.sup_norm() <= 2.0 * defect + 1e-12
    assert res.mass.sup_norm() <= 10.0 * (bumpy_chart.theta_norm + defect)


def test_image_is_mean_zero(grid2: PeriodicGrid, rearranged: ModuliChart):
    zetas = [
        default_zeta(grid2) * 0.05,
        closed_form(grid2, [0.02, -0.01], probe_potential(grid2, 0.01)),
    ]
    for zeta in zetas:
        assert abs(image_mean(rearranged.state, zeta)) <= 1e-10


def test_dphi_slopes(grid2: PeriodicGrid, rearranged: ModuliChart):
    report = verify_dphi(rearranged.state, default_zeta(grid2))
    assert report["kahler_sign"] == -1
    assert report["mass_factor"] == "rho*exp(theta)"
    assert len(report["rows"]) == 5
    for row in report["rows"]:
        assert row["kahler_dist"] <= 1e-5
        assert row["mass_dist"] <= 1e-5
        assert abs(row["image_mean"]) <= 1e-10
    assert "codiff_factor" not in report


def test_tangent_harmonicity(grid3: PeriodicGrid, quadratic):
    dens = DensityPair.uniform(grid3)
    base = solve_lie(quadratic, dens, [0.0, 0.0, 0.0])
    nxt = continue_family(base, 2, ContinuationSettings(step=0.05, max_steps=1))
    report = tangent_harmonicity(base, nxt[-1])
    assert report["dtau"] == pytest.approx(0.05)
    assert report["harmonic_norm"] == pytest.approx(1.0, abs=1e-8)
    assert report["exact_rel"] < 1e-8
    assert report["coexact_rel"] < 1e-8
    assert report["parasitic_rel"] < 1e-8


def _bump3(grid: PeriodicGrid) -> DensityPair:
    return DensityPair(
        fourier_density(grid, [{"k": [1, 0, 0], "cos": 0.2}]),
        ScalarField.constant(grid, 1.0),
    )


def _tangent_report(grid: PeriodicGrid) -> TangentReport:
    base = solve_lie(CostModel.quadratic(), _bump3(grid), [0.0, 0.0, 0.0])
    nxt = continue_family(base, 2, ContinuationSettings(step=0.02, max_steps=1))
    return tangent_harmonicity(base, nxt[-1])


def test_tangent_harmonicity_nonuniform(grid3: PeriodicGrid):
    report = _tangent_report(grid3)
    assert report["harmonic_norm"] > 0.5
    assert report["exact_rel"] < 0.2
    assert report["coexact_rel"] < 1e-8


@pytest.mark.skipif(not run_slow, reason="set LT_RUN_SLOW=true")
def test_tangent_harmonicity_refines():
    coarse = _tangent_report(PeriodicGrid.cube(3, 8))
    fine = _tangent_report(PeriodicGrid.cube(3, 16))
    assert fine["exact_rel"] < coarse["exact_rel"] / 2.5
    assert fine["coexact_rel"] < 1e-8


def test_non_tangent_direction_is_not_harmonic(grid3: PeriodicGrid, quadratic):
    base = solve_lie(quadratic, _bump3(grid3), [0.0, 0.0, 0.0])
    dtau = np.array([0.0, 0.02, 0.0])
    eta = (
        base.eta
        + OneFormField.constant(grid3, dtau)
        + d0(probe_potential(grid3, 0.002))
    )
    off = replace(
        base,
        tau=base.tau + dtau,
        state=assemble_state(grid3, quadratic, base.dens, eta),
    )
    assert tangent_harmonicity(base, off)["exact_rel"] > 0.1


def test_tangent_harmonicity_needs_three_dimensions(identity2: ModuliChart):
    with pytest.raises(DimensionError):
        tangent_harmonicity(identity2, identity2)


def test_n2_kernel_identity(quadratic):
    grid = PeriodicGrid((16, 16))
    eta = OneFormField.zeros(grid)
    state = assemble_state(grid, quadratic, DensityPair.uniform(grid), eta)
    report = n2_kernel_dim(state)
    assert report["dim"] == 2
    assert report["gap_ratio"] >= 100.0
    assert report["variant"] == "full"


def test_n2_kernel_without_kahler_rows(quadratic):
    grid = PeriodicGrid((48, 48))
    eta = OneFormField.zeros(grid)
    state = assemble_state(grid, quadratic, DensityPair.uniform(grid), eta)
    with pytest.raises(SpectralGapTooSmall) as err:
        n2_kernel_dim(state, KernelVariant.NO_KAHLER)
    assert err.value.report["variant"] == "no-kahler"


def test_n2_kernel_needs_two_dimensions(grid3: PeriodicGrid, quadratic):
    eta = OneFormField.zeros(grid3)
    state = assemble_state(grid3, quadratic, DensityPair.uniform(grid3), eta)
    with pytest.raises(DimensionError):
        n2_kernel_dim(state)


@pytest.mark.skipif(not run_slow, reason="set LT_RUN_SLOW=true")
def test_n2_kernel_converged_state():
    grid = PeriodicGrid((48, 48))
    dens = DensityPair(
        fourier_density(grid, BUMP), ScalarField.constant(grid, 1.0)
    )
    chart = solve_lie(CostModel.perturbed(0.01, (1, 1)), dens, [0.1, 0.0])
    report = n2_kernel_dim(chart.state)
    assert report["dim"] == 2
    assert report["gap_ratio"] >= 100.0
    assert report["constant_fraction"] < 1 - 1e-6
    control = n2_kernel_dim(chart.state, KernelVariant.NO_FIRST_ORDER)
    assert control["dim"] == 2
    assert control["constant_fraction"] > 1 - 1e-6
    assert control["variant"] == "no-first-order"


@pytest.mark.skipif(not run_slow, reason="set LT_RUN_SLOW=true")
@pytest.mark.parametrize("k", [[1, 0, 0], [1, 1, 1]])
def test_dphi_harmonic_directions(k):
    grid = PeriodicGrid.cube(3, 16)
    dens = DensityPair(
        fourier_density(grid, [{"k": k, "cos": 0.2}]),
        ScalarField.constant(grid, 1.0),
    )
    chart = solve_lie(CostModel.quadratic(), dens, [0.0, 0.0, 0.0])
    exact = verify_dphi(chart.state, d0(probe_potential(grid, 0.1)))
    scale = exact["rows"][-1]["mass_norm"]
    basis = harmonic_basis(MetricField.from_state(chart.state), 3)
    for zeta in basis.forms:
        report = verify_dphi(chart.state, zeta, eps_list=(1e-3, 1e-4))
        assert report["rows"][-1]["kahler_norm"] < 1e-4
        assert report["rows"][-1]["mass_norm"] < 1e-2 * scale


@pytest.mark.skipif(not run_slow, reason="set LT_RUN_SLOW=true")
def test_dphi_codiff_factor():
    grid = PeriodicGrid.cube(3, 16)
    dens = DensityPair(
        fourier_density(grid, [{"k": [1, 0, 0], "cos": 0.2}]),
        ScalarField.constant(grid, 1.0),
    )
    chart = solve_lie(CostModel.quadratic(), dens, [0.0, 0.0, 0.0])
    zeta = d0(probe_potential(grid, 0.1))
    report = verify_dphi(chart.state, zeta)
    assert report["rows"][-1]["kahler_norm"] < 1e-4
    assert "codiff_factor" in report
