import numpy as np
import pytest

from lie_transport.audit import (
    cycle_gain,
    trace_orbit,
    transport_cost,
    optimality_gap,
    cyclical_monotonicity_audit,
)
from lie_transport.errors import ConfigError, DensityMismatch
from lie_transport.moduli import ModuliChart, solve_lie
from lie_transport.transport import TransportState
from lie_transport.utils.types import AuditStrategy


@pytest.fixture(scope="module")
def shifted(quadratic, uniform2) -> ModuliChart:
    return solve_lie(quadratic, uniform2, [0.25, 0.0])


def test_cycle_gain_four_points(quadratic):
    x = np.array([[0.0, 0.5], [0.25, 0.5], [0.5, 0.5], [0.75, 0.5]])
    y = np.mod(x + [0.25, 0.0], 1.0)
    cyc = cycle_gain(quadratic, x, y)
    assert cyc.k == 4
    assert cyc.plan_cost == pytest.approx(0.125)
    assert cyc.best_reassignment_cost == pytest.approx(0.0, abs=1e-15)
    assert cyc.gain == pytest.approx(0.125)
    # the half-period shift is past the cut radius
    assert cyc.skipped == 1
    assert cyc.permutation == [3, 0, 1, 2]
    assert cyc.is_violation


@pytest.mark.parametrize("name", ["quadratic", "perturbed"])
def test_cycle_gain_ignores_cycle_rotation(request, name: str):
    cost = request.getfixturevalue(name)
    rng = np.random.default_rng(8)
    x = rng.random((5, 2))
    y = np.mod(x + rng.uniform(-0.15, 0.15, x.shape), 1.0)
    ref = cycle_gain(cost, x, y)
    for r in range(1, 5):
        cyc = cycle_gain(cost, np.roll(x, r, axis=0), np.roll(y, r, axis=0))
        assert cyc.plan_cost == ref.plan_cost
        assert cyc.gain == ref.gain
        assert cyc.skipped == ref.skipped


def test_cycle_gain_rejects_short_cycles(quadratic):
    with pytest.raises(ConfigError):
        cycle_gain(quadratic, [[0.1, 0.1]], [[0.2, 0.1]])
    with pytest.raises(ConfigError):
        cycle_gain(quadratic, [[0.1, 0.1], [0.2, 0.2]], [[0.2, 0.1]])


def test_trace_orbit(shifted: ModuliChart, identity2: ModuliChart):
    orbit = trace_orbit(shifted.state, np.array([0.1, 0.3]))
    assert orbit is not None
    assert len(orbit) == 4
    np.testing.assert_allclose(orbit[:, 0], [0.1, 0.35, 0.6, 0.85], atol=1e-12)
    assert trace_orbit(identity2.state, np.array([0.1, 0.3])) is None


def test_orbit_audit_finds_four_cycles(shifted: ModuliChart):
    report = cyclical_monotonicity_audit(
        shifted.state, num_random=1000, strategy=AuditStrategy.ORBIT
    )
    assert report.total_cost == pytest.approx(0.03125, abs=1e-12)
    assert report.violations_found > 0
    assert report.best is not None
    assert report.best.k == 4
    assert report.best.gain >= 0.12


def test_orbit_audit_finds_ten_cycles(quadratic, uniform2):
    chart = solve_lie(quadratic, uniform2, [0.1, 0.0])
    report = cyclical_monotonicity_audit(
        chart.state, num_random=200, strategy="orbit"
    )
    assert report.best is not None
    assert report.best.k == 10
    assert report.best.gain == pytest.approx(0.05, abs=1e-10)


def test_identity_has_no_violations(identity2: ModuliChart):
    report = cyclical_monotonicity_audit(
        identity2.state, num_random=500, strategy=AuditStrategy.BOTH
    )
    assert report.violations_found == 0
    assert report.best is None
    assert "best" not in report.to_dict()
    assert transport_cost(identity2.state) == pytest.approx(0.0, abs=1e-15)


def test_audit_is_deterministic(shifted: ModuliChart, monkeypatch):
    monkeypatch.setenv("LT_THREADS", "1")
    one = cyclical_monotonicity_audit(shifted.state, num_random=300, seed=7)
    monkeypatch.setenv("LT_THREADS", "4")
    four = cyclical_monotonicity_audit(shifted.state, num_random=300, seed=7)
    assert one.to_dict() == four.to_dict()

    other = cyclical_monotonicity_audit(shifted.state, num_random=300, seed=8)
    assert other.seed == 8


def test_audit_argument_checks(shifted: ModuliChart):
    with pytest.raises(ConfigError):
        cyclical_monotonicity_audit(shifted.state, k_max=1)
    with pytest.raises(ConfigError):
        cyclical_monotonicity_audit(shifted.state, num_random=-1)
    with pytest.raises(ValueError):
        cyclical_monotonicity_audit(shifted.state, strategy="greedy")


def test_optimality_gap(shifted: ModuliChart, probe2: TransportState):
    assert optimality_gap(shifted.state) == pytest.approx(0.03125, abs=1e-12)
    with pytest.raises(DensityMismatch):
        optimality_gap(probe2)
