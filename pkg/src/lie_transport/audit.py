import math
import logging
from typing import Any
from dataclasses import field, dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from lie_transport.cost import CostModel, cost_value
from lie_transport.grid import ScalarField, integrate, torus_displacement
from lie_transport.errors import ConfigError, CutLocusError, DensityMismatch
from lie_transport.interp import PeriodicCubic
from lie_transport.transport import TransportState
from lie_transport.utils.miscs import to_builtin, get_max_workers
from lie_transport.utils.types import AuditSummary, AuditStrategy
from lie_transport.utils.constants import (
    K_MAX,
    GAIN_TOL,
    AUDIT_SAMPLES,
    DENSITY_MATCH_TOL,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CycleViolation:
    """Plan cost of ``k`` pairs against the best cyclic reassignment.

    ``permutation[i]`` is the image index paired with point ``i``; it is
    ``None`` when every reassignment crossed the cut locus.
    """

    points: np.ndarray = field(repr=False)
    images: np.ndarray = field(repr=False)
    plan_cost: float
    best_reassignment_cost: float
    gain: float
    permutation: list[int] | None
    skipped: int = 0

    @property
    def k(self) -> int:
        return len(self.points)

    @property
    def is_violation(self) -> bool:
        return self.gain > GAIN_TOL

    def to_dict(self) -> dict[str, Any]:
        return to_builtin(
            {
                "k": self.k,
                "points": self.points,
                "images": self.images,
                "plan_cost": self.plan_cost,
                "best_reassignment_cost": self.best_reassignment_cost,
                "gain": self.gain,
                "permutation": self.permutation,
                "skipped": self.skipped,
            }
        )


@dataclass(frozen=True, eq=False)
class AuditReport:
    total_cost: float
    violations_found: int
    best: CycleViolation | None
    samples_checked: int
    seed: int
    skipped_pairs: int = 0
    strategy: AuditStrategy = AuditStrategy.BOTH

    def to_dict(self) -> AuditSummary:
        out: AuditSummary = {
            "total_cost": self.total_cost,
            "violations_found": self.violations_found,
            "samples_checked": self.samples_checked,
            "skipped_pairs": self.skipped_pairs,
            "seed": self.seed,
        }
        if self.best is not None:
            out["best"] = self.best.to_dict()
        return out


def transport_cost(state: TransportState) -> float:
    c = cost_value(state.cost, state.grid.points, state.T)
    return integrate(ScalarField(state.grid, c), state.dens.rho)


def cycle_gain(cost: CostModel, points: Any, images: Any) -> CycleViolation:
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    y = np.atleast_2d(np.asarray(images, dtype=np.float64))
    k = len(x)
    if k < 2 or x.shape != y.shape:
        raise ConfigError(
            f"cycle needs >= 2 matching points, got {x.shape} and {y.shape}"
        )
    plan = math.fsum(cost_value(cost, x, y))

    radius = cost.window.cut_radius
    best, best_perm, skipped = math.inf, None, 0
    for s in range(1, k):
        perm = [(i + s) % k for i in range(k)]
        ys = y[perm]
        if np.any(np.abs(torus_displacement(x, ys)) >= radius):
            skipped += 1
            continue
        total = math.fsum(cost_value(cost, x, ys))
        if total < best:
            best, best_perm = total, perm
    return CycleViolation(x, y, plan, best, plan - best, best_perm, skipped)


def _displacement_interp(state: TransportState) -> list[PeriodicCubic]:
    g = state.grid
    disp = state.displacement
    return [
        PeriodicCubic(ScalarField(g, disp[..., a])) for a in range(g.dim)
    ]


def trace_orbit(
    state: TransportState,
    start: np.ndarray,
    interp: list[PeriodicCubic] | None = None,
) -> np.ndarray | None:
    """Follow ``x -> T(x)`` until it returns near ``start``.

    Returns the visited points (the cycle) or ``None`` when the orbit does
    not close within ``max(sizes)`` hops.
    """
    g = state.grid
    interp = interp or _displacement_interp(state)
    radius = 2.0 * g.max_spacing
    x = np.mod(np.asarray(start, dtype=np.float64), 1.0)
    orbit = [x]
    for _ in range(max(g.sizes)):
        step = np.array([float(f(x[None])[0]) for f in interp])
        x = np.mod(x + step, 1.0)
        if np.linalg.norm(torus_displacement(orbit[0], x)) <= radius:
            return np.array(orbit) if len(orbit) >= 2 else None
        orbit.append(x)
    return None


def _evaluate(cost: CostModel, pts: np.ndarray, imgs: np.ndarray) -> Any:
    try:
        return cycle_gain(cost, pts, imgs)
    except CutLocusError as e:
        logger.debug(f"cycle skipped: {e}")
        return None


def _random_tuples(
    state: TransportState, rng: np.random.Generator, k_max: int, count: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    pts = state.grid.points.reshape(-1, state.grid.dim)
    imgs = state.T.reshape(-1, state.grid.dim)
    out = []
    for _ in range(count):
        k = int(rng.integers(2, k_max + 1))
        idx = rng.integers(0, len(pts), size=k)
        out.append((pts[idx], imgs[idx]))
    return out


def _orbit_tuples(
    state: TransportState, rng: np.random.Generator, count: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    interp = _displacement_interp(state)
    out = []
    for start in rng.random((count, state.grid.dim)):
        cyc = trace_orbit(state, start, interp)
        if cyc is None:
            continue
        steps = np.stack([f(cyc) for f in interp], axis=-1)
        out.append((cyc, np.mod(cyc + steps, 1.0)))
    return out


def cyclical_monotonicity_audit(
    state: TransportState,
    k_max: int = K_MAX,
    num_random: int = AUDIT_SAMPLES,
    seed: int = 0,
    strategy: AuditStrategy = AuditStrategy.BOTH,
) -> AuditReport:
    strategy = AuditStrategy(strategy)
    if k_max < 2:
        raise ConfigError(f"k_max must be >= 2, got {k_max}")
    if num_random < 0:
        raise ConfigError(f"num_random must be >= 0, got {num_random}")

    rng_random, rng_orbit = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)
    )
    tuples = []
    if strategy in (AuditStrategy.RANDOM, AuditStrategy.BOTH):
        tuples += _random_tuples(state, rng_random, k_max, num_random)
    if strategy in (AuditStrategy.ORBIT, AuditStrategy.BOTH):
        orbits = _orbit_tuples(state, rng_orbit, num_random)
        logger.debug(f"{len(orbits)} of {num_random} orbits closed")
        tuples += orbits

    with ThreadPoolExecutor(max_workers=get_max_workers()) as pool:
        results = list(
            pool.map(lambda t: _evaluate(state.cost, *t), tuples)
        )

    done = [r for r in results if r is not None]
    skipped = sum(r.skipped for r in done) + (len(results) - len(done))
    found = sorted(
        (r for r in done if r.is_violation),
        key=lambda r: (-r.gain, tuple(r.points.ravel().tolist())),
    )
    report = AuditReport(
        total_cost=transport_cost(state),
        violations_found=len(found),
        best=found[0] if found else None,
        samples_checked=len(tuples),
        seed=seed,
        skipped_pairs=skipped,
        strategy=strategy,
    )
    best_gain = found[0].gain if found else 0.0
    logger.info(
        f"audit ({strategy.value}, seed {seed}): {len(found)} violations in "
        f"{len(tuples)} cycles, best gain {best_gain:.6f}"
    )
    return report


def optimality_gap(state: TransportState) -> float:
    """Cost of the plan minus the cost of leaving every point in place."""
    diff = np.max(np.abs(state.dens.rho.values - state.dens.rhobar.values))
    if diff > DENSITY_MATCH_TOL:
        raise DensityMismatch(
            f"optimality gap needs rho == rhobar (max diff {diff:.3e})"
        )
    pts = state.grid.points
    stay = ScalarField(state.grid, cost_value(state.cost, pts, pts))
    return transport_cost(state) - integrate(stay, state.dens.rho)
