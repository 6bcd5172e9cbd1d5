import math
import logging
from typing import Any
from dataclasses import field, dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from lie_transport.cost import CostModel, cost_jet
from lie_transport.grid import (
    OneFormField,
    ScalarField,
    PeriodicGrid,
    TwoFormField,
    d0,
    d1,
    integrate,
    d1_matrix,
    map_jacobian,
)
from lie_transport.audit import transport_cost, optimality_gap
from lie_transport.hodge import (
    MetricField,
    HarmonicBasis,
    codiff_1,
    parity_filter,
    hodge_decompose,
)
from lie_transport.errors import (
    ConfigError,
    CutLocusError,
    NoConvergence,
    DimensionError,
    NonConvexBreakdown,
    SpectralGapTooSmall,
)
from lie_transport.transport import (
    DensityPair,
    TransportState,
    assemble_state,
    linearized_matrix,
    pushforward_residual,
    mass_linearization_D,
    mass_linearization_matrix,
)
from lie_transport.utils.miscs import relative
from lie_transport.utils.types import (
    DPhiRow,
    DPhiReport,
    FamilyStep,
    KernelReport,
    LinearSolver,
    KernelVariant,
    TangentReport,
)
from lie_transport.utils.constants import (
    DPHI_EPS,
    EIGEN_TOL,
    GAP_FLOOR,
    MAX_NEWTON,
    NEWTON_TOL,
    ARMIJO_SLOPE,
    SPECTRAL_GAP,
    ARMIJO_FACTOR,
    EIGEN_MAX_ITER,
    QUADRATIC_REGIME,
    CONTINUATION_STEP,
    KERNEL_REL_SHIFT,
    ARMIJO_MAX_HALVINGS,
    KERNEL_REL_THRESHOLD,
    KERNEL_SINGULAR_VALUES,
)
from lie_transport.utils.decorators import requires_dim

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContinuationSettings:
    step: float = CONTINUATION_STEP
    max_steps: int = 10
    newton_tol: float = NEWTON_TOL
    max_newton: int = MAX_NEWTON
    armijo_factor: float = ARMIJO_FACTOR
    armijo_slope: float = ARMIJO_SLOPE
    max_halvings: int = ARMIJO_MAX_HALVINGS
    linear_solver: LinearSolver = LinearSolver.DIRECT

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "linear_solver", LinearSolver(self.linear_solver)
        )
        self._validate()

    def _validate(self) -> None:
        if self.step < 0.0 or not math.isfinite(self.step):
            raise ConfigError(f"step must be >= 0, got {self.step}")
        if self.max_steps < 0:
            raise ConfigError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.newton_tol <= 0.0 or self.max_newton < 1:
            raise ConfigError("newton_tol and max_newton must be positive")
        if not 0.0 < self.armijo_factor < 1.0:
            raise ConfigError(
                f"armijo_factor must lie in (0, 1), got {self.armijo_factor}"
            )
        if not 0.0 < self.armijo_slope < 1.0:
            raise ConfigError(
                f"armijo_slope must lie in (0, 1), got {self.armijo_slope}"
            )


def closed_form(
    grid: PeriodicGrid, tau: np.ndarray, phi: ScalarField
) -> OneFormField:
    """``sum_a tau_a dx^a + d phi``."""
    return OneFormField.constant(grid, tau) + d0(phi)


@dataclass(frozen=True, eq=False)
class ModuliChart:
    """One solved member of the family at fixed ``tau``.

    Newton converges on ``theta - X c`` where ``X`` holds the parity-class
    indicators, so ``residual_norm`` measures convergence modulo one
    constant per class. Those constants are the discretisation defect of
    the mass equation, ``O(h^2)`` under refinement, and ``theta_norm``
    reports ``|theta|_inf`` itself.
    """

    cost: CostModel
    dens: DensityPair
    grid: PeriodicGrid
    tau: np.ndarray
    phi: ScalarField = field(repr=False)
    state: TransportState = field(repr=False)
    converged: bool
    residual_norm: float
    iterations: int = 0
    class_constants: np.ndarray = field(default_factory=lambda: np.zeros(0))
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def eta(self) -> OneFormField:
        return self.state.eta

    @property
    def theta_norm(self) -> float:
        """Sup norm of theta itself, class constants included."""
        return self.state.theta.sup_norm()

    @property
    def mass_defect(self) -> float:
        """Mean of the per-parity-class mass constants."""
        c = self.class_constants
        return float(np.mean(c)) if c.size else 0.0


@dataclass(frozen=True, eq=False)
class PhiResidual:
    kahler: TwoFormField
    mass: ScalarField


def deformed_map(base: TransportState, zeta: OneFormField) -> np.ndarray:
    """``T_V = T + b^{-1} zeta`` taken mod 1."""
    step = np.einsum("...si,...i->...s", base.jet.b_inv, zeta.at_nodes())
    return np.mod(base.T + step, 1.0)


def phi_residual(base: TransportState, zeta: OneFormField) -> PhiResidual:
    g = base.grid
    if zeta.grid != g:
        raise ConfigError("zeta lives on another grid")
    tv = deformed_map(base, zeta)
    jet = cost_jet(base.cost, g.points, tv)
    dtv = map_jacobian(g, tv)
    # b_{as} dT^s/dx_b, antisymmetrised over (a, b)
    bdt = np.einsum("...as,...sb->...ab", jet.b, dtv)
    kahler = np.stack([bdt[..., a, b] - bdt[..., b, a] for a, b in g.pairs])
    rb = base.dens.rhobar_interp(tv)
    mass = rb * np.linalg.det(dtv) - base.dens.rho.values
    return PhiResidual(TwoFormField(g, kahler), ScalarField(g, mass))


def image_mean(base: TransportState, zeta: OneFormField) -> float:
    """Integral of the mass component of ``phi_residual``."""
    return integrate(phi_residual(base, zeta).mass)


def _dist(slope: Any, target: Any) -> float:
    """Relative L2 distance, absolute when the target vanishes."""
    den = target.l2_norm()
    num = (slope - target).l2_norm()
    return relative(num, den) if den > 0.0 else num


def verify_dphi(
    base: TransportState,
    zeta: OneFormField,
    eps_list: tuple[float, ...] = DPHI_EPS,
    metric: MetricField | None = None,
) -> DPhiReport:
    g = base.grid
    dz = d1(zeta)
    factor = ScalarField(g, base.dens.rho.values * np.exp(base.theta.values))
    target_mass = ScalarField(
        g, factor.values * mass_linearization_D(base, zeta).values
    )

    slopes = []
    for eps in eps_list:
        plus = phi_residual(base, zeta * eps)
        minus = phi_residual(base, zeta * (-eps))
        k_slope = (plus.kahler - minus.kahler) * (0.5 / eps)
        m_slope = (plus.mass - minus.mass) * (0.5 / eps)
        slopes.append((eps, k_slope, m_slope, image_mean(base, zeta * eps)))

    last = slopes[-1][1]
    sign = -1 if (last + dz).l2_norm() <= (last - dz).l2_norm() else 1
    rows: list[DPhiRow] = []
    for eps, k_slope, m_slope, mean in slopes:
        rows.append(
            {
                "eps": eps,
                "kahler_dist": _dist(k_slope, dz * sign),
                "kahler_norm": k_slope.l2_norm(),
                "mass_dist": _dist(m_slope, target_mass),
                "mass_norm": m_slope.l2_norm(),
                "image_mean": mean,
            }
        )
        logger.debug(f"dphi sweep: {rows[-1]}")

    report: DPhiReport = {
        "rows": rows,
        "kahler_sign": sign,
        "mass_factor": "rho*exp(theta)",
        "omitted_factor": "1/lambda",
    }
    if g.dim >= 3:
        metric = metric or MetricField.from_state(base)
        q = metric.vol * codiff_1(metric, zeta).values
        m = slopes[-1][2].values
        qq = float(np.sum(q * q))
        if qq > 0.0:
            c = float(np.sum(m * q)) / qq
            report["codiff_factor"] = c
            report["codiff_fit_residual"] = relative(
                float(np.linalg.norm(m - c * q)), float(np.linalg.norm(m))
            )
    logger.info(
        f"dphi check: kahler sign {sign}, plateau kahler "
        f"{rows[-1]['kahler_dist']:.3e}, mass {rows[-1]['mass_dist']:.3e}"
    )
    return report


def _residual(state: TransportState, c: np.ndarray) -> np.ndarray:
    return state.theta.values.ravel() - state.grid.parity_indicators() @ c


def _merit(grid: PeriodicGrid, r: np.ndarray) -> float:
    return math.sqrt(math.fsum(r * r) * grid.cell_volume)


def _newton_step(
    state: TransportState, r: np.ndarray, settings: ContinuationSettings
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the bordered system for the potential and class constants."""
    g = state.grid
    X = g.parity_indicators()
    L = linearized_matrix(state)
    A = sp.bmat([[L, -X], [X.T, None]], format="csc")
    rhs = np.concatenate([-r, np.zeros(X.shape[1])])

    sol = None
    if settings.linear_solver == LinearSolver.BICGSTAB:
        try:
            ilu = spla.spilu(A)
            M = spla.LinearOperator(A.shape, matvec=ilu.solve)
            sol, info = spla.bicgstab(
                A, rhs, rtol=0.1 * settings.newton_tol, atol=0.0, M=M
            )
            if info != 0:
                logger.warning(f"bicgstab stopped with info={info}, using LU")
                sol = None
        except (RuntimeError, ValueError) as e:
            logger.warning(f"ILU preconditioner failed ({e}), using LU")
    if sol is None:
        sol = spla.splu(A).solve(rhs)
    n = g.num_nodes
    return sol[:n].reshape(g.shape), sol[n:]


def solve_lie(
    cost: CostModel,
    dens: DensityPair,
    tau: Any,
    init_phi: ScalarField | None = None,
    settings: ContinuationSettings | None = None,
) -> ModuliChart:
    settings = settings or ContinuationSettings()
    g = dens.grid
    tau = np.asarray(tau, dtype=np.float64)
    if tau.shape != (g.dim,):
        raise DimensionError(f"tau must have {g.dim} entries, got {tau.shape}")
    if float(np.max(np.abs(tau))) > cost.window.max_disp:
        raise CutLocusError(
            f"tau {tau.tolist()} lies outside the twist window "
            f"(max_disp {cost.window.max_disp})"
        )
    phi = np.zeros(g.shape) if init_phi is None else init_phi.values
    phi = g.remove_parity_means(phi)
    c = np.zeros(g.num_parity_classes)

    def build(values: np.ndarray) -> TransportState:
        return assemble_state(
            g, cost, dens, closed_form(g, tau, ScalarField(g, values))
        )

    def chart(converged: bool, it: int) -> ModuliChart:
        return ModuliChart(
            cost,
            dens,
            g,
            tau,
            ScalarField(g, phi),
            state,
            converged,
            float(np.max(np.abs(r))),
            it,
            c.copy(),
            history,
        )

    state = build(phi)
    r = _residual(state, c)
    merit = _merit(g, r)
    history = [merit]
    for it in range(settings.max_newton + 1):
        sup = float(np.max(np.abs(r)))
        if sup <= settings.newton_tol:
            if state.nonconvex:
                raise NonConvexBreakdown(
                    f"converged iterate is not c-convex "
                    f"(min eig w {state.min_w_eig:.3e})",
                    partial=chart(False, it),
                )
            logger.info(
                f"chart tau={tau.tolist()} converged in {it} Newton steps "
                f"(residual {sup:.3e}, "
                f"|theta|_inf {state.theta.sup_norm():.3e}, "
                f"class constants {c.tolist()})"
            )
            return chart(True, it)
        if it == settings.max_newton:
            break

        dphi, dc = _newton_step(state, r, settings)
        t = 1.0
        for _ in range(settings.max_halvings):
            try:
                trial = build(phi + t * dphi)
            except (CutLocusError, NonConvexBreakdown) as e:
                logger.debug(f"trial step {t:.3e} rejected: {e}")
                t *= settings.armijo_factor
                continue
            r_trial = _residual(trial, c + t * dc)
            m_trial = _merit(g, r_trial)
            if m_trial <= (1.0 - settings.armijo_slope * t) * merit:
                break
            t *= settings.armijo_factor
        else:
            raise NoConvergence(
                f"line search failed at Newton step {it} "
                f"(merit {merit:.3e})",
                partial=chart(False, it),
            )

        phi = phi + t * dphi
        c = c + t * dc
        state, r = trial, r_trial
        if merit <= QUADRATIC_REGIME and m_trial > 0.0:
            logger.debug(
                f"newton {it + 1}: merit {m_trial:.3e}, step {t:.3e}, "
                f"C = {m_trial / merit**2:.3e}"
            )
        else:
            logger.debug(f"newton {it + 1}: merit {m_trial:.3e}, step {t:.3e}")
        merit = m_trial
        history.append(merit)
        if state.nonconvex:
            raise NonConvexBreakdown(
                f"w lost positivity at Newton step {it + 1}",
                partial=chart(False, it + 1),
            )

    raise NoConvergence(
        f"no convergence in {settings.max_newton} Newton steps "
        f"(residual {float(np.max(np.abs(r))):.3e})",
        partial=chart(False, settings.max_newton),
    )


def continue_family(
    base: ModuliChart,
    direction: int,
    settings: ContinuationSettings | None = None,
) -> list[ModuliChart]:
    """Walk ``tau`` along ``e_direction`` (1-based) with warm starts."""
    settings = settings or ContinuationSettings()
    n = base.grid.dim
    if not 1 <= direction <= n:
        raise ConfigError(f"direction must lie in 1..{n}, got {direction}")
    if not base.converged:
        raise ConfigError("continuation needs a converged base chart")
    charts = [base]
    if settings.step == 0.0:
        return charts

    e = np.zeros(n)
    e[direction - 1] = settings.step
    for k in range(settings.max_steps):
        prev = charts[-1]
        try:
            nxt = solve_lie(
                base.cost, base.dens, prev.tau + e, prev.phi, settings
            )
        except (NoConvergence, CutLocusError) as err:
            logger.warning(
                f"continuation stopped at step {k + 1} of "
                f"{settings.max_steps}: {err}"
            )
            failed = err.partial
            if isinstance(failed, ModuliChart):
                err.partial = [*charts, failed]
            else:
                err.partial = charts
            raise
        charts.append(nxt)
        logger.info(f"family step {k + 1}: tau = {nxt.tau.tolist()}")
    return charts


def family_record(charts: list[ModuliChart]) -> list[FamilyStep]:
    out: list[FamilyStep] = []
    for k, ch in enumerate(charts):
        step: FamilyStep = {
            "step": k,
            "tau": ch.tau.tolist(),
            "cost": transport_cost(ch.state),
            "theta_norm": ch.theta_norm,
            "class_constants": ch.class_constants.tolist(),
            "pushforward_norm": pushforward_residual(ch.state).sup_norm(),
            "newton_iterations": ch.iterations,
            "converged": ch.converged,
        }
        if ch.dens.equal:
            step["optimality_gap"] = optimality_gap(ch.state)
        out.append(step)
    return out


@requires_dim(3)
def tangent_harmonicity(
    prev: ModuliChart,
    nxt: ModuliChart,
    metric: MetricField | None = None,
    basis: HarmonicBasis | None = None,
) -> TangentReport:
    g = prev.grid
    dtau = float(np.linalg.norm(nxt.tau - prev.tau))
    if dtau == 0.0:
        raise ConfigError("consecutive charts share the same tau")
    if metric is None:
        mid = (prev.eta + nxt.eta) * 0.5
        metric = MetricField.from_state(
            assemble_state(g, prev.cost, prev.dens, mid)
        )
    xi = (nxt.eta - prev.eta) * (1.0 / dtau)
    parts = hodge_decompose(metric, xi, basis).norms()
    h = parts["harmonic"]
    report: TangentReport = {
        "dtau": dtau,
        "harmonic_norm": h,
        "exact_rel": relative(parts["exact"], h),
        "coexact_rel": relative(parts["coexact"], h),
        "parasitic_rel": relative(parts["parasitic"], h),
    }
    logger.info(f"tangent harmonicity: {report}")
    return report


def _kernel_operator(
    state: TransportState, variant: KernelVariant
) -> sp.csr_matrix:
    """Rows acting on ``(zeta, c)``; ``c`` absorbs the parity-class means."""
    g = state.grid
    n = g.dim
    X = g.parity_indicators()
    if variant == KernelVariant.NO_SECOND_ORDER:
        beta = state.first_order
        mass = sp.hstack(
            [sp.diags(beta[..., k].ravel()) for k in range(n)], format="csr"
        )
    else:
        mass = mass_linearization_matrix(
            state, first_order=variant != KernelVariant.NO_FIRST_ORDER
        )
    rows = [[mass, -X]]
    if variant != KernelVariant.NO_KAHLER:
        rows.append([d1_matrix(g), None])
    for a in range(n):
        J = sp.block_diag([parity_filter(g, a)] * n, format="csr")
        rows.append([J, None])
    return sp.bmat(rows, format="csr")


def _constant_fraction(grid: PeriodicGrid, vecs: np.ndarray) -> float:
    """Share of a kernel subspace spanned by the constant 1-forms."""
    if vecs.shape[1] == 0:
        return 0.0
    n = grid.dim
    size = n * grid.num_nodes
    Q, _ = np.linalg.qr(vecs[:size])
    E = np.zeros((size, n))
    for k in range(n):
        E[k * grid.num_nodes : (k + 1) * grid.num_nodes, k] = 1.0
    E /= math.sqrt(grid.num_nodes)
    return float(np.sum((E.T @ Q) ** 2)) / vecs.shape[1]


@requires_dim(2)
def n2_kernel_dim(
    state: TransportState, variant: KernelVariant = KernelVariant.FULL
) -> KernelReport:
    """Numerical kernel dimension of the closed-form mass linearization.

    ``constant_fraction`` is the share of the kernel made of constant
    1-forms; it is 1 when the first-order terms are missing and drops
    below 1 at nonuniform states.
    """
    variant = KernelVariant(variant)
    A = _kernel_operator(state, variant)
    N = sp.csc_matrix(A.T @ A)
    count = KERNEL_SINGULAR_VALUES + 1
    try:
        top = spla.eigsh(N, k=1, which="LA", return_eigenvectors=False)
        low, vecs = spla.eigsh(
            N,
            k=count,
            sigma=-KERNEL_REL_SHIFT * abs(float(top[0])),
            which="LM",
            tol=EIGEN_TOL,
            maxiter=EIGEN_MAX_ITER,
        )
    except spla.ArpackNoConvergence as e:
        raise NoConvergence(
            f"kernel singular values did not converge: {e}"
        ) from e
    order = np.argsort(np.abs(low))
    sv = np.sqrt(np.abs(low[order]))
    vecs = vecs[:, order]
    largest = math.sqrt(abs(float(top[0])))
    threshold = KERNEL_REL_THRESHOLD * largest
    dim = int(np.sum(sv < threshold))
    report: KernelReport = {
        "dim": dim,
        "singular_values": sv[:KERNEL_SINGULAR_VALUES].tolist(),
        "largest": largest,
        "threshold": threshold,
        "gap_ratio": 0.0,
        "constant_fraction": _constant_fraction(state.grid, vecs[:, :dim]),
        "variant": variant.value,
    }
    if dim >= count:
        raise SpectralGapTooSmall(
            f"all {count} computed singular values fall below "
            f"{threshold:.3e}",
            report=report,
        )
    floor = float(sv[dim - 1]) if dim > 0 else 0.0
    report["gap_ratio"] = float(sv[dim]) / max(floor, GAP_FLOOR)
    logger.info(
        f"n=2 kernel ({variant.value}): dim {dim}, gap "
        f"{report['gap_ratio']:.3e}, constant share "
        f"{report['constant_fraction']:.6f}"
    )
    if report["gap_ratio"] < SPECTRAL_GAP:
        raise SpectralGapTooSmall(
            f"kernel gap ratio {report['gap_ratio']:.3e} < {SPECTRAL_GAP:.0f}",
            report=report,
        )
    return report
