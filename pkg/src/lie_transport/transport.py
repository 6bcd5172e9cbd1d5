import math
import logging
from typing import Any
from functools import cached_property
from dataclasses import field, dataclass

import numpy as np
import scipy.sparse as sp

from lie_transport.cost import CostJet, CostModel, cexp, cost_jet
from lie_transport.grid import (
    OneFormField,
    ScalarField,
    PeriodicGrid,
    d0,
    d1,
    integrate,
    d0_matrix,
    map_jacobian,
    torus_displacement,
)
from lie_transport.errors import (
    NotClosed,
    ConfigError,
    NonConvexBreakdown,
)
from lie_transport.interp import PeriodicCubic
from lie_transport.utils.types import LBReport
from lie_transport.utils.constants import MASS_TOL, MIN_DENSITY
from lie_transport.utils.decorators import requires_dim

logger = logging.getLogger(__name__)

CLOSED_TOL = 1e-10


def fourier_density(
    grid: PeriodicGrid, terms: list[dict[str, Any]], base: float = 1.0
) -> ScalarField:
    """Truncated Fourier series normalised to unit mass.

    Each term is ``{"k": [k1, ..], "cos": a, "sin": b}`` and contributes
    ``a cos(2 pi k.x) + b sin(2 pi k.x)``.
    """
    if base <= 0.0:
        raise ConfigError(f"density base must be positive, got {base}")
    vals = np.full(grid.shape, float(base))
    for term in terms:
        k = np.asarray(term["k"], dtype=np.float64)
        if k.shape != (grid.dim,):
            raise ConfigError(f"density frequency {term['k']} has wrong length")
        phase = 2.0 * math.pi * sum(
            k[a] * grid.coords[a] for a in range(grid.dim)
        )
        vals = vals + float(term.get("cos", 0.0)) * np.cos(phase)
        vals = vals + float(term.get("sin", 0.0)) * np.sin(phase)
    raw = ScalarField(grid, vals)
    if float(np.min(vals)) <= 0.0:
        raise ConfigError(
            f"density is not positive (min {float(np.min(vals)):.3e})"
        )
    return ScalarField(grid, vals / integrate(raw))


@dataclass(frozen=True, eq=False)
class DensityPair:
    rho: ScalarField
    rhobar: ScalarField

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        if self.rho.grid != self.rhobar.grid:
            raise ConfigError("rho and rhobar live on different grids")
        for name, f in (("rho", self.rho), ("rhobar", self.rhobar)):
            low = float(np.min(f.values))
            if low < MIN_DENSITY:
                raise ConfigError(f"{name} minimum {low:.3e} < {MIN_DENSITY}")
            mass = integrate(f)
            if abs(mass - 1.0) > MASS_TOL:
                raise ConfigError(f"{name} has mass {mass!r}, expected 1")

    @staticmethod
    def uniform(grid: PeriodicGrid) -> "DensityPair":
        one = ScalarField.constant(grid, 1.0)
        return DensityPair(one, one)

    @staticmethod
    def from_fourier(
        grid: PeriodicGrid,
        rho_terms: list[dict[str, Any]],
        rhobar_terms: list[dict[str, Any]],
        rho_base: float = 1.0,
        rhobar_base: float = 1.0,
    ) -> "DensityPair":
        return DensityPair(
            fourier_density(grid, rho_terms, rho_base),
            fourier_density(grid, rhobar_terms, rhobar_base),
        )

    @property
    def grid(self) -> PeriodicGrid:
        return self.rho.grid

    @property
    def equal(self) -> bool:
        return bool(
            np.max(np.abs(self.rho.values - self.rhobar.values)) <= MASS_TOL
        )

    @cached_property
    def rhobar_interp(self) -> PeriodicCubic:
        return PeriodicCubic(self.rhobar)


@dataclass(frozen=True, eq=False)
class TransportState:
    """A candidate map ``T = cexp(eta)`` with everything derived from it.

    Node arrays carry the grid axes first: ``T`` is ``(*sizes, n)``,
    ``DT``/``w``/``w_inv`` are ``(*sizes, n, n)`` and the jet is evaluated
    at ``(x, T(x))``.
    """

    grid: PeriodicGrid
    cost: CostModel
    dens: DensityPair
    eta: OneFormField
    T: np.ndarray = field(repr=False)
    DT: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    w_inv: np.ndarray = field(repr=False)
    jet: CostJet = field(repr=False)
    theta: ScalarField = field(repr=False)
    detDT: ScalarField = field(repr=False)
    rhobar_T: np.ndarray = field(repr=False)
    log_rhobar_grad: np.ndarray = field(repr=False)
    lam: ScalarField | None = field(default=None, repr=False)
    g: np.ndarray | None = field(default=None, repr=False)
    min_w_eig: float = 0.0

    @property
    def nonconvex(self) -> bool:
        return self.min_w_eig <= 0.0

    @property
    def displacement(self) -> np.ndarray:
        return torus_displacement(self.grid.points, self.T)

    @cached_property
    def first_order(self) -> np.ndarray:
        """Coefficients ``beta^k`` of the first-order part of L."""
        jet = self.jet
        t1 = np.einsum(
            "...ij,...isj,...sk->...k", self.w_inv, jet.b_x, jet.b_inv
        )
        t2 = np.einsum(
            "...si,...isp,...pk->...k", jet.b_inv, jet.b_xbar, jet.b_inv
        )
        t3 = np.einsum("...s,...sk->...k", self.log_rhobar_grad, jet.b_inv)
        return -t1 - t2 + t3


def assemble_state(
    grid: PeriodicGrid,
    cost: CostModel,
    dens: DensityPair,
    eta: OneFormField,
    closed_tol: float = CLOSED_TOL,
) -> TransportState:
    if eta.grid != grid or dens.grid != grid:
        raise ConfigError("eta, densities and grid disagree")
    curl = d1(eta).sup_norm() if grid.dim > 1 else 0.0
    if curl > closed_tol:
        raise NotClosed(f"|d eta| = {curl:.3e} exceeds {closed_tol:.0e}")

    n = grid.dim
    X = grid.points
    T = cexp(cost, X, eta.at_nodes())
    jet = cost_jet(cost, X, T)

    hess = np.empty(grid.shape + (n, n))
    for i in range(n):
        for j in range(n):
            hess[..., i, j] = grid.centered(eta.values[i], j)
    w = 0.5 * (hess + np.swapaxes(hess, -1, -2)) + jet.c_ij

    min_eig = float(np.min(np.linalg.eigvalsh(w)))
    if min_eig <= 0.0:
        logger.warning(
            f"w is not positive definite (min eigenvalue {min_eig:.3e})"
        )
    _, logdet_w = np.linalg.slogdet(w)
    if not np.all(np.isfinite(logdet_w)):
        raise NonConvexBreakdown("w is singular at some node")
    _, logdet_b = np.linalg.slogdet(jet.b)

    rb, grad = dens.rhobar_interp(T, gradient=True)  # type: ignore[misc]
    if float(np.min(rb)) <= 0.0:
        raise ConfigError("interpolated rhobar is not positive")
    theta = logdet_w - logdet_b - np.log(dens.rho.values) + np.log(rb)
    DT = map_jacobian(grid, T)

    lam = g = None
    if n >= 3:
        lam_vals = (dens.rho.values * rb / np.exp(logdet_b)) ** (1.0 / (n - 2))
        lam = ScalarField(grid, lam_vals)
        g = lam_vals[..., None, None] * w

    with np.errstate(all="ignore"):
        w_inv = np.linalg.inv(w)
    state = TransportState(
        grid=grid,
        cost=cost,
        dens=dens,
        eta=eta,
        T=T,
        DT=DT,
        w=w,
        w_inv=w_inv,
        jet=jet,
        theta=ScalarField(grid, theta),
        detDT=ScalarField(grid, np.linalg.det(DT)),
        rhobar_T=rb,
        log_rhobar_grad=grad / rb[..., None],
        lam=lam,
        g=g,
        min_w_eig=min_eig,
    )
    logger.debug(
        f"assembled state on {grid.sizes}: |theta|_inf = "
        f"{state.theta.sup_norm():.3e}, min eig w = {min_eig:.3e}"
    )
    return state


def pushforward_residual(state: TransportState) -> ScalarField:
    return ScalarField(
        state.grid,
        state.rhobar_T * state.detDT.values - state.dens.rho.values,
    )


def theta_consistency(state: TransportState) -> float:
    """Sup gap between theta and ``ln(rhobar(T) det DT / rho)``."""
    det = state.detDT.values
    ok = det > 0.0
    direct = np.log(state.rhobar_T[ok] * det[ok] / state.dens.rho.values[ok])
    return float(np.max(np.abs(state.theta.values[ok] - direct)))


def id1_defect(state: TransportState) -> float:
    """Sup norm of ``w - b DT``."""
    bdt = np.einsum("...is,...sj->...ij", state.jet.b, state.DT)
    return float(np.max(np.abs(state.w - bdt)))


def mass_linearization_D(
    state: TransportState, zeta: OneFormField
) -> ScalarField:
    """``w^{ij} zeta_{i,j} + beta^k zeta_k`` (no ``1/lambda`` prefactor)."""
    g = state.grid
    n = g.dim
    out = np.zeros(g.shape)
    for i in range(n):
        for j in range(n):
            out += state.w_inv[..., i, j] * g.centered(zeta.values[i], j)
    beta = state.first_order
    for k in range(n):
        out += beta[..., k] * zeta.values[k]
    return ScalarField(g, out)


def linearized_L(state: TransportState, v: ScalarField) -> ScalarField:
    return mass_linearization_D(state, d0(v))


def mass_linearization_matrix(
    state: TransportState, first_order: bool = True
) -> sp.csr_matrix:
    """Sparse ``mass_linearization_D`` on component-major 1-form vectors.

    ``first_order=False`` keeps only the ``w^{ij}`` derivative terms.
    """
    g = state.grid
    n = g.dim
    beta = state.first_order if first_order else np.zeros(g.shape + (n,))
    blocks = []
    for i in range(n):
        col = sp.diags(beta[..., i].ravel())
        for j in range(n):
            col = col + sp.diags(state.w_inv[..., i, j].ravel()) @ (
                g.difference_matrix(j)
            )
        blocks.append(col)
    return sp.hstack(blocks, format="csr")


def linearized_matrix(state: TransportState) -> sp.csr_matrix:
    """Sparse ``linearized_L`` on C-order flattened 0-forms."""
    return (mass_linearization_matrix(state) @ d0_matrix(state.grid)).tocsr()


def _ln_grad(g: PeriodicGrid, values: np.ndarray) -> np.ndarray:
    return np.stack([g.centered(values, a) for a in range(g.dim)], axis=-1)


@requires_dim(3)
def lb_check(state: TransportState, z: ScalarField) -> LBReport:
    assert state.lam is not None and state.g is not None
    g = state.grid
    n = g.dim
    lhs = linearized_L(state, z).values

    lam = state.lam.values
    sqrt_det = np.sqrt(np.linalg.det(state.g))
    g_inv = state.w_inv / lam[..., None, None]
    dz = _ln_grad(g, z.values)
    dtheta = _ln_grad(g, state.theta.values)

    flux = sqrt_det[..., None] * np.einsum("...ij,...i->...j", g_inv, dz)
    div = sum(g.centered(flux[..., j], j) for j in range(n))
    lap = div / sqrt_det
    pairing = np.einsum("...ij,...i,...j->...", g_inv, dtheta, dz)
    rhs = lam * (lap + 0.5 * pairing)

    resid = ScalarField(g, lhs - rhs)
    report: LBReport = {
        "sizes": list(g.sizes),
        "linf": resid.sup_norm(),
        "l2": resid.l2_norm(),
        "lhs_l2": ScalarField(g, lhs).l2_norm(),
        "rhs_l2": ScalarField(g, rhs).l2_norm(),
    }
    logger.info(
        f"lb check on {g.sizes}: l2 {report['l2']:.3e}, linf {report['linf']:.3e}"
    )
    return report


@requires_dim(3)
def volume_element_check(state: TransportState) -> float:
    """Sup of ``sqrt(det g) - rho lambda``; vanishes at solutions."""
    assert state.lam is not None and state.g is not None
    sqrt_det = np.sqrt(np.linalg.det(state.g))
    return float(
        np.max(np.abs(sqrt_det - state.dens.rho.values * state.lam.values))
    )
