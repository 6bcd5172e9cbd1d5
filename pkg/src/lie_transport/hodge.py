import math
import logging
from typing import TYPE_CHECKING, Union
from functools import cached_property
from dataclasses import field, dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from lie_transport.grid import (
    OneFormField,
    ScalarField,
    PeriodicGrid,
    TwoFormField,
    d0,
    d1,
    d0_matrix,
    d1_matrix,
)
from lie_transport.errors import (
    ConfigError,
    NoConvergence,
    SpectralGapTooSmall,
)
from lie_transport.utils.types import HodgeInfo
from lie_transport.utils.constants import (
    CG_RTOL,
    EIGEN_TOL,
    GAP_FLOOR,
    EIGEN_SHIFT,
    CG_MAX_ITER,
    SPECTRAL_GAP,
    EIGEN_MAX_ITER,
    METRIC_MIN_EIG,
    PARITY_PENALTY_ORDER,
)

if TYPE_CHECKING:
    from lie_transport.transport import TransportState

logger = logging.getLogger(__name__)

Form = Union[ScalarField, OneFormField, TwoFormField]


@dataclass(frozen=True, eq=False)
class MetricField:
    """Per-node SPD tensor ``g[..., i, j]`` with its inverse and volume."""

    grid: PeriodicGrid
    g: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        g = np.array(self.g, dtype=np.float64)
        g.flags.writeable = False
        object.__setattr__(self, "g", g)
        self._validate()

    def _validate(self) -> None:
        n = self.grid.dim
        shape = self.grid.shape + (n, n)
        if self.g.shape != shape:
            raise ConfigError(
                f"metric expects shape {shape}, got {self.g.shape}"
            )
        if not np.all(np.isfinite(self.g)):
            raise ConfigError("metric contains NaN or Inf")
        asym = float(np.max(np.abs(self.g - np.swapaxes(self.g, -1, -2))))
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(self.g)))):
            raise ConfigError(f"metric is not symmetric (defect {asym:.3e})")
        low = float(np.min(np.linalg.eigvalsh(self.g)))
        if low < METRIC_MIN_EIG:
            raise ConfigError(
                f"metric min eigenvalue {low:.3e} < {METRIC_MIN_EIG:.0e}"
            )

    @classmethod
    def flat(cls, grid: PeriodicGrid) -> "MetricField":
        n = grid.dim
        return cls(grid, np.broadcast_to(np.eye(n), grid.shape + (n, n)))

    @classmethod
    def conformal(cls, grid: PeriodicGrid, lam: ScalarField) -> "MetricField":
        return cls(grid, lam.values[..., None, None] * np.eye(grid.dim))

    @classmethod
    def from_state(cls, state: "TransportState") -> "MetricField":
        # in two dimensions there is no conformal factor; w is used as is
        g = state.g if state.g is not None else state.w
        return cls(state.grid, g)

    @cached_property
    def g_inv(self) -> np.ndarray:
        return np.linalg.inv(self.g)

    @cached_property
    def vol(self) -> np.ndarray:
        """``sqrt(det g)`` at every node."""
        return np.sqrt(np.linalg.det(self.g))

    @cached_property
    def m0(self) -> sp.dia_matrix:
        return sp.diags(self.vol.ravel() * self.grid.cell_volume)

    @cached_property
    def m1(self) -> sp.csr_matrix:
        n = self.grid.dim
        w = self.vol * self.grid.cell_volume
        return sp.bmat(
            [
                [sp.diags((self.g_inv[..., i, j] * w).ravel()) for j in range(n)]
                for i in range(n)
            ],
            format="csr",
        )

    @cached_property
    def m2(self) -> sp.csr_matrix:
        pairs = self.grid.pairs
        gi = self.g_inv
        w = self.vol * self.grid.cell_volume
        blocks = []
        for a, b in pairs:
            row = []
            for c, d in pairs:
                coef = gi[..., a, c] * gi[..., b, d] - gi[..., a, d] * gi[..., b, c]
                row.append(sp.diags((coef * w).ravel()))
            blocks.append(row)
        return sp.bmat(blocks, format="csr")

    def m1_solve(self, y: np.ndarray) -> np.ndarray:
        """Apply the inverse of ``m1`` to a flattened 1-form vector."""
        n = self.grid.dim
        comps = y.reshape((n, *self.grid.shape))
        scale = 1.0 / (self.vol * self.grid.cell_volume)
        out = np.einsum("...ij,j...->i...", self.g, comps) * scale
        return out.ravel()


def parity_filter(grid: PeriodicGrid, a: int) -> sp.csr_matrix:
    """``(2/h) (-h^2 D+ D- / 4)^p`` along axis ``a``.

    Zero on constants, ``O(h^(2p-1))`` on smooth data and ``2/h`` on the
    alternating mode, so it separates the parity-class copies of a kernel.
    """
    h = grid.spacing[a]
    step = (-0.25 * h * h) * grid.second_difference_matrix(a)
    out = sp.identity(grid.num_nodes, format="csr")
    for _ in range(PARITY_PENALTY_ORDER):
        out = out @ step
    return ((2.0 / h) * out).tocsr()


def _check_grid(metric: MetricField, *forms: Form) -> None:
    for f in forms:
        if f.grid != metric.grid:
            raise ConfigError("form and metric live on different grids")


def inner_product_k(metric: MetricField, a: Form, b: Form) -> float:
    """Weighted L2 pairing; the degree comes from the field type."""
    _check_grid(metric, a, b)
    if type(a) is not type(b):
        raise ConfigError(
            f"cannot pair {type(a).__name__} with {type(b).__name__}"
        )
    gi = metric.g_inv
    if isinstance(a, ScalarField):
        dens = a.values * b.values
    elif isinstance(a, OneFormField):
        dens = np.einsum("...ij,i...,j...->...", gi, a.values, b.values)
    else:
        pairs = metric.grid.pairs
        dens = np.zeros(metric.grid.shape)
        for p, (i, j) in enumerate(pairs):
            for q, (k, m) in enumerate(pairs):
                coef = gi[..., i, k] * gi[..., j, m] - gi[..., i, m] * gi[..., j, k]
                dens += coef * a.values[p] * b.values[q]
    return math.fsum((dens * metric.vol).ravel()) * metric.grid.cell_volume


def codiff_1(metric: MetricField, eta: OneFormField) -> ScalarField:
    _check_grid(metric, eta)
    g = metric.grid
    y = d0_matrix(g).T @ (metric.m1 @ eta.values.ravel())
    return ScalarField(g, y.reshape(g.shape) / (metric.vol * g.cell_volume))


def codiff_2(metric: MetricField, omega: TwoFormField) -> OneFormField:
    _check_grid(metric, omega)
    g = metric.grid
    y = d1_matrix(g).T @ (metric.m2 @ omega.values.ravel())
    return OneFormField(g, metric.m1_solve(y).reshape((g.dim, *g.shape)))


def hodge_laplacian_1(metric: MetricField, eta: OneFormField) -> OneFormField:
    return codiff_2(metric, d1(eta)) + d0(codiff_1(metric, eta))


def _cg(
    A: spla.LinearOperator | sp.spmatrix,
    rhs: np.ndarray,
    what: str,
    atol: float = 0.0,
) -> np.ndarray:
    if np.linalg.norm(rhs) <= atol or not np.any(rhs):
        logger.debug(f"{what}: right-hand side at rounding level, solution 0")
        return np.zeros_like(rhs)
    iters = 0

    def count(_: np.ndarray) -> None:
        nonlocal iters
        iters += 1

    x, info = spla.cg(
        A, rhs, rtol=CG_RTOL, atol=atol, maxiter=CG_MAX_ITER, callback=count
    )
    if info != 0:
        raise NoConvergence(f"{what}: CG stopped with info={info}")
    logger.debug(f"{what}: CG converged in {iters} iterations")
    return x


def _noise_floor(B: sp.spmatrix, vec: np.ndarray) -> float:
    """Absolute CG tolerance for right-hand sides of the form ``B @ vec``."""
    return CG_RTOL * float(spla.norm(B, np.inf)) * float(np.linalg.norm(vec))


def _poisson(metric: MetricField, eta: OneFormField) -> np.ndarray:
    """Gauged solution of ``d0^T M1 d0 alpha = d0^T M1 eta`` on node vectors.

    The operator is singular on the parity-class indicators, so their sums
    are projected out of the right-hand side before solving.
    """
    g = metric.grid
    D = d0_matrix(g)
    B = (D.T @ metric.m1).tocsr()
    vec = eta.values.ravel()
    rhs = g.remove_parity_means((B @ vec).reshape(g.shape)).ravel()
    K0 = (B @ D).tocsr()
    alpha = _cg(K0, rhs, "0-form Poisson", atol=_noise_floor(B, vec))
    return g.remove_parity_means(alpha.reshape(g.shape), metric.vol)


def _coexact_potential(metric: MetricField, eta: OneFormField) -> np.ndarray:
    g = metric.grid
    D1 = d1_matrix(g)
    m2 = metric.m2
    size = len(g.pairs) * g.num_nodes

    def matvec(beta: np.ndarray) -> np.ndarray:
        return m2 @ (D1 @ metric.m1_solve(D1.T @ (m2 @ beta)))

    A = spla.LinearOperator((size, size), matvec=matvec, dtype=np.float64)
    B = (m2 @ D1).tocsr()
    vec = eta.values.ravel()
    return _cg(A, B @ vec, "2-form potential", atol=_noise_floor(B, vec))


@dataclass(frozen=True, eq=False)
class HarmonicBasis:
    metric: MetricField = field(repr=False)
    forms: list[OneFormField] = field(repr=False)
    eigenvalues: list[float]
    gap_ratio: float

    @property
    def dim(self) -> int:
        return len(self.forms)

    def coefficients(self, eta: OneFormField) -> np.ndarray:
        return np.array([inner_product_k(self.metric, eta, f) for f in self.forms])

    def project(self, eta: OneFormField) -> OneFormField:
        out = OneFormField.zeros(eta.grid)
        for c, f in zip(self.coefficients(eta), self.forms):
            out = out + f * float(c)
        return out

    def info(self) -> HodgeInfo:
        return {
            "expected_dim": self.dim,
            "eigenvalues": list(self.eigenvalues),
            "gap_ratio": self.gap_ratio,
        }


def _kernel_spectrum(metric: MetricField, count: int) -> np.ndarray:
    g = metric.grid
    n = g.dim
    D0 = d0_matrix(g)
    D1 = d1_matrix(g)
    m1 = metric.m1
    inv_m0 = sp.diags(1.0 / (metric.vol.ravel() * g.cell_volume))
    K = D1.T @ metric.m2 @ D1 + m1 @ D0 @ inv_m0 @ D0.T @ m1
    for a in range(n):
        J = sp.block_diag([parity_filter(g, a)] * n, format="csr")
        K = K + J.T @ m1 @ J
    K = sp.csc_matrix(K)
    try:
        vals = spla.eigsh(
            K,
            k=count,
            M=sp.csc_matrix(m1),
            sigma=-EIGEN_SHIFT,
            which="LM",
            tol=EIGEN_TOL,
            maxiter=EIGEN_MAX_ITER,
            return_eigenvectors=False,
        )
    except spla.ArpackNoConvergence as e:
        raise NoConvergence(f"kernel eigen-solve did not converge: {e}") from e
    return np.sort(np.abs(vals))


def harmonic_basis(metric: MetricField, expected_dim: int) -> HarmonicBasis:
    g = metric.grid
    n = g.dim
    if expected_dim < 1 or expected_dim + 1 >= n * g.num_nodes:
        raise ConfigError(f"expected_dim {expected_dim} is out of range")

    vals = _kernel_spectrum(metric, expected_dim + 1)
    gap = float(vals[expected_dim] / max(vals[expected_dim - 1], GAP_FLOOR))
    logger.info(
        f"harmonic spectrum on {g.sizes}: {vals.tolist()}, gap ratio {gap:.3e}"
    )
    if gap < SPECTRAL_GAP:
        raise SpectralGapTooSmall(
            f"gap ratio {gap:.3e} < {SPECTRAL_GAP:.0f} for dimension "
            f"{expected_dim}",
            report={"eigenvalues": vals.tolist(), "gap_ratio": gap},
        )
    if expected_dim != n:
        raise SpectralGapTooSmall(
            f"certified kernel of dimension {expected_dim} on a {n}-torus",
            report={"eigenvalues": vals.tolist(), "gap_ratio": gap},
        )

    # exact representatives dx^k + d alpha_k with codiff_1 = 0
    reps = []
    for k in range(n):
        base = OneFormField.basis(g, k)
        alpha = -_poisson(metric, base)
        reps.append(base + d0(ScalarField(g, alpha)))

    gram = np.array([[inner_product_k(metric, a, b) for b in reps] for a in reps])
    L = np.linalg.cholesky(gram)
    coef = np.linalg.inv(L)
    forms = []
    for m in range(n):
        f = OneFormField.zeros(g)
        for k in range(m + 1):
            f = f + reps[k] * float(coef[m, k])
        means = f.means()
        if means[int(np.argmax(np.abs(means)))] < 0.0:
            f = -f
        forms.append(f)
    return HarmonicBasis(
        metric, forms, vals[:expected_dim].tolist(), gap
    )


@dataclass(frozen=True, eq=False)
class HodgeDecomposition:
    """``eta = harmonic + d alpha + delta beta + parasitic``.

    ``parasitic`` collects harmonic content the smooth basis misses; it
    lives on lattice-scale modes and vanishes for smooth input.
    """

    metric: MetricField = field(repr=False)
    harmonic: OneFormField = field(repr=False)
    exact_potential: ScalarField = field(repr=False)
    coexact_potential: TwoFormField = field(repr=False)
    parasitic: OneFormField = field(repr=False)

    @cached_property
    def exact(self) -> OneFormField:
        return d0(self.exact_potential)

    @cached_property
    def coexact(self) -> OneFormField:
        return codiff_2(self.metric, self.coexact_potential)

    def reconstruct(self) -> OneFormField:
        return self.harmonic + self.exact + self.coexact + self.parasitic

    def norms(self) -> dict[str, float]:
        m = self.metric
        return {
            name: math.sqrt(max(inner_product_k(m, f, f), 0.0))
            for name, f in (
                ("harmonic", self.harmonic),
                ("exact", self.exact),
                ("coexact", self.coexact),
                ("parasitic", self.parasitic),
            )
        }


def hodge_decompose(
    metric: MetricField,
    eta: OneFormField,
    basis: HarmonicBasis | None = None,
) -> HodgeDecomposition:
    _check_grid(metric, eta)
    g = metric.grid
    if basis is None:
        basis = harmonic_basis(metric, g.dim)
    elif basis.metric is not metric:
        raise ConfigError("harmonic basis was built for another metric")

    alpha = ScalarField(g, _poisson(metric, eta))
    beta = _coexact_potential(metric, eta)
    beta_f = TwoFormField(g, beta.reshape((len(g.pairs), *g.shape)))

    raw = eta - d0(alpha) - codiff_2(metric, beta_f)
    harmonic = basis.project(raw)
    out = HodgeDecomposition(metric, harmonic, alpha, beta_f, raw - harmonic)
    logger.debug(f"hodge decomposition norms: {out.norms()}")
    return out
