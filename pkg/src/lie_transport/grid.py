import math
import logging
from typing import Any, Callable
from itertools import combinations
from functools import cached_property
from dataclasses import field, dataclass

import numpy as np
import scipy.sparse as sp

from lie_transport.errors import ConfigError
from lie_transport.utils.constants import (
    GRID_DIMS,
    MIN_GRID_SIZE,
    PERIODIC_SAMPLE_TOL,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic lattice on the unit flat torus."""

    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        self._validate()

    def _validate(self) -> None:
        if len(self.sizes) not in GRID_DIMS:
            raise ConfigError(
                f"grid dimension must be one of {GRID_DIMS}, got {len(self.sizes)}"
            )
        for s in self.sizes:
            if s < MIN_GRID_SIZE or s % 2:
                raise ConfigError(
                    f"grid sizes must be even and >= {MIN_GRID_SIZE}, got {self.sizes}"
                )

    @staticmethod
    def cube(dim: int, size: int) -> "PeriodicGrid":
        return PeriodicGrid((size,) * dim)

    @property
    def dim(self) -> int:
        return len(self.sizes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.sizes

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(1.0 / s for s in self.sizes)

    @property
    def num_nodes(self) -> int:
        return math.prod(self.sizes)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    @property
    def max_spacing(self) -> float:
        return max(self.spacing)

    @cached_property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple(combinations(range(self.dim), 2))

    def axis(self, a: int) -> np.ndarray:
        return np.arange(self.sizes[a]) * self.spacing[a]

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        mesh = np.meshgrid(
            *(self.axis(a) for a in range(self.dim)), indexing="ij"
        )
        for m in mesh:
            m.flags.writeable = False
        return tuple(mesh)

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(*sizes, dim)``."""
        pts = np.stack(self.coords, axis=-1)
        pts.flags.writeable = False
        return pts

    @cached_property
    def parity(self) -> np.ndarray:
        """Parity class of every node, in ``range(2**dim)``.

        Centered differences only couple nodes of equal parity along the
        differentiated axis, so each class is invariant under d0's kernel.
        """
        idx = np.indices(self.sizes)
        cls = np.zeros(self.sizes, dtype=np.int64)
        for a in range(self.dim):
            cls += (idx[a] % 2) << a
        cls.flags.writeable = False
        return cls

    @property
    def num_parity_classes(self) -> int:
        return 2**self.dim

    def centered(self, values: np.ndarray, a: int) -> np.ndarray:
        """Centered difference along grid axis ``a`` of the trailing axes."""
        ax = values.ndim - self.dim + a
        fwd = np.roll(values, -1, axis=ax)
        bwd = np.roll(values, 1, axis=ax)
        return (fwd - bwd) / (2.0 * self.spacing[a])

    def _shift_index(self, a: int, step: int) -> np.ndarray:
        idx = np.arange(self.num_nodes).reshape(self.sizes)
        return np.roll(idx, -step, axis=a).ravel()

    def difference_matrix(self, a: int) -> sp.csr_matrix:
        """Sparse twin of ``centered`` on C-order flattened node vectors."""
        cached = self._matrices.get(("D", a))
        if cached is None:
            n = self.num_nodes
            rows = np.arange(n)
            inv = 1.0 / (2.0 * self.spacing[a])
            cached = sp.csr_matrix(
                (
                    np.concatenate([np.full(n, inv), np.full(n, -inv)]),
                    (
                        np.concatenate([rows, rows]),
                        np.concatenate(
                            [self._shift_index(a, 1), self._shift_index(a, -1)]
                        ),
                    ),
                ),
                shape=(n, n),
            )
            self._matrices[("D", a)] = cached
        return cached

    def second_difference_matrix(self, a: int) -> sp.csr_matrix:
        """Compact ``D+ D-`` along axis ``a``."""
        cached = self._matrices.get(("DD", a))
        if cached is None:
            n = self.num_nodes
            rows = np.arange(n)
            inv = 1.0 / self.spacing[a] ** 2
            cached = sp.csr_matrix(
                (
                    np.concatenate(
                        [np.full(n, inv), np.full(n, -2.0 * inv), np.full(n, inv)]
                    ),
                    (
                        np.concatenate([rows, rows, rows]),
                        np.concatenate(
                            [self._shift_index(a, 1), rows, self._shift_index(a, -1)]
                        ),
                    ),
                ),
                shape=(n, n),
            )
            self._matrices[("DD", a)] = cached
        return cached

    @cached_property
    def _matrices(self) -> dict[tuple[str, int], sp.csr_matrix]:
        return {}

    def parity_indicators(self) -> sp.csc_matrix:
        """Columns are the indicator vectors of the parity classes."""
        n = self.num_nodes
        return sp.csc_matrix(
            (np.ones(n), (np.arange(n), self.parity.ravel())),
            shape=(n, self.num_parity_classes),
        )

    def remove_parity_means(
        self, values: np.ndarray, weight: np.ndarray | None = None
    ) -> np.ndarray:
        """Subtract the (weighted) mean on every parity class."""
        out = np.array(values, dtype=np.float64)
        wts = np.ones(self.shape) if weight is None else weight
        for p in range(self.num_parity_classes):
            mask = self.parity == p
            out[mask] -= np.sum(out[mask] * wts[mask]) / np.sum(wts[mask])
        return out


class _FieldOps:
    grid: PeriodicGrid
    values: np.ndarray

    def _new(self, values: np.ndarray) -> Any:
        return type(self)(self.grid, values)

    def _other(self, other: Any) -> Any:
        if isinstance(other, _FieldOps):
            if other.grid != self.grid or type(other) is not type(self):
                raise ConfigError("fields live on different grids or degrees")
            return other.values
        return other

    def __add__(self, other: Any) -> Any:
        return self._new(self.values + self._other(other))

    def __sub__(self, other: Any) -> Any:
        return self._new(self.values - self._other(other))

    def __mul__(self, scalar: float) -> Any:
        return self._new(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> Any:
        return self._new(-self.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def l2_norm(self) -> float:
        sq = self.values**2
        if sq.ndim > self.grid.dim:
            sq = sq.sum(axis=0)
        return math.sqrt(math.fsum(sq.ravel()) * self.grid.cell_volume)


def _freeze(values: Any, shape: tuple[int, ...], what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.shape != shape:
        raise ConfigError(f"{what} expects shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what} contains NaN or Inf")
    arr.flags.writeable = False
    return arr


def _sample(
    grid: PeriodicGrid,
    func: Callable[..., Any],
    check_periodic: bool,
    what: str,
) -> np.ndarray:
    vals = np.asarray(func(*grid.coords), dtype=np.float64)
    if check_periodic:
        for a in range(grid.dim):
            shifted = list(grid.coords)
            shifted[a] = shifted[a] + 1.0
            wrapped = np.asarray(func(*shifted), dtype=np.float64)
            gap = float(np.max(np.abs(wrapped - vals)))
            if gap > PERIODIC_SAMPLE_TOL:
                raise ConfigError(
                    f"{what} sampler is not 1-periodic along axis {a + 1} "
                    f"(jump {gap:.3e})"
                )
    return vals


@dataclass(frozen=True, eq=False)
class ScalarField(_FieldOps):
    grid: PeriodicGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "values", _freeze(self.values, self.grid.shape, "0-form")
        )

    @classmethod
    def zeros(cls, grid: PeriodicGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: PeriodicGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def sample(
        cls,
        grid: PeriodicGrid,
        func: Callable[..., Any],
        check_periodic: bool = True,
    ) -> "ScalarField":
        vals = _sample(grid, func, check_periodic, "0-form")
        return cls(grid, np.broadcast_to(vals, grid.shape))

    def mean(self) -> float:
        return integrate(self)


@dataclass(frozen=True, eq=False)
class OneFormField(_FieldOps):
    grid: PeriodicGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        shape = (self.grid.dim, *self.grid.shape)
        object.__setattr__(
            self, "values", _freeze(self.values, shape, "1-form")
        )

    @classmethod
    def zeros(cls, grid: PeriodicGrid) -> "OneFormField":
        return cls(grid, np.zeros((grid.dim, *grid.shape)))

    @classmethod
    def constant(cls, grid: PeriodicGrid, vector: Any) -> "OneFormField":
        vec = np.asarray(vector, dtype=np.float64).reshape(grid.dim)
        vals = np.broadcast_to(
            vec.reshape((grid.dim,) + (1,) * grid.dim),
            (grid.dim, *grid.shape),
        )
        return cls(grid, vals)

    @classmethod
    def basis(cls, grid: PeriodicGrid, a: int) -> "OneFormField":
        vec = np.zeros(grid.dim)
        vec[a] = 1.0
        return cls.constant(grid, vec)

    @classmethod
    def sample(
        cls,
        grid: PeriodicGrid,
        func: Callable[..., Any],
        check_periodic: bool = True,
    ) -> "OneFormField":
        def stacked(*x: np.ndarray) -> np.ndarray:
            return np.stack(
                [np.broadcast_to(np.asarray(c, float), grid.shape) for c in func(*x)]
            )

        return cls(grid, _sample(grid, stacked, check_periodic, "1-form"))

    def means(self) -> np.ndarray:
        return np.array(
            [integrate(ScalarField(self.grid, c)) for c in self.values]
        )

    def at_nodes(self) -> np.ndarray:
        """Components moved last: shape ``(*sizes, dim)``."""
        return np.moveaxis(self.values, 0, -1)


@dataclass(frozen=True, eq=False)
class TwoFormField(_FieldOps):
    """Components for ordered pairs ``a < b`` in ``grid.pairs`` order."""

    grid: PeriodicGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        shape = (len(self.grid.pairs), *self.grid.shape)
        object.__setattr__(
            self, "values", _freeze(self.values, shape, "2-form")
        )

    @classmethod
    def zeros(cls, grid: PeriodicGrid) -> "TwoFormField":
        return cls(grid, np.zeros((len(grid.pairs), *grid.shape)))


def d0(u: ScalarField) -> OneFormField:
    g = u.grid
    return OneFormField(
        g, np.stack([g.centered(u.values, a) for a in range(g.dim)])
    )


def d1(eta: OneFormField) -> TwoFormField:
    g = eta.grid
    comps = [
        g.centered(eta.values[b], a) - g.centered(eta.values[a], b)
        for a, b in g.pairs
    ]
    return TwoFormField(g, np.stack(comps))


def integrate(f: ScalarField, weight: ScalarField | None = None) -> float:
    vals = f.values if weight is None else f.values * weight.values
    return math.fsum(vals.ravel()) * f.grid.cell_volume


def torus_displacement(x: Any, y: Any) -> np.ndarray:
    """Minimal periodic representative of ``y - x``, in ``(-1/2, 1/2]``."""
    d = np.asarray(y, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    return d - np.ceil(d - 0.5)


def wrap(x: Any) -> np.ndarray:
    return np.mod(np.asarray(x, dtype=np.float64), 1.0)


def map_jacobian(grid: PeriodicGrid, T: np.ndarray) -> np.ndarray:
    """Centered Jacobian of a torus map sampled at nodes.

    ``T`` has shape ``(*sizes, dim)``; neighbour images are unwrapped with
    ``torus_displacement`` before differencing. Returns ``(*sizes, dim, dim)``
    with ``[..., s, j] = d T^s / d x_j``.
    """
    cols = []
    for j in range(grid.dim):
        fwd = np.roll(T, -1, axis=j)
        bwd = np.roll(T, 1, axis=j)
        cols.append(torus_displacement(bwd, fwd) / (2.0 * grid.spacing[j]))
    return np.stack(cols, axis=-1)


def d0_matrix(grid: PeriodicGrid) -> sp.csr_matrix:
    """Sparse ``d0`` from node vectors to component-major 1-form vectors."""
    return sp.vstack(
        [grid.difference_matrix(a) for a in range(grid.dim)], format="csr"
    )


def d1_matrix(grid: PeriodicGrid) -> sp.csr_matrix:
    n = grid.dim
    blocks = []
    for a, b in grid.pairs:
        row: list[sp.csr_matrix | None] = [None] * n
        row[b] = grid.difference_matrix(a)
        row[a] = -grid.difference_matrix(b)
        blocks.append(row)
    return sp.bmat(blocks, format="csr")
