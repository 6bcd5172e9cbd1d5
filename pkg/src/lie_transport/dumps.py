import logging
from typing import Union
from pathlib import Path
from dataclasses import dataclass

import numpy as np

from lie_transport.grid import OneFormField, ScalarField, PeriodicGrid
from lie_transport.errors import ConfigError
from lie_transport.utils.constants import BIN_MAGIC

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FieldDump:
    """Raw dump contents; ``values`` is ``(components, *sizes)``."""

    sizes: tuple[int, ...]
    values: np.ndarray

    @classmethod
    def from_nodes(cls, grid: PeriodicGrid, values: np.ndarray) -> "FieldDump":
        """Node arrays ``(*sizes, n)`` such as the transport map."""
        return cls(grid.sizes, np.moveaxis(values, -1, 0))

    @classmethod
    def symmetric(cls, grid: PeriodicGrid, values: np.ndarray) -> "FieldDump":
        """Upper triangle ``(i <= j)`` of a ``(*sizes, n, n)`` tensor."""
        rows, cols = np.triu_indices(grid.dim)
        comps = [values[..., i, j] for i, j in zip(rows, cols)]
        return cls(grid.sizes, np.stack(comps))

    @property
    def components(self) -> int:
        return self.values.shape[0]

    def to_scalar(self) -> ScalarField:
        return ScalarField(PeriodicGrid(self.sizes), self.values[0])

    def to_one_form(self) -> OneFormField:
        return OneFormField(PeriodicGrid(self.sizes), self.values)


Field = Union[ScalarField, OneFormField, FieldDump]


def _layout(f: Field) -> tuple[PeriodicGrid, np.ndarray]:
    if isinstance(f, FieldDump):
        return PeriodicGrid(f.sizes), f.values
    if isinstance(f, ScalarField):
        return f.grid, f.values[None]
    return f.grid, f.values


def write_field_csv(path: str | Path, f: Field) -> Path:
    """Coordinates then components per row, x1 varying fastest."""
    path = Path(path)
    g, comps = _layout(f)
    coords = [c.ravel(order="F") for c in g.coords]
    cols = [v.ravel(order="F") for v in comps]
    header = ",".join(
        [f"x{a + 1}" for a in range(g.dim)]
        + [f"c{k}" for k in range(len(cols))]
    )
    np.savetxt(
        path,
        np.column_stack(coords + cols),
        delimiter=",",
        header=header,
        comments="",
        fmt="%.17g",
    )
    logger.debug(f"wrote {path} ({len(cols)} components on {g.sizes})")
    return path


def read_field_csv(path: str | Path) -> FieldDump:
    path = Path(path)
    header = path.read_text().splitlines()[0].split(",")
    dim = sum(1 for h in header if h.startswith("x"))
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    sizes = tuple(len(np.unique(table[:, a])) for a in range(dim))
    values = np.stack(
        [
            table[:, dim + k].reshape(sizes, order="F")
            for k in range(table.shape[1] - dim)
        ]
    )
    return FieldDump(sizes, values)


def write_field_bin(path: str | Path, f: Field) -> Path:
    """Little-endian header (magic, dim, components, sizes) then float64.

    The body follows the CSV rows: nodes with x1 varying fastest and the
    components of one node stored together.
    """
    path = Path(path)
    g, comps = _layout(f)
    head = np.array([g.dim, len(comps), *g.sizes], dtype="<u4")
    body = np.stack([v.ravel(order="F") for v in comps], axis=-1)
    path.write_bytes(BIN_MAGIC + head.tobytes() + body.astype("<f8").tobytes())
    logger.debug(f"wrote {path} ({len(comps)} components on {g.sizes})")
    return path


def read_field_bin(path: str | Path) -> FieldDump:
    raw = Path(path).read_bytes()
    if raw[:4] != BIN_MAGIC:
        raise ConfigError(f"{path} is not a field dump (magic {raw[:4]!r})")
    dim, comps = (int(v) for v in np.frombuffer(raw, "<u4", 2, 4))
    sizes = tuple(int(s) for s in np.frombuffer(raw, "<u4", dim, 12))
    offset = 12 + 4 * dim
    nodes = int(np.prod(sizes))
    count = comps * nodes
    if len(raw) != offset + 8 * count:
        raise ConfigError(
            f"{path} holds {len(raw) - offset} data bytes, expected {8 * count}"
        )
    body = np.frombuffer(raw, "<f8", count, offset).reshape(nodes, comps)
    values = np.stack(
        [body[:, k].reshape(sizes, order="F") for k in range(comps)]
    )
    return FieldDump(sizes, values.astype(np.float64))
