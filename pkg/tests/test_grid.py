import math

import numpy as np
import pytest

from lie_transport.grid import (
    OneFormField,
    ScalarField,
    PeriodicGrid,
    TwoFormField,
    d0,
    d1,
    wrap,
    integrate,
    d0_matrix,
    d1_matrix,
    map_jacobian,
    torus_displacement,
)
from lie_transport.errors import ConfigError

TWO_PI = 2.0 * math.pi


@pytest.mark.parametrize(
    "sizes",
    [
        pytest.param((31, 32), marks=pytest.mark.xfail(raises=ConfigError)),
        pytest.param((6, 6), marks=pytest.mark.xfail(raises=ConfigError)),
        pytest.param((8,), marks=pytest.mark.xfail(raises=ConfigError)),
        pytest.param((8,) * 4, marks=pytest.mark.xfail(raises=ConfigError)),
        (8, 8),
        (16, 8, 12),
    ],
)
def test_grid_sizes(sizes: tuple[int, ...]):
    g = PeriodicGrid(sizes)
    assert g.num_nodes == math.prod(sizes)
    assert g.points.shape == (*sizes, len(sizes))


def test_fields_reject_bad_values(grid2: PeriodicGrid):
    bad = np.zeros(grid2.shape)
    bad[3, 4] = np.nan
    with pytest.raises(ConfigError):
        ScalarField(grid2, bad)
    with pytest.raises(ConfigError):
        OneFormField(grid2, np.zeros(grid2.shape))
    with pytest.raises(ConfigError):
        ScalarField.sample(grid2, lambda x, y: x)


def test_d0_constant_is_zero(grid2: PeriodicGrid):
    assert d0(ScalarField.constant(grid2, 3.5)).sup_norm() == 0.0


def test_d0_sinusoid(grid2: PeriodicGrid):
    u = ScalarField.sample(grid2, lambda x, y: np.sin(TWO_PI * x))
    h = grid2.spacing[0]
    x = grid2.coords[0]
    expected = np.cos(TWO_PI * x) * math.sin(TWO_PI * h) / h
    du = d0(u)
    np.testing.assert_allclose(du.values[0], expected, atol=1e-12)
    assert np.max(np.abs(du.values[1])) == 0.0


@pytest.mark.parametrize("sizes", [(32, 32), (64, 48), (16, 16, 16)])
def test_discrete_complex(sizes: tuple[int, ...]):
    g = PeriodicGrid(sizes)
    rng = np.random.default_rng(7)
    for _ in range(5):
        du = d0(ScalarField(g, rng.standard_normal(g.shape)))
        assert d1(du).sup_norm() <= 1e-13 * du.sup_norm()


def test_d1_of_shear(grid2: PeriodicGrid):
    eta = OneFormField.sample(
        grid2, lambda x, y: [np.sin(TWO_PI * y), np.zeros_like(x)]
    )
    h = grid2.spacing[1]
    y = grid2.coords[1]
    expected = -np.cos(TWO_PI * y) * math.sin(TWO_PI * h) / h
    np.testing.assert_allclose(d1(eta).values[0], expected, atol=1e-12)
    assert d1(OneFormField.constant(grid2, [0.3, -0.2])).sup_norm() == 0.0


def test_sparse_operators_match(grid2: PeriodicGrid):
    rng = np.random.default_rng(3)
    u = ScalarField(grid2, rng.standard_normal(grid2.shape))
    eta = OneFormField(grid2, rng.standard_normal((2, *grid2.shape)))
    np.testing.assert_allclose(
        d0_matrix(grid2) @ u.values.ravel(), d0(u).values.ravel(), atol=1e-12
    )
    np.testing.assert_allclose(
        d1_matrix(grid2) @ eta.values.ravel(),
        d1(eta).values.ravel(),
        atol=1e-12,
    )


def test_parity_classes(grid3: PeriodicGrid):
    ind = grid3.parity_indicators()
    assert ind.shape == (grid3.num_nodes, 8)
    assert np.all(np.asarray(ind.sum(axis=1)).ravel() == 1.0)
    D = d0_matrix(grid3)
    assert np.max(np.abs((D @ ind).toarray())) == 0.0

    rng = np.random.default_rng(0)
    vals = grid3.remove_parity_means(rng.standard_normal(grid3.shape))
    for p in range(8):
        assert abs(np.mean(vals[grid3.parity == p])) < 1e-14


def test_integrate(grid2: PeriodicGrid):
    one = ScalarField.constant(grid2, 1.0)
    assert integrate(one) == pytest.approx(1.0, abs=1e-15)
    wave = ScalarField.sample(grid2, lambda x, y: 1.0 + np.cos(TWO_PI * x))
    assert integrate(wave, wave) == pytest.approx(1.5, abs=1e-13)


@pytest.mark.parametrize("shift", [(1, 0), (3, 5), (-2, 7)])
def test_d_commutes_with_lattice_translations(
    grid2: PeriodicGrid, shift: tuple[int, int]
):
    rng = np.random.default_rng(5)
    u = rng.standard_normal(grid2.shape)
    eta = rng.standard_normal((2, *grid2.shape))

    def roll(values: np.ndarray) -> np.ndarray:
        return np.roll(values, shift, axis=(-2, -1))

    np.testing.assert_array_equal(
        d0(ScalarField(grid2, roll(u))).values,
        roll(d0(ScalarField(grid2, u)).values),
    )
    np.testing.assert_array_equal(
        d1(OneFormField(grid2, roll(eta))).values,
        roll(d1(OneFormField(grid2, eta)).values),
    )


def test_d_is_linear(grid3: PeriodicGrid):
    rng = np.random.default_rng(9)
    u = ScalarField(grid3, rng.standard_normal(grid3.shape))
    v = ScalarField(grid3, rng.standard_normal(grid3.shape))
    np.testing.assert_allclose(
        d0(2.5 * u - v).values, (2.5 * d0(u) - d0(v)).values, atol=1e-10
    )
    a = OneFormField(grid3, rng.standard_normal((3, *grid3.shape)))
    b = OneFormField(grid3, rng.standard_normal((3, *grid3.shape)))
    np.testing.assert_allclose(
        d1(a * -0.5 + b).values, (d1(a) * -0.5 + d1(b)).values, atol=1e-10
    )


def test_integrate_is_translation_invariant(grid2: PeriodicGrid):
    rng = np.random.default_rng(2)
    u = rng.standard_normal(grid2.shape)
    w = rng.random(grid2.shape)
    total = integrate(ScalarField(grid2, u), ScalarField(grid2, w))
    for shift in ((1, 0), (0, 3), (5, 11)):
        moved = integrate(
            ScalarField(grid2, np.roll(u, shift, axis=(0, 1))),
            ScalarField(grid2, np.roll(w, shift, axis=(0, 1))),
        )
        assert moved == total


def test_torus_displacement():
    d = torus_displacement([0.9, 0.1], [0.1, 0.6])
    np.testing.assert_allclose(d, [0.2, 0.5])
    np.testing.assert_allclose(wrap([-0.25, 1.5]), [0.75, 0.5])


def test_map_jacobian_of_translation(grid2: PeriodicGrid):
    T = wrap(grid2.points + np.array([0.3, -0.45]))
    DT = map_jacobian(grid2, T)
    np.testing.assert_allclose(DT, np.broadcast_to(np.eye(2), DT.shape))


def test_field_arithmetic(grid2: PeriodicGrid):
    a = OneFormField.basis(grid2, 0)
    b = OneFormField.basis(grid2, 1)
    c = 2.0 * a - b
    np.testing.assert_allclose(c.means(), [2.0, -1.0])
    assert c.l2_norm() == pytest.approx(math.sqrt(5.0))
    with pytest.raises(ConfigError):
        _ = a + ScalarField.zeros(grid2)
    assert TwoFormField.zeros(grid2).values.shape == (1, 32, 32)
