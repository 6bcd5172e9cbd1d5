import numpy as np
import pytest

from lie_transport.cost import (
    CostModel,
    TwistWindow,
    cexp,
    cost_jet,
    cost_value,
    check_twist_window,
)
from lie_transport.errors import ConfigError, CutLocusError

FD_STEP = 1e-6

MODELS = [
    CostModel.quadratic(),
    CostModel.perturbed(0.01, (1, 1)),
    CostModel.perturbed(0.001, (1, 2), separable=True),
]


def _pairs(count: int = 16) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(11)
    x = rng.random((count, 2))
    return x, x + rng.uniform(-0.3, 0.3, (count, 2))


def test_quadratic_value_wraps():
    c = cost_value(CostModel.quadratic(), [0.1, 0.1], [0.9, 0.1])
    assert float(c) == pytest.approx(0.02)


@pytest.mark.parametrize("model", MODELS)
def test_diagonal_normalisation(model: CostModel):
    x, _ = _pairs()
    jet = cost_jet(model, x, x)
    np.testing.assert_allclose(jet.c, 0.0, atol=1e-15)
    np.testing.assert_allclose(jet.c_i, 0.0, atol=1e-15)


@pytest.mark.parametrize("model", MODELS)
def test_jets_against_finite_differences(model: CostModel):
    x, xbar = _pairs()
    jet = cost_jet(model, x, xbar)
    np.testing.assert_allclose(
        jet.b_inv @ jet.b, np.broadcast_to(np.eye(2), jet.b.shape), atol=1e-12
    )
    for a in range(2):
        e = np.zeros(2)
        e[a] = FD_STEP
        fd_c = (cost_value(model, x + e, xbar) - cost_value(model, x - e, xbar))
        np.testing.assert_allclose(
            jet.c_i[:, a], fd_c / (2 * FD_STEP), atol=1e-7
        )

        plus = cost_jet(model, x, xbar + e)
        minus = cost_jet(model, x, xbar - e)
        # b_{is} = -d c_i / d xbar_s
        np.testing.assert_allclose(
            jet.b[..., a],
            -(plus.c_i - minus.c_i) / (2 * FD_STEP),
            atol=1e-6,
        )
        np.testing.assert_allclose(
            jet.b_xbar[..., a], (plus.b - minus.b) / (2 * FD_STEP), atol=1e-5
        )

        plus = cost_jet(model, x + e, xbar)
        minus = cost_jet(model, x - e, xbar)
        np.testing.assert_allclose(
            jet.c_ij[..., a], (plus.c_i - minus.c_i) / (2 * FD_STEP), atol=1e-6
        )
        np.testing.assert_allclose(
            jet.b_x[..., a], (plus.b - minus.b) / (2 * FD_STEP), atol=1e-5
        )


@pytest.mark.parametrize("model", MODELS)
def test_cexp_solves_contact_equation(model: CostModel):
    x, _ = _pairs()
    eta = np.random.default_rng(5).uniform(-0.3, 0.3, x.shape)
    xbar = cexp(model, x, eta)
    jet = cost_jet(model, x, xbar)
    np.testing.assert_allclose(eta + jet.c_i, 0.0, atol=1e-12)


@pytest.mark.parametrize("model", MODELS)
def test_cexp_of_zero_is_identity(model: CostModel):
    x, _ = _pairs()
    np.testing.assert_allclose(cexp(model, x, np.zeros_like(x)), x, atol=1e-13)


def test_cut_locus_guard():
    model = CostModel.quadratic()
    with pytest.raises(CutLocusError):
        cexp(model, [0.0, 0.0], [0.46, 0.0])
    with pytest.raises(CutLocusError):
        cost_value(model, [0.0, 0.0], [0.48, 0.0])


def test_twist_window_check():
    assert check_twist_window(CostModel.quadratic())["passed"]
    report = check_twist_window(CostModel.perturbed(0.01, (1, 1)))
    assert report["passed"]
    assert report["min_eig"] > 0.2
    assert not check_twist_window(CostModel.perturbed(0.1, (1, 1)))["passed"]


@pytest.mark.parametrize(
    "make",
    [
        lambda: TwistWindow(max_disp=0.5),
        lambda: TwistWindow(max_disp=0.45, margin=0.1),
        lambda: TwistWindow(margin=0.0),
        lambda: CostModel(epsilon=0.1),
        lambda: CostModel.perturbed(-0.1, (1, 1)),
        lambda: CostModel.perturbed(0.1, ()),
    ],
)
def test_invalid_models(make):
    with pytest.raises(ConfigError):
        make()
