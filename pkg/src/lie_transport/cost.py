import math
import logging
from typing import Any
from dataclasses import field, dataclass

import numpy as np
from scipy.stats import qmc

from lie_transport.grid import wrap, torus_displacement
from lie_transport.errors import (
    ConfigError,
    SingularJet,
    CutLocusError,
    NoConvergence,
)
from lie_transport.utils.types import CostKind, TwistReport
from lie_transport.utils.constants import (
    CEXP_TOL,
    MAX_DISP,
    SINGULAR_DET,
    TWIST_MIN_EIG,
    CEXP_MAX_ITER,
    WINDOW_MARGIN,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TwistWindow:
    max_disp: float = MAX_DISP
    margin: float = WINDOW_MARGIN

    def __post_init__(self) -> None:
        self._validate()

    def _validate(self) -> None:
        if not 0.0 < self.max_disp < 0.5:
            raise ConfigError(f"max_disp must lie in (0, 1/2), got {self.max_disp}")
        if self.margin <= 0.0:
            raise ConfigError(f"margin must be positive, got {self.margin}")
        if self.max_disp + self.margin > 0.5:
            raise ConfigError(
                f"max_disp + margin must not exceed 1/2, got "
                f"{self.max_disp} + {self.margin}"
            )

    @property
    def cut_radius(self) -> float:
        """Displacements at or beyond this are treated as cut-locus pairs."""
        return 0.5 - self.margin


@dataclass(frozen=True)
class CostModel:
    """Quadratic periodic cost, optionally perturbed.

    The perturbation is ``eps * (prod_a cos(2 pi k_a d_a) - 1)`` in the
    displacement ``d = xbar - x``, plus ``-eps/2 (cos 2 pi k.x - cos 2 pi
    k.xbar)^2`` when ``separable`` is set. Both differ from the plain
    products only by terms in ``x`` alone, ``xbar`` alone or constants, so
    the mixed jets are unchanged while ``c(x, x) = 0`` and
    ``c_i(x, x) = 0`` hold for every model.
    """

    kind: CostKind = CostKind.QUADRATIC
    epsilon: float = 0.0
    freq: tuple[int, ...] = ()
    separable: bool = False
    window: TwistWindow = field(default_factory=TwistWindow)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", CostKind(self.kind))
        object.__setattr__(self, "freq", tuple(int(k) for k in self.freq))
        self._validate()

    def _validate(self) -> None:
        if self.epsilon < 0.0 or not math.isfinite(self.epsilon):
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.kind == CostKind.PERTURBED and not self.freq:
            raise ConfigError("perturbed-quadratic cost needs a freq vector")
        if self.kind == CostKind.QUADRATIC and self.epsilon:
            raise ConfigError("quadratic-periodic cost takes no epsilon")

    @staticmethod
    def quadratic(window: TwistWindow | None = None) -> "CostModel":
        return CostModel(window=window or TwistWindow())

    @staticmethod
    def perturbed(
        epsilon: float,
        freq: Any,
        separable: bool = False,
        window: TwistWindow | None = None,
    ) -> "CostModel":
        return CostModel(
            CostKind.PERTURBED,
            float(epsilon),
            tuple(freq),
            separable,
            window or TwistWindow(),
        )

    @property
    def is_flat(self) -> bool:
        """True when b is the identity everywhere."""
        return self.kind == CostKind.QUADRATIC or self.epsilon == 0.0

    def _omega(self, n: int) -> np.ndarray:
        if len(self.freq) != n:
            raise ConfigError(
                f"cost freq {self.freq} does not match dimension {n}"
            )
        return TWO_PI * np.asarray(self.freq, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class CostJet:
    """Cost derivatives at point pairs; leading axes follow the inputs.

    ``b[..., i, s] = -c_{i sbar}``, ``b_inv[..., s, i]`` its inverse,
    ``b_x[..., i, s, j] = d b_{is} / d x_j`` and
    ``b_xbar[..., i, s, p] = d b_{is} / d xbar_p``.
    """

    c: np.ndarray
    c_i: np.ndarray
    c_sbar: np.ndarray
    c_ij: np.ndarray
    b: np.ndarray
    b_inv: np.ndarray
    b_x: np.ndarray
    b_xbar: np.ndarray

    @property
    def det_b(self) -> np.ndarray:
        return np.linalg.det(self.b)


def _cos_deriv(order: int, angle: np.ndarray) -> np.ndarray:
    r = order % 4
    if r == 0:
        return np.cos(angle)
    if r == 1:
        return -np.sin(angle)
    if r == 2:
        return -np.cos(angle)
    return np.sin(angle)


def _product_kernel(
    omega: np.ndarray, d: np.ndarray
) -> tuple[np.ndarray, ...]:
    """``P(d) - 1`` with P = prod cos(omega_a d_a) and its d-derivatives."""
    n = d.shape[-1]
    lead = d.shape[:-1]
    # table[a][m] = omega_a**m * cos^(m)(omega_a d_a)
    table = [
        [omega[a] ** m * _cos_deriv(m, omega[a] * d[..., a]) for m in range(4)]
        for a in range(n)
    ]

    def partial(*idx: int) -> np.ndarray:
        out = np.ones(lead)
        for a in range(n):
            out = out * table[a][idx.count(a)]
        return out

    p0 = partial() - 1.0
    p1 = np.stack([partial(i) for i in range(n)], axis=-1)
    p2 = np.empty(lead + (n, n))
    p3 = np.empty(lead + (n, n, n))
    for i in range(n):
        for j in range(n):
            p2[..., i, j] = partial(i, j)
            for k in range(n):
                p3[..., i, j, k] = partial(i, j, k)
    return p0, p1, p2, p3


def _jet_arrays(model: CostModel, x: np.ndarray, xbar: np.ndarray) -> CostJet:
    x = np.asarray(x, dtype=np.float64)
    xbar = np.asarray(xbar, dtype=np.float64)
    d = torus_displacement(x, xbar)
    n = d.shape[-1]
    lead = d.shape[:-1]
    eye = np.broadcast_to(np.eye(n), lead + (n, n))

    c = 0.5 * np.sum(d * d, axis=-1)
    c_i = -d.copy()
    c_sbar = d.copy()
    c_ij = eye.copy()
    b = eye.copy()
    b_x = np.zeros(lead + (n, n, n))
    b_xbar = np.zeros(lead + (n, n, n))

    eps = model.epsilon
    if not model.is_flat:
        omega = model._omega(n)
        p0, p1, p2, p3 = _product_kernel(omega, d)
        c = c + eps * p0
        c_i = c_i - eps * p1
        c_sbar = c_sbar + eps * p1
        c_ij = c_ij + eps * p2
        b = b + eps * p2
        b_x = b_x - eps * p3
        b_xbar = b_xbar + eps * p3

        if model.separable:
            phi = np.tensordot(x, omega, axes=([-1], [0]))
            phib = np.tensordot(xbar, omega, axes=([-1], [0]))
            s, co = np.sin(phi), np.cos(phi)
            sb, cb = np.sin(phib), np.cos(phib)
            kk = np.multiply.outer(omega, omega)
            kkk = np.multiply.outer(kk, omega)
            c = c - 0.5 * eps * (co - cb) ** 2
            c_i = c_i + eps * (s * (co - cb))[..., None] * omega
            c_sbar = c_sbar + eps * (sb * (cb - co))[..., None] * omega
            c_ij = c_ij + eps * (np.cos(2 * phi) - co * cb)[..., None, None] * kk
            b = b - eps * (s * sb)[..., None, None] * kk
            b_x = b_x - eps * (co * sb)[..., None, None, None] * kkk
            b_xbar = b_xbar - eps * (s * cb)[..., None, None, None] * kkk

    with np.errstate(all="ignore"):
        b_inv = np.linalg.inv(b)
    return CostJet(c, c_i, c_sbar, c_ij, b, b_inv, b_x, b_xbar)


def _check_window(model: CostModel, x: np.ndarray, xbar: np.ndarray) -> None:
    d = torus_displacement(x, xbar)
    worst = float(np.max(np.abs(d))) if d.size else 0.0
    if worst >= model.window.cut_radius:
        raise CutLocusError(
            f"displacement {worst:.6f} reaches the cut-locus guard "
            f"{model.window.cut_radius:.6f}"
        )


def cost_value(model: CostModel, x: Any, xbar: Any) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    xbar = np.asarray(xbar, dtype=np.float64)
    _check_window(model, x, xbar)
    return _jet_arrays(model, x, xbar).c


def cost_jet(model: CostModel, x: Any, xbar: Any) -> CostJet:
    x = np.asarray(x, dtype=np.float64)
    xbar = np.asarray(xbar, dtype=np.float64)
    _check_window(model, x, xbar)
    jet = _jet_arrays(model, x, xbar)
    det = jet.det_b
    if np.any(det <= SINGULAR_DET):
        raise SingularJet(
            f"det b = {float(np.min(det)):.3e} <= {SINGULAR_DET:.0e}"
        )
    return jet


def cexp(model: CostModel, x: Any, eta_x: Any) -> np.ndarray:
    """Cost exponential: the point xbar with ``eta_x + c_i(x, xbar) = 0``."""
    x = np.asarray(x, dtype=np.float64)
    eta = np.asarray(eta_x, dtype=np.float64)
    radius = model.window.cut_radius
    if np.any(np.abs(eta) >= radius):
        raise CutLocusError(
            f"covector {float(np.max(np.abs(eta))):.6f} leaves the twist window"
        )
    if model.is_flat:
        return wrap(x + eta)

    d = eta.copy()
    for it in range(CEXP_MAX_ITER):
        jet = _jet_arrays(model, x, x + d)
        resid = eta + jet.c_i
        err = float(np.max(np.abs(resid))) if resid.size else 0.0
        if err <= CEXP_TOL:
            logger.debug(f"cexp converged in {it} iterations ({err:.2e})")
            return wrap(x + d)
        det = jet.det_b
        if np.any(det <= SINGULAR_DET):
            raise SingularJet(f"det b = {float(np.min(det)):.3e} inside cexp")
        d = d + np.linalg.solve(jet.b, resid[..., None])[..., 0]
        if np.any(np.abs(d) >= radius):
            raise CutLocusError("cexp iterate left the twist window")
    raise NoConvergence(
        f"cexp did not reach {CEXP_TOL:.0e} in {CEXP_MAX_ITER} iterations "
        f"(residual {err:.3e})"
    )


def check_twist_window(
    model: CostModel,
    window: TwistWindow | None = None,
    samples: int = 1024,
    dim: int = 2,
) -> TwistReport:
    if samples < 1:
        raise ConfigError(f"samples must be >= 1, got {samples}")
    window = window or model.window
    if not model.is_flat:
        dim = len(model.freq)
    u = qmc.Halton(d=2 * dim, scramble=False).random(samples)
    x = u[:, :dim]
    disp = (2.0 * u[:, dim:] - 1.0) * window.max_disp
    jet = _jet_arrays(model, x, x + disp)
    sym = 0.5 * (jet.b + np.swapaxes(jet.b, -1, -2))
    min_eig = float(np.min(np.linalg.eigvalsh(sym)))
    min_det = float(np.min(jet.det_b))
    passed = min_eig >= TWIST_MIN_EIG
    logger.info(
        f"twist window check: min eig {min_eig:.3e}, min det {min_det:.3e}, "
        f"passed={passed}"
    )
    return {
        "passed": passed,
        "samples": samples,
        "min_det": min_det,
        "min_eig": min_eig,
        "max_disp": window.max_disp,
        "margin": window.margin,
    }
