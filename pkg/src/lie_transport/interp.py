from itertools import product

import numpy as np

from lie_transport.grid import ScalarField, PeriodicGrid

_OFFSETS = np.array([-1, 0, 1, 2])


def _weights(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Catmull-Rom (Keys, a = -1/2) kernel and its derivative in t
    t2 = t * t
    t3 = t2 * t
    w = np.stack(
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ]
    )
    dw = np.stack(
        [
            0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
            0.5 * (9.0 * t2 - 10.0 * t),
            0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
            0.5 * (3.0 * t2 - 2.0 * t),
        ]
    )
    return w, dw


class PeriodicCubic:
    """C^1 periodic tensor-product cubic interpolant of a node field."""

    def __init__(self, field: ScalarField):
        self.grid: PeriodicGrid = field.grid
        self.values = field.values

    def __call__(
        self, points: np.ndarray, gradient: bool = False
    ) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
        g = self.grid
        pts = np.mod(np.asarray(points, dtype=np.float64), 1.0)
        lead = pts.shape[:-1]

        idx, w, dw = [], [], []
        for a in range(g.dim):
            u = pts[..., a] * g.sizes[a]
            base = np.floor(u)
            wa, dwa = _weights(u - base)
            ia = (base.astype(np.int64)[None] + _OFFSETS.reshape((4,) + (1,) * len(lead)))
            idx.append(ia % g.sizes[a])
            w.append(wa)
            dw.append(dwa * g.sizes[a])

        value = np.zeros(lead)
        grad = np.zeros(lead + (g.dim,)) if gradient else None
        for combo in product(range(4), repeat=g.dim):
            samples = self.values[tuple(idx[a][o] for a, o in enumerate(combo))]
            coef = np.ones(lead)
            for a, o in enumerate(combo):
                coef = coef * w[a][o]
            value += coef * samples
            if grad is not None:
                for k in range(g.dim):
                    dcoef = np.ones(lead)
                    for a, o in enumerate(combo):
                        dcoef = dcoef * (dw[a][o] if a == k else w[a][o])
                    grad[..., k] += dcoef * samples
        if grad is not None:
            return value, grad
        return value
