"""Periodic Monge-gauge surfaces and their pointwise geometry.

A surface is the graph ``(x, h(x))`` of a 1-periodic height function on the
unit torus.  Every variant provides the height together with its exact
(hand-differentiated) gradient and Hessian; from these the inverse metric,
the area element and the drift coefficient of lateral Brownian motion are
computed in closed form.

All evaluation routines are vectorised: ``x`` may be a single point of shape
``(2,)`` or an array of points of shape ``(..., 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * np.pi

__all__ = [
    "EggCarton",
    "MixedMode",
    "Bump",
    "OneDim",
    "Fourier",
    "MetricData",
    "SurfaceError",
    "eval_height",
    "eval_derivatives",
    "metric",
    "drift_F",
    "metric_from_derivatives",
    "drift_from_derivatives",
    "flat",
]


class SurfaceError(ValueError):
    """Raised for an invalid surface specification."""


class _Jet(NamedTuple):
    h: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h11: np.ndarray
    h12: np.ndarray
    h22: np.ndarray


def _split(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError(f"points must have trailing dimension 2, got shape {x.shape}")
    return x[..., 0], x[..., 1]


@dataclass(frozen=True)
class EggCarton:
    """``h(x) = A sin(2 pi x1) sin(2 pi x2)``."""

    A: float = 1.0

    def _jet(self, x1, x2) -> _Jet:
        A = self.A
        s1, c1 = np.sin(TWO_PI * x1), np.cos(TWO_PI * x1)
        s2, c2 = np.sin(TWO_PI * x2), np.cos(TWO_PI * x2)
        w = TWO_PI
        h = A * s1 * s2
        return _Jet(h, A * w * c1 * s2, A * w * s1 * c2,
                    -w * w * h, A * w * w * c1 * c2, -w * w * h)


@dataclass(frozen=True)
class MixedMode:
    """``h(x) = sin(2 pi x1) sin(6 pi x2) + A sin(6 pi x1) sin(2 pi x2)``."""

    A: float = 1.0

    def _jet(self, x1, x2) -> _Jet:
        a = EggCartonPair(1.0, 1, 3)._jet(x1, x2)
        b = EggCartonPair(self.A, 3, 1)._jet(x1, x2)
        return _Jet(*(p + q for p, q in zip(a, b)))


@dataclass(frozen=True)
class EggCartonPair:
    """Separable product ``A sin(2 pi k1 x1) sin(2 pi k2 x2)`` (building block)."""

    A: float
    k1: int
    k2: int

    def _jet(self, x1, x2) -> _Jet:
        w1, w2 = TWO_PI * self.k1, TWO_PI * self.k2
        s1, c1 = np.sin(w1 * x1), np.cos(w1 * x1)
        s2, c2 = np.sin(w2 * x2), np.cos(w2 * x2)
        A = self.A
        h = A * s1 * s2
        return _Jet(h, A * w1 * c1 * s2, A * w2 * s1 * c2,
                    -w1 * w1 * h, A * w1 * w2 * c1 * c2, -w2 * w2 * h)


@dataclass(frozen=True)
class OneDim:
    """``h(x) = A sin(2 pi x1)``; independent of ``x2``."""

    A: float = 1.0

    def _jet(self, x1, x2) -> _Jet:
        A = self.A
        s1, c1 = np.sin(TWO_PI * x1), np.cos(TWO_PI * x1)
        z = np.zeros(np.broadcast(x1, x2).shape)
        h = A * s1 + z
        return _Jet(h, A * TWO_PI * c1 + z, z.copy(),
                    -TWO_PI ** 2 * h, z.copy(), z.copy())


@dataclass(frozen=True)
class Bump:
    """Compactly supported bump ``A exp(-1/(1 - s^2))`` with ``s = |x - c|/r``.

    The disk of radius ``r`` about ``c`` must lie strictly inside the unit
    cell so that the periodic extension is smooth across the seam.
    """

    A: float = 1.0
    r: float = 0.45
    c: tuple = (0.5, 0.5)
    guard: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        object.__setattr__(self, "c", c)
        if not (self.r > 0):
            raise SurfaceError("bump radius must be positive")
        if not all(0.0 < v < 1.0 for v in c):
            raise SurfaceError("bump centre must lie in the open unit square")
        dist = min(c[0], c[1], 1.0 - c[0], 1.0 - c[1])
        if not self.r < dist:
            raise SurfaceError(
                f"bump radius {self.r} must be smaller than the distance {dist} "
                "from the centre to the cell boundary")

    def _jet(self, x1, x2) -> _Jet:
        r = self.r
        d1 = np.asarray(x1 - self.c[0], dtype=float)
        d2 = np.asarray(x2 - self.c[1], dtype=float)
        d1, d2 = np.broadcast_arrays(d1, d2)
        s2 = (d1 * d1 + d2 * d2) / (r * r)
        inside = s2 < 1.0 - self.guard
        q = np.where(inside, 1.0 - s2, 1.0)
        f = np.where(inside, self.A * np.exp(-1.0 / q), 0.0)
        q1 = -2.0 * d1 / r ** 2
        q2 = -2.0 * d2 / r ** 2
        qq = -2.0 / r ** 2
        inv_q2 = 1.0 / q ** 2
        # derivatives of exp(-1/q): f' = f q_i / q^2,
        # f_ij = f [q_i q_j / q^4 - 2 q_i q_j / q^3 + q_ij / q^2]
        a = inv_q2 * inv_q2 - 2.0 * inv_q2 / q
        h1 = f * q1 * inv_q2
        h2 = f * q2 * inv_q2
        h11 = f * (q1 * q1 * a + qq * inv_q2)
        h12 = f * (q1 * q2 * a)
        h22 = f * (q2 * q2 * a + qq * inv_q2)
        return _Jet(f, h1, h2, h11, h12, h22)


@dataclass(frozen=True)
class Fourier:
    """Finite real Fourier expansion ``sum a_k cos(2 pi k.x) + b_k sin(2 pi k.x)``.

    Parameters
    ----------
    modes : sequence of (k1, k2, a, b)
        Integer wavevector and real cosine/sine coefficients.  The zero
        wavevector and repeated wavevectors are rejected.
    """

    modes: tuple = ()

    def __post_init__(self):
        arr = np.asarray(self.modes, dtype=float).reshape(-1, 4)
        k = arr[:, :2]
        if not np.all(k == np.round(k)):
            raise SurfaceError("Fourier wavevectors must be integer")
        ki = k.astype(np.int64)
        if np.any((ki[:, 0] == 0) & (ki[:, 1] == 0)):
            raise SurfaceError("Fourier mode (0, 0) is not allowed (mean-zero field)")
        if len({(int(a), int(b)) for a, b in ki}) != len(ki):
            raise SurfaceError("duplicate wavevector in Fourier mode list")
        object.__setattr__(self, "modes", tuple(
            (int(a), int(b), float(c), float(d)) for (a, b), (c, d) in zip(ki, arr[:, 2:])))
        object.__setattr__(self, "_arr", arr)

    @property
    def k(self) -> np.ndarray:
        return self._arr[:, :2]

    @property
    def a(self) -> np.ndarray:
        return self._arr[:, 2]

    @property
    def b(self) -> np.ndarray:
        return self._arr[:, 3]

    def _jet(self, x1, x2) -> _Jet:
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        shape = x1.shape
        out = [np.zeros(x1.size) for _ in range(6)]
        if len(self.modes) == 0:
            return _Jet(*(o.reshape(shape) for o in out))
        X1, X2 = x1.ravel(), x2.ravel()
        w = TWO_PI * self.k
        a, b = self.a, self.b
        # chunk over points to bound memory
        step = max(1, 2 ** 22 // max(1, len(a)))
        for s in range(0, X1.size, step):
            sl = slice(s, s + step)
            th = np.outer(X1[sl], w[:, 0]) + np.outer(X2[sl], w[:, 1])
            c, sn = np.cos(th), np.sin(th)
            val = c * a + sn * b          # (n, K)
            der = -sn * a + c * b         # d/dtheta
            out[0][sl] = val.sum(axis=1)
            out[1][sl] = der @ w[:, 0]
            out[2][sl] = der @ w[:, 1]
            out[3][sl] = -(val @ (w[:, 0] ** 2))
            out[4][sl] = -(val @ (w[:, 0] * w[:, 1]))
            out[5][sl] = -(val @ (w[:, 1] ** 2))
        return _Jet(*(o.reshape(shape) for o in out))


def flat() -> EggCarton:
    """The flat plane ``h = 0``."""
    return EggCarton(0.0)


def _jet(spec, x) -> _Jet:
    x1, x2 = _split(x)
    x1 = np.mod(x1, 1.0)
    x2 = np.mod(x2, 1.0)
    return spec._jet(x1, x2)


def eval_height(spec, x):
    """Height ``h(x)``; ``x`` is reduced modulo 1."""
    return _jet(spec, x).h


def eval_derivatives(spec, x):
    """Analytic gradient and Hessian of ``h``.

    Returns
    -------
    grad : ndarray, shape (..., 2)
    hess : ndarray, shape (..., 2, 2)
    """
    j = _jet(spec, x)
    grad = np.stack([j.h1, j.h2], axis=-1)
    hess = np.stack([np.stack([j.h11, j.h12], axis=-1),
                     np.stack([j.h12, j.h22], axis=-1)], axis=-2)
    return grad, hess


@dataclass(frozen=True)
class MetricData:
    """Pointwise geometry: inverse metric, area element, gradient, Hessian, drift.

    Array fields carry the leading point dimensions of the query.
    """

    gInv: np.ndarray
    sqrtDetG: np.ndarray
    gradH: np.ndarray
    hessH: np.ndarray
    drift: np.ndarray


def metric_from_derivatives(h1, h2):
    """Inverse metric entries and area element from the gradient components.

    Uses the rank-one closed form ``g^{-1} = I - grad h (x) grad h / (1 + |grad h|^2)``.

    Returns
    -------
    (gi11, gi12, gi22, sqrtg)
    """
    det = 1.0 + h1 * h1 + h2 * h2
    gi11 = 1.0 - h1 * h1 / det
    gi12 = -h1 * h2 / det
    gi22 = 1.0 - h2 * h2 / det
    return gi11, gi12, gi22, np.sqrt(det)


def drift_from_derivatives(h1, h2, h11, h12, h22):
    """Drift coefficient from first and second partials (componentwise).

    ``F = -lam * grad h`` with
    ``lam = ((1+h1^2) h22 - 2 h1 h2 h12 + (1+h2^2) h11) / (1+|grad h|^2)^2``;
    the sign is the one produced by expanding the divergence form
    ``(1/sqrt|g|) div(sqrt|g| g^{-1})``.
    """
    det = 1.0 + h1 * h1 + h2 * h2
    lam = -((1.0 + h1 * h1) * h22 - 2.0 * h1 * h2 * h12 + (1.0 + h2 * h2) * h11) / (det * det)
    return lam * h1, lam * h2


def metric(spec, x) -> MetricData:
    """Full :class:`MetricData` at ``x``."""
    j = _jet(spec, x)
    gi11, gi12, gi22, sq = metric_from_derivatives(j.h1, j.h2)
    F1, F2 = drift_from_derivatives(j.h1, j.h2, j.h11, j.h12, j.h22)
    gInv = np.stack([np.stack([gi11, gi12], axis=-1),
                     np.stack([gi12, gi22], axis=-1)], axis=-2)
    grad = np.stack([j.h1, j.h2], axis=-1)
    hess = np.stack([np.stack([j.h11, j.h12], axis=-1),
                     np.stack([j.h12, j.h22], axis=-1)], axis=-2)
    return MetricData(gInv, sq, grad, hess, np.stack([F1, F2], axis=-1))


def drift_F(spec, x):
    """Drift vector ``F(x)`` of lateral Brownian motion on the surface.

    ``F = (1/sqrt|g|) div(sqrt|g| g^{-1})``, evaluated through the expanded
    closed form, which is proportional to ``grad h``.
    """
    j = _jet(spec, x)
    F1, F2 = drift_from_derivatives(j.h1, j.h2, j.h11, j.h12, j.h22)
    return np.stack([F1, F2], axis=-1)
