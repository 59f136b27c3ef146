"""Direct stochastic simulation of lateral diffusion on (fluctuating) surfaces.

The particle position obeys the Ito SDE

    dX = eps^{-alpha} F(X / eps^alpha, eta) dt + sqrt(2) S(X / eps^alpha, eta) dB,

with ``S = sqrt(g^{-1})`` and the surface amplitudes ``eta`` following
independent OU processes sped up by ``eps^{-beta}``.  Positions are advanced
with Euler-Maruyama; amplitudes with the exact OU transition.  The effective
tensor is read off from the covariance of terminal displacements.

Regimes (``alpha``, ``beta``): ``case0`` a fixed periodic surface (1, -inf);
``quenched`` a frozen random realisation per path (1, -inf); ``caseII``
(0, 1); ``caseIII`` (1, 1); ``caseIV`` (1, 2).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import helfrich as hf
from . import surface as surf

__all__ = [
    "SimConfig",
    "DiffusionEstimate",
    "ModeTable",
    "SimulationError",
    "EstimatorError",
    "REGIMES",
    "mode_table",
    "simulate_paths",
    "estimate_diffusion",
    "path_seeds",
]

REGIMES = {
    "case0": (1.0, -np.inf),
    "quenched": (1.0, -np.inf),
    "caseII": (0.0, 1.0),
    "caseIII": (1.0, 1.0),
    "caseIV": (1.0, 2.0),
}

# mode profile types
COS, SIN, SINSIN = 0, 1, 2


class SimulationError(ArithmeticError):
    """A path produced a non-finite state."""


class EstimatorError(ValueError):
    """Too few samples for the diffusion estimator."""


@dataclass(frozen=True)
class ModeTable:
    """Flat modal representation ``h(y) = sum_m eta_m phi_m(y)`` used by the kernel.

    ``phi_m`` is ``cos(2 pi k.y)``, ``sin(2 pi k.y)`` or
    ``sin(2 pi k1 y1) sin(2 pi k2 y2)`` according to ``mtype``.  Amplitudes are
    either the fixed values ``amp`` (``random=False``) or stationary OU
    processes with variance ``var`` and rate ``gamma``.
    """

    mtype: np.ndarray
    k: np.ndarray
    amp: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    random: bool = False
    bump: tuple | None = None


def mode_table(source, k=(1, 1)) -> ModeTable:
    """Translate a surface spec, a Helfrich spectrum or ``(Gamma, Pi)`` into a :class:`ModeTable`.

    Parameters
    ----------
    source : surface spec, HelfrichParams, HelfrichSpectrum or (gamma, pi) tuple
        A ``(gamma, pi)`` pair denotes one fluctuating ``sin sin`` mode with
        wavevector ``k``.
    """
    def table(types, ks, amp, var=None, gam=None, random=False, bump=None):
        n = len(types)
        return ModeTable(np.asarray(types, np.int64).reshape(n),
                         np.asarray(ks, float).reshape(n, 2),
                         np.asarray(amp, float).reshape(n),
                         np.zeros(n) if var is None else np.asarray(var, float).reshape(n),
                         np.zeros(n) if gam is None else np.asarray(gam, float).reshape(n),
                         random, bump)

    if isinstance(source, surf.EggCarton):
        return table([SINSIN], [(1, 1)], [source.A])
    if isinstance(source, surf.MixedMode):
        return table([SINSIN, SINSIN], [(1, 3), (3, 1)], [1.0, source.A])
    if isinstance(source, surf.OneDim):
        return table([SIN], [(1, 0)], [source.A])
    if isinstance(source, surf.Fourier):
        m = np.asarray(source.modes, float).reshape(-1, 4)
        types = [COS] * len(m) + [SIN] * len(m)
        return table(types, np.vstack([m[:, :2], m[:, :2]]), np.concatenate([m[:, 2], m[:, 3]]))
    if isinstance(source, surf.Bump):
        return table([], np.zeros((0, 2)), [],
                     bump=(source.A, source.r, source.c[0], source.c[1], source.guard))
    if isinstance(source, hf.HelfrichParams):
        source = hf.build_spectrum(source)
    if isinstance(source, hf.HelfrichSpectrum):
        mask = hf.half_lattice(source)
        kk = source.modes[mask]
        n = len(kk)
        return table([COS] * n + [SIN] * n, np.vstack([kk, kk]), np.zeros(2 * n),
                     np.tile(2.0 * source.pi[mask], 2), np.tile(source.gamma[mask], 2),
                     random=True)
    if isinstance(source, tuple) and len(source) == 2:
        gamma, pi = source
        return table([SINSIN], [k], [0.0], [pi], [gamma], random=True)
    raise TypeError(f"cannot build a mode table from {type(source).__name__}")


@dataclass
class SimConfig:
    """Simulation parameters.

    ``source`` is anything accepted by :func:`mode_table`.  For ``case0`` it
    must be a deterministic surface; for the other regimes it must carry
    random amplitudes.
    """

    regime: str
    source: object
    epsilon: float = 0.1
    dt: float = 1e-5
    tFinal: float = 1.0
    nPaths: int = 10_000
    seed: int = 0
    k: tuple = (1, 1)

    def validate(self):
        if self.regime not in REGIMES:
            raise hf.ConfigError(f"unknown regime {self.regime!r}")
        if not (0.0 < self.epsilon <= 1.0):
            raise hf.ConfigError("epsilon must lie in (0, 1]")
        if not (self.dt > 0 and self.tFinal > 0):
            raise hf.ConfigError("dt and tFinal must be positive")
        alpha, beta = REGIMES[self.regime]
        limit = self.epsilon ** max(2 * alpha, beta) / 10.0
        if self.dt > limit * (1 + 1e-12):
            raise hf.ConfigError(
                f"dt={self.dt} exceeds the stiffness limit eps^max(2a,b)/10 = {limit}")
        if int(self.nPaths) < 1:
            raise hf.ConfigError("nPaths must be >= 1")
        nsteps = self.tFinal / self.dt
        if abs(nsteps - round(nsteps)) > 1e-6 * max(1.0, nsteps):
            raise hf.ConfigError("tFinal must be an integer multiple of dt")
        table = mode_table(self.source, self.k)
        if self.regime == "case0" and table.random:
            raise hf.ConfigError("case0 needs a fixed surface")
        if self.regime != "case0" and not table.random:
            raise hf.ConfigError(f"regime {self.regime} needs a random surface law")
        return table


@dataclass
class DiffusionEstimate:
    """Covariance-rate estimate of the effective tensor."""

    D: np.ndarray
    stderr: np.ndarray
    drift: np.ndarray
    driftStderr: np.ndarray
    tFinal: float
    nPaths: int

    def to_record(self) -> dict:
        return {
            "D11": float(self.D[0, 0]), "D12": float(self.D[0, 1]), "D22": float(self.D[1, 1]),
            "stderr11": float(self.stderr[0, 0]), "stderr12": float(self.stderr[0, 1]),
            "stderr22": float(self.stderr[1, 1]),
            "drift1": float(self.drift[0]), "drift2": float(self.drift[1]),
            "drift_stderr1": float(self.driftStderr[0]), "drift_stderr2": float(self.driftStderr[1]),
            "tFinal": float(self.tFinal), "nPaths": int(self.nPaths),
        }


def path_seeds(seed: int, nPaths: int) -> np.ndarray:
    """Independent per-path 32-bit seeds derived from the master seed."""
    return np.random.SeedSequence(int(seed)).generate_state(int(nPaths), dtype=np.uint32)


_TWO_PI = 2.0 * np.pi


@nb.njit(cache=True)
def _modal_jet(y1, y2, mtype, k, amp):
    h1 = h2 = h11 = h12 = h22 = 0.0
    for m in range(mtype.shape[0]):
        a = amp[m]
        w1 = _TWO_PI * k[m, 0]
        w2 = _TWO_PI * k[m, 1]
        t = mtype[m]
        if t == 2:
            s1 = np.sin(w1 * y1)
            c1 = np.cos(w1 * y1)
            s2 = np.sin(w2 * y2)
            c2 = np.cos(w2 * y2)
            h1 += a * w1 * c1 * s2
            h2 += a * w2 * s1 * c2
            h11 -= a * w1 * w1 * s1 * s2
            h12 += a * w1 * w2 * c1 * c2
            h22 -= a * w2 * w2 * s1 * s2
        else:
            th = w1 * y1 + w2 * y2
            c = np.cos(th)
            s = np.sin(th)
            if t == 0:
                v, d = c, -s
            else:
                v, d = s, c
            h1 += a * w1 * d
            h2 += a * w2 * d
            h11 -= a * w1 * w1 * v
            h12 -= a * w1 * w2 * v
            h22 -= a * w2 * w2 * v
    return h1, h2, h11, h12, h22


@nb.njit(cache=True)
def _bump_jet(y1, y2, bump):
    A, r, cx, cy, guard = bump[0], bump[1], bump[2], bump[3], bump[4]
    y1 = y1 - np.floor(y1)
    y2 = y2 - np.floor(y2)
    d1 = y1 - cx
    d2 = y2 - cy
    s2 = (d1 * d1 + d2 * d2) / (r * r)
    if s2 >= 1.0 - guard:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    q = 1.0 - s2
    f = A * np.exp(-1.0 / q)
    q1 = -2.0 * d1 / (r * r)
    q2 = -2.0 * d2 / (r * r)
    qq = -2.0 / (r * r)
    iq2 = 1.0 / (q * q)
    a = iq2 * iq2 - 2.0 * iq2 / q
    return (f * q1 * iq2, f * q2 * iq2, f * (q1 * q1 * a + qq * iq2),
            f * q1 * q2 * a, f * (q2 * q2 * a + qq * iq2))


@nb.njit(cache=True)
def _coefficients(y1, y2, mtype, k, amp, use_bump, bump):
    """Drift ``F`` and the rank-one data of ``sqrt(g^{-1})`` at a cell point."""
    if use_bump:
        h1, h2, h11, h12, h22 = _bump_jet(y1, y2, bump)
    else:
        h1, h2, h11, h12, h22 = _modal_jet(y1, y2, mtype, k, amp)
    gn2 = h1 * h1 + h2 * h2
    det = 1.0 + gn2
    lam = -((1.0 + h1 * h1) * h22 - 2.0 * h1 * h2 * h12
            + (1.0 + h2 * h2) * h11) / (det * det)
    c = 0.0 if gn2 < 1e-24 else (1.0 - 1.0 / np.sqrt(det)) / gn2
    return lam * h1, lam * h2, h1, h2, c


@nb.njit(cache=True, parallel=True)
def _kernel(seeds, mtype, k, amp0, var, gam, random, use_bump, bump,
            scale, drift_pref, ou_rate, dt, nsteps, coarse):
    n = seeds.shape[0]
    nm = mtype.shape[0]
    out = np.empty((n, 4))
    sq2dt = np.sqrt(2.0 * dt)
    sq4dt = np.sqrt(4.0 * dt)
    decay = np.exp(-gam * ou_rate * dt)
    noise = np.sqrt(var * (1.0 - np.exp(-2.0 * gam * ou_rate * dt)))
    evolve = random and ou_rate > 0.0
    for p in nb.prange(n):
        np.random.seed(seeds[p])
        amp = amp0.copy()
        if random:
            for m in range(nm):
                amp[m] = np.sqrt(var[m]) * np.random.standard_normal()
        x1 = 0.0
        x2 = 0.0
        # coupled path with step 2 dt driven by the summed increments
        z1 = 0.0
        z2 = 0.0
        cb1 = cb2 = cg1 = cg2 = cc = 0.0
        xa1 = xa2 = 0.0
        for st in range(nsteps):
            if coarse and st % 2 == 0:
                cb1, cb2, cg1, cg2, cc = _coefficients(z1 / scale, z2 / scale, mtype, k, amp,
                                                       use_bump, bump)
            b1, b2, g1, g2, c = _coefficients(x1 / scale, x2 / scale, mtype, k, amp,
                                              use_bump, bump)
            xi1 = np.random.standard_normal()
            xi2 = np.random.standard_normal()
            proj = g1 * xi1 + g2 * xi2
            x1 += drift_pref * b1 * dt + sq2dt * (xi1 - c * g1 * proj)
            x2 += drift_pref * b2 * dt + sq2dt * (xi2 - c * g2 * proj)
            if coarse:
                if st % 2 == 0:
                    xa1 = xi1
                    xa2 = xi2
                else:
                    e1 = (xa1 + xi1) / np.sqrt(2.0)
                    e2 = (xa2 + xi2) / np.sqrt(2.0)
                    pc = cg1 * e1 + cg2 * e2
                    z1 += drift_pref * cb1 * 2.0 * dt + sq4dt * (e1 - cc * cg1 * pc)
                    z2 += drift_pref * cb2 * 2.0 * dt + sq4dt * (e2 - cc * cg2 * pc)
            if evolve:
                for m in range(nm):
                    amp[m] = decay[m] * amp[m] + noise[m] * np.random.standard_normal()
        out[p, 0] = x1
        out[p, 1] = x2
        out[p, 2] = z1
        out[p, 3] = z2
    return out


def _set_threads():
    val = os.environ.get("MEMHOMOG_THREADS")
    if val:
        nb.set_num_threads(max(1, min(int(val), nb.config.NUMBA_NUM_THREADS)))


def simulate_paths(config: SimConfig, coarse: bool = False):
    """Terminal displacements ``X(tFinal) - X(0)`` of ``nPaths`` independent paths.

    Every path starts at the origin; path ``p`` uses its own seed from
    :func:`path_seeds`, so results do not depend on thread scheduling.

    Parameters
    ----------
    config : SimConfig
    coarse : bool
        Also integrate, for every path, a companion Euler-Maruyama path with
        step ``2 dt`` driven by the same Brownian increments (summed in
        pairs) and the same amplitude history.  Used for step-size
        extrapolation of weak errors.

    Returns
    -------
    ndarray, shape (nPaths, 2)
        Or a pair ``(fine, coarse)`` when ``coarse`` is set.
    """
    table = config.validate()
    alpha, beta = REGIMES[config.regime]
    eps = float(config.epsilon)
    scale = eps ** alpha
    ou_rate = 0.0 if not np.isfinite(beta) else eps ** (-beta)
    nsteps = int(round(config.tFinal / config.dt))
    if coarse and nsteps % 2:
        raise hf.ConfigError("the coupled coarse path needs an even number of steps")
    use_bump = table.bump is not None
    bump = np.asarray(table.bump if use_bump else (0.0, 1.0, 0.5, 0.5, 1e-12), float)
    _set_threads()
    X = _kernel(path_seeds(config.seed, config.nPaths), table.mtype, table.k, table.amp,
                table.var, table.gamma, bool(table.random), use_bump, bump,
                scale, 1.0 / scale, ou_rate, float(config.dt), nsteps, bool(coarse))
    bad = ~np.all(np.isfinite(X), axis=1)
    if np.any(bad):
        p = int(np.flatnonzero(bad)[0])
        raise SimulationError(f"path {p} produced a non-finite state (seed {config.seed})")
    if coarse:
        return X[:, :2].copy(), X[:, 2:].copy()
    return X[:, :2].copy()


def _jackknife(stat, n, nBlocks):
    B = min(int(nBlocks), n)
    idx = np.array_split(np.arange(n), B)
    reps = []
    for ib in idx:
        keep = np.ones(n, bool)
        keep[ib] = False
        reps.append(stat(keep))
    reps = np.array(reps)
    return np.sqrt((B - 1) / B * ((reps - reps.mean(axis=0)) ** 2).sum(axis=0))


def estimate_diffusion(displacements, tFinal: float, nBlocks: int = 100,
                       coarse=None) -> DiffusionEstimate:
    """``D = Cov(X) / (2 tFinal)`` with delete-a-block jackknife standard errors.

    Parameters
    ----------
    displacements : array_like, shape (n, 2)
        At least 100 samples.
    tFinal : float
    nBlocks : int
        Number of jackknife blocks (capped at ``n``).
    coarse : array_like, shape (n, 2), optional
        Displacements of the coupled ``2 dt`` paths.  When given, the
        first-order weak error in ``dt`` is removed by Richardson
        extrapolation, ``D = 2 D(dt) - D(2 dt)``, with the jackknife applied
        to the paired samples.
    """
    X = np.asarray(displacements, dtype=float)
    n = X.shape[0]
    if n < 100:
        raise EstimatorError(f"need at least 100 displacement samples, got {n}")
    cov = lambda Y: np.cov(Y, rowvar=False) / (2.0 * tFinal)
    if coarse is None:
        stat = lambda keep: cov(X[keep])
        Xd = X
    else:
        Xc = np.asarray(coarse, dtype=float)
        if Xc.shape != X.shape:
            raise EstimatorError("coarse displacements must match the fine ones")
        stat = lambda keep: 2.0 * cov(X[keep]) - cov(Xc[keep])
        Xd = 2.0 * X - Xc
    D = stat(np.ones(n, bool))
    se = _jackknife(stat, n, nBlocks)
    drift = Xd.mean(axis=0) / tFinal
    dse = Xd.std(axis=0, ddof=1) / np.sqrt(n) / tFinal
    return DiffusionEstimate(D, se, drift, dse, float(tFinal), n)
