"""Ensemble quantities for fluctuating surfaces.

* Quenched averages: the periodic effective tensor of each frozen stationary
  realisation, averaged over realisations.
* Annealed averages: when the surface fluctuates much faster than the
  particle moves, ``D = (1 + E[1/|g|]) / 2``, an expectation under the
  stationary mode law.
* The weak-disorder expansion ``1 - delta/2``.
* The effective drift of the intermediate regime for a single fluctuating
  mode, from correctors computed on a grid of mode amplitudes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from . import fem
from . import helfrich as hf
from . import surface as surf

__all__ = [
    "EnsembleSummary",
    "AnnealedEstimate",
    "DriftCheck",
    "quenched_average",
    "weak_disorder_estimate",
    "annealed_tensor",
    "annealed_exact",
    "annealed_drift_check",
    "case3_drift_estimate",
    "single_mode_coefficients",
    "EnsembleError",
]


class EnsembleError(ArithmeticError):
    """A per-sample computation failed; ``seed`` and ``index`` identify it."""

    def __init__(self, msg, seed=None, index=None):
        super().__init__(msg)
        self.seed = seed
        self.index = index


@dataclass
class EnsembleSummary:
    """Quenched ensemble statistics.

    ``perSample`` rows are ``(index, D11, D12, D22, Z)``; the stream of sample
    ``i`` is seeded by ``(seed, i)``.
    """

    meanD: np.ndarray
    stdD: np.ndarray
    meanAreaScaling: float
    nSamples: int
    seed: int
    perSample: np.ndarray = field(repr=False, default=None)
    meanLower: np.ndarray = field(repr=False, default=None)
    meanUpper: np.ndarray = field(repr=False, default=None)
    delta: float = float("nan")

    @property
    def stderrD(self) -> np.ndarray:
        return self.stdD / np.sqrt(self.nSamples)

    def isotropic_gap(self):
        """Mean and standard error of ``tr(D)/2 - 1/Z`` over the samples.

        In expectation this equals ``meanD11 - E[1/Z]`` (the mean tensor is
        isotropic), but per sample the anisotropic fluctuations cancel, so it
        resolves the small area-scaling gap with far less noise.
        """
        P = self.perSample
        g = 0.5 * (P[:, 1] + P[:, 3]) - 1.0 / P[:, 4]
        n = len(g)
        se = g.std(ddof=1) / np.sqrt(n) if n > 1 else float("nan")
        return float(g.mean()), float(se)

    def to_record(self) -> dict:
        return {
            "meanD11": float(self.meanD[0, 0]), "meanD12": float(self.meanD[0, 1]),
            "meanD22": float(self.meanD[1, 1]),
            "stdD11": float(self.stdD[0, 0]), "stdD12": float(self.stdD[0, 1]),
            "stdD22": float(self.stdD[1, 1]),
            "meanAreaScaling": float(self.meanAreaScaling),
            "nSamples": int(self.nSamples), "seed": int(self.seed),
            "delta": float(self.delta),
            "weak_disorder_est": float(1.0 - 0.5 * self.delta),
        }


def quenched_average(params: hf.HelfrichParams, nSamples: int, meshM: int = 128,
                     tol: float = 1e-10, seed: int = 0) -> EnsembleSummary:
    """Average the periodic effective tensor over stationary surface realisations.

    Samples are reduced in index order, so the result is bitwise
    deterministic for a given ``seed``.
    """
    nSamples = int(nSamples)
    if nSamples < 1:
        raise hf.ConfigError("nSamples must be >= 1")
    spec = hf.build_spectrum(params)
    mesh = fem.PeriodicMesh(meshM)
    rows = np.empty((nSamples, 5))
    lower = np.zeros((2, 2))
    upper = np.zeros((2, 2))
    for i in range(nSamples):
        s = hf.sample_stationary_surface(spec, hf.make_rng(seed, i))
        try:
            et = fem.effective_tensor(mesh, s, tol)
        except (fem.SolverError, fem.AssemblyError) as exc:
            raise EnsembleError(f"sample {i} (seed {seed}) failed: {exc}", seed, i) from exc
        rows[i] = (i, et.D[0, 0], et.D[0, 1], et.D[1, 1], et.Z)
        lower += et.lower
        upper += et.upper
    Dm = rows[:, 1:4].mean(axis=0)
    Ds = rows[:, 1:4].std(axis=0, ddof=1) if nSamples > 1 else np.zeros(3)
    sym = lambda v: np.array([[v[0], v[1]], [v[1], v[2]]])
    return EnsembleSummary(sym(Dm), sym(Ds), float(np.mean(1.0 / rows[:, 4])), nSamples,
                           int(seed), rows, lower / nSamples, upper / nSamples,
                           hf.disorder_parameter(spec))


def weak_disorder_estimate(params: hf.HelfrichParams) -> float:
    """First-order weak-disorder value ``1 - delta/2``."""
    return 1.0 - 0.5 * hf.disorder_parameter(hf.build_spectrum(params))


# ---------------------------------------------------------------------------
# annealed regime

def _grid_points(gridN):
    t = (np.arange(gridN) + 0.5) / gridN
    X1, X2 = np.meshgrid(t, t, indexing="ij")
    return np.stack([X1.ravel(), X2.ravel()], axis=1)


def _mode_tables(k, x):
    """cos/sin of ``2 pi k.x`` for points ``x`` (P, 2) and modes ``k`` (K, 2)."""
    th = 2.0 * np.pi * (x @ k.T)           # (P, K)
    return np.cos(th), np.sin(th)


def _jet_batch(k, a, b, c, s):
    """Gradient and Hessian of ``sum a cos + b sin`` for batches of coefficients.

    ``a, b`` are (n, K); ``c, s`` are (P, K).  Returns arrays of shape (n, P).
    """
    w = 2.0 * np.pi * k
    h1 = (b * w[:, 0]) @ c.T - (a * w[:, 0]) @ s.T
    h2 = (b * w[:, 1]) @ c.T - (a * w[:, 1]) @ s.T
    ww = {"11": w[:, 0] ** 2, "12": w[:, 0] * w[:, 1], "22": w[:, 1] ** 2}
    hess = {key: -((a * v) @ c.T + (b * v) @ s.T) for key, v in ww.items()}
    return h1, h2, hess["11"], hess["12"], hess["22"]


@dataclass
class AnnealedEstimate:
    """Annealed scalar diffusivity with per-point diagnostics."""

    D: float
    stderr: float
    points: np.ndarray
    pointD: np.ndarray
    pointStderr: np.ndarray
    delta: float
    nSamples: int

    def to_record(self) -> dict:
        return {"D": float(self.D), "stderr": float(self.stderr), "delta": float(self.delta),
                "weak_disorder_est": float(1.0 - 0.5 * self.delta)}


def annealed_tensor(params: hf.HelfrichParams, nSamples: int, gridN: int = 4,
                    seed: int = 0, chunk: int = 20000) -> AnnealedEstimate:
    """Monte-Carlo estimate of ``D = (1 + E[1/(1 + |grad h|^2)]) / 2``.

    The expectation is over the stationary mode law; each sample is averaged
    over a ``gridN x gridN`` lattice of cell points.

    Returns
    -------
    AnnealedEstimate
        ``D`` and its standard error, plus estimates at every lattice point.
    """
    nSamples, gridN = int(nSamples), int(gridN)
    if nSamples < 1 or gridN < 1:
        raise hf.ConfigError("nSamples and gridN must be >= 1")
    spec = hf.build_spectrum(params)
    rng = hf.make_rng(seed)
    x = _grid_points(gridN)
    mask = hf.half_lattice(spec)
    k = spec.modes[mask].astype(float)
    c, s = _mode_tables(k, x)
    sums = np.zeros(x.shape[0])
    sq = np.zeros(x.shape[0])
    tot = tot2 = 0.0
    done = 0
    while done < nSamples:
        m = min(chunk, nSamples - done)
        _, a, b = hf.sample_half_lattice_coefficients(spec, rng, size=m)
        h1, h2, *_ = _jet_batch(k, a, b, c, s)
        v = 1.0 / (1.0 + h1 * h1 + h2 * h2)       # (m, P)
        sums += v.sum(axis=0)
        sq += (v * v).sum(axis=0)
        row = v.mean(axis=1)
        tot += row.sum()
        tot2 += (row * row).sum()
        done += m
    n = nSamples
    mean_p = sums / n
    mean = tot / n
    if n > 1:
        se_p = np.sqrt(np.maximum(sq / n - mean_p ** 2, 0.0) * n / (n - 1) / n)
        se = np.sqrt(max(tot2 / n - mean ** 2, 0.0) * n / (n - 1) / n)
    else:
        se_p = np.full_like(mean_p, np.nan)
        se = float("nan")
    return AnnealedEstimate(0.5 * (1.0 + mean), 0.5 * se, x, 0.5 * (1.0 + mean_p), 0.5 * se_p,
                            hf.disorder_parameter(spec), n)


def annealed_exact(params: hf.HelfrichParams) -> float:
    """Annealed diffusivity by one-dimensional quadrature.

    Under the stationary law ``grad h(x)`` is centred Gaussian with covariance
    ``(delta/2) I`` (the mode set is invariant under 90 degree rotations), so
    ``|grad h|^2`` is exponential with mean ``delta`` and
    ``E[1/(1+|grad h|^2)] = int_0^inf e^{-t} / (1 + delta t) dt``.
    """
    delta = hf.disorder_parameter(hf.build_spectrum(params))
    val, _ = quad(lambda t: np.exp(-t) / (1.0 + delta * t), 0.0, np.inf,
                  epsabs=1e-14, epsrel=1e-12, limit=200)
    return 0.5 * (1.0 + val)


@dataclass
class DriftCheck:
    """Monte-Carlo mean of the drift at a set of points."""

    points: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    nSamples: int
    stderr_defined: bool

    def within(self, nsigma: float = 3.0) -> bool:
        if not self.stderr_defined:
            return False
        return bool(np.all(np.abs(self.mean) <= nsigma * self.stderr))


def _reflect_pair(k, a, b, x0):
    """Coefficients of ``-h(2 x0 - y)``: same gradient, opposite Hessian at ``x0``."""
    th0 = 2.0 * np.pi * 2.0 * (k @ x0)
    c0, s0 = np.cos(th0), np.sin(th0)
    # h(2x0 - y): a cos(th0 - th) + b sin(th0 - th)
    a2 = a * c0 + b * s0
    b2 = a * s0 - b * c0
    return -a2, -b2


def annealed_drift_check(params: hf.HelfrichParams, nSamples: int, points, seed: int = 0,
                         antithetic: bool = False, chunk: int = 20000) -> DriftCheck:
    """Stationary-law average of the drift ``F(x, eta)`` at the given points.

    With ``antithetic=True`` each draw is paired, per point ``x0``, with the
    measure-preserving transform ``h -> -h(2 x0 - .)``.  This keeps
    ``grad h(x0)`` and flips the Hessian, so the pair average of ``F(x0)`` is
    exactly zero.  (Negating all amplitudes does not work: ``F`` is even in
    ``h``.)
    """
    nSamples = int(nSamples)
    if nSamples < 1:
        raise hf.ConfigError("nSamples must be >= 1")
    spec = hf.build_spectrum(params)
    rng = hf.make_rng(seed)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    mask = hf.half_lattice(spec)
    k = spec.modes[mask].astype(float)
    c, s = _mode_tables(k, pts)
    P = pts.shape[0]
    s1 = np.zeros((P, 2))
    s2 = np.zeros((P, 2))
    done = 0
    while done < nSamples:
        m = min(chunk, nSamples - done)
        _, a, b = hf.sample_half_lattice_coefficients(spec, rng, size=m)
        F = _drift_batch(k, a, b, c, s)            # (m, P, 2)
        if antithetic:
            Fa = np.empty_like(F)
            for p in range(P):
                a2, b2 = _reflect_pair(k, a, b, pts[p])
                Fa[:, p] = _drift_batch(k, a2, b2, c[p:p + 1], s[p:p + 1])[:, 0]
            F = 0.5 * (F + Fa)
        s1 += F.sum(axis=0)
        s2 += (F * F).sum(axis=0)
        done += m
    n = nSamples
    mean = s1 / n
    if n > 1:
        se = np.sqrt(np.maximum(s2 / n - mean ** 2, 0.0) / (n - 1))
        ok = True
    else:
        se = np.full_like(mean, np.nan)
        ok = False
    return DriftCheck(pts, mean, se, n, ok)


def _drift_batch(k, a, b, c, s):
    h1, h2, h11, h12, h22 = _jet_batch(k, a, b, c, s)
    F1, F2 = surf.drift_from_derivatives(h1, h2, h11, h12, h22)
    return np.stack([F1, F2], axis=-1)


# ---------------------------------------------------------------------------
# intermediate regime: effective drift for one fluctuating mode

def single_mode_coefficients(params: hf.HelfrichParams, k=(1, 1)):
    """``(Gamma_k, Pi_k)`` for a single wavevector ``k``."""
    k2 = float(k[0] ** 2 + k[1] ** 2)
    q2 = (2.0 * np.pi) ** 2 * k2
    e = params.kappaStar * q2 * q2 + params.sigmaStar * q2
    return e / np.sqrt(q2), 1.0 / e


def case3_drift_estimate(gamma: float, pi: float, meshM: int = 128, nEta: int = 17,
                         etaMax: float | None = None, mode=None, tol: float = 1e-10,
                         shifts=None) -> np.ndarray:
    """Effective drift ``L`` for the surface ``h(y, eta) = eta * mode(y)``.

    ``L = int int (L_eta chi)(y, eta) rho_y(y, eta) rho_eta(eta) dy deta`` with
    ``L_eta = -Gamma eta d/deta + Gamma Pi d^2/deta^2``, ``rho_y = sqrt|g| / Z``
    and ``rho_eta`` the ``N(0, Pi)`` density.  The eta-derivatives use central
    differences on a uniform grid symmetric about 0; the outer integral uses
    the trapezoidal weights of the interior grid points.

    Parameters
    ----------
    gamma, pi : float
        OU rate and stationary variance of the mode amplitude.
    nEta : int
        Number of grid points (at least 5).
    etaMax : float, optional
        Half-width of the eta grid; default ``5 sqrt(Pi)``.
    mode : callable, optional
        ``mode(eta)`` returning a surface spec; default ``EggCarton(eta)``.
    shifts : array_like, optional
        Constants ``c_j`` added to the corrector on slice ``j`` (used to check
        invariance under additive terms).

    Returns
    -------
    ndarray, shape (2,)
    """
    nEta = int(nEta)
    if nEta < 5:
        raise hf.ConfigError("eta grid needs at least 5 points")
    if not (gamma > 0 and pi > 0):
        raise hf.ConfigError("gamma and pi must be positive")
    if mode is None:
        mode = surf.EggCarton
    if etaMax is None:
        etaMax = 5.0 * np.sqrt(pi)
    eta = np.linspace(-etaMax, etaMax, nEta)
    de = eta[1] - eta[0]
    mesh = fem.PeriodicMesh(meshM)
    chis, rhos = [], []
    for j, e in enumerate(eta):
        sp_ = mode(float(e))
        sol = fem.solve_cell_problem(mesh, sp_, tol)
        X = np.stack([sol.chi1, sol.chi2], axis=1)
        if shifts is not None:
            X = X + shifts[j]
        _, sq, _ = fem.nodal_coefficients(mesh, sp_)
        chis.append(X)
        rhos.append(sq / sq.sum())          # nodal weights of rho_y dy
    chis = np.array(chis)                    # (nEta, n, 2)
    rho_eta = np.exp(-eta ** 2 / (2 * pi)) / np.sqrt(2 * np.pi * pi)
    L = np.zeros(2)
    for j in range(1, nEta - 1):
        d1 = (chis[j + 1] - chis[j - 1]) / (2 * de)
        d2 = (chis[j + 1] - 2 * chis[j] + chis[j - 1]) / de ** 2
        Lchi = -gamma * eta[j] * d1 + gamma * pi * d2
        L += rhos[j] @ Lchi * rho_eta[j] * de
    return L
