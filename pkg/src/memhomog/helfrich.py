"""Helfrich membrane fluctuation spectrum and Ornstein-Uhlenbeck mode dynamics.

The height field is expanded in Fourier modes ``k`` inside a Euclidean
cutoff disk ``|k| <= c``.  Each mode relaxes as an independent OU process with
rate ``Gamma_k`` and stationary variance ``Pi_k``:

    Gamma_k = (kappa |2 pi k|^4 + sigma |2 pi k|^2) / |2 pi k|
    Pi_k    = 1 / (kappa |2 pi k|^4 + sigma |2 pi k|^2)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .surface import Fourier

__all__ = [
    "HelfrichParams",
    "HelfrichSpectrum",
    "ConfigError",
    "build_spectrum",
    "half_lattice",
    "sample_stationary_surface",
    "sample_half_lattice_coefficients",
    "disorder_parameter",
    "ou_exact_step",
    "make_rng",
]


class ConfigError(ValueError):
    """Invalid parameter combination."""


@dataclass(frozen=True)
class HelfrichParams:
    """Nondimensional bending rigidity, tension and ultraviolet cutoff."""

    kappaStar: float = 1.0
    sigmaStar: float = 0.0
    cutoff: float = 1.0

    def __post_init__(self):
        if self.kappaStar < 0 or self.sigmaStar < 0:
            raise ConfigError("kappa_star and sigma_star must be non-negative")
        if not (self.kappaStar > 0 or self.sigmaStar > 0):
            raise ConfigError("at least one of kappa_star, sigma_star must be positive")


@dataclass(frozen=True)
class HelfrichSpectrum:
    """Mode set (full lattice, ``k`` and ``-k`` both present) with OU coefficients.

    Attributes
    ----------
    modes : ndarray, shape (K, 2), int
    gamma : ndarray, shape (K,)
    pi : ndarray, shape (K,)
    params : HelfrichParams
    """

    modes: np.ndarray
    gamma: np.ndarray
    pi: np.ndarray
    params: HelfrichParams

    def __len__(self):
        return len(self.modes)


def make_rng(seed, *index) -> np.random.Generator:
    """Generator for the independent stream ``(seed, *index)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, index)]))


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(seed)


def _coefficients(k2, kappa, sigma):
    q2 = (2.0 * np.pi) ** 2 * k2
    energy = kappa * q2 * q2 + sigma * q2
    return energy / np.sqrt(q2), 1.0 / energy


def build_spectrum(params: HelfrichParams) -> HelfrichSpectrum:
    """All ``k != 0`` with ``|k|_2 <= c`` together with ``Gamma_k`` and ``Pi_k``."""
    c = float(params.cutoff)
    if not c >= 1.0:
        raise ConfigError(f"cutoff must be >= 1 for a non-empty mode set, got {c}")
    n = int(np.floor(c))
    k1, k2 = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1), indexing="ij")
    k = np.stack([k1.ravel(), k2.ravel()], axis=1)
    norm2 = (k * k).sum(axis=1)
    # tiny slack guards integer radii against rounding of c*c
    keep = (norm2 > 0) & (norm2 <= c * c * (1 + 1e-12))
    k = k[keep]
    gamma, pi = _coefficients((k * k).sum(axis=1).astype(float),
                              params.kappaStar, params.sigmaStar)
    return HelfrichSpectrum(k, gamma, pi, params)


def half_lattice(spectrum: HelfrichSpectrum) -> np.ndarray:
    """Boolean mask selecting one representative of every ``{k, -k}`` pair."""
    k = spectrum.modes
    return (k[:, 0] > 0) | ((k[:, 0] == 0) & (k[:, 1] > 0))


def sample_half_lattice_coefficients(spectrum: HelfrichSpectrum, rng, size=None):
    """Draw real cosine/sine coefficients on the half lattice.

    Each coefficient is ``N(0, 2 Pi_k)``.  With the complex convention
    ``h = sum_k eta_k e^{2 pi i k.x}``, ``eta_{-k} = conj(eta_k)`` and
    ``E|eta_k|^2 = Pi_k``, this gives ``Var h(x) = sum_{full lattice} Pi_k``.

    Returns
    -------
    k : (K/2, 2) wavevectors; a, b : arrays of shape ``size + (K/2,)``.
    """
    rng = _as_rng(rng)
    mask = half_lattice(spectrum)
    std = np.sqrt(2.0 * spectrum.pi[mask])
    shape = (mask.sum(),) if size is None else tuple(np.atleast_1d(size)) + (mask.sum(),)
    a = rng.standard_normal(shape) * std
    b = rng.standard_normal(shape) * std
    return spectrum.modes[mask], a, b


def sample_stationary_surface(spectrum: HelfrichSpectrum, seed) -> Fourier:
    """One stationary surface realisation as a :class:`~memhomog.surface.Fourier` spec.

    Parameters
    ----------
    seed : int or numpy.random.Generator
    """
    k, a, b = sample_half_lattice_coefficients(spectrum, seed)
    return Fourier(tuple((int(k1), int(k2), float(ai), float(bi))
                         for (k1, k2), ai, bi in zip(k, a, b)))


def disorder_parameter(spectrum: HelfrichSpectrum) -> float:
    """``delta = sum_k 1/(kappa |2 pi k|^2 + sigma)`` (= ``E|grad h|^2``)."""
    p = spectrum.params
    q2 = (2.0 * np.pi) ** 2 * (spectrum.modes ** 2).sum(axis=1)
    return float(np.sum(1.0 / (p.kappaStar * q2 + p.sigmaStar)))


def ou_exact_step(gamma, pi, eta, dt, rng):
    """Exact OU transition ``eta' = e^{-Gamma dt} eta + N(0, Pi (1 - e^{-2 Gamma dt}))``.

    Parameters
    ----------
    gamma, pi : array_like
        Per-mode rate and stationary variance (broadcast against ``eta``).
        A :class:`HelfrichSpectrum` may be passed as ``gamma`` with ``pi=None``.
    eta : array_like
        Current mode amplitudes.
    dt : float or array_like
        Time step(s), must exceed ``1e-15``.
    rng : int or numpy.random.Generator
    """
    if isinstance(gamma, HelfrichSpectrum):
        gamma, pi = gamma.gamma, gamma.pi
    if not np.all(np.asarray(dt) > 1e-15):
        raise ConfigError(f"OU step requires dt > 1e-15, got {dt}")
    rng = _as_rng(rng)
    eta = np.asarray(eta, dtype=float)
    decay = np.exp(-np.asarray(gamma) * dt)
    std = np.sqrt(np.asarray(pi) * -np.expm1(-2.0 * np.asarray(gamma) * dt))
    return decay * eta + std * rng.standard_normal(eta.shape)
