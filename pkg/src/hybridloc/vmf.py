"""Sampling from the von Mises-Fisher distribution on the unit sphere."""
from __future__ import annotations

import numpy as np
from scipy.special import ive


def mean_resultant_length(kappa: float, p: int) -> float:
    """A_p(kappa) = I_{p/2}(kappa) / I_{p/2-1}(kappa), the expected ``mu . X``."""
    # exponentially scaled Bessel functions cancel the exp(kappa) factor
    return float(ive(p / 2, kappa) / ive(p / 2 - 1, kappa))


def _wood_cosines(kappa: float, p: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``t = mu . X`` by Wood's (1994) rejection scheme."""
    b = (p - 1) / (2 * kappa + np.sqrt(4 * kappa**2 + (p - 1) ** 2))
    x0 = (1 - b) / (1 + b)
    c = kappa * x0 + (p - 1) * np.log1p(-x0**2)
    out = np.empty(size)
    filled = 0
    while filled < size:
        need = size - filled
        z = rng.beta((p - 1) / 2, (p - 1) / 2, size=need)
        t = (1 - (1 + b) * z) / (1 - (1 - b) * z)
        accept = kappa * t + (p - 1) * np.log1p(-x0 * t) - c >= np.log(rng.uniform(size=need))
        got = t[accept]
        out[filled:filled + got.size] = got
        filled += got.size
    return out


def sample_vmf(mean_dirs: np.ndarray, kappas, rng: np.random.Generator) -> np.ndarray:
    """Draw one vMF sample per row of ``mean_dirs`` (shape ``(N, p)``).

    In the plane the angular offset is von Mises distributed and is drawn with
    numpy's Best-Fisher sampler; for ``p >= 3`` the cosine to the mean is drawn
    with Wood's algorithm and combined with a uniform tangent direction.
    """
    mu = np.atleast_2d(np.asarray(mean_dirs, dtype=float))
    n, p = mu.shape
    kappas = np.broadcast_to(np.asarray(kappas, dtype=float), (n,))
    if np.any(kappas <= 0):
        raise ValueError("kappa must be > 0")
    if p == 2:
        offset = rng.vonmises(0.0, kappas)
        angle = np.arctan2(mu[:, 1], mu[:, 0]) + offset
        return np.column_stack([np.cos(angle), np.sin(angle)])

    out = np.empty_like(mu)
    for row in range(n):
        t = _wood_cosines(kappas[row], p, 1, rng)[0]
        g = rng.standard_normal(p)
        g -= (g @ mu[row]) * mu[row]
        g /= np.linalg.norm(g)
        vec = t * mu[row] + np.sqrt(max(0.0, 1 - t * t)) * g
        out[row] = vec / np.linalg.norm(vec)
    return out


def sample_bearing_vmf(mean_dir, kappa: float, rng: np.random.Generator) -> np.ndarray:
    """Single unit vector from vMF(mean_dir, kappa)."""
    mean_dir = np.asarray(mean_dir, dtype=float)
    if abs(np.linalg.norm(mean_dir) - 1) > 1e-9:
        raise ValueError("mean_dir must be a unit vector")
    return sample_vmf(mean_dir[None, :], kappa, rng)[0]
