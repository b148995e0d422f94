"""Independent reference computations the tests check the package against.

Everything here is deliberately brute force (grid enumeration, direct
formula evaluation) and never calls the code path it verifies.
"""
import numpy as np
from scipy.special import log_expit


def circle_grid(n_deg: int = 360) -> np.ndarray:
    """Unit vectors at 1-degree bin centers on the circle."""
    ang = (np.arange(n_deg) + 0.5) * 2 * np.pi / n_deg
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def grid_posterior(diffs: np.ndarray, beta: float, n_deg: int = 360) -> np.ndarray:
    """Brute-force normalized posterior over the circle grid.

    diffs rows are (chosen - rejected) feature differences in 2D; the
    likelihood of each is the logistic of beta * (w . diff).
    """
    grid = circle_grid(n_deg)
    logp = log_expit(beta * (grid @ np.asarray(diffs, dtype=float).T)).sum(axis=1)
    p = np.exp(logp - logp.max())
    return p / p.sum()


def hemisphere_mass(posterior: np.ndarray, direction: np.ndarray,
                    n_deg: int = 360) -> float:
    """Posterior mass of the hemisphere centered on ``direction``."""
    grid = circle_grid(n_deg)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return float(posterior[grid @ d > 0].sum())


def histogram_on_grid(samples: np.ndarray, n_deg: int = 360) -> np.ndarray:
    """Empirical angular distribution of 2D unit samples over the grid bins."""
    angles = np.mod(np.arctan2(samples[:, 1], samples[:, 0]), 2 * np.pi)
    bins = (angles / (2 * np.pi) * n_deg).astype(int) % n_deg
    return np.bincount(bins, minlength=n_deg) / len(samples)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


def logistic(x: float) -> float:
    """Direct logistic, the reference for two-option softmax values."""
    return 1.0 / (1.0 + np.exp(-x))


def binary_entropy(p):
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    mask = (p > 0) & (p < 1)
    pm = p[mask]
    out[mask] = -(pm * np.log(pm) + (1 - pm) * np.log(1 - pm))
    return out if out.ndim else float(out)


def pair_mutual_information(p_per_sample: np.ndarray) -> float:
    """Brute-force MI of a pairwise response from per-sample probabilities."""
    p = np.asarray(p_per_sample, dtype=float)
    return float(binary_entropy(np.array(p.mean())) - binary_entropy(p).mean())
