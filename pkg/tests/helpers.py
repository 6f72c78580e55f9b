"""Random inputs shared by the test modules."""

import numpy as np

from funcci.kernelmat import rbf_gram


def random_symmetric(rng, n):
    A = rng.standard_normal((n, n))
    return (A + A.T) / 2


def random_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    A = rng.standard_normal((n, rank))
    return A @ A.T


def random_gaussian_gram(rng, n, dim=3):
    pts = rng.standard_normal((n, dim))
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, 0.0)
    return rbf_gram(d2, 1.0 / max(np.mean(d2), 1e-12))
