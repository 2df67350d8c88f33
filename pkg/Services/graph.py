import logging

import numpy as np
from scipy.spatial.distance import cdist

from schemas import GraphLaplacian
from Services.errors import DataError

logger = logging.getLogger(__name__)


def gaussian_similarity(xi, xj, sigma):
    """exp(-||xi - xj||^2 / sigma^2)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    if xi.shape != xj.shape:
        raise ValueError(f"vector lengths differ: {xi.shape} vs {xj.shape}")
    return float(np.exp(-np.sum((xi - xj) ** 2) / sigma ** 2))


def build_laplacian(X, n_labeled, sigma):
    """
    Fully connected Gaussian graph over the rows of X (labeled rows first).

    Returns adjacency, degree vector and U = D - adjacency. Very distant pairs may
    underflow to a weight of exactly 0 for small sigma.
    """
    X = np.asarray(X, dtype=float)
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if X.ndim != 2:
        raise DataError("graph features must be a 2-D matrix")
    if not np.isfinite(X).all():
        bad_row = int(np.argwhere(~np.isfinite(X))[0][0])
        raise DataError("non-finite feature value in graph input", row=bad_row)
    if n_labeled < 1 or n_labeled >= X.shape[0]:
        raise DataError(f"need at least one labeled and one unlabeled row, got n_labeled={n_labeled} of {X.shape[0]}")

    adjacency = np.exp(-cdist(X, X, metric="sqeuclidean") / sigma ** 2)
    # exact symmetry and unit diagonal regardless of rounding in cdist
    adjacency = 0.5 * (adjacency + adjacency.T)
    np.fill_diagonal(adjacency, 1.0)

    degree = adjacency.sum(axis=1)
    laplacian = np.diag(degree) - adjacency

    logger.debug("graph built: %d nodes (%d labeled), sigma=%g", X.shape[0], n_labeled, sigma)
    return GraphLaplacian(
        adjacency=adjacency,
        degree=degree,
        laplacian=laplacian,
        n_labeled=n_labeled,
        sigma=sigma,
    )
