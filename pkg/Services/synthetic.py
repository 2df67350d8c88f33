import numpy as np

from schemas import Dataset


def _dataset(features, sensitive, labels):
    n_rows, n_features = features.shape
    return Dataset(
        features=features,
        sensitive=sensitive,
        labels=labels,
        feature_names=[f"x{i}" for i in range(n_features)],
        numeric_mask=np.ones(n_features, dtype=bool),
        row_ids=np.arange(n_rows),
    )


def _rule(n_features):
    return np.ones(n_features) / np.sqrt(n_features)


def make_symmetric_groups(n, n_features, seed, flip_rates=(0.0, 0.0), separable=False):
    """
    Two groups drawn from the same feature distribution, so any gap between them is sampling noise.

    Clean labels follow the fixed rule x . (1,...,1)/sqrt(d) > 0 (plus a latent Gaussian
    perturbation unless `separable`, in which case points are also pushed off the boundary).
    Observed labels flip independently with probability flip_rates[z].
    Returns (Dataset with observed labels, clean labels).
    """
    rng = np.random.default_rng(seed)
    sensitive = rng.integers(0, 2, size=n)
    features = rng.normal(size=(n, n_features))
    rule = _rule(n_features)
    score = features @ rule
    if separable:
        features += np.outer(np.where(score >= 0, 0.5, -0.5), rule)
        clean = (features @ rule > 0).astype(int)
    else:
        clean = (score + rng.normal(scale=0.5, size=n) > 0).astype(int)

    flips = rng.random(n) < np.asarray(flip_rates, dtype=float)[sensitive]
    observed = np.where(flips, 1 - clean, clean)
    return _dataset(features, sensitive, observed), clean


def make_biased_groups(n, n_features, seed, shift=1.0):
    """
    Group z=1 is shifted along the label rule, so it has more positives and an
    unconstrained classifier shows disparate impact.
    """
    rng = np.random.default_rng(seed)
    sensitive = rng.integers(0, 2, size=n)
    rule = _rule(n_features)
    features = rng.normal(size=(n, n_features)) + shift * np.outer(sensitive, rule)
    labels = (features @ rule + rng.normal(scale=0.5, size=n) > 0).astype(int)
    return _dataset(features, sensitive, labels)
