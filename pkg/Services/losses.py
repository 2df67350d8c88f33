import numpy as np
from scipy.special import expit

from schemas import ModelKind

PROB_CLIP = 1e-12


def add_intercept(X):
    """Appends the constant column matched by the last weight."""
    X = np.asarray(X, dtype=float)
    return np.hstack([X, np.ones((X.shape[0], 1))])


def to_signed(y):
    """{0,1} -> {-1,+1}."""
    return 2 * np.asarray(y) - 1


def _check_dims(w, X, y):
    w = np.asarray(w, dtype=float)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[1] != w.shape[0]:
        raise ValueError(f"weight length {w.shape[0]} does not match feature matrix {X.shape}")
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"{y.shape[0]} labels for {X.shape[0]} rows")
    return w, X, y


def _ridge_terms(w, ridge):
    if not ridge:
        return 0.0, np.zeros_like(w)
    penalized = w.copy()
    penalized[-1] = 0.0
    return 0.5 * ridge * penalized @ penalized, ridge * penalized


def probabilities(w, X):
    return np.clip(expit(X @ w), PROB_CLIP, 1 - PROB_CLIP)


def lr_loss_grad(w, X, y, ridge=0.0):
    """
    Summed cross-entropy -y ln p - (1-y) ln(1-p) with p clipped into [1e-12, 1-1e-12].
    y may be continuous in [0, 1]. Returns (loss, gradient X^T (p - y)).
    """
    w, X, y = _check_dims(w, X, y)
    p = probabilities(w, X)
    loss = -np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))
    grad = X.T @ (expit(X @ w) - y)
    penalty, penalty_grad = _ridge_terms(w, ridge)
    return float(loss + penalty), grad + penalty_grad


def svm_loss_subgrad(w, X, y_signed, ridge=0.0):
    """Mean hinge loss max(0, 1 - y w^T x) and a subgradient (zero at the kink)."""
    w, X, y_signed = _check_dims(w, X, y_signed)
    margins = y_signed * (X @ w)
    active = margins < 1
    n_rows = X.shape[0]
    loss = np.sum(np.maximum(0.0, 1 - margins)) / n_rows
    subgrad = -(X.T @ (y_signed * active)) / n_rows
    penalty, penalty_grad = _ridge_terms(w, ridge)
    return float(loss + penalty), subgrad + penalty_grad


def classifier_loss(model, w, X, y, ridge=0.0):
    """Loss of either model with {0,1} labels (converted to signed labels for the SVM)."""
    if model is ModelKind.LR:
        return lr_loss_grad(w, X, y, ridge)[0]
    return svm_loss_subgrad(w, X, to_signed(y), ridge)[0]


def predict(w, X, T=0.5, model=ModelKind.LR):
    """
    Returns (scores, labels). LR scores are probabilities compared with `>= T`;
    SVM scores are margins compared with `>= 0`, so a zero margin maps to label 1.
    """
    w = np.asarray(w, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.shape[1] != w.shape[0]:
        raise ValueError(f"weight length {w.shape[0]} does not match feature matrix {X.shape}")
    margins = X @ w
    if model is ModelKind.LR:
        if not 0 < T < 1:
            raise ValueError(f"threshold T must be in (0, 1), got {T}")
        scores = expit(margins)
        return scores, (scores >= T).astype(int)
    return margins, (margins >= 0).astype(int)
