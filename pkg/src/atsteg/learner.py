"""Binary classification stack.

Per-feature standardization, F-statistic feature ranking, a Gaussian-kernel
soft-margin SVM trained by sequential minimal optimization, and
cross-validated selection of (C, gamma) over a fixed multiplicative grid.
The solver works on precomputed kernel matrices so the grid search can reuse
squared-distance matrices across every gamma.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

# 2^-5, 2^-3, ..., 2^15 and 2^-15, 2^-13, ..., 2^3.
DEFAULT_C_GRID = tuple(2.0**e for e in range(-5, 16, 2))
DEFAULT_GAMMA_GRID = tuple(2.0**e for e in range(-15, 4, 2))

_ALPHA_EPS = 1e-8
_TAU = 1e-12

MODEL_FORMAT = "atsteg-svm/1"


def anova_f(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-feature one-way F statistic for a two-class labeling.

    Zero within-class scatter with positive between-class scatter maps to
    +inf; zero over zero maps to 0.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    if classes.size != 2:
        raise ValueError(f"need exactly two classes, got {classes.size}")
    g0 = X[y == classes[0]]
    g1 = X[y == classes[1]]
    n = X.shape[0]
    m0 = g0.mean(axis=0)
    m1 = g1.mean(axis=0)
    grand = X.mean(axis=0)
    ssb = len(g0) * (m0 - grand) ** 2 + len(g1) * (m1 - grand) ** 2
    ssw = ((g0 - m0) ** 2).sum(axis=0) + ((g1 - m1) ** 2).sum(axis=0)
    scores = np.zeros(X.shape[1])
    pos = ssw > 0.0
    if n > 2:
        scores[pos] = ssb[pos] / (ssw[pos] / (n - 2))
    else:
        scores[pos] = 0.0
    scores[~pos & (ssb > 0.0)] = np.inf
    return scores


def select_top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores (ties to the lower index), sorted ascending.

    k larger than the dimension selects everything.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = np.asarray(scores, dtype=np.float64)
    k = min(k, scores.size)
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def fit_standardizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and population standard deviations (zero std mapped to 1)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("standardizer needs a non-empty 2-D matrix")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return mean, std


def apply_standardizer(X: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - mean) / std


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, clamped at zero."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    d = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(d, 0.0, out=d)
    return d


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * squared_distances(A, B))


def _smo_solve(
    K: np.ndarray,
    y: np.ndarray,
    C: float,
    tol: float = 1e-3,
    max_iter: int = 20_000,
) -> tuple[np.ndarray, float, int]:
    """Maximal-violating-pair SMO for the soft-margin dual on a precomputed kernel.

    Minimizes 1/2 a'Qa - e'a subject to 0 <= a <= C, y'a = 0, with
    Q_ij = y_i y_j K_ij. Stops when the maximal KKT violation drops to
    ``tol``. Returns (alpha, bias, iterations).
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    pos = y > 0
    it = 0
    for it in range(1, max_iter + 1):
        neg_yg = -(y * grad)
        at_upper = alpha >= C - _ALPHA_EPS
        at_lower = alpha <= _ALPHA_EPS
        can_up = np.where(pos, ~at_upper, ~at_lower)
        can_low = np.where(pos, ~at_lower, ~at_upper)
        up_vals = np.where(can_up, neg_yg, -np.inf)
        low_vals = np.where(can_low, neg_yg, np.inf)
        i = int(np.argmax(up_vals))
        j = int(np.argmin(low_vals))
        if up_vals[i] - low_vals[j] <= tol:
            it -= 1
            break
        ai_old = alpha[i]
        aj_old = alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0.0:
            quad = _TAU
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai = ai_old + delta
            aj = aj_old + delta
            if diff > 0.0:
                if aj < 0.0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = -diff
            if diff > 0.0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai = ai_old - delta
            aj = aj_old + delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
            else:
                if aj < 0.0:
                    aj = 0.0
                    ai = total
            if total > C:
                if aj > C:
                    aj = C
                    ai = total - C
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = total
        alpha[i] = ai
        alpha[j] = aj
        dai = (ai - ai_old) * y[i]
        daj = (aj - aj_old) * y[j]
        grad += y * (dai * K[:, i] + daj * K[:, j])
    bias = _bias_from_gradient(alpha, grad, y, C)
    return alpha, bias, it


def _bias_from_gradient(
    alpha: np.ndarray, grad: np.ndarray, y: np.ndarray, C: float
) -> float:
    """Offset from the KKT conditions: free vectors pin it, else the midpoint."""
    yg = y * grad
    free = (alpha > _ALPHA_EPS) & (alpha < C - _ALPHA_EPS)
    if free.any():
        return -float(yg[free].mean())
    upper_pool = ((alpha <= _ALPHA_EPS) & (y > 0)) | ((alpha >= C - _ALPHA_EPS) & (y < 0))
    lower_pool = ((alpha <= _ALPHA_EPS) & (y < 0)) | ((alpha >= C - _ALPHA_EPS) & (y > 0))
    ub = yg[upper_pool].min() if upper_pool.any() else np.inf
    lb = yg[lower_pool].max() if lower_pool.any() else -np.inf
    if not np.isfinite(ub) or not np.isfinite(lb):
        return 0.0
    return -float((ub + lb) / 2.0)


@dataclass
class SvmModel:
    """A fitted Gaussian-kernel SVM plus its preprocessing.

    ``selected_indices`` (strictly increasing) picks columns out of the raw
    feature space; ``feature_mean``/``feature_std`` standardize them; the
    support set then defines the decision function.
    """

    support_vectors: np.ndarray
    alphas: np.ndarray
    sv_labels: np.ndarray
    bias: float
    C: float
    gamma: float
    feature_mean: np.ndarray
    feature_std: np.ndarray
    selected_indices: np.ndarray
    input_dim: int


def train_gsvm(
    X: np.ndarray,
    y: np.ndarray,
    C: float,
    gamma: float,
    tol: float = 1e-3,
    max_iter: int = 20_000,
) -> SvmModel:
    """Train on already-standardized features (preprocessing fields are identity)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X and y shapes disagree")
    if not np.isfinite(X).all():
        raise ValueError("non-finite feature values")
    if C <= 0 or gamma <= 0:
        raise ValueError("C and gamma must be positive")
    labels = np.unique(y)
    if labels.size != 2 or set(labels) != {-1.0, 1.0}:
        raise ValueError("labels must contain both -1 and +1")
    K = rbf_kernel(X, X, gamma)
    alpha, bias, _ = _smo_solve(K, y, C, tol=tol, max_iter=max_iter)
    sv = alpha > _ALPHA_EPS
    dim = X.shape[1]
    return SvmModel(
        support_vectors=X[sv].copy(),
        alphas=alpha[sv].copy(),
        sv_labels=y[sv].copy(),
        bias=bias,
        C=C,
        gamma=gamma,
        feature_mean=np.zeros(dim),
        feature_std=np.ones(dim),
        selected_indices=np.arange(dim),
        input_dim=dim,
    )


def decision_values(model: SvmModel, X: np.ndarray) -> np.ndarray:
    """Decision function on raw feature rows (selection and scaling applied)."""
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.input_dim:
        raise ValueError(
            f"dimension mismatch: model expects {model.input_dim} features, got {X.shape[1]}"
        )
    Z = (X[:, model.selected_indices] - model.feature_mean) / model.feature_std
    Kx = rbf_kernel(Z, model.support_vectors, model.gamma)
    out = Kx @ (model.alphas * model.sv_labels) + model.bias
    return out[0] if squeeze else out


def predict(model: SvmModel, x: np.ndarray) -> tuple[int, float]:
    """Label in {-1, +1} and decision value for one raw feature vector.

    +1 means the second training class (strictly positive decision); an
    exact zero goes to the first class.
    """
    value = float(decision_values(model, np.asarray(x, dtype=np.float64)))
    return (1 if value > 0.0 else -1), value


class GridSearchResult(NamedTuple):
    C: float
    gamma: float
    cv_accuracy: float


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Deterministic fold assignment preserving class proportions."""
    y = np.asarray(y)
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    assignment = np.empty(y.shape[0], dtype=np.int64)
    rng = np.random.default_rng(seed)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        if idx.size < folds:
            raise ValueError(
                f"class {cls!r} has {idx.size} samples, fewer than {folds} folds"
            )
        perm = rng.permutation(idx)
        assignment[perm] = np.arange(perm.size) % folds
    return assignment


def grid_search(
    X: np.ndarray,
    y: np.ndarray,
    folds: int = 5,
    c_grid: Sequence[float] = DEFAULT_C_GRID,
    gamma_grid: Sequence[float] = DEFAULT_GAMMA_GRID,
    fold_seed: int = 0,
    tol: float = 1e-3,
    max_iter: int = 20_000,
) -> GridSearchResult:
    """Pick (C, gamma) by pooled stratified cross-validation accuracy.

    Ties break toward smaller C, then smaller gamma. Squared distances are
    computed once per fold and shared by every gamma; each kernel is shared
    by every C.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c_values = sorted(set(float(c) for c in c_grid))
    gamma_values = sorted(set(float(g) for g in gamma_grid))
    if not c_values or not gamma_values:
        raise ValueError("empty hyperparameter grid")
    assignment = stratified_folds(y, folds, fold_seed)
    correct = np.zeros((len(c_values), len(gamma_values)), dtype=np.int64)
    for f in range(folds):
        val = assignment == f
        tr = ~val
        X_tr, y_tr = X[tr], y[tr]
        X_val, y_val = X[val], y[val]
        d_tr = squared_distances(X_tr, X_tr)
        d_val = squared_distances(X_val, X_tr)
        for gi, gamma in enumerate(gamma_values):
            K_tr = np.exp(-gamma * d_tr)
            K_val = np.exp(-gamma * d_val)
            for ci, C in enumerate(c_values):
                alpha, bias, _ = _smo_solve(K_tr, y_tr, C, tol=tol, max_iter=max_iter)
                dec = K_val @ (alpha * y_tr) + bias
                pred = np.where(dec > 0.0, 1.0, -1.0)
                correct[ci, gi] += int((pred == y_val).sum())
    best = (0, 0)
    for ci in range(len(c_values)):
        for gi in range(len(gamma_values)):
            if correct[ci, gi] > correct[best]:
                best = (ci, gi)
    accuracy = correct[best] / y.shape[0]
    return GridSearchResult(
        C=c_values[best[0]], gamma=gamma_values[best[1]], cv_accuracy=float(accuracy)
    )


@dataclass
class LearnerParams:
    """Knobs for the full classification stack."""

    top_k: int = 500
    folds: int = 5
    fold_seed: int = 0
    c_grid: tuple[float, ...] = DEFAULT_C_GRID
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    smo_tol: float = 1e-3
    max_iter: int = 20_000


@dataclass
class PipelineFit:
    """A fitted model plus the artifacts later stages reuse."""

    model: SvmModel
    grid: GridSearchResult
    anova_scores: np.ndarray


def fit_pipeline(X: np.ndarray, y: np.ndarray, params: LearnerParams | None = None) -> PipelineFit:
    """Rank features, keep the top block, standardize, tune (C, gamma), train.

    The fold count drops to the smaller class size when the classes are too
    small for the requested split, so tiny sets remain trainable.
    """
    if params is None:
        params = LearnerParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    scores = anova_f(X, y)
    selected = select_top_k(scores, params.top_k)
    X_sel = X[:, selected]
    mean, std = fit_standardizer(X_sel)
    Z = apply_standardizer(X_sel, mean, std)
    class_min = min(int((y < 0).sum()), int((y > 0).sum()))
    folds = min(params.folds, class_min)
    if folds < 2:
        raise ValueError("each class needs at least two samples")
    grid = grid_search(
        Z,
        y,
        folds=folds,
        c_grid=params.c_grid,
        gamma_grid=params.gamma_grid,
        fold_seed=params.fold_seed,
        tol=params.smo_tol,
        max_iter=params.max_iter,
    )
    core = train_gsvm(Z, y, grid.C, grid.gamma, tol=params.smo_tol, max_iter=params.max_iter)
    model = SvmModel(
        support_vectors=core.support_vectors,
        alphas=core.alphas,
        sv_labels=core.sv_labels,
        bias=core.bias,
        C=core.C,
        gamma=core.gamma,
        feature_mean=mean,
        feature_std=std,
        selected_indices=selected,
        input_dim=X.shape[1],
    )
    return PipelineFit(model=model, grid=grid, anova_scores=scores)


def save_model(model: SvmModel, path) -> None:
    """Serialize a model to versioned JSON."""
    payload = {
        "format": MODEL_FORMAT,
        "bias": model.bias,
        "C": model.C,
        "gamma": model.gamma,
        "input_dim": model.input_dim,
        "selected_indices": model.selected_indices.tolist(),
        "feature_mean": model.feature_mean.tolist(),
        "feature_std": model.feature_std.tolist(),
        "support_vectors": model.support_vectors.tolist(),
        "alphas": model.alphas.tolist(),
        "sv_labels": model.sv_labels.tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_model(path) -> SvmModel:
    """Load a model written by :func:`save_model`."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != MODEL_FORMAT:
        raise ValueError(
            f"unsupported model format {payload.get('format')!r}, expected {MODEL_FORMAT}"
        )
    n_selected = len(payload["selected_indices"])
    return SvmModel(
        support_vectors=np.array(payload["support_vectors"], dtype=np.float64).reshape(
            len(payload["alphas"]), n_selected
        ),
        alphas=np.array(payload["alphas"], dtype=np.float64),
        sv_labels=np.array(payload["sv_labels"], dtype=np.float64),
        bias=float(payload["bias"]),
        C=float(payload["C"]),
        gamma=float(payload["gamma"]),
        feature_mean=np.array(payload["feature_mean"], dtype=np.float64),
        feature_std=np.array(payload["feature_std"], dtype=np.float64),
        selected_indices=np.array(payload["selected_indices"], dtype=np.int64),
        input_dim=int(payload["input_dim"]),
    )
