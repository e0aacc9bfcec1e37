"""Regression and classification learners with cross-validated penalties.

``l1_linear``
    Lasso by cyclic coordinate descent on the weighted Gram matrix.  The
    penalty is picked from a log grid spanning ``1e-4 * lambda_max`` to
    ``lambda_max`` by K-fold cross-validated squared error.
``l2_logistic``
    Ridge-penalised logistic regression by damped Newton steps, penalty
    picked by cross-validated log loss.
``boosted_stumps``
    Depth-1 gradient boosting with early stopping (scikit-learn).
``saturated``
    Weighted cell means over exact feature vectors; reproduces group-by
    conditional means on discrete data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import expit

from .errors import ConfigError

REGRESSORS = ("l1_linear", "boosted_stumps", "saturated")
CLASSIFIERS = ("l2_logistic", "boosted_stumps", "saturated")


@dataclass(frozen=True)
class LearnerSpec:
    """Learner families and tuning for every nuisance fit.

    Attributes
    ----------
    regressor, classifier : str
        Families used for continuous and binary targets.
    n_lambdas, lambda_min_ratio : lasso penalty grid.
    logistic_grid : per-sample ridge penalties tried for the logistic fit.
    cv_folds : folds for penalty selection.
    early_stopping_rounds, max_boosting_rounds : boosting controls.
    clip : bounds applied where a propensity enters a denominator.
    """

    regressor: str = "l1_linear"
    classifier: str = "l2_logistic"
    n_lambdas: int = 20
    lambda_min_ratio: float = 1e-4
    logistic_grid: tuple[float, ...] = tuple(np.logspace(1, -5, 10).tolist())
    cv_folds: int = 5
    early_stopping_rounds: int = 10
    max_boosting_rounds: int = 500
    clip: tuple[float, float] = (0.01, 1.0)
    lasso_tol: float = 1e-7
    newton_tol: float = 1e-8

    def __post_init__(self):
        if self.regressor not in REGRESSORS:
            raise ConfigError(f"unknown regressor family {self.regressor!r}; expected one of {REGRESSORS}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"unknown classifier family {self.classifier!r}; expected one of {CLASSIFIERS}")
        lo, hi = self.clip
        if not 0 < lo < hi <= 1:
            raise ConfigError("clip bounds must satisfy 0 < lo < hi <= 1")
        if self.n_lambdas < 1 or len(self.logistic_grid) < 1:
            raise ConfigError("penalty grid must be nonempty")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be >= 2")
        object.__setattr__(self, "logistic_grid", tuple(float(v) for v in self.logistic_grid))

    @classmethod
    def saturated(cls, **kw) -> "LearnerSpec":
        return cls(regressor="saturated", classifier="saturated", **kw)


@dataclass
class FittedModel:
    """A fitted predictor plus training metadata."""

    kind: str
    task: str
    predict_fn: object
    penalty: float | None = None
    meta: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        out = np.asarray(self.predict_fn(X), dtype=float)
        return out


# ---------------------------------------------------------------------------
# lasso


@numba.njit(cache=True)
def _cd_path(G, c, lambdas, tol, max_sweeps, beta0):
    """Coordinate descent for ``0.5 b'Gb - c'b + lam |b|_1`` along a decreasing grid."""
    p = c.shape[0]
    L = lambdas.shape[0]
    betas = np.zeros((L, p))
    beta = beta0.copy()
    grad = c - G @ beta
    for li in range(L):
        lam = lambdas[li]
        for _ in range(max_sweeps):
            max_change = 0.0
            for j in range(p):
                gjj = G[j, j]
                if gjj <= 0.0:
                    continue
                rho = grad[j] + gjj * beta[j]
                if rho > lam:
                    new = (rho - lam) / gjj
                elif rho < -lam:
                    new = (rho + lam) / gjj
                else:
                    new = 0.0
                delta = new - beta[j]
                if delta != 0.0:
                    for k in range(p):
                        grad[k] -= G[k, j] * delta
                    beta[j] = new
                    change = abs(delta) * np.sqrt(gjj)
                    if change > max_change:
                        max_change = change
            if max_change < tol:
                break
        betas[li] = beta
    return betas


def _weighted_moments(X, y, w):
    sw = w.sum()
    xm = w @ X / sw
    ym = w @ y / sw
    Xc = X - xm
    sd = np.sqrt(w @ (Xc * Xc) / sw)
    sd_safe = np.where(sd > 1e-12, sd, 1.0)
    return xm, ym, sd, sd_safe


class _LinearPredictor:
    def __init__(self, intercept, coef):
        self.intercept = float(intercept)
        self.coef = np.asarray(coef, dtype=float)

    def __call__(self, X):
        return self.intercept + X @ self.coef


def lasso_path(X, y, lambdas, weights=None, standardize=True, tol=1e-7, max_sweeps=10_000):
    """Lasso solutions ``(intercept, coef)`` for each penalty, objective ``sum w r^2 / (2 sum w) + lam |b|_1``.

    With ``standardize`` the penalty applies to coefficients of unit-variance
    features; returned coefficients are always on the original scale.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    xm, ym, sd, sd_safe = _weighted_moments(X, y, w)
    scale = sd_safe if standardize else np.ones_like(sd_safe)
    Xs = (X - xm) / scale
    Xs[:, sd <= 1e-12] = 0.0
    sw = w.sum()
    Xw = Xs * (w / sw)[:, None]
    G = Xs.T @ Xw
    c = Xw.T @ (y - ym)
    lambdas = np.asarray(lambdas, dtype=float)
    betas = _cd_path(G, c, lambdas, tol, max_sweeps, np.zeros(X.shape[1]))
    out = []
    for b in betas:
        coef = b / scale
        out.append((ym - xm @ coef, coef))
    return out


def lambda_max(X, y, weights=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    xm, ym, sd, sd_safe = _weighted_moments(X, y, w)
    Xs = (X - xm) / sd_safe
    Xs[:, sd <= 1e-12] = 0.0
    return float(np.max(np.abs((w / w.sum()) @ (Xs * (y - ym)[:, None])), initial=0.0))


def _fold_ids(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    ids = np.arange(n) % k
    rng.shuffle(ids)
    return ids


def _fit_lasso_cv(spec: LearnerSpec, X, y, w, rng) -> FittedModel:
    lam_hi = lambda_max(X, y, w)
    if lam_hi <= 0:
        ym = float(w @ y / w.sum())
        return FittedModel("l1_linear", "regress", _LinearPredictor(ym, np.zeros(X.shape[1])), 0.0)
    lambdas = np.geomspace(lam_hi, lam_hi * spec.lambda_min_ratio, spec.n_lambdas)
    k = min(spec.cv_folds, len(y))
    folds = _fold_ids(len(y), k, rng)
    loss = np.zeros(len(lambdas))
    for f in range(k):
        tr, te = folds != f, folds == f
        path = lasso_path(X[tr], y[tr], lambdas, w[tr], tol=spec.lasso_tol)
        for li, (b0, b) in enumerate(path):
            r = y[te] - b0 - X[te] @ b
            loss[li] += w[te] @ (r * r)
    best = int(np.argmin(loss))
    b0, b = lasso_path(X, y, lambdas[: best + 1], w, tol=spec.lasso_tol)[-1]
    return FittedModel(
        "l1_linear", "regress", _LinearPredictor(b0, b), float(lambdas[best]), {"cv_loss": loss / w.sum()}
    )


# ---------------------------------------------------------------------------
# logistic


def logistic_newton(X, y, lam, weights=None, beta0=None, tol=1e-8, max_iter=100):
    """Minimise ``mean_w(logloss) + lam/2 |b|^2`` (intercept unpenalised) on a design with intercept column 0."""
    n, q = X.shape
    w = np.ones(n) if weights is None else weights
    w = w / w.sum()
    beta = np.zeros(q) if beta0 is None else beta0.copy()
    pen = np.full(q, lam)
    pen[0] = 0.0

    def objective(b):
        eta = X @ b
        ll = np.logaddexp(0.0, eta) - y * eta
        return w @ ll + 0.5 * (pen * b) @ b

    f = objective(beta)
    for _ in range(max_iter):
        mu = expit(X @ beta)
        grad = X.T @ (w * (mu - y)) + pen * beta
        if np.max(np.abs(grad)) < tol:
            break
        H = (X * (w * mu * (1 - mu))[:, None]).T @ X + np.diag(pen) + 1e-12 * np.eye(q)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta - t * step
            fc = objective(cand)
            if fc <= f - 1e-4 * t * (grad @ step) or t < 1e-10:
                break
            t *= 0.5
        if f - fc < 1e-16 and t < 1e-10:
            break
        beta, f = cand, fc
    return beta


class _LogisticPredictor:
    def __init__(self, xm, scale, beta):
        self.xm, self.scale, self.beta = xm, scale, beta

    def __call__(self, X):
        Xs = (X - self.xm) / self.scale
        return expit(self.beta[0] + Xs @ self.beta[1:])


def _logistic_design(X, w):
    xm, _, sd, sd_safe = _weighted_moments(X, np.zeros(len(X)), w)
    Xs = (X - xm) / sd_safe
    Xs[:, sd <= 1e-12] = 0.0
    return np.column_stack([np.ones(len(X)), Xs]), xm, sd_safe


def _fit_logistic_cv(spec: LearnerSpec, X, y, w, rng) -> FittedModel:
    grid = sorted(spec.logistic_grid, reverse=True)
    k = min(spec.cv_folds, len(y))
    folds = _fold_ids(len(y), k, rng)
    loss = np.zeros(len(grid))
    for f in range(k):
        tr, te = folds != f, folds == f
        if np.unique(y[tr]).size < 2:
            # a one-class training fold supports only the constant fit
            p = float(np.clip(w[tr] @ y[tr] / w[tr].sum(), 1e-12, 1 - 1e-12))
            ll = -(y[te] * np.log(p) + (1 - y[te]) * np.log(1 - p))
            loss += w[te] @ ll
            continue
        D, xm, scale = _logistic_design(X[tr], w[tr])
        Dte = np.column_stack([np.ones(te.sum()), (X[te] - xm) / scale])
        Dte[:, 1:][:, np.all(D[:, 1:] == 0, axis=0)] = 0.0
        beta = None
        for gi, lam in enumerate(grid):
            beta = logistic_newton(D, y[tr], lam, w[tr], beta, tol=spec.newton_tol)
            eta = Dte @ beta
            ll = np.logaddexp(0.0, eta) - y[te] * eta
            loss[gi] += w[te] @ ll
    best = int(np.argmin(loss))
    D, xm, scale = _logistic_design(X, w)
    beta = None
    for lam in grid[: best + 1]:
        beta = logistic_newton(D, y, lam, w, beta, tol=spec.newton_tol)
    # zero-variance columns carry no signal; keep them inert at prediction time
    dead = np.all(D[:, 1:] == 0, axis=0)
    beta[1:][dead] = 0.0
    return FittedModel(
        "l2_logistic", "classify", _LogisticPredictor(xm, scale, beta), float(grid[best]), {"cv_loss": loss / w.sum()}
    )


# ---------------------------------------------------------------------------
# boosting and saturated


def _fit_boosting(spec: LearnerSpec, X, y, w, task, rng) -> FittedModel:
    from sklearn.ensemble import GradientBoostingClassifier, GradientBoostingRegressor

    kw = dict(
        n_estimators=spec.max_boosting_rounds,
        max_depth=1,
        learning_rate=0.1,
        validation_fraction=0.2,
        n_iter_no_change=spec.early_stopping_rounds,
        random_state=int(rng.integers(2**31 - 1)),
    )
    if task == "classify":
        model = GradientBoostingClassifier(**kw).fit(X, y.astype(int), sample_weight=w)
        fn = lambda Z: model.predict_proba(Z)[:, 1]
    else:
        model = GradientBoostingRegressor(**kw).fit(X, y, sample_weight=w)
        fn = model.predict
    return FittedModel("boosted_stumps", task, fn, None, {"n_estimators": int(model.n_estimators_)})


class _CellMeans:
    def __init__(self, X, y, w):
        keys, inv = np.unique(X, axis=0, return_inverse=True)
        inv = inv.ravel()
        num = np.bincount(inv, weights=w * y, minlength=len(keys))
        den = np.bincount(inv, weights=w, minlength=len(keys))
        self.table = {tuple(k): v for k, v in zip(keys.tolist(), (num / den).tolist())}
        self.default = float(w @ y / w.sum())

    def __call__(self, X):
        return np.array([self.table.get(tuple(r), self.default) for r in X.tolist()])


# ---------------------------------------------------------------------------


class _Constant:
    def __init__(self, value):
        self.value = float(value)

    def __call__(self, X):
        return np.full(X.shape[0], self.value)


def fit_learner(spec: LearnerSpec, X, y, task: str = "regress", weights=None, seed=0) -> FittedModel:
    """Fit the family configured for ``task`` (``"regress"`` or ``"classify"``).

    Constant targets yield a constant predictor.  ``seed`` fixes the
    cross-validation split.
    """
    if task not in ("regress", "classify"):
        raise ConfigError(f"unknown task {task!r}")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ConfigError("X and y have different numbers of rows")
    if y.size == 0:
        raise ConfigError("cannot fit a learner on zero rows")
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    if task == "classify" and not np.all((y == 0) | (y == 1)):
        raise ConfigError("classification targets must be 0/1")
    if np.ptp(y) == 0:
        return FittedModel("constant", task, _Constant(y[0]), None)
    rng = np.random.default_rng(seed)
    family = spec.regressor if task == "regress" else spec.classifier
    if family == "saturated":
        return FittedModel("saturated", task, _CellMeans(X, y, w), None)
    if len(y) < 2 * spec.cv_folds:
        raise ConfigError(f"need at least {2 * spec.cv_folds} rows to cross-validate, got {len(y)}")
    if family == "l1_linear":
        return _fit_lasso_cv(spec, X, y, w, rng)
    if family == "l2_logistic":
        return _fit_logistic_cv(spec, X, y, w, rng)
    return _fit_boosting(spec, X, y, w, task, rng)


def clip_propensity(p: np.ndarray, clip: tuple[float, float]) -> np.ndarray:
    return np.clip(p, clip[0], clip[1])
