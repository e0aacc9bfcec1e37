"""Cross-fitted nuisance functions for the dynamic LATE moments.

Every nuisance is fitted per cross-fitting fold on the rows outside that
fold and evaluated only on the rows inside it.  Nested regressions use the
arm-subsample convention: the level-``t`` model for intervention ``z`` is a
regression on ``H_t`` restricted to rows with ``Z_t = z_t``, and its target
is the level-``t+1`` model's prediction on those rows.  A level-``t`` model
depends on ``z`` only through the suffix ``z_t..z_T``, so models are cached by
suffix and shared across estimands (in particular the all-zeros arm).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import PanelDataset, as_bits, history_matrix
from .errors import ConfigError, OverlapError
from .learners import FittedModel, LearnerSpec, fit_learner

log = logging.getLogger(__name__)

RIESZ_MODES = ("plugin", "erm")


@dataclass(frozen=True)
class CrossFitPlan:
    """Partition of rows into ``K`` evaluation folds."""

    K: int
    assignment: np.ndarray
    seed: int = 0

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if self.K < 2:
            raise ConfigError("cross-fitting needs K >= 2 folds")
        if a.ndim != 1 or a.min(initial=0) < 0 or a.max(initial=0) >= self.K:
            raise ConfigError("fold assignment must take values in 0..K-1")
        counts = np.bincount(a, minlength=self.K)
        if np.any(counts == 0):
            raise ConfigError(f"empty cross-fitting fold(s): {np.flatnonzero(counts == 0).tolist()}")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @classmethod
    def make(cls, n: int, K: int = 5, seed: int = 0) -> "CrossFitPlan":
        if n < K:
            raise ConfigError(f"need at least K={K} rows for cross-fitting, got {n}")
        rng = np.random.default_rng(seed)
        return cls(K, rng.permutation(n) % K, seed)

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def eval_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def train_mask(self, k: int) -> np.ndarray:
        return self.assignment != k


@dataclass
class FoldModel:
    model: FittedModel
    fold: int
    train_index: np.ndarray


def _suffix_key(z) -> str:
    return "".join(map(str, z))


class NuisanceSet:
    """Lazily fitted, cached cross-fitted nuisances for one dataset.

    Parameters
    ----------
    ds : PanelDataset
    plan : CrossFitPlan
    spec : LearnerSpec
    riesz : {"plugin", "erm"}
        How representers are obtained: clipped propensity ratios, or a direct
        minimisation of the Riesz loss over a linear class.
    """

    def __init__(self, ds: PanelDataset, plan: CrossFitPlan, spec: LearnerSpec | None = None, riesz: str = "plugin"):
        if plan.n != ds.n:
            raise ConfigError(f"plan covers {plan.n} rows but dataset has {ds.n}")
        if riesz not in RIESZ_MODES:
            raise ConfigError(f"unknown riesz mode {riesz!r}; expected one of {RIESZ_MODES}")
        self.ds = ds
        self.plan = plan
        self.spec = spec or LearnerSpec()
        self.riesz_mode = riesz
        self.weights = ds.sample_weights()
        self._H = {}
        self.registry: dict[tuple, list[FoldModel | None]] = {}
        self._oof: dict[tuple, np.ndarray] = {}
        self._riesz_cache: dict[tuple, list[np.ndarray]] = {}

    # ----------------------------------------------------------------- basics

    @property
    def T(self) -> int:
        return self.ds.T

    def H(self, t: int) -> np.ndarray:
        if t not in self._H:
            self._H[t] = history_matrix(self.ds, t)
        return self._H[t]

    def _seed(self, k: int, t: int) -> int:
        # CV splits depend only on (plan seed, fold, period) so that identical
        # regression problems give identical fits wherever they arise
        return int(np.random.SeedSequence([self.plan.seed, k, t]).generate_state(1)[0])

    def _fit_and_record(self, key, k, rows, target, task, t) -> FittedModel:
        model = fit_learner(self.spec, self.H(t)[rows], target, task, self.weights[rows], seed=self._seed(k, t))
        model.meta["fold"] = k
        slot = self.registry.setdefault(key, [None] * self.plan.K)
        slot[k] = FoldModel(model, k, rows)
        return model

    def fold_model(self, key: tuple, k: int) -> FittedModel:
        slot = self.registry.get(key)
        if slot is not None and slot[k] is not None:
            return slot[k].model
        return self._fit(key, k)

    def _period(self, key) -> int:
        kind = key[0]
        if kind == "prop":
            return key[1]
        if kind == "f":
            return self.T - len(key[1]) + 1
        if kind == "g":
            return self.T - len(key[2]) + 1
        if kind in ("q", "p"):
            return 1
        raise KeyError(key)

    def _fit(self, key, k) -> FittedModel:
        ds = self.ds
        train = self.plan.train_mask(k)
        kind = key[0]
        t = self._period(key)
        if kind == "prop":
            rows = np.flatnonzero(train)
            zt = ds.z[rows, t - 1].astype(float)
            if np.ptp(zt) == 0:
                raise OverlapError(f"degenerate instrument at period {t}: Z_{t} is constant in training fold {k}")
            return self._fit_and_record(key, k, rows, zt, "classify", t)
        if kind in ("f", "g"):
            suffix = key[1] if kind == "f" else key[2]
            rows = np.flatnonzero(train & (ds.z[:, t - 1] == suffix[0]))
            if rows.size == 0:
                raise OverlapError(f"arm overlap violated at period {t}: no training rows with Z_{t}={suffix[0]}")
            if t == self.T:
                if kind == "f":
                    target, task = ds.y[rows], "regress"
                else:
                    target, task = self._event(key[1], rows), "classify"
            else:
                nxt = ("f", suffix[1:]) if kind == "f" else ("g", key[1], suffix[1:])
                target = self.fold_model(nxt, k).predict(self.H(t + 1)[rows])
                task = "regress"
            return self._fit_and_record(key, k, rows, target, task, t)
        if kind == "q":
            rows = np.flatnonzero(train & (ds.z[:, 0] == 1))
            if rows.size == 0:
                raise OverlapError("arm overlap violated at period 1: no training rows with Z_1=1")
            target = self._staggered_target(rows, k)
            return self._fit_and_record(key, k, rows, target, "regress", 1)
        if kind == "p":
            rows = np.flatnonzero(train & (ds.z[:, 0] == 1))
            if rows.size == 0:
                raise OverlapError("arm overlap violated at period 1: no training rows with Z_1=1")
            return self._fit_and_record(key, k, rows, ds.d[rows, 0].astype(float), "classify", 1)
        raise KeyError(key)

    def _event(self, event, rows) -> np.ndarray:
        d = self.ds.d[rows]
        if event == "nonzero":
            return d.any(axis=1).astype(float)
        return (d == np.array(event, dtype=np.int8)).all(axis=1).astype(float)

    def _staggered_target(self, rows, k) -> np.ndarray:
        """``f_2^{D_1 1}(H_2)``: each row uses the all-``D_1`` arm model."""
        T = self.T
        out = np.empty(rows.size)
        H2 = self.H(2)[rows]
        d1 = self.ds.d[rows, 0]
        for v in (0, 1):
            sel = d1 == v
            if sel.any():
                out[sel] = self.fold_model(("f", (v,) * (T - 1)), k).predict(H2[sel])
        return out

    def oof(self, key: tuple, t: int | None = None) -> np.ndarray:
        """Out-of-fold predictions of a cached model family on ``H_t``."""
        t = self._period(key) if t is None else t
        ck = (key, t)
        if ck not in self._oof:
            out = np.empty(self.ds.n)
            Ht = self.H(t)
            for k in range(self.plan.K):
                idx = self.plan.eval_index(k)
                out[idx] = self.fold_model(key, k).predict(Ht[idx])
            out.setflags(write=False)
            self._oof[ck] = out
        return self._oof[ck]

    def predict_avg(self, key: tuple, X: np.ndarray) -> np.ndarray:
        """Average of the per-fold models' predictions (for evaluation off the sample)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.mean([self.fold_model(key, k).predict(X) for k in range(self.plan.K)], axis=0)

    # ------------------------------------------------------------ nuisances

    def propensity(self, t: int) -> np.ndarray:
        """Raw out-of-fold ``Pr(Z_t = 1 | H_t)``."""
        return self.oof(("prop", t))

    def propensity_of(self, t: int, value) -> np.ndarray:
        """Clipped ``Pr(Z_t = value | H_t)``; ``value`` may vary by row."""
        p1 = self.propensity(t)
        value = np.broadcast_to(np.asarray(value), p1.shape)
        p = np.where(value == 1, p1, 1.0 - p1)
        lo, hi = self.spec.clip
        return np.clip(p, lo, hi)

    def outcome(self, z) -> list[np.ndarray]:
        """``[f_1^z(H_1), ..., f_T^z(H_T)]`` evaluated out of fold."""
        z = self._check_z(z)
        return [self.oof(("f", z[t - 1 :])) for t in range(1, self.T + 1)]

    def treatment(self, z, event) -> list[np.ndarray]:
        """Nested treatment regressions with terminal target ``1{D = d}`` (event ``d``) or ``1{D != 0}`` (``"nonzero"``)."""
        z = self._check_z(z)
        event = event if event == "nonzero" else as_bits(event)
        return [self.oof(("g", event, z[t - 1 :])) for t in range(1, self.T + 1)]

    def riesz(self, z) -> list[np.ndarray]:
        z = self._check_z(z)
        return self.riesz_plugin(z) if self.riesz_mode == "plugin" else self.riesz_erm(z)

    def riesz_plugin(self, z) -> list[np.ndarray]:
        """``a_t = a_{t-1} 1{Z_t = z_t} / clip(Pr(Z_t = z_t | H_t))`` with ``a_0 = 1``."""
        z = self._check_z(z)
        ck = ("plugin", z)
        if ck not in self._riesz_cache:
            a = np.ones(self.ds.n)
            out = []
            for t in range(1, self.T + 1):
                hit = self.ds.z[:, t - 1] == z[t - 1]
                a = a * np.where(hit, 1.0 / self.propensity_of(t, z[t - 1]), 0.0)
                out.append(a)
            self._riesz_cache[ck] = out
        return self._riesz_cache[ck]

    def riesz_erm(self, z) -> list[np.ndarray]:
        """Cross-fitted minimisers of the Riesz loss over ``1{Z_t = z_t} * (linear in H_t)``."""
        z = self._check_z(z)
        ck = ("erm", z)
        if ck not in self._riesz_cache:
            out = [np.empty(self.ds.n) for _ in range(self.T)]
            for k in range(self.plan.K):
                models = self.fold_riesz_erm(z, k)
                idx = self.plan.eval_index(k)
                for t, m in enumerate(models, start=1):
                    out[t - 1][idx] = m.evaluate(self.H(t)[idx], self.ds.z[idx, t - 1])
            self._riesz_cache[ck] = out
        return self._riesz_cache[ck]

    def fold_riesz_erm(self, z, k) -> list["RieszLinear"]:
        key = ("erm", tuple(z))
        slot = self.registry.setdefault(key, [None] * self.plan.K)
        if slot[k] is None:
            rows = np.flatnonzero(self.plan.train_mask(k))
            w = self.weights[rows]
            prev = np.ones(rows.size)
            models = []
            for t in range(1, self.T + 1):
                m = fit_riesz_linear(
                    self.H(t)[rows], self.ds.z[rows, t - 1], z[t - 1], prev, w, seed=self._seed(k, t)
                )
                prev = m.evaluate(self.H(t)[rows], self.ds.z[rows, t - 1])
                models.append(m)
            slot[k] = FoldModel(models, k, rows)
        return slot[k].model

    def staggered(self) -> "StaggeredValues":
        """Out-of-fold ``q``, ``p``, ``f_t^{D_1 1}`` (t >= 2), ``gamma_t`` and ``a_1^1``."""
        T = self.T
        if T < 2:
            raise ConfigError("staggered nuisances need T >= 2")
        ds = self.ds
        d1 = ds.d[:, 0]
        q = self.oof(("q",))
        p = self.oof(("p",))
        ones, zeros = (1,) * T, (0,) * T
        f1, f0 = self.outcome(ones), self.outcome(zeros)
        f_sel = [np.where(d1 == 1, f1[t - 1], f0[t - 1]) for t in range(2, T + 1)]
        a1 = self.riesz(ones)[0]
        if self.riesz_mode == "plugin":
            gamma = [a1]
            g = a1
            for t in range(2, T + 1):
                hit = ds.z[:, t - 1] == d1
                g = g * np.where(hit, 1.0 / self.propensity_of(t, d1), 0.0)
                gamma.append(g)
        else:
            gamma = self._gamma_erm()
        return StaggeredValues(q=q, p=p, f=f_sel, gamma=gamma, a1=a1)

    def _gamma_erm(self) -> list[np.ndarray]:
        ck = ("erm_gamma",)
        if ck not in self._riesz_cache:
            T = self.T
            out = [np.empty(self.ds.n) for _ in range(T)]
            for k in range(self.plan.K):
                rows = np.flatnonzero(self.plan.train_mask(k))
                idx = self.plan.eval_index(k)
                w = self.weights[rows]
                d1_tr, d1_ev = self.ds.d[rows, 0], self.ds.d[idx, 0]
                prev = np.ones(rows.size)
                for t in range(1, T + 1):
                    target_tr = np.ones(rows.size, dtype=np.int8) if t == 1 else d1_tr
                    target_ev = np.ones(idx.size, dtype=np.int8) if t == 1 else d1_ev
                    m = fit_riesz_linear(
                        self.H(t)[rows], self.ds.z[rows, t - 1], target_tr, prev, w, seed=self._seed(k, t)
                    )
                    prev = m.evaluate(self.H(t)[rows], self.ds.z[rows, t - 1], target_tr)
                    out[t - 1][idx] = m.evaluate(self.H(t)[idx], self.ds.z[idx, t - 1], target_ev)
            self._riesz_cache[ck] = out
        return self._riesz_cache[ck]

    def _check_z(self, z) -> tuple[int, ...]:
        z = as_bits(z)
        if len(z) != self.T:
            raise ConfigError(f"intervention vector {z} does not have length T={self.T}")
        return z

    # ------------------------------------------------------------ auditing

    def hygiene_violations(self) -> list[tuple]:
        """Models whose training rows intersect the fold they are evaluated on."""
        bad = []
        for key, slot in self.registry.items():
            for fm in slot:
                if fm is None:
                    continue
                if np.any(self.plan.assignment[fm.train_index] == fm.fold):
                    bad.append((key, fm.fold))
        return bad

    def value_table(self, zs=()) -> dict[str, np.ndarray]:
        cols = {"fold": self.plan.assignment}
        for t in range(1, self.T + 1):
            cols[f"prop_z{t}"] = self.propensity(t)
        for z in zs:
            z = self._check_z(z)
            tag = _suffix_key(z)
            for t, (f, a) in enumerate(zip(self.outcome(z), self.riesz(z)), start=1):
                cols[f"f{t}_{tag}"] = f
                cols[f"a{t}_{tag}"] = a
        return cols

    def dump_csv(self, path, zs=()) -> None:
        cols = self.value_table(zs)
        names = list(cols)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for i in range(self.ds.n):
                w.writerow([format(float(cols[c][i]), ".17g") for c in names])


@dataclass
class StaggeredValues:
    q: np.ndarray
    p: np.ndarray
    f: list[np.ndarray]  # f_t^{D_1 1}(H_t) for t = 2..T
    gamma: list[np.ndarray]  # gamma_t for t = 1..T
    a1: np.ndarray


# ---------------------------------------------------------------------------
# linear Riesz representer by empirical risk minimisation

RIESZ_PENALTIES = tuple(np.logspace(1, -6, 8).tolist())


@dataclass
class RieszLinear:
    """``a(H, Z) = 1{Z = target} * (b_0 + H_std @ b)``."""

    xm: np.ndarray
    scale: np.ndarray
    theta: np.ndarray
    target: object
    penalty: float
    meta: dict = field(default_factory=dict)

    def value_on_arm(self, H: np.ndarray) -> np.ndarray:
        Xs = (H - self.xm) / self.scale
        return self.theta[0] + Xs @ self.theta[1:]

    def evaluate(self, H, Z, target=None) -> np.ndarray:
        target = self.target if target is None else target
        return np.where(np.asarray(Z) == np.asarray(target), self.value_on_arm(H), 0.0)


def _riesz_solve(X, m, prev, w, lam):
    """Minimise ``mean_w(m (x'b)^2 - 2 prev x'b) + lam |b_1:|^2``."""
    sw = w.sum()
    A = (X * (w * m / sw)[:, None]).T @ X
    P = np.eye(X.shape[1])
    P[0, 0] = 0.0
    A = A + lam * P
    b = X.T @ (w * prev / sw)
    cond = np.linalg.cond(A)
    bumped = 0
    while not np.isfinite(cond) or cond > 1e12:
        lam = max(lam * 10.0, 1e-8)
        A = A + lam * P
        cond = np.linalg.cond(A)
        bumped += 1
        if bumped > 20:
            break
    if bumped:
        log.warning("Riesz normal equations ill-conditioned; penalty raised to %.3g", lam)
    return np.linalg.lstsq(A, b, rcond=None)[0], lam


def _riesz_loss(X, m, prev, w, theta):
    v = X @ theta
    return float(w @ (m * v * v - 2.0 * prev * v) / w.sum())


def fit_riesz_linear(H, Z, target, prev, weights=None, penalties=RIESZ_PENALTIES, folds=5, seed=0) -> RieszLinear:
    """Fit ``a`` minimising ``E[a(H,Z)^2 - 2 prev * a(H, target)]`` with a CV-chosen ridge penalty.

    ``target`` is the arm value (scalar or per-row), ``prev`` the previous
    representer's values on the same rows.
    """
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    m = (np.asarray(Z) == np.asarray(target)).astype(float)
    m = np.broadcast_to(m, (n,))
    prev = np.asarray(prev, dtype=float)
    sw = w.sum()
    xm = w @ H / sw
    sd = np.sqrt(w @ (H - xm) ** 2 / sw)
    scale = np.where(sd > 1e-12, sd, 1.0)
    X = np.column_stack([np.ones(n), (H - xm) / scale])
    X[:, 1:][:, sd <= 1e-12] = 0.0
    penalties = sorted(penalties, reverse=True)
    if n >= 2 * folds and len(penalties) > 1:
        rng = np.random.default_rng(seed)
        ids = np.arange(n) % folds
        rng.shuffle(ids)
        loss = np.zeros(len(penalties))
        for f in range(folds):
            tr, te = ids != f, ids == f
            for li, lam in enumerate(penalties):
                th, _ = _riesz_solve(X[tr], m[tr], prev[tr], w[tr], lam)
                loss[li] += _riesz_loss(X[te], m[te], prev[te], w[te], th) * w[te].sum()
        best = penalties[int(np.argmin(loss))]
    else:
        best = penalties[-1]
    theta, lam = _riesz_solve(X, m, prev, w, best)
    scalar_target = np.ndim(target) == 0
    return RieszLinear(xm, scale, theta, target if scalar_target else None, lam)


# ---------------------------------------------------------------------------
# functional entry points


def fit_propensities(ds: PanelDataset, plan: CrossFitPlan, spec: LearnerSpec | None = None) -> NuisanceSet:
    ns = NuisanceSet(ds, plan, spec)
    for t in range(1, ds.T + 1):
        ns.propensity(t)
    return ns


def _models(ns: NuisanceSet, keys) -> dict[int, list[FittedModel]]:
    out = {}
    for t, key in keys:
        out[t] = [ns.fold_model(key, k) for k in range(ns.plan.K)]
    return out


def fit_nested_outcome(ds, plan, z, spec=None, ns: NuisanceSet | None = None) -> dict[int, list[FittedModel]]:
    """Per-period, per-fold models ``f_t^z``."""
    ns = ns or NuisanceSet(ds, plan, spec)
    z = ns._check_z(z)
    return _models(ns, [(t, ("f", z[t - 1 :])) for t in range(ds.T, 0, -1)])


def fit_nested_treatment(ds, plan, z, event, spec=None, ns: NuisanceSet | None = None):
    """Per-period, per-fold models ``g_t`` for the event ``D = d`` or ``"nonzero"``."""
    ns = ns or NuisanceSet(ds, plan, spec)
    z = ns._check_z(z)
    event = event if event == "nonzero" else as_bits(event)
    return _models(ns, [(t, ("g", event, z[t - 1 :])) for t in range(ds.T, 0, -1)])


def fit_riesz_erm(ds, plan, z, spec=None, ns: NuisanceSet | None = None) -> list[list[RieszLinear]]:
    """Per-fold lists ``[a_1^z, ..., a_T^z]`` of ERM representers."""
    ns = ns or NuisanceSet(ds, plan, spec, riesz="erm")
    z = ns._check_z(z)
    return [ns.fold_riesz_erm(z, k) for k in range(plan.K)]


def fit_staggered_nuisances(ds, plan, spec=None, ns: NuisanceSet | None = None) -> StaggeredValues:
    ns = ns or NuisanceSet(ds, plan, spec)
    return ns.staggered()


def riesz_weights_plugin(propensities, trajectory, z, clip=(0.01, 1.0)) -> list[float]:
    """Plug-in representer along one trajectory.

    ``propensities`` is a callable ``(t, HistoryFeatures) -> Pr(Z_t = 1 | H_t)``.
    """
    from .data import history_features

    z = as_bits(z)
    a = 1.0
    out = []
    for t in range(1, trajectory.T + 1):
        if int(trajectory.z[t - 1]) != z[t - 1]:
            a = 0.0
        else:
            p1 = float(propensities(t, history_features(trajectory, t)))
            p = p1 if z[t - 1] == 1 else 1.0 - p1
            a = a / float(np.clip(p, clip[0], clip[1]))
        out.append(a)
    return out
