"""Logistic-linear structural simulator with counterfactual rollouts.

Structural equations (``t = 1..T``)::

    U   ~ clip(N(0, 1), -2, 2)
    S_0 ~ N(0, I_p)
    Z_t ~ Bernoulli(logistic(S_{t-1}[0]))
    D_t ~ Z_t * Bernoulli(logistic(2 Z_t - 1 + U))          (when-to-treat DGP)
    D_t ~ 1{D_1=1} Z_t + 1{D_1=0} Z_t * Bernoulli(...)      (staggered DGP, t >= 2)
    S_t ~ 0.5 S_{t-1} + D_{t-1} + U + N(0, I_p),  D_0 = 0
    Y   ~ D_T + S_{T-1}[k] + U + N(0, 1)

All exogenous noise is drawn up front, so the same seed evaluated under
different interventions gives paired (common random number) draws.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .data import PanelDataset, as_bits
from .errors import ConfigError, EstimabilityError

VARIANTS = ("when_to_treat_dgp", "staggered_dgp")

# units per RNG substream; fixed so output never depends on scheduling
BLOCK_SIZE = 8192


@dataclass(frozen=True)
class LogisticLinearScm:
    T: int = 2
    p: int = 10
    variant: str = "when_to_treat_dgp"
    treatment_effect: float = 1.0
    outcome_state_index: int = 0
    u_clip: float = 2.0
    state_ar: float = 0.5

    def __post_init__(self):
        if self.T < 1 or self.p < 1:
            raise ConfigError("T and p must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0 <= self.outcome_state_index < self.p:
            raise ConfigError("outcome_state_index must index a state coordinate")
        if self.u_clip <= 0:
            raise ConfigError("u_clip must be positive")


@dataclass
class _Noise:
    u: np.ndarray  # (n,)
    s0: np.ndarray  # (n, p)
    eps: np.ndarray  # (n, T-1, p), noise of S_1..S_{T-1}
    rz: np.ndarray  # (n, T) uniforms for Z_t
    rd: np.ndarray  # (n, T) uniforms for compliance draws
    ey: np.ndarray  # (n,)

    @property
    def n(self):
        return self.u.shape[0]


def _seed_sequence(seed, block: int) -> np.random.SeedSequence:
    if isinstance(seed, (tuple, list)):
        entropy = [int(s) for s in seed]
    else:
        entropy = int(seed)
    return np.random.SeedSequence(entropy, spawn_key=(block,))


def _draw_block(scm: LogisticLinearScm, m: int, seed, block: int) -> _Noise:
    # always draw a full block so unit i's noise does not depend on n
    rng = np.random.default_rng(_seed_sequence(seed, block))
    b = BLOCK_SIZE
    u = np.clip(rng.standard_normal(b), -scm.u_clip, scm.u_clip)
    s0 = rng.standard_normal((b, scm.p))
    eps = rng.standard_normal((b, scm.T - 1, scm.p))
    rz = rng.random((b, scm.T))
    rd = rng.random((b, scm.T))
    ey = rng.standard_normal(b)
    return _Noise(u[:m], s0[:m], eps[:m], rz[:m], rd[:m], ey[:m])


def _noise_blocks(scm: LogisticLinearScm, n: int, seed):
    if n < 1:
        raise ConfigError("n must be ≥ 1")
    start = 0
    block = 0
    while start < n:
        m = min(BLOCK_SIZE, n - start)
        yield _draw_block(scm, m, seed, block)
        start += m
        block += 1


# ---------------------------------------------------------------------------
# policies and interventions


@dataclass(frozen=True)
class EncouragementPolicy:
    """Deterministic map from ``(t, z_<t, d_<t, s_<t)`` to an encouragement bit per unit.

    ``fn(t, z_prev, d_prev, s_prev)`` receives arrays of shapes (n, t-1),
    (n, t-1) and (n, t, p) and returns an (n,) 0/1 array.
    """

    fn: Callable[[int, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    name: str = "policy"

    def __call__(self, t, z_prev, d_prev, s_prev) -> np.ndarray:
        out = np.asarray(self.fn(t, z_prev, d_prev, s_prev)).astype(np.int8)
        return np.broadcast_to(out, (s_prev.shape[0],)).copy()

    @classmethod
    def constant(cls, z) -> "EncouragementPolicy":
        bits = as_bits(z)

        def fn(t, z_prev, d_prev, s_prev):
            return np.full(s_prev.shape[0], bits[t - 1], dtype=np.int8)

        return cls(fn, name=f"constant_{''.join(map(str, bits))}")

    @classmethod
    def first_period_complier(cls) -> "EncouragementPolicy":
        """Encourage in period 1, then keep encouraging exactly the period-1 takers."""

        def fn(t, z_prev, d_prev, s_prev):
            if t == 1:
                return np.ones(s_prev.shape[0], dtype=np.int8)
            return d_prev[:, 0]

        return cls(fn, name="first_period_complier")

    @classmethod
    def from_features(cls, rule: Callable[[int, np.ndarray], int], name="feature_policy"):
        """Wrap a per-unit rule on flattened history features ``H_t``."""

        def fn(t, z_prev, d_prev, s_prev):
            n = s_prev.shape[0]
            H = np.concatenate([z_prev, d_prev, s_prev.reshape(n, -1)], axis=1)
            return np.array([rule(t, h) for h in H], dtype=np.int8)

        return cls(fn, name=name)


@dataclass(frozen=True)
class Intervention:
    """One of ``fix_instruments``, ``fix_treatments`` or ``policy``."""

    kind: str
    value: tuple | EncouragementPolicy | None = None
    tag: str = ""

    def __post_init__(self):
        if self.kind not in ("natural", "fix_instruments", "fix_treatments", "policy"):
            raise ConfigError(f"unknown intervention kind {self.kind!r}")
        if not self.tag:
            if self.kind in ("fix_instruments", "fix_treatments"):
                tag = ("z" if self.kind == "fix_instruments" else "d") + "".join(map(str, self.value))
            elif self.kind == "policy":
                tag = self.value.name
            else:
                tag = "natural"
            object.__setattr__(self, "tag", tag)


def fix_instruments(z, tag: str = "") -> Intervention:
    return Intervention("fix_instruments", as_bits(z), tag)


def fix_treatments(d, tag: str = "") -> Intervention:
    return Intervention("fix_treatments", as_bits(d), tag)


def policy(pi: EncouragementPolicy, tag: str = "") -> Intervention:
    return Intervention("policy", pi, tag)


NATURAL = Intervention("natural")


def _evaluate(scm: LogisticLinearScm, nz: _Noise, iv: Intervention):
    """Run the structural recursion on fixed noise under one intervention."""
    n, T, p = nz.n, scm.T, scm.p
    beta = scm.treatment_effect
    if iv.kind in ("fix_instruments", "fix_treatments") and len(iv.value) != T:
        raise ConfigError(f"intervention vector must have length T={T}")
    states = np.empty((n, T, p))
    states[:, 0] = nz.s0
    z = np.zeros((n, T), dtype=np.int8)
    d = np.zeros((n, T), dtype=np.int8)
    for t in range(1, T + 1):
        if t >= 2:
            # S_{t-1} = a S_{t-2} + D_{t-2} + U + eps, with D_0 = 0
            lag_d = d[:, t - 3].astype(float) if t >= 3 else np.zeros(n)
            states[:, t - 1] = (
                scm.state_ar * states[:, t - 2] + beta * lag_d[:, None] + nz.u[:, None] + nz.eps[:, t - 2]
            )
        s_last = states[:, t - 1]
        if iv.kind == "fix_instruments":
            zt = np.full(n, iv.value[t - 1], dtype=np.int8)
        elif iv.kind == "policy":
            zt = iv.value(t, z[:, : t - 1], d[:, : t - 1], states[:, :t])
        else:
            zt = (nz.rz[:, t - 1] < expit(s_last[:, 0])).astype(np.int8)
        z[:, t - 1] = zt
        if iv.kind == "fix_treatments":
            dt = np.full(n, iv.value[t - 1], dtype=np.int8)
        else:
            comply = nz.rd[:, t - 1] < expit(2.0 * zt - 1.0 + nz.u)
            dt = (zt * comply).astype(np.int8)
            if scm.variant == "staggered_dgp" and t >= 2:
                dt = np.where(d[:, 0] == 1, zt, dt).astype(np.int8)
        d[:, t - 1] = dt
    k = scm.outcome_state_index
    y = beta * d[:, T - 1] + states[:, T - 1, k] + nz.u + nz.ey
    return states, z, d, y


def simulate(scm: LogisticLinearScm, n: int, seed=0) -> PanelDataset:
    """Draw ``n`` i.i.d. observed trajectories; deterministic given ``seed``."""
    parts = [_evaluate(scm, nz, NATURAL) for nz in _noise_blocks(scm, n, seed)]
    states, z, d, y = (np.concatenate(x) for x in zip(*parts))
    return PanelDataset(states, z, d, y)


@dataclass
class CounterfactualArm:
    z: np.ndarray
    d: np.ndarray
    y: np.ndarray


@dataclass
class CounterfactualDraws:
    """Paired counterfactual outcomes for ``n`` units under several interventions."""

    u: np.ndarray
    s0: np.ndarray
    arms: dict[str, CounterfactualArm] = field(default_factory=dict)

    @property
    def n(self):
        return self.u.shape[0]

    def __getitem__(self, tag: str) -> CounterfactualArm:
        return self.arms[tag]

    def write_csv(self, path) -> None:
        tags = list(self.arms)
        T = next(iter(self.arms.values())).d.shape[1] if tags else 0
        header = ["u"]
        for tag in tags:
            header.append(f"y_cf_{tag}")
            header += [f"d_cf_{tag}_{t}" for t in range(1, T + 1)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(self.n):
                row = [format(float(self.u[i]), ".17g")]
                for tag in tags:
                    arm = self.arms[tag]
                    row.append(format(float(arm.y[i]), ".17g"))
                    row += [str(int(v)) for v in arm.d[i]]
                w.writerow(row)


def rollout_counterfactual(
    scm: LogisticLinearScm, n: int, seed, interventions: Sequence[Intervention]
) -> CounterfactualDraws:
    """Evaluate every intervention on the same exogenous draws."""
    interventions = list(interventions)
    tags = [iv.tag for iv in interventions]
    if len(set(tags)) != len(tags):
        raise ConfigError(f"duplicate intervention tags {tags}")
    us, s0s = [], []
    acc = {tag: ([], [], []) for tag in tags}
    for nz in _noise_blocks(scm, n, seed):
        us.append(nz.u)
        s0s.append(nz.s0)
        for iv in interventions:
            _, z, d, y = _evaluate(scm, nz, iv)
            acc[iv.tag][0].append(z)
            acc[iv.tag][1].append(d)
            acc[iv.tag][2].append(y)
    arms = {
        tag: CounterfactualArm(np.concatenate(zl), np.concatenate(dl), np.concatenate(yl))
        for tag, (zl, dl, yl) in acc.items()
    }
    return CounterfactualDraws(np.concatenate(us), np.concatenate(s0s), arms)


# ---------------------------------------------------------------------------
# Monte Carlo ground truth


@dataclass(frozen=True)
class LateTruth:
    value: float
    se: float
    complier_prob: float
    n_compliers: int
    n_mc: int


def _conditional_mean(diff: np.ndarray, mask: np.ndarray, n_mc: int) -> LateTruth:
    k = int(mask.sum())
    if k == 0:
        raise EstimabilityError("no compliers drawn")
    vals = diff[mask]
    se = float(vals.std(ddof=1) / np.sqrt(k)) if k > 1 else float("inf")
    return LateTruth(float(vals.mean()), se, k / n_mc, k, n_mc)


def true_late_mc(scm: LogisticLinearScm, z, d, n_mc: int = 200_000, seed=12345) -> LateTruth:
    """Monte Carlo ``E[Y(d) - Y(0) | D(z) = d]`` with common random numbers."""
    z, d = as_bits(z), as_bits(d)
    if len(z) != scm.T or len(d) != scm.T:
        raise ConfigError("intervention vectors must have length T")
    if any(di > zi for zi, di in zip(z, d)):
        raise ConfigError("d must be entrywise <= z")
    zero = (0,) * scm.T
    draws = rollout_counterfactual(
        scm,
        n_mc,
        seed,
        [fix_instruments(z, "inst"), fix_treatments(d, "treat"), fix_treatments(zero, "base")],
    )
    mask = (draws["inst"].d == np.array(d, dtype=np.int8)).all(axis=1)
    return _conditional_mean(draws["treat"].y - draws["base"].y, mask, n_mc)


def true_mixture_mc(scm: LogisticLinearScm, z, n_mc: int = 200_000, seed=12345) -> LateTruth:
    """Monte Carlo ``E[Y(D(z)) - Y(0) | D(z) != 0]``."""
    z = as_bits(z)
    zero = (0,) * scm.T
    draws = rollout_counterfactual(
        scm, n_mc, seed, [fix_instruments(z, "inst"), fix_treatments(zero, "base")]
    )
    mask = draws["inst"].d.any(axis=1)
    return _conditional_mean(draws["inst"].y - draws["base"].y, mask, n_mc)


def true_policy_late_mc(scm: LogisticLinearScm, n_mc: int = 200_000, seed=12345) -> LateTruth:
    """``E[Y(D(pi)) - Y(D(0)) | D_1(1) = 1]`` for the first-period-complier policy."""
    zero = (0,) * scm.T
    draws = rollout_counterfactual(
        scm,
        n_mc,
        seed,
        [
            policy(EncouragementPolicy.first_period_complier(), "pi"),
            fix_instruments(zero, "base"),
        ],
    )
    mask = draws["pi"].d[:, 0] == 1
    return _conditional_mean(draws["pi"].y - draws["base"].y, mask, n_mc)
