"""Observed panel data: trajectories, history features, validation and CSV I/O.

A unit's observed path is ``(S_0, Z_1, D_1, S_1, ..., Z_T, D_T, Y)``.  Only the
states ``S_0 .. S_{T-1}`` are stored; the terminal state is the outcome ``Y``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataValidationError, ParseError


@dataclass(frozen=True)
class Trajectory:
    """One unit's observed path.

    ``states[t]`` holds ``S_t`` for ``t = 0 .. T-1``; ``z`` and ``d`` hold
    ``Z_1..Z_T`` and ``D_1..D_T``.  No validation happens here so that
    malformed rows can be built and reported by :func:`validate_dataset`.
    """

    states: Sequence[Sequence[float]]
    z: Sequence[int]
    d: Sequence[int]
    y: float

    @property
    def T(self) -> int:
        return len(self.z)

    @property
    def p(self) -> int:
        return len(self.states[0]) if len(self.states) else 0


@dataclass(frozen=True)
class InterventionVector:
    """A fixed binary vector used as an instrument or treatment intervention."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if not bits or any(b not in (0, 1) for b in bits):
            raise ValueError(f"intervention must be a nonempty bit vector, got {self.bits!r}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def unit(cls, T: int, t: int) -> "InterventionVector":
        """Vector with a single one at 1-based period ``t``."""
        if not 1 <= t <= T:
            raise ValueError(f"period {t} outside 1..{T}")
        return cls(tuple(int(s == t) for s in range(1, T + 1)))

    @classmethod
    def zeros(cls, T: int) -> "InterventionVector":
        return cls((0,) * T)

    @classmethod
    def ones(cls, T: int) -> "InterventionVector":
        return cls((1,) * T)

    @property
    def T(self) -> int:
        return len(self.bits)

    @property
    def kind(self) -> str:
        ones = [i + 1 for i, b in enumerate(self.bits) if b]
        if not ones:
            return "all_zeros"
        if len(ones) == 1:
            return f"when_to_treat({ones[0]})"
        if len(ones) == self.T:
            return "all_ones"
        return "other"

    @property
    def treated_period(self) -> int | None:
        ones = [i + 1 for i, b in enumerate(self.bits) if b]
        return ones[0] if len(ones) == 1 else None

    def __iter__(self):
        return iter(self.bits)

    def __len__(self):
        return len(self.bits)

    def __str__(self):
        return "".join(str(b) for b in self.bits)


def as_bits(v) -> tuple[int, ...]:
    """Normalize an InterventionVector, string like ``"01"`` or sequence to a tuple."""
    if isinstance(v, InterventionVector):
        return v.bits
    if isinstance(v, str):
        v = v.replace(",", "").replace("(", "").replace(")", "").replace(" ", "")
        return InterventionVector(tuple(int(c) for c in v)).bits
    return InterventionVector(tuple(v)).bits


@dataclass(frozen=True)
class HistoryFeatures:
    t: int
    features: np.ndarray


class PanelDataset:
    """Immutable, array-backed collection of trajectories.

    Arrays: ``states`` (n, T, p), ``z`` and ``d`` (n, T) int8, ``y`` (n,).
    Optional ``weights`` (n,) turn the panel into a weighted sample; an exact
    discrete law is represented this way.
    """

    __slots__ = ("states", "z", "d", "y", "weights")

    def __init__(self, states, z, d, y, weights=None):
        states = np.asarray(states, dtype=float)
        z = np.asarray(z)
        d = np.asarray(d)
        y = np.asarray(y, dtype=float)
        if states.ndim != 3:
            raise DataValidationError("states must have shape (n, T, p)")
        n, T, p = states.shape
        if n == 0:
            raise DataValidationError("empty input")
        if T < 1 or p < 1:
            raise DataValidationError("T and p must be positive")
        if z.shape != (n, T) or d.shape != (n, T) or y.shape != (n,):
            raise DataValidationError(
                f"inconsistent shapes: states {states.shape}, z {z.shape}, d {d.shape}, y {y.shape}"
            )
        for name, arr in (("z", z), ("d", d)):
            if not np.isin(arr, (0, 1)).all():
                raise DataValidationError(f"non-binary values in {name}")
        if not (np.isfinite(states).all() and np.isfinite(y).all()):
            raise DataValidationError("non-finite state or outcome values")
        if weights is not None:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (n,) or (weights < 0).any() or not np.isfinite(weights).all():
                raise DataValidationError("weights must be a nonnegative finite vector of length n")
            weights.setflags(write=False)
        z = z.astype(np.int8)
        d = d.astype(np.int8)
        for arr in (states, z, d, y):
            arr.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weights", weights)

    def __setattr__(self, key, value):
        raise AttributeError("PanelDataset is immutable")

    @classmethod
    def from_rows(cls, rows: Iterable[Trajectory], weights=None) -> "PanelDataset":
        rows = list(rows)
        if not rows:
            raise DataValidationError("empty input")
        report = validate_dataset(rows)
        if not report.ok:
            raise DataValidationError(f"invalid rows: {report.summary()}")
        states = np.array([np.asarray(r.states, dtype=float) for r in rows])
        return cls(
            states,
            np.array([r.z for r in rows]),
            np.array([r.d for r in rows]),
            np.array([r.y for r in rows], dtype=float),
            weights,
        )

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def T(self) -> int:
        return self.states.shape[1]

    @property
    def p(self) -> int:
        return self.states.shape[2]

    def __len__(self) -> int:
        return self.n

    def row(self, i: int) -> Trajectory:
        return Trajectory(
            states=[self.states[i, t].copy() for t in range(self.T)],
            z=tuple(int(v) for v in self.z[i]),
            d=tuple(int(v) for v in self.d[i]),
            y=float(self.y[i]),
        )

    @property
    def rows(self) -> list[Trajectory]:
        return [self.row(i) for i in range(self.n)]

    def sample_weights(self) -> np.ndarray:
        """Weights normalized to mean one (unit weights when unweighted)."""
        if self.weights is None:
            return np.ones(self.n)
        total = self.weights.sum()
        if total <= 0:
            raise DataValidationError("weights sum to zero")
        return self.weights * (self.n / total)

    def subset(self, index) -> "PanelDataset":
        w = None if self.weights is None else self.weights[index]
        return PanelDataset(self.states[index], self.z[index], self.d[index], self.y[index], w)

    def equals(self, other: "PanelDataset") -> bool:
        """Bit-exact value equality (weights included)."""
        if (self.weights is None) != (other.weights is None):
            return False
        same = (
            self.states.shape == other.states.shape
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.d, other.d)
            and np.array_equal(self.y, other.y)
        )
        if same and self.weights is not None:
            same = np.array_equal(self.weights, other.weights)
        return bool(same)

    def __repr__(self):
        w = ", weighted" if self.weights is not None else ""
        return f"PanelDataset(n={self.n}, T={self.T}, p={self.p}{w})"


# ---------------------------------------------------------------------------
# history features


def feature_length(t: int, p: int) -> int:
    return (t - 1) * 2 + t * p


def history_features(tr: Trajectory, t: int) -> HistoryFeatures:
    """Flatten ``H_t = (z_<t, d_<t, s_<t)`` in z-block, d-block, s-block order."""
    T = len(tr.z)
    if not 1 <= t <= T:
        raise ValueError(f"period {t} outside 1..{T}")
    parts = [
        np.asarray(tr.z[: t - 1], dtype=float),
        np.asarray(tr.d[: t - 1], dtype=float),
        np.concatenate([np.asarray(tr.states[s], dtype=float) for s in range(t)]),
    ]
    return HistoryFeatures(t, np.concatenate(parts))


def history_matrix(ds: PanelDataset, t: int) -> np.ndarray:
    """Row-wise :func:`history_features` for a whole panel, shape (n, feature_length)."""
    if not 1 <= t <= ds.T:
        raise ValueError(f"period {t} outside 1..{ds.T}")
    n = ds.n
    return np.concatenate(
        [
            ds.z[:, : t - 1].astype(float),
            ds.d[:, : t - 1].astype(float),
            ds.states[:, :t, :].reshape(n, t * ds.p),
        ],
        axis=1,
    )


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    """Row indices violating each rule; empty lists mean the rule holds."""

    n_rows: int
    violations: dict[str, list[int]] = field(default_factory=dict)

    @property
    def counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.violations.items()}

    @property
    def ok(self) -> bool:
        return all(not v for v in self.violations.values())

    def first(self, rule: str) -> int | None:
        rows = self.violations.get(rule, [])
        return rows[0] if rows else None

    def summary(self) -> str:
        bad = {k: c for k, c in self.counts.items() if c}
        if not bad:
            return f"{self.n_rows} rows, no violations"
        return f"{self.n_rows} rows, violations: " + ", ".join(f"{k}={c}" for k, c in bad.items())


SHAPE_RULES = ("state_dim", "length", "binary", "nonfinite")


def _row_shape_problems(tr: Trajectory, T: int, p: int) -> list[str]:
    problems = []
    dims = {len(s) for s in tr.states}
    if len(dims) != 1 or dims != {p} or p < 1:
        problems.append("state_dim")
    if len(tr.z) != T or len(tr.d) != T or len(tr.states) != T or T < 1:
        problems.append("length")
    if any(v not in (0, 1) for v in list(tr.z) + list(tr.d)):
        problems.append("binary")
    values = [float(tr.y)] + [float(x) for s in tr.states for x in s]
    if not all(math.isfinite(v) for v in values):
        problems.append("nonfinite")
    return problems


def staggered_violations(ds: PanelDataset) -> np.ndarray:
    """Rows with ``D_1=1`` and some later ``Z_t=1, D_t=0``."""
    if ds.T < 2:
        return np.zeros(0, dtype=int)
    bad = (ds.d[:, :1] == 1) & (ds.z[:, 1:] == 1) & (ds.d[:, 1:] == 0)
    return np.flatnonzero(bad.any(axis=1))


def validate_dataset(
    ds: PanelDataset | Sequence[Trajectory],
    require_one_sided: bool = False,
    require_staggered: bool = False,
) -> ValidationReport:
    """Report rows that break shape rules and, optionally, one-sided or staggered compliance."""
    if isinstance(ds, PanelDataset):
        # array construction already enforces the shape rules
        report = ValidationReport(ds.n, {k: [] for k in SHAPE_RULES})
        if require_one_sided:
            report.violations["one_sided"] = np.flatnonzero((ds.d > ds.z).any(axis=1)).tolist()
        if require_staggered:
            report.violations["staggered"] = staggered_violations(ds).tolist()
        return report

    rows = list(ds)
    if not rows:
        raise DataValidationError("empty input")
    T = len(rows[0].z)
    p = len(rows[0].states[0]) if rows[0].states else 0
    report = ValidationReport(len(rows), {k: [] for k in SHAPE_RULES})
    if require_one_sided:
        report.violations["one_sided"] = []
    if require_staggered:
        report.violations["staggered"] = []
    for i, tr in enumerate(rows):
        for rule in _row_shape_problems(tr, T, p):
            report.violations[rule].append(i)
        if require_one_sided and any(int(dt) > int(zt) for zt, dt in zip(tr.z, tr.d)):
            report.violations["one_sided"].append(i)
        if require_staggered and len(tr.d) > 1 and tr.d[0] == 1:
            if any(zt == 1 and dt == 0 for zt, dt in zip(tr.z[1:], tr.d[1:])):
                report.violations["staggered"].append(i)
    return report


# ---------------------------------------------------------------------------
# CSV I/O


def panel_header(T: int, p: int) -> list[str]:
    cols = [f"s0_{j}" for j in range(p)]
    for t in range(1, T):
        cols += [f"z{t}", f"d{t}"] + [f"s{t}_{j}" for j in range(p)]
    cols += [f"z{T}", f"d{T}", "y"]
    return cols


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_panel(ds: PanelDataset, path) -> None:
    T, p = ds.T, ds.p
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(panel_header(T, p))
        for i in range(ds.n):
            row = [_fmt(v) for v in ds.states[i, 0]]
            for t in range(1, T):
                row += [str(int(ds.z[i, t - 1])), str(int(ds.d[i, t - 1]))]
                row += [_fmt(v) for v in ds.states[i, t]]
            row += [str(int(ds.z[i, T - 1])), str(int(ds.d[i, T - 1])), _fmt(ds.y[i])]
            w.writerow(row)


def _infer_shape(header: list[str]) -> tuple[int, int]:
    p = sum(1 for c in header if c.startswith("s0_"))
    z_cols = [c for c in header if c.startswith("z") and c[1:].isdigit()]
    d_cols = [c for c in header if c.startswith("d") and c[1:].isdigit()]
    T = max([int(c[1:]) for c in z_cols + d_cols], default=0)
    return T, p


def _parse_bit(text: str, row: int, column: str) -> int:
    kind = "treatment" if column.startswith("d") else "encouragement"
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"non-binary {kind}", row, column) from None
    if v not in (0.0, 1.0):
        raise ParseError(f"non-binary {kind}", row, column)
    return int(v)


def _parse_real(text: str, row: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"unparseable number {text!r}", row, column) from None
    if not math.isfinite(v):
        raise ParseError("non-finite value", row, column)
    return v


def read_panel(path) -> PanelDataset:
    """Read the panel CSV schema; errors name the offending row (1-based data row) and column."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty input") from None
        T, p = _infer_shape(header)
        if T < 1 or p < 1:
            raise ParseError("header must contain s0_* state columns and z/d columns")
        expected = panel_header(T, p)
        missing = [c for c in expected if c not in header]
        if missing:
            raise ParseError("missing column", column=missing[0])
        extra = [c for c in header if c not in expected]
        if extra:
            raise ParseError("unexpected column", column=extra[0])
        pos = {c: header.index(c) for c in expected}

        states, zs, ds_, ys = [], [], [], []
        for r, raw in enumerate(reader, start=1):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(raw)}", r)
            st = np.empty((T, p))
            zr = np.empty(T, dtype=np.int8)
            dr = np.empty(T, dtype=np.int8)
            for t in range(T):
                for j in range(p):
                    c = f"s{t}_{j}"
                    st[t, j] = _parse_real(raw[pos[c]], r, c)
            for t in range(1, T + 1):
                zr[t - 1] = _parse_bit(raw[pos[f"z{t}"]], r, f"z{t}")
                dr[t - 1] = _parse_bit(raw[pos[f"d{t}"]], r, f"d{t}")
            states.append(st)
            zs.append(zr)
            ds_.append(dr)
            ys.append(_parse_real(raw[pos["y"]], r, "y"))
    if not states:
        raise ParseError("empty input")
    return PanelDataset(np.array(states), np.array(zs), np.array(ds_), np.array(ys))
