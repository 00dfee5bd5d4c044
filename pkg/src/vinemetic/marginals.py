"""Semiparametric transformation models for the marginal event times.

The conditional survival function is ``S(t | Z) = exp{-G(Lambda(t) e^{beta'L})}``
where ``Lambda`` is a nondecreasing step function that jumps only at observed
event times and ``G`` is a known transformation (``x`` for proportional
hazards, ``log(1 + x)`` for proportional odds). Covariates are time-constant.

The module also holds the observed-data container and its CSV format.
"""

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from vinemetic.copulas import CLIP_EPS


class TransformationG(str, Enum):
    """Transformation ``G`` of the cumulative hazard."""

    PH = "ph"
    PO = "po"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown transformation {value!r}; expected 'ph' or 'po'") from None

    def G(self, x):
        x = np.asarray(x, dtype=float)
        return x if self is TransformationG.PH else np.log1p(x)

    def log_Gdot(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x) if self is TransformationG.PH else -np.log1p(x)

    def dlog_Gdot(self, x):
        """Derivative of ``log G'(x)``."""
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x) if self is TransformationG.PH else -1.0 / (1.0 + x)

    def Gdot(self, x):
        return np.exp(self.log_Gdot(x))


@dataclass(frozen=True)
class MarginalModel:
    """Transformation model with a step cumulative baseline.

    Attributes
    ----------
    beta : ndarray
        Regression coefficients for the covariates ``L``.
    jump_times : ndarray
        Strictly increasing jump locations of the baseline.
    log_jumps : ndarray
        Log of the jump sizes, one per jump time.
    g : TransformationG
        Transformation of the cumulative hazard.
    """

    beta: np.ndarray
    jump_times: np.ndarray
    log_jumps: np.ndarray
    g: TransformationG = TransformationG.PH

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        times = np.atleast_1d(np.asarray(self.jump_times, dtype=float))
        logj = np.atleast_1d(np.asarray(self.log_jumps, dtype=float))
        if times.shape != logj.shape:
            raise ValueError("jump_times and log_jumps must have equal length")
        if times.size and (np.any(np.diff(times) <= 0) or times[0] <= 0):
            raise ValueError("jump_times must be positive and strictly increasing")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "log_jumps", logj)
        object.__setattr__(self, "g", TransformationG.parse(self.g))

    @property
    def n_jumps(self):
        return self.jump_times.size

    def cumulative(self):
        """Baseline ``Lambda`` at each jump time."""
        return np.cumsum(np.exp(self.log_jumps))

    def to_dict(self):
        return {
            "beta": self.beta.tolist(),
            "jump_times": self.jump_times.tolist(),
            "log_jumps": self.log_jumps.tolist(),
            "g": self.g.value,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["beta"], dtype=float),
            np.asarray(d["jump_times"], dtype=float),
            np.asarray(d["log_jumps"], dtype=float),
            TransformationG.parse(d.get("g", "ph")),
        )

    @classmethod
    def initial(cls, times, events, n_beta, g="ph"):
        """Start values: zero ``beta`` and Nelson-Aalen jumps.

        Tied event times share one jump.
        """
        times = np.asarray(times, dtype=float)
        events = np.asarray(events).astype(bool)
        jt = np.unique(times[events])
        if jt.size == 0:
            raise ValueError("no observed events; the baseline has no jumps")
        deaths = np.bincount(np.searchsorted(jt, times[events]), minlength=jt.size)
        at_risk = times.size - np.searchsorted(np.sort(times), jt, side="left")
        return cls(np.zeros(n_beta), jt, np.log(deaths / at_risk), g)


def cum_baseline(m, t):
    """Right-continuous step baseline ``Lambda(t)``."""
    t = np.asarray(t, dtype=float)
    cum = np.concatenate([[0.0], m.cumulative()])
    return cum[np.searchsorted(m.jump_times, t, side="right")]


def linear_predictor(m, z_l):
    z_l = np.asarray(z_l, dtype=float)
    if z_l.shape[-1] != m.beta.size:
        raise ValueError(
            f"covariate dimension {z_l.shape[-1]} does not match beta dimension {m.beta.size}"
        )
    return z_l @ m.beta


def marginal_survival(m, t, z_l):
    """Conditional survival ``S(t | Z)``."""
    x = cum_baseline(m, t) * np.exp(linear_predictor(m, z_l))
    return np.exp(-m.g.G(x))


def marginal_log_density_at_jump(m, l, z_l):
    """Log of the discrete density contribution at jump ``l``.

    Equals ``log S(t_l) + log G'(x) + beta'L + log dLambda_l`` with
    ``x = Lambda(t_l) e^{beta'L}``.
    """
    l = np.asarray(l)
    eta = linear_predictor(m, z_l)
    x = m.cumulative()[l] * np.exp(eta)
    return -m.g.G(x) + m.g.log_Gdot(x) + eta + m.log_jumps[l]


def marginal_density_at_jump(m, l, z_l):
    return np.exp(marginal_log_density_at_jump(m, l, z_l))


def jump_index(m, t):
    """Index of the jump located exactly at each ``t``; raises if absent."""
    t = np.asarray(t, dtype=float)
    idx = np.searchsorted(m.jump_times, t)
    ok = (idx < m.n_jumps) & (m.jump_times[np.minimum(idx, m.n_jumps - 1)] == t)
    if not np.all(ok):
        bad = np.atleast_1d(t)[~np.atleast_1d(ok)]
        raise ValueError(f"observed event times without a jump parameter: {bad[:5]}")
    return idx


def clip_prob(u):
    return np.clip(u, CLIP_EPS, 1.0 - CLIP_EPS)


# ---------------------------------------------------------------------------
# data


@dataclass
class MeticDataset:
    """Observed multivariate event-time data.

    Column ``J - 1`` of ``X`` and ``delta`` is the terminal event; the other
    columns are nonterminal events censored by it.

    Attributes
    ----------
    X : ndarray, shape (n, J)
        Observed times.
    delta : ndarray, shape (n, J)
        Event indicators.
    Z : ndarray, shape (n, p)
        Baseline covariates.
    l_cols : list of int, optional
        Columns of ``Z`` used in the marginal models; all by default.
    w_cols : list of int, optional
        Columns of ``Z`` used in the copula links; all by default.
    w_intercept : bool
        Prepend a column of ones to the copula design.
    """

    X: np.ndarray
    delta: np.ndarray
    Z: np.ndarray
    l_cols: list = None
    w_cols: list = None
    w_intercept: bool = True
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.delta = np.asarray(self.delta).astype(int)
        Z = np.asarray(self.Z, dtype=float)
        self.Z = Z.reshape(len(self.X), -1)
        if self.l_cols is None:
            self.l_cols = list(range(self.Z.shape[1]))
        if self.w_cols is None:
            self.w_cols = list(range(self.Z.shape[1]))
        if self.validate:
            problems = self.check()
            if problems:
                raise ValueError("invalid dataset: " + "; ".join(problems))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def J(self):
        return self.X.shape[1]

    @property
    def L(self):
        return self.Z[:, self.l_cols]

    @property
    def W(self):
        w = self.Z[:, self.w_cols]
        if self.w_intercept:
            w = np.column_stack([np.ones(self.n), w])
        return w

    def check(self):
        """List of violated data invariants (empty when valid)."""
        out = []
        if self.X.ndim != 2 or self.X.shape != self.delta.shape:
            return ["X and delta must be n x J arrays of equal shape"]
        if self.J < 2:
            out.append("need at least one nonterminal and one terminal event")
        if not np.all(np.isfinite(self.X)) or np.any(self.X <= 0):
            out.append("all times must be finite and positive")
        if not np.all(np.isin(self.delta, (0, 1))):
            out.append("event indicators must be 0 or 1")
        if not np.all(np.isfinite(self.Z)):
            out.append("covariates must be finite")
        rows = np.nonzero(np.any(self.X[:, :-1] > self.X[:, -1:], axis=1))[0]
        if rows.size:
            out.append(f"nonterminal time exceeds terminal time in rows {rows[:5].tolist()}")
        return out

    def subset(self, idx):
        """Dataset restricted to (or resampled by) row indices ``idx``."""
        return MeticDataset(
            self.X[idx], self.delta[idx], self.Z[idx], list(self.l_cols),
            list(self.w_cols), self.w_intercept, validate=False,
        )

    def censoring_rates(self):
        return 1.0 - self.delta.mean(axis=0)


def pseudo_observations(models, data):
    """Matrix of clipped pseudo-observations ``U[i, j] = S_j(X_ij | Z_i)``."""
    if len(models) != data.J:
        raise ValueError(f"need {data.J} marginal models, got {len(models)}")
    L = data.L
    cols = [marginal_survival(m, data.X[:, j], L) for j, m in enumerate(models)]
    return clip_prob(np.column_stack(cols))


def write_csv(data, path):
    """Write ``X1,D1,...,XJ,DJ,Z1,...,Zp`` with a header row."""
    header = []
    for j in range(data.J):
        header += [f"X{j + 1}", f"D{j + 1}"]
    header += [f"Z{k + 1}" for k in range(data.Z.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = []
            for j in range(data.J):
                row += [repr(float(data.X[i, j])), str(int(data.delta[i, j]))]
            row += [repr(float(z)) for z in data.Z[i]]
            writer.writerow(row)


def read_csv(path, **kwargs):
    """Read the dataset CSV; extra keyword arguments go to ``MeticDataset``.

    Raises
    ------
    ValueError
        On a malformed header or row; the message names the line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        x_cols = [h for h in header if h.startswith("X")]
        J = len(x_cols)
        expected = []
        for j in range(J):
            expected += [f"X{j + 1}", f"D{j + 1}"]
        if J < 2 or header[: 2 * J] != expected:
            raise ValueError(
                f"{path}: line 1: header must start with X1,D1,...,XJ,DJ, got {header}"
            )
        z_cols = header[2 * J:]
        if z_cols != [f"Z{k + 1}" for k in range(len(z_cols))]:
            raise ValueError(f"{path}: line 1: covariate columns must be Z1..Zp, got {z_cols}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    arr = np.asarray(rows, dtype=float).reshape(-1, len(header))
    X = arr[:, 0 : 2 * J : 2]
    D = arr[:, 1 : 2 * J : 2]
    if not np.all(np.isin(D, (0.0, 1.0))):
        bad = int(np.nonzero(~np.all(np.isin(D, (0.0, 1.0)), axis=1))[0][0]) + 2
        raise ValueError(f"{path}: line {bad}: event indicators must be 0 or 1")
    return MeticDataset(X, D.astype(int), arr[:, 2 * J:], **kwargs)
