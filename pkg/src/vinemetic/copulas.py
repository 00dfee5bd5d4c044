"""Bivariate copula families used as survival copulas.

Every family exposes the CDF, the density, the conditional distribution
``h(u1 | u2) = dC(u1, u2) / du2`` and its inverse in ``u1``, Kendall's tau and
the covariate link ``alpha = g(gamma' w)``. All functions broadcast over
``u1``, ``u2`` and ``alpha``, so a per-subject parameter vector is fine.

Densities and h-functions are evaluated in log space where that avoids
underflow. Callers are expected to clip pseudo-observations to
``[CLIP_EPS, 1 - CLIP_EPS]`` before calling the density or h-functions.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import integrate, optimize
from scipy.special import log_ndtr, ndtr, ndtri

from vinemetic._bvn import bvn_cdf

CLIP_EPS = 1e-10

# below this |alpha| Frank uses a first-order expansion around independence
_FRANK_SMALL = 1e-6
_NEWTON_MAXITER = 100


class CopulaDomainError(ValueError):
    """Copula parameter outside the family's domain."""


class BoundaryError(ValueError):
    """Probability argument on the boundary of the unit square."""


class NumericError(ArithmeticError):
    """Iterative solver did not reach the requested accuracy."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class Family(str, Enum):
    CLAYTON = "clayton"
    GUMBEL = "gumbel"
    FRANK = "frank"
    GAUSSIAN = "gaussian"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown copula family {value!r}; expected one of "
                f"{[f.value for f in cls]}"
            ) from None


def check_alpha(family, alpha):
    """Raise ``CopulaDomainError`` if any ``alpha`` is outside the domain."""
    family = Family.parse(family)
    a = np.asarray(alpha, dtype=float)
    if not np.all(np.isfinite(a)):
        raise CopulaDomainError(f"{family.value} copula parameter must be finite")
    if family is Family.CLAYTON:
        ok = np.all(a > 0)
        msg = "alpha > 0"
    elif family is Family.GUMBEL:
        # e^x + 1 can round to exactly 1 for very negative x
        ok = np.all(a >= 1)
        msg = "alpha >= 1"
    elif family is Family.FRANK:
        ok = True
        msg = ""
    else:
        ok = np.all(np.abs(a) < 1)
        msg = "-1 < alpha < 1"
    if not ok:
        raise CopulaDomainError(f"{family.value} copula requires {msg}, got {alpha!r}")


def _check_interior(name, *arrays):
    for x in arrays:
        x = np.asarray(x)
        if np.any((x <= 0) | (x >= 1)):
            raise BoundaryError(
                f"{name} needs arguments strictly inside (0, 1); clip to "
                f"[{CLIP_EPS}, 1 - {CLIP_EPS}] first"
            )


# ---------------------------------------------------------------------------
# Clayton: C = (u^-a + v^-a - 1)^(-1/a)


def _clayton_log_s(lu, lv, a):
    # log(u^-a + v^-a - 1) without overflow or cancellation
    p = -a * lu
    q = -a * lv
    m = np.maximum(p, q)
    small = m < 30.0
    ps = np.where(small, p, 0.0)
    qs = np.where(small, q, 0.0)
    near = np.log1p(np.expm1(ps) + np.expm1(qs))
    far = np.logaddexp(p, q) + np.log1p(-np.exp(-np.logaddexp(p, q)))
    return np.where(small, near, far)


def _clayton_log_cdf(u, v, a):
    return -_clayton_log_s(np.log(u), np.log(v), a) / a


def _clayton_log_pdf(u, v, a):
    lu, lv = np.log(u), np.log(v)
    ls = _clayton_log_s(lu, lv, a)
    return np.log1p(a) - (a + 1.0) * (lu + lv) - (1.0 / a + 2.0) * ls


def _clayton_log_h(u, v, a):
    lu, lv = np.log(u), np.log(v)
    ls = _clayton_log_s(lu, lv, a)
    return -(a + 1.0) * lv - (1.0 / a + 1.0) * ls


def _clayton_hinv(p, v, a):
    c = -a / (1.0 + a) * np.log(p)
    b = -a * np.log(v)
    with np.errstate(divide="ignore"):
        lt = b + np.log(np.expm1(c))
    return np.exp(-np.logaddexp(0.0, lt) / a)


def _clayton_tau(a):
    return a / (a + 2.0)


# ---------------------------------------------------------------------------
# Gumbel: C = exp(-A), A = ((-log u)^a + (-log v)^a)^(1/a)


def _gumbel_log_a(lx, ly, a):
    return np.logaddexp(a * lx, a * ly) / a


def _gumbel_log_cdf(u, v, a):
    lx, ly = np.log(-np.log(u)), np.log(-np.log(v))
    return -np.exp(_gumbel_log_a(lx, ly, a))


def _gumbel_log_pdf(u, v, a):
    x, y = -np.log(u), -np.log(v)
    lx, ly = np.log(x), np.log(y)
    la = _gumbel_log_a(lx, ly, a)
    big_a = np.exp(la)
    return (-big_a + x + y + (a - 1.0) * (lx + ly)
            + (1.0 - 2.0 * a) * la + np.log(big_a + a - 1.0))


def _gumbel_log_h(u, v, a):
    x, y = -np.log(u), -np.log(v)
    lx, ly = np.log(x), np.log(y)
    la = _gumbel_log_a(lx, ly, a)
    return -np.exp(la) + (1.0 - a) * la + (a - 1.0) * ly + y


def _gumbel_hinv(p, v, a):
    # With A = y e^d, h(u | v) = p reduces to
    #   psi(d) = y expm1(d) + (a - 1) d + log p = 0,
    # increasing and convex in d >= 0, so Newton from d = 0 is monotone after
    # the first step.
    p, v, a = np.broadcast_arrays(p, v, a)
    y = -np.log(v)
    lp = np.log(p)
    d = np.zeros_like(y)
    for _ in range(_NEWTON_MAXITER):
        psi = y * np.expm1(d) + (a - 1.0) * d + lp
        step = psi / (y * np.exp(d) + a - 1.0)
        d = np.maximum(d - step, 0.0)
        if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, d)):
            break
    psi = y * np.expm1(d) + (a - 1.0) * d + lp
    with np.errstate(divide="ignore"):
        lx = np.log(y) + d + np.log(-np.expm1(-a * d)) / a
    u = np.exp(-np.exp(lx))
    resid = np.abs(np.exp(_gumbel_log_h(np.clip(u, 1e-300, 1.0), v, a)) - p)
    bad = (resid > 1e-10) & (u > 0) & (u < 1)
    if np.any(bad):
        raise NumericError(
            "Gumbel h-inverse did not converge", residual=float(np.max(resid[bad]))
        )
    return u


def _gumbel_tau(a):
    return 1.0 - 1.0 / a


# ---------------------------------------------------------------------------
# Frank: C = -(1/a) log(1 + (e^-au - 1)(e^-av - 1) / (e^-a - 1))


def _frank_split(a):
    small = np.abs(a) < _FRANK_SMALL
    return small, np.where(small, 1.0, a), np.where(small, a, 0.0)


def _log_abs_expm1(x):
    # log|e^x - 1| for x != 0 without overflow
    xp = np.where(x > 0, x, 1.0)
    xn = np.where(x > 0, -1.0, x)
    return np.where(x > 0, xp + np.log(-np.expm1(-xp)), np.log(-np.expm1(xn)))


def _frank_log_denom(u, v, a):
    # log|(e^-a - 1) + (e^-au - 1)(e^-av - 1)|, written as a sum of two
    # terms of equal sign so nothing cancels
    return np.logaddexp(
        -a * u + _log_abs_expm1(-a * v), -a * v + _log_abs_expm1(-a * (1.0 - v))
    )


def _frank_log_cdf(u, v, a):
    small, s, t = _frank_split(a)
    ld = _log_abs_expm1(-s)
    ratio = np.expm1(-s * u) * np.expm1(-s * v) / np.expm1(-s)
    tiny = np.abs(ratio) < 0.5
    lg = np.where(tiny, np.log1p(np.where(tiny, ratio, 0.0)), _frank_log_denom(u, v, s) - ld)
    exact = np.log(-lg / s)
    approx = np.log(u * v) + np.log1p(0.5 * t * (1.0 - u) * (1.0 - v))
    return np.where(small, approx, exact)


def _frank_log_pdf(u, v, a):
    small, s, t = _frank_split(a)
    exact = (np.log(np.abs(s)) + _log_abs_expm1(-s) - s * (u + v)
             - 2.0 * _frank_log_denom(u, v, s))
    approx = np.log1p(0.5 * t * (1.0 - 2.0 * u) * (1.0 - 2.0 * v))
    return np.where(small, approx, exact)


def _frank_log_h(u, v, a):
    small, s, t = _frank_split(a)
    exact = _log_abs_expm1(-s * u) - s * v - _frank_log_denom(u, v, s)
    approx = np.log(u) + np.log1p(0.5 * t * (1.0 - u) * (1.0 - 2.0 * v))
    return np.where(small, approx, exact)


def _frank_hinv(p, v, a):
    small, s, t = _frank_split(a)
    ev = np.expm1(-s * v)
    d = np.expm1(-s)
    big = p * d / (np.exp(-s * v) - p * ev)
    exact = -np.log1p(big) / s
    approx = p - 0.5 * t * p * (1.0 - p) * (1.0 - 2.0 * v)
    return np.where(small, approx, exact)


def _debye1_integrand(t):
    return 1.0 if t == 0 else t / np.expm1(t)


def _frank_tau_scalar(a):
    if abs(a) < 1e-4:
        return a / 9.0
    integral, _ = integrate.quad(_debye1_integrand, 0.0, a, epsabs=0.0, epsrel=1e-12)
    debye = integral / a
    return 1.0 - 4.0 / a * (1.0 - debye)


def _frank_tau(a):
    return np.vectorize(_frank_tau_scalar, otypes=[float])(a)


# ---------------------------------------------------------------------------
# Gaussian


def _gauss_log_cdf(u, v, r):
    return np.log(bvn_cdf(ndtri(u), ndtri(v), r))


def _gauss_log_pdf(u, v, r):
    x, y = ndtri(u), ndtri(v)
    om = (1.0 - r) * (1.0 + r)
    return -0.5 * np.log(om) - (r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * om)


def _gauss_log_h(u, v, r):
    x, y = ndtri(u), ndtri(v)
    return log_ndtr((x - r * y) / np.sqrt((1.0 - r) * (1.0 + r)))


def _gauss_hinv(p, v, r):
    return ndtr(ndtri(p) * np.sqrt((1.0 - r) * (1.0 + r)) + r * ndtri(v))


def _gauss_tau(r):
    return 2.0 / np.pi * np.arcsin(r)


_IMPL = {
    Family.CLAYTON: (_clayton_log_cdf, _clayton_log_pdf, _clayton_log_h, _clayton_hinv, _clayton_tau),
    Family.GUMBEL: (_gumbel_log_cdf, _gumbel_log_pdf, _gumbel_log_h, _gumbel_hinv, _gumbel_tau),
    Family.FRANK: (_frank_log_cdf, _frank_log_pdf, _frank_log_h, _frank_hinv, _frank_tau),
    Family.GAUSSIAN: (_gauss_log_cdf, _gauss_log_pdf, _gauss_log_h, _gauss_hinv, _gauss_tau),
}


def _args(u1, u2, alpha):
    return np.broadcast_arrays(
        np.asarray(u1, dtype=float), np.asarray(u2, dtype=float), np.asarray(alpha, dtype=float)
    )


def copula_log_cdf(family, u1, u2, alpha, validate=True):
    """Log of the copula CDF; accepts the closed unit square."""
    family = Family.parse(family)
    if validate:
        check_alpha(family, alpha)
    u1, u2, alpha = _args(u1, u2, alpha)
    if np.any((u1 < 0) | (u1 > 1) | (u2 < 0) | (u2 > 1)):
        raise BoundaryError("copula CDF arguments must lie in [0, 1]")
    inner = (u1 > 0) & (u1 < 1) & (u2 > 0) & (u2 < 1)
    uc = np.where(inner, u1, 0.5)
    vc = np.where(inner, u2, 0.5)
    with np.errstate(divide="ignore"):
        out = _IMPL[family][0](uc, vc, alpha)
        out = np.where(u1 == 1, np.log(u2), out)
        out = np.where(u2 == 1, np.log(u1), out)
    out = np.where((u1 == 0) | (u2 == 0), -np.inf, out)
    return out[()] if out.ndim == 0 else out


def copula_cdf(family, u1, u2, alpha, validate=True):
    """Copula CDF ``C(u1, u2; alpha)``.

    Parameters
    ----------
    family : Family or str
        Copula family tag.
    u1, u2 : array_like
        Arguments in ``[0, 1]``; boundary values are handled exactly.
    alpha : array_like
        Copula parameter, broadcast against ``u1`` and ``u2``.
    validate : bool
        Check the parameter domain first.

    Returns
    -------
    ndarray
        ``C(u1, u2)``, inside ``[0, min(u1, u2)]``.
    """
    return np.exp(copula_log_cdf(family, u1, u2, alpha, validate))


def copula_log_density(family, u1, u2, alpha, validate=True):
    """Log copula density on the open unit square."""
    family = Family.parse(family)
    if validate:
        check_alpha(family, alpha)
        _check_interior("copula density", u1, u2)
    u1, u2, alpha = _args(u1, u2, alpha)
    out = _IMPL[family][1](u1, u2, alpha)
    if family is Family.GAUSSIAN:
        out = np.where(alpha == 0, 0.0, out)
    return out[()] if out.ndim == 0 else out


def copula_density(family, u1, u2, alpha, validate=True):
    """Copula density ``c(u1, u2; alpha) = d^2 C / du1 du2``."""
    return np.exp(copula_log_density(family, u1, u2, alpha, validate))


def log_h_function(family, u1, u2, alpha, validate=True):
    """Log of ``h(u1 | u2)``; ``u1`` may be 0 or 1, ``u2`` must be interior."""
    family = Family.parse(family)
    if validate:
        check_alpha(family, alpha)
        _check_interior("h-function conditioning argument", u2)
        if np.any((np.asarray(u1) < 0) | (np.asarray(u1) > 1)):
            raise BoundaryError("h-function argument u1 must lie in [0, 1]")
    u1, u2, alpha = _args(u1, u2, alpha)
    inner = (u1 > 0) & (u1 < 1)
    uc = np.where(inner, u1, 0.5)
    out = _IMPL[family][2](uc, u2, alpha)
    out = np.minimum(out, 0.0)
    out = np.where(u1 >= 1, 0.0, out)
    out = np.where(u1 <= 0, -np.inf, out)
    return out[()] if out.ndim == 0 else out


# parameter value at which each family is the independence copula
_INDEPENDENT = {Family.GUMBEL: 1.0, Family.FRANK: 0.0, Family.GAUSSIAN: 0.0}


def h_function(family, u1, u2, alpha, validate=True):
    """Conditional distribution ``h(u1 | u2) = dC(u1, u2) / du2``."""
    family = Family.parse(family)
    out = np.exp(log_h_function(family, u1, u2, alpha, validate))
    if family in _INDEPENDENT:
        # exact at independence rather than exp(log u1)
        u1b, _, ab = _args(u1, u2, alpha)
        out = np.where(ab == _INDEPENDENT[family], u1b, out)
        out = out[()] if out.ndim == 0 else out
    return out


def h_inverse(family, p, u2, alpha, validate=True):
    """Solve ``h(u1 | u2) = p`` for ``u1``.

    Clayton, Frank and Gaussian have closed forms. Gumbel is solved by a
    monotone Newton iteration and raises ``NumericError`` with the residual if
    the result misses ``p`` by more than 1e-10.
    """
    family = Family.parse(family)
    if validate:
        check_alpha(family, alpha)
        _check_interior("h-inverse", p, u2)
    p, u2, alpha = _args(p, u2, alpha)
    out = _IMPL[family][3](p, u2, alpha)
    out = np.clip(out, 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Kendall's tau


def tau_from_alpha(family, alpha):
    """Kendall's tau implied by the copula parameter."""
    family = Family.parse(family)
    check_alpha(family, alpha)
    out = _IMPL[family][4](np.asarray(alpha, dtype=float))
    return out[()] if np.ndim(out) == 0 else out


def _frank_alpha_scalar(tau):
    if tau == 0:
        return 0.0
    if abs(tau) < 1e-5:
        return 9.0 * tau
    sign = np.sign(tau)
    target = abs(tau)
    hi = 10.0
    while _frank_tau_scalar(hi) < target:
        hi *= 2.0
        if hi > 1e8:
            raise CopulaDomainError(f"Kendall's tau {tau} not attainable by Frank")
    root = optimize.brentq(
        lambda a: _frank_tau_scalar(a) - target, 1e-6, hi, xtol=1e-14, rtol=1e-14
    )
    return sign * root


def alpha_from_tau(family, tau):
    """Copula parameter with the given Kendall's tau."""
    family = Family.parse(family)
    t = np.asarray(tau, dtype=float)
    if np.any((t <= -1) | (t >= 1)):
        raise CopulaDomainError(f"Kendall's tau must lie in (-1, 1), got {tau!r}")
    if family is Family.CLAYTON:
        if np.any(t <= 0):
            raise CopulaDomainError("clayton copula only attains tau > 0")
        out = 2.0 * t / (1.0 - t)
    elif family is Family.GUMBEL:
        if np.any(t < 0):
            raise CopulaDomainError("gumbel copula only attains tau >= 0")
        out = 1.0 / (1.0 - t)
    elif family is Family.FRANK:
        out = np.vectorize(_frank_alpha_scalar, otypes=[float])(t)
    else:
        out = np.sin(0.5 * np.pi * t)
    return out[()] if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# links alpha = g(gamma' w)


def link(family, x):
    """Canonical link mapping a linear predictor into the parameter domain."""
    family = Family.parse(family)
    x = np.asarray(x, dtype=float)
    if family is Family.CLAYTON:
        out = np.exp(x)
    elif family is Family.GUMBEL:
        out = np.exp(x) + 1.0
    elif family is Family.FRANK:
        out = x.copy()
    else:
        out = np.tanh(x)
    return out[()] if out.ndim == 0 else out


def link_inverse(family, alpha):
    """Inverse of ``link``."""
    family = Family.parse(family)
    check_alpha(family, alpha)
    a = np.asarray(alpha, dtype=float)
    if family is Family.CLAYTON:
        out = np.log(a)
    elif family is Family.GUMBEL:
        with np.errstate(divide="ignore"):
            out = np.log(a - 1.0)
    elif family is Family.FRANK:
        out = a.copy()
    else:
        out = np.arctanh(a)
    return out[()] if out.ndim == 0 else out


@dataclass
class CopulaSpec:
    """A copula family together with covariate-link coefficients.

    Attributes
    ----------
    family : Family
        Copula family; the link is the family's canonical one.
    gamma : ndarray
        Coefficients of the linear predictor ``gamma' w``.
    """

    family: Family
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        self.family = Family.parse(self.family)
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))

    def alpha(self, w):
        return link_eval(self, w)

    def to_dict(self):
        return {"family": self.family.value, "gamma": self.gamma.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(Family.parse(d["family"]), np.asarray(d["gamma"], dtype=float))


def link_eval(spec, w):
    """Copula parameter ``g(gamma' w)`` for one covariate vector or a matrix of rows."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != spec.gamma.shape[0]:
        raise ValueError(
            f"covariate dimension {w.shape[-1]} does not match gamma dimension "
            f"{spec.gamma.shape[0]}"
        )
    return link(spec.family, w @ spec.gamma)
