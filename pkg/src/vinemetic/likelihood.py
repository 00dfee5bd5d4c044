"""Log-likelihood contributions for the stage-wise estimator.

Three kinds of terms are provided:

* the terminal-event likelihood, which only involves the terminal margin;
* the pairwise likelihood of a nonterminal margin and its tree-1 copula with
  the terminal event, with the terminal pseudo-observations held fixed;
* the likelihood of a higher-tree edge, which integrates the sub-vine density
  over censored coordinates.

Parameter vectors for a margin are ``concat(beta, log_jumps)``. Gradients are
analytic in the margin parameters; derivatives of copula terms with respect
to their arguments are taken by per-subject central differences.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit, logit, logsumexp
from scipy.stats import qmc

from vinemetic.copulas import (
    CLIP_EPS,
    Family,
    NumericError,
    copula_log_cdf,
    copula_log_density,
    link,
    log_h_function,
)
from vinemetic.marginals import MarginalModel, TransformationG, clip_prob, pseudo_observations
from vinemetic.vine import Edge, VineEvaluator, normalize_specs

# relative steps of the central differences for copula-term derivatives
_STEP_U = 1e-5
_STEP_X = 1e-5
_GRADING = np.array([1e-3, 1e-2, 1e-1])


@dataclass
class IntegrationPolicy:
    """Numerical integration over censored pseudo-observation coordinates.

    Attributes
    ----------
    method : str
        ``"gauss_legendre"`` uses tensor Gauss-Legendre up to
        ``dim_threshold`` dimensions and scrambled Sobol points above;
        ``"quasi_mc"`` always uses Sobol points.
    nodes : int
        Gauss-Legendre nodes per dimension and panel.
    mc_samples : int
        Sobol points per subject (rounded up to a power of two).
    dim_threshold : int
        Largest dimension integrated by tensor quadrature.
    seed : int
        Base seed for the scrambled Sobol points.
    panels : bool
        Split each dimension at the subject's observed pseudo-observations,
        where the integrand of a strongly dependent copula peaks.
    """

    method: str = "gauss_legendre"
    nodes: int = 30
    mc_samples: int = 4096
    dim_threshold: int = 3
    seed: int = 0
    panels: bool = True

    def __post_init__(self):
        if self.method not in ("gauss_legendre", "quasi_mc"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if self.nodes < 5:
            raise ValueError("need at least 5 quadrature nodes")
        if self.mc_samples < 512:
            raise ValueError("need at least 512 quasi-Monte Carlo samples")

    def to_dict(self):
        return asdict(self)


def _gl_panels(upper, breaks, m):
    """Composite Gauss-Legendre nodes on [0, upper] split at ``breaks``.

    Returns nodes and log-weights of shape (n, n_panels * m).
    """
    x, w = np.polynomial.legendre.leggauss(m)
    n = upper.shape[0]
    if breaks is None or breaks.shape[1] == 0:
        edges = np.column_stack([np.zeros(n), upper])
    else:
        inner = np.clip(breaks, 0.0, upper[:, None])
        # geometric grading toward 0, where h-functions lose smoothness
        graded = inner.min(axis=1, initial=1.0, where=inner > 0)[:, None] * _GRADING
        graded = np.minimum(graded, upper[:, None])
        edges = np.sort(np.column_stack([np.zeros(n), graded, inner, upper]), axis=1)
    lo, hi = edges[:, :-1], edges[:, 1:]
    half = 0.5 * (hi - lo)
    nodes = (lo + half)[:, :, None] + half[:, :, None] * x
    with np.errstate(divide="ignore"):
        logw = np.log(half)[:, :, None] + np.log(w)
    return nodes.reshape(n, -1), logw.reshape(n, -1)


def quadrature_rule(upper, policy, breaks=None, subject_ids=None):
    """Nodes and log-weights for integrating over boxes ``prod_d [0, upper_d]``.

    Parameters
    ----------
    upper : ndarray, shape (n, d)
        Upper limits per subject and dimension.
    policy : IntegrationPolicy
    breaks : list of ndarray, optional
        Per-dimension panel breakpoints, each of shape (n, b).
    subject_ids : ndarray, optional
        Subject indices used to seed the Sobol scrambling.

    Returns
    -------
    nodes : ndarray, shape (n, M, d)
    logw : ndarray, shape (n, M)
    """
    upper = np.asarray(upper, dtype=float)
    n, d = upper.shape
    if d == 0:
        return np.zeros((n, 1, 0)), np.zeros((n, 1))
    if policy.method == "gauss_legendre" and d <= policy.dim_threshold:
        per_dim = []
        for k in range(d):
            br = breaks[k] if (breaks is not None and policy.panels) else None
            per_dim.append(_gl_panels(upper[:, k], br, policy.nodes))
        sizes = [nd.shape[1] for nd, _ in per_dim]
        grids = np.meshgrid(*[np.arange(s) for s in sizes], indexing="ij")
        idx = [g.ravel() for g in grids]
        nodes = np.stack([per_dim[k][0][:, idx[k]] for k in range(d)], axis=-1)
        logw = sum(per_dim[k][1][:, idx[k]] for k in range(d))
        return nodes, logw
    if subject_ids is None:
        subject_ids = np.arange(n)
    m_pow = int(np.ceil(np.log2(policy.mc_samples)))
    nodes = np.empty((n, 2 ** m_pow, d))
    for r, sid in enumerate(subject_ids):
        seq = np.random.SeedSequence([policy.seed, int(sid)])
        sob = qmc.Sobol(d, scramble=True, seed=np.random.default_rng(seq))
        nodes[r] = sob.random_base2(m_pow) * upper[r]
    logw = np.broadcast_to(
        np.sum(np.log(upper), axis=1)[:, None] - m_pow * np.log(2.0), (n, 2 ** m_pow)
    ).copy()
    return nodes, logw


def integrate_censored(log_density, upper, policy=None, breaks=None, subject_ids=None):
    """Log of ``int_box exp(log_density(u)) du`` for each subject.

    ``log_density`` receives nodes of shape (n, M, d) and returns (n, M).
    """
    policy = policy or IntegrationPolicy()
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    nodes, logw = quadrature_rule(upper, policy, breaks, subject_ids)
    vals = log_density(nodes)
    if nodes.shape[2] == 0:
        return vals[:, 0]
    keep = np.isfinite(vals)
    if not np.all(np.any(keep, axis=1)):
        bad = np.nonzero(~np.any(keep, axis=1))[0]
        raise NumericError(f"integrand non-finite at every node for subjects {bad[:5].tolist()}")
    return logsumexp(np.where(keep, vals + logw, -np.inf), axis=1)


# ---------------------------------------------------------------------------
# margins


class MarginTerm:
    """Precomputed index structure for one margin's parameters on one sample.

    Parameters
    ----------
    times, events : ndarray
        Observed times and event indicators.
    L : ndarray, shape (n, d_L)
        Marginal covariates.
    jump_times : ndarray
        Baseline jump locations; must contain every observed event time.
    g : TransformationG
    """

    def __init__(self, times, events, L, jump_times, g="ph"):
        self.times = np.asarray(times, dtype=float)
        self.events = np.asarray(events).astype(bool)
        self.L = np.asarray(L, dtype=float).reshape(self.times.size, -1)
        self.jump_times = np.asarray(jump_times, dtype=float)
        self.g = TransformationG.parse(g)
        self.n = self.times.size
        self.d_beta = self.L.shape[1]
        self.kappa = self.jump_times.size
        self.k = np.searchsorted(self.jump_times, self.times, side="right")
        self.event_idx = self.k - 1
        ev_times = self.times[self.events]
        ev_idx = self.event_idx[self.events]
        if np.any(ev_idx < 0) or np.any(self.jump_times[np.maximum(ev_idx, 0)] != ev_times):
            raise ValueError("observed event time without a jump parameter")
        self.n_events_at = np.bincount(ev_idx, minlength=self.kappa).astype(float)

    @property
    def n_params(self):
        return self.d_beta + self.kappa

    def split(self, params):
        params = np.asarray(params, dtype=float)
        return params[: self.d_beta], params[self.d_beta : self.d_beta + self.kappa]

    def model(self, params):
        beta, logj = self.split(params)
        return MarginalModel(beta, self.jump_times, logj, self.g)

    def params_of(self, model):
        if model.jump_times.size != self.kappa or np.any(model.jump_times != self.jump_times):
            raise ValueError("model jump times do not match the data's event times")
        return np.concatenate([model.beta, model.log_jumps])

    def evaluate(self, params):
        """Linear predictor, transformed hazard and survival at the observed times."""
        beta, logj = self.split(params)
        eta = self.L @ beta
        cum = np.concatenate([[0.0], np.cumsum(np.exp(logj))])
        x = cum[self.k] * np.exp(eta)
        return eta, x, np.exp(-self.g.G(x)), logj

    def log_density_part(self, params):
        """``Delta (log dLambda + eta + log G'(x) - G(x))`` per subject."""
        eta, x, _, logj = self.evaluate(params)
        jumps = logj[np.maximum(self.event_idx, 0)]
        return np.where(self.events, jumps + eta + self.g.log_Gdot(x) - self.g.G(x), 0.0)

    def chain(self, params, dl_dx, direct_event=True, per_subject=False):
        """Gradient of ``sum_i [Delta_i (a_{e_i} + eta_i) + A_i(x_i)]``.

        ``dl_dx`` holds ``A_i'(x_i)``. Returns the summed gradient and, when
        ``per_subject``, the (n, n_params) score matrix.
        """
        beta, logj = self.split(params)
        eta, x, _, _ = self.evaluate(params)
        ev = self.events.astype(float) if direct_event else np.zeros(self.n)
        coef_b = ev + dl_dx * x
        g_beta = self.L.T @ coef_b
        r = dl_dx * np.exp(eta)
        # sum over subjects with k_i > l of r_i, for every jump l
        acc = np.bincount(self.k, weights=r, minlength=self.kappa + 1)[1:]
        tail = np.cumsum(acc[::-1])[::-1]
        g_a = np.exp(logj) * tail
        if direct_event:
            g_a = g_a + self.n_events_at
        grad = np.concatenate([g_beta, g_a])
        if not per_subject:
            return grad, None
        scores = np.zeros((self.n, self.n_params))
        scores[:, : self.d_beta] = coef_b[:, None] * self.L
        mask = np.arange(self.kappa)[None, :] < self.k[:, None]
        scores[:, self.d_beta :] = mask * (r[:, None] * np.exp(logj)[None, :])
        if direct_event:
            rows = np.nonzero(self.events)[0]
            scores[rows, self.d_beta + self.event_idx[rows]] += 1.0
        return grad, scores


def loglik_terminal(term, params, grad=False, per_subject=False):
    """Terminal-event log-likelihood.

    ``sum_i [-G(x_i) + Delta_i (log dLambda(X_i) + log G'(x_i) + eta_i)]`` with
    ``x_i = Lambda(X_i) e^{eta_i}``.

    Parameters
    ----------
    term : MarginTerm
        Terminal-event data and jump layout.
    params : ndarray
        ``concat(beta, log_jumps)``.
    grad : bool
        Also return the gradient.
    per_subject : bool
        Return per-subject contributions (and scores) instead of sums.
    """
    eta, x, _, logj = term.evaluate(params)
    g = term.g
    jumps = logj[np.maximum(term.event_idx, 0)]
    contrib = -g.G(x) + np.where(term.events, jumps + g.log_Gdot(x) + eta, 0.0)
    value = contrib if per_subject else contrib.sum()
    if not grad:
        return value
    dl_dx = -g.Gdot(x) + term.events * g.dlog_Gdot(x)
    gvec, scores = term.chain(params, dl_dx, per_subject=per_subject)
    return value, (scores if per_subject else gvec)


# ---------------------------------------------------------------------------
# pairwise (tree-1) terms


def pair_copula_term(family, uj, uJ, alpha, dj, dJ):
    """Copula part of the pairwise likelihood for each censoring pattern.

    ``(1, 1)``: log c; ``(1, 0)``: log dC/du_j; ``(0, 1)``: log dC/du_J;
    ``(0, 0)``: log C. All four are evaluated with the copula's own arguments
    ``(u_j, u_J)``.
    """
    uj, uJ, alpha, dj, dJ = np.broadcast_arrays(
        np.asarray(uj, dtype=float), np.asarray(uJ, dtype=float), np.asarray(alpha, dtype=float),
        np.asarray(dj).astype(bool), np.asarray(dJ).astype(bool),
    )
    out = np.empty(uj.shape)
    cases = (
        (dj & dJ, lambda s: copula_log_density(family, uj[s], uJ[s], alpha[s], validate=False)),
        (dj & ~dJ, lambda s: log_h_function(family, uJ[s], uj[s], alpha[s], validate=False)),
        (~dj & dJ, lambda s: log_h_function(family, uj[s], uJ[s], alpha[s], validate=False)),
        (~dj & ~dJ, lambda s: copula_log_cdf(family, uj[s], uJ[s], alpha[s], validate=False)),
    )
    for sel, fn in cases:
        if np.any(sel):
            out[sel] = fn(sel)
    return out


_CASE_NAMES = {(1, 1): "both observed", (1, 0): "terminal censored",
               (0, 1): "nonterminal censored", (0, 0): "both censored"}


def _raise_nonfinite(values, dj, dJ, what):
    bad = np.nonzero(~np.isfinite(values))[0]
    if bad.size:
        i = int(bad[0])
        case = _CASE_NAMES[(int(dj[i]), int(dJ[i]))]
        raise NumericError(f"non-finite {what} for subject {i} ({case})")


class PairTerm:
    """Pairwise likelihood of margin ``j`` and its copula with the terminal event.

    Parameters
    ----------
    margin : MarginTerm
        Data and jump layout of the nonterminal event ``j``.
    uJ : ndarray
        Clipped terminal pseudo-observations from the fitted terminal margin.
    dJ : ndarray
        Terminal event indicators.
    W : ndarray, shape (n, d_W)
        Copula covariates.
    family : Family
    """

    def __init__(self, margin, uJ, dJ, W, family):
        self.margin = margin
        self.uJ = np.asarray(uJ, dtype=float)
        self.dJ = np.asarray(dJ).astype(bool)
        self.W = np.asarray(W, dtype=float)
        self.family = Family.parse(family)

    @property
    def d_gamma(self):
        return self.W.shape[1]

    @property
    def n_params(self):
        return self.margin.n_params + self.d_gamma

    def split(self, params):
        k = self.margin.n_params
        return params[:k], params[k:]

    def _copula(self, uj, lin):
        alpha = link(self.family, lin)
        return pair_copula_term(self.family, uj, self.uJ, alpha, self.margin.events, self.dJ)

    def evaluate(self, theta, gamma, grad=False, per_subject=False):
        m = self.margin
        eta, x, s, _ = m.evaluate(theta)
        uj = clip_prob(s)
        lin = self.W @ gamma
        k_val = self._copula(uj, lin)
        _raise_nonfinite(k_val, m.events, self.dJ, "pairwise copula term")
        contrib = m.log_density_part(theta) + k_val
        value = contrib if per_subject else contrib.sum()
        if not grad:
            return value, None
        # derivative in logit(u_j) and in the link argument
        t = logit(uj)
        ht = _STEP_U * np.maximum(1.0, np.abs(t))
        dk_dt = (self._copula(expit(t + ht), lin) - self._copula(expit(t - ht), lin)) / (2 * ht)
        hx = _STEP_X * np.maximum(1.0, np.abs(lin))
        dk_dx = (self._copula(uj, lin + hx) - self._copula(uj, lin - hx)) / (2 * hx)
        gd = m.g.Gdot(x)
        inside = (s > CLIP_EPS) & (s < 1.0 - CLIP_EPS)
        # du/dx = -G'(x) u and d logit(u)/du = 1 / (u (1 - u))
        dk_du_x = np.where(inside, dk_dt * (-gd) / (1.0 - uj), 0.0)
        dl_dx = m.events * (-gd + m.g.dlog_Gdot(x)) + dk_du_x
        g_theta, sc_theta = m.chain(theta, dl_dx, per_subject=per_subject)
        if per_subject:
            scores = np.column_stack([sc_theta, dk_dx[:, None] * self.W])
            return value, scores
        return value, np.concatenate([g_theta, self.W.T @ dk_dx])


def loglik_pair(term, params, grad=False, per_subject=False):
    """Pairwise log-likelihood for ``params = concat(beta_j, log_jumps_j, gamma)``."""
    theta, gamma = term.split(np.asarray(params, dtype=float))
    value, g = term.evaluate(theta, gamma, grad, per_subject)
    return (value, g) if grad else value


def loglik_pair_pooled(terms, params, grad=False, per_subject=False):
    """Sum of pairwise log-likelihoods sharing one copula coefficient vector.

    ``params = concat(theta_1, ..., theta_m, gamma)``.
    """
    params = np.asarray(params, dtype=float)
    d_gamma = terms[0].d_gamma
    gamma = params[-d_gamma:]
    offs = np.cumsum([0] + [t.margin.n_params for t in terms])
    total = 0.0
    grads = []
    g_gamma = 0.0
    for t, lo, hi in zip(terms, offs[:-1], offs[1:]):
        value, g = t.evaluate(params[lo:hi], gamma, grad, per_subject)
        total = total + value
        if grad:
            k = t.margin.n_params
            grads.append(g[..., :k])
            g_gamma = g_gamma + g[..., k:]
    if not grad:
        return total
    return total, np.concatenate(grads + [g_gamma], axis=-1)


# ---------------------------------------------------------------------------
# higher-tree edges


class EdgeTerm:
    """Likelihood of one higher-tree edge ``e = (a, b | D)``.

    Censored conditioned variables are integrated exactly: integrating the
    sub-density over ``u_a`` in ``[0, U_a]`` replaces the edge density by
    ``h_e`` or ``C_e`` and removes the factors that involve ``a`` below ``e``.
    Censored variables in ``D`` are integrated numerically. Everything not
    depending on the edge's own coefficients is precomputed.

    Parameters
    ----------
    graph : VineGraph
    specs : dict
        Fitted ``CopulaSpec`` for every ancestor of ``edge``.
    edge : Edge
    family : Family
        Family of the edge being estimated.
    U : ndarray, shape (n, J)
        Clipped pseudo-observations (upper limits for censored entries).
    delta : ndarray, shape (n, J)
    W : ndarray, shape (n, d_W)
    policy : IntegrationPolicy
    """

    def __init__(self, graph, specs, edge, family, U, delta, W, policy=None):
        self.graph = graph
        self.edge = Edge.parse(edge)
        self.family = Family.parse(family)
        self.specs = normalize_specs(specs)
        self.U = np.asarray(U, dtype=float)
        self.delta = np.asarray(delta).astype(bool)
        self.W = np.asarray(W, dtype=float)
        self.policy = policy or IntegrationPolicy()
        self.n = self.U.shape[0]
        self._groups = self._precompute()

    @property
    def d_gamma(self):
        return self.W.shape[1]

    def _precompute(self):
        e = self.edge
        a, b = e.a, e.b
        given = list(e.given)
        closure = self.graph.closure(e)[:-1]
        patterns = self.delta[:, [a - 1, b - 1] + [d - 1 for d in given]]
        groups = []
        keys, inverse = np.unique(patterns, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).ravel()
        observed_nodes = sorted(e.nodes)
        for gi, key in enumerate(keys):
            rows = np.nonzero(inverse == gi)[0]
            da, db = bool(key[0]), bool(key[1])
            cens = [d for d, obs in zip(given, key[2:]) if not obs]
            keep = [f for f in closure
                    if not ((not da and a in f.nodes) or (not db and b in f.nodes))]
            upper = self.U[rows][:, [d - 1 for d in cens]]
            breaks = None
            if cens:
                # panel splits at every pseudo-observation of the node set
                bp = self.U[rows][:, [j - 1 for j in observed_nodes]]
                breaks = [bp for _ in cens]
            nodes, logw = quadrature_rule(upper, self.policy, breaks, subject_ids=rows)
            M = nodes.shape[1]
            flat = np.repeat(self.U[rows], M, axis=0)
            for k, d in enumerate(cens):
                flat[:, d - 1] = np.clip(nodes[:, :, k].ravel(), CLIP_EPS, 1.0 - CLIP_EPS)
            w_flat = np.repeat(self.W[rows], M, axis=0)
            ev = VineEvaluator(self.graph, self.specs, flat, w_flat)
            base = logw.ravel().copy()
            for f in keep:
                base += ev.edge_log_density(f)
            ua = ev.margin(e, a)
            ub = ev.margin(e, b)
            groups.append({
                "rows": rows, "M": M, "da": da, "db": db,
                "base": base.reshape(len(rows), M),
                "ua": ua.reshape(len(rows), M), "ub": ub.reshape(len(rows), M),
                "integrated": bool(cens),
            })
        return groups

    def _group_values(self, grp, lin_rows):
        M = grp["M"]
        alpha = np.repeat(link(self.family, lin_rows), M).reshape(-1, M)
        da = np.full(alpha.shape, grp["da"])
        db = np.full(alpha.shape, grp["db"])
        # same four censoring cases as the pairwise term
        k_val = pair_copula_term(self.family, grp["ua"], grp["ub"], alpha, da, db)
        total = grp["base"] + k_val
        if grp["integrated"]:
            return logsumexp(total, axis=1)
        return total[:, 0]

    def contributions(self, gamma):
        lin = self.W @ np.asarray(gamma, dtype=float)
        out = np.empty(self.n)
        for grp in self._groups:
            out[grp["rows"]] = self._group_values(grp, lin[grp["rows"]])
        bad = np.nonzero(~np.isfinite(out))[0]
        if bad.size:
            raise NumericError(f"non-finite edge {self.edge} contribution for subject {int(bad[0])}")
        return out

    def evaluate(self, gamma, grad=False, per_subject=False):
        contrib = self.contributions(gamma)
        value = contrib if per_subject else contrib.sum()
        if not grad:
            return value, None
        lin = self.W @ np.asarray(gamma, dtype=float)
        hx = _STEP_X * np.maximum(1.0, np.abs(lin))
        dk = np.empty(self.n)
        for grp in self._groups:
            r = grp["rows"]
            up = self._group_values(grp, lin[r] + hx[r])
            dn = self._group_values(grp, lin[r] - hx[r])
            dk[r] = (up - dn) / (2 * hx[r])
        scores = dk[:, None] * self.W
        return value, (scores if per_subject else scores.sum(axis=0))


def loglik_edge(term, gamma, grad=False, per_subject=False):
    """Edge log-likelihood ``sum_i log int exp(sub-log-density) du^c``.

    Includes the factors of the edge's ancestors (constants in ``gamma``), so
    that with no censoring it equals the sub-vine log density summed over
    subjects.
    """
    value, g = term.evaluate(gamma, grad, per_subject)
    return (value, g) if grad else value


def full_loglik(graph, specs, margins, data, policy=None, per_subject=False):
    """Full observed-data log-likelihood of a fitted model.

    ``sum_i [sum_j Delta_ij log f_j(X_ij) + log int c_[J](U^o, u^c) du^c]``.

    Parameters
    ----------
    graph : VineGraph
    specs : dict
        ``CopulaSpec`` for every edge.
    margins : list of MarginalModel
        One model per event, terminal last.
    data : MeticDataset
    policy : IntegrationPolicy, optional
    """
    L = data.L
    total = np.zeros(data.n)
    for j, m in enumerate(margins):
        mt = MarginTerm(data.X[:, j], data.delta[:, j], L, m.jump_times, m.g)
        total += mt.log_density_part(mt.params_of(m))
    U = pseudo_observations(margins, data)
    top = graph.trees[-1][0]
    specs = normalize_specs(specs)
    term = EdgeTerm(graph, specs, top, specs[top].family, U, data.delta, data.W, policy)
    total += term.contributions(specs[top].gamma)
    return total if per_subject else total.sum()


def censor_patterns(delta, index_set):
    """Observed and censored index sets per subject for ``index_set``."""
    delta = np.asarray(delta).astype(bool)
    out = []
    for row in delta:
        obs = [j for j in index_set if row[j - 1]]
        cens = [j for j in index_set if not row[j - 1]]
        out.append((obs, cens))
    return out
