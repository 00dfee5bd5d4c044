"""Stage-wise pseudo maximum likelihood estimation.

Stage 1 fits the terminal margin alone, then each nonterminal margin jointly
with its tree-1 copula while the terminal pseudo-observations stay fixed.
Later stages fit the higher-tree edges one at a time, holding every earlier
estimate fixed. Every stage reports a sandwich covariance. The pairwise
stage also carries the first-order effect of the estimated terminal margin
through its pseudo-observations; higher-tree stages are stage-local.
"""

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.stats import kendalltau

from vinemetic.copulas import (
    CLIP_EPS,
    CopulaSpec,
    Family,
    alpha_from_tau,
    link,
    link_inverse,
    tau_from_alpha,
)
from vinemetic.likelihood import (
    EdgeTerm,
    IntegrationPolicy,
    MarginTerm,
    PairTerm,
    loglik_pair_pooled,
    loglik_terminal,
)
from vinemetic.marginals import (
    MarginalModel,
    clip_prob,
    marginal_survival,
    pseudo_observations,
)
from vinemetic.simulation import sample_vine, stream
from vinemetic.vine import Edge, VineDependencyError, build_cvine, normalize_specs

logger = logging.getLogger(__name__)

INIT_TAU = 0.2


class FitError(RuntimeError):
    """A stage failed; ``partial`` holds the stages finished before it."""

    def __init__(self, message, stage=None, last_iterate=None, partial=None):
        super().__init__(message)
        self.stage = stage
        self.last_iterate = last_iterate
        self.partial = partial


class VarianceError(RuntimeError):
    """Too many bootstrap replicates failed."""


@dataclass
class FitConfig:
    """Optimizer and variance settings shared by all stages.

    Attributes
    ----------
    ftol : float
        Relative objective tolerance of L-BFGS-B.
    gtol : float
        Projected-gradient tolerance on the per-subject mean log-likelihood.
    maxiter : int
    policy : IntegrationPolicy
    bootstrap : int
        Bootstrap replicates when bootstrap variance is requested.
    seed : int
    pooled : list of list of int
        Groups of nonterminal events whose tree-1 copulas share one
        coefficient vector.
    variance : str
        ``"sandwich"``, ``"bootstrap"`` or ``"none"``.
    """

    ftol: float = 1e-12
    gtol: float = 1e-7
    maxiter: int = 5000
    policy: IntegrationPolicy = field(default_factory=IntegrationPolicy)
    bootstrap: int = 200
    seed: int = 0
    pooled: list = field(default_factory=list)
    variance: str = "sandwich"

    def __post_init__(self):
        if isinstance(self.policy, dict):
            self.policy = IntegrationPolicy(**self.policy)
        if self.variance not in ("sandwich", "bootstrap", "none"):
            raise ValueError(f"unknown variance method {self.variance!r}")
        if self.variance == "bootstrap" and self.bootstrap < 50:
            raise ValueError("bootstrap variance needs at least 50 replicates")

    def to_dict(self):
        d = asdict(self)
        d["policy"] = self.policy.to_dict()
        return d


@dataclass
class StageResult:
    """Estimates of one stage.

    ``names`` labels the entries of ``estimate``; ``cov`` is the covariance
    of the same vector, or None when not computed.
    """

    stage: int
    label: str
    names: list
    estimate: np.ndarray
    loglik: float
    cov: np.ndarray = None
    variance_method: str = "none"
    converged: bool = True
    n_iter: int = 0
    grad_norm: float = 0.0
    message: str = ""
    inputs: list = field(default_factory=list)
    # per-subject influence rows (n, p); their column sums approximate the
    # estimation error, used to propagate this stage into later ones
    influence: np.ndarray = field(default=None, repr=False)

    def se(self):
        if self.cov is None:
            return np.full(len(self.names), np.nan)
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def to_dict(self, include_jumps=False):
        se = self.se()
        keep = [k for k, n in enumerate(self.names) if include_jumps or not n.startswith("logjump")]
        params = [
            {"name": self.names[k], "estimate": float(self.estimate[k]), "se": float(se[k])}
            for k in keep
        ]
        cov = None if self.cov is None else self.cov[np.ix_(keep, keep)].tolist()
        return {
            "stage": self.stage, "label": self.label, "loglik": float(self.loglik),
            "variance_method": self.variance_method, "inputs": self.inputs,
            "convergence": {"converged": bool(self.converged), "iterations": int(self.n_iter),
                            "grad_norm": float(self.grad_norm), "message": self.message},
            "parameters": params,
            "covariance": cov,
        }


@dataclass
class FitResult:
    """Stage-wise fit of a full vine model."""

    margins: list
    specs: dict
    graph: object
    stages: list
    config: FitConfig = None

    def stage(self, label):
        for s in self.stages:
            if s.label == label:
                return s
        raise KeyError(label)

    def estimate(self, name):
        for s in self.stages:
            if name in s.names:
                k = s.names.index(name)
                return float(s.estimate[k]), float(s.se()[k])
        raise KeyError(name)

    def to_dict(self):
        return {
            "J": self.graph.J,
            "vine": self.graph.to_dict(self.specs),
            "margins": [m.to_dict() for m in self.margins],
            "stages": [s.to_dict() for s in self.stages],
            "config": self.config.to_dict() if self.config else None,
        }


# ---------------------------------------------------------------------------
# optimization and sandwich


def _maximize(fun_grad, x0, n, config, label):
    """Maximize a summed log-likelihood with L-BFGS-B on the mean scale."""

    def obj(x):
        v, g = fun_grad(x)
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return 1e10, np.zeros_like(x)
        return -v / n, -np.asarray(g) / n

    res = optimize.minimize(
        obj, np.asarray(x0, dtype=float), jac=True, method="L-BFGS-B",
        options={"maxiter": config.maxiter, "ftol": config.ftol, "gtol": config.gtol,
                 "maxcor": 20},
    )
    gnorm = float(np.max(np.abs(res.jac))) if res.jac.size else 0.0
    # a line search that stalls at an optimum limited by difference-quotient
    # noise still counts as converged; hitting the iteration limit does not
    stalled = res.status == 2 and gnorm <= 100 * max(config.gtol, 1e-5)
    converged = bool(res.success) or stalled
    if not converged:
        raise FitError(
            f"{label}: optimizer did not converge ({res.message}); max |grad| = {gnorm:.3g}",
            stage=label, last_iterate=res.x,
        )
    return res, gnorm, converged


def numeric_hessian(grad_fn, x, rel_step=1e-5):
    """Central-difference Hessian of an analytic gradient, symmetrized."""
    x = np.asarray(x, dtype=float)
    p = x.size
    H = np.empty((p, p))
    for k in range(p):
        h = rel_step * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        H[:, k] = (grad_fn(xp) - grad_fn(xm)) / (2 * h)
    return 0.5 * (H + H.T)


def sandwich_variance(hessian, scores):
    """``A^{-1} B A^{-1}`` with ``A = -hessian`` and ``B = scores' scores``.

    Both inputs are sums over subjects, so the result is the covariance of
    the estimator itself.
    """
    Ainv = _inverse_information(hessian)
    B = scores.T @ scores
    V = Ainv @ B @ Ainv
    return 0.5 * (V + V.T)


def _inverse_information(hessian):
    A = -np.asarray(hessian, dtype=float)
    try:
        Ainv = np.linalg.inv(A)
        if not np.all(np.isfinite(Ainv)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        warnings.warn("singular information matrix; using the pseudo-inverse", RuntimeWarning)
        Ainv = np.linalg.pinv(A)
    return 0.5 * (Ainv + Ainv.T)


def plugin_corrected_scores(score_fn, terms, terminal, terminal_influence, data, rel_step=1e-4):
    """Pairwise scores plus the effect of the estimated terminal margin.

    The pairwise log-likelihood depends on the terminal parameters only
    through each subject's own ``u_J``. With ``D_i`` the derivative of subject
    i's score in ``u_J,i`` and ``G_i`` the gradient of ``u_J,i`` in the terminal
    parameters, the corrected score is ``psi_i + (sum_m D_m G_m') phi_i`` where
    ``phi_i`` is the terminal influence row.

    Parameters
    ----------
    score_fn : callable
        Returns the (n, p) per-subject score matrix at the current ``u_J``.
    terms : list of PairTerm
        Terms whose ``uJ`` is perturbed in place (and restored).
    terminal : MarginalModel
    terminal_influence : ndarray, shape (n, p_J)
    """
    uJ = terms[0].uJ.copy()
    t = np.log(uJ) - np.log1p(-uJ)
    h = rel_step * np.maximum(1.0, np.abs(t))
    try:
        for sign in (1.0, -1.0):
            up = 1.0 / (1.0 + np.exp(-(t + sign * h)))
            for term in terms:
                term.uJ = up
            if sign > 0:
                s_plus = score_fn()
            else:
                s_minus = score_fn()
    finally:
        for term in terms:
            term.uJ = uJ
    # derivative in logit(u_J), later combined with d logit(u)/dx = -G'(x) / (1 - u)
    D = (s_plus - s_minus) / (2 * h[:, None])
    mt = MarginTerm(data.X[:, -1], data.delta[:, -1], data.L, terminal.jump_times, terminal.g)
    params = mt.params_of(terminal)
    _, x, s, _ = mt.evaluate(params)
    inside = (s > CLIP_EPS) & (s < 1.0 - CLIP_EPS)
    dt_dx = np.where(inside, -mt.g.Gdot(x) / (1.0 - uJ), 0.0)
    _, Gt = mt.chain(params, dt_dx, direct_event=False, per_subject=True)
    C = D.T @ Gt
    return score_fn() + terminal_influence @ C.T


# ---------------------------------------------------------------------------
# stages


def _margin_names(j, d_beta, kappa):
    return [f"beta_{j}[{k + 1}]" for k in range(d_beta)] + [f"logjump_{j}[{l}]" for l in range(kappa)]


def _gamma_names(edge, d_gamma):
    return [f"gamma_({edge})[{k}]" for k in range(d_gamma)]


def margin_term(data, j, g="ph"):
    """``MarginTerm`` for event ``j`` (1-based) with jumps at its event times."""
    col = j - 1
    init = MarginalModel.initial(data.X[:, col], data.delta[:, col], data.L.shape[1], g)
    term = MarginTerm(data.X[:, col], data.delta[:, col], data.L, init.jump_times, g)
    return term, np.concatenate([init.beta, init.log_jumps])


def _initial_gamma(family, d_gamma):
    g0 = np.zeros(d_gamma)
    g0[0] = float(link_inverse(family, alpha_from_tau(family, INIT_TAU)))
    return g0


def fit_terminal(data, g="ph", config=None):
    """Fit the terminal-event margin from its own data.

    Returns
    -------
    model : MarginalModel
    stage : StageResult
    """
    config = config or FitConfig()
    J = data.J
    term, x0 = margin_term(data, J, g)

    def fg(x):
        return loglik_terminal(term, x, grad=True)

    res, gnorm, conv = _maximize(fg, x0, data.n, config, "terminal")
    names = _margin_names(J, term.d_beta, term.kappa)
    cov = None
    if config.variance == "sandwich":
        H = numeric_hessian(lambda x: loglik_terminal(term, x, grad=True)[1], res.x)
        _, scores = loglik_terminal(term, res.x, grad=True, per_subject=True)
        cov = sandwich_variance(H, scores)
        influence = scores @ _inverse_information(H)
    stage = StageResult(
        1, f"terminal {J}", names, res.x, -res.fun * data.n, cov,
        "sandwich" if cov is not None else "none", conv, res.nit, gnorm, str(res.message), [],
        influence if cov is not None else None,
    )
    return term.model(res.x), stage


def _pair_terms(js, data, terminal, family, gs):
    uJ = clip_prob(marginal_survival(terminal, data.X[:, -1], data.L))
    terms, x0 = [], []
    for j, g in zip(js, gs):
        mt, th0 = margin_term(data, j, g)
        terms.append(PairTerm(mt, uJ, data.delta[:, -1], data.W, family))
        x0.append(th0)
    return terms, x0


def fit_pair(j, data, terminal, family, g="ph", config=None, gamma0=None, terminal_stage=None):
    """Fit margin ``j`` and copula ``(j, J)`` with the terminal margin fixed.

    When ``terminal_stage`` carries influence rows the sandwich accounts for
    the estimated terminal margin; otherwise it is stage-local.

    Returns
    -------
    model : MarginalModel
    spec : CopulaSpec
    stage : StageResult
    """
    models, spec, stage = fit_pair_pooled(
        [j], data, terminal, family, [g], config, gamma0, terminal_stage
    )
    stage.label = f"pair {j},{data.J}"
    return models[0], spec, stage


def fit_pair_pooled(js, data, terminal, family, gs=None, config=None, gamma0=None,
                    terminal_stage=None):
    """Fit several margins whose copulas with the terminal event share ``gamma``.

    The objective is the sum of the pairwise log-likelihoods. With a single
    event this is the ordinary pairwise fit.
    """
    config = config or FitConfig()
    family = Family.parse(family)
    js = list(js)
    gs = gs or ["ph"] * len(js)
    terms, x0 = _pair_terms(js, data, terminal, family, gs)
    d_gamma = data.W.shape[1]
    g0 = _initial_gamma(family, d_gamma) if gamma0 is None else np.asarray(gamma0, dtype=float)
    x0 = np.concatenate(x0 + [g0])

    def fg(x):
        return loglik_pair_pooled(terms, x, grad=True)

    label = "pair " + "+".join(f"{j},{data.J}" for j in js)
    res, gnorm, conv = _maximize(fg, x0, data.n, config, label)
    names = []
    for j, t in zip(js, terms):
        names += _margin_names(j, t.margin.d_beta, t.margin.kappa)
    edge_label = "=".join(f"{j},{data.J}" for j in js)
    names += _gamma_names(edge_label, d_gamma)
    cov = None
    if config.variance == "sandwich":
        H = numeric_hessian(lambda x: loglik_pair_pooled(terms, x, grad=True)[1], res.x)
        def score_fn():
            return loglik_pair_pooled(terms, res.x, grad=True, per_subject=True)[1]

        if terminal_stage is not None and terminal_stage.influence is not None:
            scores = plugin_corrected_scores(
                score_fn, terms, terminal, terminal_stage.influence, data
            )
        else:
            scores = score_fn()
        cov = sandwich_variance(H, scores)
    offs = np.cumsum([0] + [t.margin.n_params for t in terms])
    models = [t.margin.model(res.x[lo:hi]) for t, lo, hi in zip(terms, offs[:-1], offs[1:])]
    spec = CopulaSpec(family, res.x[-d_gamma:])
    stage = StageResult(
        1, label, names, res.x, -res.fun * data.n, cov,
        "sandwich" if cov is not None else "none", conv, res.nit, gnorm, str(res.message),
        [f"terminal {data.J}"],
    )
    return models, spec, stage


def _edge_derivatives(term, gamma, h_rel=1e-4):
    # each subject depends on gamma only through x_i = gamma' w_i
    lin = term.W @ gamma
    h = h_rel * np.maximum(1.0, np.abs(lin))
    f0 = np.empty(term.n)
    fp = np.empty(term.n)
    fm = np.empty(term.n)
    for grp in term._groups:
        r = grp["rows"]
        f0[r] = term._group_values(grp, lin[r])
        fp[r] = term._group_values(grp, lin[r] + h[r])
        fm[r] = term._group_values(grp, lin[r] - h[r])
    d1 = (fp - fm) / (2 * h)
    d2 = (fp - 2 * f0 + fm) / h ** 2
    return d1, d2


def fit_edge(edge, data, margins, specs, family, config=None, gamma0=None, graph=None):
    """Fit the copula of a higher-tree edge with everything below it fixed.

    ``graph`` defaults to the C-vine on ``data.J`` variables.

    Returns
    -------
    spec : CopulaSpec
    stage : StageResult
    """
    config = config or FitConfig()
    edge = Edge.parse(edge)
    family = Family.parse(family)
    graph = graph or build_cvine(data.J)
    specs = normalize_specs(specs)
    for anc in graph.closure(edge)[:-1]:
        if anc not in specs:
            raise VineDependencyError(f"edge {edge} needs the fitted copula of {anc}")
    U = pseudo_observations(margins, data)
    term = EdgeTerm(graph, specs, edge, family, U, data.delta, data.W, config.policy)
    d_gamma = data.W.shape[1]
    g0 = _initial_gamma(family, d_gamma) if gamma0 is None else np.asarray(gamma0, dtype=float)

    def fg(x):
        return term.evaluate(x, grad=True)

    res, gnorm, conv = _maximize(fg, g0, data.n, config, f"edge {edge}")
    cov = None
    if config.variance == "sandwich":
        d1, d2 = _edge_derivatives(term, res.x)
        H = (term.W * d2[:, None]).T @ term.W
        cov = sandwich_variance(H, d1[:, None] * term.W)
    stage = StageResult(
        edge.level, f"edge {edge}", _gamma_names(edge, d_gamma), res.x, -res.fun * data.n,
        cov, "sandwich" if cov is not None else "none", conv, res.nit, gnorm, str(res.message),
        [str(e) for e in graph.closure(edge)[:-1]] + ["margins"],
    )
    return CopulaSpec(family, res.x), stage


def fit_all(data, graph, families, gs=None, config=None):
    """Run the whole stage-wise schedule.

    Parameters
    ----------
    data : MeticDataset
    graph : VineGraph
    families : dict
        Edge (or label) to copula family for every edge.
    gs : list of str, optional
        Transformation per event; proportional hazards by default.
    config : FitConfig, optional

    Returns
    -------
    FitResult

    Raises
    ------
    FitError
        When a stage fails; ``partial`` holds a FitResult with the stages
        completed so far.
    """
    config = config or FitConfig()
    graph.check()
    families = {Edge.parse(k): Family.parse(v) for k, v in families.items()}
    missing = [str(e) for e in graph.edges if e not in families]
    if missing:
        raise ValueError(f"no copula family for edges {missing}")
    J = data.J
    if graph.J != J:
        raise ValueError(f"vine has {graph.J} variables but the data has {J} event types")
    gs = gs or ["ph"] * J
    margins = [None] * J
    specs = {}
    stages = []

    def partial():
        return FitResult(margins, specs, graph, stages, config)

    try:
        margins[J - 1], st = fit_terminal(data, gs[J - 1], config)
        stages.append(st)
        logger.info("stage 1: terminal margin fitted")
        pooled = [list(g) for g in config.pooled]
        grouped = {j for grp in pooled for j in grp}
        groups = pooled + [[j] for j in range(1, J) if j not in grouped]
        for grp in sorted(groups, key=min):
            fams = {families[Edge((j, J))] for j in grp}
            if len(fams) != 1:
                raise ValueError(f"pooled edges {grp} have different families {sorted(fams)}")
            fam = fams.pop()
            if len(grp) == 1:
                m, spec, st = fit_pair(
                    grp[0], data, margins[J - 1], fam, gs[grp[0] - 1], config,
                    terminal_stage=stages[0],
                )
                ms = [m]
            else:
                ms, spec, st = fit_pair_pooled(
                    grp, data, margins[J - 1], fam, [gs[j - 1] for j in grp], config,
                    terminal_stage=stages[0],
                )
            for j, m in zip(grp, ms):
                margins[j - 1] = m
                specs[Edge((j, J))] = CopulaSpec(spec.family, spec.gamma.copy())
            stages.append(st)
        for tree in graph.trees[1:]:
            for e in tree:
                spec, st = fit_edge(e, data, margins, specs, families[e], config, graph=graph)
                specs[e] = spec
                stages.append(st)
    except (FitError, ArithmeticError, ValueError) as exc:
        raise FitError(str(exc), partial=partial()) from exc
    result = partial()
    if config.variance == "bootstrap":
        _attach_bootstrap(result, data, families, gs)
    return result


def _reported(stage):
    return [k for k, name in enumerate(stage.names) if not name.startswith("logjump")]


def _attach_bootstrap(result, data, families, gs):
    """Replace every stage's covariance by a joint bootstrap over all stages.

    Only the regression and copula coefficients are resampled; baseline jump
    entries of the covariance are NaN because bootstrap samples carry their
    own jump times.
    """
    config = result.config
    quiet = replace(config, variance="none")

    def fit_fn(d):
        r = fit_all(d, result.graph, families, gs, quiet)
        return np.concatenate([st.estimate[_reported(st)] for st in r.stages])

    cov = bootstrap_variance(fit_fn, data, config.bootstrap, config.seed)
    pos = 0
    for st in result.stages:
        keep = _reported(st)
        full = np.full((len(st.names), len(st.names)), np.nan)
        full[np.ix_(keep, keep)] = cov[pos : pos + len(keep), pos : pos + len(keep)]
        pos += len(keep)
        st.cov = full
        st.variance_method = "bootstrap"
        st.influence = None


# ---------------------------------------------------------------------------
# variance by resampling and derived summaries


def bootstrap_variance(fit_fn, data, B=200, seed=0):
    """Covariance of ``fit_fn`` over ``B`` subject-level bootstrap samples.

    ``fit_fn(dataset)`` must return a fixed-length vector. Raises
    ``VarianceError`` when more than 10% of the replicates fail.
    """
    if B < 50:
        raise ValueError("bootstrap needs at least 50 replicates")
    draws = []
    failures = 0
    for b in range(B):
        idx = stream(seed, f"bootstrap-{b}").integers(0, data.n, data.n)
        try:
            draws.append(np.asarray(fit_fn(data.subset(idx)), dtype=float))
        except (FitError, ArithmeticError, ValueError) as exc:
            failures += 1
            logger.warning("bootstrap replicate %d failed: %s", b, exc)
    if failures > 0.1 * B:
        raise VarianceError(f"{failures} of {B} bootstrap replicates failed")
    draws = np.asarray(draws)
    return np.atleast_2d(np.cov(draws, rowvar=False, ddof=1))


def tau_edge(spec, w, cov=None, rel_step=1e-6):
    """Kendall's tau of an edge at covariates ``w`` with a delta-method SE."""
    w = np.asarray(w, dtype=float)
    x = float(w @ spec.gamma)
    tau = float(tau_from_alpha(spec.family, link(spec.family, x)))
    if cov is None:
        return tau, np.nan
    h = rel_step * max(1.0, abs(x))
    dtau = (tau_from_alpha(spec.family, link(spec.family, x + h))
            - tau_from_alpha(spec.family, link(spec.family, x - h))) / (2 * h)
    grad = dtau * w
    return tau, float(np.sqrt(max(grad @ cov @ grad, 0.0)))


def tau_unconditional(specs, w=None, n_samples=100_000, seed=0, batches=20):
    """Kendall's tau of ``(T_1, T_2)`` implied by a three-variable vine.

    Samples the vine and computes the sample Kendall's tau of the first two
    coordinates; the standard error comes from ``batches`` disjoint batches.

    Returns
    -------
    tau : float
    se : float
    """
    specs = normalize_specs(specs)
    if {e.nodes for e in specs} and max(max(e.nodes) for e in specs) != 3:
        raise ValueError("the unconditional tau is defined for three event types only")
    if w is None:
        w = np.ones(len(next(iter(specs.values())).gamma))
    u = sample_vine(build_cvine(3), specs, np.asarray(w, dtype=float), n_samples, seed)
    tau = kendalltau(u[:, 0], u[:, 1])[0]
    parts = np.array_split(np.arange(n_samples), batches)
    bt = np.array([kendalltau(u[p, 0], u[p, 1])[0] for p in parts])
    return float(tau), float(bt.std(ddof=1) / np.sqrt(batches))


def survival_at(model, t, z_l, cov=None, rel_step=1e-6):
    """Marginal survival at ``t`` with a delta-method SE from the margin block."""
    z_l = np.atleast_1d(np.asarray(z_l, dtype=float))
    s = float(marginal_survival(model, t, z_l))
    if cov is None:
        return s, np.nan
    x = np.concatenate([model.beta, model.log_jumps])
    grad = np.empty_like(x)
    d = model.beta.size
    for k in range(x.size):
        h = rel_step * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        mp = MarginalModel(xp[:d], model.jump_times, xp[d:], model.g)
        mm = MarginalModel(xm[:d], model.jump_times, xm[d:], model.g)
        grad[k] = (marginal_survival(mp, t, z_l) - marginal_survival(mm, t, z_l)) / (2 * h)
    return s, float(np.sqrt(max(grad @ cov @ grad, 0.0)))


__all__ = [
    "FitConfig", "FitResult", "StageResult", "FitError", "VarianceError", "fit_terminal",
    "fit_pair", "fit_pair_pooled", "fit_edge", "fit_all", "sandwich_variance",
    "numeric_hessian", "bootstrap_variance", "tau_edge", "tau_unconditional", "survival_at",
]
