import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vinemetic.copulas import CopulaSpec, link, tau_from_alpha
from vinemetic.estimation import (
    FitConfig,
    FitError,
    VarianceError,
    bootstrap_variance,
    fit_all,
    fit_edge,
    fit_pair,
    fit_pair_pooled,
    fit_terminal,
    numeric_hessian,
    plugin_corrected_scores,
    sandwich_variance,
    survival_at,
    tau_edge,
    tau_unconditional,
)
from vinemetic.estimation import _pair_terms
from vinemetic.likelihood import MarginTerm, loglik_pair_pooled, loglik_terminal
from vinemetic.marginals import MarginalModel, MeticDataset, clip_prob, marginal_survival
from vinemetic.simulation import (
    Sim1Config,
    Sim2Config,
    sample_vine,
    simulate_nested_clayton,
    simulate_sim1,
)
from vinemetic.vine import VineDependencyError, build_cvine, build_dvine

FAST = FitConfig(variance="none")


def two_event_data(n=150, seed=0, rho_link=1.0, family="clayton", p=1, censor=True):
    """Nonterminal event censored by a terminal one, dependence through a copula."""
    rng = np.random.default_rng(seed)
    spec = {"1,2": CopulaSpec(family, [rho_link])}
    u = sample_vine_pair(spec["1,2"], n, seed)
    Z = (rng.random((n, p)) < 0.5).astype(float)
    T2 = -np.log(u[:, 1]) * np.exp(-0.5 * Z[:, 0])
    T1 = -np.log(u[:, 0]) * np.exp(-0.3 * Z[:, 0]) * 0.8
    A = rng.uniform(0.5, 4.0, n) if censor else np.full(n, np.inf)
    X2 = np.minimum(T2, A)
    X1 = np.minimum(T1, X2)
    D = np.column_stack([T1 <= X2, T2 <= A]).astype(int)
    return MeticDataset(np.column_stack([X1, X2]), D, Z)


def sample_vine_pair(spec, n, seed):
    from vinemetic.copulas import h_inverse

    rng = np.random.default_rng(seed + 1000)
    v = rng.uniform(size=(n, 2))
    u2 = v[:, 1]
    u1 = h_inverse(spec.family, v[:, 0], u2, link(spec.family, spec.gamma[0]))
    return np.column_stack([u1, u2])


def censored_by_terminal(U):
    """Exponential event times from survival-scale draws; the terminal censors the rest."""
    T = -np.log(U)
    X = np.minimum(T, T[:, -1:])
    D = (T <= T[:, -1:]).astype(int)
    return MeticDataset(X, D, np.zeros((len(T), 0)))


# ---------------------------------------------------------------------------
# terminal stage


def _cox_newton(t, d, z):
    """Cox partial-likelihood maximizer for one covariate, no ties."""
    order = np.argsort(t)
    d, z = d[order], z[order]
    beta = 0.0
    for _ in range(200):
        e = np.exp(beta * z)
        s0 = np.cumsum(e[::-1])[::-1]
        s1 = np.cumsum((e * z)[::-1])[::-1]
        s2 = np.cumsum((e * z * z)[::-1])[::-1]
        score = np.sum(d * (z - s1 / s0))
        info = np.sum(d * (s2 / s0 - (s1 / s0) ** 2))
        beta += score / info
        if abs(score / info) < 1e-15:
            break
    return beta


def test_terminal_matches_cox_with_censoring():
    data = two_event_data(n=200, seed=1)
    _, stage = fit_terminal(data, config=FAST)
    beta = _cox_newton(data.X[:, 1], data.delta[:, 1], data.Z[:, 0])
    assert stage.estimate[0] == pytest.approx(beta, abs=1e-4)


def test_terminal_without_covariates_is_nelson_aalen():
    rng = np.random.default_rng(2)
    t = rng.exponential(size=120)
    data = MeticDataset(np.column_stack([t / 2, t]), np.ones((120, 2), int), np.zeros((120, 0)))
    model, _ = fit_terminal(data, config=FAST)
    ts = np.sort(t)
    expected = np.exp(-np.cumsum(1.0 / np.arange(120, 0, -1)))
    got = marginal_survival(model, ts, np.zeros((120, 0)))
    assert np.max(np.abs(got - expected)) < 1e-6


def test_exponential_sandwich_is_inverse_n():
    # log-rate MLE of exponential data: score 1 - lam x, information n
    rng = np.random.default_rng(3)
    n = 4000
    x = rng.exponential(size=n)
    lam = 1.0 / x.mean()
    grad = lambda p: np.array([n - math.exp(p[0]) * x.sum()])
    H = numeric_hessian(grad, np.array([math.log(lam)]))
    assert H[0, 0] == pytest.approx(-n, rel=1e-6)
    V = sandwich_variance(H, (1 - lam * x)[:, None])
    assert V[0, 0] == pytest.approx(1.0 / n, rel=0.1)


def test_terminal_sandwich_close_to_inverse_information():
    data = two_event_data(n=1000, seed=4)
    model, stage = fit_terminal(data)
    from vinemetic.estimation import margin_term

    term, _ = margin_term(data, 2)
    H = numeric_hessian(lambda x: loglik_terminal(term, x, grad=True)[1], stage.estimate)
    fisher = np.linalg.inv(-H)[0, 0]
    assert stage.cov[0, 0] == pytest.approx(fisher, rel=0.2)


def test_scale_equivariance():
    data = two_event_data(n=120, seed=5)
    c = 3.7
    scaled = MeticDataset(data.X * c, data.delta, data.Z)
    m1, s1 = fit_terminal(data, config=FAST)
    m2, s2 = fit_terminal(scaled, config=FAST)
    assert s2.estimate[0] == pytest.approx(s1.estimate[0], abs=1e-6)
    assert np.allclose(m2.log_jumps, m1.log_jumps, atol=1e-6)
    assert np.allclose(m2.jump_times, m1.jump_times * c)


def test_nonconvergence_reports_last_iterate():
    data = two_event_data(n=80, seed=6)
    with pytest.raises(FitError) as info:
        fit_terminal(data, config=FitConfig(maxiter=1, variance="none"))
    assert info.value.last_iterate is not None
    assert "terminal" in str(info.value)


# ---------------------------------------------------------------------------
# sandwich


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(float, (4, 4), elements=st.floats(-2, 2)),
       hnp.arrays(float, (30, 4), elements=st.floats(-3, 3)))
def test_sandwich_symmetric_psd(M, scores):
    H = -(M @ M.T + 0.5 * np.eye(4))
    V = sandwich_variance(H, scores)
    assert np.allclose(V, V.T)
    assert np.min(np.linalg.eigvalsh(V)) >= -1e-10 * max(1.0, np.max(np.abs(V)))


def test_singular_information_warns():
    H = -np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.warns(RuntimeWarning, match="pseudo-inverse"):
        V = sandwich_variance(H, np.ones((5, 2)))
    assert np.all(np.isfinite(V))


def test_plugin_correction_against_finite_differences():
    data = two_event_data(n=60, seed=7)
    terminal, tstage = fit_terminal(data)
    terms, x0 = _pair_terms([1], data, terminal, "clayton", ["ph"])
    x = np.concatenate(x0 + [np.array([0.5, 0.2])])

    def score_fn():
        return loglik_pair_pooled(terms, x, grad=True, per_subject=True)[1]

    rng = np.random.default_rng(0)
    infl = rng.normal(size=tstage.influence.shape)
    got = plugin_corrected_scores(score_fn, terms, terminal, infl, data) - score_fn()

    # dual route: rebuild u_J from perturbed terminal parameters
    mt = MarginTerm(data.X[:, -1], data.delta[:, -1], data.L, terminal.jump_times)
    p = mt.params_of(terminal)
    uJ0 = terms[0].uJ.copy()
    C = np.empty((x.size, p.size))
    for k in range(p.size):
        h = 1e-5 * max(1.0, abs(p[k]))
        sums = []
        for sgn in (1, -1):
            q = p.copy()
            q[k] += sgn * h
            terms[0].uJ = clip_prob(marginal_survival(mt.model(q), data.X[:, -1], data.L))
            sums.append(score_fn().sum(axis=0))
        C[:, k] = (sums[0] - sums[1]) / (2 * h)
    terms[0].uJ = uJ0
    expected = infl @ C.T
    assert np.max(np.abs(got - expected)) <= 1e-4 * max(1.0, np.max(np.abs(expected)))


# ---------------------------------------------------------------------------
# pair stages


def test_pooled_single_equals_fit_pair():
    data = two_event_data(n=100, seed=8)
    terminal, _ = fit_terminal(data, config=FAST)
    m1, s1, st1 = fit_pair(1, data, terminal, "clayton", config=FAST)
    ms, s2, st2 = fit_pair_pooled([1], data, terminal, "clayton", config=FAST)
    assert np.array_equal(st1.estimate, st2.estimate)
    assert np.array_equal(s1.gamma, s2.gamma)


def test_independence_gives_null_tau():
    data = two_event_data(n=300, seed=9, rho_link=0.0, family="frank")
    terminal, tstage = fit_terminal(data)
    _, spec, stage = fit_pair(1, data, terminal, "frank", terminal_stage=tstage)
    w = data.W[0]
    tau, se = tau_edge(spec, w, stage.cov[-2:, -2:])
    assert abs(tau) <= 3 * se


def test_pooled_mixed_families_rejected():
    data = simulate_nested_clayton(Sim2Config(n=60, seed=2))
    fams = {"1,3": "clayton", "2,3": "gumbel", "1,2|3": "frank"}
    with pytest.raises((FitError, ValueError), match="different families"):
        fit_all(data, build_cvine(3), fams, config=FitConfig(variance="none", pooled=[[1, 2]]))


@pytest.mark.slow
def test_pooled_between_per_edge_estimates():
    between = 0
    reps = 10
    for r in range(reps):
        data = simulate_nested_clayton(Sim2Config(n=300, seed=500 + r))
        terminal, _ = fit_terminal(data, config=FAST)
        g1 = fit_pair(1, data, terminal, "clayton", config=FAST)[1].gamma[0]
        g2 = fit_pair(2, data, terminal, "clayton", config=FAST)[1].gamma[0]
        gp = fit_pair_pooled([1, 2], data, terminal, "clayton", config=FAST)[1].gamma[0]
        between += min(g1, g2) - 1e-6 <= gp <= max(g1, g2) + 1e-6
    assert between > reps / 2


# ---------------------------------------------------------------------------
# edges and the full schedule


def test_edge_needs_ancestors():
    data = simulate_nested_clayton(Sim2Config(n=40, seed=3))
    margins = [MarginalModel.initial(data.X[:, j], data.delta[:, j], 0) for j in range(3)]
    with pytest.raises(VineDependencyError, match="2,3"):
        fit_edge("1,2|3", data, margins, {"1,3": CopulaSpec("clayton", [0.0])}, "frank")


def test_conditional_independence_null():
    n = 2000
    specs = {"1,3": CopulaSpec("clayton", [1.0]), "2,3": CopulaSpec("gumbel", [0.5]),
             "1,2|3": CopulaSpec("frank", [0.0])}
    data = censored_by_terminal(sample_vine(build_cvine(3), specs, np.ones(1), n, seed=12))
    # true unit-exponential margins on a fine step grid; Nelson-Aalen would be
    # biased by the dependent censoring
    grid = np.arange(1, 20001) * 1e-3
    truth = MarginalModel(np.zeros(0), grid, np.full(grid.size, math.log(1e-3)))
    margins = [truth] * 3
    spec, _ = fit_edge("1,2|3", data, margins, specs, "frank", config=FAST)
    assert abs(tau_from_alpha("frank", spec.gamma[0])) <= 0.05


def test_fit_all_deterministic_and_coherent():
    data = simulate_nested_clayton(Sim2Config(n=80, seed=4))
    fams = {"1,3": "clayton", "2,3": "clayton", "1,2|3": "clayton"}
    a = fit_all(data, build_cvine(3), fams)
    b = fit_all(data, build_cvine(3), fams)
    for sa, sb in zip(a.stages, b.stages):
        assert np.array_equal(sa.estimate, sb.estimate)
        assert np.array_equal(sa.cov, sb.cov)
    # the fitted margins reproduce the stage estimates exactly
    pair = a.stage("pair 1,3")
    k = pair.names.index("gamma_(1,3)[0]")
    assert np.array_equal(pair.estimate[:k], np.concatenate([a.margins[0].beta, a.margins[0].log_jumps]))
    for stage in a.stages:
        cov = stage.cov
        assert np.allclose(cov, cov.T)
        assert np.min(np.linalg.eigvalsh(cov)) >= -1e-10 * np.max(np.abs(cov))


def test_j4_stage_order():
    n = 120
    g = build_dvine(4)
    specs = {e: CopulaSpec("frank", [2.0]) for e in g.edges}
    data = censored_by_terminal(sample_vine(g, specs, np.ones(1), n, seed=5))
    res = fit_all(data, g, {e: "frank" for e in g.edges}, config=FAST)
    labels = [s.label for s in res.stages]
    assert labels == ["terminal 4", "pair 1,4", "pair 2,4", "pair 3,4",
                      "edge 1,2|4", "edge 2,3|4", "edge 1,3|2,4"]
    assert [s.stage for s in res.stages] == [1, 1, 1, 1, 2, 2, 3]
    seen = set()
    for s in res.stages:
        for inp in s.inputs:
            if inp != "margins":
                key = inp if inp.startswith("terminal") else f"edge {inp}"
                assert key in seen or inp.startswith(tuple(f"{j},4" for j in range(1, 4)))
        seen.add(s.label)


def test_partial_results_on_failure():
    data = simulate_nested_clayton(Sim2Config(n=60, seed=6))
    fams = {"1,3": "clayton", "2,3": "clayton", "1,2|3": "clayton"}
    cfg = FitConfig(variance="none", maxiter=3)
    with pytest.raises(FitError) as info:
        fit_all(data, build_cvine(3), fams, config=cfg)
    assert info.value.partial is not None


# ---------------------------------------------------------------------------
# bootstrap and summaries


def test_bootstrap_degenerate():
    n = 30
    data = MeticDataset(np.tile([[1.0, 2.0]], (n, 1)), np.ones((n, 2), int), np.zeros((n, 0)))

    def fit_fn(d):
        return fit_terminal(d, config=FAST)[1].estimate

    cov = bootstrap_variance(fit_fn, data, B=50, seed=1)
    assert np.allclose(cov, 0.0, atol=1e-12)


def test_bootstrap_deterministic_and_failures():
    data = two_event_data(n=50, seed=10)
    fn = lambda d: [d.X[:, 1].mean(), d.Z[:, 0].mean()]
    a = bootstrap_variance(fn, data, B=60, seed=3)
    b = bootstrap_variance(fn, data, B=60, seed=3)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        bootstrap_variance(fn, data, B=10)
    calls = iter(range(1000))

    def flaky(d):
        if next(calls) % 5 == 0:
            raise FitError("boom")
        return [1.0]

    with pytest.raises(VarianceError):
        bootstrap_variance(flaky, data, B=50)


@pytest.mark.slow
def test_bootstrap_agrees_with_sandwich():
    data = two_event_data(n=1000, seed=11)
    _, stage = fit_terminal(data)
    cov = bootstrap_variance(lambda d: fit_terminal(d, config=FAST)[1].estimate[:1], data, B=50)
    ratio = math.sqrt(cov[0, 0]) / stage.se()[0]
    assert 0.7 <= ratio <= 1.4


def test_tau_edge_delta_method():
    spec = CopulaSpec("clayton", [0.3, 0.2])
    w = np.array([1.0, 1.5])
    cov = np.array([[0.01, 0.002], [0.002, 0.02]])
    tau, se = tau_edge(spec, w, cov)
    a = math.exp(0.6)
    assert tau == pytest.approx(a / (a + 2), abs=1e-14)
    dtau = 2 * a / (a + 2) ** 2
    assert se == pytest.approx(dtau * math.sqrt(w @ cov @ w), rel=1e-6)
    assert math.isnan(tau_edge(spec, w)[1])


def test_survival_at_delta_method():
    m = MarginalModel([0.5], [1.0, 2.0], np.log([0.2, 0.3]))
    cov = np.diag([0.04, 0.01, 0.02])
    s, se = survival_at(m, 2.5, [1.0], cov)
    e = math.exp(0.5)
    assert s == pytest.approx(math.exp(-0.5 * e), rel=1e-14)
    # dS/dbeta = -S x, dS/dlog d_l = -S d_l e^eta
    grad = -s * np.array([0.5 * e, 0.2 * e, 0.3 * e])
    assert se == pytest.approx(math.sqrt(grad @ cov @ grad), rel=1e-6)


def test_tau_unconditional_cases():
    indep = {e: CopulaSpec("frank", [0.0]) for e in build_cvine(3).edges}
    tau, se = tau_unconditional(indep, n_samples=50_000, seed=1)
    assert abs(tau) <= 0.01 and se > 0
    strong = {"1,3": CopulaSpec("clayton", [math.log(5.0)]), "2,3": CopulaSpec("clayton", [math.log(5.0)]),
              "1,2|3": CopulaSpec("frank", [0.0])}
    assert tau_unconditional(strong, n_samples=50_000, seed=1)[0] > 0.3
    assert tau_unconditional(Sim2Config().specs(), n_samples=100_000, seed=2)[0] == pytest.approx(0.70, abs=0.01)


def test_tau_unconditional_rejects_larger_vines():
    specs = {e: CopulaSpec("frank", [0.0]) for e in build_cvine(4).edges}
    with pytest.raises(ValueError, match="three"):
        tau_unconditional(specs, n_samples=1000)


def test_result_serialization():
    data = simulate_nested_clayton(Sim2Config(n=50, seed=7))
    fams = {"1,3": "clayton", "2,3": "clayton", "1,2|3": "clayton"}
    d = fit_all(data, build_cvine(3), fams).to_dict()
    assert [s["label"] for s in d["stages"]] == ["terminal 3", "pair 1,3", "pair 2,3", "edge 1,2|3"]
    pair = d["stages"][1]
    assert all(not p["name"].startswith("logjump") for p in pair["parameters"])
    assert len(pair["covariance"]) == len(pair["parameters"])
    assert d["stages"][0]["variance_method"] == "sandwich"


# ---------------------------------------------------------------------------
# simulation-scale recovery


@pytest.mark.slow
def test_sim1_pipeline_recovers_parameters():
    data = simulate_sim1(Sim1Config(n=1000, seed=21))
    fams = {"1,3": "gumbel", "2,3": "clayton", "1,2|3": "frank"}
    res = fit_all(data, build_cvine(3), fams)
    truth = Sim1Config()
    edge = res.stage("edge 1,2|3")
    for k, g in enumerate(truth.gamma12_3):
        assert abs(edge.estimate[k] - g) <= 3 * edge.se()[k]
    for j in range(3):
        est, se = res.estimate(f"beta_{j + 1}[1]")
        assert abs(est - truth.beta[j][0]) <= 3 * se


@pytest.mark.slow
def test_sim2_edge_alpha_recovered():
    data = simulate_nested_clayton(Sim2Config(n=1000, seed=22))
    fams = {"1,3": "clayton", "2,3": "clayton", "1,2|3": "clayton"}
    res = fit_all(data, build_cvine(3), fams)
    est, se = res.estimate("gamma_(1,2|3)[0]")
    truth = math.log(4.67 / 5.67)
    assert abs(est - truth) <= 3 * se
