import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vinemetic.copulas import BoundaryError, CopulaSpec, copula_log_density, h_function
from vinemetic.vine import (
    Edge,
    VineDependencyError,
    VineEvaluator,
    VineGraph,
    VineStructureError,
    build_cvine,
    build_dvine,
    conditional_margin,
    sub_log_density,
    vine_log_density,
)

W1 = np.ones(1)


def const(family, alpha_link):
    return CopulaSpec(family, [alpha_link])


def indep_specs(graph):
    return {e: const("frank", 0.0) for e in graph.edges}


def labels(tree):
    return {str(e) for e in tree}


# ---------------------------------------------------------------------------
# structure


def test_cvine_five():
    g = build_cvine(5)
    assert labels(g.trees[0]) == {"1,5", "2,5", "3,5", "4,5"}
    assert labels(g.trees[1]) == {"1,4|5", "2,4|5", "3,4|5"}
    assert labels(g.trees[2]) == {"1,3|4,5", "2,3|4,5"}
    assert labels(g.trees[3]) == {"1,2|3,4,5"}
    assert g.validate() == []


def test_dvine_five():
    g = build_dvine(5)
    assert labels(g.trees[1]) == {"1,2|5", "2,3|5", "3,4|5"}
    assert labels(g.trees[2]) == {"1,3|2,5", "2,4|3,5"}
    assert labels(g.trees[3]) == {"1,4|2,3,5"}
    assert g.validate() == []


def test_three_variable_vines_coincide():
    c, d = build_cvine(3), build_dvine(3)
    assert c.trees == d.trees == [[Edge((1, 3)), Edge((2, 3))], [Edge((1, 2), (3,))]]


def test_small_j_rejected():
    with pytest.raises(VineStructureError):
        build_cvine(2)
    with pytest.raises(VineStructureError):
        build_dvine(1)


def test_star_rooted_elsewhere():
    g = VineGraph(3, [[Edge((1, 2)), Edge((1, 3))], [Edge((2, 3), (1,))]])
    problems = g.validate()
    assert any("first tree not rooted at terminal" in p for p in problems)
    with pytest.raises(VineStructureError):
        g.check()


def test_proximity_violation():
    # tree 3 joins 1,2|5 and 3,4|5, which share no tree-1 edge
    g = VineGraph.from_parent_pairs(5, [(1, 5), (2, 5), (3, 5), (4, 5)],
                                    [[(0, 1), (2, 3), (1, 2)], [(0, 1), (1, 2)], [(0, 1)]])
    problems = g.validate()
    assert any("proximity" in p and "1,2|5 and 3,4|5" in p for p in problems)


def test_valid_custom_vine():
    # star, then a D-vine path 1-2-3-4 built explicitly from parent indices
    g = VineGraph.from_parent_pairs(5, [(1, 5), (2, 5), (3, 5), (4, 5)],
                                    [[(0, 1), (1, 2), (2, 3)], [(0, 1), (1, 2)], [(0, 1)]])
    assert g.validate() == []
    assert {str(e) for e in g.edges} == {str(e) for e in build_dvine(5).edges}


@pytest.mark.parametrize("builder", [build_cvine, build_dvine])
@pytest.mark.parametrize("J", [3, 4, 5, 6])
def test_ancestry_counts(builder, J):
    g = builder(J)
    for e in g.edges:
        anc = g.ancestors(e)
        assert len(anc) == e.level - 1
        for r, level_set in enumerate(anc, start=1):
            assert len(level_set) == r + 1
        assert len(e.nodes) == e.level + 1


def test_closure_of_cvine_edge():
    g = build_cvine(5)
    closure = {str(e) for e in g.closure("1,3|4,5")}
    assert closure == {"1,3|4,5", "1,4|5", "3,4|5", "1,5", "3,5", "4,5"}


def test_edge_parse():
    assert Edge.parse("3,1|5,4") == Edge((1, 3), (4, 5))
    assert str(Edge.parse((2, 1, (3,)))) == "1,2|3"


def test_json_roundtrip():
    g = build_dvine(4)
    specs = {e: CopulaSpec("clayton", [0.3]) for e in g.edges}
    back, back_specs = VineGraph.from_dict(g.to_dict(specs))
    assert back.trees == g.trees
    assert back_specs.keys() == specs.keys()
    custom = VineGraph(4, g.trees, structure="custom")
    back, _ = VineGraph.from_dict(custom.to_dict())
    assert back.trees == g.trees and back.validate() == []


@pytest.mark.parametrize("builder", [build_cvine, build_dvine])
def test_sampling_order_starts_at_terminal(builder):
    order = builder(5).sampling_order()
    assert order[0] == 5 and sorted(order) == [1, 2, 3, 4, 5]


# ---------------------------------------------------------------------------
# recursion and densities


def test_independence():
    g = build_cvine(5)
    u = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    specs = indep_specs(g)
    assert vine_log_density(g, specs, u, W1) == 0.0
    for e in g.edges:
        assert conditional_margin(g, specs, u, W1, e, e.a) == u[e.a - 1]


def test_clayton_first_tree_margin():
    u1, u3 = 0.3, 0.6
    specs = {"1,3": CopulaSpec("clayton", [np.log(2.0)]), "2,3": const("frank", 1.0),
             "1,2|3": const("frank", 1.0)}
    g = build_cvine(3)
    got = conditional_margin(g, specs, np.array([u1, 0.5, u3]), W1, "1,2|3", 1)
    expected = u3 ** -3.0 * (u1 ** -2.0 + u3 ** -2.0 - 1) ** -1.5
    assert got == pytest.approx(expected, abs=1e-12)


def _cvine5_specs():
    fams = ["clayton", "gumbel", "frank", "gaussian"]
    g = build_cvine(5)
    vals = iter([0.4, 0.1, 2.0, 0.3, -0.5, 0.2, 1.5, 0.3, -0.2, 0.6])
    specs = {}
    for k, e in enumerate(g.edges):
        fam = fams[k % 4]
        specs[e] = CopulaSpec(fam, [next(vals)])
    return g, specs


def test_cvine_five_hand_expansion():
    g, specs = _cvine5_specs()
    u = np.array([0.21, 0.47, 0.66, 0.35, 0.52])
    alpha = {e: float(specs[e].alpha(W1)) for e in g.edges}
    fam = {e: specs[e].family for e in g.edges}

    def c(label, a, b):
        e = Edge.parse(label)
        return copula_log_density(fam[e], a, b, alpha[e])

    def h(label, a, b):
        e = Edge.parse(label)
        return h_function(fam[e], a, b, alpha[e])

    u1, u2, u3, u4, u5 = u
    u1_5, u2_5, u3_5, u4_5 = h("1,5", u1, u5), h("2,5", u2, u5), h("3,5", u3, u5), h("4,5", u4, u5)
    u1_45, u2_45, u3_45 = h("1,4|5", u1_5, u4_5), h("2,4|5", u2_5, u4_5), h("3,4|5", u3_5, u4_5)
    u1_345, u2_345 = h("1,3|4,5", u1_45, u3_45), h("2,3|4,5", u2_45, u3_45)
    total = (c("1,5", u1, u5) + c("2,5", u2, u5) + c("3,5", u3, u5) + c("4,5", u4, u5)
             + c("1,4|5", u1_5, u4_5) + c("2,4|5", u2_5, u4_5) + c("3,4|5", u3_5, u4_5)
             + c("1,3|4,5", u1_45, u3_45) + c("2,3|4,5", u2_45, u3_45)
             + c("1,2|3,4,5", u1_345, u2_345))
    assert vine_log_density(g, specs, u, W1) == pytest.approx(total, abs=1e-12)

    sub = (c("1,3|4,5", u1_45, u3_45) + c("1,4|5", u1_5, u4_5) + c("3,4|5", u3_5, u4_5)
           + c("1,5", u1, u5) + c("3,5", u3, u5) + c("4,5", u4, u5))
    assert sub_log_density(g, specs, "1,3|4,5", u, W1) == pytest.approx(sub, abs=1e-12)
    assert conditional_margin(g, specs, u, W1, "1,2|3,4,5", 1) == pytest.approx(u1_345, abs=1e-14)


def test_sub_density_of_first_tree_edge():
    g, specs = _cvine5_specs()
    u = np.array([0.21, 0.47, 0.66, 0.35, 0.52])
    e = Edge((2, 5))
    expected = copula_log_density(specs[e].family, u[1], u[4], specs[e].alpha(W1))
    assert sub_log_density(g, specs, e, u, W1) == pytest.approx(expected, abs=1e-15)


def test_trivariate_clayton_equivalence():
    theta = 4.67
    g = build_cvine(3)
    specs = {"1,3": CopulaSpec("clayton", [np.log(theta)]), "2,3": CopulaSpec("clayton", [np.log(theta)]),
             "1,2|3": CopulaSpec("clayton", [np.log(theta / (1 + theta))])}
    rng = np.random.default_rng(8)
    u = rng.uniform(0.05, 0.95, size=(50, 3))
    s = np.sum(u ** -theta, axis=1) - 2
    log_c = (np.log1p(theta) + np.log1p(2 * theta) - (theta + 1) * np.log(u).sum(axis=1)
             + (-1 / theta - 3) * np.log(s))
    assert np.allclose(vine_log_density(g, specs, u, W1), log_c, atol=1e-10)


def test_missing_parameters_named():
    g = build_cvine(3)
    specs = {"1,3": const("clayton", 0.0), "1,2|3": const("frank", 1.0)}
    with pytest.raises(VineDependencyError, match="2,3"):
        conditional_margin(g, specs, np.array([0.2, 0.3, 0.4]), W1, "1,2|3", 2)


def test_boundary_rejected():
    g = build_cvine(3)
    with pytest.raises(BoundaryError):
        vine_log_density(g, indep_specs(g), np.array([0.0, 0.3, 0.4]), W1)


def test_covariate_dependent_alpha():
    g = build_cvine(3)
    specs = {e: CopulaSpec("gaussian", [0.1, 0.5]) for e in g.edges}
    w = np.array([[1.0, -1.0], [1.0, 2.0]])
    u = np.array([[0.2, 0.4, 0.6], [0.2, 0.4, 0.6]])
    out = vine_log_density(g, specs, u, w)
    for i in range(2):
        assert out[i] == pytest.approx(vine_log_density(g, specs, u[i], w[i]), abs=1e-14)
    assert out[0] != out[1]


# ---------------------------------------------------------------------------
# quadrature properties


def _gl(m):
    x, w = np.polynomial.legendre.leggauss(m)
    return (x + 1) / 2, w / 2


MODERATE = {"1,3": CopulaSpec("frank", [3.0]), "2,3": CopulaSpec("gaussian", [0.4]),
            "1,2|3": CopulaSpec("frank", [-2.0])}


def test_density_integrates_to_one():
    g = build_cvine(3)
    x, w = _gl(64)
    U = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
    W = np.einsum("i,j,k->ijk", w, w, w).ravel()
    total = np.sum(W * np.exp(vine_log_density(g, MODERATE, U, W1)))
    assert total == pytest.approx(1.0, abs=1e-4)


def test_margins_uniform():
    g = build_cvine(3)
    x, w = _gl(64)
    A, B = np.meshgrid(x, x, indexing="ij")
    ww = np.outer(w, w).ravel()
    for col in range(3):
        for t in (0.1, 0.5, 0.85):
            others = [k for k in range(3) if k != col]
            U = np.empty((A.size, 3))
            U[:, col] = t
            U[:, others[0]] = A.ravel()
            U[:, others[1]] = B.ravel()
            val = np.sum(ww * np.exp(vine_log_density(g, MODERATE, U, W1)))
            assert val == pytest.approx(1.0, abs=1e-3)


def test_sub_density_marginalizes_to_parent():
    g = build_cvine(4)
    specs = {e: CopulaSpec("frank", [1.5]) for e in g.edges}
    specs[Edge((1, 3), (4,))] = CopulaSpec("gaussian", [0.35])
    x, w = _gl(64)
    rng = np.random.default_rng(2)
    for u1, u4 in rng.uniform(0.1, 0.9, size=(4, 2)):
        U = np.column_stack([np.full(64, u1), np.full(64, 0.5), x, np.full(64, u4)])
        integral = np.sum(w * np.exp(sub_log_density(g, specs, "1,3|4", U, W1)))
        parent = np.exp(sub_log_density(g, specs, "1,4", U[0], W1))
        assert integral == pytest.approx(parent, abs=1e-3)


FAMILY_RANGES = {"clayton": (-2.0, 2.0), "gumbel": (-2.0, 2.0), "frank": (-10.0, 10.0),
                 "gaussian": (-1.5, 1.5)}


@st.composite
def random_cvine4(draw):
    g = build_cvine(4)
    specs = {}
    for e in g.edges:
        fam = draw(st.sampled_from(sorted(FAMILY_RANGES)))
        lo, hi = FAMILY_RANGES[fam]
        specs[e] = CopulaSpec(fam, [draw(st.floats(lo, hi))])
    return g, specs


@settings(max_examples=100, deadline=None)
@given(random_cvine4(), st.lists(st.floats(0.01, 0.99), min_size=4, max_size=4),
       st.floats(0.01, 0.99))
def test_conditional_margin_range_and_monotone(gs, u, other):
    g, specs = gs
    u = np.array(u)
    for e in g.edges:
        if e.level == 1:
            continue
        j = e.a
        lo, hi = sorted((u[j - 1], other))
        ulo, uhi = u.copy(), u.copy()
        ulo[j - 1], uhi[j - 1] = lo, hi
        a = VineEvaluator(g, specs, ulo, W1).margin(e, j)
        b = VineEvaluator(g, specs, uhi, W1).margin(e, j)
        assert 0.0 <= a <= 1.0 and 0.0 <= b <= 1.0
        assert a <= b + 1e-12
