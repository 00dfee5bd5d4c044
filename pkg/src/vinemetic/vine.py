"""Regular vines whose first tree is a star centred on the terminal event.

Variables are labelled ``1..J`` with ``J`` the terminal event. A tree-``k``
edge ``(a, b | D)`` carries a bivariate copula for the conditional margins
``u_{a|D}`` and ``u_{b|D}``; those margins are produced by the h-function
recursion through the edge's parents in tree ``k - 1``.

Arrays of pseudo-observations are indexed by column ``j - 1`` for variable
``j``.
"""

from dataclasses import dataclass
from itertools import chain

import numpy as np

from vinemetic.copulas import (
    CLIP_EPS,
    BoundaryError,
    CopulaSpec,
    copula_log_density,
    h_function,
    link_eval,
)


class VineStructureError(ValueError):
    """Malformed vine graph."""


class VineDependencyError(LookupError):
    """A copula needed by the recursion has no parameters."""


@dataclass(frozen=True, order=True)
class Edge:
    """Edge label ``(conditioned | given)`` with both parts sorted."""

    conditioned: tuple
    given: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "conditioned", tuple(sorted(int(x) for x in self.conditioned)))
        object.__setattr__(self, "given", tuple(sorted(int(x) for x in self.given)))

    @property
    def a(self):
        return self.conditioned[0]

    @property
    def b(self):
        return self.conditioned[1]

    @property
    def level(self):
        return len(self.given) + 1

    @property
    def nodes(self):
        return frozenset(self.conditioned) | frozenset(self.given)

    def __str__(self):
        s = ",".join(map(str, self.conditioned))
        if self.given:
            s += "|" + ",".join(map(str, self.given))
        return s

    @classmethod
    def parse(cls, value):
        """Accept an ``Edge``, a string like ``"1,3|4,5"`` or ``(a, b, given)``."""
        if isinstance(value, Edge):
            return value
        if isinstance(value, str):
            left, _, right = value.partition("|")
            cond = [int(x) for x in left.split(",") if x.strip()]
            given = [int(x) for x in right.split(",") if x.strip()]
            return cls(tuple(cond), tuple(given))
        a, b, *rest = value
        given = rest[0] if rest else ()
        return cls((a, b), tuple(given))


def _label_from_parents(p, q):
    return Edge(tuple(p.nodes ^ q.nodes), tuple(p.nodes & q.nodes))


class VineGraph:
    """Sequence of trees ``T_1..T_{J-1}`` with explicit parent links.

    Parameters
    ----------
    J : int
        Number of event types; ``J`` is the terminal event.
    trees : list of list of Edge
        Edges of each tree in order.
    parents : dict, optional
        Map from each edge of tree ``k >= 2`` to the two tree ``k - 1`` edges
        it joins. Inferred from the labels when omitted.
    structure : str
        Tag recorded in serialized output.
    """

    def __init__(self, J, trees, parents=None, structure="custom"):
        self.J = int(J)
        self.trees = [[Edge.parse(e) for e in tree] for tree in trees]
        self.structure = structure
        if parents is None:
            parents = self._infer_parents()
        self.parents = dict(parents)

    def _infer_parents(self):
        out = {}
        for k in range(1, len(self.trees)):
            by_nodes = {e.nodes: e for e in self.trees[k - 1]}
            for e in self.trees[k]:
                if len(e.conditioned) != 2:
                    continue
                pa = by_nodes.get(frozenset(e.given) | {e.a})
                pb = by_nodes.get(frozenset(e.given) | {e.b})
                if pa is not None and pb is not None:
                    out[e] = (pa, pb)
        return out

    @classmethod
    def from_parent_pairs(cls, J, first_tree, pairs, structure="custom"):
        """Build from tree-1 variable pairs and, for each later tree, index pairs
        into the previous tree's edge list."""
        trees = [[Edge((a, b)) for a, b in first_tree]]
        parents = {}
        for level_pairs in pairs:
            prev = trees[-1]
            tree = []
            for i, i2 in level_pairs:
                e = _label_from_parents(prev[i], prev[i2])
                parents[e] = (prev[i], prev[i2])
                tree.append(e)
            trees.append(tree)
        return cls(J, trees, parents, structure)

    @property
    def edges(self):
        return list(chain.from_iterable(self.trees))

    def tree_of(self, edge):
        return Edge.parse(edge).level

    def ancestors(self, edge):
        """Ancestor edge sets ``[E_1(e), ..., E_{k-1}(e)]``, nearest tree first."""
        edge = Edge.parse(edge)
        out = []
        frontier = {edge}
        for _ in range(edge.level - 1):
            nxt = set()
            for f in frontier:
                if f not in self.parents:
                    raise VineStructureError(f"edge {f} has no parents in the previous tree")
                nxt.update(self.parents[f])
            out.append(nxt)
            frontier = nxt
        return out

    def closure(self, edge):
        """The edge together with all its ancestors, ordered by tree."""
        edge = Edge.parse(edge)
        anc = self.ancestors(edge)
        out = []
        for level_set in reversed(anc):
            out.extend(sorted(level_set))
        out.append(edge)
        return out

    def validate(self):
        """List every violated vine condition; empty when the graph is valid."""
        out = []
        J = self.J
        if J < 3:
            return [f"need J >= 3 event types, got {J}"]
        if len(self.trees) != J - 1:
            out.append(f"expected {J - 1} trees, got {len(self.trees)}")
        if not self.trees:
            return out
        star = {Edge((j, J)) for j in range(1, J)}
        if set(self.trees[0]) != star or len(self.trees[0]) != J - 1:
            out.append("first tree not rooted at terminal: must be the star {(j, J)}")
        for k, tree in enumerate(self.trees, start=1):
            if len(tree) != J - k:
                out.append(f"tree {k} has {len(tree)} edges, a spanning tree needs {J - k}")
            if len(set(tree)) != len(tree):
                out.append(f"tree {k} has duplicate edges")
            for e in tree:
                if len(e.conditioned) != 2 or len(e.given) != k - 1:
                    out.append(
                        f"edge {e} in tree {k} violates the proximity condition: its "
                        f"parents do not share a node"
                    )
                elif set(e.conditioned) & set(e.given) or not e.nodes <= set(range(1, J + 1)):
                    out.append(f"edge {e} in tree {k} has an invalid label")
            if k == 1:
                continue
            prev = self.trees[k - 2]
            index = {e: i for i, e in enumerate(prev)}
            root = list(range(len(prev)))

            def find(i):
                while root[i] != i:
                    root[i] = root[root[i]]
                    i = root[i]
                return i

            for e in tree:
                par = self.parents.get(e)
                if par is None or any(p not in index for p in par):
                    if len(e.conditioned) == 2:
                        out.append(f"edge {e} in tree {k} does not join two edges of tree {k - 1}")
                    continue
                if k >= 3 and not (set(self.parents.get(par[0], ())) & set(self.parents.get(par[1], ()))):
                    out.append(
                        f"edge {e} in tree {k} violates the proximity condition: "
                        f"{par[0]} and {par[1]} share no node"
                    )
                ra, rb = find(index[par[0]]), find(index[par[1]])
                if ra == rb:
                    out.append(f"tree {k} contains a cycle through edge {e}")
                root[ra] = rb
            if len({find(i) for i in range(len(prev))}) > 1 and len(tree) == J - k:
                out.append(f"tree {k} is not connected")
        return out

    def check(self):
        problems = self.validate()
        if problems:
            raise VineStructureError("; ".join(problems))
        return self

    def sampling_order(self):
        """Variable order for sequential conditional sampling, terminal first.

        Each variable after the first is linked to the already placed ones by
        edges of levels ``1..m`` whose other variables are all placed.
        """
        J = self.J
        edges = self.edges

        def links(v, placed):
            got = [e for e in edges if v in e.conditioned
                   and (e.nodes - {v}) <= placed]
            levels = sorted(e.level for e in got)
            return got if levels == list(range(1, len(placed) + 1)) else None

        def search(order):
            if len(order) == J:
                return order
            placed = set(order)
            for v in sorted(set(range(1, J)) - placed, reverse=True):
                if links(v, placed) is not None:
                    found = search(order + [v])
                    if found:
                        return found
            return None

        order = search([J])
        if order is None:
            raise VineStructureError("no sequential sampling order exists for this vine")
        return order

    def to_dict(self, specs=None):
        d = {"J": self.J, "structure": self.structure,
             "edges": [{"edge": str(e), "tree": e.level} for e in self.edges]}
        if specs is not None:
            specs = normalize_specs(specs)
            for item in d["edges"]:
                spec = specs.get(Edge.parse(item["edge"]))
                if spec is not None:
                    item.update(spec.to_dict())
        return d

    @classmethod
    def from_dict(cls, d):
        """Graph and specs from the vine JSON layout."""
        J = int(d["J"])
        tag = d.get("structure", "custom")
        if tag == "cvine":
            graph = build_cvine(J)
        elif tag == "dvine":
            graph = build_dvine(J)
        else:
            levels = {}
            for item in d["edges"]:
                e = Edge.parse(item["edge"])
                levels.setdefault(e.level, []).append(e)
            graph = cls(J, [levels[k] for k in sorted(levels)], structure="custom")
        specs = {}
        for item in d.get("edges", []):
            if "family" in item:
                specs[Edge.parse(item["edge"])] = CopulaSpec.from_dict(item)
        return graph, specs

    def __repr__(self):
        body = "; ".join("T%d: %s" % (k + 1, ", ".join(map(str, t))) for k, t in enumerate(self.trees))
        return f"VineGraph(J={self.J}, {body})"


def build_cvine(J):
    """C-vine with star first tree at ``J`` and later roots ``J-1, J-2, ..., 2``."""
    if J < 3:
        raise VineStructureError(f"need J >= 3 event types, got {J}")
    trees = [[Edge((j, J)) for j in range(1, J)]]
    given = [J]
    for k in range(2, J):
        r = J - k + 1
        trees.append([Edge((j, r), tuple(given)) for j in range(1, r)])
        given = given + [r]
    return VineGraph(J, trees, structure="cvine")


def build_dvine(J):
    """D-vine on ``1..J-1`` (path order) above a star first tree at ``J``."""
    if J < 3:
        raise VineStructureError(f"need J >= 3 event types, got {J}")
    trees = [[Edge((j, J)) for j in range(1, J)]]
    for k in range(2, J):
        trees.append([
            Edge((j, j + k - 1), tuple(range(j + 1, j + k - 1)) + (J,))
            for j in range(1, J - k + 1)
        ])
    return VineGraph(J, trees, structure="dvine")


def normalize_specs(specs):
    return {Edge.parse(k): v for k, v in specs.items()}


class VineEvaluator:
    """Memoized conditional margins for one set of pseudo-observations.

    Parameters
    ----------
    graph : VineGraph
    specs : dict
        Edge (or label) to ``CopulaSpec``.
    u : ndarray, shape (n, J) or (J,)
        Pseudo-observations in ``(0, 1)``.
    w : ndarray, shape (n, d_W) or (d_W,)
        Copula covariates.
    alphas : dict, optional
        Precomputed copula parameters per edge; overrides ``specs``.
    """

    def __init__(self, graph, specs, u, w, alphas=None):
        self.graph = graph
        self.specs = normalize_specs(specs)
        self.u = np.asarray(u, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self._alpha = {} if alphas is None else {Edge.parse(k): v for k, v in alphas.items()}
        self._margin = {}

    def spec(self, edge):
        try:
            return self.specs[edge]
        except KeyError:
            raise VineDependencyError(f"no copula parameters for edge {edge}") from None

    def alpha(self, edge):
        if edge not in self._alpha:
            self._alpha[edge] = link_eval(self.spec(edge), self.w)
        return self._alpha[edge]

    def margin(self, edge, var):
        """``u_{var | D}`` for ``var`` in the conditioned pair of ``edge``."""
        if var not in edge.conditioned:
            raise ValueError(f"variable {var} is not conditioned in edge {edge}")
        if edge.level == 1:
            return self.u[..., var - 1]
        key = (edge, var)
        if key not in self._margin:
            pa, pb = self.graph.parents[edge]
            par = pa if var in pa.conditioned else pb
            other = par.b if par.a == var else par.a
            val = h_function(
                self.spec(par).family, self.margin(par, var), self.margin(par, other),
                self.alpha(par), validate=False,
            )
            self._margin[key] = np.clip(val, CLIP_EPS, 1.0 - CLIP_EPS)
        return self._margin[key]

    def edge_log_density(self, edge):
        return copula_log_density(
            self.spec(edge).family, self.margin(edge, edge.a), self.margin(edge, edge.b),
            self.alpha(edge), validate=False,
        )


def conditional_margin(graph, specs, u, w, edge, side):
    """Conditional pseudo-observation ``u_{side | D}`` of ``edge = (a, b | D)``.

    Tree-1 edges return ``u_side`` itself; higher trees apply the h-function of
    the parent edge containing ``side`` to the parent's own conditional
    margins.
    """
    edge = Edge.parse(edge)
    return VineEvaluator(graph, specs, u, w).margin(edge, side)


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise BoundaryError("vine densities need pseudo-observations strictly inside (0, 1)")


def vine_log_density(graph, specs, u, w):
    """Log of the vine copula density: sum of edge log densities over all trees."""
    _check_u(u)
    ev = VineEvaluator(graph, specs, u, w)
    return sum(ev.edge_log_density(e) for e in graph.edges)


def sub_log_density(graph, specs, edge, u, w):
    """Log density of the variables ``n(edge)``: the edge and all its ancestors.

    ``u`` holds all ``J`` columns; only those in the edge's node set are used.
    """
    edge = Edge.parse(edge)
    u = np.asarray(u, dtype=float)
    cols = [j - 1 for j in sorted(edge.nodes)]
    _check_u(u[..., cols])
    ev = VineEvaluator(graph, specs, u, w)
    return sum(ev.edge_log_density(e) for e in graph.closure(edge))
