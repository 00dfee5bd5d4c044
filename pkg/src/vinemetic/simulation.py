"""Data generators for vine models of event times censored by a terminal event.

Random numbers come from PCG64 streams keyed by ``(seed, coordinate)``, where
a coordinate is a named quantity such as a covariate or the uniform driving
one event type. Within a stream the i-th draw belongs to subject i, so the
first ``n`` subjects of a larger sample coincide with a smaller one.
"""

import zlib
from dataclasses import asdict, dataclass

import numpy as np

from vinemetic.copulas import CLIP_EPS, CopulaSpec, h_inverse
from vinemetic.marginals import MeticDataset
from vinemetic.vine import VineEvaluator, build_cvine, normalize_specs


def stream(seed, coordinate):
    """Independent generator for one named coordinate of one seed."""
    key = zlib.crc32(str(coordinate).encode())
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), key])))


def sample_vine(graph, specs, w, n, seed, given=None):
    """Draw ``n`` vectors from the vine copula by sequential h-inversion.

    Parameters
    ----------
    graph : VineGraph
    specs : dict
        ``CopulaSpec`` for every edge.
    w : ndarray, shape (n, d_W) or (d_W,)
        Copula covariates.
    n : int
    seed : int
    given : dict, optional
        Values to use for the first variable of the sampling order (the
        terminal event) instead of fresh uniforms.

    Returns
    -------
    ndarray, shape (n, J)
    """
    specs = normalize_specs(specs)
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = np.broadcast_to(w, (n, w.size))
    J = graph.J
    order = graph.sampling_order()
    u = np.full((n, J), 0.5)
    edges = graph.edges
    placed = set()
    for v in order:
        if given and v in given:
            p = np.asarray(given[v], dtype=float)
        else:
            p = stream(seed, f"vine-u{v}").random(n)
        links = sorted(
            (e for e in edges if v in e.conditioned and (e.nodes - {v}) <= placed),
            key=lambda e: e.level, reverse=True,
        )
        val = np.clip(p, CLIP_EPS, 1.0 - CLIP_EPS)
        ev = VineEvaluator(graph, specs, u, w)
        for e in links:
            other = e.b if e.a == v else e.a
            spec = specs[e]
            val = h_inverse(spec.family, val, ev.margin(e, other), ev.alpha(e), validate=False)
            val = np.clip(val, CLIP_EPS, 1.0 - CLIP_EPS)
        u[:, v - 1] = val if links else p
        placed.add(v)
    return u


def apply_censoring(T, A, Z=None, **kwargs):
    """Observed data from latent times.

    The terminal event (last column) is censored by ``A`` and every
    nonterminal event is censored by the observed terminal time.
    """
    T = np.asarray(T, dtype=float)
    A = np.broadcast_to(np.asarray(A, dtype=float), T.shape[:1])
    XJ = np.minimum(T[:, -1], A)
    dJ = (T[:, -1] <= A).astype(int)
    Xn = np.minimum(T[:, :-1], XJ[:, None])
    dn = (T[:, :-1] <= XJ[:, None]).astype(int)
    X = np.column_stack([Xn, XJ])
    D = np.column_stack([dn, dJ])
    if Z is None:
        Z = np.zeros((T.shape[0], 0))
    return MeticDataset(X, D, Z, **kwargs)


@dataclass
class Sim1Config:
    """Three event types with covariate-dependent copulas and PH margins.

    Margins: ``S_j(t | Z) = exp(-e^{zeta_j} t e^{beta_j'Z})``. Copulas: Gumbel
    on (1, 3), Clayton on (2, 3) and Frank on (1, 2 | 3), each with
    ``alpha = g(gamma' (1, Z1, Z2))``.
    """

    n: int = 500
    seed: int = 1
    zeta: tuple = (0.1, 0.4, -0.2)
    beta: tuple = ((2.0, 2.0), (2.0, 2.0), (2.0, 2.0))
    gamma13: tuple = (0.85, 1.0, 0.1)
    gamma23: tuple = (0.29, 0.1, 1.0)
    gamma12_3: tuple = (1.86, 1.0, 1.0)
    families: tuple = ("gumbel", "clayton", "frank")
    a_low: float = 1.0
    a_high: float = 6.0
    z1_low: float = 1.0
    z1_high: float = 2.0
    z2_prob: float = 1.0 / 3.0

    def specs(self):
        return {
            "1,3": CopulaSpec(self.families[0], self.gamma13),
            "2,3": CopulaSpec(self.families[1], self.gamma23),
            "1,2|3": CopulaSpec(self.families[2], self.gamma12_3),
        }

    def to_dict(self):
        return asdict(self)


def simulate_sim1(config=None, return_latent=False):
    """Generate one dataset of the covariate-dependent three-event design."""
    c = config or Sim1Config()
    n = c.n
    z1 = stream(c.seed, "Z1").uniform(c.z1_low, c.z1_high, n)
    z2 = (stream(c.seed, "Z2").random(n) < c.z2_prob).astype(float)
    Z = np.column_stack([z1, z2])
    A = stream(c.seed, "A").uniform(c.a_low, c.a_high, n)
    eps = stream(c.seed, "eps3").random(n)
    zeta = np.asarray(c.zeta, dtype=float)
    beta = np.asarray(c.beta, dtype=float)
    # terminal event by explicit inversion of its survival function
    T3 = np.exp(-zeta[2] - Z @ beta[2] + np.log(-np.log(1.0 - eps)))
    W = np.column_stack([np.ones(n), Z])
    graph = build_cvine(3)
    U = sample_vine(graph, c.specs(), W, n, c.seed, given={3: 1.0 - eps})
    T = np.empty((n, 3))
    for j in range(2):
        T[:, j] = np.exp(-zeta[j] - Z @ beta[j] + np.log(-np.log(U[:, j])))
    T[:, 2] = T3
    data = apply_censoring(T, A, Z)
    if return_latent:
        return data, {"T": T, "U": U, "A": A}
    return data


@dataclass
class Sim2Config:
    """Nested Clayton design with Weibull margins and exponential censoring."""

    n: int = 300
    seed: int = 1
    theta: float = 4.67
    shape: float = 2.0
    scales: tuple = (70.0, 60.0, 85.0)
    censor_mean: float = 350.0

    def specs(self):
        th = self.theta
        return {
            "1,3": CopulaSpec("clayton", [np.log(th)]),
            "2,3": CopulaSpec("clayton", [np.log(th)]),
            "1,2|3": CopulaSpec("clayton", [np.log(th / (1.0 + th))]),
        }

    def survival(self, j, t):
        return np.exp(-(np.asarray(t, dtype=float) / self.scales[j]) ** self.shape)

    def median(self, j):
        return self.scales[j] * np.log(2.0) ** (1.0 / self.shape)

    def to_dict(self):
        return asdict(self)


def simulate_nested_clayton(config=None, return_latent=False):
    """Generate one dataset from the nested Clayton model.

    Samples the equivalent vine (Clayton ``theta`` on both tree-1 edges and
    Clayton ``theta / (1 + theta)`` on ``(1, 2 | 3)``), maps through Weibull
    quantiles and applies exponential administrative censoring.
    """
    c = config or Sim2Config()
    n = c.n
    U = sample_vine(build_cvine(3), c.specs(), np.ones(1), n, c.seed)
    scales = np.asarray(c.scales, dtype=float)
    T = scales * (-np.log(U)) ** (1.0 / c.shape)
    A = stream(c.seed, "A").exponential(c.censor_mean, n)
    data = apply_censoring(T, A, np.zeros((n, 0)))
    if return_latent:
        return data, {"T": T, "U": U, "A": A}
    return data
