"""Replication studies: repeated simulate-and-fit runs and their summary tables.

Each replicate draws its own dataset from a seed derived from ``(seed, r)``,
so any replicate can be rerun alone and results do not depend on the order
in which workers finish.
"""

import csv
import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from vinemetic.copulas import Family, tau_from_alpha
from vinemetic.estimation import (
    FitConfig,
    FitError,
    fit_all,
    survival_at,
    tau_edge,
    tau_unconditional,
)
from vinemetic.simulation import Sim1Config, Sim2Config, simulate_nested_clayton, simulate_sim1
from vinemetic.vine import Edge, build_cvine

logger = logging.getLogger(__name__)

MIN_REPLICATES = 10


def replicate_seed(seed, r):
    """Seed of replicate ``r`` of a study started with ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(r)]).generate_state(1, dtype=np.uint32)[0])


def summarize(estimates, ses, truth, z=1.959963984540054):
    """Relative summary statistics in percent.

    Parameters
    ----------
    estimates : ndarray, shape (R, p)
    ses : ndarray, shape (R, p)
        Standard errors; columns of NaN give NaN ``rASE`` and ``ECP``.
    truth : array_like, shape (p,)

    Returns
    -------
    dict of ndarray
        ``rBIAS``, ``rESD``, ``rASE``, ``ECP`` and ``rRMSE``, each of length p.
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    se = np.atleast_2d(np.asarray(ses, dtype=float))
    truth = np.asarray(truth, dtype=float)
    scale = np.abs(truth)
    err = est - truth
    with np.errstate(invalid="ignore"):
        return {
            "rBIAS": 100 * err.mean(axis=0) / truth,
            "rESD": 100 * est.std(axis=0, ddof=1) / scale,
            "rASE": 100 * se.mean(axis=0) / scale,
            "ECP": np.where(np.all(np.isfinite(se), axis=0),
                            100 * np.mean(np.abs(err) <= z * se, axis=0), np.nan),
            "rRMSE": 100 * np.sqrt(np.mean(err ** 2, axis=0)) / scale,
        }


# ---------------------------------------------------------------------------
# simulation I

SIM1_FAMILIES = {"1,3": "gumbel", "2,3": "clayton", "1,2|3": "frank"}


def sim1_truth(config=None):
    """True values keyed by the parameter names used in fit results."""
    c = config or Sim1Config()
    out = {}
    for j in range(3):
        for k, b in enumerate(c.beta[j]):
            out[f"beta_{j + 1}[{k + 1}]"] = float(b)
    for label, gamma in (("1,3", c.gamma13), ("2,3", c.gamma23), ("1,2|3", c.gamma12_3)):
        for k, g in enumerate(gamma):
            out[f"gamma_({label})[{k}]"] = float(g)
    return out


def _sim1_one(args):
    n, seed, fit_config = args
    data = simulate_sim1(Sim1Config(n=n, seed=seed))
    res = fit_all(data, build_cvine(3), SIM1_FAMILIES, config=fit_config)
    out = {}
    for st in res.stages:
        se = st.se()
        for name, e, s in zip(st.names, st.estimate, se):
            if not name.startswith("logjump"):
                out[name] = (float(e), float(s))
    return out


# ---------------------------------------------------------------------------
# simulation II


def sim2_truth(config=None):
    c = config or Sim2Config()
    tau = float(tau_from_alpha(Family.CLAYTON, c.theta))
    # nested Clayton: (T1, T2) are Clayton(theta) pairs
    return {"tau_13": tau, "tau_23": tau, "tau_12": tau, "S_1": 0.5, "S_2": 0.5}


def _sim2_one(args):
    n, seed, fit_config, pooled, tau_samples = args
    c = Sim2Config(n=n, seed=seed)
    data = simulate_nested_clayton(c)
    cfg = FitConfig(**{**fit_config.__dict__, "pooled": [[1, 2]] if pooled else []})
    fams = {"1,3": "clayton", "2,3": "clayton", "1,2|3": "clayton"}
    res = fit_all(data, build_cvine(3), fams, config=cfg)
    out = {}
    w = np.ones(1)
    for j in (1, 2):
        label = "pair 1,3+2,3" if pooled else f"pair {j},3"
        st = res.stage(label)
        cov = st.cov[-1:, -1:] if st.cov is not None else None
        out[f"tau_{j}3"] = tau_edge(res.specs[Edge((j, 3))], w, cov)
    out["tau_12"] = (tau_unconditional(res.specs, n_samples=tau_samples, seed=seed)[0], np.nan)
    for j in (1, 2):
        st = res.stage("pair 1,3+2,3" if pooled else f"pair {j},3")
        cov = _margin_block(st, j)
        out[f"S_{j}"] = survival_at(res.margins[j - 1], c.median(j - 1), np.zeros(0), cov)
    return out


def _margin_block(stage, j):
    if stage.cov is None:
        return None
    idx = [k for k, name in enumerate(stage.names) if name.startswith((f"beta_{j}[", f"logjump_{j}["))]
    return stage.cov[np.ix_(idx, idx)]


# ---------------------------------------------------------------------------
# drivers


def _run(fn, jobs, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_guarded, [(fn, j) for j in jobs]))
    return [_guarded((fn, j)) for j in jobs]


def _guarded(item):
    fn, job = item
    try:
        return fn(job)
    except (FitError, ArithmeticError, ValueError) as exc:
        logger.warning("replicate failed: %s", exc)
        return None


def _collect(results, truth):
    names = list(truth)
    ok = [r for r in results if r is not None]
    est = np.array([[r[k][0] for k in names] for r in ok]).reshape(len(ok), len(names))
    se = np.array([[r[k][1] for k in names] for r in ok]).reshape(len(ok), len(names))
    return names, est, se


def replicate(scenario, n, R, seed=0, workers=1, fit_config=None, tau_samples=20_000):
    """Run a replication study.

    Parameters
    ----------
    scenario : {"sim1", "sim2"}
    n, R : int
        Sample size and number of replicates (at least 10).
    seed : int
    workers : int
        Worker processes; results do not depend on this.
    fit_config : FitConfig, optional
    tau_samples : int
        Monte Carlo size for the unconditional tau in ``sim2``.

    Returns
    -------
    list of dict
        One row per parameter (and method for ``sim2``) with the truth, the
        summary statistics and the number of successful replicates.
    """
    if R < MIN_REPLICATES:
        raise ValueError(f"need at least {MIN_REPLICATES} replicates, got {R}")
    fit_config = fit_config or FitConfig()
    seeds = [replicate_seed(seed, r) for r in range(R)]
    rows = []
    if scenario == "sim1":
        truth = sim1_truth()
        results = _run(_sim1_one, [(n, s, fit_config) for s in seeds], workers)
        rows += _rows(results, truth, "Vine", R)
    elif scenario == "sim2":
        truth = sim2_truth()
        for method, pooled in (("Vine", False), ("pVine", True)):
            jobs = [(n, s, fit_config, pooled, tau_samples) for s in seeds]
            rows += _rows(_run(_sim2_one, jobs, workers), truth, method, R)
    else:
        raise ValueError(f"unknown scenario {scenario!r}; expected 'sim1' or 'sim2'")
    return rows


def _rows(results, truth, method, R):
    names, est, se = _collect(results, truth)
    if est.shape[0] < 2:
        raise FitError(f"only {est.shape[0]} of {R} replicates succeeded")
    stats = summarize(est, se, [truth[k] for k in names])
    rows = []
    for k, name in enumerate(names):
        row = {"parameter": name, "method": method, "truth": truth[name]}
        row.update({key: float(v[k]) for key, v in stats.items()})
        row["replicates"] = int(est.shape[0])
        row["mean"] = float(est[:, k].mean())
        rows.append(row)
    return rows


def write_table(rows, path):
    """Write summary rows as CSV."""
    fields = ["parameter", "method", "truth", "mean", "rBIAS", "rESD", "rASE", "ECP", "rRMSE",
              "replicates"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{row[k]:.6g}" if isinstance(row[k], float) else row[k])
                             for k in fields})
