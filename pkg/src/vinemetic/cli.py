"""Command-line interface: ``vine-metic {simulate|fit|replicate|tau|rerun}``.

Every command that writes ``-o PATH`` also writes ``PATH.manifest.json``
recording the arguments, seed, tool version and wall-clock time. Outputs
themselves hold no timing, so rerunning a manifest reproduces them byte for
byte.

Exit codes: 0 success, 2 usage or invalid input, 3 a fit stage failed,
4 a numeric failure.
"""

import argparse
import json
import logging
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
from scipy.stats import kendalltau

from vinemetic.copulas import CopulaSpec, NumericError
from vinemetic.estimation import (
    FitConfig,
    FitError,
    VarianceError,
    fit_all,
    tau_edge,
    tau_unconditional,
)
from vinemetic.marginals import MeticDataset, read_csv, write_csv
from vinemetic.replication import MIN_REPLICATES, replicate, write_table
from vinemetic.simulation import (
    Sim1Config,
    Sim2Config,
    apply_censoring,
    sample_vine,
    simulate_nested_clayton,
    simulate_sim1,
    stream,
)
from vinemetic.vine import Edge, VineGraph, build_cvine, build_dvine

logger = logging.getLogger("vinemetic")

EXIT_OK, EXIT_USAGE, EXIT_STAGE, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _load_json(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(args, argv, outputs, started):
    if not args.output:
        return
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "config": getattr(args, "config", None),
        "inputs": [p for p in (getattr(args, "data", None), getattr(args, "fit", None)) if p],
        "outputs": [str(p) for p in outputs],
        "seed": getattr(args, "seed", None),
        "version": _version(),
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    _dump_json(manifest, f"{args.output}.manifest.json")


def _config_fields(cls, cfg):
    known = set(cls.__dataclass_fields__)
    bad = sorted(set(cfg) - known)
    if bad:
        raise UsageError(f"unknown {cls.__name__} fields {bad}; allowed {sorted(known)}")
    return {k: tuple(map(tuple, v)) if isinstance(v, list) and v and isinstance(v[0], list)
            else tuple(v) if isinstance(v, list) else v for k, v in cfg.items()}


# ---------------------------------------------------------------------------
# simulate


def _simulate_vine(cfg, n, seed):
    """Generic generator: vine copula, Weibull margins, exponential censoring."""
    try:
        vine = cfg["vine"]
        margins = cfg["margins"]
    except KeyError as exc:
        raise UsageError(f"vine config needs key {exc}") from None
    graph, specs = VineGraph.from_dict(vine)
    missing = [str(e) for e in graph.edges if e not in specs]
    if missing:
        raise UsageError(f"vine config has no copula for edges {missing}")
    if len(margins) != graph.J:
        raise UsageError(f"need {graph.J} margins, got {len(margins)}")
    d_w = {len(s.gamma) for s in specs.values()}
    if d_w != {1}:
        raise UsageError("the vine generator has no covariates; every gamma must have length 1")
    U = sample_vine(graph, specs, np.ones(1), n, seed)
    T = np.column_stack([
        m["scale"] * (-np.log(U[:, j])) ** (1.0 / m["shape"]) for j, m in enumerate(margins)
    ])
    mean = cfg.get("censor_mean")
    A = np.inf if mean is None else stream(seed, "A").exponential(mean, n)
    return apply_censoring(T, A, np.zeros((n, 0))), U


def cmd_simulate(args):
    cfg = _load_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.n is None:
        raise UsageError("simulate needs --n")
    cfg["n"] = args.n
    if args.scenario == "sim1":
        data, latent = simulate_sim1(Sim1Config(**_config_fields(Sim1Config, cfg)), True)
        U = latent["U"]
    elif args.scenario == "sim2":
        data, latent = simulate_nested_clayton(Sim2Config(**_config_fields(Sim2Config, cfg)), True)
        U = latent["U"]
    else:
        data, U = _simulate_vine(cfg, cfg["n"], cfg.get("seed", 0))
    rates = data.censoring_rates()
    print("censoring rates: " + ", ".join(f"T{j + 1} {100 * r:.1f}%" for j, r in enumerate(rates)))
    J = data.J
    for j in range(J - 1):
        tau = kendalltau(U[:, j], U[:, J - 1])[0]
        print(f"latent Kendall tau ({j + 1},{J}): {tau:.3f}")
    outputs = []
    if args.output:
        write_csv(data, args.output)
        outputs.append(args.output)
    return outputs


# ---------------------------------------------------------------------------
# fit


def parse_pooled(text):
    """``"1,3;2,3"`` to ``[[1, 2]]``: tree-1 edges sharing one copula."""
    if not text:
        return []
    edges = [Edge.parse(part.strip()) for part in text.split(";") if part.strip()]
    J = {e.b for e in edges}
    if any(e.given for e in edges) or len(J) != 1:
        raise UsageError(f"--pooled takes tree-1 edges with one terminal event, got {text!r}")
    return [sorted(e.a for e in edges)]


def _model_graph(model, J):
    structure = model.get("structure", "cvine")
    if structure == "cvine":
        return build_cvine(J)
    if structure == "dvine":
        return build_dvine(J)
    return VineGraph.from_dict(model["vine"])[0]


def cmd_fit(args):
    model = _load_json(args.config)
    if args.data is None:
        raise UsageError("fit needs --data")
    try:
        data = read_csv(args.data)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    p = data.Z.shape[1]
    for key in ("l_cols", "w_cols"):
        cols = model.get(key)
        if cols is not None:
            bad = [c for c in cols if not 1 <= c <= p]
            if bad:
                raise UsageError(f"{key} {bad} outside the data's covariate columns Z1..Z{p}")
    data = MeticDataset(
        data.X, data.delta, data.Z,
        l_cols=[c - 1 for c in model["l_cols"]] if "l_cols" in model else None,
        w_cols=[c - 1 for c in model["w_cols"]] if "w_cols" in model else None,
        w_intercept=model.get("w_intercept", True),
    )
    J = data.J
    graph = _model_graph(model, J)
    families = model.get("families")
    if families is None:
        family = model.get("family", "clayton")
        families = {str(e): family for e in graph.edges}
    gs = model.get("g")
    if isinstance(gs, str):
        gs = [gs] * J
    if gs is not None and len(gs) != J:
        raise UsageError(f"need {J} transformations in 'g', got {len(gs)}")
    fit_cfg = dict(model.get("fit", {}))
    if args.seed is not None:
        fit_cfg["seed"] = args.seed
    pooled = parse_pooled(args.pooled) if args.pooled else model.get("pooled", [])
    fit_cfg["pooled"] = pooled
    if args.variance:
        fit_cfg["variance"] = args.variance
    try:
        config = FitConfig(**fit_cfg)
    except TypeError as exc:
        raise UsageError(f"bad fit settings: {exc}") from None
    status = EXIT_OK
    try:
        result = fit_all(data, graph, families, gs, config)
    except FitError as exc:
        logger.error("fit failed: %s", exc)
        result = exc.partial
        status = EXIT_STAGE
        if result is None:
            return [], status
    out = result.to_dict() if status == EXIT_OK else _partial_dict(result)
    out["status"] = "ok" if status == EXIT_OK else "stage failure"
    outputs = []
    if args.output:
        _dump_json(out, args.output)
        outputs.append(args.output)
        stem = Path(args.output).with_suffix("")
        for j, m in enumerate(result.margins):
            if m is None:
                continue
            path = f"{stem}.baseline{j + 1}.csv"
            with open(path, "w") as fh:
                fh.write("time,cumulative\n")
                for t, c in zip(m.jump_times.tolist(), m.cumulative().tolist()):
                    fh.write(f"{t!r},{c!r}\n")
            outputs.append(path)
    for st in result.stages:
        for prm in st.to_dict()["parameters"]:
            print(f"{st.label:16s} {prm['name']:22s} {prm['estimate']: .5f}  ({prm['se']:.5f})")
    return outputs, status


def _partial_dict(result):
    return {
        "J": result.graph.J,
        "vine": result.graph.to_dict(result.specs),
        "margins": [m.to_dict() if m is not None else None for m in result.margins],
        "stages": [s.to_dict() for s in result.stages],
        "config": result.config.to_dict() if result.config else None,
    }


# ---------------------------------------------------------------------------
# replicate and tau


def cmd_replicate(args):
    if args.R is None or args.n is None:
        raise UsageError("replicate needs --R and --n")
    if args.R < MIN_REPLICATES:
        raise UsageError(f"refusing to summarize {args.R} replicates; need at least {MIN_REPLICATES}")
    cfg = _load_json(args.config)
    config = FitConfig(**cfg.get("fit", {}))
    rows = replicate(args.scenario, args.n, args.R, args.seed or 0, args.threads, config)
    print(f"{'parameter':22s} {'method':6s} {'rBIAS':>7s} {'rESD':>7s} {'rASE':>7s} "
          f"{'ECP':>6s} {'rRMSE':>7s}")
    for r in rows:
        print(f"{r['parameter']:22s} {r['method']:6s} {r['rBIAS']:7.2f} {r['rESD']:7.2f} "
              f"{r['rASE']:7.2f} {r['ECP']:6.1f} {r['rRMSE']:7.2f}")
    if args.output:
        write_table(rows, args.output)
        return [args.output]
    return []


def _gamma_cov(stages, edge):
    for st in stages:
        names = [p["name"] for p in st["parameters"]]
        idx = [k for k, nm in enumerate(names) if nm.startswith("gamma_(")
               and edge in nm[len("gamma_("):nm.index(")")].split("=")]
        if idx and st.get("covariance") is not None:
            cov = np.asarray(st["covariance"], dtype=float)
            return cov[np.ix_(idx, idx)]
    return None


def cmd_tau(args):
    if args.fit is None:
        raise UsageError("tau needs --fit")
    fit = _load_json(args.fit)
    graph, specs = VineGraph.from_dict(fit["vine"])
    w = None
    if args.w:
        w = np.array([float(v) for v in args.w.split(",")])
    report = {"edges": []}
    for e in graph.edges:
        spec = specs[e]
        we = np.ones(len(spec.gamma)) if w is None else w
        if we.size != spec.gamma.size:
            raise UsageError(f"--w has {we.size} entries; edge {e} needs {spec.gamma.size}")
        cov = _gamma_cov(fit.get("stages", []), str(e))
        tau, se = tau_edge(spec, we, cov)
        report["edges"].append({"edge": str(e), "family": spec.family.value, "tau": tau,
                                "se": None if np.isnan(se) else se})
        print(f"tau {str(e):10s} {tau: .4f}" + ("" if np.isnan(se) else f"  ({se:.4f})"))
    if args.unconditional or graph.J == 3:
        if graph.J != 3:
            raise UsageError(f"the unconditional tau is supported for J = 3 only, got J = {graph.J}")
        tau, se = tau_unconditional(
            {e: CopulaSpec(s.family, s.gamma) for e, s in specs.items()},
            w, args.samples, args.seed or 0,
        )
        report["tau_12"] = {"tau": tau, "mc_se": se}
        print(f"tau 1,2 (unconditional) {tau: .4f}  (MC {se:.4f})")
    if args.output:
        _dump_json(report, args.output)
        return [args.output]
    return []


def cmd_rerun(args):
    manifest = _load_json(args.manifest)
    argv = manifest.get("argv")
    if not argv:
        raise UsageError(f"{args.manifest} records no arguments")
    return main(argv)


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="vine-metic", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("-o", "--output")

    p = sub.add_parser("simulate", help="generate a dataset")
    p.add_argument("scenario", choices=["sim1", "sim2", "vine"])
    p.add_argument("--n", type=int, required=True)
    common(p)

    p = sub.add_parser("fit", help="fit a vine model to a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--pooled", help='tree-1 edges sharing one copula, e.g. "1,3;2,3"')
    p.add_argument("--variance", choices=["sandwich", "bootstrap", "none"])
    common(p)

    p = sub.add_parser("replicate", help="replication study summary table")
    p.add_argument("scenario", choices=["sim1", "sim2"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--R", type=int, required=True)
    common(p)

    p = sub.add_parser("tau", help="Kendall's tau report from a fit result")
    p.add_argument("--fit", required=True)
    p.add_argument("--w", help="comma-separated copula covariates (intercept included)")
    p.add_argument("--unconditional", action="store_true")
    p.add_argument("--samples", type=int, default=100_000)
    common(p)

    p = sub.add_parser("rerun", help="repeat the command recorded in a manifest")
    p.add_argument("manifest")
    return parser


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "replicate": cmd_replicate,
            "tau": cmd_tau, "rerun": cmd_rerun}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        out = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"vine-metic: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FitError as exc:
        print(f"vine-metic: stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (NumericError, ArithmeticError, VarianceError) as exc:
        print(f"vine-metic: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"vine-metic: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "rerun":
        return out
    status = EXIT_OK
    if isinstance(out, tuple):
        out, status = out
    _write_manifest(args, argv, out, started)
    return status


if __name__ == "__main__":
    sys.exit(main())
