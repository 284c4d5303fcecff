"""Command-line interface: fit, compare, cluster, predict, simulate, benchmark.

Every subcommand resolves its defaults, echoes the effective configuration
into its output artifact, and exits 0 only when the computation converged or
completed (2 on non-convergence, with the partial artifact still written).
The environment variable ``COLSBM_SEED`` overrides ``--seed`` when set.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .dataio import canonical_json, fit_artifact, load_collection, read_fit, write_fit
from .model import EMISSIONS, NetworkCollection
from .partition import clust2coll
from .predict import prediction_experiment
from .scenarios import SCENARIOS, ScenarioConfig, run_scenario, summarize_scenario
from .selection import JOINT_VARIANTS, SearchConfig, compare_variants, model_search
from .simulate import simulate

PREDICT_MODELS = JOINT_VARIANTS + ("sep",)


def _resolve_seed(seed: int) -> int:
    env = os.environ.get("COLSBM_SEED")
    return int(env) if env else int(seed)


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--qmin", type=int, default=1, help="smallest block count")
    p.add_argument("--qmax", type=int, default=8, help="largest block count")
    p.add_argument("--best-k", type=int, default=3,
                   help="fits kept per block count during the forward search")
    p.add_argument("--thresholds", type=_float_list,
                   default=(0.0, 1e-3, 1e-2, 5e-2, 1e-1),
                   help="comma-separated absolute-spectral-gap thresholds")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker count hint; output is identical for any value")


def _search_config(args) -> SearchConfig:
    if args.threads < 1:
        raise SystemExit("--threads must be at least 1")
    return SearchConfig(q_min=args.qmin, q_max=args.qmax, best_k=args.best_k,
                        thresholds=args.thresholds,
                        seed=_resolve_seed(args.seed))


def _search_echo(args, command: str) -> dict:
    # --threads is deliberately absent: artifacts are byte-identical for any
    # worker count, so it is execution detail rather than configuration.
    return {
        "command": command,
        "manifest": args.manifest,
        "q_min": args.qmin,
        "q_max": args.qmax,
        "best_k": args.best_k,
        "thresholds": list(args.thresholds),
        "seed": _resolve_seed(args.seed),
    }


def _load(args) -> NetworkCollection:
    coll = load_collection(args.manifest)
    emission = getattr(args, "emission", None)
    if emission and emission != coll.emission:
        coll = NetworkCollection(coll.networks, emission)
    return coll


def _cmd_fit(args) -> int:
    coll = _load(args)
    cfg = _search_config(args)
    res = model_search(coll, args.model, cfg)
    config = _search_echo(args, "fit")
    config.update(model=args.model, emission=coll.emission,
                  emit_tau=bool(args.emit_tau))
    art = fit_artifact(res.best.fit, args.model, res.best.bic_l, config,
                       cfg.seed, emit_tau=args.emit_tau)
    write_fit(art, args.output)
    return 0 if res.best.fit.converged else 2


def _cmd_compare(args) -> int:
    coll = _load(args)
    cfg = _search_config(args)
    cmp_ = compare_variants(coll, cfg)
    config = _search_echo(args, "compare")
    config.update(emission=coll.emission)
    art = {
        "scores": {v: float(s) for v, s in cmp_.scores.items()},
        "sep_score": float(cmp_.sep_score),
        "best_variant": cmp_.best_variant,
        "verdict": cmp_.verdict,
        "q_hat": {v: int(r.best.fit.params.Q) for v, r in cmp_.results.items()},
        "q_hat_sep": [int(q) for _, q, _ in cmp_.sep_fits],
        "config": config,
        "version": __version__,
    }
    write_fit(art, args.output)
    fits = [r.best.fit for r in cmp_.results.values()]
    fits += [f for f, _, _ in cmp_.sep_fits]
    return 0 if all(f.converged for f in fits) else 2


def _cmd_cluster(args) -> int:
    coll = _load(args)
    cfg = _search_config(args)
    part = clust2coll(coll, args.model, cfg)
    config = _search_echo(args, "cluster")
    config.update(model=args.model, emission=coll.emission)
    art = {
        "groups": [list(g) for g in part.groups],
        "group_q": [int(sf.fit.params.Q) for sf in part.group_fits],
        "score": float(part.score),
        "dendrogram": part.trace,
        "config": config,
        "version": __version__,
    }
    write_fit(art, args.output)
    return 0 if all(sf.fit.converged for sf in part.group_fits) else 2


def _cmd_predict(args) -> int:
    coll = _load(args)
    cfg = _search_config(args)
    models = tuple(args.models.split(","))
    if any(m not in PREDICT_MODELS for m in models):
        raise SystemExit(f"--models must name models among {PREDICT_MODELS}")
    rows = prediction_experiment(coll, cfg, args.k_grid, args.mask_mode,
                                 args.replicates, variants=models,
                                 target=args.target)
    pd.DataFrame(rows).to_csv(args.output, index=False)
    config = _search_echo(args, "predict")
    config.update(mask_mode=args.mask_mode, k_grid=list(args.k_grid),
                  replicates=args.replicates, models=list(models),
                  target=args.target, version=__version__)
    write_fit(config, str(args.output) + ".config.json")
    return 0


def _cmd_simulate(args) -> int:
    with open(args.params) as fh:
        params = json.load(fh)
    seed = _resolve_seed(args.seed)
    delta = params.get("delta")
    permutations = params.get("permutations")
    if permutations is not None:
        permutations = tuple(tuple(int(i) for i in p) for p in permutations)
    coll, truth = simulate(
        args.variant, tuple(params["sizes"]), int(params["Q"]),
        np.asarray(params["pi"], dtype=float),
        np.asarray(params["alpha"], dtype=float),
        None if delta is None else np.asarray(delta, dtype=float),
        seed=seed,
        emission=params.get("emission", "bernoulli"),
        directed=bool(params.get("directed", True)),
        permutations=permutations)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for m, net in enumerate(coll.networks):
        name = f"network_{m:02d}"
        rows = "\n".join(",".join(str(int(v)) for v in row)
                         for row in net.adjacency)
        (outdir / f"{name}.csv").write_text(rows + "\n")
        entries.append({"name": name, "path": f"{name}.csv", "format": "dense"})
    manifest = {"emission": coll.emission, "directed": coll.directed,
                "networks": entries}
    (outdir / "manifest.json").write_text(canonical_json(manifest) + "\n")
    config = {"command": "simulate", "variant": args.variant, "seed": seed,
              "params_file": args.params, "params": params}
    art = {
        "memberships": [z for z in truth.memberships],
        "pi": truth.params.pi,
        "alpha": truth.params.alpha,
        "delta": truth.params.delta,
        "support": [[bool(v) for v in row] for row in truth.params.support],
        "permutations": [list(p) for p in truth.permutations],
        "config": config,
        "version": __version__,
    }
    write_fit(art, outdir / "truth.json")
    return 0


def _cmd_benchmark(args) -> int:
    replicates = 10 if args.fast else args.replicates
    cfg = ScenarioConfig(args.scenario, epsilon=args.epsilon,
                         replicates=replicates, seed=_resolve_seed(args.seed))
    df = run_scenario(cfg)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    df.to_csv(outdir / "results.csv", index=False)
    summarize_scenario(df).to_csv(outdir / "summary.csv", index=False)
    config = {"command": "benchmark", "scenario": args.scenario,
              "epsilon": list(cfg.epsilon), "replicates": replicates,
              "fast": bool(args.fast), "seed": cfg.seed,
              "variants": list(cfg.variants), "version": __version__}
    write_fit(config, outdir / "config.json")
    return 0


def _cmd_plot_data(args) -> int:
    art = read_fit(args.fit)
    coll = load_collection(args.manifest)
    memberships = art["memberships"]
    if len(memberships) != coll.M:
        raise SystemExit("fit artifact does not cover the manifest's networks")
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    for m, net in enumerate(coll.networks):
        z = np.asarray(memberships[m], dtype=int)
        if len(z) != net.n:
            raise SystemExit(f"network {m}: fit covers {len(z)} nodes, "
                             f"file has {net.n}")
        order = np.argsort(z, kind="stable")
        X = net.adjacency[np.ix_(order, order)]
        name = net.name or f"network_{m:02d}"
        rows = "\n".join(",".join(f"{v:g}" for v in row) for row in X)
        (outdir / f"{name}_sorted.csv").write_text(rows + "\n")
        labels = (net.node_labels if net.node_labels is not None
                  else tuple(str(i) for i in range(net.n)))
        block_rows = ["node,block"]
        block_rows += [f"{labels[i]},{z[i]}" for i in order]
        (outdir / f"{name}_blocks.csv").write_text("\n".join(block_rows) + "\n")
    alpha = np.asarray(art["alpha"], dtype=float)
    lines = ["q,r,alpha"]
    lines += [f"{q},{r},{alpha[q, r]:.17g}"
              for q in range(alpha.shape[0]) for r in range(alpha.shape[1])]
    (outdir / "alpha.csv").write_text("\n".join(lines) + "\n")
    config = {"command": "plot-data", "fit": args.fit,
              "manifest": args.manifest, "version": __version__}
    write_fit(config, outdir / "config.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jointsbm",
        description="Joint stochastic block models for collections of networks.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one joint model and write a JSON artifact")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--model", choices=JOINT_VARIANTS, default="iid")
    p.add_argument("--emission", choices=EMISSIONS, default=None,
                   help="override the manifest's emission kind")
    _add_search_flags(p)
    p.add_argument("--emit-tau", action="store_true",
                   help="include the full membership probabilities")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("compare",
                       help="score all joint models against the separate baseline")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--emission", choices=EMISSIONS, default=None)
    _add_search_flags(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("cluster",
                       help="partition the collection into homogeneous groups")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--model", choices=JOINT_VARIANTS, default="iid")
    p.add_argument("--emission", choices=EMISSIONS, default=None)
    _add_search_flags(p)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("predict",
                       help="hide cells, refit, score them; tidy CSV out")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--mask-mode", choices=("links", "dyads"), default="dyads")
    p.add_argument("--k-grid", type=_float_list, default=(0.2, 0.4, 0.6))
    p.add_argument("--replicates", type=int, default=30)
    p.add_argument("--models", default=",".join(PREDICT_MODELS))
    p.add_argument("--target", type=int, default=0)
    p.add_argument("--emission", choices=EMISSIONS, default=None)
    _add_search_flags(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("simulate",
                       help="draw a collection and write files plus a manifest")
    p.add_argument("variant", choices=JOINT_VARIANTS)
    p.add_argument("params", help="JSON file with sizes, Q, pi, alpha, ...")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("benchmark", help="run a named simulation scenario")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--epsilon", type=_float_list, default=None,
                   help="comma-separated grid values (default: the full grid)")
    p.add_argument("--replicates", type=int, default=30)
    p.add_argument("--fast", action="store_true",
                   help="10 replicates instead of 30")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("plot-data",
                       help="block-sorted matrices and connectivity heat-map data")
    p.add_argument("fit", help="fit artifact JSON")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_plot_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
