"""Command-line entry point: ``dense-inla {fit,simulate,plot}``.

Exit codes: 0 success, 1 input error, 2 numerical failure or non-convergence.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from dense_inla.errors import DenseInlaError, NotConverged, NumericalFailure, RankMismatch
from dense_inla.gmrf import InteractionType, StructureMatrix, build_besag, build_rw
from dense_inla.inference import InferenceOptions, fit
from dense_inla.io import (
    MARGINAL_COLUMNS,
    DataTable,
    marginal_rows,
    parse_config_file,
    parse_graph_file,
    read_data_csv,
    read_matrix_file,
    read_rows,
    write_data_csv,
    write_graph_file,
    write_rows,
)
from dense_inla.likelihood import CountData, PoissonLikelihood
from dense_inla.model import HYPER_NAMES, ModelSpec, PriorSpec, assemble_model, build_design_matrix
from dense_inla.simulate import SimulationSpec, generate_lattice_graph, simulate_dataset

logger = logging.getLogger("dense_inla")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


def _structure(decl, default, cfg):
    """Builder structure, or a user matrix when the block names one."""
    if "structure" in decl.options:
        R = read_matrix_file(cfg.resolve(decl.options["structure"]))
        if R.shape[0] != R.shape[1]:
            raise DenseInlaError(f"structure on line {decl.line} is not square")
        k = decl.options.get("rankdef", default.nullity)
        r = StructureMatrix(0.5 * (R + R.T), nullity=k, kind=default.kind)
    else:
        r = default
        k = decl.options.get("rankdef", r.nullity)
        if k != r.nullity:
            raise RankMismatch(
                f"block {decl.type} on line {decl.line} declares rankdef={k}, structure has {r.nullity}"
            )
    _ = r.pinv  # validates the declared rank deficiency
    return r


def _build(cfg, table: DataTable, graph):
    n = cfg.n if cfg.n is not None else int(table.time.max(initial=0))
    prior = PriorSpec(cfg.prior, cfg.U1, cfg.U2, cfg.a1, cfg.a2)
    spec = ModelSpec(
        n, graph.n_nodes, InteractionType(cfg.interaction_kind, cfg.rw_order), graph, K=table.K, prior=prior
    )
    r_time = _structure(cfg.block("rw"), build_rw(n, cfg.rw_order), cfg)
    r_space = _structure(cfg.block("besag"), build_besag(graph), cfg)
    design = build_design_matrix(spec, table.time, table.space, table.Z)
    return assemble_model(spec, design, r_time, r_space)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_fit(args):
    cfg = parse_config_file(args.config)
    threads = args.threads if args.threads is not None else cfg.threads
    seed = args.seed if args.seed is not None else cfg.seed
    out = Path(args.out or cfg.out or ".")
    graph = parse_graph_file(args.graph)
    table = read_data_csv(args.data, cfg.offset)
    model = _build(cfg, table, graph)
    lik = PoissonLikelihood(CountData(table.y, table.E, table.time, table.space))
    opts = InferenceOptions(strategy=cfg.strategy, seed=seed, threads=threads)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        res = fit(model, lik, opts)
    except (NotConverged, NumericalFailure) as exc:
        diag = {"error": type(exc).__name__, "message": str(exc)}
        last = getattr(exc, "last", None)
        if last is not None:
            diag["last_iterate"] = np.asarray(last).tolist()
        _write_json(out / "diagnostics.json", diag)
        raise
    total = time.perf_counter() - t0
    write_rows(out / "marginals.csv", MARGINAL_COLUMNS, marginal_rows(res.latent_marginals))
    names = list(HYPER_NAMES)
    cols = ["point", "axis", "z"] + names + ["log_post", "weight"]
    rows = []
    for k, p in enumerate(res.theta_points):
        row = {"point": k + 1, "axis": p.axis + 1, "z": p.z, "log_post": p.log_post, "weight": p.weight}
        row.update(dict(zip(names, (float(v) for v in p.theta))))
        rows.append(row)
    write_rows(out / "hyper.csv", cols, rows)
    _write_json(
        out / "criteria.json",
        {
            "dic": res.dic,
            "log_mlik": res.log_mlik,
            "theta_mode": dict(zip(names, res.theta_mode.tolist())),
            "runtime": dict(res.timings, total=total),
        },
    )
    _write_json(out / "diagnostics.json", res.diagnostics)
    print(f"dic={res.dic:.3f} log_mlik={res.log_mlik:.3f} -> {out}")
    return EXIT_OK


def cmd_simulate(args):
    graph = parse_graph_file(args.graph) if args.graph else generate_lattice_graph(args.m)
    if graph.n_nodes != args.m:
        raise DenseInlaError(f"graph has {graph.n_nodes} nodes but --m is {args.m}")
    spec = SimulationSpec(
        n=args.n,
        m=args.m,
        interaction=InteractionType(args.type, args.order),
        precisions=tuple(args.precisions),
        intercept=args.intercept,
        graph=graph,
        seed=args.seed if args.seed is not None else 0,
        E=args.E,
    )
    data, truth = simulate_dataset(spec)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    table = DataTable(data.time, data.space, data.y, data.E, np.zeros((data.y.size, 0)))
    write_data_csv(out / "data.csv", table)
    model = assemble_model(spec.model_spec())
    rows = [
        {"element": e + 1, "block": b, "index": i, "value": float(v)}
        for e, ((b, i), v) in enumerate(zip(model.layout.labels(), truth))
    ]
    write_rows(out / "truth.csv", ("element", "block", "index", "value"), rows)
    if not args.graph:
        write_graph_file(out / "graph.txt", graph)
    print(f"wrote {data.y.size} observations to {out / 'data.csv'}")
    return EXIT_OK


def cmd_plot(args):
    """Tidy temporal, spatial and interaction summaries from ``marginals.csv``."""
    out = Path(args.out or ".")
    rows = read_rows(out / "marginals.csv")
    cols = ("block", "mean", "sd", "q025", "q50", "q975")
    temporal = [dict(r, time=r["index"]) for r in rows if r["block"] in ("alpha", "gamma")]
    spatial = [dict(r, space=r["index"]) for r in rows if r["block"] in ("delta", "phi")]
    write_rows(out / "temporal.csv", ("time",) + cols, temporal)
    write_rows(out / "spatial.csv", ("space",) + cols, spatial)
    eps = [r for r in rows if r["block"] == "epsilon"]
    m = sum(1 for r in rows if r["block"] == "delta")
    if eps and m:
        inter = [dict(r, time=(r["index"] - 1) // m + 1, space=(r["index"] - 1) % m + 1) for r in eps]
        write_rows(out / "interaction.csv", ("time", "space") + cols, inter)
    print(f"wrote plot tables to {out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="dense-inla", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model to a data file")
    f.add_argument("--config", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--graph", required=True)
    f.add_argument("--out")
    f.add_argument("--threads", type=int)
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="simulate a dataset from the model priors")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--type", type=int, default=4, choices=(1, 2, 3, 4))
    s.add_argument("--order", type=int, default=2, choices=(1, 2))
    s.add_argument("--precisions", type=float, nargs=5, default=list(SimulationSpec.precisions),
                   metavar=("ALPHA", "GAMMA", "DELTA", "PHI", "EPS"))
    s.add_argument("--intercept", type=float, default=SimulationSpec.intercept)
    s.add_argument("--E", type=float, default=1.0)
    s.add_argument("--graph")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    pl = sub.add_parser("plot", help="write tidy summary tables from a fit directory")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (NotConverged, NumericalFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DenseInlaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
