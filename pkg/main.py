import argparse
import logging
import os
import sys

import numpy as np

from netsim.bounds import bound_table
from netsim.coupling import write_error_trace
from netsim.desEngine import run_des, write_trajectory_csv
from netsim.dtsEngine import run_dts, write_prevalence_csv, write_states_csv
from netsim.experiments import (cost_frame, prevalence_histogram, records_frame, run_replicated_on,
                                RECORD_COLUMNS, replication_graph, step_size_sweep, summary_frame,
                                write_sweep_csv)
from netsim.graph import GraphSpec, read_edge_list, write_edge_list
from netsim.process import InitSpec, random_initial_state
from netsim.utils.tools import (ConfigError, experiment_config, init_args, load_config, parse_floats,
                                write_frame)
from netsim.utils.verify import SUITES, run_verification

EXIT_OK, EXIT_VERIFY_FAILED, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _load(args, make_dirs=True):
    config = load_config(args.config) if args.config else {}
    return init_args(args, config, make_dirs=make_dirs)


def _graph(args, cfg):
    """Graph from --graph-file, else built from the config (None: one per replication)."""
    if args.graph_file:
        if not os.path.isfile(args.graph_file):
            raise FileNotFoundError("Graph file not found: %s" % args.graph_file)
        g = read_edge_list(args.graph_file)
        return g, os.path.splitext(os.path.basename(args.graph_file))[0]
    if cfg.regenerate_graph:
        return None, cfg.graph_spec.label
    return cfg.graph_spec.build(), cfg.graph_spec.label


def cmd_generate_graph(args):
    _load(args, make_dirs=False)
    spec = GraphSpec(kind=args.kind, width=args.width, height=args.height, target_degree=args.degree,
                     root_children=args.root_children, tree_degree=args.tree_degree,
                     depth=args.depth, seed=args.graph_seed)
    g = spec.build()
    write_edge_list(g, args.output)
    print("n=%d edges=%d k=%d" % (g.n, g.n_edges, g.k))
    print("Results saved to: %s" % args.output)
    return EXIT_OK


def _dump_trajectory(args, cfg, g):
    """Replay replication 0 with its own seeds (and graph) and keep its logs."""
    if g is None:
        g = replication_graph(cfg.graph_spec, 0)
    x0 = random_initial_state(g, InitSpec(cfg.init.prevalence, seed=[cfg.master_seed, 0, 0]))
    tr = run_des(g, cfg.params, x0, cfg.t_end, np.random.default_rng([cfg.master_seed, 0, 1]))
    write_trajectory_csv(tr, args.trajectorySavePath)
    print("Results saved to: %s" % args.trajectorySavePath)
    if cfg.mode == "dts":
        dts = run_dts(g, cfg.params, x0, cfg.dts_config(cfg.h_values[0]),
                      np.random.default_rng([cfg.master_seed, 0, 2, 0]))
        write_prevalence_csv(dts, args.prevalenceSavePath)
        write_states_csv(dts, args.statesSavePath)
        print("Results saved to: %s" % args.prevalenceSavePath)
        print("Results saved to: %s" % args.statesSavePath)


def cmd_run(args):
    _load(args)
    cfg = experiment_config(args)
    g, label = _graph(args, cfg)
    result = run_replicated_on(g, cfg, progress=args.verbose)

    frame = records_frame(result.records)
    saved = [write_frame(frame[RECORD_COLUMNS], args.recordsSavePath),
             write_frame(summary_frame(result.summary, label, cfg.params.kind), args.summarySavePath),
             write_frame(cost_frame(result.summary, label, cfg.params.kind), args.costSavePath),
             write_frame(prevalence_histogram(result.records, result.n), args.histogramSavePath)]
    if cfg.mode == "coupled":
        for h, paths in result.paths.items():
            path = args.traceSavePath
            if len(result.paths) > 1:
                path = "%s_h%g.csv" % (os.path.splitext(args.traceSavePath)[0], h)
            write_error_trace(paths, path)
            saved.append(path)
    if args.dump_trajectory:
        _dump_trajectory(args, cfg, g)

    print(summary_frame(result.summary, label, cfg.params.kind).to_string(index=False))
    for path in saved:
        print("Results saved to: %s" % path)
    return EXIT_OK


def cmd_sweep(args):
    _load(args)
    cfg = experiment_config(args)
    if cfg.mode == "des":
        raise ConfigError("sweep needs run.mode dts or coupled")
    g, _ = _graph(args, cfg)
    try:
        sweep = step_size_sweep(cfg, progress=args.verbose, graph=g)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    write_sweep_csv(sweep, args.sweepSavePath)
    print(sweep.frame().to_string(index=False))
    if sweep.degenerate:
        print("slope undefined (zero error at some step size)")
    else:
        print("slope=%.3f intercept=%.3f" % (sweep.slope, sweep.intercept))
    print("Results saved to: %s" % args.sweepSavePath)
    return EXIT_OK


def cmd_verify(args):
    checks = run_verification(args.suite, args.scale, args.seed)
    failed = [c for c in checks if not c.passed]
    print("%d/%d checks passed" % (len(checks) - len(failed), len(checks)))
    return EXIT_VERIFY_FAILED if failed else EXIT_OK


def cmd_bounds(args):
    frame = bound_table(args.process, args.n, args.k, args.T, args.h, mu=args.mu)
    text = frame.to_csv(index=False, float_format="%.9g")
    if args.output:
        with open(args.output, "w", newline="\n") as f:
            f.write(text)
        print("Results saved to: %s" % args.output)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _add_graph_flags(parser):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--kind", choices=["torus", "small-world", "tree"], help="Graph kind")
    parser.add_argument("--width", type=int, help="Lattice width")
    parser.add_argument("--height", type=int, help="Lattice height")
    parser.add_argument("--degree", type=int, help="Small-world target degree")
    parser.add_argument("--graph-seed", type=int, help="Seed of the small-world construction")
    parser.add_argument("--seed", type=int, help="Master seed (falls back to NETSIM_SEED)")
    parser.add_argument("--out-dir", help="Output directory")


def _add_run_flags(parser):
    _add_graph_flags(parser)
    parser.add_argument("--process", choices=["SI", "SIS"], help="Contact process")
    parser.add_argument("--beta", type=float, help="Per-edge infection rate")
    parser.add_argument("--mu", type=float, help="Recovery rate (SIS)")
    parser.add_argument("--prevalence", type=float, help="Initial infected fraction")
    parser.add_argument("--t-end", type=float, help="Horizon")
    parser.add_argument("--h", type=parse_floats, help="Comma-separated step sizes")
    parser.add_argument("--replications", type=int, help="Replications per algorithm")
    parser.add_argument("--mode", help="des, dts or coupled")
    parser.add_argument("--step-policy", help="truncate or partial-final")
    parser.add_argument("--workers", type=int, help="Worker processes (1 = serial)")
    parser.add_argument("--graph-file", help="Edge list to use instead of building a graph")
    parser.add_argument("--regenerate-graph", action="store_true",
                        help="Build a fresh small-world graph for every replication")
    parser.add_argument("--dump-trajectory", action="store_true",
                        help="Also write the event log (and DTS prevalence) of replication 0")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging and progress bars")


def build_parser():
    parser = argparse.ArgumentParser(
        description="SI/SIS contact processes: exact and fixed-step simulation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # 30x30 lattice and degree-5 small world
  python main.py generate-graph --kind torus --width 30 --height 30 --output torus.txt
  python main.py generate-graph --kind small-world --width 30 --height 30 --degree 5 --seed 7

  # DES against DTS with h = 0.01 and 0.0215
  python main.py run --kind torus --process SIS --replications 1500 --h 0.01,0.0215

  # Coupled error study and step-size sweep
  python main.py run --mode coupled --h 0.01 --replications 200
  python main.py sweep --mode coupled --h 0.005,0.01,0.02,0.05,0.1 --replications 500 --workers 4

  # Bounds and verification
  python main.py bounds --n 900 --k 4 --T 1 --h 0.01,0.1,2
  python main.py verify --suite lemmas
        """)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-graph", help="Write a graph as an edge list")
    _add_graph_flags(p)
    p.add_argument("--root-children", type=int, default=2, help="Tree: children of the root")
    p.add_argument("--tree-degree", type=int, default=4, help="Tree: degree k of inner nodes")
    p.add_argument("--depth", type=int, default=1, help="Tree: truncation depth")
    p.add_argument("--output", default="graph.txt", help="Edge list path")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_generate_graph)

    p = sub.add_parser("run", help="Replicated DES/DTS or coupled runs")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="Error against step size with a log-log fit")
    _add_run_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="Run the verification suites")
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")
    p.add_argument("--scale", type=int, default=1, help="Multiplier on replication counts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bounds", help="Print the error-bound table as CSV")
    p.add_argument("--process", choices=["SI", "SIS"], default="SI")
    p.add_argument("--n", type=int, default=900)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--h", type=parse_floats, default=(0.01,))
    p.add_argument("--output", help="CSV path (stdout if omitted)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValueError, RuntimeError) as e:
        # ConfigError is a ValueError
        print("Error: %s" % e, file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print("Error: %s" % e, file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
