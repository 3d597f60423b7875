"""Command-line interface: ``pfhom {bounds,start,solve,sweep,trace}``.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .hiskens import (NoBoundaryFound, augmented, find_initial_boundary_point, initial_guess,
                      min_singular, trace_boundary, write_trace_csv)
from .netmodel import NetworkError, bus_injections, fixture_path, load_network
from .paramhom import StaleCacheError, StartCache, count_real, reduced_system, solve_generic
from .polysys import bounds, bus_voltages, polynomialize
from .sweep import ParameterGrid, emit_maps, parse_fix_spec, parse_sweep_spec, refine_edge, run_sweep
from .tracker import TrackOptions

log = logging.getLogger("pfhom")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError("must be a positive number")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--network", required=True,
                        help="network JSON file, or the name of a bundled fixture")
    common.add_argument("--seed", type=_u64, default=42)
    common.add_argument("--workers", type=_positive_int, default=1)
    common.add_argument("--cache", help="start-solution cache file")
    common.add_argument("--out", help="output basename")
    common.add_argument("--tau-real", type=_positive_float, default=1e-6)
    common.add_argument("--tol", type=_positive_float, default=None,
                        help="refinement tolerance (tracker refine_tol, bisection length)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="pfhom", description="All power-flow solutions by homotopy continuation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    sub.add_parser("bounds", parents=[common], help="print root-count bounds")

    s = sub.add_parser("start", parents=[common], help="solve at a generic complex parameter")
    s.add_argument("--checkpoint", help="path record file (default: <cache>.ckpt)")
    s.add_argument("--sample-fraction", type=float, default=None,
                   help="track only a seeded random fraction of the start points")

    s = sub.add_parser("solve", parents=[common], help="real solutions at one parameter point")
    s.add_argument("--fix", action="append", default=[], metavar="NAME=VALUE")

    s = sub.add_parser("sweep", parents=[common], help="real-solution counts over a grid")
    s.add_argument("--sweep", action="append", default=[], metavar="NAME=MIN:MAX:STEPS")
    s.add_argument("--fix", action="append", default=[], metavar="NAME=VALUE")
    s.add_argument("--refine", action="store_true", help="bisect every boundary edge")

    s = sub.add_parser("trace", parents=[common], help="trace a fold boundary")
    s.add_argument("--guess", required=True, metavar="NAME=VALUE",
                   help="free parameter and its starting value")
    s.add_argument("--fix", action="append", default=[], metavar="NAME=VALUE")
    s.add_argument("--epsilon", type=_positive_float, default=0.02)
    s.add_argument("--max-steps", type=_positive_int, default=20000)
    s.add_argument("--direction", type=int, choices=(-1, 1), default=1)
    return p


# ---------------------------------------------------------------- helpers

def _load(args):
    path = Path(args.network)
    if not path.exists() and fixture_path(args.network).exists():
        path = fixture_path(args.network)
    if not path.exists():
        raise CliError(f"network file {args.network} not found", EXIT_INPUT)
    net = load_network(path)
    return net, polynomialize(net)


def _opts(args) -> TrackOptions:
    return TrackOptions(refine_tol=args.tol) if args.tol else TrackOptions()


def _cache_path(args) -> Path:
    if args.cache:
        return Path(args.cache)
    if args.out:
        return Path(args.out + ".cache.json")
    raise CliError("--cache (or --out) is required", EXIT_USAGE)


def _read_cache(args, psys) -> StartCache:
    path = _cache_path(args)
    if not path.exists():
        raise CliError(f"no start cache at {path}; run `pfhom start` first", EXIT_INPUT)
    cache = StartCache.load(path)
    if cache.system_hash != psys.system_hash:
        raise CliError(f"cache {path} was built for a different network; rerun `pfhom start`",
                       EXIT_INPUT)
    return cache


def _fixed(args, psys) -> dict[str, float]:
    vals = dict(parse_fix_spec(t) for t in args.fix)
    unknown = sorted(set(vals) - set(psys.params))
    if unknown:
        raise CliError(f"unknown parameters {unknown}; network has {list(psys.params)}",
                       EXIT_INPUT)
    return vals


def _fmt(v: float) -> str:
    return f"{v:.9g}"


# ---------------------------------------------------------------- commands

def cmd_bounds(args) -> int:
    _, psys = _load(args)
    b = bounds(psys)
    rows = [("naive_cbb", b.naive_cbb), ("degree_product", b.degree_product),
            ("binomial", b.binomial)]
    for name, val in rows:
        print(f"{name:<16}{val:>12}")
    return EXIT_OK


def cmd_start(args) -> int:
    _, psys = _load(args)
    out = _cache_path(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(str(out) + ".ckpt")
    sample = None
    if args.sample_fraction is not None:
        if not 0 < args.sample_fraction <= 1:
            raise CliError("--sample-fraction must lie in (0, 1]", EXIT_USAGE)
        reduced, _ = reduced_system(psys)
        total = math.prod(reduced.degrees)
        k = max(1, round(args.sample_fraction * total))
        sample = np.sort(np.random.default_rng([args.seed, 4]).choice(total, k, replace=False))
    t0 = time.perf_counter()
    cache = solve_generic(psys, args.seed, _opts(args), args.workers, sample, ckpt)
    cache.save(out)
    ckpt.unlink(missing_ok=True)
    print(f"solutions {len(cache.solutions)}")
    print(f"paths tracked {cache.bound_used}")
    print(f"cache {out} ({time.perf_counter() - t0:.1f} s)")
    return EXIT_OK


def cmd_solve(args) -> int:
    net, psys = _load(args)
    cache = _read_cache(args, psys)
    vals = _fixed(args, psys)
    missing = [p for p in psys.params if p not in vals]
    if missing:
        raise CliError(f"give a value for {missing} with --fix", EXIT_USAGE)
    lam = np.array([vals[p] for p in psys.params], dtype=float)
    res = count_real(psys, cache, lam, args.tau_real, _opts(args), args.workers)
    print(f"real {res.k_real}  nonreal {len(res.nonreal)}  diverged {res.set.n_diverged}"
          f"  failed {res.set.n_failed}")
    order = sorted(res.real, key=lambda x: -min(abs(v) for v in
                                               bus_voltages(net, psys, x).values()))
    for k, x in enumerate(order, 1):
        volts = bus_voltages(net, psys, x)
        inj = bus_injections(net, volts)
        print(f"\nsolution {k}")
        print(f"{'bus':>5} {'kind':>5} {'|V|':>16} {'theta':>16} {'P':>16} {'Q':>16}")
        for b in net.buses:
            v, s = volts[b.id], inj[b.id]
            print(f"{b.id:>5} {b.kind:>5} {_fmt(abs(v)):>16} {_fmt(np.angle(v)):>16}"
                  f" {_fmt(s.real):>16} {_fmt(s.imag):>16}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    _, psys = _load(args)
    if not 1 <= len(args.sweep) <= 2:
        raise CliError("give --sweep once or twice", EXIT_USAGE)
    if not args.out:
        raise CliError("--out is required", EXIT_USAGE)
    cache = _read_cache(args, psys)
    dims = tuple(parse_sweep_spec(t) for t in args.sweep)
    grid = ParameterGrid(dims, tuple(_fixed(args, psys).items()))
    grid.lambda_at(psys.params, grid.coords(0, 0))
    cg = run_sweep(psys, cache, grid, args.workers, args.tau_real, _opts(args))
    refined = {}
    if args.refine:
        for edge in cg.boundary_edges:
            refined[edge] = refine_edge(psys, cache, cg, edge, args.tol or 1e-4,
                                        args.tau_real)
    for path in emit_maps(cg, args.out, refined):
        print(f"wrote {path}")
    for count, n in cg.histogram().items():
        print(f"count {count}: {n} points")
    print(f"boundary edges {len(cg.boundary_edges)}")
    n_fail = int(np.sum(cg.failed > 0))
    if n_fail:
        print(f"{n_fail} points had failed paths", file=sys.stderr)
    if len(cache.solutions) and n_fail == cg.counts.size:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_trace(args) -> int:
    _, psys = _load(args)
    name, guess = parse_fix_spec(args.guess)
    vals = _fixed(args, psys)
    vals[name] = guess
    missing = [p for p in psys.params if p not in vals]
    if missing:
        raise CliError(f"give a value for {missing} with --fix", EXIT_USAGE)
    lam = np.array([vals[p] for p in psys.params], dtype=float)
    cache = _read_cache(args, psys)
    aug1 = augmented(psys, [name], lam)
    res = count_real(psys, cache, lam, args.tau_real, _opts(args))
    if not res.real:
        raise CliError("no real power-flow solution at the guess; move it inside the "
                       "operable region, close to the boundary", EXIT_NUMERIC)
    _, back = reduced_system(psys)
    pts = [back.restrict(x).real for x in res.real]
    x = min(pts, key=lambda p: min_singular(aug1.power_flow(p, lam)[1])[0])
    try:
        z = find_initial_boundary_point(aug1, initial_guess(aug1, x, guess))
    except NoBoundaryFound as exc:
        raise CliError(f"{exc}; try a guess closer to the boundary", EXIT_NUMERIC) from None
    lam0 = aug1.lam(z)
    print(f"boundary point {name}={_fmt(lam0[aug1.swept[0]])}")
    others = [p for p in psys.params if p != name]
    if not others:
        return EXIT_OK
    aug2 = augmented(psys, [name, others[0]], lam0)
    z2 = np.append(z, lam0[list(psys.params).index(others[0])])
    tr = trace_boundary(aug2, z2, args.epsilon, args.max_steps, args.direction)
    out = Path((args.out or "trace") + "_trace.csv")
    write_trace_csv(tr, out, aug2.swept_names)
    print(f"{len(tr.points)} points, {tr.reason}; wrote {out}")
    return EXIT_NUMERIC if tr.failed else EXIT_OK


COMMANDS = {"bounds": cmd_bounds, "start": cmd_start, "solve": cmd_solve,
            "sweep": cmd_sweep, "trace": cmd_trace}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except CliError as exc:
        print(f"pfhom: {exc}", file=sys.stderr)
        return exc.code
    except (NetworkError, StaleCacheError, ValueError) as exc:
        print(f"pfhom: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"pfhom: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
