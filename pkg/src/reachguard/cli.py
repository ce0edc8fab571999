"""Command-line entry point: ``reachguard {solve,simulate,benchmark,gen-env}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace

from .config import ConfigError, load_config
from .dynamics import Unicycle
from .env import generate_random_environment, obstacle_occupancy
from .formats import (FormatError, encode_truth, read_map_dump, write_benchmark_table, write_manifest,
                      write_map_dump, write_step_log, write_value_dump)
from .hj_solver import StateGrid, solve_on_map
from .planner import VARIANTS
from .sim import BENCHMARK_COLUMNS, run_benchmark, run_episode

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("reachguard")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _variants(text: str) -> list:
    out = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in out if v not in VARIANTS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"variants must be drawn from {', '.join(VARIANTS)}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reachguard", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="INI run configuration (defaults used when omitted)")
        sp.add_argument("--out-dir", default=".", help="directory for output files")
        sp.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)

    s = sub.add_parser("solve", help="solve the reach-avoid value function for a map dump")
    common(s)
    s.add_argument("--map", required=True, help="map dump produced by gen-env or simulate")

    s = sub.add_parser("simulate", help="run one closed-loop episode and write its step log")
    common(s)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--variant", choices=VARIANTS)

    s = sub.add_parser("benchmark", help="paired multi-environment comparison table")
    common(s)
    s.add_argument("--seed", type=int, help="first environment seed")
    s.add_argument("--n-envs", type=int)
    s.add_argument("--variant", type=_variants, help="comma-separated variant list")

    s = sub.add_parser("gen-env", help="write a generated ground-truth world as a map dump")
    common(s)
    s.add_argument("--seed", type=int, default=1)
    return p


def cmd_solve(args, cfg) -> int:
    dump = read_map_dump(args.map)
    ep = cfg.episode_config()
    g = dump.grid
    grid = StateGrid.for_map(g.shape[0], g.shape[1], g.cell_size, ep.n_theta)
    V = solve_on_map(obstacle_occupancy(g), g.cell_size, dump.safe_zones, Unicycle(ep.bounds), grid,
                     ep.solver, ep.robot_radius, g.revision)
    path = os.path.join(args.out_dir, "value.hjvf")
    write_value_dump(path, V)
    print(f"solve_ms={1e3 * V.solve_wall_time:.3f} grid={'x'.join(map(str, grid.shape))} "
          f"steps={V.steps} out={path}")
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    ep = cfg.episode_config()
    if args.variant:
        ep = replace(ep, variant=args.variant)
    dump_dir = None
    if cfg["output"]["dump_values"]:
        dump_dir = os.path.join(args.out_dir, "dumps")
        os.makedirs(dump_dir, exist_ok=True)

    def on_recompute(step, world):
        if dump_dir:
            write_value_dump(os.path.join(dump_dir, f"value_{step:05d}.hjvf"), world.V)
            t = world.truth
            write_map_dump(os.path.join(dump_dir, f"map_{step:05d}.ogmp"), world.grid, t.safe_zones, t.goal, t.start)

    res = run_episode(ep, args.seed, on_recompute=on_recompute)
    path = os.path.join(args.out_dir, "steps.csv")
    write_step_log(path, res.log)
    print(f"variant={res.variant} seed={res.seed} success={res.success} steps={res.steps} "
          f"unsafe_states={res.unsafe_states} valid_cont={100 * res.valid_contingency_fraction:.1f}% "
          f"ess={res.mean_ess:.3f} out={path}")
    return EXIT_OK


def cmd_benchmark(args, cfg) -> int:
    ep = cfg.episode_config()
    sim = cfg["sim"]
    variants = args.variant or list(sim["variants"])
    n_envs = args.n_envs if args.n_envs is not None else sim["n_envs"]
    base = args.seed if args.seed is not None else sim["base_seed"]
    if n_envs < 1:
        raise UsageError("--n-envs must be at least 1")

    def progress(variant, seed, r):
        log.info("%s seed=%d success=%s steps=%d unsafe=%d", variant, seed, r.success, r.steps, r.unsafe_states)

    rows, episodes = run_benchmark(n_envs, base, variants, ep, progress=progress)
    timing = cfg["output"]["timing"] == "measured"
    table = os.path.join(args.out_dir, "benchmark.csv")
    write_benchmark_table(table, rows, BENCHMARK_COLUMNS, timing)
    seeds = [base + k for k in range(n_envs)]
    write_manifest(os.path.join(args.out_dir, "benchmark_manifest.json"), {
        "seeds": seeds,
        "variants": variants,
        "episodes": {v: [{"seed": r.seed, "success": r.success, "steps": r.steps,
                          "unsafe_states": r.unsafe_states, "collided": r.collided,
                          "valid_contingency_fraction": round(r.valid_contingency_fraction, 12),
                          "mean_ess": round(r.mean_ess, 12)} for r in eps]
                     for v, eps in episodes.items()},
    })
    for row in rows:
        print(f"{row['variant']}: success={row['success_rate_pct']:.1f}% unsafe={row['avg_unsafe_states']:.2f} "
              f"valid={row['valid_cont_pct']:.1f}% ess={row['avg_ess']:.3f} "
              f"mppi_ms={row['mppi_time_ms']:.2f} solve_ms={row['solve_time_ms']:.2f}")
    print(f"out={table}")
    return EXIT_OK


def cmd_gen_env(args, cfg) -> int:
    truth = generate_random_environment(args.seed, cfg.episode_config().env)
    path = os.path.join(args.out_dir, f"env_{args.seed}.ogmp")
    with open(path, "wb") as f:
        f.write(encode_truth(truth))
    print(f"seed={args.seed} size={truth.width_cells}x{truth.height_cells} zones={len(truth.safe_zones)} out={path}")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "benchmark": cmd_benchmark, "gen-env": cmd_gen_env}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        cfg = load_config(args.config)
        os.makedirs(args.out_dir, exist_ok=True)
        t0 = time.perf_counter()
        code = COMMANDS[args.command](args, cfg)
        log.info("%s finished in %.2f s", args.command, time.perf_counter() - t0)
        return code
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"reachguard: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"reachguard: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FormatError, OSError, ValueError, RuntimeError) as exc:
        print(f"reachguard: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
