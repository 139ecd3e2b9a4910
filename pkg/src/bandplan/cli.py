"""Command-line front end.

Subcommands
-----------
gen        draw random market settings from a JSON generation spec
solve      full two-stage solve of one market file
stage2     entry equilibrium at the market file's fixed (m, p)
estimate   Monte Carlo estimates for fixed interested sets
benchmark  joint optimization vs a restricted rule over generated markets
sweep      re-solve along an interference-parameter grid

Common flags (--seed, --beta1, --beta2, --rmin, --rmax, --mmax, --out,
--format, --threads) may also be supplied through environment variables
named BANDPLAN_<FLAG> (for example BANDPLAN_SEED=7); explicit flags win.
BANDPLAN_BACKEND selects the compiled (numba) or pure-numpy simulation path.

Outputs are deterministic: identical inputs, seeds, and backend produce
byte-identical files regardless of --threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Sequence

from .experiments import (
    BENCHMARK_FIELDS,
    GeneratedMarket,
    ScenarioGenSpec,
    cdf_points,
    emit,
    generate_markets,
    run_benchmark,
    run_sweep,
)
from .market import load_market_file, params_from_dict, scenario_from_dict
from .montecarlo import McConfig, estimate
from .stackelberg import default_m_max, solve_stage1, solve_stage2

ENV_PREFIX = "BANDPLAN_"

_SWEEP_KINDS = {"alpha-joint": "alpha_joint", "alpha-l": "alpha_l"}
_BENCH_MODES = {"fixed-p": "fixed_p", "fixed-m": "fixed_m",
                "max-entrants": "max_entrants"}


def _env(name: str, cast, fallback):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    if raw is None or raw == "":
        return fallback
    try:
        return cast(raw)
    except ValueError as exc:
        raise SystemExit(f"bad {ENV_PREFIX}{name.upper()}={raw!r}: {exc}")


def _add_common(parser: argparse.ArgumentParser, *, fmt_default: str) -> None:
    parser.add_argument("--seed", type=int, default=_env("seed", int, 0),
                        help="experiment seed (default %(default)s)")
    parser.add_argument("--beta1", type=float, default=_env("beta1", float, 1.0),
                        help="max acceptable percentage error (default %(default)s)")
    parser.add_argument("--beta2", type=float, default=_env("beta2", float, 0.99),
                        help="min probability of meeting beta1 (default %(default)s)")
    parser.add_argument("--rmin", type=int, default=_env("rmin", int, 10_000),
                        help="minimum sample count (default %(default)s)")
    parser.add_argument("--rmax", type=int, default=_env("rmax", int, 10_000_000),
                        help="hard sample budget (default %(default)s)")
    parser.add_argument("--mmax", type=int, default=_env("mmax", int, None),
                        help="grid bound on channel count (default: derived)")
    parser.add_argument("--out", required=True, help="output file path")
    parser.add_argument("--format", choices=("csv", "json"),
                        default=_env("format", str, fmt_default),
                        help="output format (default %(default)s)")
    parser.add_argument("--threads", type=int, default=_env("threads", int, 1),
                        help="worker threads; results do not depend on this")


def _mc_config(args: argparse.Namespace) -> McConfig:
    return McConfig(beta1=args.beta1, beta2=args.beta2, r_min=args.rmin,
                    r_max=args.rmax, seed=args.seed)


def _write_json(doc, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _parse_ids(raw: str | None) -> list[int] | None:
    if raw is None or raw == "":
        return None
    return [int(tok) for tok in raw.split(",") if tok != ""]


def _parse_grid(raw: str) -> list[float]:
    return [float(tok) for tok in raw.split(",") if tok != ""]


def _load_markets(args: argparse.Namespace) -> list[GeneratedMarket]:
    if args.markets:
        with open(args.markets, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return [GeneratedMarket.from_dict(entry) for entry in doc["markets"]]
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec_doc = json.load(fh)
    spec = ScenarioGenSpec.from_dict(spec_doc)
    return generate_markets(spec)


def _cmd_gen(args: argparse.Namespace) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if args.seed_override is not None:
        doc["seed"] = args.seed_override
    spec = ScenarioGenSpec.from_dict(doc)
    markets = generate_markets(spec)
    _write_json({
        "spec": {
            "n_licensed": spec.n_licensed,
            "n_unlicensed": spec.n_unlicensed,
            "n_markets": spec.n_markets,
            "seed": spec.seed,
            "enforce_alpha_order": spec.enforce_alpha_order,
            "ranges": {k: list(v) for k, v in sorted(spec.ranges.items())},
        },
        "markets": [m.to_dict() for m in markets],
    }, args.out)
    return 0


def _cmd_solve(args: argparse.Namespace) -> int:
    scenario, params = load_market_file(args.scenario)
    config = _mc_config(args)
    m_max = args.mmax or default_m_max(scenario, params.d_total)
    solution = solve_stage1(scenario, params, config, m_max=m_max,
                            threads=args.threads)
    _write_json(solution.to_dict(), args.out)
    return 0


def _cmd_stage2(args: argparse.Namespace) -> int:
    scenario, params = load_market_file(args.scenario)
    if args.m is not None or args.p is not None:
        import dataclasses

        params = dataclasses.replace(
            params,
            m=args.m if args.m is not None else params.m,
            p=args.p if args.p is not None else params.p,
        )
    solution = solve_stage2(scenario, params, _mc_config(args))
    _write_json(solution.to_dict(), args.out)
    return 0


def _cmd_estimate(args: argparse.Namespace) -> int:
    scenario, params = load_market_file(args.scenario)
    s_l = _parse_ids(args.sl)
    s_u = _parse_ids(args.su)
    if s_l is None:
        s_l = sorted(scenario.licensed_ids)
    if s_u is None:
        s_u = sorted(scenario.unlicensed_ids)
    est = estimate(scenario, s_l, s_u, params, _mc_config(args))
    doc = {
        "u": {"count": est.u_hat.count, "mean": est.u_hat.mean, "var": est.u_hat.var},
        "u_op": {str(k): {"count": s.count, "mean": s.mean, "var": s.var}
                 for k, s in est.u_op_hat.items()},
        "r_lc": {str(k): {"count": s.count, "mean": s.mean, "var": s.var}
                 for k, s in est.r_lc_hat.items()},
        "converged": est.converged,
        "samples_used": est.samples_used,
    }
    _write_json(doc, args.out)
    return 0


def _cmd_benchmark(args: argparse.Namespace) -> int:
    markets = _load_markets(args)
    rows = run_benchmark(
        markets,
        _BENCH_MODES[args.mode],
        _mc_config(args),
        m_max=args.mmax,
        osa=args.osa,
        phi=args.phi,
        t_slots=args.t_slots,
        threads=args.threads,
    )
    emit(rows, args.format, args.out, fieldnames=BENCHMARK_FIELDS)
    root, ext = os.path.splitext(args.out)
    cdf_path = f"{root}_cdf{ext or '.' + args.format}"
    emit(cdf_points(r.delta_u_pct for r in rows), args.format, cdf_path,
         fieldnames=("value", "cumulative_probability"))
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    with open(args.scenario, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "index" in doc and "operators" in doc:
        market = GeneratedMarket.from_dict(doc)
    else:
        scenario = scenario_from_dict(doc)
        market_doc = doc.get("market", {})
        d_total = float(market_doc["d_total"])
        market = GeneratedMarket(
            index=0, scenario=scenario, d_total=d_total,
            upsilon=float(market_doc.get("upsilon", 0.0)),
            alpha_l=float(market_doc.get("alpha_l", 1.0)),
            alpha_u=float(market_doc.get("alpha_u", 1.0)),
        )
    kind = _SWEEP_KINDS[args.kind]
    rows = run_sweep(
        market, kind, _parse_grid(args.grid), _mc_config(args),
        m_max=args.mmax, osa=args.osa, phi=args.phi, t_slots=args.t_slots,
        fixed_alpha_u=args.alpha_u, threads=args.threads,
    )
    fields = list(rows[0].keys())
    emit(rows, args.format, args.out, fieldnames=fields)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bandplan",
        description="Joint channel-count and licensing optimizer for tiered "
                    "spectrum-access markets.",
        epilog=f"Common flags also read environment defaults named "
               f"{ENV_PREFIX}<FLAG>, e.g. {ENV_PREFIX}SEED, {ENV_PREFIX}RMAX. "
               f"{ENV_PREFIX}BACKEND=numba|numpy selects the simulation path.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="draw random market settings")
    p_gen.add_argument("--spec", required=True, help="generation spec JSON")
    p_gen.add_argument("--seed", dest="seed_override", type=int,
                       default=_env("seed", int, None),
                       help="override the spec's generation seed")
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_gen)

    p_solve = sub.add_parser("solve", help="full two-stage solve of one market")
    p_solve.add_argument("--scenario", required=True, help="market JSON file")
    _add_common(p_solve, fmt_default="json")
    p_solve.set_defaults(func=_cmd_solve)

    p_s2 = sub.add_parser("stage2", help="entry equilibrium at fixed (m, p)")
    p_s2.add_argument("--scenario", required=True)
    p_s2.add_argument("--m", type=int, default=None, help="override channel count")
    p_s2.add_argument("--p", type=int, default=None, help="override licensed count")
    _add_common(p_s2, fmt_default="json")
    p_s2.set_defaults(func=_cmd_stage2)

    p_est = sub.add_parser("estimate", help="Monte Carlo estimates for fixed sets")
    p_est.add_argument("--scenario", required=True)
    p_est.add_argument("--sl", default=None,
                       help="comma-separated interested licensed ids (default: all)")
    p_est.add_argument("--su", default=None,
                       help="comma-separated interested unlicensed ids (default: all)")
    _add_common(p_est, fmt_default="json")
    p_est.set_defaults(func=_cmd_estimate)

    p_bench = sub.add_parser("benchmark", help="joint vs restricted optimization")
    src = p_bench.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="generation spec JSON (markets drawn in-process)")
    src.add_argument("--markets", help="pre-generated markets JSON from 'gen'")
    p_bench.add_argument("--mode", required=True, choices=sorted(_BENCH_MODES))
    p_bench.add_argument("--osa", choices=("overlay", "interweave"), default="overlay")
    p_bench.add_argument("--phi", type=int, choices=(0, 1), default=1)
    p_bench.add_argument("--t-slots", type=int, default=52)
    _add_common(p_bench, fmt_default="csv")
    p_bench.set_defaults(func=_cmd_benchmark)

    p_sweep = sub.add_parser("sweep", help="interference-parameter sweep")
    p_sweep.add_argument("--scenario", required=True,
                         help="market JSON file or a single generated-market entry")
    p_sweep.add_argument("--kind", required=True, choices=sorted(_SWEEP_KINDS))
    p_sweep.add_argument("--grid", required=True,
                         help="comma-separated parameter values")
    p_sweep.add_argument("--osa", choices=("overlay", "interweave"), default="overlay")
    p_sweep.add_argument("--phi", type=int, choices=(0, 1), default=1)
    p_sweep.add_argument("--t-slots", type=int, default=52)
    p_sweep.add_argument("--alpha-u", type=float, default=0.9,
                         help="pinned unlicensed discount for --kind alpha-l")
    _add_common(p_sweep, fmt_default="csv")
    p_sweep.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"bandplan: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
