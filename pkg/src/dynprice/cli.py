"""Command-line experiment runner. Every artifact is a CSV whose first line records provenance."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import inner_eta, inner_price_approx, outer_correction, solve_inner_ode
from .config import ConfigError, ExperimentConfig, load_config
from .demand import Family
from .deterministic import DeterministicPolicy
from .errors import DomainError, PreconditionError, SolverError, ValidationError
from .hjb import read_solution_csv, solve_value_pde
from .simulate import (
    brownian_negative_sales_mc,
    compare_policies,
    negative_sales_probability,
    profit_stats_row,
    simulate_policy,
    write_histogram_csv,
    write_paths_csv,
    write_price_quantiles_csv,
    write_stats_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _sig(x: float) -> str:
    return f"{x:g}"


def _write_rows(path: Path, header: str, rows, provenance: str) -> None:
    lines = [provenance, header]
    lines += [",".join(repr(float(v)) if not isinstance(v, str) else v for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def _solve(cfg: ExperimentConfig, spec):
    if spec.demand.family is not Family.LINEAR:
        raise ConfigError("problem.family: the stochastic HJB solver supports linear demand only")
    return solve_value_pde(spec, cfg.grid(spec), cfg.tolerances(), cfg.backend)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_solve_hjb(cfg: ExperimentConfig, out: Path, args) -> None:
    spec = cfg.problem()
    sol = _solve(cfg, spec)
    path = out / f"hjb_sigma{_sig(spec.sigma)}.csv"
    sol.to_csv(path, cfg.provenance())
    r = sol.report
    _say(f"solved sigma={spec.sigma:g}: {r.accepted} steps ({r.rejected} rejected), "
         f"{r.projection_violations} projected entries, {r.seconds:.1f}s [{r.backend}] -> {path}")


def _policy(cfg: ExperimentConfig, spec, name: str):
    if name == "deterministic":
        return DeterministicPolicy(spec)
    return _solve(cfg, spec)


def cmd_simulate(cfg: ExperimentConfig, out: Path, args) -> None:
    spec = cfg.problem()
    sim = cfg.simulation()
    s = cfg.section("simulation")
    name = args.policy or s["policy"]
    res = simulate_policy(spec, _policy(cfg, spec, name), sim, record=True)
    prov = cfg.provenance()
    tag = f"{name}_sigma{_sig(spec.sigma)}"
    write_paths_csv(res, out / f"paths_{tag}.csv", thin=s["thin"], max_paths=s["record_paths"], provenance=prov)
    write_stats_csv([profit_stats_row(res)], out / f"profit_stats_{tag}.csv", prov)
    write_price_quantiles_csv(res, out / f"price_quantiles_{tag}.csv", provenance=prov)
    _say(f"simulated {sim.n_paths} paths under {name}: mean profit {res.profits.mean():.6f} -> {out}")


def cmd_compare(cfg: ExperimentConfig, out: Path, args) -> None:
    sim = cfg.simulation()
    c = cfg.section("compare")
    prov = cfg.provenance()
    rows = []
    summary = []
    for sigma in c["sigmas"]:
        spec = cfg.problem(sigma)
        det = DeterministicPolicy(spec)
        hjb = _solve(cfg, spec)
        res = compare_policies(spec, det, hjb, sim, record_prices=c["price_quantiles"])
        stats = res[0] if c["price_quantiles"] else res
        rows.append(stats.row())
        summary.append([sigma, stats.n, stats.n_excluded, stats.mean_profit_a, stats.std_profit_a,
                        stats.mean_profit_b, stats.std_profit_b, stats.mean_gain, stats.stderr_gain])
        write_histogram_csv(stats.relative, out / f"histogram_sigma{_sig(sigma)}.csv",
                            bins=c["histogram_bins"], provenance=prov)
        if c["price_quantiles"]:
            write_price_quantiles_csv(res[1], out / f"price_quantiles_deterministic_sigma{_sig(sigma)}.csv",
                                      provenance=prov)
            write_price_quantiles_csv(res[2], out / f"price_quantiles_hjb_sigma{_sig(sigma)}.csv",
                                      provenance=prov)
        _say(f"sigma={sigma:g}: mean {stats.mean:.3e} std {stats.std:.3e} q05 {stats.q05:.3e} "
             f"q50 {stats.q50:.3e} q95 {stats.q95:.3e} ({stats.n_excluded} excluded)")
    write_stats_csv(rows, out / "compare_stats.csv", prov)
    _write_rows(out / "compare_profits.csv",
                "sigma,n,n_excluded,mean_profit_det,std_profit_det,mean_profit_hjb,std_profit_hjb,mean_gain,stderr_gain",
                summary, prov)


def cmd_asymptotics(cfg: ExperimentConfig, out: Path, args) -> None:
    a = cfg.section("asymptotics")
    prov = cfg.provenance()
    for beta in a["betas"]:
        sol = solve_inner_ode(beta, a["L"], a["n_nodes"])
        sol.to_csv(out / f"inner_profile_beta{_sig(beta)}.csv", prov)
        _say(f"beta={beta:g}: f(0)={sol.f0:.6f} after {sol.iterations} Newton steps")
    rows = []
    for sigma in a["sigmas"]:
        spec = cfg.problem(sigma)
        if not sigma > 0:
            raise ConfigError("asymptotics.sigmas: kink comparison needs sigma > 0")
        hjb = _solve(cfg, spec)
        inner = solve_inner_ode(spec.beta, a["L"], a["n_nodes"], delta=spec.delta)
        det = DeterministicPolicy(spec)
        for tau in a["taus"]:
            t = 1.0 - tau
            half = a["window"] * sigma * tau**1.5
            xs = np.linspace(max(0.0, spec.beta * tau - half), spec.beta * tau + half, a["n_points"])
            p_hjb = hjb.price(t, xs, 1.0)
            p_in = inner_price_approx(inner, spec, t, xs, 1.0)
            p_det = det.price(t, xs, 1.0)
            left = xs < spec.beta * tau
            p_out = np.full(xs.size, np.nan)
            if left.any():
                p_out[left] = outer_correction(spec, t, xs[left], 1.0)
            eta = inner_eta(spec, t, xs, 1.0)
            for row in zip(xs, eta, p_hjb, p_in, p_out, p_det):
                rows.append([sigma, tau, *row])
    _write_rows(out / "kink_comparison.csv", "sigma,tau,xi,eta,psi_hjb,psi_inner,psi_outer,a_det", rows, prov)


def cmd_demo_brownian(cfg: ExperimentConfig, out: Path, args) -> None:
    b = cfg.section("brownian")
    rows = []
    for dt in b["dts"]:
        p = negative_sales_probability(b["q_tilde"], b["sigma_tilde"], dt)
        frac, count = brownian_negative_sales_mc(b["q_tilde"], b["sigma_tilde"], dt, b["n_intervals"],
                                                 b["seed"], b["substeps"])
        se = (p * (1 - p) / b["n_intervals"]) ** 0.5
        rows.append([dt, p, frac, count, b["n_intervals"], se])
    _write_rows(out / "negative_sales.csv", "dt,probability,mc_fraction,mc_count,n_intervals,binomial_stderr",
                rows, cfg.provenance())
    _say(f"negative-sales sweep over {len(rows)} dt values -> {out / 'negative_sales.csv'}")


def cmd_price(cfg: ExperimentConfig, out: Path, args) -> None:
    spec = cfg.problem()
    if args.policy == "deterministic":
        price = DeterministicPolicy(spec).price(args.t, args.s, args.g)
    elif args.solution:
        price = read_solution_csv(args.solution).price(args.t, args.s, args.g)
    else:
        price = _solve(cfg, spec).price(args.t, args.s, args.g)
    print(repr(float(price)))


COMMANDS = {
    "solve-hjb": (cmd_solve_hjb, "solve the stochastic HJB equation and write the (tau, xi, phi, psi) grid"),
    "simulate": (cmd_simulate, "simulate one pricing policy; write paths, profit stats and price quantiles"),
    "compare": (cmd_compare, "compare the deterministic and HJB policies over the sigma grid"),
    "asymptotics": (cmd_asymptotics, "inner-layer profiles and the kink comparison against the HJB price"),
    "demo-brownian": (cmd_demo_brownian, "negative-sales probability under additive Brownian demand noise"),
    "price": (cmd_price, "print the price of one policy at a single state (t, s, g)"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynprice", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dynprice {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", help="TOML config file (defaults used when omitted)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config field; repeatable")
        p.add_argument("-o", "--output-dir", help="artifact directory (else [outputs].dir, "
                                                  "$DYNPRICE_OUTPUT_DIR, or ./out)")
        if name == "simulate":
            p.add_argument("--policy", choices=["deterministic", "hjb"])
        if name == "price":
            p.add_argument("--policy", choices=["deterministic", "hjb"], default="deterministic")
            p.add_argument("--t", type=float, required=True)
            p.add_argument("--s", type=float, required=True)
            p.add_argument("--g", type=float, default=1.0)
            p.add_argument("--solution", help="read a saved HJB solution CSV instead of solving")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config, args.overrides)
        out = cfg.output_dir(args.output_dir)
        if args.command != "price":
            out.mkdir(parents=True, exist_ok=True)
        func(cfg, out, args)
    except (ConfigError, ValidationError, PreconditionError, DomainError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
