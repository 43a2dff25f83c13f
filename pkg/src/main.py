#!/usr/bin/env python3
"""
Forward Rates - Main Application
Forward transition rates, cash flows, property checks and Monte Carlo
verification for multi-state models with stochastic intensities
"""

import argparse
import sys
from typing import Dict, List, Optional

from cache_manager import CacheManager
from config import Config, ConfigError
from forward_rates import (
    ForwardRateCurve,
    RepairedModel,
    calibration_quantities,
    rates_for,
    repair_model,
)
from kolmogorov import expected_cash_flow, mixture_curve, oracle_cash_flow, prospective_reserve, solve_forward
from mc_oracle import (
    EstimateTable,
    SimulationConfig,
    agreement,
    default_targets,
    estimate_targets,
    oracle_values,
    simulate_paths,
)
from property_report import PropertyChecker, coincidence_report, matches_reference_pattern
from report_writer import ReportWriter
from run_config import RunConfig
from utils import max_abs

COMMANDS = ["rates", "cashflow", "verify", "simulate", "repair", "compare", "presets"]


def parse_arguments(argv: Optional[List[str]] = None):
    """Parse command-line arguments"""
    parser = argparse.ArgumentParser(
        description='Forward transition rates for multi-state models with stochastic intensities',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s presets                                   # List shipped models
  %(prog)s rates --preset disability                 # All definitions from state 0
  %(prog)s rates --preset disability --definition statewise --state 1
  %(prog)s cashflow --preset free-policy --short-rate 0.02
  %(prog)s verify --preset disability --horizon 5    # Property table
  %(prog)s simulate --preset survival --paths 100000
  %(prog)s repair --preset disability
  %(prog)s rates --config run.yaml --out results/
        """
    )

    parser.add_argument('command', nargs='?', choices=COMMANDS, help='Computation to run')
    parser.add_argument('--config', help='YAML run file')
    parser.add_argument('--preset', help='Model preset from config/presets.yaml')
    parser.add_argument(
        '--definition',
        action='append',
        choices=Config.DEFINITIONS,
        help='Forward rate definition (repeatable; default: all)'
    )
    parser.add_argument('--state', action='append', type=int, help='Conditioning state (repeatable)')
    parser.add_argument('--t', type=float, help='Base time')
    parser.add_argument('--horizon', type=float, help=f'Horizon length (default: {Config.DEFAULT_HORIZON})')
    parser.add_argument('--step', type=float, help=f'Grid step (default: {Config.DEFAULT_STEP})')
    parser.add_argument('--paths', type=int, help=f'Monte Carlo paths (default: {Config.DEFAULT_PATHS})')
    parser.add_argument('--seed', type=int, help=f'Monte Carlo seed (default: {Config.DEFAULT_SEED})')
    parser.add_argument('--short-rate', help="Short rate for discounting: a number or an expression in t")
    parser.add_argument('--out', help=f'Output directory (default: {Config.OUTPUT_DIR})')
    parser.add_argument('--workers', type=int, help='Threads for per-scenario solves and simulation batches')
    parser.add_argument('--no-cache', action='store_true', help='Disable the simulation cache for this run')
    parser.add_argument('--clear-cache', action='store_true', help='Clear the simulation cache')
    parser.add_argument('--cache-stats', action='store_true', help='Show cache statistics')
    parser.add_argument('--quiet', action='store_true', help='No progress bar')

    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    args = parse_arguments(argv)

    cache = CacheManager(enabled=False if args.no_cache else None)

    if args.clear_cache:
        cache.clear_all()
        if not args.command:
            return 0

    if args.cache_stats:
        cache.print_stats()
        if not args.command:
            return 0

    if not args.command:
        print("[ERROR] No command given (choose from: " + ", ".join(COMMANDS) + ")")
        return 1

    if args.command == "presets":
        return handle_presets()

    print("Forward Rates - Multi-State Models with Stochastic Intensities")
    print("=" * 70)

    try:
        run = load_run(args)
    except Exception as e:
        print(f"   [ERROR] {e}")
        return 1

    handlers = {
        "rates": handle_rates,
        "cashflow": handle_cashflow,
        "verify": handle_verify,
        "simulate": lambda r, a: handle_simulate(r, a, cache),
        "repair": handle_repair,
        "compare": handle_compare,
    }

    try:
        return handlers[args.command](run, args)
    except Exception as e:
        print(f"   [ERROR] {type(e).__name__}: {e}")
        return 1


def load_run(args) -> RunConfig:
    """Run configuration from --config, --preset and the flag overrides"""
    if not args.config and not args.preset:
        raise ConfigError("Give --config PATH or --preset NAME")

    overrides = {
        "definitions": args.definition,
        "states": args.state,
        "t": args.t,
        "horizon": args.horizon,
        "step": args.step,
        "paths": args.paths,
        "seed": args.seed,
        "short_rate": args.short_rate,
        "out": args.out,
        "workers": args.workers,
    }
    run = RunConfig.load(args.config, args.preset, overrides)
    print(f"\n[STEP 1] Loaded model '{run.name}'")
    print(f"   [OK] {run.graph.num_states} states, {len(run.graph.transitions)} transitions")
    print(f"   [OK] Grid [{run.grid.t0:g}, {run.grid.end:g}] step {run.grid.step:g} ({len(run.grid)} nodes)")
    if run.observed is not None:
        print(f"   [OK] Conditioned on scenario {run.observed} observed up to t={run.t:g}")
    return run


def _working_model(run: RunConfig):
    """Graph, source and payments to compute with (repaired when requested)"""
    source = run.conditioned_source
    if not run.repair:
        return run.graph, source, run.payments, None
    repaired = repair_model(run.graph, run.payments)
    return repaired.augmented, repaired.remap_source(source), repaired.payments, repaired


def handle_presets() -> int:
    names = Config.preset_names()
    if not names:
        print("[WARNING] No presets found")
        return 1

    print("Model presets:")
    for name in names:
        preset = Config.load_preset(name) or {}
        print(f"   * {name:24} {preset.get('description', '')}")
    return 0


def handle_rates(run: RunConfig, args) -> int:
    graph, source, _, _ = _working_model(run)
    writer = ReportWriter(run.output_dir)

    print(f"\n[STEP 2/3] Computing the mixture curve...")
    mixture = mixture_curve(source, graph, run.grid, workers=run.workers, start=run.start)
    print(f"   [OK] Row sums within {mixture.row_sum_error():.2e}")

    print(f"\n[STEP 3/3] Forward rates ({', '.join(run.definitions)})...")
    output_files = {}
    for curve in _rate_curves(run, graph, source, mixture):
        path = writer.write_rates(curve)
        output_files[curve.label()] = path
        print(f"   [OK] {curve.label()}")
        _report_curve(curve)

    writer.print_summary(output_files)
    return 0


def _rate_curves(run: RunConfig, graph, source, mixture) -> List[ForwardRateCurve]:
    curves = []
    for definition in run.definitions:
        states = run.states if definition == "statewise" else [run.start]
        for state in states:
            mix = mixture if state == run.start else None
            curves.append(rates_for(definition, source, graph, run.grid, state=state, mixture=mix))
    return curves


def _report_curve(curve: ForwardRateCurve):
    if curve.residual is not None:
        worst = max_abs(curve.residual)
        marker = "[WARNING]" if worst > Config.RESIDUAL_FLAG else "[OK]"
        print(f"   {marker} Max forward-equations residual {worst:.2e}")
    for pair, nodes in curve.undefined_nodes().items():
        print(f"   [WARNING] m_{pair[0]}{pair[1]} undefined at {len(nodes)} node(s) (zero occupancy)")


def handle_cashflow(run: RunConfig, args) -> int:
    graph, source, payments, repaired = _working_model(run)
    writer = ReportWriter(run.output_dir)
    start = run.start

    print(f"\n[STEP 2/4] Computing the mixture curve...")
    mixture = mixture_curve(source, graph, run.grid, workers=run.workers, start=start)
    print("   [OK] Mixture ready")

    print(f"\n[STEP 3/4] Two-step cash flows (rates, then the Markov valuation)...")
    summary: Dict[str, float] = {}
    output_files = {}
    for definition in run.definitions:
        rates = rates_for(definition, source, graph, run.grid, state=start, mixture=mixture)
        curve = solve_forward(rates, run.grid)
        cash_flow = expected_cash_flow(curve, rates, payments, start)
        output_files[f"cashflow {definition}"] = writer.write_cash_flow(cash_flow, f"cashflow_{definition}.csv")
        summary[f"A {definition}"] = cash_flow.total
        if run.short_rate is not None:
            summary[f"V {definition}"] = prospective_reserve(cash_flow, run.short_rate)
        print(f"   [OK] {definition}: A = {cash_flow.total:.10g}")

    print(f"\n[STEP 4/4] Exact mixture oracle...")
    oracle = oracle_cash_flow(run.conditioned_source, run.graph, run.payments, start, run.grid)
    output_files["cashflow oracle"] = writer.write_cash_flow(oracle, "cashflow_oracle.csv")
    summary["A oracle"] = oracle.total
    if run.short_rate is not None:
        summary["V oracle"] = prospective_reserve(oracle, run.short_rate)
    print(f"   [OK] oracle: A = {oracle.total:.10g}")

    for definition in run.definitions:
        gap = abs(summary[f"A {definition}"] - oracle.total)
        marker = "[OK]" if gap <= Config.REPLACEMENT_TOLERANCE else "[WARNING]"
        print(f"   {marker} {definition} differs from the oracle by {gap:.3e}")

    if repaired is not None:
        output_files["repaired model"] = writer.write_repaired_model(repaired)
    output_files["summary"] = writer.write_summary("cashflow", summary)
    writer.print_summary(output_files)
    return 0


def handle_verify(run: RunConfig, args) -> int:
    graph, source, _, _ = _working_model(run)
    writer = ReportWriter(run.output_dir)
    checker = PropertyChecker(workers=run.workers)

    print(f"\n[STEP 2/3] Computing the mixture curve...")
    mixture = mixture_curve(source, graph, run.grid, workers=run.workers)
    print("   [OK] Mixture ready")

    print(f"\n[STEP 3/3] Checking properties for state(s) {', '.join(map(str, run.states))}...")
    output_files = {}
    for state in run.states:
        table = checker.check_definitions(source, graph, state, run.grid, run.definitions, mixture)
        output_files[f"verify state {state}"] = writer.write_property_report(table)
        for row in table.rows:
            verdicts = ", ".join(f"{p}={'yes' if ok else 'no'}" for p, ok in row.verdicts().items())
            print(f"   [OK] {row.definition}: {verdicts}")
        pattern = "matches" if matches_reference_pattern(table) else "differs from"
        print(f"   [OK] State {state}: pattern {pattern} the reference pattern")

    writer.print_summary(output_files)
    return 0


def handle_simulate(run: RunConfig, args, cache: CacheManager) -> int:
    graph, source, payments, _ = _working_model(run)
    writer = ReportWriter(run.output_dir)

    config = SimulationConfig(
        run.grid,
        paths=run.mc.paths,
        seed=run.mc.seed,
        start=run.start,
        batch_size=run.mc.batch_size,
        workers=run.workers,
        progress=not args.quiet,
    )
    targets = default_targets(graph, run.grid, payments)
    description = {"run": run.describe(), "simulation": config.describe(), "targets": [t.name for t in targets]}

    print(f"\n[STEP 2/3] Simulating {config.paths:,} paths ({config.num_batches} batch(es))...")
    cached = cache.get(description)
    if cached is not None:
        table = EstimateTable.from_dict(cached)
        print("   [OK] Loaded from cache")
    else:
        sample = simulate_paths(source, graph, config)
        table = estimate_targets(sample, targets, payments)
        cache.set(description, table.to_dict())
        print(f"   [OK] {len(table.rows)} target(s) estimated")

    print(f"\n[STEP 3/3] Comparing with the exact values...")
    exact = oracle_values(source, graph, run.grid, targets, run.start, payments)
    share = agreement(table, exact)
    marker = "[OK]" if share >= 0.99 else "[WARNING]"
    print(f"   {marker} {share * 100:.1f}% of targets within {Config.MC_SE_BAND:g} standard errors")

    output_files = {"estimates": writer.write_estimates(table)}
    writer.print_summary(output_files)

    if not args.no_cache:
        stats = cache.get_stats()
        print(f"\n Cache: {stats['hits']} hits, {stats['misses']} misses ({stats['hit_rate']:.1f}% hit rate)")
    return 0


def handle_repair(run: RunConfig, args) -> int:
    writer = ReportWriter(run.output_dir)
    start = run.start

    print(f"\n[STEP 2/4] Splitting shared absorbing states...")
    repaired: RepairedModel = repair_model(run.graph, run.payments)
    print(f"   [OK] {run.graph.num_states} -> {repaired.augmented.num_states} states")
    if repaired.induced:
        induced = ", ".join(f"{a}-{b}" for a, b in repaired.induced)
        print(f"   [OK] Induced transitions: {induced}")

    print(f"\n[STEP 3/4] Valuing with forward-equations rates on the repaired model...")
    source = repaired.remap_source(run.conditioned_source)
    mixture = mixture_curve(source, repaired.augmented, run.grid, workers=run.workers)
    rates = rates_for("equations", source, repaired.augmented, run.grid, mixture=mixture)
    curve = solve_forward(rates, run.grid)
    cash_flow = expected_cash_flow(curve, rates, repaired.payments, start)
    print(f"   [OK] A = {cash_flow.total:.10g}")

    print(f"\n[STEP 4/4] Exact mixture oracle on the original model...")
    oracle = oracle_cash_flow(run.conditioned_source, run.graph, run.payments, start, run.grid)
    gap = abs(cash_flow.total - oracle.total)
    marker = "[OK]" if gap <= Config.REPLACEMENT_TOLERANCE else "[WARNING]"
    print(f"   {marker} oracle A = {oracle.total:.10g} (difference {gap:.3e})")

    summary = {"A repaired": cash_flow.total, "A oracle": oracle.total}
    if run.short_rate is not None:
        summary["V repaired"] = prospective_reserve(cash_flow, run.short_rate)
        summary["V oracle"] = prospective_reserve(oracle, run.short_rate)

    output_files = {
        "repaired model": writer.write_repaired_model(repaired),
        "rates": writer.write_rates(rates),
        "cashflow": writer.write_cash_flow(cash_flow, "cashflow_repaired.csv"),
        "summary": writer.write_summary("repair", summary),
    }
    writer.print_summary(output_files)
    return 0


def handle_compare(run: RunConfig, args) -> int:
    graph, source, payments, _ = _working_model(run)
    writer = ReportWriter(run.output_dir)
    start = run.start

    print(f"\n[STEP 2/3] Computing all definitions from state {start}...")
    mixture = mixture_curve(source, graph, run.grid, workers=run.workers, start=start)
    curves = {
        definition: rates_for(definition, source, graph, run.grid, state=start, mixture=mixture)
        for definition in Config.DEFINITIONS
    }
    gaps = coincidence_report(curves)
    for pair, gap in gaps.items():
        print(f"   [OK] {pair}: max gap {gap:.3e}")

    print(f"\n[STEP 3/3] Writing rates and calibration quantities...")
    output_files = {}
    values: Dict[str, float] = {}
    for definition, curve in curves.items():
        output_files[f"rates {definition}"] = writer.write_rates(curve)
        frame = calibration_quantities(definition, source, graph, start, run.grid, mixture=mixture)
        output_files[f"calibration {definition}"] = writer.write_frame(frame, f"calibration_{definition}.csv")
        if not payments.is_zero:
            cash_flow = expected_cash_flow(solve_forward(curve, run.grid), curve, payments, start)
            values[f"A {definition}"] = cash_flow.total

    if not payments.is_zero:
        values["A oracle"] = oracle_cash_flow(source, graph, payments, start, run.grid, mixture=mixture).total

    output_files["comparison"] = writer.write_comparison(gaps, values)
    writer.print_summary(output_files)
    return 0


if __name__ == "__main__":
    sys.exit(main())
