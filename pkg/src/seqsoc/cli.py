"""``seqsoc`` command line: simulate, estimate, analyze, compare.

Exit codes: 0 success, 1 configuration or input validation error,
2 runtime failure (estimation divergence, degenerate excitation, saturation).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ScenarioConfig, load_config
from .harness import COMMANDS
from .io import CsvSchemaError
from .pipeline import PipelineError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

log = logging.getLogger("seqsoc")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqsoc",
        description="Sequential SoC/SoH estimation harness for a first-order equivalent-circuit cell.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "simulate the injection timeline and write measurement CSVs",
        "estimate": "run the three-step estimator on simulated or recorded data",
        "analyze": "split the filtered voltage into its frequency-dependent components",
        "compare": "sequential versus all-at-once estimation over many seeds",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="YAML or JSON scenario file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def _print_estimate(summary: dict) -> None:
    report = summary["report"]
    print(f"{'quantity':<8} {'estimate':>12} {'truth':>12} {'rel err':>10} {'conv [s]':>10}")
    for name, q in report.quantities.items():
        truth = f"{q.truth:12.5g}" if q.truth is not None else f"{'-':>12}"
        rel = f"{q.rel_error:10.3%}" if q.rel_error is not None else f"{'-':>10}"
        conv = q.convergence_time
        conv_s = f"{conv:10.0f}" if conv is not None else (f"{'not conv.':>10}" if q.truth is not None else f"{'-':>10}")
        print(f"{name:<8} {q.estimate:12.5g} {truth} {rel} {conv_s}")
    print(f"voltage RMSE {1e3 * report.voltage_rmse:.3f} mV")
    if report.soc_static_error is not None:
        print(f"SoC mean |error| after settling {100 * report.soc_static_error:.3f} %")


def _print_compare(summary: dict) -> None:
    table = summary["summary"]
    print(f"{'metric':<32} {'sequential':>12} {'concurrent':>12}")
    for metric in table["sequential"]:
        cells = []
        for arm in ("sequential", "concurrent"):
            v = table[arm][metric]
            cells.append(f"{v:12.4g}" if v is not None else f"{'-':>12}")
        print(f"{metric:<32} {cells[0]} {cells[1]}")


def _print_analyze(summary: dict) -> None:
    if not summary["frequencies"]:
        print("no frequencies requested")
        return
    print(f"{'f [Hz]':>8} {'ohmic/rc':>10} {'ohmic/soc':>10} {'rc/ohmic':>10}")
    for row in summary["frequencies"]:
        print(
            f"{row['f_Hz']:8g} {row['ohmic_over_rc']:10.4g} {row['ohmic_over_socvar']:10.4g} {row['rc_over_ohmic']:10.4g}"
        )


def _print_simulate(summary: dict) -> None:
    for name, block in sorted(summary["blocks"].items(), key=lambda kv: kv[1]["t_start_s"]):
        print(f"{name:<6} start {block['t_start_s']:8.1f} s  {block['samples']:6d} samples at {block['t_s']:g} s")


PRINTERS = {
    "simulate": _print_simulate,
    "estimate": _print_estimate,
    "analyze": _print_analyze,
    "compare": _print_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.config is not None:
            config = load_config(args.config)
            base_dir = args.config.parent
        else:
            config = ScenarioConfig()
            base_dir = None
        seed = args.seed if args.seed is not None else config.seed
        out = args.out if args.out is not None else Path(config.out)
        summary = COMMANDS[args.command](config, seed, out, plots=not args.no_plots, base_dir=base_dir)
    except (ConfigError, CsvSchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PipelineError as exc:
        print(f"error: estimation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        # remaining ValueErrors come from invalid scenario parameters
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    PRINTERS[args.command](summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
