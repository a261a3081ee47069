"""Command-line experiment runner: ``nestssl run`` and ``nestssl validate``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import traceback
from pathlib import Path

from .config import ConfigError, RunConfig, dump_config, validate_config, validate_values, Diagnostics
from .evaluation import compare_runs
from .selection import STRATEGIES
from .selftrain import run_self_training, write_trace

logger = logging.getLogger("nestssl")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2

SUMMARY_COLUMNS = ["strategy", "seed", "iteration", "metric", "value", "pseudo_error"]


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _strategy_list(text: str) -> list[str]:
    items = [x.strip() for x in text.split(",") if x.strip()]
    bad = [x for x in items if x not in STRATEGIES]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"strategies must be from {list(STRATEGIES)}, got {text!r}")
    return items


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nestssl", description="Self-training experiments with sample selection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-iteration progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every (seed, strategy) cell of a config")
    run.add_argument("config")
    run.add_argument("--force", action="store_true", help="write into a non-empty output directory")
    run.add_argument("--output-dir", help="overrides run.output_dir")
    run.add_argument("--seed-override", type=_int_list, metavar="S1,S2", help="overrides run.seeds")
    run.add_argument("--strategy-override", type=_strategy_list, metavar="NAME,...",
                     help="overrides run.strategies")

    val = sub.add_parser("validate", help="check a config and list errors and warnings")
    val.add_argument("config")
    return parser


def _report(diag: Diagnostics, stream) -> None:
    for e in diag.errors:
        print(f"error: {e}", file=stream)
    for w in diag.warnings:
        print(f"warning: {w}", file=stream)


def cmd_validate(args) -> int:
    try:
        _, diag = validate_config(args.config)
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _report(diag, sys.stdout)
    print("valid" if diag.ok else f"invalid ({len(diag.errors)} error(s))")
    return EXIT_OK if diag.ok else EXIT_CONFIG


def _load_run_config(args) -> RunConfig:
    try:
        cfg = RunConfig.from_file(args.config)
    except OSError as exc:
        raise ConfigError([f"cannot read {args.config}: {exc}"]) from None
    values = dict(cfg.values)
    if args.seed_override is not None:
        values["run.seeds"] = args.seed_override
    if args.strategy_override is not None:
        values["run.strategies"] = args.strategy_override
    if args.output_dir is not None:
        values["run.output_dir"] = args.output_dir
    diag = validate_values(values, base_dir=cfg.base_dir)
    if not diag.ok:
        raise ConfigError(diag.errors)
    return RunConfig(values, cfg.base_dir)


def run_matrix(cfg: RunConfig, out: Path) -> tuple[list[dict], list[dict]]:
    """Run every cell; a failing cell is recorded and the matrix continues."""
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    runs, failures = [], []
    for seed in cfg.seeds:
        try:
            data = cfg.dataset(seed)
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            for strategy in cfg.strategies:
                failures.append({"seed": seed, "strategy": strategy, "error": f"dataset: {exc}"})
            logger.error("seed %d: dataset construction failed: %s", seed, exc)
            continue
        for strategy in cfg.strategies:
            name = f"{strategy}_seed{seed}"
            try:
                model, traces = run_self_training(cfg.self_train_config(strategy, seed), data)
            except Exception as exc:  # noqa: BLE001 - recorded per cell
                logger.debug("%s failed\n%s", name, traceback.format_exc())
                logger.error("%s failed: %s", name, exc)
                failures.append({"seed": seed, "strategy": strategy, "error": f"{type(exc).__name__}: {exc}"})
                continue
            write_trace(traces, out / "traces" / f"{name}.jsonl")
            model.save(out / "checkpoints" / f"{name}.json")
            runs.append({"strategy": strategy, "seed": seed, "metric": traces[0].metric, "traces": traces})
            final = traces[-1].test_metric
            logger.info("%s done: final %s %s", name, traces[-1].metric, "n/a" if final is None else f"{final:.4f}")
    return runs, failures


def write_summary(runs: list[dict], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for r in runs:
            for t in r["traces"]:
                writer.writerow([r["strategy"], r["seed"], t.iteration, t.metric,
                                 "" if t.test_metric is None else repr(t.test_metric),
                                 "" if t.pseudo_error is None else repr(t.pseudo_error)])


def cmd_run(args) -> int:
    try:
        cfg = _load_run_config(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(cfg.output_dir)
    if not out.is_absolute() and args.output_dir is None and cfg.base_dir is not None:
        out = cfg.base_dir / out
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: output directory {out} is not empty; pass --force to overwrite", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(dump_config(cfg.values), encoding="utf-8")

    runs, failures = run_matrix(cfg, out)
    write_summary(runs, out / "summary.csv")
    with (out / "failures.jsonl").open("w", encoding="utf-8") as fh:
        for f in failures:
            fh.write(json.dumps(f, sort_keys=True) + "\n")
    if runs and len({r["metric"] for r in runs}) == 1:
        (out / "comparison.json").write_text(json.dumps(compare_runs(runs), indent=2) + "\n", encoding="utf-8")

    print(f"{len(runs)} run(s) completed, {len(failures)} failed; results in {out}")
    return EXIT_PARTIAL if failures else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        return cmd_validate(args)
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
