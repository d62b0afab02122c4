"""Command-line entry point: ``llmopt <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import Any, Sequence

from .config import ExperimentConfig, load_config, validate_config
from .errors import ConfigError, LlmOptError, MissingApiKeyError
from .oracle import brute_force_tsp, held_karp_tsp
from .tsp import FIXTURES, load_fixture, load_instance

log = logging.getLogger("llmopt")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_API_KEY = 0, 1, 2, 3

_ARTIFACTS = ("config.json", "summary.csv", "runs", "plotdata")


def _backend_override(text: str) -> dict[str, Any]:
    """``{"kind": ...}`` JSON, ``scripted:<policy>``, or a bare backend kind."""
    text = text.strip()
    if text.startswith("{"):
        try:
            spec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", field="--backend") from None
        if not isinstance(spec, dict):
            raise ConfigError("must be a JSON object", field="--backend")
        return spec
    kind, _, policy = text.partition(":")
    return {"kind": kind, "policy": policy} if policy else {"kind": kind}


def _apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    raw = config.to_dict()
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "repeats", None) is not None:
        raw["repeats"] = args.repeats
    if getattr(args, "backend", None):
        raw["backend"] = _backend_override(args.backend)
    return validate_config(raw)


def _prepare_out_dir(out_dir: Path, force: bool) -> None:
    existing = [name for name in _ARTIFACTS if (out_dir / name).exists()]
    if existing and not force:
        raise FileExistsError(f"{out_dir} already holds a run ({', '.join(existing)}); pass --force to overwrite")
    for name in existing:
        target = out_dir / name
        if target.is_dir():
            shutil.rmtree(target)
        else:
            target.unlink()
    out_dir.mkdir(parents=True, exist_ok=True)


def _default_out(config_path: str) -> Path:
    return Path("results") / Path(config_path).stem


def cmd_run(args: argparse.Namespace, probe_only: bool = False) -> int:
    from .backends import build_backend
    from .experiments import check_backend, run_experiment

    config = _apply_overrides(load_config(args.config), args)
    if probe_only and config.protocol != "sampling_probe":
        raise ConfigError(f"expected a sampling_probe config, got {config.protocol!r}", field="protocol")
    backend = build_backend(config.backend)  # fails fast on a missing API key
    check_backend(config, backend)
    out_dir = Path(args.out) if args.out else _default_out(args.config)
    _prepare_out_dir(out_dir, args.force)
    log.info("protocol %s, %d repeat(s), writing to %s", config.protocol, config.repeats, out_dir)
    result = run_experiment(config, out_dir, backend=backend, parallel=args.parallel)
    failed = sum(1 for r in result.runs if r["status"] != "Completed")
    log.info("%d run(s) finished, %d failed", len(result.runs), failed)
    print(out_dir / "summary.csv")
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    source = args.instance
    instance = load_fixture(source) if source in FIXTURES and not Path(source).exists() else load_instance(source)
    result = brute_force_tsp(instance) if args.brute_force else held_karp_tsp(instance)
    print(f"optimal length: {result.optimal_length!r}")
    print(f"tour: {','.join(map(str, result.optimal_tour))}")
    print(f"method: {result.method.value}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    from .reporting import write_reports

    rows = write_reports(args.run_dir)
    for row in rows:
        print(f"{row.problem}\t{row.arm}\t{row.metric}\t{row.cell}")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    from .experiments import replay_experiment

    run_dir = Path(args.run_dir)
    out_dir = Path(args.out) if args.out else run_dir.with_name(run_dir.name + "-replay")
    if out_dir.resolve() == run_dir.resolve():
        raise FileExistsError("replay output must differ from the recorded run directory")
    _prepare_out_dir(out_dir, args.force)
    replay_experiment(run_dir, out_dir, parallel=args.parallel)
    print(out_dir / "summary.csv")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    print(f"ok: {config.protocol}, {config.repeats} repeat(s), config hash {config.hash()[:12]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llmopt", description="Run black-box optimization experiments.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("config")
        p.add_argument("-o", "--out", help="output directory (default: results/<config name>)")
        p.add_argument("--seed", type=int)
        p.add_argument("--repeats", type=int)
        p.add_argument("--backend", help='backend JSON, "scripted:<policy>", or a backend kind')
        p.add_argument("--force", action="store_true", help="overwrite an existing run")
        p.add_argument("--parallel", type=int, default=1, metavar="N")

    add_run_flags(sub.add_parser("run", help="execute an experiment config"))

    oracle = sub.add_parser("oracle", help="exact solvers")
    oracle_sub = oracle.add_subparsers(dest="problem", required=True)
    tsp = oracle_sub.add_parser("tsp", help="exact TSP tour for an instance file or bundled fixture")
    tsp.add_argument("instance")
    tsp.add_argument("--brute-force", action="store_true")

    probe = sub.add_parser("probe", help="output-distribution probes")
    probe_sub = probe.add_subparsers(dest="probe", required=True)
    add_run_flags(probe_sub.add_parser("sampling", help="Monte Carlo sampling probe"))

    report = sub.add_parser("report", help="regenerate summary.csv and plotdata/")
    report.add_argument("run_dir")

    replay = sub.add_parser("replay", help="re-execute a run from its transcripts")
    replay.add_argument("run_dir")
    replay.add_argument("-o", "--out")
    replay.add_argument("--force", action="store_true")
    replay.add_argument("--parallel", type=int, default=1, metavar="N")

    validate = sub.add_parser("validate-config", help="check a config without running it")
    validate.add_argument("config")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    handlers = {
        "run": cmd_run,
        "oracle": cmd_oracle,
        "probe": lambda a: cmd_run(a, probe_only=True),
        "report": cmd_report,
        "replay": cmd_replay,
        "validate-config": cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except MissingApiKeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_API_KEY
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LlmOptError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
