"""Command-line entry point.

Subcommands: ``design``, ``estimate``, ``memory``, ``fit``, ``confusion`` and
``pipeline``. Exit codes: 0 success, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import (
    ConfigError,
    FitError,
    PipelineError,
    RunConfig,
    analyse,
    confusion_matrix,
    derive_seed,
    report_json,
    run_pipeline,
    run_points,
    PointResult,
)
from .design import RankDeficientDesign, build_design, compute_design_matrix, optimize_shot_weights
from .estimate import CensoringRankError, estimate_noise, simulate_experiments
from .noise import sample_lognormal_instance, tuned_depolarizing_instance
from .surface import build_layout, characterization_circuit

log = logging.getLogger("noiseaware")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _common(p: argparse.ArgumentParser, prior: bool = False) -> None:
    p.add_argument("--distance", type=int, action="append", help="code distance (repeatable)")
    p.add_argument("--rounds", type=int, action="append", help="syndrome rounds (repeatable)")
    p.add_argument("--shots", type=int, default=None)
    p.add_argument("--seed", type=int, action="append", help="instance seed (repeatable)")
    p.add_argument("--noise", choices=("lognormal", "depolarizing"), default=None)
    if prior:
        p.add_argument("--prior", action="append", help="true, dep or aces:<shots> (repeatable)")
    p.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    p.add_argument("--out", type=Path, default=None, help="output directory")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noiseaware", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("design", help="build an ACES design for the syndrome circuit"))
    _common(sub.add_parser("estimate", help="simulate ACES data and estimate the noise"))
    _common(sub.add_parser("memory", help="run memory experiments under decoder priors"), prior=True)
    fit = sub.add_parser("fit", help="refit a saved report")
    fit.add_argument("report", type=Path)
    fit.add_argument("--out", type=Path, default=None)
    _common(sub.add_parser("confusion", help="paired confusion matrix of decoder priors"), prior=True)
    _common(sub.add_parser("pipeline", help="full run from a configuration"), prior=True)
    return parser


def _config(args) -> RunConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    overrides = {
        "distances": args.distance,
        "rounds": args.rounds,
        "shots": args.shots,
        "seeds": args.seed,
        "noise": args.noise,
        "priors": getattr(args, "prior", None),
        "out": str(args.out) if args.out else None,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data)


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _cmd_design(args) -> None:
    config = _config(args)
    for d in config.distances:
        circuit = characterization_circuit(build_layout(d))
        reference = tuned_depolarizing_instance(config.params, circuit)
        design = build_design(circuit, reference_noise=reference)
        dm = compute_design_matrix(design)
        design = design.with_weights(optimize_shot_weights(design, dm, reference, config.aces_weight_iterations))
        _write(args.out, f"design_d{d}.json", design.to_json())
        _write(args.out, f"design_d{d}.coo", dm.to_coo_text())


def _cmd_estimate(args) -> None:
    config = _config(args)
    shots = args.shots or 10**6
    for seed in config.seeds:
        for d in config.distances:
            circuit = characterization_circuit(build_layout(d))
            reference = tuned_depolarizing_instance(config.params, circuit)
            if config.noise == "lognormal":
                truth = sample_lognormal_instance(config.params, circuit, seed)
            else:
                truth = reference
            design = build_design(circuit, reference_noise=reference)
            dm = compute_design_matrix(design)
            try:
                data = simulate_experiments(design, dm, truth, shots, derive_seed(seed, d, "estimate"))
            except ValueError as exc:
                raise PipelineError("estimate", str(exc), numerical=True) from exc
            est = estimate_noise(design, dm, data, config.aces_method)
            prior = est.to_noise_instance(circuit, f"aces:{shots}")
            rel = [abs(est.total_error(g.key) / truth.channel(g).total_error - 1) for g in design.gates
                   if truth.channel(g).total_error > 0]
            log.info("d=%d seed=%d median relative total-error deviation %.4f", d, seed, float(np.median(rel)))
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                prior.save(args.out / f"estimate_d{d}_s{seed}.json")
                truth.save(args.out / f"truth_d{d}_s{seed}.json")
            else:
                sys.stdout.write(json.dumps(prior.to_dict(), sort_keys=True) + "\n")


def _cmd_memory(args) -> None:
    config = _config(args)
    points = run_points(config)
    rows = [p.row() for p in points]
    _write(args.out, "memory.json", json.dumps(rows, indent=1, sort_keys=True) + "\n")


def _cmd_confusion(args) -> None:
    config = _config(args)
    points = run_points(config)
    total = None
    for p in points:
        m = confusion_matrix(p.failures)
        total = m if total is None else type(m)(m.names, total.counts + m.counts)
    _write(args.out, "confusion.json", json.dumps(total.to_dict(), indent=1, sort_keys=True) + "\n")


def _cmd_fit(args) -> None:
    try:
        report = json.loads(args.report.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {args.report}: {exc}") from None
    raise_if_unsupported(report)
    config = RunConfig.from_dict({**report["config"], "out": None})
    if not report.get("points"):
        raise ConfigError("report has no points to fit")
    # Saved counts suffice for epsilon and Lambda; paired statistics need per-shot data.
    points = []
    for row in report["points"]:
        failures = {}
        for name, count in row["failures"].items():
            f = np.zeros(row["shots"], dtype=bool)
            f[:count] = True
            failures[name] = f
        points.append(PointResult(row["seed"], row["distance"], row["rounds"], row["basis"], row["shots"], failures, row["stream_hash"]))
    analysis = analyse(config, points)
    _write(args.out, "fit.json", report_json({"epsilon": analysis["epsilon"], "lambda": analysis["lambda"]}))


def raise_if_unsupported(report: dict) -> None:
    if report.get("version") != 1:
        raise ConfigError(f"unsupported report version {report.get('version')!r}")


def _cmd_pipeline(args) -> None:
    config = _config(args)
    report = run_pipeline(config)
    if not config.out:
        sys.stdout.write(report_json(report))


COMMANDS = {
    "design": _cmd_design,
    "estimate": _cmd_estimate,
    "memory": _cmd_memory,
    "fit": _cmd_fit,
    "confusion": _cmd_confusion,
    "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if exc.numerical else 1
    except (RankDeficientDesign, CensoringRankError, FitError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
