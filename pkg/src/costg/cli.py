"""Command-line entry point.

Subcommands: ``estimate`` (fit and contrast regimes on a panel CSV),
``simulate`` (multi-repetition studies), ``trajectories`` (per-subject
cumulative-cost curves for external plotting), and ``validate`` (panel
checks). All randomness flows from the config seed (optionally overridden
by ``--seed``); reruns with identical inputs produce byte-identical
reports. Exit codes: 2 input, 3 model, 4 inference, 5 study.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .comparators import fit_propensity, ipcw_complete_case, iptw_partitioned, partitioned_ipcw
from .config import (
    load_json,
    parse_estimate_config,
    parse_simulate_config,
    parse_trajectories_config,
)
from .dgp import generate_cohort
from .errors import CostgError, InferenceError, InputError, ModelError, StudyError
from .gformula import TreatmentRegime, default_model_spec
from .inference import BootstrapConfig, bootstrap_delta
from .panel import interval_cost_matrix, read_cohort_csv, validate_cohort
from .study import run_level_study, run_study, write_study_reps, write_study_summary

EXIT_INPUT = 2
EXIT_MODEL = 3
EXIT_INFERENCE = 4
EXIT_STUDY = 5


def _default_workers() -> int:
    return os.cpu_count() or 1


def _json_bytes(payload) -> bytes:
    return (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode()


def _write_json(path: Path, payload) -> None:
    path.write_bytes(_json_bytes(payload))


def _write_manifest(out_dir: Path, command, config_path, seed, outputs, started):
    digest = ""
    if config_path is not None:
        digest = hashlib.sha256(Path(config_path).read_bytes()).hexdigest()
    manifest = {
        "command": command,
        "config_path": str(config_path) if config_path else None,
        "config_sha256": digest,
        "seed": seed,
        "software_version": __version__,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "outputs": [str(p) for p in outputs],
    }
    _write_json(out_dir / "manifest.json", manifest)


def _prepare_out(out: str) -> Path:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _scaled(value: int, scale: float, floor: int) -> int:
    return max(floor, int(round(value * scale)))


def _read_validated_cohort(panel_csv, n_intervals=None, horizon=None):
    cohort = read_cohort_csv(panel_csv, n_intervals=n_intervals, horizon=horizon)
    report = validate_cohort(cohort)
    if not report.passed:
        lines = "; ".join(
            f"subject {v.subject_id} interval {v.interval}: {v.rule}"
            for v in report.violations[:10]
        )
        more = len(report.violations) - 10
        suffix = f" (+{more} more)" if more > 0 else ""
        raise InputError(f"panel failed validation: {lines}{suffix}")
    return cohort


def _cmd_estimate(args) -> int:
    started = datetime.now(timezone.utc).isoformat()
    settings = parse_estimate_config(load_json(args.config))
    if args.seed is not None:
        settings = replace(settings, seed=args.seed)
    if args.scale != 1.0:
        settings = replace(
            settings,
            n_paths=_scaled(settings.n_paths, args.scale, 1),
            n_replicates=_scaled(settings.n_replicates, args.scale, 2),
        )
    out_dir = _prepare_out(args.out)
    outputs: list[Path] = []

    if args.dry_run:
        resolved = out_dir / "resolved_config.json"
        _write_json(
            resolved,
            {
                "cost_family": settings.cost_family,
                "estimators": list(settings.estimators),
                "n_paths": settings.n_paths,
                "n_replicates": settings.n_replicates,
                "seed": settings.seed,
                "level": settings.level,
                "delta0": settings.delta0,
            },
        )
        outputs.append(resolved)
        _write_manifest(out_dir, "estimate", args.config, settings.seed, outputs, started)
        return 0

    cohort = _read_validated_cohort(
        args.panel_csv, n_intervals=settings.n_intervals, horizon=settings.horizon
    )
    j = cohort.grid.n_intervals
    regime_a = settings.regime_a or TreatmentRegime.constant(j, 1)
    regime_b = settings.regime_b or TreatmentRegime.constant(j, 0)
    if len(regime_a) == 1 and j > 1:
        regime_a = TreatmentRegime.constant(j, regime_a.assignments[0])
    if len(regime_b) == 1 and j > 1:
        regime_b = TreatmentRegime.constant(j, regime_b.assignments[0])

    if "nested_g" in settings.estimators:
        spec = default_model_spec(settings.cost_family, cohort.confounder_dim)
        report = bootstrap_delta(
            cohort,
            spec,
            regime_a,
            regime_b,
            BootstrapConfig(
                n_replicates=settings.n_replicates,
                n_paths=settings.n_paths,
                seed=settings.seed,
                parallel_width=args.threads,
            ),
            delta0=settings.delta0,
            level=settings.level,
        )
        report_json = out_dir / "effect_report.json"
        _write_json(report_json, report.to_dict())
        report_csv = out_dir / "effect_report.csv"
        with open(report_csv, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(report.csv_header())
            writer.writerow([repr(float(v)) for v in report.csv_row()])
        outputs += [report_json, report_csv]

    itt_methods = {
        "lin_partitioned": partitioned_ipcw,
        "li_iptw": iptw_partitioned,
    }
    requested = [name for name in settings.estimators if name in itt_methods]
    if requested:
        estimates = {"complete_case": ipcw_complete_case(cohort).to_dict()}
        propensity = None
        for name in requested:
            if name == "li_iptw":
                propensity = fit_propensity(cohort)
                estimates[name] = iptw_partitioned(cohort, propensity=propensity).to_dict()
            else:
                estimates[name] = partitioned_ipcw(cohort).to_dict()
        if propensity is not None:
            estimates["propensity_model"] = propensity.to_dict()
        itt_json = out_dir / "itt_estimates.json"
        _write_json(itt_json, estimates)
        itt_csv = out_dir / "itt_estimates.csv"
        with open(itt_csv, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["method", "delta_itt"])
            for name, payload in estimates.items():
                if isinstance(payload, dict) and "delta_itt" in payload:
                    writer.writerow([name, repr(float(payload["delta_itt"]))])
        outputs += [itt_json, itt_csv]

    _write_manifest(out_dir, "estimate", args.config, settings.seed, outputs, started)
    return 0


def _cmd_simulate(args) -> int:
    started = datetime.now(timezone.utc).isoformat()
    settings = parse_simulate_config(load_json(args.config))
    study = settings.study
    if args.seed is not None:
        study = replace(study, seed=args.seed)
    if args.scale != 1.0:
        study = replace(
            study,
            n_reps=_scaled(study.n_reps, args.scale, 1),
            n_paths=_scaled(study.n_paths, args.scale, 1),
            n_replicates=_scaled(study.n_replicates, args.scale, 2)
            if study.n_replicates >= 2
            else study.n_replicates,
        )
    out_dir = _prepare_out(args.out)
    outputs: list[Path] = []

    resolved = out_dir / "resolved_config.json"
    _write_json(
        resolved,
        {
            "mode": settings.mode,
            "n_reps": study.n_reps,
            "n_paths": study.n_paths,
            "n_replicates": study.n_replicates,
            "estimators": list(study.estimators),
            "seed": study.seed,
            "censoring": study.dgp.censoring.mechanism,
            "cost_families": [study.dgp.cost.family_control, study.dgp.cost.family_treated],
            "fit_cost_family": study.resolved_fit_family(),
        },
    )
    outputs.append(resolved)
    if args.dry_run:
        _write_manifest(out_dir, "simulate", args.config, study.seed, outputs, started)
        return 0

    if settings.mode == "level":
        level_result = run_level_study(study, workers=args.threads, alpha=settings.alpha)
        level_json = out_dir / "level_result.json"
        _write_json(
            level_json,
            {
                "rejection_rate": level_result.rejection_rate,
                "n_reps": level_result.n_reps,
                "n_rejected": level_result.n_rejected,
                "n_failed": level_result.n_failed,
                "alpha": level_result.alpha,
            },
        )
        outputs.append(level_json)
    else:
        result = run_study(study, workers=args.threads)
        summary = out_dir / "study_summary.csv"
        reps = out_dir / "study_reps.csv"
        write_study_summary(result, summary)
        write_study_reps(result, reps)
        outputs += [summary, reps]

    _write_manifest(out_dir, "simulate", args.config, study.seed, outputs, started)
    return 0


def _cmd_trajectories(args) -> int:
    started = datetime.now(timezone.utc).isoformat()
    dgp = parse_trajectories_config(load_json(args.config))
    if args.seed is not None:
        dgp = replace(dgp, seed=args.seed)
    out_dir = _prepare_out(args.out)
    outputs: list[Path] = []

    if args.dry_run:
        _write_manifest(out_dir, "trajectories", args.config, dgp.seed, outputs, started)
        return 0

    cohort = generate_cohort(dgp)
    costs = interval_cost_matrix(cohort)
    cumulative = np.where(np.isnan(costs), np.nan, np.nancumsum(np.nan_to_num(costs), axis=1))

    rows_path = out_dir / "trajectories.csv"
    with open(rows_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["id", "j", "cumulative_cost", "dead", "censored"])
        for i, subject in enumerate(cohort.subjects):
            death_j = subject.death_interval
            censored_next = subject.is_censored
            n_obs = subject.n_observed
            for j in range(1, n_obs + 1):
                writer.writerow(
                    [
                        subject.subject_id,
                        j,
                        repr(float(cumulative[i, j - 1])),
                        int(death_j is not None and j >= death_j),
                        int(censored_next and j == n_obs),
                    ]
                )
    outputs.append(rows_path)

    summary_path = out_dir / "trajectory_summary.csv"
    with open(summary_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["j", "mean_cumulative_cost", "sd_cumulative_cost", "n"])
        for j in range(1, cohort.grid.n_intervals + 1):
            col = cumulative[:, j - 1]
            col = col[~np.isnan(col)]
            if len(col) == 0:
                writer.writerow([j, "", "", 0])
                continue
            sd = float(col.std(ddof=1)) if len(col) > 1 else math.nan
            writer.writerow(
                [j, repr(float(col.mean())), "" if math.isnan(sd) else repr(sd), len(col)]
            )
    outputs.append(summary_path)

    _write_manifest(out_dir, "trajectories", args.config, dgp.seed, outputs, started)
    return 0


def _cmd_validate(args) -> int:
    cohort = read_cohort_csv(args.panel_csv)
    report = validate_cohort(cohort)
    for v in report.violations:
        print(f"violation: subject {v.subject_id} interval {v.interval}: {v.rule} {v.detail}".rstrip())
    for w in report.warnings:
        print(f"warning: subject {w.subject_id} interval {w.interval}: {w.rule} {w.detail}".rstrip())
    if report.passed:
        print(f"ok: {cohort.n_subjects} subjects, {cohort.grid.n_intervals} intervals")
        return 0
    print(f"failed: {len(report.violations)} violations")
    return EXIT_INPUT


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="costg",
        description=(
            "Joint causal effects of treatment regimes on censored "
            "cumulative costs: g-computation estimation, inverse-weighted "
            "comparators, and simulation studies."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_scale=True):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument(
            "--threads",
            type=int,
            default=_default_workers(),
            help="worker processes (default: machine parallelism)",
        )
        if with_scale:
            p.add_argument(
                "--scale",
                type=float,
                default=1.0,
                help="multiply repetition/path/replicate counts for desk-scale runs",
            )
        p.add_argument(
            "--dry-run",
            action="store_true",
            help="write the manifest and resolved config without computing",
        )

    p_est = sub.add_parser("estimate", help="estimate regime contrasts from a panel CSV")
    p_est.add_argument("panel_csv", help="long-format panel CSV (id, j, c, l_1..l_p, a, y, d)")
    p_est.add_argument("--config", required=True, help="JSON estimation config")
    common(p_est)
    p_est.set_defaults(func=_cmd_estimate)

    p_sim = sub.add_parser("simulate", help="run a simulation study")
    p_sim.add_argument("--config", required=True, help="JSON study config")
    common(p_sim)
    p_sim.set_defaults(func=_cmd_simulate)

    p_trj = sub.add_parser("trajectories", help="emit cumulative-cost trajectories")
    p_trj.add_argument("--config", required=True, help="JSON config with a dgp section")
    common(p_trj, with_scale=False)
    p_trj.set_defaults(func=_cmd_trajectories)

    p_val = sub.add_parser("validate", help="validate a panel CSV")
    p_val.add_argument("panel_csv")
    p_val.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ModelError, NotImplementedError) as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except InferenceError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_INFERENCE
    except StudyError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_STUDY
    except CostgError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
