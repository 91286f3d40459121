"""
chgrow command line: single runs, parameter sweeps, manufactured-solution
studies, estimate checks, plots and coefficient validation.

Exit codes: 0 success, 2 config or hypothesis rejection, 3 numerical
failure, 4 missing or corrupt files.
"""

from __future__ import annotations

import argparse
import functools
import importlib.metadata
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import polars as pl
from yaspin import yaspin

import utils.utils as ut
from chgrow_cli.plots import emit_plots
from chgrow_cli.run_config import (
    ConfigError,
    RunConfig,
    config_from_dict,
    emit_config,
    parse_coefficient,
    parse_config,
)
from diagnostics.diagnostics import (
    DIAGNOSTIC_COLUMNS,
    EstimateReport,
    build_estimate_report,
    compare_reports,
    estimate_checks,
    record,
)
from gch_model.gch_model import (
    HypothesisViolationError,
    NonlinearityVariant,
    validate_coefficient,
)
from integrator.integrator import IntegratorError, SchemeConfigError, SchemeKind, Trajectory, run
from mms_verify.mms_verify import (
    ConvergenceStudyError,
    ManufacturedSolution,
    StudyKind,
    convergence_study,
)
from run_store.run_store import CONFIG_FILE, REPORT_FILE, RunStore, RunStoreError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

DEFAULT_OUT = "./runs"
OUT_ENV_VAR = "CHGROW_OUT"
CHECK_FILE = "estimate_check.json"
PACKAGES = ("numpy", "scipy", "polars", "plotly", "yaspin")


def resolve_out_root(cli_out: str | None, cfg: RunConfig | None = None) -> Path:
    """--out, then the config's output_dir, then $CHGROW_OUT, then ./runs."""
    if cli_out:
        return Path(cli_out)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUT_ENV_VAR) or DEFAULT_OUT)


def _versions() -> dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in ("chgrow", *PACKAGES):
        try:
            versions[name] = importlib.metadata.version(name)
        except importlib.metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def _integrate(cfg: RunConfig) -> Trajectory:
    recorder = functools.partial(record, spec=cfg.coefficient, variant=cfg.variant)
    with yaspin(color="blue") as spinner:
        try:
            spinner.text = f"Integrating '{cfg.run_name}' to T={cfg.t_final:g}"
            traj = run(
                cfg.initial_condition.build(cfg.grid),
                cfg.t_final,
                cfg.scheme,
                cfg.coefficient,
                cfg.variant,
                cfg.cadence,
                recorder=recorder,
                keep_steps=cfg.mass_balance_window,
                override_hypotheses=cfg.override_hypotheses,
                validation_range=cfg.validation_range,
                validation_samples=cfg.validation_samples,
            )
            if traj.failed:
                spinner.text = f"'{cfg.run_name}' blew up at step {traj.failure.step_index}"
                spinner.fail("💥")
            else:
                spinner.text = f"'{cfg.run_name}' integrated ({len(traj.states)} states)"
                spinner.ok("✅")
            return traj

        except Exception as e:
            spinner.text = "Integration failed"
            spinner.fail("💥")
            logger.error(f"Failed: {e}")
            raise


def cmd_run(cfg: RunConfig, out_root: Path) -> int:
    """
    Integrate one configuration and persist config echo, diagnostics,
    snapshots, estimate report and manifest under out_root/run_name.

    Returns:
        int: 0 on success, 3 when the run blew up or a solve failed.
    """
    validation = cfg.validate_hypotheses()
    store = RunStore(Path(out_root) / cfg.run_name)
    config_echo = emit_config(cfg)
    store.write_json(CONFIG_FILE, config_echo)
    manifest: dict[str, Any] = {
        "run_name": cfg.run_name,
        "config": config_echo,
        "versions": _versions(),
        "hypotheses_overridden": bool(cfg.override_hypotheses and not validation.passed),
        "hypothesis_validation": validation.to_dict(),
    }

    try:
        traj = _integrate(cfg)
    except IntegratorError as e:
        store.write_manifest(
            {
                **manifest,
                "status": "failed",
                "failure": {"step": e.step_index, "time": e.t, "error": str(e), "last_finite_record": None},
            }
        )
        return EXIT_NUMERICAL

    store.write_trajectory(traj)
    manifest["initial_mass"] = traj.records[0].mass if traj.records else None

    if traj.failed:
        last = traj.records[-1].as_row() if traj.records else None
        store.write_manifest(
            {
                **manifest,
                "status": "failed",
                "failure": {
                    "step": traj.failure.step_index,
                    "time": traj.failure.t,
                    "error": traj.failure.message,
                    "last_finite_record": last,
                },
            }
        )
        return EXIT_NUMERICAL

    if len(traj.records) >= 3:
        report = build_estimate_report(traj, cfg.variant)
        store.write_json(REPORT_FILE, report.to_dict())
    else:
        logger.warning(f"'{cfg.run_name}' recorded {len(traj.records)} states; estimate report skipped")

    store.write_manifest({**manifest, "status": "completed"})
    logger.info(f"Run '{cfg.run_name}' completed: {store.run_dir}")
    return EXIT_OK


def _sweep_point(raw: dict[str, Any], out_root: str) -> dict[str, Any]:
    try:
        cfg = config_from_dict(raw)
    except (ConfigError, HypothesisViolationError) as e:
        logger.warning(f"Sweep point '{raw.get('run_name')}' rejected: {e}")
        return {"status": "rejected", "exit_code": EXIT_CONFIG, "final": None}

    code = cmd_run(cfg, Path(out_root))
    final = None
    if code == EXIT_OK:
        final = RunStore(Path(out_root) / cfg.run_name).read_records()[-1].as_row()
    return {"status": "completed" if code == EXIT_OK else "failed", "exit_code": code, "final": final}


def _sweep_point_task(args) -> dict[str, Any]:
    return _sweep_point(*args)


def cmd_sweep(sweep: dict[str, Any], out_root: Path, workers: int = 1) -> int:
    """
    Run the base configuration once per value of a dotted parameter path and
    collate final-time diagnostics into summary.csv.

    Sweep document: {"name", "parameter", "values", "base"}.
    """
    for key in ("parameter", "values", "base"):
        if key not in sweep:
            raise ConfigError(key, "missing from sweep config")
    if not isinstance(sweep["values"], list) or not sweep["values"]:
        raise ConfigError("values", "expected a nonempty list")
    name = str(sweep.get("name", "sweep"))
    parameter = str(sweep["parameter"])
    sweep_dir = Path(out_root) / name

    tasks = []
    for index, value in enumerate(sweep["values"]):
        try:
            raw = ut.set_dotted(sweep["base"], parameter, value)
        except ValueError as e:
            raise ConfigError("parameter", str(e)) from e
        raw["run_name"] = f"point_{index:03d}"
        raw.pop("output_dir", None)
        tasks.append((raw, str(sweep_dir)))

    logger.info(f"Sweep '{name}': {len(tasks)} points over '{parameter}' with {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point_task, tasks))
    else:
        results = [_sweep_point_task(task) for task in tasks]

    numeric = all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in sweep["values"])
    schema = {
        "point": pl.Int64,
        "parameter": pl.String,
        "value": pl.Float64 if numeric else pl.String,
        "status": pl.String,
        "exit_code": pl.Int64,
        **{c: (pl.Boolean if c == "ut_available" else pl.Float64) for c in DIAGNOSTIC_COLUMNS},
    }
    rows = []
    for index, (value, result) in enumerate(zip(sweep["values"], results)):
        final = result["final"] or {c: None for c in DIAGNOSTIC_COLUMNS}
        rows.append(
            {
                "point": index,
                "parameter": parameter,
                "value": float(value) if numeric else str(value),
                "status": result["status"],
                "exit_code": result["exit_code"],
                **final,
            }
        )

    store = RunStore(sweep_dir)
    store.write_frame(pl.DataFrame(rows, schema=schema), "summary.csv")
    store.write_json("sweep_config.json", sweep)
    codes = [r["exit_code"] for r in results]
    status = "completed" if not any(codes) else "partial_failure"
    store.write_manifest(
        {"sweep": name, "parameter": parameter, "status": status, "versions": _versions(), "points": codes}
    )
    if any(codes):
        logger.warning(f"Sweep '{name}': {sum(1 for c in codes if c)} of {len(codes)} points failed")
    return max(codes)


_DEFAULT_STUDIES = [
    {"kind": "spatial", "resolutions": [[31, 1e-5], [63, 1e-5], [127, 1e-5]], "T_final": 0.02},
    {"kind": "temporal", "resolutions": [[255, 4e-5], [255, 2e-5], [255, 1e-5]], "T_final": 0.05},
]


def cmd_mms(study: dict[str, Any], out_root: Path, workers: int = 1) -> int:
    """
    Manufactured-solution convergence studies.

    Study document: {"name", "manufactured_solution": {"A", "lambda", "k"},
    "coefficient", "variant", "scheme", "studies": [{"kind", "resolutions", "T_final"}]}.
    """
    name = str(study.get("name", "mms"))
    ms_table = study.get("manufactured_solution", {})
    try:
        ms = ManufacturedSolution(
            amplitude=float(ms_table.get("A", 0.5)),
            decay_rate=float(ms_table.get("lambda", 0.5)),
            mode=int(ms_table.get("k", 1)),
        )
        variant = NonlinearityVariant(study.get("variant", "plain"))
        scheme = SchemeKind(study.get("scheme", "imex_stabilized"))
    except (TypeError, ValueError) as e:
        raise ConfigError("manufactured_solution", str(e)) from e
    spec = parse_coefficient(study.get("coefficient") or {"family": "constant", "params": {"M": 2.0}})

    store = RunStore(Path(out_root) / name)
    reports, rows = [], []
    for index, entry in enumerate(study.get("studies", _DEFAULT_STUDIES)):
        try:
            kind = StudyKind(entry["kind"])
            resolutions = [(int(n), float(dt)) for n, dt in entry["resolutions"]]
            t_final = float(entry["T_final"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"studies.{index}", f"bad study entry: {e}") from e

        try:
            report = convergence_study(ms, spec, variant, resolutions, t_final, kind, scheme, workers=workers)
        except ValueError as e:
            raise ConfigError(f"studies.{index}", str(e)) from e
        reports.append(report.to_dict())
        for (n, dt), error in zip(report.resolutions, report.errors):
            rows.append({"study": index, "kind": str(kind), "n_interior": n, "dt": dt, "error": error})

    store.write_json("convergence_report.json", {"name": name, "studies": reports})
    store.write_frame(pl.DataFrame(rows), "convergence.csv")
    store.write_manifest({"study": name, "status": "completed", "versions": _versions()})
    return EXIT_OK


def cmd_check_estimates(run_dirs: list[Path]) -> int:
    """
    Rebuild the estimate report of each stored run, print pass/warn lines and,
    for several runs, grid-stability comparisons ordered coarse to fine.
    """
    stores = [RunStore(Path(d)) for d in run_dirs]
    reports: list[tuple[RunStore, EstimateReport]] = []
    for store in stores:
        traj = store.read_trajectory()
        variant = NonlinearityVariant(traj.config.get("variant", "plain"))
        if len(traj.records) < 3:
            raise RunStoreError(f"{store.run_dir} holds {len(traj.records)} records; need at least 3")
        reports.append((store, build_estimate_report(traj, variant)))

    reports.sort(key=lambda item: item[1].n_interior)
    comparisons = []
    for (_, coarse), (_, fine) in zip(reports[:-1], reports[1:]):
        comparisons.extend(compare_reports(coarse, fine))

    for store, report in reports:
        lines = estimate_checks(report)
        print(f"{store.run_dir} (n={report.n_interior}, dt={report.dt:g})")
        print(ut.format_check_lines([(c.name, c.status, c.detail) for c in lines]))
        path = store.write_json(
            CHECK_FILE,
            {
                "report": report.to_dict(),
                "checks": [vars(c) for c in lines],
                "comparisons": [vars(c) for c in comparisons],
            },
        )
        _update_manifest(store, [path])

    if comparisons:
        print("Grid stability")
        print(ut.format_check_lines([(c.name, c.status, c.detail) for c in comparisons]))
    return EXIT_OK


def _update_manifest(store: RunStore, paths: list[Path]):
    manifest_path = store.run_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.is_file() else {}
    checksums = manifest.pop("checksums", {})
    for path in paths:
        checksums[str(path.relative_to(store.run_dir))] = ut.file_checksum(path)
    ut.atomic_write_text(manifest_path, ut.to_json({**manifest, "checksums": checksums}))


def cmd_plot(run_dir: Path, compare_dirs: list[Path] | None = None) -> int:
    store = RunStore(Path(run_dir))
    written = emit_plots(store, [RunStore(Path(d)) for d in compare_dirs or []])
    _update_manifest(store, written)
    return EXIT_OK


def cmd_validate_coeff(path: Path) -> int:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), e.msg, line=e.lineno) from e
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config: {e}") from e

    if isinstance(raw, dict) and "family" not in raw:
        cfg = parse_config(path, gate=False)
        spec, u_range, samples = cfg.coefficient, cfg.validation_range, cfg.validation_samples
    else:
        spec, u_range, samples = parse_coefficient(raw), (-5.0, 5.0), 1001

    report = validate_coefficient(spec, u_range, samples)
    lines = [
        ("a(u) >= M1", "pass" if report.min_a >= spec.declared_m1 else "fail", f"min a = {report.min_a:.6g}"),
        ("a(u) <= M2", "pass" if report.max_a <= spec.declared_m2 else "fail", f"max a = {report.max_a:.6g}"),
        ("M1 > 1", "pass" if spec.declared_m1 > 1 else "fail", f"M1 = {spec.declared_m1:.6g}"),
        ("a'(u)u >= 0", "pass" if "a'(u)u>=0 violated" not in report.failures else "fail",
         f"min a'(u)u = {report.min_aprime_u:.3e}"),
        ("a'(u) > 0", "info", f"{'holds' if report.strictly_increasing else 'does not hold'}"),
        ("smoothness", "info", report.smoothness),
    ]
    print(ut.format_check_lines(lines))
    return EXIT_OK if report.passed else EXIT_CONFIG


def _load_json(path: str) -> dict[str, Any]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), e.msg, line=e.lineno) from e
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "expected a JSON object")
    return raw


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output root (default: ${OUT_ENV_VAR} or {DEFAULT_OUT})")
    common.add_argument("--workers", type=int, default=1, help="worker processes for sweeps and studies")
    common.add_argument("--seed", type=int, help="rng seed for random initial data")
    common.add_argument("--override-hypotheses", action="store_true", help="run coefficients failing validation")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="chgrow", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (
        ("run", "integrate one configuration"),
        ("mms", "manufactured-solution convergence study"),
        ("sweep", "run a configuration over a parameter grid"),
        ("validate-coeff", "check a coefficient against the well-posedness hypotheses"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--config", required=True, help="JSON configuration file")

    p = sub.add_parser("check-estimates", parents=[common], help="estimate checks on stored runs")
    p.add_argument("run_dirs", nargs="+", help="run directories (several: grid-stability comparison)")

    p = sub.add_parser("plot", parents=[common], help="write HTML plots of a stored run")
    p.add_argument("run_dir", help="run directory")
    p.add_argument("--compare", nargs="*", default=[], help="runs at other resolutions")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    try:
        match args.command:
            case "run":
                overrides = {}
                if args.seed is not None:
                    overrides["seed"] = args.seed
                if args.override_hypotheses:
                    overrides["override_hypotheses"] = True
                cfg = parse_config(Path(args.config), overrides=overrides)
                return cmd_run(cfg, resolve_out_root(args.out, cfg))
            case "sweep":
                sweep = _load_json(args.config)
                if args.override_hypotheses:
                    sweep["base"] = {**sweep.get("base", {}), "override_hypotheses": True}
                if args.seed is not None:
                    sweep["base"] = {**sweep.get("base", {}), "seed": args.seed}
                return cmd_sweep(sweep, resolve_out_root(args.out), args.workers)
            case "mms":
                return cmd_mms(_load_json(args.config), resolve_out_root(args.out), args.workers)
            case "check-estimates":
                return cmd_check_estimates([Path(d) for d in args.run_dirs])
            case "plot":
                return cmd_plot(Path(args.run_dir), [Path(d) for d in args.compare])
            case "validate-coeff":
                return cmd_validate_coeff(Path(args.config))
    except (ConfigError, HypothesisViolationError, SchemeConfigError) as e:
        logger.error(f"Rejected: {e}")
        return EXIT_CONFIG
    except (IntegratorError, ConvergenceStudyError) as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except (RunStoreError, OSError) as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_IO
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
