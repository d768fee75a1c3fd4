"""Command-line front end: degrade, restore, sweep and evaluate."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import autoreg
from .autoreg import AutoRegConfig
from .harness import (
    DegradationSpec,
    _quantize,
    degrade,
    load_problem,
    make_phantom,
    relative_error,
    save_problem,
    snr_db,
)
from .image_io import read_image, write_pgm, write_png
from .linops import Image
from .solvers import AdmmConfig, admm_solve, with_lambda

REPORT_SCHEMA_VERSION = 1
PGM_MAXVAL = 65535

DEFAULTS: dict[str, object] = {
    "mode": None,
    "lam": None,
    "auto": False,
    "rho": 1.0,
    "sigma": 1e-6,
    "alpha_beta": 0.1,
    "tol": 1e-4,
    "max_iter": 500,
    "gamma_balance": 2.5,
    "outer_max": 5,
    "outer_stop": 0.9,
    "snr": 40.0,
    "blur_radius": 5.0,
    "background": 1e-3,
    "seed": 0,
    "report": "json",
    "size": "128",
    "lambdas": None,
    "scale": None,
}

_CONFIG_ALIASES = {"lambda": "lam"}


def _max_workers(n_tasks: int) -> int:
    env = os.environ.get("POISSON_TGV_THREADS", "").strip()
    try:
        cap = int(env) if env else 1
    except ValueError as exc:
        raise ValueError("POISSON_TGV_THREADS must be an integer") from exc
    return max(1, min(cap, n_tasks))


def _resolve(args: argparse.Namespace) -> dict[str, object]:
    """Built-in defaults, overridden by config-file keys, then by flags."""
    settings = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        for key, value in json.loads(Path(config_path).read_text()).items():
            key = _CONFIG_ALIASES.get(key, key.replace("-", "_"))
            if key not in settings:
                raise ValueError(f"unknown config key {key!r}")
            settings[key] = value
    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for key in ("input", "output", "restored"):
        if hasattr(args, key):
            settings[key] = getattr(args, key)
    return settings


def _write_report(
    directory: Path, report: dict[str, object], fmt: str, rows: list[dict] | None = None
) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(json.dumps(report, indent=2))
    if fmt == "csv" and rows:
        with open(directory / "report.csv", "w", newline="") as stream:
            writer = csv.DictWriter(stream, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)


def _parse_size(text: str) -> tuple[int, int]:
    parts = str(text).lower().split("x")
    if len(parts) == 1:
        side = int(parts[0])
        return side, side
    if len(parts) == 2:
        return int(parts[0]), int(parts[1])
    raise ValueError(f"cannot parse size {text!r}")


def _load_reference(settings: dict[str, object]) -> Image:
    source = str(settings["input"])
    if source == "phantom":
        height, width = _parse_size(str(settings["size"]))
        return make_phantom(height, width)
    return Image.from_grid(read_image(source))


def cmd_degrade(settings: dict[str, object]) -> int:
    exact_raw = _load_reference(settings)
    radius = float(settings["blur_radius"])
    spec = DegradationSpec(
        psf_kind="disk" if radius > 0 else "identity",
        radius=radius if radius > 0 else 5.0,
        target_snr_db=float(settings["snr"]),
        background_level=float(settings["background"]),
        rng_seed=int(settings["seed"]),
    )
    problem = degrade(exact_raw, spec)
    out_dir = Path(str(settings["output"]))
    save_problem(problem, out_dir)

    n_exact = problem.photon_scale * float(np.sum(exact_raw.data))
    n_background = float(np.sum(problem.observed.gamma))
    realized = float(np.sum(problem.observed.b))
    signal = realized - n_background
    empirical = snr_db(signal, n_background) if signal > 0 else float("nan")
    print(
        f"degrade: wrote {out_dir}  N_exact={n_exact:.6g} "
        f"N_background={n_background:.6g} empirical_snr={empirical:.3f} dB"
    )

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "mode": "degrade",
        "config": {
            key: settings[key]
            for key in ("input", "output", "snr", "blur_radius", "background", "seed")
        },
        "lambdas": [],
        "rel_errors": [relative_error(problem.observed_image(), problem.exact)],
        "inner_iters": [],
        "primal_residuals": [],
        "objective_trace": [],
        "time_seconds": 0.0,
        "n_exact": n_exact,
        "n_background": n_background,
        "empirical_snr_db": empirical,
    }
    _write_report(out_dir, report, str(settings["report"]))
    return 0


def _admm_config(settings: dict[str, object], lam: float) -> AdmmConfig:
    beta = float(settings["alpha_beta"])
    if not 0 < beta < 1:
        raise ValueError("alpha-beta must lie in (0, 1)")
    return AdmmConfig(
        lam=lam,
        alpha0=beta,
        alpha1=1.0 - beta,
        rho=float(settings["rho"]),
        sigma=float(settings["sigma"]),
        tol=float(settings["tol"]),
        max_iter=int(settings["max_iter"]),
    )


def _save_restored(out_dir: Path, restored: Image) -> float:
    pixels, scale = _quantize(restored.as_grid())
    write_pgm(out_dir / "restored.pgm", pixels, PGM_MAXVAL)
    write_png(out_dir / "restored.png", restored.as_grid())
    return scale


def cmd_restore(settings: dict[str, object]) -> int:
    problem = load_problem(str(settings["input"]))
    data = problem.working_data()
    b_image = problem.observed_image()
    out_dir = Path(str(settings["output"]))

    mode = settings["mode"]
    if mode is None:
        mode = "auto" if (settings["auto"] or settings["lam"] is None) else "fixed"
    if mode not in ("fixed", "auto"):
        raise ValueError(f"unknown restore mode {mode!r}")
    if mode == "fixed" and settings["lam"] is None:
        raise ValueError("fixed mode needs --lambda")

    started = time.perf_counter()
    if mode == "fixed":
        lam = float(settings["lam"])
        config = _admm_config(settings, lam)
        state, trace = admm_solve(data, problem.blur, config, b_image)
        restored = state.u
        lambdas = [lam]
        rel_errors = [relative_error(restored, problem.exact)]
        inner_iters = [state.k]
        primal = list(trace.primal_residual)
        objective = list(trace.objective)
        degenerate = False
    else:
        config = _admm_config(settings, 1.0)
        auto_cfg = AutoRegConfig(
            balance_gamma=float(settings["gamma_balance"]),
            max_outer=int(settings["outer_max"]),
            stop_threshold=float(settings["outer_stop"]),
        )
        restored, report = autoreg.run(
            data, problem.blur, config, auto_cfg, ground_truth=problem.exact
        )
        lambdas = report.lambdas
        rel_errors = report.rel_errors
        inner_iters = report.inner_iteration_counts
        primal = [value for tr in report.traces for value in tr.primal_residual]
        objective = [value for tr in report.traces for value in tr.objective]
        degenerate = report.degenerate
    elapsed = time.perf_counter() - started

    out_dir.mkdir(parents=True, exist_ok=True)
    restored_scale = _save_restored(out_dir, restored)

    echo = {
        key: settings[key]
        for key in (
            "input",
            "output",
            "rho",
            "sigma",
            "alpha_beta",
            "tol",
            "max_iter",
            "gamma_balance",
            "outer_max",
            "outer_stop",
        )
    }
    echo["lambda"] = settings["lam"]
    report_dict = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "mode": f"restore-{mode}",
        "config": echo,
        "lambdas": [float(v) for v in lambdas],
        "rel_errors": [float(v) for v in rel_errors],
        "inner_iters": [int(v) for v in inner_iters],
        "primal_residuals": [float(v) for v in primal],
        "objective_trace": [float(v) for v in objective],
        "time_seconds": elapsed,
        "restored_scale": restored_scale,
        "degenerate": degenerate,
    }
    rows = [
        {
            "outer": i + 1,
            "lambda": lambdas[min(i, len(lambdas) - 1)],
            "rel_error": rel_errors[i] if i < len(rel_errors) else "",
            "inner_iters": inner_iters[i],
        }
        for i in range(len(inner_iters))
    ]
    _write_report(out_dir, report_dict, str(settings["report"]), rows)

    final_err = rel_errors[-1] if rel_errors else float("nan")
    print(
        f"restore-{mode}: lambda={lambdas[-1] if mode == 'auto' else lambdas[0]:.6g} "
        f"rel_error={final_err:.6g} inner_iters={inner_iters} "
        f"time={elapsed:.2f}s -> {out_dir}"
    )
    return 0


def cmd_sweep(settings: dict[str, object]) -> int:
    if not settings["lambdas"]:
        raise ValueError("sweep needs --lambdas, a comma-separated list")
    grid = [float(part) for part in str(settings["lambdas"]).split(",") if part]
    if not grid or any(lam <= 0 for lam in grid):
        raise ValueError("sweep weights must be positive")

    problem = load_problem(str(settings["input"]))
    data = problem.working_data()
    b_image = problem.observed_image()
    out_dir = Path(str(settings["output"]))

    def solve_one(lam: float) -> dict[str, float]:
        t0 = time.perf_counter()
        state, trace = admm_solve(
            data, problem.blur, _admm_config(settings, lam), b_image
        )
        return {
            "lambda": lam,
            "rel_error": relative_error(state.u, problem.exact),
            "iterations": state.k,
            "primal_residual": state.primal_residual,
            "objective": state.objective,
            "time_seconds": time.perf_counter() - t0,
        }

    started = time.perf_counter()
    workers = _max_workers(len(grid))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(solve_one, grid))
    else:
        rows = [solve_one(lam) for lam in grid]
    elapsed = time.perf_counter() - started

    best = min(rows, key=lambda row: row["rel_error"])
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "mode": "sweep",
        "config": {
            key: settings[key]
            for key in ("input", "output", "rho", "sigma", "alpha_beta", "tol", "max_iter")
        },
        "lambdas": [row["lambda"] for row in rows],
        "rel_errors": [row["rel_error"] for row in rows],
        "inner_iters": [row["iterations"] for row in rows],
        "primal_residuals": [row["primal_residual"] for row in rows],
        "objective_trace": [row["objective"] for row in rows],
        "time_seconds": elapsed,
        "best_lambda": best["lambda"],
        "best_rel_error": best["rel_error"],
    }
    _write_report(out_dir, report, str(settings["report"]), rows)

    for row in rows:
        marker = " <- best" if row is best else ""
        print(
            f"lambda={row['lambda']:<10.6g} rel_error={row['rel_error']:.6g} "
            f"iters={row['iterations']:<4d} time={row['time_seconds']:.2f}s{marker}"
        )
    return 0


def cmd_evaluate(settings: dict[str, object]) -> int:
    problem = load_problem(str(settings["input"]))
    observed_err = relative_error(problem.observed_image(), problem.exact)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "mode": "evaluate",
        "config": {"input": settings["input"], "restored": settings.get("restored")},
        "lambdas": [],
        "rel_errors": [observed_err],
        "inner_iters": [],
        "primal_residuals": [],
        "objective_trace": [],
        "time_seconds": 0.0,
        "observed_rel_error": observed_err,
    }
    line = f"evaluate: observed rel_error={observed_err:.6g}"

    restored_path = settings.get("restored")
    if restored_path:
        restored_path = Path(str(restored_path))
        pixels = read_image(restored_path)
        scale = settings.get("scale")
        if scale is None:
            sibling = restored_path.parent / "report.json"
            if sibling.exists():
                scale = json.loads(sibling.read_text()).get("restored_scale")
        if scale is None:
            raise ValueError(
                "cannot infer the restored image scale; pass --scale or keep "
                "report.json next to the restored file"
            )
        restored = Image.from_grid(pixels * float(scale))
        restored_err = relative_error(restored, problem.exact)
        report["rel_errors"].append(restored_err)
        report["restored_rel_error"] = restored_err
        line += f" restored rel_error={restored_err:.6g}"

    output = settings.get("output")
    if output:
        _write_report(Path(str(output)), report, str(settings["report"]))
    print(line)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poisson-tgv",
        description=(
            "Restore images corrupted by blur and Poisson noise with "
            "second-order TGV regularization."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_report_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--report", choices=("json", "csv"), default=None)
        p.add_argument("--config", default=None, help="JSON file with default flags")

    def add_solver_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--rho", type=float, default=None)
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--alpha-beta", dest="alpha_beta", type=float, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--max-iter", dest="max_iter", type=int, default=None)

    p_degrade = sub.add_parser("degrade", help="generate a corrupted problem folder")
    p_degrade.add_argument("--input", default=None, help="image file or 'phantom'")
    p_degrade.add_argument("--size", default=None, help="phantom size, N or NxM")
    p_degrade.add_argument("--output", required=True)
    p_degrade.add_argument("--snr", type=float, default=None)
    p_degrade.add_argument("--blur-radius", dest="blur_radius", type=float, default=None)
    p_degrade.add_argument("--background", type=float, default=None)
    p_degrade.add_argument("--seed", type=int, default=None)
    add_report_flags(p_degrade)

    p_restore = sub.add_parser("restore", help="restore a problem folder")
    p_restore.add_argument("--input", required=True)
    p_restore.add_argument("--output", required=True)
    p_restore.add_argument("--mode", choices=("fixed", "auto"), default=None)
    p_restore.add_argument("--lambda", dest="lam", type=float, default=None)
    p_restore.add_argument("--auto", action="store_true", default=None)
    p_restore.add_argument("--gamma-balance", dest="gamma_balance", type=float, default=None)
    p_restore.add_argument("--outer-max", dest="outer_max", type=int, default=None)
    p_restore.add_argument("--outer-stop", dest="outer_stop", type=float, default=None)
    add_solver_flags(p_restore)
    add_report_flags(p_restore)

    p_sweep = sub.add_parser("sweep", help="fixed-weight restorations over a grid")
    p_sweep.add_argument("--input", required=True)
    p_sweep.add_argument("--output", required=True)
    p_sweep.add_argument("--lambdas", default=None, help="comma-separated weights")
    add_solver_flags(p_sweep)
    add_report_flags(p_sweep)

    p_eval = sub.add_parser("evaluate", help="relative errors against the exact image")
    p_eval.add_argument("--input", required=True)
    p_eval.add_argument("--restored", default=None)
    p_eval.add_argument("--scale", type=float, default=None)
    p_eval.add_argument("--output", default=None)
    add_report_flags(p_eval)

    return parser


_COMMANDS = {
    "degrade": cmd_degrade,
    "restore": cmd_restore,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        settings = _resolve(args)
        if args.command == "degrade" and settings["input"] is None:
            settings["input"] = "phantom"
        return _COMMANDS[args.command](settings)
    except Exception as exc:  # surface a clean one-line failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
