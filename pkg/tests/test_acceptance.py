"""Acceptance gate: eleven numbered checks, one printed verdict line each.

Checks 1-6 validate the operator algebra, the fidelity term, the proximal
map and the solver's feasibility behavior on small grids.  Checks 7-11 run
a shared restoration study (three photon budgets x five seeds on a 64 x 64
phantom, an eight-point weight grid plus the automatic selection loop per
problem) and grade trend-level claims on it.  Run with ``-s`` to see the
verdict lines; the study takes around two and a half minutes on one core.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np
import pytest

from oracles import central_difference, dense_blur, dense_grad, dense_sym, prox_grid_search
from poisson_tgv import autoreg
from poisson_tgv.autoreg import AutoRegConfig
from poisson_tgv.harness import (
    DegradationSpec,
    degrade,
    disk_psf,
    make_phantom,
    relative_error,
)
from poisson_tgv.linops import (
    GradField,
    Image,
    SymField,
    build_psf_spectrum,
    grad,
    grad_adjoint,
    identity_operator,
    laplacian_spectrum,
    solve_spectral,
    sym_deriv,
    sym_deriv_adjoint,
)
from poisson_tgv.model import (
    PoissonData,
    kl_divergence,
    kl_gradient,
    prox_group_norm,
)
from poisson_tgv.solvers import AdmmConfig, AdmmSolver, admm_solve, with_lambda

SEEDS = (0, 1, 2, 3, 4)
SNRS = (38.0, 40.0, 42.0)
GRID = np.geomspace(0.3, 100.0, 8)
BASE = AdmmConfig(
    lam=1.0, alpha0=0.1, alpha1=0.9, rho=1.0, sigma=1e-6, tol=1e-4, max_iter=200
)


def verdict(num: int, label: str, ok: bool, detail: str = "") -> None:
    suffix = f"  [{detail}]" if detail else ""
    print(f"[{num:02d}] {'PASS' if ok else 'FAIL'} {label}{suffix}")
    assert ok, f"check {num:02d} failed: {label}{suffix}"


# -- 1-4: operator algebra, fidelity calculus, proximal map -----------------


def test_01_adjoint_identities_across_seeds():
    started = time.perf_counter()
    blur = build_psf_spectrum(disk_psf(2.0), 16, 16)
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = Image(16, 16, rng.standard_normal(256))
        y = Image(16, 16, rng.standard_normal(256))
        p = GradField(16, 16, rng.standard_normal(512))
        q = SymField(16, 16, rng.standard_normal(1024))
        pairs = (
            (grad(x).data @ p.data, x.data @ grad_adjoint(p).data),
            (sym_deriv(p).data @ q.data, p.data @ sym_deriv_adjoint(q).data),
            (blur.apply(x).data @ y.data, x.data @ blur.apply_adjoint(y).data),
        )
        for left, right in pairs:
            worst = max(worst, abs(left - right) / max(abs(left), abs(right), 1e-300))
    elapsed = time.perf_counter() - started
    verdict(
        1,
        "adjoint identities for grad, sym_deriv and blur on 16x16, 100 seeds",
        worst <= 1e-10 and elapsed < 5.0,
        f"worst rel gap {worst:.2e}, {elapsed:.2f}s",
    )


def test_02_spectral_paths_match_dense_linear_algebra():
    rng = np.random.default_rng(7)
    h = w = 8
    n = h * w
    blur = build_psf_spectrum(disk_psf(2.0), h, w)
    a_dense = dense_blur(disk_psf(2.0), h, w)
    g_dense = dense_grad(h, w)
    e_dense = dense_sym(h, w)
    x = rng.standard_normal(n)
    gaps = []

    def rel(got, want):
        return np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-300)

    gaps.append(rel(blur.apply(Image(h, w, x)).data, a_dense @ x))
    gaps.append(rel(grad_adjoint(grad(Image(h, w, x))).data, g_dense.T @ (g_dense @ x)))

    lam, tau, sigma, rho = 2.0, 0.6, 1e-3, 1.2
    metric = lam * tau * np.abs(blur.spectrum) ** 2 + sigma + rho * laplacian_spectrum(h, w)
    h_dense = lam * tau * (a_dense.T @ a_dense) + sigma * np.eye(n) + rho * (g_dense.T @ g_dense)
    rhs = rng.standard_normal(n)
    gaps.append(rel(solve_spectral(metric, Image(h, w, rhs)).data, np.linalg.solve(h_dense, rhs)))

    data = PoissonData(b=np.ones(n), gamma=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        solver = AdmmSolver(data, identity_operator(h, w), AdmmConfig(lam=1.0, sigma=3.0))
    state = solver.initial_state(Image(h, w, rng.random(n) + 0.5))
    state.w = GradField(h, w, rng.standard_normal(2 * n))
    state.z0 = GradField(h, w, rng.standard_normal(2 * n))
    state.z1 = SymField(h, w, rng.standard_normal(4 * n))
    state.mu = rng.standard_normal(6 * n)
    v_top = state.z0.data - g_dense @ state.u.data - state.mu[: 2 * n]
    v_bottom = state.z1.data - state.mu[2 * n :]
    w_dense = np.linalg.solve(
        np.eye(2 * n) + e_dense.T @ e_dense, e_dense.T @ v_bottom - v_top
    )
    gaps.append(rel(solver.update_w(state).data, w_dense))

    worst = max(gaps)
    verdict(
        2,
        "blur, grad'grad, the u-metric solve and the w-solve match dense oracles on 8x8",
        worst <= 1e-8,
        f"worst rel gap {worst:.2e}",
    )


def test_03_kl_gradient_matches_central_differences():
    blur = build_psf_spectrum(disk_psf(1.5), 8, 8)
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        data = PoissonData(b=rng.integers(0, 20, size=64).astype(float), gamma=0.5)
        u = Image(8, 8, 0.5 + 2.0 * rng.random(64))
        got = kl_gradient(u, data, blur)
        want = central_difference(
            lambda vec: kl_divergence(Image(8, 8, vec), data, blur), u.data
        )
        worst = max(worst, np.linalg.norm(got - want) / max(np.linalg.norm(want), 1.0))
    verdict(
        3,
        "KL gradient agrees with central differences on 100 random 8x8 instances",
        worst <= 1e-5,
        f"worst rel gap {worst:.2e}",
    )


def test_04_prox_matches_grid_search():
    worst = 0.0
    for dim in (2, 4):
        rng = np.random.default_rng(dim)
        for _ in range(50):
            d = 3.0 * rng.standard_normal(dim)
            c = 0.01 + 2.0 * rng.random()
            got = prox_group_norm(d, c)
            want = prox_grid_search(d, c)
            worst = max(worst, float(np.max(np.abs(got - want))))
    verdict(
        4,
        "group-norm prox matches grid-search minimization, 50 cases in dims 2 and 4",
        worst <= 1e-6,
        f"worst abs gap {worst:.2e}",
    )


# -- 5-6: solver feasibility and the guaranteed parameter regime ------------


def test_05_primal_residual_drains_and_iterates_stay_nonnegative():
    started = time.perf_counter()
    problem = degrade(make_phantom(32, 32), DegradationSpec(radius=2.0, target_snr_db=40.0, rng_seed=0))
    config = AdmmConfig(
        lam=10.0, alpha0=0.1, alpha1=0.9, rho=1.0, sigma=1e-6, tol=1e-7, max_iter=3000
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        state, trace = admm_solve(
            problem.working_data(), problem.blur, config, problem.observed_image()
        )
    elapsed = time.perf_counter() - started
    residuals = trace.primal_residual
    ok = (
        residuals[-1] < 1e-3
        and residuals[-1] < 0.01 * residuals[0]
        and min(trace.u_min) >= 0.0
        and elapsed < 30.0
    )
    verdict(
        5,
        "32x32 run ends with primal residual < 1e-3, < 1% of sweep 1, u >= 0 throughout",
        ok,
        f"residual {residuals[-1]:.2e}, ratio {residuals[-1] / residuals[0]:.2e}, {elapsed:.1f}s",
    )


def test_06_tolerance_reached_in_guaranteed_parameter_range():
    problem = degrade(make_phantom(16, 16), DegradationSpec(radius=2.0, target_snr_db=40.0, rng_seed=0))
    config = AdmmConfig(
        lam=10.0, alpha0=0.1, alpha1=0.9, rho=1e-3, sigma=1e-2, tol=1e-4, max_iter=2500
    )
    assert config.rho < (6.0 / 17.0) * config.sigma
    state, trace = admm_solve(
        problem.working_data(), problem.blur, config, problem.observed_image()
    )
    ok = state.k < config.max_iter and trace.rel_change[-1] <= config.tol
    verdict(
        6,
        "rho < 6*sigma/17 run terminates by tolerance before the iteration cap",
        ok,
        f"stopped at sweep {state.k} with rel change {trace.rel_change[-1]:.2e}",
    )


# -- 7-11: the shared restoration study --------------------------------------


@dataclass
class StudyRun:
    observed_err: float
    best_lambda: float
    best_err: float
    best_solve_time: float
    auto_err: float
    auto_time: float
    outer_iterations: int
    lambdas: list


@pytest.fixture(scope="module")
def study():
    runs = {}
    started = time.perf_counter()
    with warnings.catch_warnings():
        # Practical rho/sigma sit outside the guaranteed range on purpose.
        warnings.simplefilter("ignore", RuntimeWarning)
        for snr in SNRS:
            for seed in SEEDS:
                spec = DegradationSpec(radius=3.0, target_snr_db=snr, rng_seed=seed)
                problem = degrade(make_phantom(64, 64), spec)
                data = problem.working_data()
                b_image = problem.observed_image()
                errors, times = [], []
                for lam in GRID:
                    t0 = time.perf_counter()
                    state, _ = admm_solve(data, problem.blur, with_lambda(BASE, lam), b_image)
                    times.append(time.perf_counter() - t0)
                    errors.append(relative_error(state.u, problem.exact))
                best = int(np.argmin(errors))
                t0 = time.perf_counter()
                _, report = autoreg.run(
                    data, problem.blur, BASE, AutoRegConfig(), ground_truth=problem.exact
                )
                runs[(snr, seed)] = StudyRun(
                    observed_err=relative_error(b_image, problem.exact),
                    best_lambda=float(GRID[best]),
                    best_err=float(errors[best]),
                    best_solve_time=times[best],
                    auto_err=float(report.rel_errors[-1]),
                    auto_time=time.perf_counter() - t0,
                    outer_iterations=report.outer_iterations,
                    lambdas=list(report.lambdas),
                )
    return runs, time.perf_counter() - started


def test_07_both_restorations_beat_the_observation(study):
    runs, elapsed = study
    failures = [
        key
        for key, run in runs.items()
        if not (run.best_err < run.observed_err and run.auto_err < run.observed_err)
    ]
    ok = not failures and elapsed < 180.0
    verdict(
        7,
        "grid-best and auto restorations beat the observation on all 15 problems",
        ok,
        f"failures {failures or 'none'}, study {elapsed:.1f}s",
    )


def test_08_auto_weight_close_to_grid_best(study):
    runs, _ = study
    counts = {
        snr: sum(1 for seed in SEEDS if runs[(snr, seed)].auto_err <= 1.3 * runs[(snr, seed)].best_err)
        for snr in SNRS
    }
    worst = max(runs[key].auto_err / runs[key].best_err for key in runs)
    verdict(
        8,
        "auto error within 1.3x of the grid best for at least 4/5 seeds per budget",
        all(count >= 4 for count in counts.values()),
        f"counts {counts}, worst ratio {worst:.2f}",
    )


def test_09_weight_iteration_stabilizes(study):
    runs, _ = study
    ok = True
    detail = []
    for seed in SEEDS:
        run = runs[(38.0, seed)]
        lams = run.lambdas
        changes = [abs(b - a) / a for a, b in zip(lams, lams[1:])]
        seed_ok = run.outer_iterations <= 5 and len(changes) >= 2 and changes[-1] < changes[0]
        ok = ok and seed_ok
        detail.append(f"{changes[0]:.2f}->{changes[-1]:.2f}")
    verdict(
        9,
        "at 38 dB the weight loop stops within 5 outers and its steps shrink",
        ok,
        "rel change first->last " + ", ".join(detail),
    )


def test_10_outer_iteration_counts_match_reported_range(study):
    runs, _ = study
    counts = {
        snr: sum(1 for seed in SEEDS if 1 <= runs[(snr, seed)].outer_iterations <= 3)
        for snr in SNRS
    }
    verdict(
        10,
        "outer iteration counts fall in 1..3 for at least 4/5 seeds per budget",
        all(count >= 4 for count in counts.values()),
        f"in-range counts {counts}",
    )


def test_11_auto_cost_bounded_by_single_solve(study):
    runs, _ = study
    ratios = [run.auto_time / run.best_solve_time for run in runs.values()]
    verdict(
        11,
        "auto wall time is at most 6x the best fixed-weight solve",
        max(ratios) <= 6.0,
        f"ratio range {min(ratios):.2f}..{max(ratios):.2f}",
    )
