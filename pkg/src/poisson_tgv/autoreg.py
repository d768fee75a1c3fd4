"""Automatic fidelity-weight selection by a balancing fixed point.

The weight that multiplies the KL fidelity is driven toward a balance
between regularity and fit: after each full restoration the next weight is

    lam_next = balance_gamma * TGV2(u, w) / D(u),

evaluated at the restored pair.  Starting from a deliberately large weight
(an underregularized first solve) the ratio drops quickly and settles
within a few outer iterations; the loop stops as soon as the relative
change of the weight falls under ``stop_threshold`` or after ``max_outer``
restorations.  Each restoration warm starts from the previous one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .harness import relative_error
from .linops import BccbOperator, GradField, Image, grad
from .model import ModelParams, PoissonData, kl_divergence, norm21_2n, tgv2_value
from .solvers import AdmmConfig, AdmmTrace, admm_solve, with_lambda

__all__ = [
    "DegenerateDataError",
    "AutoRegConfig",
    "AutoRegReport",
    "initial_lambda",
    "update_lambda",
    "run",
]


class DegenerateDataError(RuntimeError):
    """The observed data already fit the model exactly; nothing to select."""


@dataclass
class AutoRegConfig:
    """Outer-loop parameters of the balancing iteration."""

    balance_gamma: float = 2.5
    max_outer: int = 5
    stop_threshold: float = 0.9
    lambda0_factor: float = 10.0

    def __post_init__(self) -> None:
        if self.balance_gamma <= 0:
            raise ValueError("balance_gamma must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if self.stop_threshold <= 0:
            raise ValueError("stop_threshold must be positive")
        if self.lambda0_factor <= 0:
            raise ValueError("lambda0_factor must be positive")


@dataclass
class AutoRegReport:
    """What the outer loop did: one weight per fence post, one count per solve."""

    lambdas: list[float] = field(default_factory=list)
    rel_errors: list[float] = field(default_factory=list)
    inner_iteration_counts: list[int] = field(default_factory=list)
    outer_iterations: int = 0
    total_time: float = 0.0
    degenerate: bool = False
    traces: list[AdmmTrace] = field(default_factory=list)


def initial_lambda(
    observed: Image,
    gamma: np.ndarray,
    blur: BccbOperator,
    alpha0: float,
    lambda0_factor: float = 10.0,
) -> float:
    """Starting weight ``factor * alpha0 * ||grad b||_{2,1} / D(b)``.

    Evaluating the fidelity at the observed image itself measures how far
    the data sit from a perfect model fit.  A zero value means no noise to
    regularize against and raises :class:`DegenerateDataError`; a constant
    observed image returns 0, which callers must treat as degenerate.
    """
    data = PoissonData(observed.data, gamma)
    denominator = kl_divergence(observed, data, blur)
    if denominator == 0:
        raise DegenerateDataError("observed data fit the model exactly")
    return lambda0_factor * alpha0 * norm21_2n(grad(observed)) / denominator


def update_lambda(
    u: Image,
    w: GradField,
    data: PoissonData,
    blur: BccbOperator,
    params: ModelParams,
    balance_gamma: float,
) -> float:
    """Balancing update ``balance_gamma * TGV2(u, w) / D(u)``.

    Returns ``inf`` when the fit is perfect (``D(u) = 0``) and 0 when the
    restored pair carries no regularity at all; both are degenerate
    sentinels that halt the outer loop.
    """
    fit = kl_divergence(u, data, blur)
    if fit == 0:
        return np.inf
    return balance_gamma * tgv2_value(u, w, params) / fit


def run(
    data: PoissonData,
    blur: BccbOperator,
    admm_config: AdmmConfig,
    autoreg_config: AutoRegConfig | None = None,
    ground_truth: Image | None = None,
) -> tuple[Image, AutoRegReport]:
    """Restore with automatic selection of the fidelity weight.

    The observed counts double as the starting image.  ``admm_config.lam``
    is ignored; every other solver parameter is honored.  When
    ``ground_truth`` is given, the report collects the relative error after
    each outer restoration.

    Returns the final image and an :class:`AutoRegReport` whose ``lambdas``
    list has one more entry than restorations were run.
    """
    cfg = autoreg_config or AutoRegConfig()
    started = time.perf_counter()
    b_image = Image(blur.height, blur.width, data.b)
    report = AutoRegReport()

    lam = initial_lambda(
        b_image, data.gamma, blur, admm_config.alpha0, cfg.lambda0_factor
    )
    report.lambdas.append(lam)
    if not np.isfinite(lam) or lam <= 0:
        report.degenerate = True
        report.total_time = time.perf_counter() - started
        return b_image, report

    u = b_image
    for _ in range(cfg.max_outer):
        state, trace = admm_solve(data, blur, with_lambda(admm_config, lam), u)
        u = state.u
        report.inner_iteration_counts.append(state.k)
        report.traces.append(trace)
        report.outer_iterations += 1
        if ground_truth is not None:
            report.rel_errors.append(relative_error(u, ground_truth))
        params = ModelParams(lam, admm_config.alpha0, admm_config.alpha1)
        lam_next = update_lambda(u, state.w, data, blur, params, cfg.balance_gamma)
        report.lambdas.append(lam_next)
        if not np.isfinite(lam_next) or lam_next <= 0:
            report.degenerate = True
            break
        if abs(lam_next - lam) / lam < cfg.stop_threshold:
            lam = lam_next
            break
        lam = lam_next

    report.total_time = time.perf_counter() - started
    return u, report
