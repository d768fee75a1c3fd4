"""Three-block ADMM for nonnegatively constrained KL-TGV2 restoration.

The model

    min_{u >= 0}  lam * D(u) + alpha0 ||grad u - w||_{2,1}
                             + alpha1 ||sym_deriv w||_{2,1}

is split over three blocks by introducing ``z = (grad u - w; sym_deriv w)``
and scaled multipliers ``mu``.  One sweep updates, in order,

* ``u``: a smooth bound-constrained subproblem (fidelity + small strong
  convexity + quadratic coupling), handled by a projected quasi-Newton
  method whose metric is DFT-diagonal and therefore invertible exactly;
* ``w``: an unconstrained linear least-squares problem whose normal
  equations form a 2x2 block system, diagonal per frequency, inverted with
  factors precomputed at solver construction;
* ``z``: independent pixelwise group soft thresholds;
* ``mu``: the scaled multiplier ascent step, whose increment is the primal
  residual.

The augmented Lagrangian uses a single penalty ``rho``.  A small
``sigma/2 * ||u||^2`` term makes the smooth block strongly convex; the
known sufficient condition for convergence asks for ``rho < 6 sigma / 17``,
far smaller than the values that work well in practice, so violating it
only emits a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

import scipy.fft as sfft

from .linops import (
    GradField,
    Image,
    SingularSystemError,
    SymField,
    _grad_adjoint_grids,
    _grad_grids,
    _sym_adjoint_grids,
    grad,
    gradient_spectra,
    laplacian_spectrum,
    sym_deriv,
)
from .model import (
    PoissonData,
    group_soft_threshold,
    kl_divergence,
    norm21_2n,
    norm21_4n,
)

__all__ = [
    "AdmmConfig",
    "AdmmState",
    "AdmmTrace",
    "AdmmSolver",
    "admm_solve",
    "DivergenceError",
]

ARMIJO_C1 = 1e-4
MAX_BACKTRACKS = 30


class DivergenceError(RuntimeError):
    """An iterate block became non-finite."""

    def __init__(self, block: str, message: str | None = None) -> None:
        self.block = block
        super().__init__(message or f"non-finite values in ADMM block {block!r}")


@dataclass
class AdmmConfig:
    """Solver parameters.

    ``lam`` weights the fidelity (``lam = 0`` drops it, which is only
    useful for exercising the smooth subproblem on its own).  ``alpha0``
    and ``alpha1`` weight the two group norms.  ``tol`` bounds the relative
    change of ``u`` between sweeps, in the 2-norm.
    """

    lam: float
    alpha0: float = 0.1
    alpha1: float = 0.9
    rho: float = 1.0
    sigma: float = 1e-6
    tol: float = 1e-4
    max_iter: int = 500
    qnp_max_iter: int = 10
    qnp_tol: float = 1e-6

    def __post_init__(self) -> None:
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be nonnegative and finite")
        if self.alpha0 < 0 or self.alpha1 < 0:
            raise ValueError("group-norm weights must be nonnegative")
        if not np.isfinite(self.rho) or self.rho <= 0:
            raise ValueError("rho must be positive and finite")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1 or self.qnp_max_iter < 1:
            raise ValueError("iteration limits must be at least 1")
        if self.qnp_tol <= 0:
            raise ValueError("qnp_tol must be positive")

    @property
    def penalty_bound_ok(self) -> bool:
        """Whether ``rho`` sits inside the guaranteed-convergence range."""
        return self.rho < (6.0 / 17.0) * self.sigma


@dataclass
class AdmmState:
    """Current iterate: primal blocks, multipliers and loop diagnostics."""

    u: Image
    w: GradField
    z0: GradField
    z1: SymField
    mu: np.ndarray
    k: int = 0
    rel_change: float = np.inf
    primal_residual: float = 0.0
    objective: float = np.nan


@dataclass
class AdmmTrace:
    """Per-sweep history of the quantities the stopping logic looks at."""

    objective: list[float] = field(default_factory=list)
    rel_change: list[float] = field(default_factory=list)
    primal_residual: list[float] = field(default_factory=list)
    u_min: list[float] = field(default_factory=list)

    def append(
        self, objective: float, rel_change: float, primal_residual: float, u_min: float
    ) -> None:
        self.objective.append(objective)
        self.rel_change.append(rel_change)
        self.primal_residual.append(primal_residual)
        self.u_min.append(u_min)

    def __len__(self) -> int:
        return len(self.objective)

    def as_dict(self) -> dict[str, list[float]]:
        return {
            "objective": list(self.objective),
            "rel_change": list(self.rel_change),
            "primal_residual": list(self.primal_residual),
            "u_min": list(self.u_min),
        }


class _CountTerms:
    """Count statistics of the fidelity, precomputed once per run.

    Every line-search candidate needs the fidelity value at a fresh mean
    intensity ``m``; splitting off the parts that depend only on the counts
    leaves one log and two reductions per evaluation.
    """

    def __init__(self, b: np.ndarray) -> None:
        self.b = b
        self.pos = b > 0
        self.b_pos = b[self.pos]
        self.offset = float(np.dot(self.b_pos, np.log(self.b_pos))) - float(b.sum())

    def value(self, m: np.ndarray) -> float:
        return (
            float(m.sum()) + self.offset - float(np.dot(self.b_pos, np.log(m[self.pos])))
        )

    def residual(self, m: np.ndarray) -> np.ndarray:
        return 1.0 - self.b / m

    def mean_weight(self, m: np.ndarray) -> float:
        return float(np.mean(self.b / (m * m)))


class AdmmSolver:
    """Holds the data, the operator and every spectral factor of one run."""

    def __init__(self, data: PoissonData, blur, config: AdmmConfig) -> None:
        if data.n != blur.n:
            raise ValueError("data and operator sizes differ")
        self.data = data
        self.blur = blur
        self.config = config
        self.height = blur.height
        self.width = blur.width
        self.n = blur.n
        self._counts = _CountTerms(data.b)
        self._mean_at_u: np.ndarray | None = None
        self._entry_cache: tuple | None = None

        # The quasi-Newton metric and the w-block inverse live on the
        # half-width real-FFT grid whenever the blur kernel is real; a
        # non-Hermitian custom spectrum forces the full complex grid.
        half = blur._half is not None
        self._half_metric = half
        cols = slice(None, self.width // 2 + 1) if half else slice(None)
        self._abs2_blur = np.abs(blur._half if half else blur.spectrum) ** 2
        self._lap = laplacian_spectrum(self.height, self.width)[:, cols]

        # Normal equations of the w block: (I + E'E) w = rhs, a Hermitian
        # positive definite 2x2 system per frequency.  Schur-complement
        # inversion is stable here because the diagonal blocks are >= 1.
        # Difference kernels are real, so this always fits the half grid.
        half_cols = slice(None, self.width // 2 + 1)
        dh, dv = (s[:, half_cols] for s in gradient_spectra(self.height, self.width))
        ah, av = np.abs(dh) ** 2, np.abs(dv) ** 2
        psi11 = 1.0 + ah + 0.5 * av
        psi22 = 1.0 + 0.5 * ah + av
        psi12 = 0.5 * np.conj(dv) * dh
        psi21 = 0.5 * np.conj(dh) * dv
        cross = (psi12 * psi21).real
        om1 = 1.0 / (psi11 - cross / psi22)
        om2 = 1.0 / (psi22 - cross / psi11)
        self._w_inverse = (
            om1.astype(complex),
            -om1 * psi12 / psi22,
            -om2 * psi21 / psi11,
            om2.astype(complex),
        )

        if not config.penalty_bound_ok:
            warnings.warn(
                f"rho={config.rho:g} is outside the guaranteed-convergence "
                f"range rho < 6*sigma/17 = {6 * config.sigma / 17:g}; "
                "proceeding anyway",
                RuntimeWarning,
                stacklevel=3,
            )

    def _solve_metric(self, metric: np.ndarray, rhs_grid: np.ndarray) -> np.ndarray:
        if metric.min() <= 0:
            raise SingularSystemError("quasi-Newton metric has a nonpositive entry")
        if self._half_metric:
            return sfft.irfft2(sfft.rfft2(rhs_grid) / metric, s=rhs_grid.shape)
        return np.fft.ifft2(np.fft.fft2(rhs_grid) / metric).real

    # -- u block -------------------------------------------------------

    def _u_value(self, u: Image, v_top: np.ndarray) -> float:
        """Smooth subproblem objective; reference path for the fused loop."""
        cfg = self.config
        gu = grad(u).data
        value = 0.5 * cfg.sigma * float(np.dot(u.data, u.data))
        diff = gu - v_top
        value += 0.5 * cfg.rho * float(np.dot(diff, diff))
        if cfg.lam > 0:
            value += cfg.lam * kl_divergence(u, self.data, self.blur)
        return value

    def update_u(self, state: AdmmState) -> Image:
        """Projected quasi-Newton sweep on the smooth subproblem.

        The metric ``lam * tau * |A|^2 + sigma + rho * |grad|^2`` (per
        frequency, with ``tau`` the mean curvature weight at the current
        point) is inverted exactly.  Coordinates pinned at the bound with a
        gradient pointing into it are excluded from the solve, so the
        Newton coupling only acts on free variables and the projected arc
        is a descent path; pinned coordinates fall back to the plain
        negative gradient, which the projection clamps at zero.

        Each point is evaluated through one forward transform whose mean
        intensity is reused by the value, the gradient and the curvature
        weight; the line search starts from twice the previously accepted
        step length, capped at 1.
        """
        cfg = self.config
        n = self.n
        shape = (self.height, self.width)
        v_top = state.z0.data + state.w.data - state.mu[: 2 * n]
        v1 = v_top[:n].reshape(shape)
        v2 = v_top[n:].reshape(shape)
        lam = cfg.lam
        counts = self._counts
        gamma = self.data.gamma

        def quad_parts(vec, grid):
            gh, gv = _grad_grids(grid)
            rh = gh - v1
            rv = gv - v2
            value = 0.5 * cfg.sigma * float(np.dot(vec, vec))
            value += 0.5 * cfg.rho * (
                float(np.dot(rh.ravel(), rh.ravel()))
                + float(np.dot(rv.ravel(), rv.ravel()))
            )
            return value, rh, rv

        def fidelity_parts(grid):
            m = self.blur._apply_grid(grid).ravel() + gamma
            if m.min() <= 0:
                raise ValueError("model intensity must stay strictly positive")
            return m, counts.value(m)

        def fidelity_grad(m):
            return self.blur._apply_adjoint_grid(
                counts.residual(m).reshape(shape)
            ).ravel()

        def quad_grad(vec, rh, rv):
            return cfg.sigma * vec + cfg.rho * _grad_adjoint_grids(rh, rv).ravel()

        u = state.u.data.copy()
        grid = u.reshape(shape)
        f0, rh, rv = quad_parts(u, grid)
        m = kl_val = klg = None
        if lam > 0:
            # The entry point is the previously accepted iterate, so its
            # fidelity pieces (the only transforms here) can be reused.
            cache = self._entry_cache
            if cache is not None and np.array_equal(cache[0], u):
                _, m, kl_val, klg = cache
            else:
                m, kl_val = fidelity_parts(grid)
                klg = fidelity_grad(m)
            f0 += lam * kl_val
            g = quad_grad(u, rh, rv) + lam * klg
        else:
            g = quad_grad(u, rh, rv)
        threshold = cfg.qnp_tol * (1.0 + float(np.linalg.norm(g)))
        alpha_start = 1.0
        smooth_accepts = 0
        for _ in range(cfg.qnp_max_iter):
            pg = np.where(u > 0, g, np.minimum(g, 0.0))
            if np.linalg.norm(pg) <= threshold:
                break
            tau = counts.mean_weight(m) if lam > 0 else 0.0
            metric = lam * tau * self._abs2_blur + cfg.sigma + cfg.rho * self._lap
            pinned = (u <= 0.0) & (g > 0.0)
            g_free = np.where(pinned, 0.0, g)
            step = self._solve_metric(metric, -g_free.reshape(shape)).ravel()
            step[pinned] = -g[pinned]
            alpha = alpha_start
            accepted = False
            backtracks = 0
            while backtracks < MAX_BACKTRACKS:
                cand = np.maximum(u + alpha * step, 0.0)
                cand_grid = cand.reshape(shape)
                fc, rhc, rvc = quad_parts(cand, cand_grid)
                if lam > 0:
                    mc, kl_c = fidelity_parts(cand_grid)
                    fc += lam * kl_c
                else:
                    mc = kl_c = None
                if fc <= f0 + ARMIJO_C1 * float(np.dot(g, cand - u)):
                    accepted = True
                    break
                alpha *= 0.5
                backtracks += 1
            if not accepted:
                break
            u, grid, f0, m, kl_val, rh, rv = cand, cand_grid, fc, mc, kl_c, rhc, rvc
            if lam > 0:
                klg = fidelity_grad(m)
                g = quad_grad(u, rh, rv) + lam * klg
            else:
                g = quad_grad(u, rh, rv)
            # Retry from a longer step only after two immediate acceptances
            # in a row; doubling on every success wastes an evaluation per
            # iteration once the step length has settled.
            smooth_accepts = smooth_accepts + 1 if backtracks == 0 else 0
            if smooth_accepts >= 2:
                alpha_start = min(1.0, 2.0 * alpha)
                smooth_accepts = 0
            else:
                alpha_start = alpha
        self._mean_at_u = m
        self._entry_cache = None if m is None else (u, m, kl_val, klg)
        return Image(self.height, self.width, u)

    # -- w block -------------------------------------------------------

    def update_w(self, state: AdmmState, gu: GradField | None = None) -> GradField:
        """Exact solve of ``(I + E'E) w = rhs`` through the 2x2 spectral blocks."""
        n = self.n
        shape = (self.height, self.width)
        if gu is None:
            gu = grad(state.u)
        v_top = state.z0.data - gu.data - state.mu[: 2 * n]
        v_bottom = state.z1.data - state.mu[2 * n :]
        y = SymField(self.height, self.width, v_bottom)
        c1, c2 = _sym_adjoint_grids(
            y.component_grid(0),
            y.component_grid(1) + y.component_grid(2),
            y.component_grid(3),
        )
        r1 = sfft.rfft2(c1 - v_top[:n].reshape(shape))
        r2 = sfft.rfft2(c2 - v_top[n:].reshape(shape))
        i11, i12, i21, i22 = self._w_inverse
        w1 = sfft.irfft2(i11 * r1 + i12 * r2, s=shape)
        w2 = sfft.irfft2(i21 * r1 + i22 * r2, s=shape)
        return GradField(
            self.height, self.width, np.concatenate([w1.ravel(), w2.ravel()])
        )

    # -- z block and multipliers ----------------------------------------

    def update_z(
        self,
        state: AdmmState,
        gu: GradField | None = None,
        ew: SymField | None = None,
    ) -> tuple[GradField, SymField]:
        """Pixelwise group shrinkage of both stacked constraint targets."""
        cfg = self.config
        n = self.n
        if gu is None:
            gu = grad(state.u)
        if ew is None:
            ew = sym_deriv(state.w)
        v_top = gu.data - state.w.data + state.mu[: 2 * n]
        v_bottom = ew.data + state.mu[2 * n :]
        z0 = group_soft_threshold(v_top.reshape(2, n), cfg.alpha0 / cfg.rho)
        z1 = group_soft_threshold(v_bottom.reshape(4, n), cfg.alpha1 / cfg.rho)
        return (
            GradField(self.height, self.width, z0.ravel()),
            SymField(self.height, self.width, z1.ravel()),
        )

    def update_multipliers(
        self,
        state: AdmmState,
        gu: GradField | None = None,
        ew: SymField | None = None,
    ) -> tuple[np.ndarray, float]:
        """Scaled ascent step; returns the new multipliers and the primal residual."""
        if gu is None:
            gu = grad(state.u)
        if ew is None:
            ew = sym_deriv(state.w)
        residual = np.concatenate(
            [
                gu.data - state.w.data - state.z0.data,
                ew.data - state.z1.data,
            ]
        )
        return state.mu + residual, float(np.linalg.norm(residual))

    # -- driver ----------------------------------------------------------

    def objective(self, state: AdmmState) -> float:
        cfg = self.config
        residual = GradField(self.height, self.width, grad(state.u).data - state.w.data)
        value = cfg.alpha0 * norm21_2n(residual)
        value += cfg.alpha1 * norm21_4n(sym_deriv(state.w))
        if cfg.lam > 0:
            value += cfg.lam * kl_divergence(state.u, self.data, self.blur)
        return value

    def _sweep_objective(self, state: AdmmState, gu: GradField, ew: SymField) -> float:
        """Objective from quantities the sweep already holds (one log, no FFT)."""
        cfg = self.config
        residual = GradField(self.height, self.width, gu.data - state.w.data)
        value = cfg.alpha0 * norm21_2n(residual)
        value += cfg.alpha1 * norm21_4n(ew)
        if cfg.lam > 0:
            value += cfg.lam * self._counts.value(self._mean_at_u)
        return value

    def initial_state(self, u_init: Image) -> AdmmState:
        """Start from ``u = u_init``, ``w = 0`` and consistent ``z``, zero ``mu``."""
        if (u_init.height, u_init.width) != (self.height, self.width):
            raise ValueError("initial image shape differs from the operator grid")
        if np.any(u_init.data < 0):
            raise ValueError("initial image must be nonnegative")
        u = Image(self.height, self.width, u_init.data.copy())
        w = GradField.zeros(self.height, self.width)
        z0 = grad(u)
        z1 = SymField.zeros(self.height, self.width)
        mu = np.zeros(6 * self.n)
        state = AdmmState(u=u, w=w, z0=z0, z1=z1, mu=mu)
        state.objective = self.objective(state)
        return state

    @staticmethod
    def _checked(values: np.ndarray, block: str) -> np.ndarray:
        if not np.all(np.isfinite(values)):
            raise DivergenceError(block)
        return values

    def solve(self, u_init: Image) -> tuple[AdmmState, AdmmTrace]:
        cfg = self.config
        state = self.initial_state(u_init)
        trace = AdmmTrace()
        for k in range(1, cfg.max_iter + 1):
            previous = state.u.data
            try:
                state.u = self.update_u(state)
            except ValueError as exc:
                raise DivergenceError("u", str(exc)) from exc
            self._checked(state.u.data, "u")
            gu = grad(state.u)
            state.w = self.update_w(state, gu)
            self._checked(state.w.data, "w")
            ew = sym_deriv(state.w)
            state.z0, state.z1 = self.update_z(state, gu, ew)
            self._checked(state.z0.data, "z")
            self._checked(state.z1.data, "z")
            state.mu, state.primal_residual = self.update_multipliers(state, gu, ew)
            self._checked(state.mu, "multipliers")
            state.k = k
            norm_u = float(np.linalg.norm(state.u.data))
            norm_diff = float(np.linalg.norm(state.u.data - previous))
            if norm_u > 0:
                state.rel_change = norm_diff / norm_u
            else:
                state.rel_change = 0.0 if norm_diff == 0 else np.inf
            state.objective = self._sweep_objective(state, gu, ew)
            trace.append(
                state.objective,
                state.rel_change,
                state.primal_residual,
                float(state.u.data.min()),
            )
            if state.rel_change <= cfg.tol:
                break
        return state, trace


def admm_solve(
    data: PoissonData, blur, config: AdmmConfig, u_init: Image
) -> tuple[AdmmState, AdmmTrace]:
    """Run the three-block ADMM from ``u_init`` until the relative change
    of ``u`` falls to ``config.tol`` or ``config.max_iter`` sweeps elapse.

    Returns the final state together with the per-sweep trace of the
    objective, the relative change, the primal residual norm and the
    minimum entry of ``u`` (always 0 or more: the u step projects).
    """
    solver = AdmmSolver(data, blur, config)
    return solver.solve(u_init)


def with_lambda(config: AdmmConfig, lam: float) -> AdmmConfig:
    """A copy of ``config`` with a different fidelity weight."""
    return replace(config, lam=lam)
