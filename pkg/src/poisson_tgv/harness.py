"""Synthetic problem generation, metrics and on-disk problem folders.

The degradation pipeline calibrates a photon budget from a target SNR,
blurs the scaled reference image, adds a uniform background, draws Poisson
counts and finally rescales the problem so the degraded image peaks at
intensity 1.  The SNR convention is

    snr_db(N_exact, N_background) = 10 log10(N_exact / sqrt(N_exact + N_background)),

with ``N_exact`` the total expected signal photons and ``N_background``
the total expected background photons.  Because the whole variational
objective is 1-homogeneous under a joint rescaling of image, counts and
background, the final unit change is purely a normalization; the observed
counts stay integral and the conversion factor rides along in the problem.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from . import image_io
from .linops import BccbOperator, Image, build_psf_spectrum, identity_operator
from .model import PoissonData

__all__ = [
    "DegradationSpec",
    "TestProblem",
    "disk_psf",
    "snr_db",
    "snr_scale",
    "poisson_sample",
    "poisson_field",
    "degrade",
    "relative_error",
    "make_phantom",
    "save_problem",
    "load_problem",
]

PROBLEM_SCHEMA_VERSION = 1
PGM_MAXVAL = 65535


@dataclass
class DegradationSpec:
    """How to corrupt a reference image.

    ``background_level`` is relative to the peak of the reference image, so
    after the final unit normalization the uniform background lands close
    to this value.  ``radius`` is only read for the disk PSF and ``kernel``
    only for a custom one.
    """

    psf_kind: str = "disk"
    radius: float = 5.0
    kernel: np.ndarray | None = None
    target_snr_db: float = 40.0
    background_level: float = 1e-3
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.psf_kind not in ("disk", "identity", "custom"):
            raise ValueError(f"unknown psf_kind {self.psf_kind!r}")
        if self.psf_kind == "disk" and self.radius <= 0:
            raise ValueError("disk radius must be positive")
        if self.psf_kind == "custom" and self.kernel is None:
            raise ValueError("custom psf_kind needs a kernel")
        if self.background_level <= 0:
            raise ValueError("background_level must be positive")
        if not math.isfinite(self.target_snr_db):
            raise ValueError("target_snr_db must be finite")

    def build_blur(self, height: int, width: int) -> BccbOperator:
        if self.psf_kind == "identity":
            return identity_operator(height, width)
        if self.psf_kind == "disk":
            return build_psf_spectrum(disk_psf(self.radius), height, width)
        return build_psf_spectrum(self.kernel, height, width)


@dataclass
class TestProblem:
    """A degraded problem plus everything needed to judge a restoration.

    ``observed`` keeps the raw integer counts with the background in count
    units.  ``exact`` is already expressed in working units (degraded image
    peak = 1).  ``photon_scale`` converts reference-image units to expected
    counts; ``applied_scale`` converts counts to working units.
    """

    exact: Image
    observed: PoissonData
    blur: BccbOperator
    spec: DegradationSpec
    applied_scale: float
    photon_scale: float

    def working_data(self) -> PoissonData:
        """Counts and background rescaled so the observed image peaks at 1."""
        return PoissonData(
            self.observed.b * self.applied_scale,
            self.observed.gamma * self.applied_scale,
        )

    def observed_image(self) -> Image:
        """The observed counts as an image in working units."""
        return Image(
            self.blur.height, self.blur.width, self.observed.b * self.applied_scale
        )


def disk_psf(radius: float) -> np.ndarray:
    """Binary disk kernel: pixel centers within ``radius``, unit mass.

    The side is ``2 * ceil(radius) + 1``, so the boundary ring of excluded
    centers is part of the stencil for fractional radii.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    reach = int(math.ceil(radius))
    offsets = np.arange(-reach, reach + 1)
    dist2 = offsets[:, None] ** 2 + offsets[None, :] ** 2
    kernel = (dist2 <= radius * radius).astype(float)
    return kernel / kernel.sum()


def snr_db(n_exact: float, n_background: float) -> float:
    """SNR in decibels of a photon budget split into signal and background."""
    if n_exact <= 0 or n_background < 0:
        raise ValueError("photon totals must be positive signal, nonnegative background")
    return 10.0 * math.log10(n_exact / math.sqrt(n_exact + n_background))


def snr_scale(exact: Image, background_total: float, target_snr_db: float) -> float:
    """Scale ``s`` with ``snr_db(s * N_exact, s * N_background) = target``.

    In linear units ``t = 10^(target/10)`` the closed form is
    ``s = t^2 (N_exact + N_background) / N_exact^2``; the identity is
    re-checked to 1e-9 dB before returning.
    """
    n_exact = float(np.sum(exact.data))
    if n_exact <= 0:
        raise ValueError("reference image has no mass")
    if background_total < 0:
        raise ValueError("background_total must be nonnegative")
    t = 10.0 ** (target_snr_db / 10.0)
    s = t * t * (n_exact + background_total) / (n_exact * n_exact)
    achieved = snr_db(s * n_exact, s * background_total)
    if abs(achieved - target_snr_db) > 1e-9:
        raise ArithmeticError("snr_scale failed its own consistency check")
    return s


# -- Poisson sampling ----------------------------------------------------
#
# Inversion by multiplication of uniforms below mean 10 (exact), transformed
# rejection above.  The rejection branch keeps working far past the point
# where library samplers reject the mean outright, which the very-high-SNR
# degradation path needs.

_PTRS_CUTOFF = 10.0


def _poisson_inversion(lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.full(lam.shape, -1.0)
    bound = np.exp(-lam)
    product = np.ones_like(lam)
    active = np.ones(lam.shape, dtype=bool)
    while np.any(active):
        product[active] *= rng.random(int(active.sum()))
        out[active] += 1.0
        active[active] = product[active] > bound[active]
    return out


def _poisson_ptrs(lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(lam.shape)
    loglam = np.log(lam)
    b = 0.931 + 2.53 * np.sqrt(lam)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    pending = np.arange(lam.size)
    while pending.size:
        u = rng.random(pending.size) - 0.5
        v = rng.random(pending.size)
        us = 0.5 - np.abs(u)
        k = np.floor((2.0 * a[pending] / us + b[pending]) * u + lam[pending] + 0.43)
        accept = (us >= 0.07) & (v <= v_r[pending])
        maybe = ~accept & (k >= 0) & ((us >= 0.013) | (v <= us))
        if np.any(maybe):
            idx = pending[maybe]
            kk = k[maybe]
            lhs = (
                np.log(v[maybe])
                + np.log(inv_alpha[idx])
                - np.log(a[idx] / (us[maybe] * us[maybe]) + b[idx])
            )
            rhs = kk * loglam[idx] - lam[idx] - gammaln(kk + 1.0)
            accept[maybe] = lhs <= rhs
        out[pending[accept]] = k[accept]
        pending = pending[~accept]
    return out


def poisson_field(means: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one Poisson sample per entry; returns integer-valued floats."""
    means = np.asarray(means, dtype=float)
    if not np.all(np.isfinite(means)) or np.any(means < 0):
        raise ValueError("Poisson means must be finite and nonnegative")
    flat = means.ravel()
    out = np.zeros_like(flat)
    small = flat < _PTRS_CUTOFF
    if np.any(small):
        out[small] = _poisson_inversion(flat[small], rng)
    if np.any(~small):
        out[~small] = _poisson_ptrs(flat[~small], rng)
    return out.reshape(means.shape)


def poisson_sample(mean: float, rng: np.random.Generator) -> int:
    """Draw a single Poisson sample; a mean of 0 always yields 0."""
    return int(poisson_field(np.array([float(mean)]), rng)[0])


def relative_error(u: Image, u_star: Image) -> float:
    """``||u - u*|| / ||u*||`` in the 2-norm over flat pixel vectors."""
    if (u.height, u.width) != (u_star.height, u_star.width):
        raise ValueError("image shapes differ")
    denominator = float(np.linalg.norm(u_star.data))
    if denominator == 0:
        raise ValueError("reference image is identically zero")
    return float(np.linalg.norm(u.data - u_star.data)) / denominator


def degrade(exact_raw: Image, spec: DegradationSpec) -> TestProblem:
    """Blur, add background and draw counts at the requested SNR.

    Deterministic given ``spec.rng_seed``.  The background in count units
    is ``background_level * peak(exact_raw)`` scaled by the photon budget,
    which breaks the circular dependence between the normalized background
    value and the realized peak count.
    """
    if exact_raw.data.max() <= 0:
        raise ValueError("reference image has no positive pixel")
    height, width = exact_raw.height, exact_raw.width
    blur = spec.build_blur(height, width)

    gamma_raw = spec.background_level * float(exact_raw.data.max())
    background_total = gamma_raw * exact_raw.n
    s = snr_scale(exact_raw, background_total, spec.target_snr_db)

    scaled = Image(height, width, s * exact_raw.data)
    mean = np.maximum(blur.apply(scaled).data + s * gamma_raw, 0.0)
    rng = np.random.default_rng(spec.rng_seed)
    counts = poisson_field(mean, rng)
    peak = counts.max()
    if peak <= 0:
        raise ValueError("degradation produced an empty image; SNR too low")
    c = 1.0 / float(peak)

    return TestProblem(
        exact=Image(height, width, c * s * exact_raw.data),
        observed=PoissonData(counts, np.full(exact_raw.n, s * gamma_raw)),
        blur=blur,
        spec=spec,
        applied_scale=c,
        photon_scale=s,
    )


def make_phantom(height: int, width: int) -> Image:
    """A piecewise-constant test image built from concentric shapes.

    Shapes are placed in relative coordinates so any grid size from a few
    pixels up produces the same layout.  Values lie in [0, 1].
    """
    if height < 2 or width < 2:
        raise ValueError("phantom needs at least a 2 x 2 grid")
    y = np.linspace(-1.0, 1.0, height)[:, None]
    x = np.linspace(-1.0, 1.0, width)[None, :]
    img = np.zeros((height, width))
    img[(x / 0.78) ** 2 + (y / 0.88) ** 2 <= 1.0] = 0.7
    img[(x / 0.48) ** 2 + ((y + 0.08) / 0.55) ** 2 <= 1.0] = 0.4
    img[(x + 0.28) ** 2 + (y + 0.3) ** 2 <= 0.14**2] = 1.0
    img[(x - 0.32) ** 2 + (y + 0.26) ** 2 <= 0.12**2] = 0.9
    img[(np.abs(x - 0.02) <= 0.12) & (y >= 0.22) & (y <= 0.58)] = 0.55
    return Image.from_grid(img)


# -- problem folders -------------------------------------------------------


def _quantize(values: np.ndarray) -> tuple[np.ndarray, float]:
    peak = float(values.max())
    if peak <= 0:
        return np.zeros_like(values, dtype=np.int64), 1.0
    if peak <= PGM_MAXVAL and np.allclose(values, np.rint(values)):
        return np.rint(values).astype(np.int64), 1.0
    scale = peak / PGM_MAXVAL
    return np.rint(values / scale).astype(np.int64), scale


def save_problem(problem: TestProblem, directory: str | Path) -> None:
    """Write ``exact.pgm``, ``observed.pgm`` and ``problem.json``.

    Pixel files are 16-bit; each carries a float scale in the JSON so real
    values are recoverable.  Counts are stored exactly whenever the peak
    fits in 16 bits.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    height, width = problem.blur.height, problem.blur.width

    exact_pixels, exact_scale = _quantize(problem.exact.as_grid())
    observed_pixels, observed_scale = _quantize(
        problem.observed.b.reshape(height, width)
    )
    image_io.write_pgm(directory / "exact.pgm", exact_pixels, PGM_MAXVAL)
    image_io.write_pgm(directory / "observed.pgm", observed_pixels, PGM_MAXVAL)

    spec = problem.spec
    meta = {
        "schema_version": PROBLEM_SCHEMA_VERSION,
        "height": height,
        "width": width,
        "psf_kind": spec.psf_kind,
        "radius": spec.radius,
        "kernel": None if spec.kernel is None else np.asarray(spec.kernel).tolist(),
        "target_snr_db": spec.target_snr_db,
        "background_level": spec.background_level,
        "rng_seed": spec.rng_seed,
        "applied_scale": problem.applied_scale,
        "photon_scale": problem.photon_scale,
        "gamma_counts": float(problem.observed.gamma[0]),
        "exact_scale": exact_scale,
        "observed_scale": observed_scale,
    }
    (directory / "problem.json").write_text(json.dumps(meta, indent=2))


def load_problem(directory: str | Path) -> TestProblem:
    """Rebuild a :class:`TestProblem` from a folder written by
    :func:`save_problem`."""
    directory = Path(directory)
    meta = json.loads((directory / "problem.json").read_text())
    if meta["schema_version"] != PROBLEM_SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {meta['schema_version']}")
    height, width = meta["height"], meta["width"]

    exact_pixels, _ = image_io.read_pgm(directory / "exact.pgm")
    observed_pixels, _ = image_io.read_pgm(directory / "observed.pgm")
    exact = Image.from_grid(exact_pixels * meta["exact_scale"])
    counts = observed_pixels.astype(float).ravel() * meta["observed_scale"]

    spec = DegradationSpec(
        psf_kind=meta["psf_kind"],
        radius=meta["radius"],
        kernel=None if meta["kernel"] is None else np.asarray(meta["kernel"]),
        target_snr_db=meta["target_snr_db"],
        background_level=meta["background_level"],
        rng_seed=meta["rng_seed"],
    )
    return TestProblem(
        exact=exact,
        observed=PoissonData(counts, np.full(height * width, meta["gamma_counts"])),
        blur=spec.build_blur(height, width),
        spec=spec,
        applied_scale=meta["applied_scale"],
        photon_scale=meta["photon_scale"],
    )
