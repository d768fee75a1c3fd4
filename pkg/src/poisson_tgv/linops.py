"""Periodic-boundary linear operators diagonalized by the 2-D DFT.

Conventions, fixed across the repository:

* An ``n1 x n2`` grid is flattened row-major, flat index ``i1 * n2 + i2``.
* ``dh`` is the forward difference along image columns (axis 1, wrapping),
  ``dv`` the forward difference along rows (axis 0, wrapping).
* FFTs follow numpy's convention: unnormalized forward, ``1/n`` inverse.

Under periodic boundaries, convolutions and finite differences are block
circulant with circulant blocks, so applying one is an elementwise product
in the DFT domain, and positive definite systems assembled from them are
solvable by a pointwise division between two FFTs.  Operators are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

__all__ = [
    "SingularSystemError",
    "Image",
    "GradField",
    "SymField",
    "BccbOperator",
    "build_psf_spectrum",
    "identity_operator",
    "dh_operator",
    "dv_operator",
    "gradient_spectra",
    "laplacian_spectrum",
    "grad",
    "grad_adjoint",
    "sym_deriv",
    "sym_deriv_adjoint",
    "solve_spectral",
]


class SingularSystemError(ValueError):
    """A spectral solve was requested with a nonpositive eigenvalue."""


@dataclass
class Image:
    """A real image on an ``height x width`` grid, stored flat row-major."""

    height: int
    width: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.height <= 0 or self.width <= 0:
            raise ValueError("image dimensions must be positive")
        self.data = np.asarray(self.data, dtype=float).ravel()
        if self.data.size != self.height * self.width:
            raise ValueError(
                f"expected {self.height * self.width} pixels, got {self.data.size}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite entries")

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> "Image":
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 2:
            raise ValueError("expected a 2-D array")
        return cls(grid.shape[0], grid.shape[1], grid.ravel())

    @property
    def n(self) -> int:
        return self.height * self.width

    def as_grid(self) -> np.ndarray:
        return self.data.reshape(self.height, self.width)


@dataclass
class GradField:
    """A two-component field ``[horizontal; vertical]``, each of length n."""

    height: int
    width: int
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=float).ravel()
        if self.data.size != 2 * self.height * self.width:
            raise ValueError("gradient field must have 2 * height * width entries")

    @classmethod
    def zeros(cls, height: int, width: int) -> "GradField":
        return cls(height, width, np.zeros(2 * height * width))

    @property
    def n(self) -> int:
        return self.height * self.width

    def component(self, k: int) -> np.ndarray:
        return self.data[k * self.n : (k + 1) * self.n]

    def component_grid(self, k: int) -> np.ndarray:
        return self.component(k).reshape(self.height, self.width)


@dataclass
class SymField:
    """A four-component field stacked blockwise, each block of length n.

    Blocks 1 and 2 hold the symmetrized mixed derivative twice, so fields
    produced by :func:`sym_deriv` satisfy ``component(1) == component(2)``
    bitwise.
    """

    height: int
    width: int
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=float).ravel()
        if self.data.size != 4 * self.height * self.width:
            raise ValueError("symmetric field must have 4 * height * width entries")

    @classmethod
    def zeros(cls, height: int, width: int) -> "SymField":
        return cls(height, width, np.zeros(4 * height * width))

    @property
    def n(self) -> int:
        return self.height * self.width

    def component(self, k: int) -> np.ndarray:
        return self.data[k * self.n : (k + 1) * self.n]

    def component_grid(self, k: int) -> np.ndarray:
        return self.component(k).reshape(self.height, self.width)


@dataclass
class BccbOperator:
    """A convolution-type operator held as its 2-D DFT eigenvalue grid."""

    spectrum: np.ndarray
    kind: str = "custom"

    def __post_init__(self) -> None:
        self.spectrum = np.asarray(self.spectrum, dtype=complex)
        if self.spectrum.ndim != 2:
            raise ValueError("spectrum must be a 2-D array")
        if self.kind not in ("blur", "dh", "dv", "custom"):
            raise ValueError(f"unknown operator kind {self.kind!r}")
        # Spectra of real kernels are Hermitian under index negation, which
        # permits half-spectrum real FFTs; anything else takes the full
        # complex path.
        h, w = self.spectrum.shape
        flipped = np.conj(
            self.spectrum[np.ix_((-np.arange(h)) % h, (-np.arange(w)) % w)]
        )
        scale = float(np.max(np.abs(self.spectrum)))
        if np.allclose(self.spectrum, flipped, rtol=0.0, atol=1e-13 * (scale or 1.0)):
            self._half = np.ascontiguousarray(self.spectrum[:, : w // 2 + 1])
        else:
            self._half = None

    @property
    def height(self) -> int:
        return self.spectrum.shape[0]

    @property
    def width(self) -> int:
        return self.spectrum.shape[1]

    @property
    def n(self) -> int:
        return self.height * self.width

    def _check(self, image: Image) -> None:
        if (image.height, image.width) != self.spectrum.shape:
            raise ValueError(
                f"operator is {self.spectrum.shape}, image is "
                f"{(image.height, image.width)}"
            )

    def _apply_grid(self, grid: np.ndarray) -> np.ndarray:
        if self._half is not None:
            return sfft.irfft2(self._half * sfft.rfft2(grid), s=grid.shape)
        return np.fft.ifft2(self.spectrum * np.fft.fft2(grid)).real

    def _apply_adjoint_grid(self, grid: np.ndarray) -> np.ndarray:
        if self._half is not None:
            return sfft.irfft2(np.conj(self._half) * sfft.rfft2(grid), s=grid.shape)
        return np.fft.ifft2(np.conj(self.spectrum) * np.fft.fft2(grid)).real

    def apply(self, image: Image) -> Image:
        self._check(image)
        return Image.from_grid(self._apply_grid(image.as_grid()))

    def apply_adjoint(self, image: Image) -> Image:
        self._check(image)
        return Image.from_grid(self._apply_adjoint_grid(image.as_grid()))


def build_psf_spectrum(psf: np.ndarray, height: int, width: int) -> BccbOperator:
    """Embed a small PSF kernel periodically and return its blur operator.

    The kernel is normalized to unit mass, zero-padded to the grid size and
    circularly shifted so that its center pixel sits at the origin.  The
    zero-frequency eigenvalue of the result is therefore exactly 1.
    """
    psf = np.asarray(psf, dtype=float)
    if psf.ndim != 2:
        raise ValueError("kernel must be a 2-D array")
    kh, kw = psf.shape
    if kh > height or kw > width:
        raise ValueError("kernel does not fit inside the image grid")
    if np.any(psf < 0):
        raise ValueError("kernel entries must be nonnegative")
    total = psf.sum()
    if total <= 0:
        raise ValueError("degenerate kernel: entries sum to zero")
    embedded = np.zeros((height, width))
    embedded[:kh, :kw] = psf / total
    embedded = np.roll(embedded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return BccbOperator(np.fft.fft2(embedded), kind="blur")


def identity_operator(height: int, width: int) -> BccbOperator:
    return BccbOperator(np.ones((height, width), dtype=complex), kind="blur")


@lru_cache(maxsize=None)
def _diff_spectra(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    # += keeps degenerate single-row/column grids correct (difference is 0).
    kh = np.zeros((height, width))
    kh[0, 0] = -1.0
    kh[0, width - 1] += 1.0
    kv = np.zeros((height, width))
    kv[0, 0] = -1.0
    kv[height - 1, 0] += 1.0
    dh = np.fft.fft2(kh)
    dv = np.fft.fft2(kv)
    dh.setflags(write=False)
    dv.setflags(write=False)
    return dh, dv


def gradient_spectra(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalue grids of the forward-difference operators ``(dh, dv)``."""
    return _diff_spectra(height, width)


def laplacian_spectrum(height: int, width: int) -> np.ndarray:
    """Eigenvalues of ``dh' dh + dv' dv``, real and nonnegative."""
    dh, dv = _diff_spectra(height, width)
    return np.abs(dh) ** 2 + np.abs(dv) ** 2


def dh_operator(height: int, width: int) -> BccbOperator:
    return BccbOperator(_diff_spectra(height, width)[0].copy(), kind="dh")


def dv_operator(height: int, width: int) -> BccbOperator:
    return BccbOperator(_diff_spectra(height, width)[1].copy(), kind="dv")


def _grad_grids(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Sliced assembly of roll(g, -1, axis) - g; these two run hottest.
    h = np.empty_like(g)
    h[:, :-1] = g[:, 1:]
    h[:, -1] = g[:, 0]
    h -= g
    v = np.empty_like(g)
    v[:-1] = g[1:]
    v[-1] = g[0]
    v -= g
    return h, v


def _grad_adjoint_grids(h: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(h)
    out[:, 1:] = h[:, :-1]
    out[:, 0] = h[:, -1]
    out -= h
    tmp = np.empty_like(v)
    tmp[1:] = v[:-1]
    tmp[0] = v[-1]
    tmp -= v
    out += tmp
    return out


def _sym_deriv_grids(
    w1: np.ndarray, w2: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    top = np.roll(w1, -1, axis=1) - w1
    mid = 0.5 * ((np.roll(w1, -1, axis=0) - w1) + (np.roll(w2, -1, axis=1) - w2))
    bot = np.roll(w2, -1, axis=0) - w2
    return top, mid, bot


def _sym_adjoint_grids(
    y0: np.ndarray, s: np.ndarray, y3: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    # s is the sum of the two mixed blocks.
    c1 = (np.roll(y0, 1, axis=1) - y0) + 0.5 * (np.roll(s, 1, axis=0) - s)
    c2 = 0.5 * (np.roll(s, 1, axis=1) - s) + (np.roll(y3, 1, axis=0) - y3)
    return c1, c2


def grad(u: Image) -> GradField:
    """Forward-difference gradient with wrap-around, ``[dh u; dv u]``."""
    h, v = _grad_grids(u.as_grid())
    return GradField(u.height, u.width, np.concatenate([h.ravel(), v.ravel()]))


def grad_adjoint(p: GradField) -> Image:
    """Adjoint of :func:`grad` (negative divergence with wrap-around)."""
    out = _grad_adjoint_grids(p.component_grid(0), p.component_grid(1))
    return Image.from_grid(out)


def sym_deriv(w: GradField) -> SymField:
    """Symmetrized derivative of a two-component field.

    Output blocks are ``[dh w1; m; m; dv w2]`` with the mixed block
    ``m = (dv w1 + dh w2) / 2`` stored twice.
    """
    top, mid, bot = _sym_deriv_grids(w.component_grid(0), w.component_grid(1))
    m = mid.ravel()
    return SymField(w.height, w.width, np.concatenate([top.ravel(), m, m, bot.ravel()]))


def sym_deriv_adjoint(y: SymField) -> GradField:
    """Adjoint of :func:`sym_deriv`."""
    c1, c2 = _sym_adjoint_grids(
        y.component_grid(0),
        y.component_grid(1) + y.component_grid(2),
        y.component_grid(3),
    )
    return GradField(y.height, y.width, np.concatenate([c1.ravel(), c2.ravel()]))


def solve_spectral(diag_spectrum: np.ndarray, rhs: Image) -> Image:
    """Solve a positive definite DFT-diagonal system exactly.

    ``diag_spectrum`` holds the real eigenvalues on the ``height x width``
    frequency grid; all of them must be strictly positive.
    """
    spec = np.asarray(diag_spectrum, dtype=float)
    if spec.shape != (rhs.height, rhs.width):
        raise ValueError("spectrum and right-hand side shapes differ")
    if not np.all(spec > 0):
        raise SingularSystemError("system spectrum has a nonpositive entry")
    out = np.fft.ifft2(np.fft.fft2(rhs.as_grid()) / spec)
    return Image.from_grid(out.real)
