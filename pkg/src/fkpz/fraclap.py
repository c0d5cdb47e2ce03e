"""Discrete restricted fractional Laplacian with zero exterior data.

The principal-value integral is discretized on the infinite lattice ``hZ^N``:
every lattice point ``y != x`` contributes ``a h^N |x-y|^{-N-2s}``, exterior
points carry ``u = 0`` and are folded into the diagonal.  The singular cell is
handled by a zeta-regularized Taylor correction, which adds a positive
multiple of the 5-point (3-point in 1D) Laplacian stencil.  The resulting
symbol is ``|xi|^{2s} (1 + O((h xi)^4))`` up to the normalization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Sequence

import mpmath
import numpy as np
from scipy.signal import fftconvolve
from scipy.special import gamma, zeta

from .errors import GridMismatch, MatrixTooLarge, QuadratureFailure
from .grid import DomainGrid, Field

CONVENTIONS = ("fourier-symbol", "paper-half")
DENSE_LIMIT = 5000
FLAP_MAGIC = b"FLAP"
FLAP_VERSION = 1


@dataclass(frozen=True)
class FracParams:
    """Order and normalization of the operator.

    Attributes:
        s: half the order, in (1/2, 1).
        N: spatial dimension.
        convention: ``"fourier-symbol"`` (matches the multiplier |xi|^{2s})
            or ``"paper-half"`` (half of that).
    """

    s: float
    N: int
    convention: str = "fourier-symbol"

    def __post_init__(self):
        if not 0.5 < self.s < 1.0:
            raise ValueError(f"s must lie in (1/2, 1), got {self.s}")
        if self.N not in (1, 2):
            raise ValueError(f"N must be 1 or 2, got {self.N}")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {self.convention!r}")

    @property
    def a_norm(self) -> float:
        return normalization_constant(self)


def kernel_constant(s: float, N: int, convention: str = "fourier-symbol") -> float:
    """Closed form of the normalization for any ``0 < s < 1``.

    ``2^{2s-1} pi^{-N/2} Gamma((N+2s)/2) / |Gamma(-s)|`` for ``paper-half``,
    twice that for ``fourier-symbol``.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    half = 2 ** (2 * s - 1) * np.pi ** (-N / 2) * gamma((N + 2 * s) / 2) / abs(gamma(-s))
    return float(half if convention == "paper-half" else 2 * half)


def normalization_constant(params: FracParams) -> float:
    """Constant in front of the singular integral (see :func:`kernel_constant`)."""
    return kernel_constant(params.s, params.N, params.convention)


@lru_cache(maxsize=None)
def lattice_zeta(N: int, sigma: float) -> float:
    """Analytically continued ``sum_{m in Z^N, m != 0} |m|^{-sigma}``.

    Closed forms: ``2 zeta(sigma)`` in 1D and ``4 zeta(sigma/2) beta(sigma/2)``
    in 2D (Dirichlet beta).
    """
    if N == 1:
        return 2.0 * float(mpmath.zeta(sigma))
    if N == 2:
        z = sigma / 2
        return 4.0 * float(mpmath.zeta(z) * mpmath.dirichlet(z, [0, 1, 0, -1]))
    raise ValueError("lattice_zeta is implemented for N = 1, 2")


def _stencil_constants(params: FracParams, h: float) -> tuple[float, float, float]:
    """Return (kernel prefactor, diagonal, near-field correction)."""
    s, N = params.s, params.N
    c = params.a_norm * h ** (-2 * s)
    diag = c * lattice_zeta(N, N + 2 * s)
    # Taylor term of the singular cell: -(c/2N) Z(N+2s-2) h^2 * Laplacian,
    # written as a multiple of the discrete Laplacian (1/h^2 stencil).
    corr = -params.a_norm * lattice_zeta(N, N + 2 * s - 2) / (2 * N) * h ** (-2 * s)
    if not (np.isfinite(diag) and np.isfinite(corr)):
        raise QuadratureFailure("near-field correction is not finite")
    return c, diag, corr


def _kernel_stencil(params: FracParams, h: float, half_width: int) -> np.ndarray:
    """Off-diagonal weights w(m) (positive) on the box |m_a| <= half_width."""
    c, _, corr = _stencil_constants(params, h)
    N, s = params.N, params.s
    ax = np.arange(-half_width, half_width + 1)
    mesh = np.meshgrid(*([ax] * N), indexing="ij")
    r2 = sum(m.astype(float) ** 2 for m in mesh)
    centre = (half_width,) * N
    r2[centre] = np.inf
    w = c * r2 ** (-(N + 2 * s) / 2)
    w[r2 == 1.0] += corr
    return w


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Symmetric M-matrix ``A`` on the interior nodes.

    ``(Au)_i = d u_i - sum_j w(k_i - k_j) u_j`` with constant diagonal ``d``.
    Dense entries are materialized lazily for grids up to ``DENSE_LIMIT``
    nodes; :meth:`matvec` always works via FFT convolution.
    """

    grid: DomainGrid
    params: FracParams
    diagonal: float
    stencil: np.ndarray

    @property
    def node_count(self) -> int:
        return self.grid.node_count

    @cached_property
    def _flat(self) -> tuple[np.ndarray, int]:
        width = self.stencil.shape[0]
        strides = width ** np.arange(self.grid.dimension - 1, -1, -1)
        flat = self.grid.index @ strides
        offset = int((width // 2) * strides.sum())
        return flat, offset

    @cached_property
    def dense(self) -> np.ndarray:
        n = self.node_count
        if n > DENSE_LIMIT:
            raise MatrixTooLarge(f"{n} nodes exceed the dense limit {DENSE_LIMIT}")
        flat, offset = self._flat
        w = self.stencil.ravel()
        A = np.empty((n, n))
        for lo in range(0, n, 1024):
            rows = slice(lo, min(lo + 1024, n))
            A[rows] = -w[flat[rows, None] - flat[None, :] + offset]
        A[np.diag_indices(n)] = self.diagonal
        A.setflags(write=False)
        return A

    @cached_property
    def tail(self) -> np.ndarray:
        """Exterior tail coefficient per node (equals the row sum of A)."""
        return self.matvec(np.ones(self.node_count))

    def matvec(self, u: np.ndarray) -> np.ndarray:
        """``A @ u`` for arrays shaped (n,) or (n, k)."""
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.node_count:
            raise GridMismatch("vector length does not match the operator")
        if "dense" in self.__dict__:
            return self.dense @ u
        if u.ndim == 2:
            return np.stack([self.matvec(col) for col in u.T], axis=1)
        g = self.grid
        lat = g.to_lattice(u)
        conv = fftconvolve(lat, self.stencil, mode="same")
        return self.diagonal * u - conv[tuple((g.index + g.extent).T)]

    def energy(self, u: np.ndarray) -> float:
        """Discrete ``<Au, u> h^N``."""
        return float(np.dot(self.matvec(u), u) * self.grid.cell_volume)

    def dump(self, path: str | Path) -> None:
        """Write the dense matrix: 16-byte header then row-major float64."""
        A = np.ascontiguousarray(self.dense, dtype="<f8")
        header = FLAP_MAGIC + struct.pack("<IQ", FLAP_VERSION, self.node_count)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(A.tobytes())


def load_dump(path: str | Path) -> np.ndarray:
    """Read a matrix written by :meth:`OperatorMatrix.dump`."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != FLAP_MAGIC:
            raise ValueError("not a FLAP dump")
        version, n = struct.unpack("<IQ", header[4:])
        if version != FLAP_VERSION:
            raise ValueError(f"unsupported FLAP version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * n:
        raise ValueError("truncated FLAP dump")
    return data.reshape(n, n)


def assemble(grid: DomainGrid, params: FracParams) -> OperatorMatrix:
    """Build the operator for ``grid``; dimensions of grid and params must agree."""
    if grid.dimension != params.N:
        raise GridMismatch(f"grid dimension {grid.dimension} != N={params.N}")
    _, diag, corr = _stencil_constants(params, grid.h)
    stencil = _kernel_stencil(params, grid.h, 2 * grid.extent)
    stencil.setflags(write=False)
    return OperatorMatrix(grid, params, diag + 2 * grid.dimension * corr, stencil)


def apply(A: OperatorMatrix, u: Field) -> Field:
    """Matrix-vector product as a Field on the same grid."""
    if u.grid is not A.grid and u.grid.node_count != A.node_count:
        raise GridMismatch("field and operator live on different grids")
    if u.grid is not A.grid and not np.array_equal(u.grid.index, A.grid.index):
        raise GridMismatch("field and operator live on different grids")
    return Field(A.grid, A.matvec(u.values))


# -- periodic calibration ----------------------------------------------------


@dataclass(frozen=True)
class CalibrationPoint:
    mode: tuple[int, ...]
    measured: float
    exact: float

    @property
    def rel_error(self) -> float:
        if self.exact == 0.0:
            return abs(self.measured)
        return abs(self.measured - self.exact) / self.exact


def _periodic_weights(params: FracParams, M: int, images: int = 8) -> np.ndarray:
    """Kernel weights folded onto the M-periodic lattice of [0, 2pi)^N."""
    N, s = params.N, params.s
    h = 2 * np.pi / M
    c, _, corr = _stencil_constants(params, h)
    p = N + 2 * s
    j = np.arange(M)
    if N == 1:
        w = np.zeros(M)
        q = j[1:] / M
        w[1:] = c * M ** (-p) * (zeta(p, q) + zeta(p, 1 - q))
    else:
        J1, J2 = np.meshgrid(j, j, indexing="ij")
        w = np.zeros((M, M))
        for l1 in range(-images, images + 1):
            for l2 in range(-images, images + 1):
                r2 = (J1 + l1 * M) ** 2 + (J2 + l2 * M) ** 2
                with np.errstate(divide="ignore"):
                    w += np.where(r2 > 0, r2.astype(float) ** (-p / 2), 0.0)
        # images beyond the box, replaced by the radial integral
        R = (images + 0.5) * M
        w += 2 * np.pi / ((p - 2) * R ** (p - 2)) / M**2
        w *= c
    w.flat[0] = 0.0
    for a in range(N):
        for side in (1, M - 1):
            idx = [0] * N
            idx[a] = side
            w[tuple(idx)] += corr
    return w


def symbol_calibration(
    params: FracParams, modes: Sequence[Sequence[int] | int], lattice_size: int
) -> list[CalibrationPoint]:
    """Compare the periodic lattice operator with ``|k|^{2s}`` on cosine modes.

    The lattice is ``[0, 2pi)^N`` with ``lattice_size`` points per axis; the
    measured value is the Rayleigh quotient ``<Au, u>/<u, u>`` for
    ``u = cos(k.x)``.
    """
    M = int(lattice_size)
    if M < 32:
        raise ValueError("lattice_size must be at least 32")
    N = params.N
    w = _periodic_weights(params, M)
    w_hat = np.fft.fftn(w)
    total = w.sum()
    x = np.meshgrid(*([np.arange(M) * 2 * np.pi / M] * N), indexing="ij")
    out = []
    for k in modes:
        k = (int(k),) if np.isscalar(k) else tuple(int(v) for v in k)
        if len(k) != N:
            raise ValueError(f"mode {k} does not have {N} components")
        u = np.cos(sum(kk * xx for kk, xx in zip(k, x)))
        Au = total * u - np.real(np.fft.ifftn(w_hat * np.fft.fftn(u)))
        measured = float(np.sum(Au * u) / np.sum(u * u))
        exact = float(np.linalg.norm(k) ** (2 * params.s))
        out.append(CalibrationPoint(k, measured, exact))
    return out
