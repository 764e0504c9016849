"""Joint-probability reconstruction from frame stacks and its projections.

Gamma is estimated as the pixel-pair intensity covariance
<I_i I_j> - <I_i><I_j> over frames.  Because pairs arrive as a Poisson
process, distinct pairs are uncorrelated and the off-diagonal covariance is
exactly the coincidence term; the diagonal carries the single-pixel variance
(noise included) and is left out of the projections unless requested.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import lapack

from .errors import ConfigurationError, ModeMismatchError
from .simulator import CameraSpec, FrameStack, ImagingMode

EXACT_LIMIT = 2.0**53
BATCH = 256


class GammaAccumulator:
    """Streaming sums for the covariance estimator.

    ``sum_II`` is held as the lower triangle in LAPACK rectangular full
    packed format (P (P + 1) / 2 doubles) and updated with rank-k BLAS
    kernels.  Frames are integer valued, so every partial sum is an integer
    and float64 accumulation is exact (hence order independent) while
    ``frame_count * max_value**2`` stays below 2**53; :attr:`exact` reports
    whether that still holds.
    """

    def __init__(self, spec: CameraSpec, mode: ImagingMode = ImagingMode.MOMENTUM):
        self.spec = spec
        self.mode = ImagingMode(mode)
        P = spec.pixels
        self.frame_count = 0
        self.sum_I = np.zeros(P)
        self._sum_II = np.zeros(P * (P + 1) // 2)
        self.max_value = 0

    @property
    def exact(self) -> bool:
        return self.frame_count * float(self.max_value) ** 2 < EXACT_LIMIT

    def _check(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames)
        shape = (self.spec.height, self.spec.width)
        if frames.shape[-2:] != shape:
            raise ValueError(f"frame shape {frames.shape[-2:]} does not match sensor {shape}")
        return frames.reshape(-1, self.spec.pixels)

    def update(self, frames: np.ndarray) -> "GammaAccumulator":
        """Add one frame (H, W) or a batch (n, H, W); returns self."""
        flat = self._check(frames)
        for start in range(0, len(flat), BATCH):
            x = flat[start:start + BATCH].astype(np.float64)
            if not x.size:
                continue
            self.max_value = max(self.max_value, float(x.max()))
            self.sum_I += x.sum(axis=0)
            self._sum_II = lapack.dsfrk(self.spec.pixels, len(x), 1.0, x.T, 1.0, self._sum_II,
                                        transr="N", uplo="L", trans="N", overwrite_c=1)
            self.frame_count += len(x)
        return self

    def update_stack(self, stack: FrameStack) -> "GammaAccumulator":
        if stack.spec != self.spec:
            raise ValueError("frame stack was recorded with a different camera spec")
        if stack.mode != self.mode:
            raise ModeMismatchError("frame stack mode differs from accumulator mode")
        return self.update(stack.frames)

    def merge(self, other: "GammaAccumulator") -> "GammaAccumulator":
        if other.spec != self.spec or other.mode != self.mode:
            raise ValueError("cannot merge accumulators of different sensors or modes")
        out = GammaAccumulator(self.spec, self.mode)
        out.frame_count = self.frame_count + other.frame_count
        out.sum_I = self.sum_I + other.sum_I
        out._sum_II = self._sum_II + other._sum_II
        out.max_value = max(self.max_value, other.max_value)
        return out

    @property
    def sum_II_packed(self) -> np.ndarray:
        return self._sum_II

    def sum_II(self) -> np.ndarray:
        """Full symmetric P x P matrix of summed intensity products."""
        full, info = lapack.dtfttr(self.spec.pixels, self._sum_II, transr="N", uplo="L")
        if info != 0:
            raise RuntimeError(f"dtfttr failed with info={info}")
        S = np.tril(full)
        S += S.T.copy()
        S[np.diag_indices_from(S)] *= 0.5
        return S

    def finalize(self) -> "JointDistribution":
        return finalize(self)


def accumulate(acc: GammaAccumulator, frame: np.ndarray) -> GammaAccumulator:
    return acc.update(frame)


def merge(a: GammaAccumulator, b: GammaAccumulator) -> GammaAccumulator:
    return a.merge(b)


def accumulate_stack(stack: FrameStack) -> GammaAccumulator:
    return GammaAccumulator(stack.spec, stack.mode).update(stack.frames)


@dataclass
class JointDistribution:
    """Reconstructed Gamma over pixel pairs (row-major pixel index).

    ``raw`` is the unclipped, exactly symmetric covariance used by every fit;
    :attr:`values` is the non-negative export form.  The diagonal is kept in
    ``raw`` but excluded from projections by default.
    """

    raw: np.ndarray
    spec: CameraSpec
    mode: ImagingMode
    frame_count: int = 0
    clipped_input: bool = False

    def __post_init__(self):
        self.mode = ImagingMode(self.mode)
        P = self.spec.pixels
        if self.raw.shape != (P, P):
            raise ValueError(f"Gamma must be {P}x{P}")

    @cached_property
    def values(self) -> np.ndarray:
        return np.clip(self.raw, 0.0, None)

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.raw).copy()

    def as_4d(self, clipped: bool = False) -> np.ndarray:
        """View indexed as [y1, x1, y2, x2]."""
        H, W = self.spec.height, self.spec.width
        return (self.values if clipped else self.raw).reshape(H, W, H, W)


def finalize(acc: GammaAccumulator) -> JointDistribution:
    N = acc.frame_count
    if N < 2:
        raise ValueError("finalize needs at least two frames")
    G = acc.sum_II()
    G /= N
    mean = acc.sum_I / N
    for start in range(0, len(G), 512):
        G[start:start + 512] -= mean[start:start + 512, None] * mean[None, :]
    return JointDistribution(G, acc.spec, acc.mode, N)


class ProjectionKind(enum.Enum):
    SUM = "SUM"
    MINUS = "MINUS"
    XPLUS = "XPLUS"
    XMINUS = "XMINUS"


@dataclass
class ProjectionImage:
    """A 2-D projection of Gamma.

    Bin (row i, column j) sits at coordinates (x0 + j dx, y0 + i dy).  For
    XPLUS/XMINUS rows index y1 and columns y2.  ``mask`` marks bins with no
    usable contribution (and, for the conditional projections, non-positive
    normalization).  ``diag_bins`` marks bins that would receive
    same-pixel terms.
    """

    kind: ProjectionKind
    values: np.ndarray
    x0: float
    dx: float
    y0: float
    dy: float
    mode: ImagingMode
    mask: np.ndarray = None
    diag_bins: np.ndarray = None
    include_diagonal: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = ProjectionKind(self.kind)
        self.mode = ImagingMode(self.mode)
        if self.mask is None:
            self.mask = np.zeros(self.values.shape, bool)
        if self.diag_bins is None:
            self.diag_bins = np.zeros(self.values.shape, bool)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        h, w = self.values.shape
        return self.x0 + self.dx * np.arange(w), self.y0 + self.dy * np.arange(h)

    def center_index(self) -> tuple[int, int]:
        x, y = self.axes()
        return int(np.argmin(np.abs(y))), int(np.argmin(np.abs(x)))


def _source(gamma: JointDistribution, clipped: bool) -> np.ndarray:
    return gamma.values if clipped else gamma.raw


def _line_counts(n: int) -> np.ndarray:
    s = np.arange(2 * n - 1)
    return np.minimum(s, 2 * n - 2 - s) + 1


def project_sum(gamma: JointDistribution, include_diagonal: bool = False,
                clipped: bool = False) -> ProjectionImage:
    """P+(kappa) = sum_k Gamma(kappa - k, k), indexed by pixel-index sums."""
    H, W = gamma.spec.height, gamma.spec.width
    G = _source(gamma, clipped)
    out = np.zeros((2 * H - 1, 2 * W - 1))
    for j in range(H * W):
        v, u = divmod(j, W)
        col = G[j].reshape(H, W)
        if not include_diagonal:
            col = col.copy()
            col[v, u] = 0.0
        out[v:v + H, u:u + W] += col
    a, e = gamma.spec.step()
    _, _, c, _, _, f = gamma.spec.calibration
    count = np.outer(_line_counts(H), _line_counts(W))
    diag = np.zeros_like(out, bool)
    diag[::2, ::2] = True
    if not include_diagonal:
        count = count - diag
    return ProjectionImage(ProjectionKind.SUM, out, 2 * c, a, 2 * f, e, gamma.mode,
                           mask=count == 0, diag_bins=diag, include_diagonal=include_diagonal)


def project_minus(gamma: JointDistribution, include_diagonal: bool = False,
                  clipped: bool = False) -> ProjectionImage:
    """P-(rho) = sum_r Gamma(rho + r, r), indexed by pixel-index differences."""
    H, W = gamma.spec.height, gamma.spec.width
    G = _source(gamma, clipped)
    out = np.zeros((2 * H - 1, 2 * W - 1))
    for j in range(H * W):
        v, u = divmod(j, W)
        col = G[j].reshape(H, W)
        if not include_diagonal:
            col = col.copy()
            col[v, u] = 0.0
        out[H - 1 - v:2 * H - 1 - v, W - 1 - u:2 * W - 1 - u] += col
    a, e = gamma.spec.step()
    count = np.outer(H - np.abs(np.arange(2 * H - 1) - (H - 1)), W - np.abs(np.arange(2 * W - 1) - (W - 1)))
    diag = np.zeros_like(out, bool)
    diag[H - 1, W - 1] = True
    if not include_diagonal:
        count = count - diag
    return ProjectionImage(ProjectionKind.MINUS, out, -a * (W - 1), a, -e * (H - 1), e, gamma.mode,
                           mask=count == 0, diag_bins=diag, include_diagonal=include_diagonal)


def _conditional(kind, gamma, pairs, include_diagonal, clipped):
    """Shared body of the X+ / X- projections.

    ``pairs`` lists the (x1, x2) column pairs entering the numerator.
    """
    H, W = gamma.spec.height, gamma.spec.width
    G4 = _source(gamma, clipped).reshape(H, W, H, W)
    num = np.zeros((H, H))
    for x1, x2 in pairs:
        num += G4[:, x1, :, x2]
    den = G4.sum(axis=(1, 3))
    diag = np.eye(H, dtype=bool)
    if not include_diagonal:
        same = np.einsum("yxyx->yx", G4)  # Gamma(y, x, y, x)
        den = den - np.diag(same.sum(axis=1))
        for x1, x2 in pairs:
            if x1 == x2:
                num = num - np.diag(same[:, x1])
    bad = ~(den > 0)
    values = np.where(bad, 0.0, num / np.where(bad, 1.0, den))
    _, e = gamma.spec.step()
    _, _, _, _, _, f = gamma.spec.calibration
    return ProjectionImage(kind, values, f, e, f, e, gamma.mode, mask=bad,
                           diag_bins=diag, include_diagonal=include_diagonal)


def mirror_columns(spec: CameraSpec) -> list[tuple[int, int]]:
    """Column pairs (x, x') with k_x' = -k_x under the calibration."""
    a, _ = spec.step()
    c = spec.calibration[2]
    m0 = -2 * c / a
    if abs(m0 - round(m0)) > 1e-6:
        raise ConfigurationError("calibration puts k_x = 0 neither on a pixel centre nor a pixel edge")
    m0 = int(round(m0))
    return [(x, m0 - x) for x in range(spec.width) if 0 <= m0 - x < spec.width]


def project_xplus(gamma: JointDistribution, include_diagonal: bool = False,
                  clipped: bool = False) -> ProjectionImage:
    """Conditional projection onto symmetric columns, k_x2 = -k_x1 (momentum data)."""
    if gamma.mode is not ImagingMode.MOMENTUM:
        raise ModeMismatchError("X+ projection needs momentum-mode data")
    return _conditional(ProjectionKind.XPLUS, gamma, mirror_columns(gamma.spec), include_diagonal, clipped)


def project_xminus(gamma: JointDistribution, include_diagonal: bool = False,
                   clipped: bool = False) -> ProjectionImage:
    """Conditional projection onto adjacent columns, x2 = x1 + 1 (position data)."""
    if gamma.mode is not ImagingMode.POSITION:
        raise ModeMismatchError("X- projection needs position-mode data")
    pairs = [(x, x + 1) for x in range(gamma.spec.width - 1)]
    return _conditional(ProjectionKind.XMINUS, gamma, pairs, include_diagonal, clipped)


PROJECTORS = {
    ProjectionKind.SUM: project_sum,
    ProjectionKind.MINUS: project_minus,
    ProjectionKind.XPLUS: project_xplus,
    ProjectionKind.XMINUS: project_xminus,
}


def project(gamma: JointDistribution, kind, **kw) -> ProjectionImage:
    return PROJECTORS[ProjectionKind(kind)](gamma, **kw)
