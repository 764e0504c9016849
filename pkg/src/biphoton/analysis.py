"""Gaussian fitting of projections and pump images, and the derived quantities.

All fits are centred isotropic Gaussians plus a constant offset.  Widths
come out in the axis units of the image (rad/m or m).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, stats

from .core import INFINITE, beta as beta_of
from .errors import DomainError
from .reconstruction import ProjectionImage, ProjectionKind

MAX_ITER = 200
STEP_TOL = 1e-8
MIN_PIXELS = 25


@dataclass
class FitResult:
    center: np.ndarray
    width_sigma: float
    amplitude: float
    offset: float
    residual_rms: float
    width_uncertainty: float
    converged: bool
    iterations: int = 0
    n_pixels: int = 0
    message: str = ""

    @property
    def params(self) -> np.ndarray:
        return np.array([self.amplitude, *self.center, self.width_sigma, self.offset])


def _failed(n, message, iterations=0) -> FitResult:
    return FitResult(np.array([math.nan, math.nan]), math.nan, math.nan, math.nan, math.nan,
                     math.nan, False, iterations, n, message)


def _model_and_jacobian(p, x, y, env):
    A, cx, cy, s, B = p
    dx, dy = x - cx, y - cy
    r2 = dx * dx + dy * dy
    g = np.exp(-r2 / (2 * s * s))
    if env is not None:
        g = g * env
    Ag = A * g
    J = np.empty((x.size, 5))
    J[:, 0] = g
    J[:, 1] = Ag * dx / (s * s)
    J[:, 2] = Ag * dy / (s * s)
    J[:, 3] = Ag * r2 / (s * s * s)
    J[:, 4] = 1.0
    return Ag + B, J


def _moment_start(z, x, y, step):
    B = float(z.min())
    A = float(z.max()) - B
    if not A > 0:
        return None
    above = z - B > A / 2
    w = z[above] - B
    cx = float(np.sum(w * x[above]) / w.sum())
    cy = float(np.sum(w * y[above]) / w.sum())
    # pixels above half maximum cover an area of 2 pi ln2 s^2
    s = math.sqrt(max(int(above.sum()), 1) * step / (2 * math.pi * math.log(2)))
    return np.array([A, cx, cy, s, B])


def fit_gaussian_2d(image, mask=None, init="moments", x=None, y=None, envelope=None) -> FitResult:
    """Least-squares fit of A * E * exp(-|r - c|^2 / (2 s^2)) + B.

    Parameters
    ----------
    image : 2-D array
    mask : bool array, optional
        True marks pixels left out of the fit; at least 25 must remain.
    init : "moments" or a 5-sequence (A, cx, cy, s, B)
        Starting point.  "moments" thresholds at half maximum and takes the
        centroid and covered area.
    x, y : 1-D axes for columns and rows (default: pixel indices).
    envelope : array, optional
        Known multiplicative acceptance E (same shape as ``image``).

    Damped Gauss-Newton with Marquardt scaling; stops when the relative
    parameter step drops below 1e-8.  Non-convergence after 200 iterations,
    a constant image or a non-physical solution return ``converged=False``
    with NaN widths rather than a guess.
    """
    z = np.asarray(image, dtype=float)
    if z.ndim != 2:
        raise ValueError("image must be 2-D")
    h, w = z.shape
    x = np.arange(w, dtype=float) if x is None else np.asarray(x, dtype=float)
    y = np.arange(h, dtype=float) if y is None else np.asarray(y, dtype=float)
    keep = np.ones(z.shape, bool) if mask is None else ~np.asarray(mask, bool)
    keep &= np.isfinite(z)
    n = int(keep.sum())
    if n < MIN_PIXELS:
        raise ValueError(f"fit needs at least {MIN_PIXELS} unmasked pixels, got {n}")
    X, Y = np.meshgrid(x, y)
    zv, xv, yv = z[keep], X[keep], Y[keep]
    env = None if envelope is None else np.asarray(envelope, float)[keep]

    if isinstance(init, str):
        if init != "moments":
            raise ValueError(f"unknown init strategy {init!r}")
        step = abs((x[1] - x[0]) * (y[1] - y[0])) if len(x) > 1 and len(y) > 1 else 1.0
        p = _moment_start(zv if env is None else zv / np.maximum(env, 1e-3), xv, yv, step)
        if p is None:
            return _failed(n, "degenerate image: no peak above the minimum")
    else:
        p = np.asarray(init, dtype=float).copy()

    f, J = _model_and_jacobian(p, xv, yv, env)
    r = zv - f
    cost = r @ r
    lam = 1e-3
    converged = False
    it = 0
    while it < MAX_ITER:
        it += 1
        JtJ = J.T @ J
        g = J.T @ r
        d = np.diag(JtJ).copy()
        d[d == 0] = 1.0
        D = np.diag(d)
        accepted = False
        while lam < 1e16:
            try:
                delta = np.linalg.solve(JtJ + lam * D, g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = p + delta
            if trial[3] <= 0:
                lam *= 10
                continue
            ft, Jt = _model_and_jacobian(trial, xv, yv, env)
            rt = zv - ft
            ct = rt @ rt
            if ct <= cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            # no descent direction left at floating-point resolution
            converged = True
            break
        scale = np.array([abs(p[0]) + abs(p[4]), p[3], p[3], p[3], abs(p[0]) + abs(p[4])])
        rel = np.max(np.abs(delta) / scale)
        p, f, J, r, cost = trial, ft, Jt, rt, ct
        lam = max(lam / 10, 1e-12)
        if rel < STEP_TOL:
            converged = True
            break

    A, cx, cy, s, B = p
    extent = max(np.ptp(x), np.ptp(y), abs(x[1] - x[0]) if len(x) > 1 else 1.0)
    if converged and not (A > 0 and 0 < s < 10 * extent and np.all(np.isfinite(p))):
        return _failed(n, "fit settled on a non-physical solution", it)
    if not converged:
        return _failed(n, f"no convergence after {it} iterations", it)
    dof = max(n - 5, 1)
    try:
        cov = np.linalg.inv(J.T @ J) * cost / dof
        err = math.sqrt(max(cov[3, 3], 0.0))
    except np.linalg.LinAlgError:
        err = math.nan
    return FitResult(np.array([cx, cy]), float(s), float(A), float(B), math.sqrt(cost / n),
                     err, True, it, n)


# --- projection widths -------------------------------------------------------

@dataclass
class WidthEstimate:
    """A width recovered from a projection.

    ``value`` is the physical width (SI).  ``fitted`` is the raw Gaussian
    width of the projection after acceptance correction, before the pixel
    correction and any beta scaling.  ``unmasked`` repeats the plain fit
    without masking the central bins or correcting the acceptance, for
    diagnostics.
    """

    value: float
    uncertainty: float
    fitted: float
    fit: FitResult
    unmasked: float = math.nan
    partner_width: float = math.nan
    notes: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.fit.converged

    def __float__(self) -> float:
        return float(self.value)


def _pair_axis_envelope(n: int, kind: ProjectionKind, width_px: float, center_px: float = 0.0):
    """Acceptance of one sensor axis along a projection axis (pixel-index units).

    For a SUM bin s the photons sit at u1 + u2 = s with u1 - u2 = d free, so
    the acceptance is the sum of the partner Gaussian (in d) over all d the
    sensor allows; the MINUS case swaps the roles.  Returns (envelope,
    partner value at zero offset) per bin.
    """
    u = np.arange(n)
    u1, u2 = np.meshgrid(u, u, indexing="ij")
    if kind is ProjectionKind.SUM:
        bins, other = u1 + u2, u1 - u2
    else:
        bins, other = u1 - u2 + n - 1, u1 + u2 - (n - 1)
    weight = np.exp(-((other - center_px) ** 2) / (2 * width_px**2))
    env = np.bincount(bins.ravel(), weights=weight.ravel(), minlength=2 * n - 1)
    same = np.bincount(bins[u1 == u2], weights=weight[u1 == u2], minlength=2 * n - 1)
    return env, same


def acceptance_envelope(proj: ProjectionImage, partner_width: float, partner_center=(0.0, 0.0),
                        sum_origin=None) -> np.ndarray:
    """Finite-sensor acceptance of a SUM or MINUS projection.

    ``partner_width`` and ``partner_center`` describe the Gaussian (axis
    units, as fitted on the other projection) of the pair coordinate that is
    summed out.  For a MINUS projection that coordinate is the momentum or
    position sum, whose axis origin ``sum_origin`` (the SUM projection's
    (x0, y0)) defaults to a centred calibration.  Pairs with both photons in
    one pixel are removed when the projection excludes the diagonal.
    Normalized to a maximum of 1.
    """
    h, w = proj.values.shape
    W, H = (w + 1) // 2, (h + 1) // 2
    cx = partner_center[0] / proj.dx
    cy = partner_center[1] / proj.dy
    if proj.kind is ProjectionKind.MINUS:
        # summed-out coordinate in pixel units is u1 + u2 - (n - 1)
        if sum_origin is None:
            sum_origin = (-(W - 1) * proj.dx, -(H - 1) * proj.dy)
        cx -= sum_origin[0] / proj.dx + (W - 1)
        cy -= sum_origin[1] / proj.dy + (H - 1)
    ex, sx = _pair_axis_envelope(W, proj.kind, partner_width / abs(proj.dx), cx)
    ey, sy = _pair_axis_envelope(H, proj.kind, partner_width / abs(proj.dy), cy)
    env = np.outer(ey, ex)
    if not proj.include_diagonal:
        env = env - np.outer(sy, sx)
    peak = env.max()
    return env / peak if peak > 0 else env


def _fit_mask(proj: ProjectionImage, mask_center: bool) -> np.ndarray:
    mask = proj.mask.copy()
    if proj.include_diagonal:
        mask |= proj.diag_bins
    if mask_center:
        i, j = proj.center_index()
        mask[i, j] = True
    return mask


def _fit_projection(proj, mask, envelope=None, init="moments"):
    x, y = proj.axes()
    return fit_gaussian_2d(proj.values, mask=mask, init=init, x=x, y=y, envelope=envelope)


def _check_kind(proj, kind):
    if proj.kind is not kind:
        raise ValueError(f"expected a {kind.value} projection, got {proj.kind.value}")


def joint_widths(sum_proj: ProjectionImage, minus_proj: ProjectionImage, rounds: int = 3,
                 mask_center: bool = True) -> tuple[FitResult, FitResult]:
    """Fit SUM and MINUS projections with mutually consistent acceptance.

    Each projection's finite-sensor acceptance depends on the width of the
    other one, so the two fits alternate, starting from plain fits.
    """
    _check_kind(sum_proj, ProjectionKind.SUM)
    _check_kind(minus_proj, ProjectionKind.MINUS)
    sum_mask = _fit_mask(sum_proj, mask_center)
    minus_mask = _fit_mask(minus_proj, mask_center)
    fs = _fit_projection(sum_proj, sum_mask)
    fm = _fit_projection(minus_proj, minus_mask)
    for _ in range(rounds):
        if not (fs.converged and fm.converged):
            break
        fs_new = _fit_projection(sum_proj, sum_mask, acceptance_envelope(sum_proj, fm.width_sigma, fm.center))
        fm_new = _fit_projection(minus_proj, minus_mask, acceptance_envelope(
            minus_proj, fs.width_sigma, fs.center, (sum_proj.x0, sum_proj.y0)))
        if not (fs_new.converged and fm_new.converged):
            # noisy data can push a refinement off; keep the last consistent pair
            fs.message = fm.message = "acceptance refinement stopped early"
            break
        fs, fm = fs_new, fm_new
    return fs, fm


def _pixel_corrected(width, step, enabled):
    if not enabled:
        return width
    # two independently binned photons add step^2 / 12 each to the variance
    v = width**2 - step**2 / 6
    return math.sqrt(v) if v > 0 else math.nan


def _width_estimate(target, partner, target_mask_center, pixel_correction, scale=1.0, rounds=3):
    step = abs(target.dx)
    if partner is not None:
        fs, fm = joint_widths(*((target, partner) if target.kind is ProjectionKind.SUM else (partner, target)),
                              rounds=rounds, mask_center=target_mask_center)
        fit, other = (fs, fm) if target.kind is ProjectionKind.SUM else (fm, fs)
        partner_width = other.width_sigma
    else:
        fit = _fit_projection(target, _fit_mask(target, target_mask_center))
        partner_width = math.nan
    plain = _fit_projection(target, target.mask)
    notes = []
    if not fit.converged:
        notes.append(fit.message)
        return WidthEstimate(math.nan, math.nan, math.nan, fit, plain.width_sigma / scale, partner_width, notes)
    if fit.message:
        notes.append(fit.message)
    value = _pixel_corrected(fit.width_sigma, step, pixel_correction)
    if math.isnan(value):
        notes.append("fitted width below pixel resolution")
    err = fit.width_uncertainty * fit.width_sigma / value if value > 0 else math.nan
    return WidthEstimate(value / scale, err / scale, fit.width_sigma, fit, plain.width_sigma / scale,
                         partner_width, notes)


def estimate_sigma_k(sum_proj: ProjectionImage, partner: ProjectionImage | None = None,
                     mask_center: bool = True, pixel_correction: bool = True, rounds: int = 3) -> WidthEstimate:
    """sigma_k (rad/m) from the width of the central spot of a SUM projection.

    With ``partner`` (the MINUS projection of the same Gamma) the fit
    includes the finite-sensor acceptance.  ``pixel_correction`` removes the
    binning variance of continuously distributed pair momenta; switch it off
    when the momentum sum is itself pixel-discrete (static speckle).
    """
    _check_kind(sum_proj, ProjectionKind.SUM)
    return _width_estimate(sum_proj, partner, mask_center, pixel_correction, rounds=rounds)


def estimate_sigma_r(minus_proj: ProjectionImage, beta: float | None = None,
                     partner: ProjectionImage | None = None, mask_center: bool = True,
                     pixel_correction: bool = True, rounds: int = 3) -> WidthEstimate:
    """sigma_r (m) as the MINUS-projection width divided by sqrt(beta)."""
    _check_kind(minus_proj, ProjectionKind.MINUS)
    b = beta_of() if beta is None else float(beta)
    if not b > 0:
        raise DomainError("beta must be > 0")
    return _width_estimate(minus_proj, partner, mask_center, pixel_correction, math.sqrt(b), rounds)


# --- pump far field ----------------------------------------------------------

def farfield_width(image) -> FitResult:
    """Gaussian fit of a far-field pump intensity image (pitch in rad/m)."""
    x, y = image.axes()
    return fit_gaussian_2d(image.values, x=x, y=y)


def sigma_p_of(image) -> float:
    """Far-field width in the exp(-2 k^2 / sigma_p^2) convention: twice the fitted std."""
    fit = farfield_width(image)
    if not fit.converged:
        raise RuntimeError(f"far-field fit failed: {fit.message}")
    return 2 * fit.width_sigma


def waist_from_width(sigma_p0: float) -> float:
    if not sigma_p0 > 0:
        raise DomainError("sigma_p0 must be > 0")
    return 1.0 / sigma_p0


class CoherenceWarning(UserWarning):
    pass


def lc_from_widths(sigma_p: float, sigma_p0: float) -> float:
    """lc = 2 / sqrt(sigma_p^2 - sigma_p0^2); INFINITE (with a warning) if not broadened."""
    if not sigma_p0 > 0:
        raise DomainError("sigma_p0 must be > 0")
    d = sigma_p**2 - sigma_p0**2
    if d <= 0:
        warnings.warn(f"far field not broader than the coherent reference ({sigma_p:.6g} <= {sigma_p0:.6g}); "
                      "coherence length reported as infinite", CoherenceWarning, stacklevel=2)
        return INFINITE
    return 2.0 / math.sqrt(d)


def estimate_waist(coherent_farfield) -> float:
    return waist_from_width(sigma_p_of(coherent_farfield))


def estimate_lc(partial_farfield, sigma_p0: float) -> float:
    return lc_from_widths(sigma_p_of(partial_farfield), sigma_p0)


# --- coherence transfer ------------------------------------------------------

def _fill_masked(a: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None or not mask.any():
        return a
    a = a.copy()
    a[mask] = 0.0
    good = (~mask).astype(float)
    kernel = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float)
    num = ndimage.convolve(a, kernel, mode="nearest")
    den = ndimage.convolve(good, kernel, mode="nearest")
    a[mask] = np.where(den[mask] > 0, num[mask] / np.maximum(den[mask], 1), 0.0)
    return a


def structure_correlation(image, reference, highpass_sigma: float = 3.0, border: int = 2,
                          mask=None) -> float:
    """Pearson correlation of the fine structure of two equally sampled images.

    Each image has its Gaussian-smoothed copy (``highpass_sigma`` pixels)
    subtracted, so smooth envelopes shared by unrelated images do not count
    as agreement; ``border`` pixels are dropped after filtering.  Masked
    pixels of ``image`` are filled from their neighbours first.
    """
    a = _fill_masked(np.asarray(image, float), None if mask is None else np.asarray(mask, bool))
    b = np.asarray(reference, float)
    if a.shape != b.shape:
        raise ValueError("images must share a shape")
    hp = [x - ndimage.gaussian_filter(x, highpass_sigma, mode="nearest") for x in (a, b)]
    if border:
        hp = [x[border:-border, border:-border] for x in hp]
    return float(np.corrcoef(hp[0].ravel(), hp[1].ravel())[0, 1])


# --- Schmidt number and regression --------------------------------------------

@dataclass(frozen=True)
class SchmidtEstimate:
    k_value: float
    k_uncertainty: float = 0.0


def schmidt_from_widths(sigma_r: float, sigma_k: float, sigma_r_err: float = 0.0,
                        sigma_k_err: float = 0.0) -> SchmidtEstimate:
    """K = (1/x + x)^2 / 4 with x = sigma_r sigma_k; first-order error propagation."""
    if not (sigma_r > 0 and sigma_k > 0):
        raise DomainError("widths must be > 0")
    x = sigma_r * sigma_k
    k = 0.25 * (1.0 / x + x) ** 2
    rel = math.hypot(sigma_r_err / sigma_r, sigma_k_err / sigma_k)
    dk_dx = 0.5 * (1.0 / x + x) * (1.0 - 1.0 / x**2)
    return SchmidtEstimate(k, abs(dk_dx) * x * rel)


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float
    intercept_stderr: float = math.nan
    n: int = 0


def regress_sigma_k2_vs_inv_lc2(points) -> RegressionResult:
    """Ordinary least squares of sigma_k^2 on 1/lc^2.

    ``points`` is an iterable of (lc, sigma_k) in consistent units (m and
    rad/m); an infinite lc contributes 1/lc^2 = 0.
    """
    pts = [(float(lc), float(sk)) for lc, sk in points]
    if len(pts) < 3:
        raise ValueError("regression needs at least 3 points")
    x = np.array([0.0 if math.isinf(lc) else 1.0 / lc**2 for lc, _ in pts])
    y = np.array([sk**2 for _, sk in pts])
    if np.ptp(x) == 0:
        raise ValueError("all points share one coherence length")
    res = stats.linregress(x, y)
    return RegressionResult(float(res.slope), float(res.intercept), float(min(max(res.rvalue**2, 0.0), 1.0)),
                            float(res.stderr), float(res.intercept_stderr), len(pts))
