"""Pump-field synthesis: Gaussian source, random phase diffusers, far field.

Grids are square-pixel and centred in the FFT sense: the origin sits at
index ``n // 2`` along each axis.  A beam of waist ``w`` has intensity
exp(-|r|^2 / (2 w^2)), i.e. amplitude exp(-|r|^2 / (4 w^2)); its far-field
intensity then has per-component standard deviation 1 / (2 w), which is the
coherent limit of sigma_k (see :mod:`biphoton.core`).
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy import ndimage
from scipy.fft import next_fast_len

from .core import INFINITE, PumpParams, sigma_k_theory
from .errors import ConfigurationError

DEFAULT_GRID = 512
DEFAULT_PITCH = 4e-6
MIN_ROTATING_REALIZATIONS = 32


class PumpMode(enum.Enum):
    COHERENT = "coherent"
    STATIC_SPECKLE = "static_speckle"
    ROTATING = "rotating"


def centered_axis(n: int, pitch: float) -> np.ndarray:
    return (np.arange(n) - n // 2) * pitch


@dataclass
class FieldGrid:
    """Complex field sampled on a square-pixel grid.

    ``space`` is ``"position"`` (pitch in m) or ``"momentum"`` (pitch in
    rad/m).  ``camera_pitch`` is set by :func:`far_field` when the optics are
    known: the spacing of the samples in the Fourier plane of the lens.
    """

    values: np.ndarray
    pitch: float
    space: str = "position"
    camera_pitch: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim != 2 or min(self.values.shape) < 8:
            raise ConfigurationError(f"field grid must be 2-D and at least 8x8, got {self.values.shape}")
        if not self.pitch > 0:
            raise ConfigurationError("grid pitch must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("field contains non-finite values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return centered_axis(self.width, self.pitch), centered_axis(self.height, self.pitch)

    def intensity(self) -> "IntensityImage":
        return IntensityImage(np.abs(self.values) ** 2, self.pitch, self.space)

    def power(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2))


@dataclass
class IntensityImage:
    """Real, non-negative image on the same centred grid convention."""

    values: np.ndarray
    pitch: float
    space: str = "momentum"

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        h, w = self.values.shape
        return centered_axis(w, self.pitch), centered_axis(h, self.pitch)


@dataclass(frozen=True)
class DiffuserSpec:
    screen_correlation: float
    phase_std: float = 2 * math.pi
    layers: int = 1

    def __post_init__(self):
        if not self.screen_correlation > 0:
            raise ConfigurationError("screen_correlation must be positive")
        if self.phase_std < 0:
            raise ConfigurationError("phase_std must be non-negative")
        if int(self.layers) != self.layers or self.layers < 1:
            raise ConfigurationError("layers must be a positive integer")

    @property
    def expected_lc(self) -> float:
        """Coherence length of the transmitted field in the strong-scattering limit.

        For a Gaussian screen of correlation c and rms phase s, summed over n
        layers, the degree of coherence is exp(-n s^2 (1 - exp(-d^2 / 2c^2))),
        which approaches exp(-d^2 / (2 lc^2)) with lc = c / (s sqrt(n)).
        """
        if self.phase_std == 0:
            return INFINITE
        return self.screen_correlation / (self.phase_std * math.sqrt(self.layers))

    @classmethod
    def for_coherence_length(cls, lc: float, phase_std: float = 2 * math.pi, layers: int = 1) -> "DiffuserSpec":
        return cls(lc * phase_std * math.sqrt(layers), phase_std, layers)


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def make_gaussian_beam(waist: float, size: int = DEFAULT_GRID, pitch: float = DEFAULT_PITCH) -> FieldGrid:
    """Coherent Gaussian source with intensity standard deviation ``waist``."""
    if not (4 * pitch <= waist <= size * pitch / 4):
        raise ConfigurationError(
            f"waist {waist:g} m not resolvable on a {size}-pixel grid of pitch {pitch:g} m"
        )
    x = centered_axis(size, pitch)
    r2 = x[None, :] ** 2 + x[:, None] ** 2
    return FieldGrid(np.exp(-r2 / (4 * waist**2)).astype(complex), pitch)


def phase_screen(shape: tuple[int, int], pitch: float, correlation: float, std: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Gaussian random phase with correlation exp(-d^2 / (2 correlation^2)).

    White noise is filtered by a Gaussian transfer function on an auxiliary
    periodic grid spanning at least 16 correlation lengths, then sampled onto
    the requested grid with cubic splines.  A screen synthesized directly on a
    grid only a few correlation lengths wide keeps too few Fourier modes and
    its phase gradients come out markedly too small.  The output is scaled by
    the filter's analytic gain so every screen has rms ``std`` in expectation.
    """
    h, w = shape
    aux_pitch = max(pitch, correlation / 4)
    extent = max(max(h, w) * pitch, 16 * correlation)
    n = next_fast_len(int(math.ceil(extent / aux_pitch)))
    k = 2 * np.pi * np.fft.fftfreq(n, d=aux_pitch)
    transfer = np.exp(-(k[None, :] ** 2 + k[:, None] ** 2) * correlation**2 / 4)
    gain = math.sqrt(np.mean(transfer**2))
    noise = rng.standard_normal((n, n))
    screen = np.fft.ifft2(np.fft.fft2(noise) * transfer).real * (std / gain)
    if aux_pitch == pitch and n == h == w:
        return screen
    scale = pitch / aux_pitch
    rows = (np.arange(h) - h // 2) * scale
    cols = (np.arange(w) - w // 2) * scale
    rr, cc = np.meshgrid(rows % n, cols % n, indexing="ij")
    return ndimage.map_coordinates(screen, [rr, cc], order=3, mode="grid-wrap")


def apply_phase_screen(field: FieldGrid, spec: DiffuserSpec, seed) -> FieldGrid:
    """Transmit ``field`` through ``spec.layers`` independent thin screens."""
    if spec.phase_std == 0:
        return FieldGrid(field.values.copy(), field.pitch, field.space)
    if spec.screen_correlation < 2 * field.pitch:
        raise ConfigurationError(
            f"screen correlation {spec.screen_correlation:g} m is below two grid pitches"
        )
    keys = np.atleast_1d(seed).tolist()
    phase = np.zeros(field.values.shape)
    for layer in range(spec.layers):
        phase += phase_screen(field.values.shape, field.pitch, spec.screen_correlation,
                              spec.phase_std, _rng(*keys, layer))
    return FieldGrid(field.values * np.exp(1j * phase), field.pitch, field.space)


def _padded(values: np.ndarray, size: int | None) -> np.ndarray:
    """Zero-pad a centred square array to ``size`` keeping the origin at index size // 2."""
    n = values.shape[0]
    if size is None or size == n:
        return values
    if size < n:
        raise ConfigurationError(f"cannot pad a {n}-point grid down to {size}")
    before = size // 2 - n // 2
    return np.pad(values, [(before, size - n - before)] * 2)


def far_field(field: FieldGrid, wavelength: float | None = None,
              focal_length: float | None = None, pad_to: int | None = None) -> FieldGrid:
    """Unitary centred DFT of ``field`` (Fraunhofer pattern behind a lens).

    The output pitch is 2 pi / (n * pitch) rad/m, n being the transform size
    (``pad_to`` zero-pads the input, which samples the same far field more
    finely).  With a lens of focal length f at wavelength lambda, samples
    land on the camera with spacing ``camera_pitch = lambda f / (n * pitch)``,
    so that equivalently pitch_k = 2 pi camera_pitch / (lambda f).
    """
    if field.width != field.height:
        raise ConfigurationError("far_field requires a square grid")
    values = _padded(field.values, pad_to)
    n = values.shape[0]
    spectrum = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(values), norm="ortho"))
    cam = None
    if wavelength is not None and focal_length is not None:
        cam = wavelength * focal_length / (n * field.pitch)
    return FieldGrid(spectrum, 2 * np.pi / (n * field.pitch), "momentum", camera_pitch=cam)


@dataclass
class PumpEnsemble:
    """Recipe for a set of pump realizations at the crystal plane.

    Realizations are regenerated on demand from ``(seed, index)`` so large
    ensembles never sit in memory and any subset can be rebuilt exactly.
    """

    source: FieldGrid
    mode: PumpMode
    diffuser: DiffuserSpec | None = None
    count: int = 1
    seed: int = 0
    allow_small: bool = field(default=False, repr=False)

    def __post_init__(self):
        if self.mode is PumpMode.COHERENT:
            if self.count != 1:
                raise ConfigurationError("a coherent pump has exactly one realization")
            return
        if self.diffuser is None:
            raise ConfigurationError(f"{self.mode.value} pump needs a diffuser")
        if self.mode is PumpMode.STATIC_SPECKLE and self.count != 1:
            raise ConfigurationError("a static speckle pump has exactly one realization")
        if self.mode is PumpMode.ROTATING and self.count < MIN_ROTATING_REALIZATIONS and not self.allow_small:
            raise ConfigurationError(
                f"rotating diffuser needs >= {MIN_ROTATING_REALIZATIONS} realizations, got {self.count}"
            )
        if self.count < 1:
            raise ConfigurationError("ensemble must be nonempty")

    def realization(self, index: int) -> FieldGrid:
        if not 0 <= index < self.count:
            raise IndexError(index)
        if self.mode is PumpMode.COHERENT:
            return self.source
        return apply_phase_screen(self.source, self.diffuser, (self.seed, index))

    def __iter__(self) -> Iterator[FieldGrid]:
        return (self.realization(i) for i in range(self.count))

    def __len__(self) -> int:
        return self.count


def make_ensemble(source: FieldGrid, mode: PumpMode | str, diffuser: DiffuserSpec | None = None,
                  realizations: int | None = None, seed: int = 0, allow_small: bool = False) -> PumpEnsemble:
    mode = PumpMode(mode)
    if realizations is None:
        realizations = 200 if mode is PumpMode.ROTATING else 1
    return PumpEnsemble(source, mode, diffuser, realizations, seed, allow_small)


def _ordered_map(fn, n: int, workers: int):
    """Yield fn(i) for i in 0..n-1 in index order, computing up to ``workers`` at once."""
    if workers <= 1:
        for i in range(n):
            yield fn(i)
        return
    with ThreadPoolExecutor(workers) as pool:
        for start in range(0, n, workers):
            yield from pool.map(fn, range(start, min(n, start + workers)))


def _power_sum(ensemble: PumpEnsemble, pad_to: int | None, workers: int) -> np.ndarray:
    """Sum over realizations of |FFT|^2 (unshifted, unnormalized), in index order."""

    def one(i):
        return np.abs(np.fft.fft2(_padded(ensemble.realization(i).values, pad_to))) ** 2

    total = None
    for img in _ordered_map(one, ensemble.count, workers):
        total = img if total is None else total + img
    return total


def _farfield_from_power(ensemble, total, wavelength, focal_length, pad_to) -> IntensityImage:
    ff_pitch = far_field(ensemble.source, wavelength, focal_length, pad_to).pitch
    return IntensityImage(np.fft.fftshift(total) / (total.size * ensemble.count), ff_pitch, "momentum")


def ensemble_farfield_intensity(ensemble: PumpEnsemble, wavelength: float | None = None,
                                focal_length: float | None = None, workers: int = 1,
                                pad_to: int | None = None) -> IntensityImage:
    """Mean far-field intensity over the ensemble.

    Realizations are reduced strictly in index order, so the result is
    bitwise identical for any ``workers``.
    """
    total = _power_sum(ensemble, pad_to, workers)
    return _farfield_from_power(ensemble, total, wavelength, focal_length, pad_to)


def gaussian_schell_farfield(pump: PumpParams, size: int = DEFAULT_GRID,
                             pitch_k: float = 2 * np.pi / (DEFAULT_GRID * DEFAULT_PITCH)) -> IntensityImage:
    """Analytic far-field intensity of a Gaussian-Schell pump, peak 1."""
    sk = sigma_k_theory(pump)
    k = centered_axis(size, pitch_k)
    return IntensityImage(np.exp(-(k[None, :] ** 2 + k[:, None] ** 2) / (2 * sk**2)), pitch_k, "momentum")


def _coherence_from_power(ensemble, total) -> tuple[np.ndarray, np.ndarray]:
    src = ensemble.source
    size = total.shape[0]
    mutual = np.abs(np.fft.ifft2(total))
    amp = _padded(np.abs(src.values), size)
    norm = np.fft.ifft2(np.abs(np.fft.fft2(amp)) ** 2).real * ensemble.count
    mu = mutual / np.maximum(norm, np.finfo(float).tiny)
    half = min(src.width, src.height) // 2
    profile = 0.5 * (mu[0, :half] + mu[:half, 0])
    return np.arange(half) * src.pitch, profile


def degree_of_coherence(ensemble: PumpEnsemble, workers: int = 1,
                        pad_to: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble-averaged |mu(d)| along the grid axes, for separations d >= 0.

    mu(d) = |sum E(r) E*(r + d)| / sum |E(r)| |E(r + d)|, summed over
    realizations and positions, evaluated with FFT correlations (circular
    unless ``pad_to`` >= twice the grid; the source is negligible at the
    grid edge either way).
    """
    return _coherence_from_power(ensemble, _power_sum(ensemble, pad_to, workers))


def _lc_from_profile(d: np.ndarray, mu: np.ndarray) -> float:
    below = np.nonzero(mu < math.exp(-1))[0]
    if below.size == 0:
        return INFINITE
    j = below[0]
    # linear interpolation in log(mu) between the bracketing samples
    y0, y1 = math.log(mu[j - 1]), math.log(max(mu[j], np.finfo(float).tiny))
    t = (-1 - y0) / (y1 - y0)
    d_e = d[j - 1] + t * (d[j] - d[j - 1])
    return d_e / math.sqrt(2)


def _is_coherent(ensemble) -> bool:
    return ensemble.mode is PumpMode.COHERENT or (ensemble.diffuser is not None and ensemble.diffuser.phase_std == 0)


def ground_truth_lc(ensemble: PumpEnsemble, workers: int = 1, pad_to: int | None = None) -> float:
    """Coherence length of the ensemble at the crystal plane.

    Reported in the Gaussian-Schell parameterization: the separation where
    |mu| falls to 1/e, divided by sqrt(2), so a pump with
    mu = exp(-d^2 / (2 lc^2)) returns lc.  Returns INFINITE when the pump
    is coherent or |mu| never reaches 1/e on the grid.
    """
    if _is_coherent(ensemble):
        return INFINITE
    return _lc_from_profile(*degree_of_coherence(ensemble, workers, pad_to))


def ensemble_statistics(ensemble: PumpEnsemble, wavelength: float | None = None,
                        focal_length: float | None = None, workers: int = 1,
                        pad_to: int | None = None) -> tuple[IntensityImage, float]:
    """Far-field intensity and ground-truth coherence length from one pass over the ensemble."""
    total = _power_sum(ensemble, pad_to, workers)
    image = _farfield_from_power(ensemble, total, wavelength, focal_length, pad_to)
    lc = INFINITE if _is_coherent(ensemble) else _lc_from_profile(*_coherence_from_power(ensemble, total))
    return image, lc
