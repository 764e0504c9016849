"""Photon-pair sampling and EMCCD-like frame rendering."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import BiphotonGaussian, PumpParams, _beta_for, _sigma_r
from .errors import ConfigurationError, DomainError

# defaults of the momentum-imaging optics
DC_WAVELENGTH = 810e-9
FOCAL_F3 = 40e-3
CAMERA_PIXEL = 16e-6
POSITION_MAGNIFICATION = 4.0


class ImagingMode(enum.IntEnum):
    MOMENTUM = 0
    POSITION = 1


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


@dataclass(frozen=True)
class CameraSpec:
    """Sensor geometry, calibration and noise model.

    ``calibration`` is the affine pixel -> coordinate map
    (a, b, c, d, e, f): x = a u + b v + c, y = d u + e v + f, with u the
    column and v the row index of a pixel centre.  Coordinates are rad/m in
    momentum mode and m in position mode.
    """

    width: int = 75
    height: int = 75
    calibration: tuple[float, float, float, float, float, float] = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
    quantum_efficiency: float = 0.8
    em_gain_mean: float = 300.0
    readout_noise_mean: float = 171.0
    readout_noise_std: float = 20.0
    pairs_per_frame_mean: float = 50.0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ConfigurationError("sensor must be at least 2x2")
        if len(self.calibration) != 6:
            raise ConfigurationError("calibration needs 6 affine coefficients")
        a, b, _, d, e, _ = self.calibration
        if abs(a * e - b * d) == 0 or not all(map(math.isfinite, self.calibration)):
            raise ConfigurationError("calibration is not invertible")
        if not 0 <= self.quantum_efficiency <= 1:
            raise ConfigurationError("quantum_efficiency must lie in [0, 1]")
        if self.em_gain_mean <= 0 or self.readout_noise_std < 0 or self.pairs_per_frame_mean < 0:
            raise ConfigurationError("gain must be positive; noise std and pair rate non-negative")

    @property
    def pixels(self) -> int:
        return self.width * self.height

    @classmethod
    def momentum(cls, width=75, height=75, pixel_pitch=CAMERA_PIXEL, wavelength=DC_WAVELENGTH,
                 focal_length=FOCAL_F3, **kw) -> "CameraSpec":
        """Far-field imaging: k = 2 pi u_cam / (lambda f), centred on the sensor."""
        dk = 2 * math.pi * pixel_pitch / (wavelength * focal_length)
        return cls(width, height, _centered(dk, width, height), **kw)

    @classmethod
    def position(cls, width=75, height=75, pixel_pitch=CAMERA_PIXEL,
                 magnification=POSITION_MAGNIFICATION, **kw) -> "CameraSpec":
        """Crystal-plane imaging with the given magnification."""
        return cls(width, height, _centered(pixel_pitch / magnification, width, height), **kw)

    def step(self) -> tuple[float, float]:
        """Per-pixel coordinate step (x, y); requires an axis-aligned calibration."""
        a, b, _, d, e, _ = self.calibration
        if b != 0 or d != 0:
            raise ConfigurationError("operation needs an axis-aligned calibration")
        return a, e

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        a, _, c, _, e, f = self.calibration
        self.step()
        return a * np.arange(self.width) + c, e * np.arange(self.height) + f

    def to_pixel(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest pixel (column, row) for coordinates ``xy[..., 2]``."""
        a, b, c, d, e, f = self.calibration
        inv = np.linalg.inv(np.array([[a, b], [d, e]]))
        rel = np.asarray(xy, dtype=float) - np.array([c, f])
        uv = rel @ inv.T
        return np.floor(uv[..., 0] + 0.5).astype(np.int64), np.floor(uv[..., 1] + 0.5).astype(np.int64)


def _centered(step: float, width: int, height: int):
    return (step, 0.0, -step * (width - 1) / 2, 0.0, step, -step * (height - 1) / 2)


@dataclass
class PairSamples:
    """Photon pairs as two (n, 2) coordinate arrays sharing one imaging mode."""

    photon1: np.ndarray
    photon2: np.ndarray
    mode: ImagingMode = ImagingMode.MOMENTUM

    def __post_init__(self):
        self.photon1 = np.asarray(self.photon1, dtype=float)
        self.photon2 = np.asarray(self.photon2, dtype=float)
        if self.photon1.shape != self.photon2.shape or self.photon1.shape[-1:] != (2,):
            raise ValueError("photon arrays must both have shape (n, 2)")

    def __len__(self) -> int:
        return len(self.photon1)

    def swapped(self) -> "PairSamples":
        return PairSamples(self.photon2, self.photon1, self.mode)

    @property
    def plus(self) -> np.ndarray:
        return self.photon1 + self.photon2

    @property
    def minus(self) -> np.ndarray:
        return self.photon1 - self.photon2


def _from_plus_minus(plus, minus, mode) -> PairSamples:
    return PairSamples((plus + minus) / 2, (plus - minus) / 2, mode)


def sample_pairs_momentum(n: int, model: BiphotonGaussian, seed) -> PairSamples:
    """Draw n pairs from the double-Gaussian momentum distribution."""
    if n < 1:
        raise DomainError("need at least one pair")
    rng = _rng(*np.atleast_1d(seed))
    plus = rng.normal(0.0, model.sigma_k, size=(n, 2))
    minus = rng.normal(0.0, 1.0 / model.sigma_r, size=(n, 2))
    return _from_plus_minus(plus, minus, ImagingMode.MOMENTUM)


def sample_pairs_position(n: int, crystal, pump: PumpParams, beta_value: float | None = None,
                          seed=0) -> PairSamples:
    """Draw n pairs at the crystal output face.

    r1 - r2 has per-component std sqrt(beta) * sigma_r; the centroid follows
    the pump intensity, so r1 + r2 has per-component std 2 * waist.
    ``crystal`` may be a CrystalParams or an explicit sigma_r in metres.
    """
    if n < 1:
        raise DomainError("need at least one pair")
    b = _beta_for(crystal, beta_value)
    sr = _sigma_r(crystal)
    rng = _rng(*np.atleast_1d(seed))
    plus = rng.normal(0.0, 2 * pump.waist_w, size=(n, 2))
    minus = rng.normal(0.0, math.sqrt(b) * sr, size=(n, 2))
    return _from_plus_minus(plus, minus, ImagingMode.POSITION)


def sample_pairs_static_speckle(n: int, intensity, sigma_r: float, seed=0, pitch: float | None = None,
                                jitter: bool = False) -> PairSamples:
    """Pairs pumped by a fixed (non-averaged) field.

    The pair momentum sum is drawn from the discrete distribution
    proportional to ``intensity`` (the pump far field, origin at index
    ``size // 2``) and sits exactly on pixel centres; the momentum
    difference is Gaussian with std 1 / sigma_r.  ``intensity`` is an
    IntensityImage, or an array together with ``pitch`` in rad/m.

    With ``jitter`` the sum is spread uniformly over its grid cell, i.e.
    sampled from the piecewise-constant density; use it when the image is a
    smooth ensemble average rather than a speckle pattern.
    """
    if n < 1:
        raise DomainError("need at least one pair")
    if pitch is None:
        values, pitch = np.asarray(intensity.values, dtype=float), intensity.pitch
    else:
        values = np.asarray(intensity, dtype=float)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise DomainError("intensity must be finite and non-negative")
    total = values.sum()
    if total <= 0:
        raise DomainError("intensity image is identically zero")
    h, w = values.shape
    rng = _rng(*np.atleast_1d(seed))
    flat = rng.choice(values.size, size=n, p=(values / total).ravel())
    row, col = np.divmod(flat, w)
    plus = np.stack([(col - w // 2) * pitch, (row - h // 2) * pitch], axis=-1).astype(float)
    if jitter:
        plus += rng.uniform(-pitch / 2, pitch / 2, size=plus.shape)
    minus = rng.normal(0.0, 1.0 / sigma_r, size=(n, 2))
    return _from_plus_minus(plus, minus, ImagingMode.MOMENTUM)


@dataclass
class RenderStats:
    pairs: int = 0
    off_sensor: int = 0
    undetected: int = 0
    deposited: int = 0

    @property
    def dropped(self) -> int:
        return self.off_sensor + self.undetected


@dataclass
class FrameStack:
    spec: CameraSpec
    mode: ImagingMode
    frames: np.ndarray
    stats: RenderStats = field(default_factory=RenderStats)

    def __post_init__(self):
        self.mode = ImagingMode(self.mode)
        self.frames = np.asarray(self.frames)
        if self.frames.dtype != np.uint16:
            raise ValueError("frames must be 16-bit unsigned")
        if self.frames.ndim != 3 or self.frames.shape[1:] != (self.spec.height, self.spec.width):
            raise ValueError(f"frames must have shape (n, {self.spec.height}, {self.spec.width})")
        if len(self.frames) < 1:
            raise ValueError("a frame stack holds at least one frame")

    def __len__(self) -> int:
        return len(self.frames)

    def mean_frame(self) -> np.ndarray:
        return self.frames.mean(axis=0, dtype=np.float64)


def frame_counts(frames: int, spec: CameraSpec, seed, fixed: bool = False) -> np.ndarray:
    """Pairs per frame: Poisson(pairs_per_frame_mean), or exactly round(mean) when ``fixed``."""
    if frames < 1:
        raise ConfigurationError("frame count must be >= 1")
    if fixed:
        return np.full(frames, int(round(spec.pairs_per_frame_mean)), dtype=np.int64)
    return _rng(*np.atleast_1d(seed), 1).poisson(spec.pairs_per_frame_mean, size=frames)


def render_frames(pairs: PairSamples, counts, spec: CameraSpec, seed) -> FrameStack:
    """Render pairs into frames; ``counts[i]`` consecutive pairs belong to frame i.

    Each photon is detected with probability ``quantum_efficiency`` and then
    deposits an exponentially distributed signal of mean ``em_gain_mean``
    grey levels in its pixel (the high-gain limit of the multiplication
    register; a gain of exactly 1 means multiplication is off and each
    photoelectron counts as one grey level).  Every pixel gets Gaussian
    readout noise.
    Values are rounded and clamped to [0, 65535].  Photons outside the
    sensor are dropped and counted in ``stats.off_sensor``.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.sum() != len(pairs):
        raise ValueError(f"counts sum to {counts.sum()} but {len(pairs)} pairs were given")
    P = spec.pixels
    u1, v1 = spec.to_pixel(pairs.photon1)
    u2, v2 = spec.to_pixel(pairs.photon2)
    # interleave so photons of one frame stay contiguous
    u = np.stack([u1, u2], axis=1).ravel()
    v = np.stack([v1, v2], axis=1).ravel()
    inside = (u >= 0) & (u < spec.width) & (v >= 0) & (v < spec.height)
    pix = np.where(inside, v * spec.width + u, -1)
    bounds = np.concatenate([[0], np.cumsum(2 * counts)])

    keys = np.atleast_1d(seed).tolist()
    out = np.empty((len(counts), spec.height, spec.width), dtype=np.uint16)
    stats = RenderStats(pairs=len(pairs), off_sensor=int((~inside).sum()))
    for i in range(len(counts)):
        rng = _rng(*keys, 2, i)
        img = rng.normal(spec.readout_noise_mean, spec.readout_noise_std, size=P) \
            if spec.readout_noise_std > 0 else np.full(P, float(spec.readout_noise_mean))
        p = pix[bounds[i]:bounds[i + 1]]
        p = p[p >= 0]
        if p.size:
            hit = rng.random(p.size) < spec.quantum_efficiency
            p = p[hit]
            stats.undetected += int((~hit).sum())
            stats.deposited += int(p.size)
            if spec.em_gain_mean == 1.0:
                gain = np.ones(p.size)
            else:
                gain = rng.exponential(spec.em_gain_mean, size=p.size)
            img += np.bincount(p, weights=gain, minlength=P)
        out[i] = np.clip(np.rint(img), 0, 65535).astype(np.uint16).reshape(spec.height, spec.width)
    return FrameStack(spec, pairs.mode, out, stats)
