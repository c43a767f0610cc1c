"""Ring-detector acquisition geometry and image grid."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class ScanConfig:
    n_detectors: int = 36
    ring_radius: float = 0.044
    n_samples: int = 1024
    sample_rate: float = 41e6
    speed_of_sound: float = 1490.0
    image_size: int = 128
    pixel_size: float = 115e-6
    position_jitter_frac: float = 0.001
    # None -> derived so that every pixel-detector delay fits the window
    acquisition_start: float | None = None
    rng_seed: int = 0

    def validate(self) -> None:
        for name in ("n_detectors", "n_samples", "image_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("ring_radius", "sample_rate", "speed_of_sound", "pixel_size"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if self.image_size % 2:
            raise ValueError("image_size must be even")
        if not 0.0 <= self.position_jitter_frac <= 0.01:
            raise ValueError("position_jitter_frac must lie in [0, 0.01]")
        if self.acquisition_start is not None and self.acquisition_start < 0:
            raise ValueError("acquisition_start must be nonnegative")


@dataclass(frozen=True)
class ScanGeometry:
    config: ScanConfig
    detector_xy: np.ndarray  # (N_d, 2) meters, possibly perturbed
    nominal_detector_xy: np.ndarray  # (N_d, 2) on the ring
    pixel_xy: np.ndarray  # (H, W, 2) meters
    t_start: float
    dt: float
    n_samples: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_detectors(self) -> int:
        return self.detector_xy.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.pixel_xy.shape[:2]

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.dt

    @property
    def speed_of_sound(self) -> float:
        return self.config.speed_of_sound

    def nominal(self) -> "ScanGeometry":
        """Same grid and timing, detectors at their unperturbed ring positions."""
        return replace(self, detector_xy=self.nominal_detector_xy, _cache={})

    def subset(self, idx) -> "ScanGeometry":
        """Geometry restricted to (or reordered by) detector indices ``idx``."""
        idx = np.asarray(idx)
        return replace(
            self,
            detector_xy=self.detector_xy[idx],
            nominal_detector_xy=self.nominal_detector_xy[idx],
            _cache={},
        )

    def delays(self) -> np.ndarray:
        """Time of flight tau_d(r) in seconds, shape (N_d, H*W)."""
        if "delays" not in self._cache:
            pix = self.pixel_xy.reshape(-1, 2)
            diff = pix[None, :, :] - self.detector_xy[:, None, :]
            dist = np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2)
            self._cache["delays"] = dist / self.config.speed_of_sound
        return self._cache["delays"]

    def fractional_samples(self) -> np.ndarray:
        """u = (tau - t_start) * f_s for every detector/pixel pair."""
        if "u" not in self._cache:
            self._cache["u"] = (self.delays() - self.t_start) / self.dt
        return self._cache["u"]


def pixel_grid(size: int, pixel_size: float) -> np.ndarray:
    c = (size - 1) / 2.0
    idx = np.arange(size, dtype=np.float64)
    x = (idx - c) * pixel_size
    y = (c - idx) * pixel_size
    xx = np.broadcast_to(x[None, :], (size, size))
    yy = np.broadcast_to(y[:, None], (size, size))
    return np.stack([xx, yy], axis=-1)


def ring_positions(n_detectors: int, radius: float) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(n_detectors) / n_detectors
    return radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def default_start_time(config: ScanConfig, detector_xy: np.ndarray) -> float:
    half_diag = (config.image_size - 1) / 2.0 * config.pixel_size * math.sqrt(2.0)
    # with jitter the closest detector can sit inside the nominal ring
    r_min = float(np.min(np.hypot(detector_xy[:, 0], detector_xy[:, 1])))
    earliest = (r_min - half_diag) / config.speed_of_sound
    return math.floor(config.sample_rate * earliest) / config.sample_rate


def build_geometry(config: ScanConfig) -> ScanGeometry:
    config.validate()
    nominal = ring_positions(config.n_detectors, config.ring_radius)
    rng = np.random.default_rng(config.rng_seed)
    j = config.position_jitter_frac * config.ring_radius
    offsets = rng.uniform(-j, j, size=nominal.shape) if j > 0 else np.zeros_like(nominal)
    detectors = nominal + offsets

    half_diag = (config.image_size - 1) / 2.0 * config.pixel_size * math.sqrt(2.0)
    if half_diag >= config.ring_radius * (1 - 2 * config.position_jitter_frac):
        raise ValueError("image grid does not fit inside the detector ring")

    t_start = config.acquisition_start
    if t_start is None:
        t_start = default_start_time(config, detectors)
    dt = 1.0 / config.sample_rate

    r_max = float(np.max(np.hypot(detectors[:, 0], detectors[:, 1])))
    latest = (r_max + half_diag) / config.speed_of_sound
    r_min = float(np.min(np.hypot(detectors[:, 0], detectors[:, 1])))
    earliest = (r_min - half_diag) / config.speed_of_sound
    if earliest < t_start or (latest - t_start) * config.sample_rate > config.n_samples - 2:
        raise ValueError(
            f"acquisition window [{t_start:.4g}, {t_start + (config.n_samples - 2) * dt:.4g}] s "
            f"does not cover delays [{earliest:.4g}, {latest:.4g}] s"
        )

    return ScanGeometry(
        config=config,
        detector_xy=detectors,
        nominal_detector_xy=nominal,
        pixel_xy=pixel_grid(config.image_size, config.pixel_size),
        t_start=float(t_start),
        dt=dt,
        n_samples=config.n_samples,
    )
