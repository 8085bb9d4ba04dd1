"""Frequency-domain fading channels applied per resource element.

Models: ``ideal`` (H = 1), ``flat-rayleigh`` (one Jakes-faded coefficient
per receive antenna) and ``tdl`` (tapped delay line with an exponential
power-delay profile, each tap Jakes-faded).  Time variation uses a
sum-of-sinusoids Jakes process sampled once per OFDM symbol, with the symbol
duration taken as 1/subcarrier_spacing (no cyclic prefix is simulated).
Path loss and shadowing are not modelled; the SNR axis absorbs average gain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .phy import GridSpec, ResourceGrid

SPEED_OF_LIGHT = 299_792_458.0
MODELS = ("ideal", "flat-rayleigh", "tdl")
NUM_OSCILLATORS = 32


@dataclass(frozen=True)
class ChannelSpec:
    model: str = "tdl"
    delay_spread: float = 266e-9
    speed_min: float = 0.0  # km/h
    speed_max: float = 120.0
    carrier_freq: float = 28e9
    subcarrier_spacing: float = 240e3
    num_rx: int = 2
    num_taps: int = 8

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown channel model {self.model!r}; choose from {MODELS}")
        if self.delay_spread <= 0:
            raise ValueError("delay_spread must be positive")
        if self.speed_min < 0 or self.speed_max < self.speed_min:
            raise ValueError("speed range must satisfy 0 <= min <= max")
        if self.num_rx < 1 or self.num_taps < 1:
            raise ValueError("num_rx and num_taps must be >= 1")
        if tdl_profile(self)[0][-1] >= 1.0 / self.subcarrier_spacing:
            raise ValueError("tap delays exceed the OFDM symbol duration")


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    H: np.ndarray  # (num_rx, num_symbols, fft_size)
    noise_var: float
    speed_kmh: float
    model: str


def doppler(speed_kmh: float, carrier_hz: float) -> float:
    """Maximum Doppler shift in Hz."""
    if speed_kmh < 0:
        raise ValueError("speed must be non-negative")
    return speed_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT


def tdl_profile(spec: ChannelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Tap delays (s) and powers (sum 1) for the exponential profile.

    Powers decay as exp(-i / (num_taps/4)) over equally spaced taps; the tap
    spacing is then set so the RMS delay spread equals ``spec.delay_spread``
    exactly.
    """
    n = spec.num_taps
    if n == 1:
        return np.zeros(1), np.ones(1)
    i = np.arange(n, dtype=np.float64)
    p = np.exp(-i / (n / 4.0))
    p /= p.sum()
    mean = (p * i).sum()
    rms_idx = np.sqrt((p * (i - mean) ** 2).sum())
    return i * (spec.delay_spread / rms_idx), p


def _jakes(rng: np.random.Generator, shape: tuple[int, ...], fd: float, t: np.ndarray) -> np.ndarray:
    """Unit-power sum-of-sinusoids fading processes, shape + (len(t),)."""
    alpha = rng.uniform(0, 2 * np.pi, shape + (NUM_OSCILLATORS,))
    phi = rng.uniform(0, 2 * np.pi, shape + (NUM_OSCILLATORS,))
    freq = 2 * np.pi * fd * np.cos(alpha)
    arg = freq[..., None] * t + phi[..., None]
    return np.exp(1j * arg).sum(axis=-2) / np.sqrt(NUM_OSCILLATORS)


def realize(spec: ChannelSpec, grid: GridSpec, seed: int, noise_var: float = 0.0) -> ChannelRealization:
    rng = np.random.default_rng(seed)
    R, L, K = spec.num_rx, grid.num_symbols, grid.fft_size
    speed = float(rng.uniform(spec.speed_min, spec.speed_max))
    if spec.model == "ideal":
        return ChannelRealization(np.ones((R, L, K), dtype=np.complex128), noise_var, speed, spec.model)
    fd = doppler(speed, spec.carrier_freq)
    t = np.arange(L) / spec.subcarrier_spacing
    if spec.model == "flat-rayleigh":
        a = _jakes(rng, (R,), fd, t)
        H = np.broadcast_to(a[:, :, None], (R, L, K)).copy()
    else:
        delays, powers = tdl_profile(spec)
        a = _jakes(rng, (R, delays.size), fd, t) * np.sqrt(powers)[:, None]
        H = tdl_response(a, delays, spec.subcarrier_spacing, K)
    return ChannelRealization(H, noise_var, speed, spec.model)


def tdl_response(taps: np.ndarray, delays: np.ndarray, spacing: float, fft_size: int) -> np.ndarray:
    """H[r, l, k] = sum_i taps[r, i, l] exp(-j 2 pi k spacing delay_i)."""
    steer = np.exp(-2j * np.pi * np.outer(delays, np.arange(fft_size)) * spacing)
    return np.einsum("ril,ik->rlk", taps, steer)


def apply(grid: ResourceGrid, realization: ChannelRealization, seed: int) -> ResourceGrid:
    """Y = H X + N with N ~ CN(0, noise_var) independently per antenna and RE."""
    x = grid.values
    if x.shape[-3] != 1:
        raise ValueError("transmit grid must carry a single stream")
    H = realization.H
    if x.shape[-2:] != H.shape[-2:]:
        raise ValueError(f"grid shape {x.shape} does not match channel {H.shape}")
    y = H * x
    if realization.noise_var > 0:
        rng = np.random.default_rng(seed)
        s = np.sqrt(realization.noise_var / 2)
        y = y + s * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return ResourceGrid(y, grid.spec)
