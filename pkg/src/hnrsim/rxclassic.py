"""Classical receive chains: LS pilot estimation, LMMSE combining, soft
demapping and BP decoding.

The LMMSE output for one stream and N_r antennas is

    x_hat = h^H y / (|h|^2 + s2_eff),    s2_eff = noise_var + est_error_var

which equals mu * x + noise with mu = |h|^2 / (|h|^2 + s2_eff).  Demapping is
done on the bias-compensated symbol x_hat / mu, whose noise variance is
s2_eff / |h|^2 (= (1 - mu) / mu).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fec
from .link import FrameLayout, codeword_llrs
from .phy import GridSpec, ResourceGrid, exact_llr, grid_demap

MIN_NOISE_VAR = 1e-12
BP_ITERS = 10


@dataclass(frozen=True, eq=False)
class ChannelEstimate:
    H: np.ndarray          # (A, L, K); guard subcarriers are 0
    error_var: np.ndarray  # (L, K) estimation error variance per RE


@dataclass(frozen=True, eq=False)
class EqualizedFrame:
    x_hat: np.ndarray      # LMMSE output per data RE
    gain: np.ndarray       # mu per data RE
    noise_var: np.ndarray  # post-equalization noise variance of x_hat / mu

    def demapper_inputs(self) -> tuple[np.ndarray, np.ndarray]:
        ok = self.gain > 0
        sym = np.where(ok, self.x_hat / np.where(ok, self.gain, 1.0), 0.0)
        nv = np.where(ok, self.noise_var, np.inf)
        return sym, np.clip(nv, MIN_NOISE_VAR, 1e12)


def interpolation_weights(spec: GridSpec) -> np.ndarray:
    """(num_symbols, num_pilot_symbols) linear-in-time weights; symbols outside
    the pilot span copy the nearest pilot symbol."""
    ps = np.array(spec.pilot_symbols)
    W = np.zeros((spec.num_symbols, ps.size))
    for l in range(spec.num_symbols):
        if l <= ps[0]:
            W[l, 0] = 1.0
        elif l >= ps[-1]:
            W[l, -1] = 1.0
        else:
            j = np.searchsorted(ps, l, side="right") - 1
            w = (l - ps[j]) / (ps[j + 1] - ps[j])
            W[l, j], W[l, j + 1] = 1.0 - w, w
    return W


def ls_estimate(received: ResourceGrid, pilots: np.ndarray, spec: GridSpec,
                noise_var: float = 0.0, freq_window: int = 1) -> ChannelEstimate:
    """LS estimate Y p^* / |p|^2 on pilot REs, interpolated across symbols.

    ``freq_window`` > 1 adds a centred moving average across subcarriers.
    """
    if len(spec.pilot_symbols) == 0:
        raise ValueError("LS estimation needs at least one pilot symbol")
    _, y_p = grid_demap(received, spec)
    P = np.asarray(pilots)
    h_p = y_p * np.conj(P) / np.abs(P) ** 2
    err_p = noise_var / np.abs(P) ** 2
    if freq_window > 1:
        kern = np.ones(freq_window) / freq_window
        smooth = lambda a: np.apply_along_axis(np.convolve, -1, a, kern, mode="same")
        h_p = smooth(h_p.real) + 1j * smooth(h_p.imag)
        err_p = err_p / freq_window
    W = interpolation_weights(spec)
    A = received.values.shape[-3]
    H = np.zeros((A, spec.num_symbols, spec.fft_size), dtype=np.complex128)
    H[:, :, spec.usable_subcarriers] = np.einsum("lp,apk->alk", W, h_p)
    err = np.zeros((spec.num_symbols, spec.fft_size))
    err[:, spec.usable_subcarriers] = (W ** 2) @ err_p
    return ChannelEstimate(H, err)


def lmmse_equalize(received: ResourceGrid, H, noise_var: float, spec: GridSpec,
                   error_var=None) -> EqualizedFrame:
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    Hm = H.H if isinstance(H, ChannelEstimate) else np.asarray(H)
    if error_var is None and isinstance(H, ChannelEstimate):
        error_var = H.error_var
    y, _ = grid_demap(received, spec)
    h, _ = grid_demap(Hm, spec)
    s2 = np.full(y.shape[-1], float(noise_var))
    if error_var is not None:
        ev, _ = grid_demap(np.asarray(error_var)[None], spec)
        s2 = s2 + ev[0]
    energy = (np.abs(h) ** 2).sum(axis=-2)
    denom = energy + s2
    if np.any(denom == 0):
        raise ZeroDivisionError("zero channel with zero noise: LMMSE undefined")
    x_hat = (np.conj(h) * y).sum(axis=-2) / denom
    gain = energy / denom
    with np.errstate(divide="ignore"):
        nv = np.where(energy > 0, s2 / np.where(energy > 0, energy, 1.0), np.inf)
    return EqualizedFrame(x_hat, gain, nv)


def demap(eq: EqualizedFrame, layout: FrameLayout, max_log: bool = False) -> np.ndarray:
    sym, nv = eq.demapper_inputs()
    return exact_llr(sym, nv, layout.const, max_log=max_log)


@dataclass(frozen=True, eq=False)
class RxResult:
    info: np.ndarray        # decided information bits, frame order
    codewords: np.ndarray   # decided codewords (num_codewords, n); empty in bypass mode
    llrs: np.ndarray        # soft input to the decoder, frame bit order
    decoded: np.ndarray     # per-codeword success flags


def decode_frame(llrs: np.ndarray, layout: FrameLayout, bp_iters: int = BP_ITERS) -> RxResult:
    """BP-decode every codeword of a frame's LLR stream (bypass: hard decision)."""
    if layout.pcm is None:
        return RxResult((llrs < 0).astype(np.uint8), np.zeros((0, 0), np.uint8),
                        llrs, np.zeros(0, bool))
    cw_llr = codeword_llrs(llrs, layout)
    hard, ok, _ = fec.bp_decode(cw_llr, layout.pcm, bp_iters)
    info = fec.extract_info(hard, layout.pcm.generator).reshape(-1)
    return RxResult(info, hard, llrs, ok)


def baseline_receive(received: ResourceGrid, spec: GridSpec, noise_var: float,
                     layout: FrameLayout, bp_iters: int = BP_ITERS,
                     freq_window: int = 1) -> RxResult:
    est = ls_estimate(received, layout.pilots, spec, noise_var, freq_window)
    eq = lmmse_equalize(received, est, noise_var, spec)
    return decode_frame(demap(eq, layout), layout, bp_iters)


def perfect_csi_receive(received: ResourceGrid, H: np.ndarray, noise_var: float,
                        spec: GridSpec, layout: FrameLayout,
                        bp_iters: int = BP_ITERS) -> RxResult:
    eq = lmmse_equalize(received, H, noise_var, spec)
    return decode_frame(demap(eq, layout), layout, bp_iters)
