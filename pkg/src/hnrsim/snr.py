"""The one place SNR in dB turns into a noise variance.

SNR is Es/N0 per receive antenna for unit-energy constellations, so
noise_var = 10^(-SNR/10).  In ``ebn0`` mode the SNR is per information bit
and is first converted with the frame's information bits per data symbol.
"""
from __future__ import annotations

import numpy as np

SNR_MODES = ("esn0", "ebn0")


def info_bits_per_symbol(layout) -> float:
    return layout.info_bits / layout.spec.num_data_re


def noise_var_from_snr(snr_db, mode: str = "esn0", layout=None):
    if mode not in SNR_MODES:
        raise ValueError(f"unknown SNR mode {mode!r}")
    esn0_db = np.asarray(snr_db, dtype=np.float64)
    if mode == "ebn0":
        if layout is None:
            raise ValueError("Eb/N0 needs the frame layout to know bits per symbol")
        esn0_db = esn0_db + 10 * np.log10(info_bits_per_symbol(layout))
    nv = 10.0 ** (-esn0_db / 10.0)
    return float(nv) if nv.ndim == 0 else nv
