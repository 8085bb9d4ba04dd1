"""Modulation, soft demapping and OFDM resource-grid (de)mapping.

Bit/RE ordering: coded bit ``i`` lands on data symbol ``i // bps`` at bit
position ``i % bps``; data symbols fill the usable REs of the non-pilot OFDM
symbols symbol-major, subcarrier-minor.  Every receiver relies on this.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy.special import logsumexp

CONSTELLATIONS = {"qpsk": 4, "qam16": 16, "qam32": 32, "qam64": 64}


def _gray_pam(nbits: int) -> tuple[np.ndarray, np.ndarray]:
    """Levels from most positive to most negative, with Gray labels whose
    first bit is 0 on the positive half."""
    L = 2 ** nbits
    levels = (L - 1) - 2.0 * np.arange(L)
    labels = np.arange(L) ^ (np.arange(L) >> 1)
    return levels, labels


@dataclass(frozen=True, eq=False)
class Constellation:
    """Unit-energy Gray-labelled QAM.

    Square orders split the label into an in-phase half and a quadrature
    half.  32-QAM is the rectangular 8x4 lattice (3 bits on I, 2 on Q): a
    32-point cross lattice has no labelling where every adjacent pair
    differs in one bit, the rectangle does.
    """

    name: str
    points: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)  # (Q, bps) bits of each point

    @property
    def order(self) -> int:
        return self.points.size

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    @cached_property
    def bit_masks(self) -> np.ndarray:
        """(bps, Q) boolean: point carries a 1 at that bit position."""
        return self.labels.T.astype(bool)

    @cached_property
    def _index_of_label(self) -> np.ndarray:
        weights = 1 << np.arange(self.bits_per_symbol)[::-1]
        lut = np.empty(self.order, dtype=np.intp)
        lut[self.labels @ weights] = np.arange(self.order)
        return lut


@lru_cache(maxsize=None)
def constellation(name: str) -> Constellation:
    if name not in CONSTELLATIONS:
        raise ValueError(f"unknown constellation {name!r}; choose from {sorted(CONSTELLATIONS)}")
    bps = int(np.log2(CONSTELLATIONS[name]))
    bi = (bps + 1) // 2
    bq = bps - bi
    li, gi = _gray_pam(bi)
    lq, gq = _gray_pam(bq)
    pts, labs = [], []
    for a, la in zip(li, gi):
        for b, lb in zip(lq, gq):
            pts.append(a + 1j * b)
            code = (int(la) << bq) | int(lb)
            labs.append([(code >> (bps - 1 - t)) & 1 for t in range(bps)])
    pts = np.array(pts)
    pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    labs = np.array(labs, dtype=np.uint8)
    pts.setflags(write=False)
    labs.setflags(write=False)
    return Constellation(name, pts, labs)


def map_bits(bits, const: Constellation) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint8)
    bps = const.bits_per_symbol
    if b.shape[-1] % bps:
        raise ValueError(f"{b.shape[-1]} bits is not a multiple of {bps} bits per symbol")
    groups = b.reshape(b.shape[:-1] + (-1, bps)).astype(np.intp)
    idx = groups @ (1 << np.arange(bps)[::-1])
    return const.points[const._index_of_label[idx]]


def demap_hard(symbols, const: Constellation) -> np.ndarray:
    y = np.asarray(symbols)
    nearest = np.argmin(np.abs(y[..., None] - const.points) ** 2, axis=-1)
    bits = const.labels[nearest]
    return bits.reshape(y.shape[:-1] + (-1,))


def exact_llr(symbols, noise_var, const: Constellation, max_log: bool = False) -> np.ndarray:
    """Per-bit LLRs, log P(b=0|y) - log P(b=1|y), for equalized symbols with
    the given effective noise variance (scalar or per symbol).

    Output has shape symbols.shape[:-1] + (n_sym * bps,) in bit order.
    """
    y = np.asarray(symbols)
    nv = np.broadcast_to(np.asarray(noise_var, dtype=np.float64), y.shape)
    if np.any(nv <= 0):
        raise ValueError("noise variance must be positive")
    metric = -np.abs(y[..., None] - const.points) ** 2 / nv[..., None]
    masks = const.bit_masks
    out = np.empty(y.shape + (const.bits_per_symbol,))
    for t, ones in enumerate(masks):
        m0, m1 = metric[..., ~ones], metric[..., ones]
        if max_log:
            out[..., t] = m0.max(axis=-1) - m1.max(axis=-1)
        else:
            out[..., t] = logsumexp(m0, axis=-1) - logsumexp(m1, axis=-1)
    return out.reshape(y.shape[:-1] + (-1,))


# ------------------------------------------------------------------ grid

@dataclass(frozen=True)
class GridSpec:
    fft_size: int = 129
    guard_left: int = 12
    guard_right: int = 12
    num_symbols: int = 16
    pilot_symbols: tuple[int, ...] = (2, 11)
    dc_null: bool = False

    def __post_init__(self):
        if self.guard_left < 0 or self.guard_right < 0:
            raise ValueError("guards must be non-negative")
        if self.guard_left + self.guard_right >= self.fft_size:
            raise ValueError("guards leave no usable subcarriers")
        ps = tuple(self.pilot_symbols)
        if len(set(ps)) != len(ps) or any(p < 0 or p >= self.num_symbols for p in ps):
            raise ValueError(f"bad pilot symbol indices {ps}")
        object.__setattr__(self, "pilot_symbols", tuple(sorted(ps)))

    @cached_property
    def usable_subcarriers(self) -> np.ndarray:
        k = np.arange(self.guard_left, self.fft_size - self.guard_right)
        if self.dc_null:
            k = k[k != self.fft_size // 2]
        return k

    @cached_property
    def data_symbols(self) -> np.ndarray:
        return np.array([l for l in range(self.num_symbols) if l not in self.pilot_symbols],
                        dtype=np.intp)

    @property
    def num_usable(self) -> int:
        return int(self.usable_subcarriers.size)

    @property
    def num_data_re(self) -> int:
        return self.num_usable * int(self.data_symbols.size)

    @property
    def num_tokens(self) -> int:
        return self.num_usable * self.num_symbols

    def capacity_bits(self, const: Constellation) -> int:
        return self.num_data_re * const.bits_per_symbol

    def as_dict(self) -> dict:
        return {"fft_size": self.fft_size, "guard_left": self.guard_left,
                "guard_right": self.guard_right, "num_symbols": self.num_symbols,
                "pilot_symbols": list(self.pilot_symbols), "dc_null": self.dc_null}


@dataclass(frozen=True, eq=False)
class ResourceGrid:
    """Complex values indexed (..., antenna, OFDM symbol, subcarrier)."""

    values: np.ndarray
    spec: GridSpec

    @property
    def num_antennas(self) -> int:
        return self.values.shape[-3]


def pilot_values(spec: GridSpec, seed: int = 0) -> np.ndarray:
    """Unit-magnitude QPSK pilots, shape (num pilot symbols, usable subcarriers)."""
    rng = np.random.default_rng(seed)
    q = rng.integers(0, 4, size=(len(spec.pilot_symbols), spec.num_usable))
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * q))


def grid_map(data_symbols, pilots, spec: GridSpec) -> ResourceGrid:
    """Place data and pilots on a single-stream transmit grid; guards stay 0."""
    x = np.asarray(data_symbols, dtype=np.complex128)
    if x.shape[-1] != spec.num_data_re:
        raise ValueError(f"grid holds {spec.num_data_re} data symbols, got {x.shape[-1]}")
    P = np.asarray(pilots)
    if P.shape != (len(spec.pilot_symbols), spec.num_usable):
        raise ValueError(f"pilot matrix must be {(len(spec.pilot_symbols), spec.num_usable)}")
    lead = x.shape[:-1]
    g = np.zeros(lead + (1, spec.num_symbols, spec.fft_size), dtype=np.complex128)
    ks = spec.usable_subcarriers
    g[..., 0, np.array(spec.pilot_symbols)[:, None], ks] = P
    data = x.reshape(lead + (spec.data_symbols.size, spec.num_usable))
    g[..., 0, spec.data_symbols[:, None], ks] = data
    return ResourceGrid(g, spec)


def grid_demap(grid: ResourceGrid | np.ndarray, spec: GridSpec):
    """Return (data values (..., A, num_data_re), pilot observations (..., A, P, K_usable))."""
    v = grid.values if isinstance(grid, ResourceGrid) else np.asarray(grid)
    if v.shape[-2:] != (spec.num_symbols, spec.fft_size):
        raise ValueError(f"grid shape {v.shape} does not match {spec}")
    ks = spec.usable_subcarriers
    data = v[..., spec.data_symbols[:, None], ks]
    pil = v[..., np.array(spec.pilot_symbols, dtype=np.intp)[:, None], ks]
    return data.reshape(v.shape[:-2] + (-1,)), pil


def bit_positions(spec: GridSpec, const: Constellation) -> np.ndarray:
    """Table (capacity_bits, 3) of (symbol l, subcarrier k, bit position)."""
    bps = const.bits_per_symbol
    ls = np.repeat(spec.data_symbols, spec.num_usable)
    ks = np.tile(spec.usable_subcarriers, spec.data_symbols.size)
    i = np.arange(spec.num_data_re * bps)
    return np.stack([ls[i // bps], ks[i // bps], i % bps], axis=1)
