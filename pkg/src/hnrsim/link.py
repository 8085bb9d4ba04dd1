"""Frame assembly shared by the transmitter and every receiver.

A frame carries ``capacity_bits // n`` codewords back to back in coded-bit
order; any leftover bit slots hold seeded filler bits that no receiver
decodes.  Without a code ("bypass" mode) every slot is an information bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import fec
from .phy import Constellation, GridSpec, ResourceGrid, grid_map, map_bits, pilot_values


@dataclass(frozen=True, eq=False)
class FrameLayout:
    spec: GridSpec
    const: Constellation
    pcm: fec.ParityCheckMatrix | None = None
    pilot_seed: int = 0

    def __post_init__(self):
        if self.pcm is not None and self.pcm.n > self.capacity_bits:
            raise ValueError(f"code length {self.pcm.n} exceeds the frame's "
                             f"{self.capacity_bits} coded-bit slots")

    @property
    def capacity_bits(self) -> int:
        return self.spec.capacity_bits(self.const)

    @property
    def num_codewords(self) -> int:
        return 0 if self.pcm is None else self.capacity_bits // self.pcm.n

    @property
    def coded_bits(self) -> int:
        return self.capacity_bits if self.pcm is None else self.num_codewords * self.pcm.n

    @property
    def filler_bits(self) -> int:
        return self.capacity_bits - self.coded_bits

    @property
    def info_bits(self) -> int:
        return self.capacity_bits if self.pcm is None else self.num_codewords * self.pcm.k

    @cached_property
    def pilots(self) -> np.ndarray:
        return pilot_values(self.spec, self.pilot_seed)


@dataclass(frozen=True, eq=False)
class TxFrame:
    info: np.ndarray        # (info_bits,)
    codewords: np.ndarray   # (num_codewords, n) or (0, 0) in bypass mode
    stream: np.ndarray      # (capacity_bits,) bits as placed on the grid
    grid: ResourceGrid


def transmit(info_bits, layout: FrameLayout, rng: np.random.Generator) -> TxFrame:
    u = np.asarray(info_bits, dtype=np.uint8)
    if u.shape != (layout.info_bits,):
        raise ValueError(f"frame takes {layout.info_bits} information bits, got {u.shape}")
    if layout.pcm is None:
        cws = np.zeros((0, 0), dtype=np.uint8)
        stream = u
    else:
        G = layout.pcm.generator
        cws = fec.encode(u.reshape(layout.num_codewords, G.k), G)
        filler = rng.integers(0, 2, layout.filler_bits, dtype=np.uint8)
        stream = np.concatenate([cws.reshape(-1), filler])
    grid = grid_map(map_bits(stream, layout.const), layout.pilots, layout.spec)
    return TxFrame(u, cws, stream, grid)


def random_frame(layout: FrameLayout, rng: np.random.Generator) -> TxFrame:
    return transmit(rng.integers(0, 2, layout.info_bits, dtype=np.uint8), layout, rng)


def codeword_llrs(llr_stream: np.ndarray, layout: FrameLayout) -> np.ndarray:
    """Cut a frame's LLR stream (..., capacity_bits) into (..., num_codewords, n)."""
    n = layout.pcm.n
    return llr_stream[..., : layout.coded_bits].reshape(
        llr_stream.shape[:-1] + (layout.num_codewords, n))
