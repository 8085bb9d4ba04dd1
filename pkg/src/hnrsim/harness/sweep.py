"""Monte Carlo BER/BLER sweeps over SNR.

Every frame's randomness comes from ``derive_seed(seed, "frame", snr, i)``,
independent of the receiver, so sweeps of different receivers with the same
config and seed see identical transmitted bits, channels and noise.
"""
from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..channel import ChannelSpec, apply, realize
from ..diffcore import Tensor
from ..hnr.model import build_tanner
from ..hnr.receiver import hnr_receive, layout_fingerprint
from ..link import FrameLayout, TxFrame, random_frame, transmit
from ..phy import ResourceGrid
from ..rxclassic import MIN_NOISE_VAR, RxResult, baseline_receive, perfect_csi_receive
from ..seeding import derive_seed
from ..snr import noise_var_from_snr
from .checkpoint import Checkpoint, load_checkpoint
from .config import ExperimentConfig

COLUMNS = ("snr_db", "info_ber", "coded_ber", "bler", "frames", "bit_count", "mc_stderr",
           "receiver", "channel", "seed")


@dataclass(frozen=True, eq=False)
class SimFrame:
    tx: TxFrame
    received: ResourceGrid
    H: np.ndarray
    noise_var: float


def simulate_frame(layout: FrameLayout, channel: ChannelSpec, noise_var: float, seed: int,
                   info=None) -> SimFrame:
    """Random (or given) info bits -> encode -> map -> channel -> receive grid."""
    rng = np.random.default_rng(seed)
    tx = random_frame(layout, rng) if info is None else transmit(info, layout, rng)
    real = realize(channel, layout.spec, int(rng.integers(2 ** 63)), noise_var)
    rx = apply(tx.grid, real, int(rng.integers(2 ** 63)))
    return SimFrame(tx, rx, real.H, noise_var)


class Receiver:
    """A named receive chain bound to a layout (and a checkpoint for ``hnr``)."""

    def __init__(self, name: str, cfg: ExperimentConfig, layout: FrameLayout,
                 checkpoint: Checkpoint | None = None):
        self.name, self.cfg, self.layout = name, cfg, layout
        if name == "hnr":
            if checkpoint is None:
                raise ValueError("the hnr receiver needs a checkpoint")
            self.fingerprint = layout_fingerprint(cfg.hnr, layout, cfg.channel.num_rx)
            checkpoint.check_fingerprint(self.fingerprint)
            self.params = {k: Tensor(v) for k, v in checkpoint.params.items()}
            self.graph = build_tanner(layout.pcm)

    def __call__(self, frame: SimFrame) -> RxResult:
        nv = frame.noise_var
        if self.name == "baseline":
            return baseline_receive(frame.received, self.layout.spec, nv, self.layout,
                                    self.cfg.bp_iters)
        if self.name == "perfect_csi":
            return perfect_csi_receive(frame.received, frame.H, nv, self.layout.spec,
                                       self.layout, self.cfg.bp_iters)
        return hnr_receive(frame.received, max(nv, MIN_NOISE_VAR), self.layout, self.params,
                           self.cfg.hnr, self.fingerprint, self.graph)


def make_receiver(cfg: ExperimentConfig, layout: FrameLayout | None = None,
                  checkpoint: Checkpoint | None = None) -> Receiver:
    layout = cfg.layout() if layout is None else layout
    if cfg.receiver == "hnr" and checkpoint is None:
        path = cfg.checkpoint_path()
        if path is None:
            raise ValueError("receiver = hnr needs a checkpoint path")
        checkpoint = load_checkpoint(path)
    return Receiver(cfg.receiver, cfg, layout, checkpoint)


def frame_noise_var(cfg: ExperimentConfig, snr_db: float, layout: FrameLayout) -> float:
    return 0.0 if cfg.noiseless else noise_var_from_snr(snr_db, cfg.snr_mode, layout)


@dataclass
class Tally:
    info_errors: int = 0
    info_bits: int = 0
    coded_errors: int = 0
    coded_bits: int = 0
    block_errors: int = 0
    blocks: int = 0
    frames: int = 0

    def add(self, frame: SimFrame, rx: RxResult, layout: FrameLayout) -> None:
        e = np.count_nonzero(rx.info != frame.tx.info)
        self.info_errors += e
        self.info_bits += rx.info.size
        self.frames += 1
        if layout.pcm is None:
            self.coded_errors += e
            self.coded_bits += rx.info.size
            self.block_errors += int(e > 0)
            self.blocks += 1
        else:
            wrong = rx.codewords != frame.tx.codewords
            self.coded_errors += int(np.count_nonzero(wrong))
            self.coded_bits += wrong.size
            self.block_errors += int(np.count_nonzero(wrong.any(axis=-1)))
            self.blocks += wrong.shape[0]

    def row(self, snr_db: float, receiver: str, channel: str, seed: int) -> dict:
        p = self.info_errors / self.info_bits
        return {"snr_db": snr_db, "info_ber": p, "coded_ber": self.coded_errors / self.coded_bits,
                "bler": self.block_errors / self.blocks, "frames": self.frames,
                "bit_count": self.info_bits, "mc_stderr": math.sqrt(p * (1 - p) / self.info_bits),
                "receiver": receiver, "channel": channel, "seed": seed}


def run_point(cfg: ExperimentConfig, snr_db: float, receiver: Receiver,
              layout: FrameLayout) -> dict:
    nv = frame_noise_var(cfg, snr_db, layout)
    tally = Tally()
    for i in range(cfg.frames):
        frame = simulate_frame(layout, cfg.channel, nv, derive_seed(cfg.seed, "frame", snr_db, i))
        tally.add(frame, receiver(frame), layout)
    return tally.row(snr_db, receiver.name, cfg.channel.model, cfg.seed)


def format_rows(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\r\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def write_atomic(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_sweep(cfg: ExperimentConfig, out_csv: str | os.PathLike | None = None,
              checkpoint: Checkpoint | None = None) -> list[dict]:
    """One row per SNR point, in config order.  With ``out_csv`` the file is
    rewritten atomically after each point, so it always holds whole rows."""
    layout = cfg.layout()
    receiver = make_receiver(cfg, layout, checkpoint)
    rows = []
    for snr in cfg.snr_db:
        rows.append(run_point(cfg, snr, receiver, layout))
        if out_csv is not None:
            write_atomic(out_csv, format_rows(rows))
    return rows


def read_rows(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
