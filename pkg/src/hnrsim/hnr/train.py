"""Three-stage H-NR training.

1. transformer + LLR head, AdamW, BCE against the transmitted coded bits
   (BP on the transformer LLRs is only used to report validation BER);
2. transformer frozen, GNN decoder trained with Adam on codeword bits over
   a three-phase learning-rate schedule;
3. everything fine-tuned jointly with Adam on information-bit BCE.

Sample budgets are the full-scale sample counts times ``scale``; one sample is
one frame.  Frames are drawn online from seeds derived from the master seed,
so a (config, seed) pair fixes every number produced here.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from .. import fec
from ..channel import ChannelSpec, apply, realize
from ..diffcore import Adam, AdamW, Tensor
from ..link import FrameLayout, codeword_llrs, random_frame
from ..seeding import derive_seed
from ..snr import noise_var_from_snr
from .model import (HnrConfig, Params, TannerGraph, build_tanner, data_token_index,
                    featurize, gnn_logits, transformer_forward)

log = logging.getLogger(__name__)

STAGE1_SAMPLES = 12_000_000
STAGE2_SAMPLES = (4_000_000, 40_000_000, 40_000_000)
STAGE2_LRS = (5e-4, 1e-4, 1e-5)
STAGE3_SAMPLES = 1_000_000
STAGE1_LR = 1e-4
STAGE3_LR = 1e-5


@dataclass
class TrainSetup:
    layout: FrameLayout
    channel: ChannelSpec
    cfg: HnrConfig
    seed: int = 0
    scale: float = 1e-3
    batch_size: int = 32
    snr_min: float = 0.0
    snr_max: float = 12.0
    snr_mode: str = "esn0"
    val_frames: int = 64
    val_every: int = 100
    stage1_lr: float = STAGE1_LR
    stage1_weight_decay: float = 1e-2
    stage2_lrs: tuple[float, ...] = STAGE2_LRS
    stage3_lr: float = STAGE3_LR

    @property
    def graph(self) -> TannerGraph:
        return build_tanner(self.layout.pcm)

    def steps(self, samples: int) -> int:
        return max(1, math.ceil(samples * self.scale / self.batch_size))

    def noise_var(self, snr_db):
        return noise_var_from_snr(snr_db, self.snr_mode, self.layout)


@dataclass
class Batch:
    tokens: np.ndarray      # (B, T, F)
    noise_var: np.ndarray   # (B,)
    stream: np.ndarray      # (B, capacity_bits)
    codewords: np.ndarray   # (B, num_codewords, n)
    info: np.ndarray        # (B, info_bits)


def sample_batch(setup: TrainSetup, seeds, snr_db=None) -> Batch:
    """Simulate one frame per seed.  SNR is drawn from the training range
    unless given."""
    lay = setup.layout
    grids, nvs, streams, cws, infos = [], [], [], [], []
    for s in seeds:
        rng = np.random.default_rng(s)
        snr = rng.uniform(setup.snr_min, setup.snr_max) if snr_db is None else snr_db
        nv = setup.noise_var(snr)
        frame = random_frame(lay, rng)
        real = realize(setup.channel, lay.spec, int(rng.integers(2 ** 63)), nv)
        rx = apply(frame.grid, real, int(rng.integers(2 ** 63)))
        grids.append(rx.values)
        nvs.append(nv)
        streams.append(frame.stream)
        cws.append(frame.codewords)
        infos.append(frame.info)
    nvs = np.array(nvs)
    tokens = featurize(np.stack(grids), nvs, lay.spec, lay.pilots, setup.cfg.pilot_tokens)
    return Batch(tokens, nvs, np.stack(streams), np.stack(cws), np.stack(infos))


def bce_with_logits(logits: Tensor, bits) -> Tensor:
    """Mean binary cross-entropy; ``logits`` are log P(1)/P(0)."""
    b = np.asarray(bits, dtype=np.float64)
    ll = b * dc.log_sigmoid(logits) + (1.0 - b) * dc.log_sigmoid(-logits)
    return -ll.mean()


def _subset(params: Params, prefix: str) -> Params:
    return {k: v for k, v in params.items() if k.startswith(prefix)}


def transformer_llrs(batch: Batch, params: Params, setup: TrainSetup) -> Tensor:
    idx = data_token_index(setup.layout.spec, setup.cfg.pilot_tokens)
    return transformer_forward(batch.tokens, params, setup.cfg, idx)


def full_logits(batch: Batch, params: Params, setup: TrainSetup, graph: TannerGraph) -> Tensor:
    """GNN bit-1 logits for every codeword of the batch, shape (B, ncw, n)."""
    lay = setup.layout
    llr = transformer_llrs(batch, params, setup)
    B = llr.shape[0]
    cw = llr[:, : lay.coded_bits].reshape(B * lay.num_codewords, lay.pcm.n)
    out = gnn_logits(cw, graph, params, setup.cfg)
    return out.reshape(B, lay.num_codewords, lay.pcm.n)


def _seeds(setup: TrainSetup, tag: str, step: int) -> list[int]:
    return [derive_seed(setup.seed, tag, step, i) for i in range(setup.batch_size)]


def validation_batch(setup: TrainSetup) -> Batch:
    seeds = [derive_seed(setup.seed, "val", i) for i in range(setup.val_frames)]
    return sample_batch(setup, seeds)


@dataclass
class StageResult:
    params: Params
    optimizer: Adam
    metrics: list[dict] = field(default_factory=list)


def _row(stage, step, loss, lr, val_ber=None, val_bce=None) -> dict:
    return {"stage": stage, "step": step, "loss": loss, "lr": lr,
            "val_ber": "" if val_ber is None else val_ber,
            "val_bce": "" if val_bce is None else val_bce}


def _guard(loss: Tensor, stage: int, step: int) -> float:
    val = float(loss.data)
    if not math.isfinite(val):
        raise FloatingPointError(f"stage {stage} diverged at step {step}")
    return val


# ---------------------------------------------------------------- stage 1

def stage1_val_ber(setup: TrainSetup, params: Params, val: Batch) -> float:
    with dc.no_grad():
        llr = transformer_llrs(val, params, setup).data
    cw = codeword_llrs(llr, setup.layout)
    hard, _, _ = fec.bp_decode(cw.reshape(-1, setup.layout.pcm.n), setup.layout.pcm)
    return float(np.mean(hard != val.codewords.reshape(hard.shape)))


def train_stage1(setup: TrainSetup, params: Params, steps: int | None = None) -> StageResult:
    steps = setup.steps(STAGE1_SAMPLES) if steps is None else steps
    tf = _subset(params, "tf.")
    opt = AdamW(tf, lr=setup.stage1_lr, weight_decay=setup.stage1_weight_decay)
    val = validation_batch(setup)
    res = StageResult(params, opt)
    for step in range(steps):
        batch = sample_batch(setup, _seeds(setup, "s1", step))
        loss = bce_with_logits(-transformer_llrs(batch, params, setup), batch.stream)
        lv = _guard(loss, 1, step)
        opt.step(dc.backward(loss, tf))
        vb = None
        if (step + 1) % setup.val_every == 0 or step == steps - 1 or step == 0:
            vb = stage1_val_ber(setup, params, val)
            log.info("stage1 step %d loss %.4f val_ber %.4f", step, lv, vb)
        res.metrics.append(_row(1, step, lv, opt.lr, val_ber=vb))
    return res


# ---------------------------------------------------------------- stage 2

def stage2_schedule(setup: TrainSetup) -> list[tuple[int, float]]:
    """(first step, learning rate) for each phase."""
    out, start = [], 0
    for samples, lr in zip(STAGE2_SAMPLES, setup.stage2_lrs):
        out.append((start, lr))
        start += setup.steps(samples)
    return out


def gnn_validation(setup: TrainSetup, params: Params, val: Batch, graph: TannerGraph,
                   target: str = "codeword") -> tuple[float, float]:
    """(BER, BCE) of the full model on the validation frames."""
    with dc.no_grad():
        logits = full_logits(val, params, setup, graph)
        bits, logits = _targets(setup, val, logits, target)
        bce = float(bce_with_logits(logits, bits).data)
    return float(np.mean((logits.data > 0) != bits.astype(bool))), bce


def _targets(setup, batch, logits, target):
    if target == "codeword":
        return batch.codewords, logits
    G = setup.layout.pcm.generator
    return (batch.info.reshape(batch.info.shape[0], setup.layout.num_codewords, G.k),
            dc.take(logits, G.info_positions, axis=-1))


def train_stage2(setup: TrainSetup, params: Params, steps: int | None = None) -> StageResult:
    graph = setup.graph
    gnn = _subset(params, "gnn.")
    opt = Adam(gnn, lr=setup.stage2_lrs[0])
    sched = stage2_schedule(setup)
    total = steps if steps is not None else sum(setup.steps(s) for s in STAGE2_SAMPLES)
    val = validation_batch(setup)
    res = StageResult(params, opt)
    for step in range(total):
        for start, lr in sched:
            if step >= start:
                opt.lr = lr
        batch = sample_batch(setup, _seeds(setup, "s2", step))
        with dc.no_grad():
            llr = transformer_llrs(batch, params, setup).data
        B = llr.shape[0]
        cw = codeword_llrs(llr, setup.layout).reshape(-1, setup.layout.pcm.n)
        logits = gnn_logits(cw, graph, params, setup.cfg)
        loss = bce_with_logits(logits, batch.codewords.reshape(B * setup.layout.num_codewords, -1))
        lv = _guard(loss, 2, step)
        opt.step(dc.backward(loss, gnn))
        vb = vbce = None
        if (step + 1) % setup.val_every == 0 or step == total - 1 or step == 0:
            vb, vbce = gnn_validation(setup, params, val, graph)
            log.info("stage2 step %d loss %.4f val_ber %.4f", step, lv, vb)
        res.metrics.append(_row(2, step, lv, opt.lr, vb, vbce))
    return res


# ---------------------------------------------------------------- stage 3

def info_validation_bce(setup: TrainSetup, params: Params, val: Batch, graph) -> tuple[float, float]:
    return gnn_validation(setup, params, val, graph, target="info")


def train_stage3(setup: TrainSetup, params: Params, steps: int | None = None) -> StageResult:
    """Joint fine-tuning on information-bit BCE.

    Parameters are snapshotted whenever the held-out validation BCE improves
    and the best snapshot (possibly the starting point) is returned.
    """
    graph = setup.graph
    steps = setup.steps(STAGE3_SAMPLES) if steps is None else steps
    opt = Adam(params, lr=setup.stage3_lr)
    val = validation_batch(setup)
    ber0, best = info_validation_bce(setup, params, val, graph)
    best_params = {k: v.data for k, v in params.items()}
    res = StageResult(params, opt)
    res.metrics.append(_row(3, -1, "", opt.lr, ber0, best))
    for step in range(steps):
        batch = sample_batch(setup, _seeds(setup, "s3", step))
        logits = full_logits(batch, params, setup, graph)
        bits, sel = _targets(setup, batch, logits, "info")
        loss = bce_with_logits(sel, bits)
        lv = _guard(loss, 3, step)
        opt.step(dc.backward(loss, params))
        vb = vbce = None
        if (step + 1) % setup.val_every == 0 or step == steps - 1:
            vb, vbce = info_validation_bce(setup, params, val, graph)
            if vbce < best:
                best = vbce
                best_params = {k: v.data for k, v in params.items()}
            log.info("stage3 step %d loss %.4f val_bce %.5f", step, lv, vbce)
        res.metrics.append(_row(3, step, lv, opt.lr, vb, vbce))
    for k, arr in best_params.items():
        params[k].data = arr
    return res


# -------------------------------------------------------------- inference

def hnr_llrs(received: np.ndarray, noise_var, setup_or_layout, params: Params,
             cfg: HnrConfig) -> np.ndarray:
    lay = setup_or_layout.layout if isinstance(setup_or_layout, TrainSetup) else setup_or_layout
    toks = featurize(received, noise_var, lay.spec, lay.pilots, cfg.pilot_tokens)
    idx = data_token_index(lay.spec, cfg.pilot_tokens)
    with dc.no_grad():
        return transformer_forward(toks, params, cfg, idx).data
