"""Run the three training stages from an experiment config and persist
checkpoints (``stage{1,2,3}.hnr``) plus a metrics CSV under ``cfg.out``."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..diffcore import Adam, Tensor
from ..hnr import train
from ..hnr.model import init_params, param_count_formula
from ..hnr.receiver import layout_fingerprint
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .sweep import write_atomic

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("stage", "step", "loss", "lr", "val_ber", "val_bce")
METRICS_FILE = "train_metrics.csv"


def make_setup(cfg: ExperimentConfig) -> train.TrainSetup:
    return train.TrainSetup(layout=cfg.layout(), channel=cfg.channel, cfg=cfg.hnr, seed=cfg.seed,
                            scale=cfg.scale, batch_size=cfg.batch_size,
                            snr_min=cfg.train_snr_min, snr_max=cfg.train_snr_max,
                            snr_mode=cfg.snr_mode, val_frames=cfg.val_frames,
                            val_every=cfg.val_every)


def checkpoint_name(stage: int) -> str:
    return f"stage{stage}.hnr"


def _metadata(cfg: ExperimentConfig, setup: train.TrainSetup, stage: int,
              opt: Adam | None) -> dict:
    lay = setup.layout
    meta = {"stage": stage, "seed": cfg.seed, "scale": cfg.scale, "hnr": asdict(cfg.hnr),
            "grid": lay.spec.as_dict(), "constellation": lay.const.name,
            "code": lay.pcm.digest, "n": lay.pcm.n, "num_rx": cfg.channel.num_rx,
            "param_count": param_count_formula(cfg.hnr, cfg.channel.num_rx,
                                               lay.const.bits_per_symbol)}
    if opt is not None:
        meta["optimizer"] = {"kind": opt.kind, "step_count": opt.step_count, "lr": opt.lr,
                             "betas": [opt.beta1, opt.beta2], "eps": opt.eps,
                             "weight_decay": opt.weight_decay}
    return meta


def make_checkpoint(cfg: ExperimentConfig, setup: train.TrainSetup, params, stage: int,
                    opt: Adam | None = None) -> Checkpoint:
    fp = layout_fingerprint(cfg.hnr, setup.layout, cfg.channel.num_rx)
    arrays = {k: np.array(v.data) for k, v in params.items()}
    opt_arrays = {} if opt is None else {k: np.array(v) for k, v in opt.state_arrays().items()}
    return Checkpoint(fp, _metadata(cfg, setup, stage, opt), arrays, opt_arrays)


def initial_checkpoint(cfg: ExperimentConfig) -> Checkpoint:
    """The untrained network for ``cfg.seed`` (stage 0)."""
    setup = make_setup(cfg)
    params = init_params(cfg.hnr, cfg.channel.num_rx, setup.layout.const.bits_per_symbol,
                         cfg.seed)
    return make_checkpoint(cfg, setup, params, 0)


def format_metrics(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\r\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def _append_metrics(path: Path, rows: list[dict]) -> None:
    old = []
    if path.exists():
        with open(path, newline="") as fh:
            old = list(csv.DictReader(fh))
    stages = {str(r["stage"]) for r in rows}
    kept = [r for r in old if r["stage"] not in stages]
    write_atomic(path, format_metrics(kept + rows))


def _params_from(ckpt: Checkpoint) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True) for k, v in ckpt.params.items()}


def run_stage(cfg: ExperimentConfig, stage: int, start: Checkpoint | None = None,
              steps: int | None = None) -> Checkpoint:
    """Train one stage and write its checkpoint and metrics rows.

    Stage 1 starts from the seeded initialization; stages 2 and 3 start from
    ``start`` or, if omitted, the previous stage's checkpoint in ``cfg.out``.
    """
    setup = make_setup(cfg)
    out = Path(cfg.out)
    if stage == 1:
        params = init_params(cfg.hnr, cfg.channel.num_rx, setup.layout.const.bits_per_symbol,
                             cfg.seed)
    else:
        if start is None:
            start = load_checkpoint(out / checkpoint_name(stage - 1))
        start.check_fingerprint(layout_fingerprint(cfg.hnr, setup.layout, cfg.channel.num_rx))
        params = _params_from(start)
    fn = {1: train.train_stage1, 2: train.train_stage2, 3: train.train_stage3}[stage]
    log.info("stage %d: training", stage)
    res = fn(setup, params, steps)
    ckpt = make_checkpoint(cfg, setup, res.params, stage, res.optimizer)
    save_checkpoint(ckpt, out / checkpoint_name(stage))
    _append_metrics(out / METRICS_FILE, res.metrics)
    return ckpt


def run_all(cfg: ExperimentConfig) -> Checkpoint:
    ckpt = None
    for stage in (1, 2, 3):
        ckpt = run_stage(cfg, stage, ckpt)
    return ckpt
