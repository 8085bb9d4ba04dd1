"""End-to-end H-NR inference: receive grid in, information bits out."""
from __future__ import annotations

import numpy as np

from .. import diffcore as dc
from .. import fec
from ..link import FrameLayout, codeword_llrs
from ..rxclassic import RxResult
from .model import (HnrConfig, Params, TannerGraph, build_tanner, data_token_index, featurize,
                    fingerprint, gnn_decode, transformer_forward)


class FingerprintError(ValueError):
    """A checkpoint was built for a different model, grid, constellation or code."""


def layout_fingerprint(cfg: HnrConfig, layout: FrameLayout, num_rx: int) -> str:
    if layout.pcm is None:
        raise ValueError("the H-NR receiver needs a channel code (bypass mode is classical only)")
    return fingerprint(cfg, layout.spec, layout.const.name, num_rx, layout.pcm)


def hnr_receive(received, noise_var, layout: FrameLayout, params: Params, cfg: HnrConfig,
                expected_fingerprint: str | None = None,
                graph: TannerGraph | None = None) -> RxResult:
    """featurize -> transformer -> GNN -> threshold at 0.5 -> systematic info bits.

    ``received`` is one receive grid (A, L, K).  When ``expected_fingerprint``
    is given it must match the fingerprint of (cfg, layout, antenna count).
    """
    y = received.values if hasattr(received, "values") else np.asarray(received)
    num_rx = y.shape[-3]
    fp = layout_fingerprint(cfg, layout, num_rx)
    if expected_fingerprint is not None and expected_fingerprint != fp:
        raise FingerprintError(f"checkpoint fingerprint {expected_fingerprint[:12]} does not "
                               f"match this configuration ({fp[:12]})")
    graph = build_tanner(layout.pcm) if graph is None else graph
    toks = featurize(y, noise_var, layout.spec, layout.pilots, cfg.pilot_tokens)
    idx = data_token_index(layout.spec, cfg.pilot_tokens)
    with dc.no_grad():
        llr = transformer_forward(toks, params, cfg, idx).data[0]
    probs = gnn_decode(codeword_llrs(llr, layout), graph, params, cfg)
    hard = (probs > 0.5).astype(np.uint8)
    ok = ~np.any(fec.syndrome(hard, layout.pcm), axis=-1)
    info = fec.extract_info(hard, layout.pcm.generator).reshape(-1)
    return RxResult(info, hard, llr, ok)
