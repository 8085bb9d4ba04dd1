"""H-NR network: transformer LLR front end and Tanner-graph GNN decoder.

All trainable arrays live in one flat ``dict[str, Tensor]``; names start with
``tf.`` (transformer) or ``gnn.`` (decoder) so training stages can select
or freeze either half.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import diffcore as dc
from ..diffcore import Tensor
from ..fec import ParityCheckMatrix
from ..phy import GridSpec

Params = dict[str, Tensor]


@dataclass(frozen=True)
class HnrConfig:
    num_blocks: int = 5
    num_heads: int = 4
    embed_dim: int = 128
    ffn_dim: int = 128
    gnn_embed_dim: int = 16
    gnn_msg_dim: int = 16
    gnn_hidden: int = 48
    gnn_edge_dim: int = 16
    cn_mlp_layers: int = 3
    mp_iters: int = 12
    pilot_tokens: bool = True

    def __post_init__(self):
        for k, v in asdict(self).items():
            if isinstance(v, bool):
                continue
            if v < 0 or (v == 0 and k != "mp_iters"):
                raise ValueError(f"{k} must be positive, got {v}")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.cn_mlp_layers < 2:
            raise ValueError("check-node MLP needs at least two layers")


def fingerprint(cfg: HnrConfig, spec: GridSpec, const_name: str, num_rx: int,
                pcm: ParityCheckMatrix) -> str:
    """Identity of everything a checkpoint's shapes and semantics depend on."""
    blob = json.dumps({"hnr": asdict(cfg), "grid": spec.as_dict(), "const": const_name,
                       "num_rx": num_rx, "code": pcm.digest}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


# --------------------------------------------------------------- features

def token_positions(spec: GridSpec, pilot_tokens: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """(symbol, subcarrier) of every token, symbol-major."""
    syms = np.arange(spec.num_symbols) if pilot_tokens else spec.data_symbols
    ls = np.repeat(syms, spec.num_usable)
    ks = np.tile(spec.usable_subcarriers, syms.size)
    return ls, ks


def data_token_index(spec: GridSpec, pilot_tokens: bool = True) -> np.ndarray:
    """Token indices of the data REs in data (= bit) order."""
    ls, _ = token_positions(spec, pilot_tokens)
    return np.flatnonzero(np.isin(ls, spec.data_symbols))


def num_features(num_rx: int) -> int:
    return 2 * num_rx + 5


def featurize(received: np.ndarray, noise_var, spec: GridSpec, pilots: np.ndarray,
              pilot_tokens: bool = True) -> np.ndarray:
    """Token features from receive grids of shape (..., A, L, K).

    Per token: Re/Im of each antenna sample, Re/Im of the pilot (zero on data
    REs), log noise variance, and subcarrier/symbol coordinates in [0, 1].
    """
    y = np.asarray(received)
    if y.shape[-2:] != (spec.num_symbols, spec.fft_size):
        raise ValueError(f"receive grid shape {y.shape} does not match the grid spec")
    lead, A = y.shape[:-3], y.shape[-3]
    ls, ks = token_positions(spec, pilot_tokens)
    T = ls.size
    samp = y[..., ls, ks]                     # (..., A, T)
    samp = np.moveaxis(samp, -2, -1)          # (..., T, A)
    pil = np.zeros(T, dtype=np.complex128)
    pmap = {l: i for i, l in enumerate(spec.pilot_symbols)}
    kidx = np.searchsorted(spec.usable_subcarriers, ks)
    for t in range(T):
        if ls[t] in pmap:
            pil[t] = pilots[pmap[ls[t]], kidx[t]]
    nv = np.broadcast_to(np.asarray(noise_var, dtype=np.float64), lead)
    kn = kidx / max(spec.num_usable - 1, 1)
    ln = ls / max(spec.num_symbols - 1, 1)
    feats = np.empty(lead + (T, num_features(A)))
    feats[..., 0:2 * A:2] = samp.real
    feats[..., 1:2 * A:2] = samp.imag
    feats[..., 2 * A] = pil.real
    feats[..., 2 * A + 1] = pil.imag
    feats[..., 2 * A + 2] = np.log(nv)[..., None]
    feats[..., 2 * A + 3] = kn
    feats[..., 2 * A + 4] = ln
    return feats


# ------------------------------------------------------------------ init

def _dense(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out)), np.zeros(fan_out)


def init_transformer(cfg: HnrConfig, num_rx: int, bits_per_symbol: int,
                     rng: np.random.Generator) -> dict[str, np.ndarray]:
    E, F = cfg.embed_dim, cfg.ffn_dim
    p: dict[str, np.ndarray] = {}
    p["tf.in.W"], p["tf.in.b"] = _dense(rng, num_features(num_rx), E)
    for i in range(cfg.num_blocks):
        pre = f"tf.block{i}."
        p[pre + "ln1.g"], p[pre + "ln1.b"] = np.ones(E), np.zeros(E)
        for name in ("q", "k", "v", "o"):
            p[pre + f"{name}.W"], p[pre + f"{name}.b"] = _dense(rng, E, E)
        p[pre + "ln2.g"], p[pre + "ln2.b"] = np.ones(E), np.zeros(E)
        p[pre + "ff1.W"], p[pre + "ff1.b"] = _dense(rng, E, F)
        p[pre + "ff2.W"], p[pre + "ff2.b"] = _dense(rng, F, E)
    p["tf.ln_f.g"], p["tf.ln_f.b"] = np.ones(E), np.zeros(E)
    # zero head: the untrained network emits LLR 0 for every bit
    p["tf.head.W"], p["tf.head.b"] = np.zeros((E, bits_per_symbol)), np.zeros(bits_per_symbol)
    return p


def _mlp_dims(cfg: HnrConfig, fan_in: int, fan_out: int, layers: int) -> list[tuple[int, int]]:
    dims = [fan_in] + [cfg.gnn_hidden] * (layers - 1) + [fan_out]
    return list(zip(dims[:-1], dims[1:]))


def gnn_layout(cfg: HnrConfig) -> dict[str, list[tuple[int, int]]]:
    d, msg, e = cfg.gnn_embed_dim, cfg.gnn_msg_dim, cfg.gnn_edge_dim
    return {
        "edge_vc": _mlp_dims(cfg, 2 * d + e, msg, 2),
        "edge_cv": _mlp_dims(cfg, 2 * d + e, msg, 2),
        "node_v": _mlp_dims(cfg, d + msg + 1, d, 2),
        "node_c": _mlp_dims(cfg, d + msg + 1, d, cfg.cn_mlp_layers),
    }


def init_gnn(cfg: HnrConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, e = cfg.gnn_embed_dim, cfg.gnn_edge_dim
    p: dict[str, np.ndarray] = {}
    p["gnn.llr_in.W"], p["gnn.llr_in.b"] = _dense(rng, 1, d)
    p["gnn.gamma_vc"] = rng.normal(0, 0.1, e)
    p["gnn.gamma_cv"] = rng.normal(0, 0.1, e)
    for net, dims in gnn_layout(cfg).items():
        for j, (a, b) in enumerate(dims):
            p[f"gnn.{net}.{j}.W"], p[f"gnn.{net}.{j}.b"] = _dense(rng, a, b)
    p["gnn.readout.W"], p["gnn.readout.b"] = _dense(rng, d, 1)
    return p


def init_params(cfg: HnrConfig, num_rx: int, bits_per_symbol: int, seed: int) -> Params:
    rng = np.random.default_rng(seed)
    arrays = init_transformer(cfg, num_rx, bits_per_symbol, rng)
    arrays.update(init_gnn(cfg, rng))
    return {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}


def param_count_formula(cfg: HnrConfig, num_rx: int, bits_per_symbol: int) -> dict[str, int]:
    """Closed-form trainable parameter counts (documented in the README)."""
    E, F = cfg.embed_dim, cfg.ffn_dim
    d, msg, e, h = cfg.gnn_embed_dim, cfg.gnn_msg_dim, cfg.gnn_edge_dim, cfg.gnn_hidden
    block = 4 * E + 4 * (E * E + E) + (E * F + F) + (F * E + E)
    tf = (num_features(num_rx) + 1) * E + cfg.num_blocks * block + 2 * E + (E + 1) * bits_per_symbol
    edge = 2 * ((2 * d + e + 1) * h + (h + 1) * msg)
    node_v = (d + msg + 2) * h + (h + 1) * d
    node_c = (d + msg + 2) * h + (cfg.cn_mlp_layers - 2) * (h + 1) * h + (h + 1) * d
    gnn = 2 * d + 2 * e + edge + node_v + node_c + d + 1
    return {"transformer": tf, "gnn": gnn, "total": tf + gnn}


# ----------------------------------------------------------- transformer

def _linear(x: Tensor, params: Params, name: str) -> Tensor:
    return dc.linear(x, params[name + ".W"], params[name + ".b"])


def _attention(h: Tensor, params: Params, pre: str, heads: int, keep: list | None):
    B, T, E = h.shape
    dk = E // heads

    def split(t):
        return t.reshape(B, T, heads, dk).transpose(0, 2, 1, 3)

    q = split(_linear(h, params, pre + "q"))
    k = split(_linear(h, params, pre + "k"))
    v = split(_linear(h, params, pre + "v"))
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dk))
    att = dc.softmax(scores)
    if keep is not None:
        keep.append(att.data)
    ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, E)
    return _linear(ctx, params, pre + "o")


def transformer_forward(tokens, params: Params, cfg: HnrConfig, data_index: np.ndarray,
                        attention_maps: list | None = None) -> Tensor:
    """Per-bit LLRs (B, num_data_re * bps) in codeword bit order.

    ``tokens`` is (B, T, features).  Head outputs are read directly as LLRs:
    positive means bit 0.
    """
    x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    h = _linear(x, params, "tf.in")
    for i in range(cfg.num_blocks):
        pre = f"tf.block{i}."
        try:
            a = dc.layer_norm(h, params[pre + "ln1.g"], params[pre + "ln1.b"])
            h = h + _attention(a, params, pre, cfg.num_heads, attention_maps)
            f = dc.layer_norm(h, params[pre + "ln2.g"], params[pre + "ln2.b"])
            f = _linear(dc.relu(_linear(f, params, pre + "ff1")), params, pre + "ff2")
            h = h + f
        except dc.NonFiniteError as err:
            raise dc.NonFiniteError(f"transformer block {i}: {err.op}", err.node_id) from err
    try:
        h = dc.layer_norm(h, params["tf.ln_f.g"], params["tf.ln_f.b"])
    except dc.NonFiniteError as err:
        raise dc.NonFiniteError(f"transformer final norm: {err.op}", err.node_id) from err
    h = dc.take(h, data_index, axis=1)
    out = _linear(h, params, "tf.head")
    B, N, bps = out.shape
    return out.reshape(B, N * bps)


# ------------------------------------------------------------------- GNN

@dataclass(frozen=True, eq=False)
class TannerGraph:
    num_vn: int
    num_cn: int
    edge_cn: np.ndarray = field(repr=False)
    edge_vn: np.ndarray = field(repr=False)

    @property
    def num_edges(self) -> int:
        return int(self.edge_vn.size)

    def vn_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_vn, minlength=self.num_vn)

    def cn_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_cn, minlength=self.num_cn)


def build_tanner(H: ParityCheckMatrix) -> TannerGraph:
    chk, var = H.edges
    if np.any(np.bincount(var, minlength=H.n) == 0):
        raise ValueError("parity-check matrix has an unconnected variable node")
    if any(len(r) == 0 for r in H.rows):
        raise ValueError("parity-check matrix has an unconnected check node")
    return TannerGraph(H.n, H.m, chk.copy(), var.copy())


def _mlp_tail(x: Tensor, params: Params, net: str, layers: int) -> Tensor:
    """Layers 1.. of an MLP given layer 0's pre-activation output."""
    for j in range(1, layers):
        x = _linear(dc.relu(x), params, f"gnn.{net}.{j}")
    return x


def _edge_messages(src: Tensor, dst: Tensor, gamma: Tensor, src_idx, dst_idx,
                   params: Params, net: str, d: int) -> Tensor:
    """Summed 2-layer edge-MLP messages at the receiving nodes.

    Equal to segment_sum(mlp([src[e], dst[e], gamma])).  The first layer is
    split by input block and applied per node before gathering, and the
    second (linear) layer after summing, so only the ReLU runs per edge.
    """
    W1, b1 = params[f"gnn.{net}.0.W"], params[f"gnn.{net}.0.b"]
    W2, b2 = params[f"gnn.{net}.1.W"], params[f"gnn.{net}.1.b"]
    bias = dc.linear(gamma.reshape(1, -1), W1[2 * d:], b1)
    hid = dc.edge_relu_sum(src @ W1[:d], dst @ W1[d:2 * d], bias, src_idx, dst_idx)
    deg = np.bincount(dst_idx, minlength=dst.shape[0]).astype(np.float64)[:, None, None]
    return hid @ W2 + deg * b2


def _node_update(z: Tensor, agg: Tensor, delta: Tensor, params: Params, net: str,
                 layers: int) -> Tensor:
    x = _linear(dc.concat([z, agg, delta], axis=-1), params, f"gnn.{net}.0")
    return _mlp_tail(x, params, net, layers)


def gnn_logits(llrs, graph: TannerGraph, params: Params, cfg: HnrConfig,
               iters: int | None = None) -> Tensor:
    """Bit-1 logits (B, n) after ``iters`` rounds of VN->CN->VN message passing.

    Per round: VN->CN edge messages, CN update, CN->VN edge messages, VN
    update.  Edge inputs are [sender, receiver, gamma] embeddings; node
    updates see [embedding, summed messages, delta].
    """
    L = llrs if isinstance(llrs, Tensor) else Tensor(llrs)
    if L.ndim == 1:
        L = L.reshape(1, L.shape[0])
    if L.shape[-1] != graph.num_vn:
        raise ValueError(f"expected {graph.num_vn} LLRs, got {L.shape[-1]}")
    iters = cfg.mp_iters if iters is None else iters
    B = L.shape[0]
    d = cfg.gnn_embed_dim
    n_c = len(gnn_layout(cfg)["node_c"])
    # node-major (node, batch, feature) layout keeps gathers contiguous
    delta_v = L.transpose(1, 0).reshape(graph.num_vn, B, 1)
    delta_c = Tensor(np.zeros((graph.num_cn, B, 1)))
    zv = _linear(delta_v, params, "gnn.llr_in")
    zc = Tensor(np.zeros((graph.num_cn, B, d)))
    for _ in range(iters):
        agg_c = _edge_messages(zv, zc, params["gnn.gamma_vc"], graph.edge_vn, graph.edge_cn,
                               params, "edge_vc", d)
        zc = _node_update(zc, agg_c, delta_c, params, "node_c", n_c)
        agg_v = _edge_messages(zc, zv, params["gnn.gamma_cv"], graph.edge_cn, graph.edge_vn,
                               params, "edge_cv", d)
        zv = _node_update(zv, agg_v, delta_v, params, "node_v", 2)
    return _linear(zv, params, "gnn.readout").reshape(graph.num_vn, B).transpose(1, 0)


def gnn_decode(llrs, graph: TannerGraph, params: Params, cfg: HnrConfig,
               iters: int | None = None) -> np.ndarray:
    """Per-bit probability that the bit is 1."""
    with dc.no_grad():
        return dc.sigmoid(gnn_logits(llrs, graph, params, cfg, iters)).data
