"""Binary LDPC codes: alist I/O, PEG construction, systematic encoding and
sum-product belief propagation.

LLR sign convention used everywhere in the package: a positive LLR means bit
0 is the more likely value.
"""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

CHECK_CLIP = 20.0


class AlistError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    n: int
    rows: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        for r, row in enumerate(self.rows):
            if len(set(row)) != len(row):
                raise ValueError(f"duplicate column index in row {r}")
            if any(c < 0 or c >= self.n for c in row):
                raise ValueError(f"column index out of range in row {r}")

    @property
    def m(self) -> int:
        return len(self.rows)

    @classmethod
    def from_dense(cls, H) -> "ParityCheckMatrix":
        H = np.asarray(H, dtype=np.uint8) & 1
        return cls(H.shape[1], tuple(tuple(int(c) for c in np.flatnonzero(r)) for r in H))

    @cached_property
    def dense(self) -> np.ndarray:
        H = np.zeros((self.m, self.n), dtype=np.uint8)
        for r, row in enumerate(self.rows):
            H[r, list(row)] = 1
        H.setflags(write=False)
        return H

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(check index, variable index) per nonzero, row-major order."""
        chk = np.array([r for r, row in enumerate(self.rows) for _ in row], dtype=np.intp)
        var = np.array([c for row in self.rows for c in sorted(row)], dtype=np.intp)
        return chk, var

    @property
    def row_degrees(self) -> list[int]:
        return [len(r) for r in self.rows]

    @property
    def col_degrees(self) -> list[int]:
        return self.dense.sum(axis=0).astype(int).tolist()

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(np.packbits(self.dense).tobytes()
                              + f"{self.m}x{self.n}".encode()).hexdigest()[:16]

    @cached_property
    def generator(self) -> "GeneratorMatrix":
        return GeneratorMatrix.from_parity(self)

    @property
    def k(self) -> int:
        return self.generator.k


def hamming74() -> ParityCheckMatrix:
    """Hamming(7,4) with column j (1-based) equal to the binary expansion of j."""
    H = np.array([[(j >> b) & 1 for j in range(1, 8)] for b in (2, 1, 0)], dtype=np.uint8)
    return ParityCheckMatrix.from_dense(H)


# ------------------------------------------------------------------ alist

def load_alist(text: str) -> ParityCheckMatrix:
    """Parse MacKay's alist format (1-based indices; zero padding allowed in
    the index lists)."""
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    lines = [(no, toks) for no, toks in lines if toks]
    if not lines:
        raise AlistError("empty alist input")
    it = iter(lines)

    def ints(expected: int | None = None):
        try:
            no, toks = next(it)
        except StopIteration:
            raise AlistError("unexpected end of input", len(text.splitlines())) from None
        try:
            vals = [int(t) for t in toks]
        except ValueError:
            raise AlistError("non-integer token", no) from None
        if expected is not None and len(vals) != expected:
            raise AlistError(f"expected {expected} values, got {len(vals)}", no)
        return no, vals

    no, (n, m) = ints(2)
    if n <= 0 or m <= 0:
        raise AlistError("matrix dimensions must be positive", no)
    ints(2)  # max degrees, implied by the lists below
    no_cd, col_deg = ints(n)
    no_rd, row_deg = ints(m)
    cols: list[list[int]] = []
    for j in range(n):
        no, vals = ints()
        idx = [v for v in vals if v != 0]
        if len(idx) != col_deg[j]:
            raise AlistError(f"column {j + 1} lists {len(idx)} entries, degree says {col_deg[j]}", no)
        for v in idx:
            if v < 1 or v > m:
                raise AlistError(f"row index {v} out of range 1..{m}", no)
        cols.append([v - 1 for v in idx])
    rows: list[list[int]] = []
    for i in range(m):
        no, vals = ints()
        idx = [v for v in vals if v != 0]
        if len(idx) != row_deg[i]:
            raise AlistError(f"row {i + 1} lists {len(idx)} entries, degree says {row_deg[i]}", no)
        for v in idx:
            if v < 1 or v > n:
                raise AlistError(f"column index {v} out of range 1..{n}", no)
        if len(set(idx)) != len(idx):
            raise AlistError(f"duplicate index in row {i + 1}", no)
        rows.append(sorted(v - 1 for v in idx))
    from_cols = sorted((r, j) for j, c in enumerate(cols) for r in c)
    from_rows = sorted((i, j) for i, r in enumerate(rows) for j in r)
    if from_cols != from_rows:
        raise AlistError("column and row lists describe different matrices")
    return ParityCheckMatrix(n, tuple(tuple(r) for r in rows))


def dump_alist(H: ParityCheckMatrix) -> str:
    cols: list[list[int]] = [[] for _ in range(H.n)]
    for i, row in enumerate(H.rows):
        for j in row:
            cols[j].append(i)
    col_deg = [len(c) for c in cols]
    row_deg = H.row_degrees
    out = [f"{H.n} {H.m}", f"{max(col_deg)} {max(row_deg)}",
           " ".join(map(str, col_deg)), " ".join(map(str, row_deg))]
    out += [" ".join(str(i + 1) for i in sorted(c)) for c in cols]
    out += [" ".join(str(j + 1) for j in sorted(r)) for r in H.rows]
    return "\n".join(out) + "\n"


# --------------------------------------------------------- PEG construction

def build_regular_ldpc(n: int, dv: int, dc: int, seed: int = 0) -> ParityCheckMatrix:
    """(dv, dc)-regular parity-check matrix by progressive edge growth.

    Each new edge of a variable node goes to a check node outside the
    node's current BFS neighbourhood when one exists (avoiding short cycles),
    lowest current degree first, ties broken by the seeded RNG.
    """
    if dv < 2 or dc < 2:
        raise ValueError("dv and dc must both be at least 2")
    if (n * dv) % dc:
        raise ValueError(f"n*dv = {n * dv} is not divisible by dc = {dc}")
    m = n * dv // dc
    if dv > m:
        raise ValueError(f"dv = {dv} exceeds the number of checks m = {m}")
    return _peg(n, dv, dc, seed)


@lru_cache(maxsize=16)
def _peg(n: int, dv: int, dc: int, seed: int) -> ParityCheckMatrix:
    m = n * dv // dc
    rng = np.random.default_rng(seed)
    for _attempt in range(50):
        pcm = _peg_attempt(n, m, dv, dc, rng)
        if pcm is not None:
            return pcm
    raise ValueError(f"could not place a ({dv},{dc})-regular code with n={n}")


def _peg_attempt(n, m, dv, dc, rng):
    var_adj: list[list[int]] = [[] for _ in range(n)]
    chk_adj: list[list[int]] = [[] for _ in range(m)]
    chk_deg = np.zeros(m, dtype=int)
    for j in range(n):
        for e in range(dv):
            open_ = chk_deg < dc
            open_[var_adj[j]] = False
            if not open_.any():
                return None
            if e == 0:
                cand = np.flatnonzero(open_)
            else:
                reached = _bfs_checks(j, var_adj, chk_adj, m)
                far = open_ & ~reached[-1]
                if far.any():
                    cand = np.flatnonzero(far)
                else:
                    # everything is reachable: take the checks reached last
                    cand = np.array([], dtype=int)
                    for depth in range(len(reached) - 1, 0, -1):
                        newest = open_ & reached[depth] & ~reached[depth - 1]
                        if newest.any():
                            cand = np.flatnonzero(newest)
                            break
                    if cand.size == 0:
                        cand = np.flatnonzero(open_)
            degs = chk_deg[cand]
            cand = cand[degs == degs.min()]
            c = int(cand[rng.integers(cand.size)])
            var_adj[j].append(c)
            chk_adj[c].append(j)
            chk_deg[c] += 1
    rows = tuple(tuple(sorted(r)) for r in chk_adj)
    return ParityCheckMatrix(n, rows)


def _bfs_checks(v0, var_adj, chk_adj, m):
    """Cumulative check-node reach sets by depth from variable v0."""
    seen_c = np.zeros(m, dtype=bool)
    seen_v = {v0}
    frontier = [v0]
    levels = []
    while frontier:
        new_c = []
        for v in frontier:
            for c in var_adj[v]:
                if not seen_c[c]:
                    seen_c[c] = True
                    new_c.append(c)
        if not new_c:
            break
        levels.append(seen_c.copy())
        frontier = []
        for c in new_c:
            for v in chk_adj[c]:
                if v not in seen_v:
                    seen_v.add(v)
                    frontier.append(v)
    return levels or [seen_c.copy()]


# ------------------------------------------------------------------ GF(2)

def gf2_rank(M) -> int:
    A = np.array(M, dtype=np.uint8) & 1
    rank = 0
    rows, cols = A.shape
    for c in range(cols):
        piv = np.flatnonzero(A[rank:, c])
        if piv.size == 0:
            continue
        p = rank + piv[0]
        A[[rank, p]] = A[[p, rank]]
        hit = np.flatnonzero(A[:, c])
        hit = hit[hit != rank]
        A[hit] ^= A[rank]
        rank += 1
        if rank == rows:
            break
    return rank


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Systematic encoder derived from H by GF(2) elimination.

    Information bits sit at `info_positions`; parity bit `parity_positions[r]`
    equals parity[r] . u (mod 2).
    """

    n: int
    info_positions: np.ndarray
    parity_positions: np.ndarray
    parity: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return int(self.info_positions.size)

    @classmethod
    def from_parity(cls, H: ParityCheckMatrix) -> "GeneratorMatrix":
        A = H.dense.copy()
        pivots = []
        r = 0
        for c in range(H.n):
            piv = np.flatnonzero(A[r:, c])
            if piv.size == 0:
                continue
            p = r + piv[0]
            A[[r, p]] = A[[p, r]]
            hit = np.flatnonzero(A[:, c])
            hit = hit[hit != r]
            A[hit] ^= A[r]
            pivots.append(c)
            r += 1
            if r == A.shape[0]:
                break
        pivots = np.array(pivots, dtype=np.intp)
        info = np.setdiff1d(np.arange(H.n), pivots)
        parity = A[: len(pivots)][:, info].copy()
        return cls(H.n, info, pivots, parity)

    def dense(self) -> np.ndarray:
        """k x n generator matrix G with G H^T = 0."""
        G = np.zeros((self.k, self.n), dtype=np.uint8)
        G[np.arange(self.k), self.info_positions] = 1
        G[:, self.parity_positions] = self.parity.T
        return G


def encode(info_bits, G: GeneratorMatrix) -> np.ndarray:
    """Systematic encoding; accepts a single word (k,) or a batch (B, k)."""
    u = np.asarray(info_bits, dtype=np.uint8)
    if u.shape[-1] != G.k:
        raise ValueError(f"expected {G.k} information bits, got {u.shape[-1]}")
    c = np.zeros(u.shape[:-1] + (G.n,), dtype=np.uint8)
    c[..., G.info_positions] = u
    c[..., G.parity_positions] = (u.astype(np.int64) @ G.parity.T.astype(np.int64)) & 1
    return c


def extract_info(codeword, G: GeneratorMatrix) -> np.ndarray:
    return np.asarray(codeword)[..., G.info_positions]


def syndrome(bits, H: ParityCheckMatrix) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64)
    if b.shape[-1] != H.n:
        raise ValueError(f"expected {H.n} bits, got {b.shape[-1]}")
    return ((b @ H.dense.T.astype(np.int64)) & 1).astype(np.uint8)


# ------------------------------------------------------------ BP decoding

class _DecoderLayout:
    """Padded check-view / variable-view index tables for one code."""

    def __init__(self, H: ParityCheckMatrix):
        chk, var = H.edges
        self.n, self.m = H.n, H.m
        self.num_edges = chk.size
        self.edge_var = var
        dc_max = max(H.row_degrees)
        self.cview = np.full((H.m, dc_max), -1, dtype=np.intp)
        pos = 0
        for r, row in enumerate(H.rows):
            self.cview[r, : len(row)] = np.arange(pos, pos + len(row))
            pos += len(row)
        self.cmask = self.cview >= 0


@lru_cache(maxsize=32)
def _layout(H: ParityCheckMatrix) -> _DecoderLayout:
    return _DecoderLayout(H)


def _leave_one_out(x: np.ndarray, op, unit: float) -> np.ndarray:
    """For every slot along the last axis, combine all *other* slots with `op`."""
    B, m, d = x.shape
    pre = np.full((B, m, d + 1), unit)
    suf = np.full((B, m, d + 1), unit)
    for i in range(d):
        pre[:, :, i + 1] = op(pre[:, :, i], x[:, :, i])
        suf[:, :, d - 1 - i] = op(suf[:, :, d - i], x[:, :, d - 1 - i])
    return op(pre[:, :, :d], suf[:, :, 1:])


def bp_decode(llrs, H: ParityCheckMatrix, max_iters: int = 10, min_sum: bool = False,
              return_llrs: bool = False):
    """Flooding sum-product decoding in the LLR domain.

    Returns (hard bits, success flags, iterations used); batched inputs of
    shape (B, n) give batched outputs.  A frame stops as soon as its hard
    decision has zero syndrome, so a frame that is already valid uses zero
    iterations.  With ``return_llrs`` the a-posteriori LLRs are appended.
    """
    L = np.asarray(llrs, dtype=np.float64)
    single = L.ndim == 1
    L = np.atleast_2d(L)
    if L.shape[-1] != H.n:
        raise ValueError(f"expected {H.n} LLRs, got {L.shape[-1]}")
    lay = _layout(H)
    B = L.shape[0]
    hard = (L < 0).astype(np.uint8)
    done = ~syndrome(hard, H).any(axis=1)
    iters = np.zeros(B, dtype=int)
    post_all = L.copy()
    c2v = np.zeros((B, lay.num_edges))
    safe_idx = np.where(lay.cmask, lay.cview, 0)
    for it in range(1, max_iters + 1):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        La = L[act]
        total = La.copy()
        np.add.at(total.T, lay.edge_var, c2v[act].T)
        v2c = total[:, lay.edge_var] - c2v[act]
        vc = v2c[:, safe_idx]
        if min_sum:
            sgn = np.where(lay.cmask, np.where(vc < 0, -1.0, 1.0), 1.0)
            mag = np.where(lay.cmask, np.abs(vc), np.inf)
            s = _leave_one_out(sgn, np.multiply, 1.0)
            mg = _leave_one_out(mag, np.minimum, np.inf)
            new = s * np.minimum(mg, CHECK_CLIP)
        else:
            t = np.where(lay.cmask, np.tanh(vc / 2.0), 1.0)
            prod = _leave_one_out(t, np.multiply, 1.0)
            prod = np.clip(prod, -np.tanh(CHECK_CLIP / 2), np.tanh(CHECK_CLIP / 2))
            new = 2.0 * np.arctanh(prod)
        msgs = np.zeros((act.size, lay.num_edges))
        msgs[:, lay.cview[lay.cmask]] = new[:, lay.cmask]
        c2v[act] = msgs
        post = La.copy()
        np.add.at(post.T, lay.edge_var, msgs.T)
        post_all[act] = post
        hard[act] = (post < 0).astype(np.uint8)
        iters[act] = it
        done[act] = ~syndrome(hard[act], H).any(axis=1)
    if single:
        out = (hard[0], bool(done[0]), int(iters[0]))
        return out + (post_all[0],) if return_llrs else out
    return (hard, done, iters, post_all) if return_llrs else (hard, done, iters)


def ml_decode(llrs, codebook: np.ndarray) -> np.ndarray:
    """Exhaustive maximum-likelihood decoding over an explicit codebook."""
    L = np.atleast_2d(np.asarray(llrs, dtype=np.float64))
    # log-likelihood of codeword c is sum_i (1 - 2 c_i) L_i / 2 + const
    score = L @ (1.0 - 2.0 * codebook.astype(np.float64)).T
    return codebook[np.argmax(score, axis=1)]


def codebook(G: GeneratorMatrix) -> np.ndarray:
    if G.k > 20:
        raise ValueError("codebook enumeration is limited to k <= 20")
    u = (np.arange(2 ** G.k)[:, None] >> np.arange(G.k)[::-1]) & 1
    return encode(u, G)
