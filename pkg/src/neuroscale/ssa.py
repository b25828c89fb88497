"""Structured sparse attention: multi-head self-attention inside cross-window
temporal groups (per channel) and across per-region descriptors, followed by
LN + feed-forward refinement.

Temporal groups collect the tokens sharing a relative position inside
consecutive windows of size w, so attention spans the full recording at a
fraction 1/w of the dense score count. Spatial groups compress each region to
one descriptor (a cycling representative token plus a projected region mean),
so cross-region attention touches R descriptors instead of C channels.
Equal-size groups are stacked into one batched attention call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .embed import TokenGrid
from .montage import RegionMap
from .params import kaiming, ones, zeros


class InvalidWindow(ValueError):
    pass


class EmptyRegion(ValueError):
    pass


@dataclass(frozen=True)
class TemporalGroups:
    """Segment-index lists per relative window position; identical for every channel."""

    window: int
    groups: tuple[tuple[int, ...], ...]

    @property
    def num_segments(self) -> int:
        return sum(len(g) for g in self.groups)


def build_temporal_groups(n: int, w: int) -> TemporalGroups:
    """Group g (1-based) holds segments {g-1, g-1+w, g-1+2w, ...} below n."""
    if not (1 <= w <= n):
        raise InvalidWindow(f"window {w} must satisfy 1 <= w <= {n}")
    groups = tuple(tuple(range(g, n, w)) for g in range(w))
    return TemporalGroups(window=w, groups=groups)


@dataclass
class SpatialGroups:
    """Descriptors for every (group, segment, region), plus the rep channels.

    ``rep_indices[g, r]`` is the channel whose token represents region r in
    group g; ``descriptors`` stacks the groups as (G, n, R, d).
    """

    rep_indices: np.ndarray
    descriptors: Tensor
    num_groups: int


@dataclass
class SsaLayerParams:
    win_q: Parameter
    win_k: Parameter
    win_v: Parameter
    win_o: Parameter
    win_qb: Parameter
    win_vb: Parameter
    win_ob: Parameter
    reg_q: Parameter
    reg_k: Parameter
    reg_v: Parameter
    reg_o: Parameter
    reg_qb: Parameter
    reg_vb: Parameter
    reg_ob: Parameter
    phi: Parameter
    ln_g: Parameter
    ln_b: Parameter
    ffn_w1: Parameter
    ffn_b1: Parameter
    ffn_w2: Parameter
    ffn_b2: Parameter
    heads: int
    dropout: float


def init_ssa_layer(
    rng: np.random.Generator, d: int, heads: int, d_ff: int, dropout: float, prefix: str
) -> SsaLayerParams:
    if d % heads != 0:
        raise ValueError("embedding dimension must divide evenly across heads")

    def lin(name):
        return kaiming(rng, (d, d), fan_in=d, name=f"{prefix}.{name}.w")

    return SsaLayerParams(
        win_q=lin("win_q"), win_k=lin("win_k"), win_v=lin("win_v"), win_o=lin("win_o"),
        win_qb=zeros((d,), f"{prefix}.win_q.b"),
        win_vb=zeros((d,), f"{prefix}.win_v.b"), win_ob=zeros((d,), f"{prefix}.win_o.b"),
        reg_q=lin("reg_q"), reg_k=lin("reg_k"), reg_v=lin("reg_v"), reg_o=lin("reg_o"),
        reg_qb=zeros((d,), f"{prefix}.reg_q.b"),
        reg_vb=zeros((d,), f"{prefix}.reg_v.b"), reg_ob=zeros((d,), f"{prefix}.reg_o.b"),
        phi=kaiming(rng, (d, d), fan_in=d, name=f"{prefix}.phi.w"),
        ln_g=ones((d,), f"{prefix}.ln.g"),
        ln_b=zeros((d,), f"{prefix}.ln.b"),
        ffn_w1=kaiming(rng, (d, d_ff), fan_in=d, name=f"{prefix}.ffn1.w"),
        ffn_b1=zeros((d_ff,), f"{prefix}.ffn1.b"),
        ffn_w2=kaiming(rng, (d_ff, d), fan_in=d_ff, name=f"{prefix}.ffn2.w"),
        ffn_b2=zeros((d,), f"{prefix}.ffn2.b"),
        heads=heads,
        dropout=dropout,
    )


def _mha(
    x: Tensor,
    wq: Parameter, wk: Parameter, wv: Parameter, wo: Parameter,
    bq: Parameter, bv: Parameter, bo: Parameter,
    heads: int,
    rate: float,
    rng: np.random.Generator | None,
    train: bool,
) -> Tensor:
    """Multi-head self-attention over the second-to-last axis of (..., m, d).

    The key projection carries no bias: a shared key offset shifts every
    score in a row equally, which softmax cancels exactly.
    """
    shape = x.shape
    m, d = shape[-2], shape[-1]
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (-1, m, heads, dh)), (0, 2, 1, 3))

    q = split(ad.affine(x, wq, bq))
    k = split(ad.matmul(x, wk))
    v = split(ad.affine(x, wv, bv))
    scores = ad.scale(ad.matmul(q, ad.swap_last(k)), 1.0 / np.sqrt(dh))
    weights = ad.softmax(scores)
    if train and rng is not None:
        weights = ad.dropout(weights, rate, rng, train)
    out = ad.reshape(ad.transpose(ad.matmul(weights, v), (0, 2, 1, 3)), shape)
    return ad.affine(out, wo, bo)


def inter_window_attention(
    grid: TokenGrid,
    tg: TemporalGroups,
    p: SsaLayerParams,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> TokenGrid:
    """Self-attention within each (channel, temporal group) token set, plus residual."""
    x = grid.values
    C, n, d = x.shape
    if tg.num_segments != n:
        raise ad.ShapeMismatch("temporal groups were built for a different segment count")
    # Stack equal-size groups into one attention batch.
    by_size: dict[int, list[tuple[int, ...]]] = {}
    for idx in tg.groups:
        by_size.setdefault(len(idx), []).append(idx)
    pieces = []
    order: list[int] = []
    for size, group_list in by_size.items():
        idx = np.array(group_list, dtype=np.intp)          # (q, size)
        order.extend(int(i) for i in idx.reshape(-1))
        xg = ad.take(x, idx, axis=1)                       # (C, q, size, d)
        att = _mha(xg, p.win_q, p.win_k, p.win_v, p.win_o,
                   p.win_qb, p.win_vb, p.win_ob,
                   p.heads, p.dropout, rng, train)
        pieces.append(ad.reshape(att, (C, len(group_list) * size, d)))
    merged = ad.concat(pieces, axis=1) if len(pieces) > 1 else pieces[0]
    inverse = np.argsort(np.asarray(order))
    attended = ad.take(merged, inverse, axis=1)
    return grid.with_values(attended + x)


def build_spatial_groups(grid: TokenGrid, rm: RegionMap | None, p: SsaLayerParams) -> SpatialGroups:
    """One descriptor per region per group: cycling representative + projected mean.

    The group count equals the largest region size so every channel serves as
    representative in at least one group.
    """
    x = grid.values
    rm = rm if rm is not None else grid.region_map
    if rm.num_regions == 0:
        raise EmptyRegion("region map has no regions")
    channel_lists = rm.channel_lists()
    if any(len(ch) == 0 for ch in channel_lists):
        raise EmptyRegion("region map contains an empty region")
    n, d = x.shape[1], x.shape[2]
    G = rm.max_region_size
    # phi(mean) does not depend on the group; compute it once per region.
    pooled = [
        ad.matmul(ad.mean(ad.take(x, ch, axis=0), axis=0), p.phi)  # (n, d)
        for ch in channel_lists
    ]
    mean_part = ad.concat([ad.reshape(m, (1, n, 1, d)) for m in pooled], axis=2)
    reps = np.array(
        [[ch[g % len(ch)] for ch in channel_lists] for g in range(G)], dtype=np.intp
    )                                                      # (G, R)
    rep_tokens = ad.transpose(ad.take(x, reps, axis=0), (0, 2, 1, 3))  # (G, n, R, d)
    return SpatialGroups(rep_indices=reps, descriptors=rep_tokens + mean_part, num_groups=G)


def inter_region_attention(
    grid: TokenGrid,
    sg: SpatialGroups,
    p: SsaLayerParams,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> TokenGrid:
    """Attention over regional descriptors, written back at representative tokens.

    A channel picks up one update per group in which it represents its
    region; channels never chosen (impossible when the group count is the
    max region size) would keep their residual value.
    """
    x = grid.values
    C, n, d = x.shape
    G, _, R, _ = sg.descriptors.shape
    out = _mha(sg.descriptors, p.reg_q, p.reg_k, p.reg_v, p.reg_o,
               p.reg_qb, p.reg_vb, p.reg_ob,
               p.heads, p.dropout, rng, train)             # (G, n, R, d)
    flat = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (G * R, n, d))
    update = ad.expand_rows(flat, sg.rep_indices.reshape(-1), C)
    return grid.with_values(x + update)


def ffn_refine(
    grid: TokenGrid,
    p: SsaLayerParams,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> TokenGrid:
    """Position-wise FFN on the layer-normalized tokens, with residual."""
    x = grid.values
    h = ad.layer_norm(x, p.ln_g, p.ln_b)
    hidden = ad.gelu(ad.affine(h, p.ffn_w1, p.ffn_b1))
    if train and rng is not None:
        hidden = ad.dropout(hidden, p.dropout, rng, train)
    return grid.with_values(ad.affine(hidden, p.ffn_w2, p.ffn_b2) + x)


def ssa_layer(
    grid: TokenGrid,
    p: SsaLayerParams,
    window: int,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> TokenGrid:
    tg = build_temporal_groups(grid.values.shape[1], window)
    out = inter_window_attention(grid, tg, p, rng, train)
    sg = build_spatial_groups(out, None, p)
    out = inter_region_attention(out, sg, p, rng, train)
    return ffn_refine(out, p, rng, train)
