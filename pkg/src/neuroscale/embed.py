"""Preliminary feature encoding: raw patches to the initial C x n x d token grid.

Each t-sample patch is encoded twice: a temporal convolution branch capturing
local waveform shape, and a spectral branch mapping the patch's rFFT magnitude
through a fully connected layer. The halves are concatenated and a factorized
learnable positional encoding (channel table + time table) is added.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .montage import RegionMap
from .params import kaiming, ones, zeros

# Hidden width of the temporal convolution branch; kernels 7 then 5.
CONV_CHANNELS = 8
_KERNEL_1 = 7
_KERNEL_2 = 5


class OddEmbedDim(ValueError):
    pass


@dataclass
class TokenGrid:
    """C x n x d token embeddings plus the channel metadata they were built from."""

    values: Tensor
    region_map: RegionMap
    channel_labels: tuple[str, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def with_values(self, values: Tensor) -> "TokenGrid":
        return replace(self, values=values)


@dataclass
class EmbedParams:
    tconv1_w: Parameter
    tconv1_b: Parameter
    tnorm1_g: Parameter
    tnorm1_b: Parameter
    tconv2_w: Parameter
    tconv2_b: Parameter
    tnorm2_g: Parameter
    tnorm2_b: Parameter
    tproj_w: Parameter
    tproj_b: Parameter
    spec_w: Parameter
    spec_b: Parameter
    chan_table: Parameter
    time_table: Parameter
    patch_len: int
    embed_dim: int


def init_embed_params(
    rng: np.random.Generator,
    patch_len: int,
    embed_dim: int,
    max_channels: int,
    max_segments: int,
) -> EmbedParams:
    if embed_dim % 2 != 0:
        raise OddEmbedDim(f"embedding dimension must be even, got {embed_dim}")
    half = embed_dim // 2
    bins = patch_len // 2 + 1
    c = CONV_CHANNELS
    return EmbedParams(
        tconv1_w=kaiming(rng, (c, 1, _KERNEL_1), fan_in=_KERNEL_1, name="embed.tconv1.w"),
        tconv1_b=zeros((c,), "embed.tconv1.b"),
        tnorm1_g=ones((c,), "embed.tnorm1.g"),
        tnorm1_b=zeros((c,), "embed.tnorm1.b"),
        tconv2_w=kaiming(rng, (c, c, _KERNEL_2), fan_in=c * _KERNEL_2, name="embed.tconv2.w"),
        tconv2_b=zeros((c,), "embed.tconv2.b"),
        tnorm2_g=ones((c,), "embed.tnorm2.g"),
        tnorm2_b=zeros((c,), "embed.tnorm2.b"),
        tproj_w=kaiming(rng, (patch_len * c, half), fan_in=patch_len * c, name="embed.tproj.w"),
        tproj_b=zeros((half,), "embed.tproj.b"),
        spec_w=kaiming(rng, (bins, half), fan_in=bins, name="embed.spec.w"),
        spec_b=zeros((half,), "embed.spec.b"),
        chan_table=zeros((max_channels, embed_dim), "embed.pos.chan"),
        time_table=zeros((max_segments, embed_dim), "embed.pos.time"),
        patch_len=patch_len,
        embed_dim=embed_dim,
    )


def group_norm(x: Tensor, gain: Parameter, bias: Parameter) -> Tensor:
    """Single-group normalization over each patch's (length, channel) activations."""
    return ad.group_norm(x, gain, bias, eps=1e-5)


def positional_encoding(params: EmbedParams, i: int, j: int) -> Tensor:
    """Additive factorized encoding for (segment i, channel j)."""
    time_row = ad.take(params.time_table, [i], axis=0)
    chan_row = ad.take(params.chan_table, [j], axis=0)
    return ad.reshape(chan_row + time_row, (params.embed_dim,))


def encode_patches(
    patches: np.ndarray,
    params: EmbedParams,
    region_map: RegionMap,
    channel_labels: tuple[str, ...] = (),
    masked_segments: np.ndarray | None = None,
    mask_token: Parameter | None = None,
) -> TokenGrid:
    """Encode (C, n, t) patches into the initial token grid.

    When ``masked_segments`` is given, the branch embedding at those segments
    is replaced by the mask token (the zero vector unless a learnable token
    is configured) before the positional encoding is added.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim != 3:
        raise ad.ShapeMismatch("patches must be (C, n, t)")
    C, n, t = patches.shape
    if t != params.patch_len:
        raise ad.ShapeMismatch(f"patch length {t} does not match configured {params.patch_len}")
    if C > params.chan_table.shape[0] or n > params.time_table.shape[0]:
        raise ad.IndexOutOfRange("input exceeds positional table capacity")
    d = params.embed_dim

    # Temporal branch: two same-padded convolutions over the t axis.
    x = Tensor(patches.reshape(C * n, t, 1))
    h = ad.conv1d_grouped(x, params.tconv1_w, params.tconv1_b)
    h = ad.gelu(group_norm(h, params.tnorm1_g, params.tnorm1_b))
    h = ad.conv1d_grouped(h, params.tconv2_w, params.tconv2_b)
    h = ad.gelu(group_norm(h, params.tnorm2_g, params.tnorm2_b))
    h = ad.reshape(h, (C * n, t * CONV_CHANNELS))
    temporal = ad.affine(h, params.tproj_w, params.tproj_b)

    # Spectral branch: fixed rFFT magnitude into a fully connected layer.
    mags = ad.rfft_magnitude(patches, axis=-1).reshape(C * n, t // 2 + 1)
    spectral = ad.affine(Tensor(mags), params.spec_w, params.spec_b)

    emb = ad.reshape(ad.concat([temporal, spectral], axis=1), (C, n, d))

    if masked_segments is not None and len(masked_segments) > 0:
        keep = np.ones((1, n, 1))
        keep[0, np.asarray(masked_segments, dtype=np.intp), 0] = 0.0
        emb = ad.mul(emb, Tensor(keep))
        if mask_token is not None:
            fill = ad.mul(ad.reshape(mask_token, (1, 1, d)), Tensor(1.0 - keep))
            emb = emb + fill

    chan = ad.reshape(ad.take(params.chan_table, np.arange(C), axis=0), (C, 1, d))
    time = ad.reshape(ad.take(params.time_table, np.arange(n), axis=0), (1, n, d))
    return TokenGrid(values=emb + chan + time, region_map=region_map,
                     channel_labels=tuple(channel_labels))
