"""Cross-scale tokenization: multi-kernel convolutions within local temporal
windows and within anatomical regions, with exponentially decaying per-scale
dimension allocation and residual projections.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .embed import TokenGrid
from .montage import RegionMap
from .params import kaiming, zeros


class InsufficientDim(ValueError):
    pass


class ChannelNotInRegion(ValueError):
    pass


@dataclass(frozen=True)
class ScaleSpec:
    """Kernel sizes shared by the temporal and spatial stages, plus per-scale widths."""

    kernel_sizes: tuple[int, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        ks, dims = self.kernel_sizes, self.dims
        if len(ks) != len(dims) or not ks:
            raise ValueError("kernel list and dim list must be non-empty and equal length")
        if any(k % 2 == 0 for k in ks):
            raise ValueError("all kernels must be odd")
        if list(ks) != sorted(set(ks)):
            raise ValueError("kernel sizes must be strictly increasing")
        if any(d < 1 for d in dims):
            raise ValueError("per-scale dims must be positive")
        if list(dims) != sorted(dims, reverse=True):
            raise ValueError("per-scale dims must be non-increasing")

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    @property
    def num_scales(self) -> int:
        return len(self.kernel_sizes)


def allocate_dims(d: int, K: int) -> list[int]:
    """Split d across K scales with weight 1/2^k, leftovers to the smallest kernels.

    Each scale receives the floor of its ideal share; the remaining units are
    handed out one at a time starting from scale 1 so that finer kernels keep
    the larger widths.
    """
    if K < 1:
        raise InsufficientDim("need at least one scale")
    if d < 2 ** K - 1:
        raise InsufficientDim(f"d={d} cannot give every one of {K} scales a positive dim")
    weights = [2.0 ** -(k + 1) for k in range(K)]
    total = sum(weights)
    ideal = [d * w / total for w in weights]
    dims = [int(x) for x in ideal]
    leftover = d - sum(dims)
    for k in range(leftover):
        dims[k % K] += 1
    return dims


def make_scale_spec(d: int, kernel_sizes: tuple[int, ...]) -> ScaleSpec:
    dims = allocate_dims(d, len(kernel_sizes))
    return ScaleSpec(kernel_sizes=tuple(kernel_sizes), dims=tuple(dims))


@dataclass
class CstLayerParams:
    temporal_w: list[Parameter]   # scale k: (d_k, d, s_k)
    temporal_b: list[Parameter]
    spatial_w: list[Parameter]
    spatial_b: list[Parameter]
    proj_t_w: Parameter
    proj_t_b: Parameter
    proj_s_w: Parameter
    proj_s_b: Parameter
    spec: ScaleSpec


def init_cst_layer(rng: np.random.Generator, d: int, spec: ScaleSpec, prefix: str) -> CstLayerParams:
    if spec.total_dim != d:
        raise ValueError("scale dims must sum to the embedding dimension")
    t_w, t_b, s_w, s_b = [], [], [], []
    for k, (ksize, dk) in enumerate(zip(spec.kernel_sizes, spec.dims)):
        t_w.append(kaiming(rng, (dk, d, ksize), fan_in=d * ksize, name=f"{prefix}.tconv{k}.w"))
        t_b.append(zeros((dk,), f"{prefix}.tconv{k}.b"))
        s_w.append(kaiming(rng, (dk, d, ksize), fan_in=d * ksize, name=f"{prefix}.sconv{k}.w"))
        s_b.append(zeros((dk,), f"{prefix}.sconv{k}.b"))
    return CstLayerParams(
        temporal_w=t_w, temporal_b=t_b, spatial_w=s_w, spatial_b=s_b,
        proj_t_w=kaiming(rng, (d, d), fan_in=d, name=f"{prefix}.proj_t.w"),
        proj_t_b=zeros((d,), f"{prefix}.proj_t.b"),
        proj_s_w=kaiming(rng, (d, d), fan_in=d, name=f"{prefix}.proj_s.w"),
        proj_s_b=zeros((d,), f"{prefix}.proj_s.b"),
        spec=spec,
    )


def temporal_tokenize(grid: TokenGrid, p: CstLayerParams) -> TokenGrid:
    """Per-channel multi-scale convolution over the segment axis plus residual projection."""
    x = grid.values
    if x.shape[-1] != p.spec.total_dim:
        raise ad.ShapeMismatch("token width does not match the scale spec")
    branches = [
        ad.conv1d_grouped(x, w, b)
        for w, b in zip(p.temporal_w, p.temporal_b)
    ]
    mixed = ad.concat(branches, axis=-1)
    residual = ad.affine(x, p.proj_t_w, p.proj_t_b)
    return grid.with_values(mixed + residual)


def spatial_tokenize(grid: TokenGrid, p: CstLayerParams, rm: RegionMap | None = None) -> TokenGrid:
    """Region-local multi-scale convolution over the electrode axis.

    Windows are same-padded inside each region and never cross region
    boundaries; electrode order within a region follows the region map.
    """
    x = grid.values
    rm = rm if rm is not None else grid.region_map
    C = x.shape[0]
    if rm.num_channels != C:
        raise ChannelNotInRegion(
            f"region map covers {rm.num_channels} channels but the grid has {C}"
        )
    n, d = x.shape[1], x.shape[2]
    # Regions of equal size share one batched convolution call.
    by_size: dict[int, list[tuple[int, ...]]] = {}
    for _, idx in rm.regions:
        by_size.setdefault(len(idx), []).append(idx)
    region_outputs = []
    order: list[int] = []
    for size, idx_lists in by_size.items():
        idx = np.array(idx_lists, dtype=np.intp)       # (q, size)
        order.extend(int(i) for i in idx.reshape(-1))
        xr = ad.take(x, idx, axis=0)                   # (q, size, n, d)
        xr = ad.reshape(ad.transpose(xr, (0, 2, 1, 3)), (len(idx_lists) * n, size, d))
        branches = [
            ad.conv1d_grouped(xr, w, b)
            for w, b in zip(p.spatial_w, p.spatial_b)
        ]
        out = ad.reshape(ad.concat(branches, axis=-1), (len(idx_lists), n, size, d))
        region_outputs.append(ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (len(idx_lists) * size, n, d)))
    stacked = ad.concat(region_outputs, axis=0) if len(region_outputs) > 1 else region_outputs[0]
    inverse = np.argsort(np.asarray(order))
    mixed = ad.take(stacked, inverse, axis=0)
    residual = ad.affine(x, p.proj_s_w, p.proj_s_b)
    return grid.with_values(mixed + residual)


def cst_layer(grid: TokenGrid, p: CstLayerParams) -> TokenGrid:
    return spatial_tokenize(temporal_tokenize(grid, p), p)
