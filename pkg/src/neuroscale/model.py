"""Encoder assembly: alternating tokenization/attention layers, segment
masking, the reconstruction head, task heads, and checkpoint serialization.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import cst, embed, ssa
from .autodiff import Parameter, Tensor
from .dsp import PatchedSignal
from .montage import RegionMap, build_region_map
from .params import collect_parameters, kaiming, zeros

CHECKPOINT_MAGIC = b"NSCK"
CHECKPOINT_VERSION = 1


class ConfigInvalid(ValueError):
    pass


class MaskMismatch(ValueError):
    pass


class HeadMismatch(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults mirror the published pretraining setup."""

    layers: int = 12
    embed_dim: int = 200
    kernels: tuple[int, ...] = (1, 3, 5)
    window: int = 5
    heads: int = 8
    ffn_dim: int = 800
    dropout: float = 0.1
    patch_len: int = 200
    mask_ratio: float = 0.5
    max_channels: int = 64
    max_segments: int = 64
    layer_unit: str = "pair"      # "pair": L CST+SSA pairs; "single": L alternating modules
    mask_token: str = "zero"      # "zero" or "learnable"

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigInvalid("layers must be >= 1")
        if self.embed_dim < 2 or self.embed_dim % 2 != 0:
            raise ConfigInvalid("embed_dim must be even and >= 2")
        if self.embed_dim % self.heads != 0:
            raise ConfigInvalid("embed_dim must be divisible by heads")
        if not self.kernels or any(k % 2 == 0 or k < 1 for k in self.kernels):
            raise ConfigInvalid("kernels must be odd positive integers")
        if self.embed_dim < 2 ** len(self.kernels) - 1:
            raise ConfigInvalid("embed_dim too small for the kernel count")
        if self.window < 1:
            raise ConfigInvalid("window must be >= 1")
        if self.ffn_dim < 1 or self.patch_len < 1:
            raise ConfigInvalid("ffn_dim and patch_len must be positive")
        if not (0.0 <= self.mask_ratio < 1.0):
            raise ConfigInvalid("mask_ratio must lie in [0, 1)")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigInvalid("dropout must lie in [0, 1)")
        if self.layer_unit not in ("pair", "single"):
            raise ConfigInvalid("layer_unit must be 'pair' or 'single'")
        if self.mask_token not in ("zero", "learnable"):
            raise ConfigInvalid("mask_token must be 'zero' or 'learnable'")


@dataclass(frozen=True)
class MaskSpec:
    """Fixed-count random selection of masked segment indices."""

    masked: tuple[int, ...]
    visible: tuple[int, ...]
    seed: int
    num_segments: int

    @property
    def is_empty(self) -> bool:
        return not self.masked


def sample_mask(n: int, ratio: float, seed: int) -> MaskSpec:
    """Choose exactly floor(ratio * n) segment indices, uniformly without replacement."""
    if not (0.0 <= ratio < 1.0):
        raise ConfigInvalid("mask ratio must lie in [0, 1)")
    count = int(ratio * n)
    rng = np.random.default_rng(seed)
    masked = np.sort(rng.choice(n, size=count, replace=False)) if count else np.array([], dtype=int)
    masked_set = set(int(i) for i in masked)
    visible = tuple(i for i in range(n) if i not in masked_set)
    return MaskSpec(masked=tuple(int(i) for i in masked), visible=visible,
                    seed=seed, num_segments=n)


@dataclass
class TaskHead:
    """Classification / regression head over the flattened token grid, or the
    per-token linear reconstruction head."""

    kind: str                 # "reconstruction", "classification", "regression"
    num_classes: int
    w1: Parameter
    b1: Parameter
    w2: Parameter | None = None
    b2: Parameter | None = None


def make_recon_head(rng: np.random.Generator, d: int, t: int) -> TaskHead:
    return TaskHead(
        kind="reconstruction", num_classes=0,
        w1=kaiming(rng, (d, t), fan_in=d, name="head.recon.w"),
        b1=zeros((t,), "head.recon.b"),
    )


def make_task_head(
    rng: np.random.Generator, kind: str, flat_dim: int, hidden: int, num_classes: int = 0
) -> TaskHead:
    if kind == "classification":
        if num_classes < 2:
            raise HeadMismatch("classification head needs >= 2 classes")
        out = num_classes
    elif kind == "regression":
        out = 1
    else:
        raise HeadMismatch(f"unsupported task head kind {kind!r}")
    return TaskHead(
        kind=kind, num_classes=num_classes,
        w1=kaiming(rng, (flat_dim, hidden), fan_in=flat_dim, name="head.task1.w"),
        b1=zeros((hidden,), "head.task1.b"),
        w2=kaiming(rng, (hidden, out), fan_in=hidden, name="head.task2.w"),
        b2=zeros((out,), "head.task2.b"),
    )


@dataclass
class Model:
    config: ModelConfig
    region_map: RegionMap
    channel_labels: tuple[str, ...]
    embed_params: embed.EmbedParams
    modules: list[tuple[str, object]]      # ("cst", CstLayerParams) / ("ssa", SsaLayerParams)
    recon_head: TaskHead
    mask_token: Parameter | None = None
    task_head: TaskHead | None = None
    seed: int = 0
    meta: dict = dataclasses.field(default_factory=dict)  # e.g. preprocessing settings

    def parameters(self) -> list[Parameter]:
        parts = [self.embed_params, [m for _, m in self.modules], self.recon_head]
        if self.mask_token is not None:
            parts.append(self.mask_token)
        if self.task_head is not None:
            parts.append(self.task_head)
        return collect_parameters(parts)

    def encoder_parameters(self) -> list[Parameter]:
        parts = [self.embed_params, [m for _, m in self.modules]]
        if self.mask_token is not None:
            parts.append(self.mask_token)
        return collect_parameters(parts)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def build_model(cfg: ModelConfig, region_map: RegionMap, seed: int = 0) -> Model:
    """Initialize all parameters deterministically from the seed."""
    cfg.validate()
    num_channels = region_map.num_channels
    if num_channels > cfg.max_channels:
        raise ConfigInvalid("region map has more channels than max_channels")
    rng = np.random.default_rng(seed)
    scale_spec = cst.make_scale_spec(cfg.embed_dim, cfg.kernels)
    embed_params = embed.init_embed_params(
        rng, cfg.patch_len, cfg.embed_dim, cfg.max_channels, cfg.max_segments
    )
    modules: list[tuple[str, object]] = []
    if cfg.layer_unit == "pair":
        kinds = ["cst", "ssa"] * cfg.layers
    else:
        kinds = [("cst" if i % 2 == 0 else "ssa") for i in range(cfg.layers)]
    counts = {"cst": 0, "ssa": 0}
    for kind in kinds:
        i = counts[kind]
        counts[kind] += 1
        if kind == "cst":
            modules.append((kind, cst.init_cst_layer(rng, cfg.embed_dim, scale_spec, f"cst{i}")))
        else:
            modules.append((kind, ssa.init_ssa_layer(
                rng, cfg.embed_dim, cfg.heads, cfg.ffn_dim, cfg.dropout, f"ssa{i}")))
    recon_head = make_recon_head(rng, cfg.embed_dim, cfg.patch_len)
    mask_token = None
    if cfg.mask_token == "learnable":
        mask_token = zeros((cfg.embed_dim,), "embed.mask_token")
    return Model(
        config=cfg, region_map=region_map, channel_labels=(),
        embed_params=embed_params, modules=modules, recon_head=recon_head,
        mask_token=mask_token, seed=seed,
    )


def encode(
    model: Model,
    patches: np.ndarray,
    masked_segments: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    train: bool = False,
    collect_activations: bool = False,
):
    """Run the embedding plus all encoder modules over one (C, n, t) sample."""
    grid = embed.encode_patches(
        patches, model.embed_params, model.region_map, model.channel_labels,
        masked_segments=masked_segments, mask_token=model.mask_token,
    )
    activations = []
    for kind, p in model.modules:
        if kind == "cst":
            grid = cst.cst_layer(grid, p)
        else:
            grid = ssa.ssa_layer(grid, p, model.config.window, rng, train)
        if collect_activations:
            activations.append(grid.values)
    if collect_activations:
        return grid, activations
    return grid


def forward_pretrain(
    model: Model,
    p: PatchedSignal,
    mask: MaskSpec,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> Tensor:
    """Predict every patch from the mask-corrupted input; output is (C, n, t)."""
    if mask.num_segments != p.num_segments:
        raise MaskMismatch(
            f"mask built for {mask.num_segments} segments, sample has {p.num_segments}"
        )
    patches = p.patches
    masked = np.asarray(mask.masked, dtype=np.intp)
    if masked.size:
        patches = patches.copy()
        patches[:, masked, :] = 0.0  # content must never reach the encoder
    grid = encode(model, patches, masked_segments=masked, rng=rng, train=train)
    return ad.affine(grid.values, model.recon_head.w1, model.recon_head.b1)


@dataclass
class ReconLoss:
    value: Tensor
    empty_mask: bool = False


def reconstruction_loss(pred: Tensor, target: PatchedSignal, mask: MaskSpec) -> ReconLoss:
    """Mean squared error over every (channel, masked segment, sample) entry."""
    if pred.shape != target.patches.shape:
        raise ad.ShapeMismatch(
            f"prediction {pred.shape} does not match target {target.patches.shape}"
        )
    if mask.is_empty:
        return ReconLoss(value=Tensor(0.0), empty_mask=True)
    idx = list(mask.masked)
    pm = ad.take(pred, idx, axis=1)
    tm = Tensor(target.patches[:, idx, :])
    diff = pm - tm
    return ReconLoss(value=ad.mean(ad.mul(diff, diff)))


def forward_task(
    model: Model,
    p: PatchedSignal,
    head: TaskHead,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> Tensor:
    """Encode without masking and apply the task head; returns logits or a scalar."""
    if head.kind not in ("classification", "regression"):
        raise HeadMismatch(f"forward_task cannot drive a {head.kind!r} head")
    grid = encode(model, p.patches, rng=rng, train=train)
    C, n, d = grid.values.shape
    flat = ad.reshape(grid.values, (1, C * n * d))
    if head.w1.shape[0] != C * n * d:
        raise HeadMismatch(
            f"head expects flattened dim {head.w1.shape[0]}, sample gives {C * n * d}"
        )
    hidden = ad.gelu(ad.affine(flat, head.w1, head.b1))
    out = ad.affine(hidden, head.w2, head.b2)
    return ad.reshape(out, (out.shape[-1],))


# -- checkpoint serialization ----------------------------------------------

def _config_to_dict(cfg: ModelConfig) -> dict:
    raw = dataclasses.asdict(cfg)
    raw["kernels"] = list(raw["kernels"])
    return raw


def _config_from_dict(raw: dict) -> ModelConfig:
    raw = dict(raw)
    raw["kernels"] = tuple(raw["kernels"])
    return ModelConfig(**raw)


def save_checkpoint(model: Model, path: str) -> None:
    """Write a length-prefixed JSON manifest followed by the little-endian payload."""
    params = model.parameters()
    head = model.task_head
    manifest = {
        "format": "neuroscale-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": _config_to_dict(model.config),
        "channel_labels": list(model.channel_labels),
        "region_labels": [r.value for r, _ in model.region_map.regions],
        "region_channels": [list(idx) for _, idx in model.region_map.regions],
        "seed": model.seed,
        "meta": model.meta,
        "dtype": "<f8",
        "task_head": None if head is None else {
            "kind": head.kind, "num_classes": head.num_classes,
            "flat_dim": int(head.w1.shape[0]), "hidden": int(head.w1.shape[1]),
        },
        "params": [{"name": p.name, "shape": list(p.shape)} for p in params],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.array(len(blob), dtype="<u4").tobytes())
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> Model:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError("not a model checkpoint (bad magic)")
        (length,) = np.frombuffer(fh.read(4), dtype="<u4")
        manifest = json.loads(fh.read(int(length)).decode("utf-8"))
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {manifest.get('version')}")
        cfg = _config_from_dict(manifest["config"])
        labels = tuple(manifest["channel_labels"])
        if labels:
            rm = build_region_map(list(labels))
        else:
            from .montage import Region, RegionMap as RM
            rm = RM(regions=tuple(
                (Region(name), tuple(idx))
                for name, idx in zip(manifest["region_labels"], manifest["region_channels"])
            ))
        model = build_model(cfg, rm, seed=manifest["seed"])
        model.channel_labels = labels
        model.meta = manifest.get("meta", {})
        head_meta = manifest.get("task_head")
        if head_meta is not None:
            model.task_head = make_task_head(
                np.random.default_rng(0), head_meta["kind"],
                head_meta["flat_dim"], head_meta["hidden"], head_meta["num_classes"],
            )
        params = model.parameters()
        names = [p["name"] for p in manifest["params"]]
        if names != [p.name for p in params]:
            raise FormatError("checkpoint parameter manifest does not match the architecture")
        for meta, p in zip(manifest["params"], params):
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise FormatError("checkpoint payload truncated")
            p.data = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    return model
