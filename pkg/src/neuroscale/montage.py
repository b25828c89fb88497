"""Electrode-label based partition of channels into anatomical scalp regions.

Labels of the international 10-20 layout are classified purely by their
letter prefix; the resulting region partition drives region-local spatial
convolution and the inter-region attention descriptors.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass


class UnknownLabel(ValueError):
    pass


class EmptyChannelList(ValueError):
    pass


class Region(enum.Enum):
    FRONTAL = "Frontal"
    CENTRAL = "Central"
    PARIETAL = "Parietal"
    TEMPORAL = "Temporal"
    OCCIPITAL = "Occipital"


REGION_ORDER = (
    Region.FRONTAL,
    Region.CENTRAL,
    Region.PARIETAL,
    Region.TEMPORAL,
    Region.OCCIPITAL,
)

# Longest prefixes first so "FC3" never matches the bare "F" rule.
_PREFIX_RULES = (
    ("FP", Region.FRONTAL),
    ("AF", Region.FRONTAL),
    ("FC", Region.CENTRAL),
    ("CP", Region.CENTRAL),
    ("FT", Region.TEMPORAL),
    ("TP", Region.TEMPORAL),
    ("PO", Region.OCCIPITAL),
    ("F", Region.FRONTAL),
    ("C", Region.CENTRAL),
    ("P", Region.PARIETAL),
    ("T", Region.TEMPORAL),
    ("O", Region.OCCIPITAL),
)

# The classic 19-channel 10-20 montage used as the default channel set.
STANDARD_19 = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8",
    "T7", "C3", "Cz", "C4", "T8",
    "P7", "P3", "Pz", "P4", "P8",
    "O1", "O2",
)

# Same electrodes reordered so that any prefix spans as many regions as possible;
# used when a reduced montage of C < 19 channels is requested.
_DIVERSE_ORDER = (
    "Fz", "Cz", "Pz", "T7", "O1",
    "F3", "C3", "P3", "T8", "O2",
    "F4", "C4", "P4", "Fp1", "Fp2",
    "F7", "F8", "P7", "P8",
)


def diverse_montage(num_channels: int) -> tuple[str, ...]:
    """First ``num_channels`` labels of the region-diverse 10-20 ordering."""
    if not (1 <= num_channels <= len(_DIVERSE_ORDER)):
        raise EmptyChannelList(f"montage supports 1..{len(_DIVERSE_ORDER)} channels")
    return _DIVERSE_ORDER[:num_channels]


@dataclass(frozen=True)
class RegionMap:
    """Ordered partition of channel indices into non-empty regions."""

    regions: tuple[tuple[Region, tuple[int, ...]], ...]

    @property
    def num_regions(self) -> int:
        return len(self.regions)

    @property
    def num_channels(self) -> int:
        return sum(len(idx) for _, idx in self.regions)

    @property
    def max_region_size(self) -> int:
        return max(len(idx) for _, idx in self.regions)

    def sizes(self) -> list[int]:
        return [len(idx) for _, idx in self.regions]

    def channel_lists(self) -> list[list[int]]:
        return [list(idx) for _, idx in self.regions]

    def region_of(self, channel: int) -> Region:
        for region, idx in self.regions:
            if channel in idx:
                return region
        raise UnknownLabel(f"channel index {channel} not covered by the region map")


def classify_electrode(label: str) -> Region:
    """Map a 10-20 electrode name to its scalp region by letter prefix."""
    if not label:
        raise UnknownLabel("empty electrode label")
    stem = label.strip().upper()
    # Drop the digit / midline-"z" suffix; only the letter prefix matters.
    core = stem.rstrip("0123456789").rstrip("Z")
    if not core:
        raise UnknownLabel(f"no letter prefix in electrode label {label!r}")
    for prefix, region in _PREFIX_RULES:
        if core == prefix:
            return region
    raise UnknownLabel(f"unrecognized electrode label {label!r}")


def build_region_map(labels: list[str]) -> RegionMap:
    """Partition channel indices into regions, preserving input order within each."""
    if not labels:
        raise EmptyChannelList("cannot build a region map from zero channels")
    buckets: dict[Region, list[int]] = {r: [] for r in REGION_ORDER}
    for i, label in enumerate(labels):
        buckets[classify_electrode(label)].append(i)
    regions = tuple(
        (r, tuple(buckets[r])) for r in REGION_ORDER if buckets[r]
    )
    return RegionMap(regions=regions)
