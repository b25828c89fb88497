"""Recording file format, dataset assembly from manifests, and a synthetic
EEG generator with planted class structure.

The on-disk format is a JSON sidecar header (``<path>.json``) plus a binary
payload (``<path>``) of little-endian float32 samples in channel-major order.
Synthetic classes differ in both spatial extent (which regions carry the
pattern) and temporal scale (burst length and rate), so the cross-scale
encoder has real structure to find at desk scale.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .dsp import Recording
from .montage import STANDARD_19, Region, build_region_map

FORMAT_NAME = "neuroscale-recording"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


class TruncatedPayload(ValueError):
    pass


class SplitOverlap(ValueError):
    pass


class MissingLabel(ValueError):
    pass


class SpecInvalid(ValueError):
    pass


# -- recording files ----------------------------------------------------------

def write_recording(rec: Recording, path: str) -> None:
    """Write ``<path>`` (float32 payload) and ``<path>.json`` (header sidecar)."""
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "channel_labels": list(rec.labels),
        "sample_rate": rec.sample_rate,
        "num_samples": rec.num_samples,
        "units": "uV",
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
    payload = np.ascontiguousarray(rec.samples, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(payload.tobytes())


def read_recording(path: str) -> Recording:
    with open(path + ".json", "r", encoding="utf-8") as fh:
        header = json.load(fh)
    if header.get("format") != FORMAT_NAME:
        raise FormatError(f"unrecognized recording format {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported recording version {header.get('version')!r}")
    labels = tuple(header["channel_labels"])
    C, T = len(labels), int(header["num_samples"])
    expected = C * T * 4
    size = os.path.getsize(path)
    if size < expected:
        raise TruncatedPayload(f"payload holds {size} bytes, header declares {expected}")
    if size > expected:
        raise FormatError(f"payload holds {size} bytes, header declares {expected}")
    with open(path, "rb") as fh:
        raw = fh.read(expected)
    samples = np.frombuffer(raw, dtype="<f4").reshape(C, T)
    return Recording(samples=samples, sample_rate=float(header["sample_rate"]), labels=labels)


# -- synthetic generator --------------------------------------------------------

@dataclass(frozen=True)
class ClassPattern:
    """One planted class: band-limited bursts confined to a region subset."""

    regions: tuple[str, ...]        # region names, e.g. ("Frontal",)
    carrier_hz: float
    burst_len_s: float              # temporal scale of one burst
    burst_period_s: float           # spacing between burst onsets
    amplitude_uv: float = 30.0


@dataclass(frozen=True)
class SyntheticSpec:
    channel_labels: tuple[str, ...] = STANDARD_19
    duration_s: float = 4.0
    sample_rate: float = 200.0
    patterns: tuple[ClassPattern, ...] = ()
    noise_level: float = 0.5        # background RMS relative to burst amplitude
    seed: int = 0

    def validate(self) -> None:
        if not self.patterns:
            raise SpecInvalid("at least one class pattern is required")
        if self.duration_s <= 0 or self.sample_rate <= 0:
            raise SpecInvalid("duration and sample rate must be positive")
        region_names = {r.value for r in Region}
        rm = build_region_map(list(self.channel_labels))  # raises on unknown labels
        present = {r.value for r, _ in rm.regions}
        for p in self.patterns:
            if not (0.3 < p.carrier_hz < 75.0):
                raise SpecInvalid(f"carrier {p.carrier_hz} Hz outside the (0.3, 75) band")
            if not p.regions or any(r not in region_names for r in p.regions):
                raise SpecInvalid(f"bad region subset {p.regions!r}")
            if not any(r in present for r in p.regions):
                raise SpecInvalid(f"pattern regions {p.regions!r} have no channels in this montage")
            if p.burst_len_s <= 0 or p.burst_period_s < p.burst_len_s:
                raise SpecInvalid("burst length must be positive and fit in the period")


def two_class_spec(**overrides) -> SyntheticSpec:
    """Default planted 2-class problem: focal fast bursts vs distributed slow waves."""
    patterns = (
        ClassPattern(regions=("Occipital",), carrier_hz=24.0,
                     burst_len_s=0.25, burst_period_s=1.0),
        ClassPattern(regions=("Frontal", "Parietal"), carrier_hz=6.0,
                     burst_len_s=1.5, burst_period_s=2.0),
    )
    return SyntheticSpec(patterns=patterns, **overrides)


def _pink_noise(rng: np.random.Generator, n: int, fs: float) -> np.ndarray:
    """1/f-amplitude-shaped noise, unit RMS."""
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    shaped = spectrum / np.sqrt(np.maximum(freqs, 1.0))
    out = np.fft.irfft(shaped, n=n)
    return out / (np.std(out) + 1e-12)


def _burst_envelope(t: np.ndarray, burst_len: float, period: float, phase: float) -> np.ndarray:
    """Hann bursts of ``burst_len`` seconds repeating every ``period`` seconds."""
    pos = np.mod(t + phase, period)
    env = np.zeros_like(t)
    inside = pos < burst_len
    env[inside] = 0.5 * (1.0 - np.cos(2.0 * np.pi * pos[inside] / burst_len))
    return env


def generate_synthetic(spec: SyntheticSpec, label: int | None = None) -> tuple[Recording, int]:
    """Draw one labeled recording; deterministic given (spec, label)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    if label is None:
        label = int(rng.integers(len(spec.patterns)))
    elif not (0 <= label < len(spec.patterns)):
        raise SpecInvalid(f"label {label} outside the {len(spec.patterns)}-class spec")
    pattern = spec.patterns[label]
    labels = list(spec.channel_labels)
    rm = build_region_map(labels)
    C = len(labels)
    T = int(round(spec.duration_s * spec.sample_rate))
    t = np.arange(T) / spec.sample_rate
    samples = np.zeros((C, T))
    for c in range(C):
        samples[c] = spec.noise_level * pattern.amplitude_uv * _pink_noise(rng, T, spec.sample_rate)
    target_regions = {Region(r) for r in pattern.regions}
    phase = float(rng.uniform(0, pattern.burst_period_s))
    envelope = _burst_envelope(t, pattern.burst_len_s, pattern.burst_period_s, phase)
    for region, idx in rm.regions:
        if region not in target_regions:
            continue
        for c in idx:
            carrier_phase = float(rng.uniform(0, 2 * np.pi))
            carrier = np.sin(2 * np.pi * pattern.carrier_hz * t + carrier_phase)
            samples[c] += pattern.amplitude_uv * envelope * carrier
    rec = Recording(samples=samples, sample_rate=spec.sample_rate, labels=tuple(labels))
    return rec, label


# -- dataset assembly -----------------------------------------------------------

@dataclass
class DatasetIndex:
    train: list[tuple[str, str]] = field(default_factory=list)   # (path, label)
    val: list[tuple[str, str]] = field(default_factory=list)
    test: list[tuple[str, str]] = field(default_factory=list)

    def split(self, name: str) -> list[tuple[str, str]]:
        return getattr(self, name)

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def build_dataset(directory: str, manifest: str = "manifest.csv") -> DatasetIndex:
    """Read the (path, label, split) manifest into a deterministic index."""
    manifest_path = os.path.join(directory, manifest)
    index = DatasetIndex()
    seen: dict[str, str] = {}
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"path", "label", "split"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FormatError(f"manifest must have columns {sorted(required)}")
        for row in reader:
            path, label, split = row["path"], row["label"], row["split"]
            if not label:
                raise MissingLabel(f"row for {path!r} has no label")
            if split not in ("train", "val", "test"):
                raise FormatError(f"unknown split {split!r} for {path!r}")
            if path in seen and seen[path] != split:
                raise SplitOverlap(f"{path!r} assigned to both {seen[path]} and {split}")
            seen[path] = split
            index.split(split).append((os.path.join(directory, path), label))
    return index


def write_synthetic_dataset(
    directory: str,
    spec: SyntheticSpec,
    count: int,
    splits: tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> DatasetIndex:
    """Generate ``count`` recordings with stratified split assignment and a manifest."""
    if abs(sum(splits) - 1.0) > 1e-9:
        raise SpecInvalid("split fractions must sum to 1")
    os.makedirs(directory, exist_ok=True)
    num_classes = len(spec.patterns)
    groups = (count + num_classes - 1) // num_classes  # one sample per class each
    if groups < 3:
        raise SpecInvalid(f"count {count} too small for {num_classes}-class 3-way splits")
    n_test = max(1, round(groups * splits[2]))
    n_val = max(1, round(groups * splits[1]))
    n_train = groups - n_val - n_test
    if n_train < 1:
        raise SpecInvalid("split fractions leave no training samples")
    rows = []
    for i in range(count):
        label = i % num_classes  # balanced classes
        sample_spec = SyntheticSpec(
            channel_labels=spec.channel_labels, duration_s=spec.duration_s,
            sample_rate=spec.sample_rate, patterns=spec.patterns,
            noise_level=spec.noise_level, seed=spec.seed * 1_000_003 + i,
        )
        rec, label = generate_synthetic(sample_spec, label=label)
        name = f"rec{i:04d}.eeg"
        write_recording(rec, os.path.join(directory, name))
        group = i // num_classes
        if group < n_train:
            split = "train"
        elif group < n_train + n_val:
            split = "val"
        else:
            split = "test"
        rows.append((name, str(label), split))
    with open(os.path.join(directory, "manifest.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "split"])
        writer.writerows(rows)
    return build_dataset(directory)
