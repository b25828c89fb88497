"""Recording format round-trips, synthetic generator structure, manifests."""

import csv
import json
import os

import numpy as np
import pytest

from neuroscale.data_io import (
    ClassPattern, FormatError, MissingLabel, SpecInvalid, SplitOverlap,
    SyntheticSpec, build_dataset, generate_synthetic, read_recording,
    two_class_spec, write_recording, write_synthetic_dataset,
)
from neuroscale.dsp import Recording
from neuroscale.montage import STANDARD_19, build_region_map, diverse_montage


class TestRecordingFormat:
    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = rng.standard_normal((4, 321)).astype("<f4").astype(np.float64)
        rec = Recording(samples=samples, sample_rate=250.0,
                        labels=["Fz", "Cz", "Pz", "Oz"])
        path = str(tmp_path / "rec.eeg")
        write_recording(rec, path)
        back = read_recording(path)
        np.testing.assert_array_equal(back.samples, rec.samples)
        assert back.sample_rate == 250.0
        assert back.labels == rec.labels

    def test_truncated_payload(self, tmp_path):
        rec = Recording(samples=np.zeros((2, 100)), sample_rate=200.0,
                        labels=["Fz", "Cz"])
        path = str(tmp_path / "rec.eeg")
        write_recording(rec, path)
        blob = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(blob[:-4])
        from neuroscale.data_io import TruncatedPayload
        with pytest.raises(TruncatedPayload):
            read_recording(path)

    def test_oversized_payload(self, tmp_path):
        rec = Recording(samples=np.zeros((1, 10)), sample_rate=200.0, labels=["Fz"])
        path = str(tmp_path / "rec.eeg")
        write_recording(rec, path)
        with open(path, "ab") as fh:
            fh.write(b"\x00" * 8)
        with pytest.raises(FormatError):
            read_recording(path)

    def test_unknown_version(self, tmp_path):
        rec = Recording(samples=np.zeros((1, 10)), sample_rate=200.0, labels=["Fz"])
        path = str(tmp_path / "rec.eeg")
        write_recording(rec, path)
        header = json.load(open(path + ".json"))
        header["version"] = 99
        json.dump(header, open(path + ".json", "w"))
        with pytest.raises(FormatError):
            read_recording(path)


class TestSyntheticGenerator:
    def test_determinism(self):
        spec = two_class_spec(seed=42)
        r1, l1 = generate_synthetic(spec)
        r2, l2 = generate_synthetic(spec)
        assert l1 == l2
        np.testing.assert_array_equal(r1.samples, r2.samples)

    def test_planted_spectral_peak(self):
        pattern = ClassPattern(regions=("Occipital",), carrier_hz=10.0,
                               burst_len_s=4.0, burst_period_s=4.0)
        spec = SyntheticSpec(patterns=(pattern,), noise_level=0.0, seed=1,
                            duration_s=4.0)
        rec, _ = generate_synthetic(spec, label=0)
        rm = build_region_map(list(rec.labels))
        occipital = dict((r.value, idx) for r, idx in rm.regions)["Occipital"]
        freqs = np.fft.rfftfreq(rec.num_samples, 1.0 / rec.sample_rate)
        band = (freqs > 8) & (freqs < 12)
        for c in range(rec.num_channels):
            power = np.abs(np.fft.rfft(rec.samples[c]))
            if c in occipital:
                assert power[band].max() > 100 * power[~band].max()
            else:
                assert power.max() < 1e-9

    def test_band_power_probe_separates_classes(self):
        # Linear probe on per-channel carrier-band power, closed-form ridge.
        spec = two_class_spec(seed=7, noise_level=0.5, duration_s=4.0)
        recs, labels = [], []
        for i in range(60):
            si = SyntheticSpec(channel_labels=spec.channel_labels,
                               duration_s=spec.duration_s, sample_rate=spec.sample_rate,
                               patterns=spec.patterns, noise_level=spec.noise_level,
                               seed=1000 + i)
            rec, label = generate_synthetic(si, label=i % 2)
            recs.append(rec)
            labels.append(label)

        def band_power(rec, lo, hi):
            freqs = np.fft.rfftfreq(rec.num_samples, 1.0 / rec.sample_rate)
            mask = (freqs >= lo) & (freqs <= hi)
            spectra = np.abs(np.fft.rfft(rec.samples, axis=1))
            return (spectra[:, mask] ** 2).sum(axis=1)

        feats = np.stack([
            np.concatenate([band_power(r, 20, 28), band_power(r, 4, 8)]) for r in recs
        ])
        feats = (feats - feats.mean(0)) / (feats.std(0) + 1e-9)
        y = 2.0 * np.asarray(labels) - 1.0
        train, test = slice(0, 40), slice(40, 60)
        A = feats[train]
        wvec = np.linalg.solve(A.T @ A + 1e-3 * np.eye(A.shape[1]), A.T @ y[train])
        preds = (feats[test] @ wvec > 0).astype(int)
        accuracy = (preds == np.asarray(labels)[test]).mean()
        assert accuracy >= 0.95

    def test_invalid_specs_rejected(self):
        with pytest.raises(SpecInvalid):
            SyntheticSpec(patterns=()).validate()
        with pytest.raises(SpecInvalid):
            two_class_spec(channel_labels=("Fz", "Cz")).validate()  # no occipital channel
        bad_carrier = ClassPattern(regions=("Frontal",), carrier_hz=90.0,
                                   burst_len_s=0.2, burst_period_s=1.0)
        with pytest.raises(SpecInvalid):
            SyntheticSpec(patterns=(bad_carrier,)).validate()

    def test_label_out_of_range(self):
        with pytest.raises(SpecInvalid):
            generate_synthetic(two_class_spec(seed=0), label=5)


class TestManifest:
    def _write_manifest(self, directory, rows):
        with open(os.path.join(directory, "manifest.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "label", "split"])
            writer.writerows(rows)

    def test_split_sizes(self, tmp_path):
        rows = [(f"r{i}.eeg", "0", s)
                for i, s in enumerate(["train"] * 6 + ["val"] * 2 + ["test"] * 2)]
        self._write_manifest(tmp_path, rows)
        index = build_dataset(str(tmp_path))
        assert index.sizes() == (6, 2, 2)

    def test_split_overlap_rejected(self, tmp_path):
        self._write_manifest(tmp_path, [("a.eeg", "0", "train"), ("a.eeg", "0", "test")])
        with pytest.raises(SplitOverlap):
            build_dataset(str(tmp_path))

    def test_missing_label_rejected(self, tmp_path):
        self._write_manifest(tmp_path, [("a.eeg", "", "train")])
        with pytest.raises(MissingLabel):
            build_dataset(str(tmp_path))

    def test_unknown_split_rejected(self, tmp_path):
        self._write_manifest(tmp_path, [("a.eeg", "1", "holdout")])
        with pytest.raises(FormatError):
            build_dataset(str(tmp_path))

    def test_write_synthetic_dataset_end_to_end(self, tmp_path):
        spec = two_class_spec(channel_labels=diverse_montage(6), seed=3,
                              duration_s=2.0)
        index = write_synthetic_dataset(str(tmp_path), spec, count=10)
        assert index.sizes() == (6, 2, 2)
        path, label = index.train[0]
        rec = read_recording(path)
        assert rec.num_channels == 6
        assert label in ("0", "1")
        # Classes are balanced inside each split.
        for split in (index.train, index.val, index.test):
            labels = [l for _, l in split]
            assert abs(labels.count("0") - labels.count("1")) <= 1
