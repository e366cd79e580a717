import struct

import numpy as np
import pytest

from pcgscreen.errors import (
    MalformedContainer,
    MissingLabelFile,
    UnlabeledRecording,
    UnsupportedFormat,
)
from pcgscreen.signal_io import (
    AudioRecording,
    Dataset,
    DatasetKind,
    Label,
    build_manifest,
    load_wav,
    read_manifest,
    resample,
    write_manifest,
    write_wav,
)

from conftest import make_wav


class TestLoadWav:
    def test_header_passthrough(self, tmp_path):
        path = make_wav(tmp_path / "x.wav", np.zeros(16000), rate=2000)
        rec = load_wav(path)
        assert len(rec.samples) == 16000
        assert rec.sample_rate == 2000
        assert rec.source_id == "x"
        assert rec.label is None and rec.dataset is None

    def test_pcm_scaling_of_full_scale_sample(self, tmp_path):
        # raw 0x7FFF must map to 32767/32768
        payload = struct.pack("<h", 0x7FFF)
        hdr = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
        hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 2000, 4000, 2, 16)
        hdr += b"data" + struct.pack("<I", len(payload))
        p = tmp_path / "one.wav"
        p.write_bytes(hdr + payload)
        rec = load_wav(p)
        assert rec.samples[0] == 32767 / 32768

    def test_stereo_rejected(self, tmp_path):
        payload = struct.pack("<hh", 1, 2)
        hdr = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
        hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 2, 2000, 8000, 4, 16)
        hdr += b"data" + struct.pack("<I", len(payload))
        p = tmp_path / "st.wav"
        p.write_bytes(hdr + payload)
        with pytest.raises(UnsupportedFormat):
            load_wav(p)

    def test_8bit_rejected(self, tmp_path):
        hdr = b"RIFF" + struct.pack("<I", 36) + b"WAVE"
        hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 2000, 2000, 1, 8)
        hdr += b"data" + struct.pack("<I", 0)
        p = tmp_path / "b8.wav"
        p.write_bytes(hdr)
        with pytest.raises(UnsupportedFormat):
            load_wav(p)

    def test_non_pcm_rejected(self, tmp_path):
        hdr = b"RIFF" + struct.pack("<I", 36) + b"WAVE"
        hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 3, 1, 2000, 8000, 4, 16)
        hdr += b"data" + struct.pack("<I", 0)
        p = tmp_path / "f32.wav"
        p.write_bytes(hdr)
        with pytest.raises(UnsupportedFormat):
            load_wav(p)

    def test_garbage_rejected(self, tmp_path):
        p = tmp_path / "bad.wav"
        p.write_bytes(b"not a riff file at all")
        with pytest.raises(MalformedContainer):
            load_wav(p)

    def test_roundtrip_identity(self, tmp_path, rng):
        raw = rng.integers(-32768, 32768, size=5000).astype(np.int16)
        samples = raw / 32768.0
        p = make_wav(tmp_path / "rt.wav", samples, rate=4000)
        rec = load_wav(p)
        assert np.array_equal(rec.samples, samples)
        assert rec.sample_rate == 4000


class TestResample:
    def test_constant_survives_downsampling(self):
        rec = AudioRecording(samples=np.full(8000, 0.5), sample_rate=4000)
        out = resample(rec, 2000)
        assert out.sample_rate == 2000
        assert len(out.samples) == 4000
        interior = out.samples[64:-64]
        assert np.max(np.abs(interior - 0.5)) < 1e-3

    def test_tone_frequency_preserved(self):
        # 100 Hz sine at 8000 Hz for 2 s: after resampling to 2000 Hz the
        # length-4000 DFT argmax must sit on the 100 Hz bin.
        t = np.arange(16000) / 8000.0
        rec = AudioRecording(samples=np.sin(2 * np.pi * 100.0 * t),
                             sample_rate=8000)
        out = resample(rec, 2000)
        assert len(out.samples) == 4000
        spec = np.abs(np.fft.rfft(out.samples))
        assert np.argmax(spec) == 100 * 4000 // 2000

    def test_identity_when_rates_match(self, rng):
        x = rng.normal(size=3000)
        rec = AudioRecording(samples=x, sample_rate=2000)
        out = resample(rec, 2000)
        assert np.array_equal(out.samples, x)
        assert out.samples is not rec.samples  # a copy, not an alias

    def test_upsampling_length_law(self):
        rec = AudioRecording(samples=np.zeros(999), sample_rate=1500)
        out = resample(rec, 2000)
        assert len(out.samples) == round(999 * 2000 / 1500)

    def test_empty_input(self):
        rec = AudioRecording(samples=np.zeros(0), sample_rate=44100)
        out = resample(rec, 2000)
        assert len(out.samples) == 0
        assert out.sample_rate == 2000

    @pytest.mark.parametrize("src,freq", [(4000, 130.0), (44100, 300.0)])
    def test_tone_argmax_across_rates(self, src, freq):
        seconds = 2.0
        t = np.arange(int(src * seconds)) / src
        rec = AudioRecording(samples=np.sin(2 * np.pi * freq * t),
                             sample_rate=src)
        out = resample(rec, 2000)
        spec = np.abs(np.fft.rfft(out.samples))
        peak_hz = np.argmax(spec) * 2000.0 / len(out.samples)
        assert abs(peak_hz - freq) <= 2000.0 / len(out.samples)


class TestManifest:
    def test_physionet_counts_and_exclusion(self, physionet_tree):
        m = build_manifest([physionet_tree], DatasetKind.PHYSIONET)
        # 6 labeled rows, one of them uncertain (excluded)
        assert len(m) == 5
        counts = m.counts()
        assert counts[Label.NORMAL] == 3
        assert counts[Label.ABNORMAL] == 2
        assert all(e.dataset is Dataset.PHYSIONET for e in m.entries)

    def test_physionet_unlabeled_recording(self, physionet_tree):
        make_wav(physionet_tree / "training-a" / "a9999.wav", np.zeros(100))
        with pytest.raises(UnlabeledRecording):
            build_manifest([physionet_tree], DatasetKind.PHYSIONET)

    def test_physionet_missing_reference(self, tmp_path):
        d = tmp_path / "training-x"
        d.mkdir()
        make_wav(d / "x0001.wav", np.zeros(100))
        with pytest.raises(MissingLabelFile):
            build_manifest([tmp_path], DatasetKind.PHYSIONET)

    def test_pascal_classes_and_subsets(self, pascal_tree):
        m = build_manifest([pascal_tree], DatasetKind.PASCAL)
        assert len(m) == 7  # unlabelled test folder skipped
        counts = m.counts()
        assert counts[Label.NORMAL] == 4
        assert counts[Label.ABNORMAL] == 3
        subsets = {e.dataset for e in m.entries}
        assert subsets == {Dataset.PASCAL_A, Dataset.PASCAL_B}

    def test_pascal_unknown_folder(self, pascal_tree):
        d = pascal_tree / "Atraining_mystery"
        d.mkdir()
        make_wav(d / "odd.wav", np.zeros(100))
        with pytest.raises(UnlabeledRecording):
            build_manifest([pascal_tree], DatasetKind.PASCAL)

    def test_empty_root(self, tmp_path):
        m = build_manifest([tmp_path], DatasetKind.PHYSIONET)
        assert len(m) == 0
        assert m.counts() == {Label.NORMAL: 0, Label.ABNORMAL: 0}

    def test_counts_sum_to_total(self, physionet_tree, pascal_tree):
        for root, kind in ((physionet_tree, DatasetKind.PHYSIONET),
                           (pascal_tree, DatasetKind.PASCAL)):
            m = build_manifest([root], kind)
            assert sum(m.counts().values()) == len(m)

    def test_csv_roundtrip(self, physionet_tree, tmp_path):
        m = build_manifest([physionet_tree], DatasetKind.PHYSIONET)
        path = tmp_path / "manifest.csv"
        write_manifest(m, path)
        header = path.read_text().splitlines()[0]
        assert header == "path,label,dataset,source_id"
        back = read_manifest(path)
        assert back.entries == m.entries
