import numpy as np
import pytest
import soundfile as sf

from unitg2p.exceptions import DomainError, IngestError
from unitg2p.pipeline.ingest import (
    SPLITS,
    DatasetManifest,
    ManifestEntry,
    assign_splits,
    ingest_cmudict,
    ingest_ljspeech,
    read_pcm16,
    split_counts,
    split_lexicon,
    write_cmudict,
)


def _write_ljspeech(root, n=10, rate=22050):
    wavs = root / "wavs"
    wavs.mkdir(parents=True)
    lines = []
    for i in range(n):
        utt_id = f"LJ001-{i:04d}"
        sf.write(str(wavs / f"{utt_id}.wav"), np.zeros(rate // 10), rate, subtype="PCM_16")
        lines.append(f"{utt_id}|Raw text {i}, Mr. Smith|raw text {i}, mister smith\n")
    (root / "metadata.csv").write_text("".join(lines), encoding="utf-8")
    return root / "metadata.csv"


def test_ljspeech_split_and_columns(tmp_path):
    manifest = ingest_ljspeech(_write_ljspeech(tmp_path), seed=0)
    assert len(manifest) == 10
    assert tuple(len(manifest.splits[s]) for s in SPLITS) == (8, 1, 1)
    entry = manifest.by_id()["LJ001-0003"]
    assert entry.transcript == "raw text 3, mister smith"
    assert entry.sample_rate == 22050
    assert entry.audio_path.endswith("wavs/LJ001-0003.wav")


def test_ljspeech_split_is_seeded(tmp_path):
    metadata = _write_ljspeech(tmp_path)
    assert ingest_ljspeech(metadata, seed=4).splits == ingest_ljspeech(metadata, seed=4).splits
    assert ingest_ljspeech(metadata, seed=4, read_headers=False).entries[0].sample_rate is None


def test_ljspeech_malformed_line(tmp_path):
    metadata = _write_ljspeech(tmp_path, n=3)
    with open(metadata, "a", encoding="utf-8") as fh:
        fh.write("LJ001-0099|only two fields\n")
    with pytest.raises(IngestError) as excinfo:
        ingest_ljspeech(metadata)
    assert excinfo.value.line_number == 4
    assert ":4:" in str(excinfo.value)


def test_ljspeech_missing_wavs(tmp_path):
    metadata = _write_ljspeech(tmp_path, n=4)
    (tmp_path / "wavs" / "LJ001-0002.wav").unlink()
    with pytest.raises(IngestError) as excinfo:
        ingest_ljspeech(metadata)
    assert excinfo.value.missing_ids == ["LJ001-0002"]


def test_split_counts():
    assert split_counts(10) == (8, 1, 1)
    assert split_counts(8) == (6, 1, 1)
    assert split_counts(1) == (1, 0, 0)
    assert sum(split_counts(1234, (0.7, 0.2, 0.1))) == 1234


def test_assign_splits_partitions_ids():
    ids = [f"u{i}" for i in range(37)]
    splits = assign_splits(ids, seed=3)
    assigned = [i for s in SPLITS for i in splits[s]]
    assert sorted(assigned) == sorted(ids)
    assert assign_splits(list(reversed(ids)), seed=3) == splits


def test_read_pcm16_rejects_float(tmp_path):
    path = tmp_path / "f.wav"
    sf.write(str(path), np.zeros(100), 16000, subtype="FLOAT")
    with pytest.raises(IngestError):
        read_pcm16(path)


def test_read_pcm16_averages_channels(tmp_path):
    path = tmp_path / "s.wav"
    stereo = np.stack([np.full(50, 0.5), np.full(50, -0.25)], axis=1)
    sf.write(str(path), stereo, 16000, subtype="PCM_16")
    audio, rate = read_pcm16(path)
    assert rate == 16000
    assert audio.shape == (50,)
    np.testing.assert_allclose(audio, 0.125, atol=1e-4)


def test_read_pcm16_of_garbage(tmp_path):
    path = tmp_path / "x.wav"
    path.write_bytes(b"not audio at all")
    with pytest.raises(IngestError):
        read_pcm16(path)


CMUDICT_SAMPLE = """;;; sample dictionary
;;; comment lines are skipped
ABANDON  AH0 B AE1 N D AH0 N
READ  R EH1 D
READ(2)  R IY1 D
TOMATO  T AH0 M EY1 T OW2 # common
TOMATO(2)  T AH0 M AA1 T OW2
"""


def test_cmudict_parsing(tmp_path):
    path = tmp_path / "cmudict.dict"
    path.write_text(CMUDICT_SAMPLE, encoding="latin-1")
    lexicon = ingest_cmudict(path)
    assert lexicon["ABANDON"] == [["AH0", "B", "AE1", "N", "D", "AH0", "N"]]
    assert lexicon["READ"] == [["R", "EH1", "D"], ["R", "IY1", "D"]]
    assert lexicon["TOMATO"][0] == ["T", "AH0", "M", "EY1", "T", "OW2"]
    assert set(lexicon) == {"ABANDON", "READ", "TOMATO"}


def test_cmudict_empty_pronunciation(tmp_path):
    path = tmp_path / "cmudict.dict"
    path.write_text("CAT  K AE1 T\nDOG\n", encoding="latin-1")
    with pytest.raises(IngestError) as excinfo:
        ingest_cmudict(path)
    assert excinfo.value.line_number == 2


def test_cmudict_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    phones = ["AA1", "B", "K", "IY0", "S", "T", "ER0"]
    lexicon = {}
    while sum(len(v) for v in lexicon.values()) < 100:
        word = "".join(rng.choice(list("ABCDEFGHIJ"), size=int(rng.integers(2, 7))))
        lexicon.setdefault(word, []).append(rng.choice(phones, size=int(rng.integers(1, 6))).tolist())
    path = tmp_path / "out.dict"
    write_cmudict(lexicon, path)
    assert ingest_cmudict(path) == lexicon


def test_split_lexicon():
    lexicon = {f"W{i:03d}": [["P"]] for i in range(50)}
    parts = split_lexicon(lexicon, seed=1)
    assert sorted(w for p in parts.values() for w in p) == sorted(lexicon)
    assert tuple(len(parts[s]) for s in SPLITS) == (40, 5, 5)
    small = split_lexicon(lexicon, seed=1, max_words=20)
    assert sum(len(p) for p in small.values()) == 20


def test_manifest_round_trip(tmp_path):
    manifest = ingest_ljspeech(_write_ljspeech(tmp_path), seed=2)
    manifest.save(tmp_path / "manifest.yaml")
    back = DatasetManifest.load(tmp_path / "manifest.yaml")
    assert back.entries == manifest.entries
    assert back.splits == manifest.splits
    assert [e.utt_id for e in back.split("val")] == manifest.splits["val"]


def test_manifest_with_missing_audio(tmp_path):
    manifest = DatasetManifest([ManifestEntry("a", str(tmp_path / "a.wav"), "text")])
    manifest.save(tmp_path / "m.yaml")
    with pytest.raises(IngestError) as excinfo:
        DatasetManifest.load(tmp_path / "m.yaml")
    assert excinfo.value.missing_ids == ["a"]
    assert len(DatasetManifest.load(tmp_path / "m.yaml", check_files=False)) == 1


def test_manifest_invariants(tmp_path):
    a = ManifestEntry("a", "a.wav", "x")
    b = ManifestEntry("b", "b.wav", "y")
    with pytest.raises(DomainError):
        DatasetManifest([a, a])
    with pytest.raises(DomainError):
        DatasetManifest([a, b], {"train": ["a"], "val": [], "test": []})
    manifest = DatasetManifest([a, b], {"train": ["a"], "val": ["b"], "test": []})
    assert manifest.subset(["b"]).splits == {"train": [], "val": ["b"], "test": []}
    with pytest.raises(DomainError):
        manifest.split("dev")


def test_toy_corpus_is_ingestible(toy_corpus_dir):
    manifest = ingest_ljspeech(toy_corpus_dir / "metadata.csv")
    assert len(manifest) == 8
    assert tuple(len(manifest.splits[s]) for s in SPLITS) == (6, 1, 1)
    audio, rate = read_pcm16(manifest.entries[0].audio_path)
    assert rate == 16000
    assert np.max(np.abs(audio)) <= 1.0
