"""
Dataset ingestion: LJSpeech-style metadata, CMUdict lexicons and manifests.
"""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import soundfile as sf
import yaml

from ..exceptions import DomainError, IngestError

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
Lexicon = Dict[str, List[List[str]]]

_VARIANT = re.compile(r"^(?P<word>.+)\((?P<n>\d+)\)$")


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    audio_path: str
    transcript: str
    sample_rate: Optional[int] = None


@dataclass
class DatasetManifest:
    """
    Utterances plus their train/val/test assignment.

    Invariants: ids are unique; when splits are present they are disjoint and
    together cover every id.
    """

    entries: List[ManifestEntry]
    splits: Dict[str, List[str]] = field(default_factory=dict)

    def __post_init__(self):
        ids = [e.utt_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DomainError(f"duplicate utterance ids: {dupes[:10]}")
        if self.splits:
            assigned = [i for name in SPLITS for i in self.splits.get(name, [])]
            if len(set(assigned)) != len(assigned) or set(assigned) != set(ids):
                raise DomainError("splits must be disjoint and cover every utterance")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> List[str]:
        return [e.utt_id for e in self.entries]

    def by_id(self) -> Dict[str, ManifestEntry]:
        return {e.utt_id: e for e in self.entries}

    def split(self, name: str) -> List[ManifestEntry]:
        if name not in SPLITS:
            raise DomainError(f"unknown split {name!r}")
        index = self.by_id()
        return [index[i] for i in self.splits.get(name, [])]

    def subset(self, ids: Sequence[str]) -> "DatasetManifest":
        """Manifest restricted to ``ids``, keeping each id's split."""
        keep = set(ids)
        entries = [e for e in self.entries if e.utt_id in keep]
        splits = {name: [i for i in self.splits.get(name, []) if i in keep] for name in SPLITS} if self.splits else {}
        return DatasetManifest(entries, splits)

    def save(self, path: Union[str, Path]) -> None:
        data = {"entries": [asdict(e) for e in self.entries], "splits": self.splits}
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(data, fh, sort_keys=False, allow_unicode=True)

    @classmethod
    def load(cls, path: Union[str, Path], check_files: bool = True) -> "DatasetManifest":
        """
        Raises:
            IngestError: If referenced audio files are missing (with check_files)
        """
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        manifest = cls([ManifestEntry(**e) for e in data["entries"]], data.get("splits") or {})
        if check_files:
            missing = [e.utt_id for e in manifest.entries if not Path(e.audio_path).is_file()]
            if missing:
                raise IngestError("audio files referenced by the manifest are missing",
                                  path=str(path), missing_ids=missing)
        return manifest


def split_counts(n: int, fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)) -> Tuple[int, int, int]:
    """(train, val, test) sizes; val and test are rounded, train takes the rest."""
    n_val = int(round(n * fractions[1]))
    n_test = int(round(n * fractions[2]))
    n_val = min(n_val, n)
    n_test = min(n_test, n - n_val)
    return n - n_val - n_test, n_val, n_test


def assign_splits(ids: Sequence[str], fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> Dict[str, List[str]]:
    """Seeded shuffle of the sorted ids, cut into train/val/test (each kept sorted)."""
    order = np.random.default_rng(seed).permutation(sorted(ids)).tolist()
    n_train, n_val, _ = split_counts(len(order), fractions)
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return {name: sorted(part) for name, part in zip(SPLITS, parts)}


def ingest_ljspeech(metadata_path: Union[str, Path], wav_dir: Optional[Union[str, Path]] = None,
                    fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1), seed: int = 0,
                    read_headers: bool = True) -> DatasetManifest:
    """
    Parse ``id|raw text|normalized text`` metadata into a split manifest.

    Args:
        metadata_path: Pipe-delimited metadata file
        wav_dir: Directory holding ``<id>.wav`` (defaults to ``wavs/`` next to the metadata)
        fractions: train/val/test fractions
        seed: Split seed
        read_headers: Record each file's sample rate from its WAV header

    Returns:
        DatasetManifest using the normalized transcript column

    Raises:
        IngestError: A malformed line (with its line number) or missing wav files (with their ids)

    Example:
        ``LJ001-0001|Printing, in the only sense|Printing, in the only sense``
    """
    metadata_path = Path(metadata_path)
    wav_dir = Path(wav_dir) if wav_dir is not None else metadata_path.parent / "wavs"
    entries: List[ManifestEntry] = []
    seen = set()
    with open(metadata_path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("|")
            if len(fields) != 3:
                raise IngestError(f"expected 3 '|'-separated fields, found {len(fields)}",
                                  path=str(metadata_path), line_number=line_number)
            utt_id, _, normalized = (f.strip() for f in fields)
            if not utt_id or not normalized:
                raise IngestError("empty id or normalized transcript", path=str(metadata_path),
                                  line_number=line_number)
            if utt_id in seen:
                raise IngestError(f"duplicate id {utt_id!r}", path=str(metadata_path), line_number=line_number)
            seen.add(utt_id)
            entries.append(ManifestEntry(utt_id, str(wav_dir / f"{utt_id}.wav"), normalized))

    missing = [e.utt_id for e in entries if not Path(e.audio_path).is_file()]
    if missing:
        raise IngestError("wav files are missing", path=str(wav_dir), missing_ids=missing)
    if read_headers:
        entries = [ManifestEntry(e.utt_id, e.audio_path, e.transcript, sf.info(e.audio_path).samplerate)
                   for e in entries]
    manifest = DatasetManifest(entries, assign_splits([e.utt_id for e in entries], fractions, seed))
    logger.info("ingested %d utterances from %s (split %s)", len(entries), metadata_path,
                "/".join(str(len(manifest.splits[s])) for s in SPLITS))
    return manifest


def read_pcm16(path: Union[str, Path]) -> Tuple[np.ndarray, int]:
    """
    Read a 16-bit PCM WAV file as float64 samples in [-1, 1); multichannel audio is averaged.

    Raises:
        IngestError: If the file is not 16-bit PCM WAV
    """
    try:
        info = sf.info(str(path))
    except RuntimeError as e:
        raise IngestError(f"unreadable audio: {e}", path=str(path)) from e
    if info.format != "WAV" or info.subtype != "PCM_16":
        raise IngestError(f"only 16-bit PCM WAV is accepted, got {info.format}/{info.subtype}", path=str(path))
    data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    return data.mean(axis=1), sample_rate


def ingest_cmudict(path: Union[str, Path], encoding: str = "latin-1") -> Lexicon:
    """
    Parse a CMU pronouncing dictionary.

    ``WORD(n)`` variant lines are merged into WORD's pronunciation list in file
    order; ``;;;`` lines are comments.

    Raises:
        IngestError: A headword without a pronunciation (with its line number)
    """
    lexicon: Lexicon = {}
    with open(path, encoding=encoding) as fh:
        for line_number, line in enumerate(fh, start=1):
            if line.startswith(";;;") or not line.strip():
                continue
            line = line.split(" #", 1)[0]
            parts = line.split()
            word, phones = parts[0], parts[1:]
            if not phones:
                raise IngestError(f"empty pronunciation for {word!r}", path=str(path), line_number=line_number)
            variant = _VARIANT.match(word)
            if variant:
                word = variant.group("word")
            lexicon.setdefault(word, []).append(phones)
    logger.info("ingested %d headwords (%d pronunciations) from %s", len(lexicon),
                sum(len(v) for v in lexicon.values()), path)
    return lexicon


def write_cmudict(lexicon: Lexicon, path: Union[str, Path], encoding: str = "latin-1") -> None:
    """Write ``WORD  PH ...`` lines, further pronunciations as ``WORD(2)``, ``WORD(3)`` ..."""
    with open(path, "w", encoding=encoding) as fh:
        for word, prons in lexicon.items():
            for n, pron in enumerate(prons, start=1):
                head = word if n == 1 else f"{word}({n})"
                fh.write(f"{head}  {' '.join(pron)}\n")


def split_lexicon(lexicon: Lexicon, fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1),
                  seed: int = 0, max_words: Optional[int] = None) -> Dict[str, Lexicon]:
    """Seeded word-level train/val/test split (optionally of a seeded subset of ``max_words``)."""
    words = sorted(lexicon)
    if max_words is not None and max_words < len(words):
        words = sorted(np.random.default_rng(seed).choice(words, size=max_words, replace=False).tolist())
    parts = assign_splits(words, fractions, seed)
    return {name: {w: lexicon[w] for w in parts[name]} for name in SPLITS}
