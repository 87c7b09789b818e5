"""
Deterministic synthetic toy language.

Every phoneme is rendered as a short sum of sinusoids whose frequencies are
unique to it, so frame-level gold labels and a grapheme transcript are known
exactly. Corpora are written in the same layout the pipeline ingests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import soundfile as sf
import yaml

from .config.settings import FramingConfig, ToyLanguageSpec
from .dsp import frame_count
from .exceptions import DomainError, IngestError

logger = logging.getLogger(__name__)

MIN_FREQ_HZ = 200.0
MAX_FREQ_HZ = 6000.0
PARTIAL_AMPLITUDES = (1.0, 0.6, 0.4)
PEAK_AMPLITUDE = 0.5


@dataclass
class LabeledUtterance:
    utt_id: str
    audio: np.ndarray
    sample_rate: int
    transcript: str
    gold_frame_labels: np.ndarray
    phonemes: List[int] = field(default_factory=list)
    boundaries: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))

    @property
    def duration_s(self) -> float:
        return len(self.audio) / self.sample_rate


def phoneme_partials(phoneme_id: int, spec: ToyLanguageSpec) -> np.ndarray:
    """
    Partial frequencies (Hz) of a phoneme's spectral template.

    The 200-6000 Hz range is cut into 3*P slots; phoneme ``i`` owns slots
    ``i``, ``i + P`` and (for odd ids) ``i + 2P``, so no two phonemes share a
    frequency and each template spans the low, mid and high bands.
    """
    size = spec.inventory_size
    if not 0 <= phoneme_id < size:
        raise DomainError(f"Unknown phoneme id {phoneme_id}; inventory has {size} phonemes")
    nyquist = spec.sample_rate / 2.0
    top = min(MAX_FREQ_HZ, 0.9 * nyquist)
    step = (top - MIN_FREQ_HZ) / (3 * size)
    n_partials = 2 + (phoneme_id % 2)
    slots = [phoneme_id + j * size for j in range(n_partials)]
    return np.array([MIN_FREQ_HZ + s * step for s in slots], dtype=np.float64)


def _render_samples(phoneme_id: int, n_samples: int, spec: ToyLanguageSpec) -> np.ndarray:
    freqs = phoneme_partials(phoneme_id, spec)
    t = np.arange(n_samples, dtype=np.float64) / spec.sample_rate
    wave = np.zeros(n_samples, dtype=np.float64)
    for amp, freq in zip(PARTIAL_AMPLITUDES, freqs):
        wave += amp * np.sin(2.0 * np.pi * freq * t)
    peak = np.max(np.abs(wave)) if n_samples else 0.0
    if peak > 0:
        wave *= PEAK_AMPLITUDE / peak
    return wave


def render_phoneme(phoneme_id: int, duration_ms: float, spec: ToyLanguageSpec) -> np.ndarray:
    """
    Render one phoneme.

    Args:
        phoneme_id: Phoneme to render
        duration_ms: Duration; the sample count is round(duration * rate)
        spec: Toy language definition

    Returns:
        Waveform normalized to peak amplitude 0.5

    Raises:
        DomainError: Unknown phoneme id, or a duration that yields no samples
    """
    if not 0 <= phoneme_id < spec.inventory_size:
        raise DomainError(f"Unknown phoneme id {phoneme_id}; inventory has {spec.inventory_size} phonemes")
    n_samples = int(round(duration_ms * spec.sample_rate / 1000.0))
    if n_samples <= 0:
        raise DomainError(f"Duration {duration_ms} ms renders to zero samples")
    return _render_samples(phoneme_id, n_samples, spec)


def _graphemes_by_phoneme(spec: ToyLanguageSpec) -> Dict[int, List[str]]:
    table: Dict[int, List[str]] = {}
    for grapheme, pid in sorted(spec.grapheme_map.items()):
        table.setdefault(pid, []).append(grapheme)
    return table


def pronounce(word: str, spec: ToyLanguageSpec) -> List[int]:
    """
    Phoneme ids of a toy-language word by greedy longest-grapheme match.

    Raises:
        DomainError: If the word cannot be segmented into known graphemes
    """
    graphemes = sorted(spec.grapheme_map, key=len, reverse=True)
    out: List[int] = []
    pos = 0
    while pos < len(word):
        for g in graphemes:
            if word.startswith(g, pos):
                out.append(spec.grapheme_map[g])
                pos += len(g)
                break
        else:
            raise DomainError(f"'{word}' has no grapheme at position {pos}")
    return out


def _overlap_add(phonemes: Sequence[int], lengths: Sequence[int], spec: ToyLanguageSpec) -> np.ndarray:
    boundaries = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    total = int(boundaries[-1])
    fade = int(round(spec.crossfade_ms * spec.sample_rate / 1000.0))
    half = fade // 2
    last = len(phonemes) - 1
    out = np.zeros(total, dtype=np.float64)
    ramp_up = np.linspace(0.0, 1.0, fade) if fade else np.zeros(0)
    for k, pid in enumerate(phonemes):
        start = int(boundaries[k]) - (half if k > 0 else 0)
        stop = int(boundaries[k + 1]) + (fade - half if k < last else 0)
        seg = _render_samples(pid, stop - start, spec)
        if fade:
            if k > 0:
                seg[:fade] *= ramp_up
            if k < last:
                seg[-fade:] *= ramp_up[::-1]
        out[start:stop] += seg
    return out


def frame_labels_from_boundaries(boundaries: np.ndarray, phonemes: Sequence[int],
                                 n_samples: int, framing: FramingConfig) -> np.ndarray:
    """Label each frame with the segment that covers its center sample."""
    n_frames = frame_count(n_samples, framing)
    centers = np.arange(n_frames, dtype=np.int64) * framing.hop_samples + framing.frame_samples // 2
    seg_index = np.searchsorted(boundaries[1:], centers, side="right")
    return np.asarray(phonemes, dtype=np.int64)[seg_index]


def generate_corpus(spec: ToyLanguageSpec, n_words: int, words_per_utterance: int,
                    framing: Optional[FramingConfig] = None) -> List[LabeledUtterance]:
    """
    Generate a labeled toy corpus.

    Args:
        spec: Toy language definition (its seed drives every random choice)
        n_words: Total number of words across the corpus
        words_per_utterance: Words per utterance (the last one may be shorter)
        framing: Framing used for gold frame labels (defaults to the standard
            25 ms / 10 ms framing at the language's sample rate)

    Returns:
        Utterances with audio, transcript and per-frame gold labels

    Raises:
        DomainError: n_words < 1, words_per_utterance < 1, or a framing whose
            sample rate differs from the language's
    """
    if n_words < 1 or words_per_utterance < 1:
        raise DomainError("n_words and words_per_utterance must be >= 1")
    framing = framing or FramingConfig(sample_rate=spec.sample_rate)
    if framing.sample_rate != spec.sample_rate:
        raise DomainError("framing sample rate must match the toy language sample rate")

    rng = np.random.default_rng(spec.seed)
    spellings = _graphemes_by_phoneme(spec)
    lo_ms, hi_ms = spec.segment_duration_ms
    pmin, pmax = spec.phonemes_per_word

    corpus: List[LabeledUtterance] = []
    words_left = n_words
    index = 0
    while words_left > 0:
        n_here = min(words_per_utterance, words_left)
        words_left -= n_here
        phonemes: List[int] = []
        words: List[str] = []
        for _ in range(n_here):
            length = int(rng.integers(pmin, pmax + 1))
            ids = rng.integers(0, spec.inventory_size, size=length).tolist()
            phonemes.extend(ids)
            words.append("".join(spellings[i][int(rng.integers(len(spellings[i])))] for i in ids))
        durations = rng.uniform(lo_ms, hi_ms, size=len(phonemes))
        lengths = np.maximum(1, np.round(durations * spec.sample_rate / 1000.0)).astype(np.int64)
        audio = _overlap_add(phonemes, lengths, spec)
        boundaries = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        labels = frame_labels_from_boundaries(boundaries, phonemes, len(audio), framing)
        corpus.append(LabeledUtterance(
            utt_id=f"SYN{index:05d}",
            audio=audio,
            sample_rate=spec.sample_rate,
            transcript=" ".join(words),
            gold_frame_labels=labels,
            phonemes=phonemes,
            boundaries=boundaries,
        ))
        index += 1

    logger.info("generated %d toy utterances (%d words, %.1f s of audio)",
                len(corpus), n_words, sum(u.duration_s for u in corpus))
    return corpus


def write_corpus(corpus: Sequence[LabeledUtterance], out_dir: Union[str, Path],
                 spec: ToyLanguageSpec) -> Path:
    """
    Write a corpus in the ingestible on-disk layout.

    Layout:
        metadata.csv          ``id|text|text`` per utterance
        wavs/<id>.wav         mono 16-bit PCM
        labels/<id>.lab       one gold phoneme id per frame
        language.yaml         the ToyLanguageSpec

    Returns:
        Path of the written metadata file
    """
    out = Path(out_dir)
    (out / "wavs").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    lines = []
    for utt in corpus:
        sf.write(str(out / "wavs" / f"{utt.utt_id}.wav"), utt.audio, utt.sample_rate, subtype="PCM_16")
        (out / "labels" / f"{utt.utt_id}.lab").write_text(
            "".join(f"{int(x)}\n" for x in utt.gold_frame_labels), encoding="utf-8")
        lines.append(f"{utt.utt_id}|{utt.transcript}|{utt.transcript}\n")
    metadata = out / "metadata.csv"
    metadata.write_text("".join(lines), encoding="utf-8")
    with open(out / "language.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(spec.model_dump(mode="json"), fh, sort_keys=True)
    logger.info("wrote %d utterances to %s", len(corpus), out)
    return metadata


def load_language(path: Union[str, Path]) -> ToyLanguageSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return ToyLanguageSpec.model_validate(yaml.safe_load(fh))


def load_gold_labels(corpus_dir: Union[str, Path], utt_ids: Sequence[str]) -> Dict[str, np.ndarray]:
    """
    Read per-frame gold label sidecars.

    Raises:
        IngestError: If a sidecar is missing or contains a non-integer line
    """
    labels_dir = Path(corpus_dir) / "labels"
    missing = [u for u in utt_ids if not (labels_dir / f"{u}.lab").is_file()]
    if missing:
        raise IngestError("gold label sidecars are missing", path=str(labels_dir), missing_ids=missing)
    out: Dict[str, np.ndarray] = {}
    for utt_id in utt_ids:
        path = labels_dir / f"{utt_id}.lab"
        values = []
        for line_number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                values.append(int(line))
            except ValueError:
                raise IngestError(f"not an integer label: {line!r}", path=str(path), line_number=line_number)
        out[utt_id] = np.asarray(values, dtype=np.int64)
    return out


def toy_lexicon(corpus: Sequence[LabeledUtterance], spec: ToyLanguageSpec) -> Dict[str, List[List[str]]]:
    """Word -> pronunciations table of every word in a toy corpus."""
    lexicon: Dict[str, List[List[str]]] = {}
    for utt in corpus:
        for word in utt.transcript.split():
            pron = [str(p) for p in pronounce(word, spec)]
            entry = lexicon.setdefault(word, [])
            if pron not in entry:
                entry.append(pron)
    return lexicon
