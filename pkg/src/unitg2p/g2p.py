"""
Transformer encoder-decoder mapping graphemes to phonemes or discovered units.

Two training modes share the model: ``unit`` pairs whole utterances with
their (collapsed) unit sequences, ``lexicon`` pairs single words with one
pronunciation each.
"""

from __future__ import annotations

import contextlib
import copy
import logging
import math
import string
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config.settings import G2PConfig, OptimizerConfig
from .exceptions import DomainError
from .nn.functional import causal_mask
from .nn.io import load_module_state, save_module
from .nn.layers import DecoderLayer, EncoderLayer, PositionalEncoding, padding_mask, xavier_init_
from .nn.optim import adam_step, build_optimizer

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED_SYMBOLS = ("<pad>", "<s>", "</s>", "<unk>")
OUTPUT_INIT_GAIN = 0.1

MODEL_FILE = "g2p.ugpt"
GRAPHEME_VOCAB_FILE = "graphemes.vocab"
OUTPUT_VOCAB_FILE = "outputs.vocab"


class Vocab:
    """
    Symbol table with reserved PAD=0, BOS=1, EOS=2, UNK=3 followed by the
    sorted corpus symbols.
    """

    def __init__(self, symbols: Iterable[str]):
        unique = sorted(set(symbols) - set(RESERVED_SYMBOLS))
        self.symbols: List[str] = list(RESERVED_SYMBOLS) + unique
        self._ids: Dict[str, int] = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.symbols == other.symbols

    def id_of(self, symbol: str) -> int:
        return self._ids.get(symbol, UNK)

    def encode(self, symbols: Iterable[str]) -> List[int]:
        return [self.id_of(s) for s in symbols]

    def decode(self, ids: Iterable[int]) -> List[str]:
        """Map ids back to symbols, dropping reserved ids."""
        return [self.symbols[i] for i in ids if i >= len(RESERVED_SYMBOLS)]

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, s in enumerate(self.symbols):
                fh.write(f"{s}\t{i}\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line_number, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                symbol, _, idx = line.rpartition("\t")
                if not idx.isdigit():
                    raise DomainError(f"{path}:{line_number}: malformed vocab line")
                rows.append((int(idx), symbol))
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))) or tuple(s for _, s in rows[:4]) != RESERVED_SYMBOLS:
            raise DomainError(f"{path}: vocab ids are not contiguous or reserved symbols are missing")
        vocab = cls(s for _, s in rows[4:])
        if vocab.symbols != [s for _, s in rows]:
            raise DomainError(f"{path}: vocab symbols are not in sorted order")
        return vocab


@dataclass(frozen=True)
class GraphemeSequence:
    raw_text: str
    tokens: Tuple[int, ...]

    @classmethod
    def from_text(cls, text: str, vocab: Vocab) -> "GraphemeSequence":
        return cls(text, tuple(vocab.encode(text)))

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class PhonemeSequence:
    """Surfaced output symbols (unit ids as strings, or ARPABET symbols)."""

    symbols: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.symbols)

    def units(self) -> List[int]:
        return [int(s) for s in self.symbols]

    def __str__(self) -> str:
        return " ".join(self.symbols)


def build_vocab(corpus: Sequence[Tuple[str, Sequence]]) -> Tuple[Vocab, Vocab]:
    """
    Grapheme and output vocabularies covering every symbol of ``corpus``.

    Raises:
        DomainError: If the corpus is empty
    """
    if not corpus:
        raise DomainError("cannot build vocabularies from an empty corpus")
    graphemes = set()
    outputs = set()
    for text, target in corpus:
        graphemes.update(text)
        outputs.update(str(s) for s in target)
    return Vocab(graphemes), Vocab(outputs)


def _is_punctuation(ch: str) -> bool:
    return ch in string.punctuation or unicodedata.category(ch).startswith("P")


def chunk_words(text: str, keep: str = "'") -> List[str]:
    """
    Split on whitespace and strip punctuation outside ``keep``.

    Example:
        >>> chunk_words("don't stop.")
        ["don't", 'stop']
    """
    words = []
    for raw in text.split():
        word = "".join(ch for ch in raw if ch in keep or not _is_punctuation(ch))
        if word:
            words.append(word)
    return words


def normalize_text(text: str, keep: str = "'") -> str:
    """Words of ``text`` joined by single spaces; the utterance-level G2P input."""
    return " ".join(chunk_words(text, keep))


class G2PModel(nn.Module):
    def __init__(self, cfg: G2PConfig, src_vocab: Vocab, tgt_vocab: Vocab, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.src_embed = nn.Embedding(len(src_vocab), cfg.d_model, padding_idx=PAD)
        self.tgt_embed = nn.Embedding(len(tgt_vocab), cfg.d_model, padding_idx=PAD)
        self.positions = PositionalEncoding(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)
        self.encoder_layers = nn.ModuleList(
            EncoderLayer(cfg.d_model, cfg.n_heads, cfg.ffn_dim, cfg.dropout) for _ in range(cfg.enc_layers)
        )
        self.decoder_layers = nn.ModuleList(
            DecoderLayer(cfg.d_model, cfg.n_heads, cfg.ffn_dim, cfg.dropout) for _ in range(cfg.dec_layers)
        )
        self.output = nn.Linear(cfg.d_model, len(tgt_vocab))

        gen = torch.Generator().manual_seed(seed)
        xavier_init_(self, gen)
        nn.init.xavier_uniform_(self.output.weight, gain=OUTPUT_INIT_GAIN, generator=gen)
        nn.init.zeros_(self.output.bias)
        with torch.no_grad():
            self.src_embed.weight[PAD].zero_()
            self.tgt_embed.weight[PAD].zero_()

    def _embed(self, table: nn.Embedding, ids: torch.Tensor) -> torch.Tensor:
        return self.dropout(self.positions(table(ids) * math.sqrt(self.cfg.d_model)))

    def encode(self, src: torch.Tensor, src_lengths: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns (memory (B, S, d), source padding mask (B, S))."""
        s = src.shape[1]
        src_pad = padding_mask(src_lengths, s)
        self_mask = src_pad.unsqueeze(1).expand(-1, s, -1)
        h = self._embed(self.src_embed, src)
        for layer in self.encoder_layers:
            h = layer(h, self_mask)
        return h, src_pad

    def decode(self, tgt_in: torch.Tensor, memory: torch.Tensor, src_pad: torch.Tensor,
               tgt_lengths: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Logits (B, T, V) for each position of the (BOS-prefixed) decoder input."""
        t = tgt_in.shape[1]
        self_mask = causal_mask(t, device=tgt_in.device).unsqueeze(0)
        if tgt_lengths is not None:
            self_mask = self_mask & padding_mask(tgt_lengths, t).unsqueeze(1)
        else:
            self_mask = self_mask.expand(tgt_in.shape[0], -1, -1)
        cross_mask = src_pad.unsqueeze(1).expand(-1, t, -1)
        y = self._embed(self.tgt_embed, tgt_in)
        for layer in self.decoder_layers:
            y = layer(y, memory, self_mask, cross_mask)
        return self.output(y)

    def forward(self, src, src_lengths, tgt_in, tgt_lengths=None) -> torch.Tensor:
        memory, src_pad = self.encode(src, src_lengths)
        return self.decode(tgt_in, memory, src_pad, tgt_lengths)


TrainingPair = Tuple[Union[str, GraphemeSequence], Union[Sequence, PhonemeSequence]]


def _as_symbols(pair: TrainingPair) -> Tuple[str, List[str]]:
    text, target = pair
    if isinstance(text, GraphemeSequence):
        text = text.raw_text
    if isinstance(target, PhonemeSequence):
        target = target.symbols
    return text, [str(s) for s in target]


def _check_pairs(pairs: Sequence[Tuple[str, List[str]]], what: str) -> None:
    for i, (text, target) in enumerate(pairs):
        if not text:
            raise DomainError(f"{what} item {i}: empty grapheme sequence")
        if not target:
            raise DomainError(f"{what} item {i} ({text!r}): empty target sequence")


def _collate(pairs: Sequence[Tuple[str, List[str]]], src_vocab: Vocab, tgt_vocab: Vocab):
    src_ids = [src_vocab.encode(text) for text, _ in pairs]
    tgt_ids = [tgt_vocab.encode(target) for _, target in pairs]
    b = len(pairs)
    s = max(len(x) for x in src_ids)
    t = max(len(y) for y in tgt_ids) + 1
    src = torch.full((b, s), PAD, dtype=torch.long)
    tgt_in = torch.full((b, t), PAD, dtype=torch.long)
    tgt_out = torch.full((b, t), PAD, dtype=torch.long)
    for row, (x, y) in enumerate(zip(src_ids, tgt_ids)):
        src[row, :len(x)] = torch.tensor(x)
        tgt_in[row, :len(y) + 1] = torch.tensor([BOS] + y)
        tgt_out[row, :len(y) + 1] = torch.tensor(y + [EOS])
    src_lengths = torch.tensor([len(x) for x in src_ids])
    tgt_lengths = torch.tensor([len(y) + 1 for y in tgt_ids])
    return src, src_lengths, tgt_in, tgt_out, tgt_lengths


def g2p_loss(model: G2PModel, pairs: Sequence[TrainingPair]) -> torch.Tensor:
    """Teacher-forced cross-entropy over shifted targets, PAD positions excluded."""
    pairs = [_as_symbols(p) for p in pairs]
    _check_pairs(pairs, "batch")
    src, src_lengths, tgt_in, tgt_out, tgt_lengths = _collate(pairs, model.src_vocab, model.tgt_vocab)
    logits = model(src, src_lengths, tgt_in, tgt_lengths)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt_out.reshape(-1), ignore_index=PAD)


def _validation_loss(model: G2PModel, pairs: Sequence[Tuple[str, List[str]]], batch_size: int) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            batch = pairs[start:start + batch_size]
            n_tokens = sum(len(t) + 1 for _, t in batch)
            total += float(g2p_loss(model, batch)) * n_tokens
            count += n_tokens
    model.train()
    return total / count


@dataclass
class G2PHistory:
    train_losses: List[float] = field(default_factory=list)
    val_losses: List[Tuple[int, float]] = field(default_factory=list)
    best_step: Optional[int] = None


def train_g2p(pairs: Sequence[TrainingPair], cfg: G2PConfig, seed: int,
              val_pairs: Optional[Sequence[TrainingPair]] = None,
              optim_cfg: Optional[OptimizerConfig] = None) -> G2PModel:
    """
    Train a G2P model with teacher forcing.

    Args:
        pairs: (graphemes, target symbols) training items
        cfg: Model, schedule and decoding settings
        seed: Seed for initialization, batching and dropout
        val_pairs: Optional held-out items; when given, the returned weights are
            those with the lowest validation loss seen every ``eval_every`` steps
        optim_cfg: Adam betas/epsilon/clipping (lr and warmup come from ``cfg``)

    Returns:
        The trained model in eval mode; ``model.history`` holds the loss curves

    Raises:
        DomainError: Empty corpus, empty source or empty target sequences
    """
    items = [_as_symbols(p) for p in pairs]
    if not items:
        raise DomainError("cannot train on an empty corpus")
    _check_pairs(items, "training")
    val_items = [_as_symbols(p) for p in (val_pairs or [])]
    _check_pairs(val_items, "validation")
    src_vocab, tgt_vocab = build_vocab(items)
    optim_cfg = optim_cfg or OptimizerConfig()
    rng = np.random.default_rng(seed)
    history = G2PHistory()

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = G2PModel(cfg, src_vocab, tgt_vocab, seed)
        state = build_optimizer(model.parameters(), optim_cfg, cfg.max_steps,
                                peak_lr=cfg.lr, warmup_fraction=cfg.warmup_fraction)
        best_val, best_state = math.inf, None
        model.train()
        for step in range(1, cfg.max_steps + 1):
            idx = rng.choice(len(items), size=min(cfg.batch_size, len(items)), replace=False)
            loss = g2p_loss(model, [items[i] for i in idx])
            state.optimizer.zero_grad(set_to_none=True)
            loss.backward()
            lr = adam_step(state.params, None, state)
            history.train_losses.append(float(loss.item()))
            if step % cfg.log_every == 0 or step == 1:
                logger.info("g2p step %d/%d loss %.4f lr %.2e", step, cfg.max_steps, history.train_losses[-1], lr)
            if val_items and (step % cfg.eval_every == 0 or step == cfg.max_steps):
                val = _validation_loss(model, val_items, cfg.batch_size)
                history.val_losses.append((step, val))
                if val < best_val:
                    best_val, best_state, history.best_step = val, copy.deepcopy(model.state_dict()), step
                logger.info("g2p step %d validation loss %.4f (best %.4f @ %d)", step, val, best_val,
                            history.best_step)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    model.history = history
    return model


def _as_graphemes(model: G2PModel, graphemes: Union[str, GraphemeSequence]) -> GraphemeSequence:
    if isinstance(graphemes, str):
        graphemes = GraphemeSequence.from_text(graphemes, model.src_vocab)
    if len(graphemes) == 0:
        raise DomainError("cannot decode an empty grapheme sequence")
    return graphemes


@contextlib.contextmanager
def _inference(model: G2PModel):
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            yield
    finally:
        model.train(was_training)


def _next_log_probs(logits: torch.Tensor) -> torch.Tensor:
    logits = logits.clone()
    logits[..., [PAD, BOS, UNK]] = float("-inf")
    return F.log_softmax(logits, dim=-1)


def decode_cap(model: G2PModel, n_graphemes: int) -> int:
    return int(math.ceil(model.cfg.max_decode_ratio * n_graphemes))


def sequence_score(model: G2PModel, graphemes: Union[str, GraphemeSequence], tokens: Sequence[int]) -> float:
    """
    Length-normalized log-probability of an output id sequence.

    Sequences shorter than the decode cap are scored with their closing EOS;
    a sequence that reached the cap is scored without one.
    """
    graphemes = _as_graphemes(model, graphemes)
    tokens = list(tokens)
    finished = len(tokens) < decode_cap(model, len(graphemes))
    targets = tokens + ([EOS] if finished else [])
    if not targets:
        return 0.0
    src = torch.tensor([graphemes.tokens])
    with _inference(model):
        memory, src_pad = model.encode(src, torch.tensor([len(graphemes)]))
        logits = model.decode(torch.tensor([[BOS] + tokens[:len(targets) - 1]]), memory, src_pad)
        logp = _next_log_probs(logits[0]).gather(1, torch.tensor(targets).unsqueeze(1))
    return float(logp.sum()) / len(targets)


def _greedy(model: G2PModel, memory: torch.Tensor, src_pad: torch.Tensor, cap: int) -> List[int]:
    tokens: List[int] = []
    while len(tokens) < cap:
        logits = model.decode(torch.tensor([[BOS] + tokens]), memory, src_pad)
        nxt = int(torch.argmax(_next_log_probs(logits[0, -1])))
        if nxt == EOS:
            break
        tokens.append(nxt)
    return tokens


def _beam(model: G2PModel, memory: torch.Tensor, src_pad: torch.Tensor, cap: int, width: int) -> List[List[int]]:
    alive: List[Tuple[List[int], float]] = [([], 0.0)]
    finished: List[List[int]] = []
    while alive:
        prefixes = torch.tensor([[BOS] + toks for toks, _ in alive])
        n = len(alive)
        logits = model.decode(prefixes, memory.expand(n, -1, -1), src_pad.expand(n, -1))
        logp = _next_log_probs(logits[:, -1])
        candidates = []
        for row, (toks, score) in enumerate(alive):
            order = torch.argsort(logp[row], descending=True, stable=True)[:width]
            for tok in order.tolist():
                step_logp = float(logp[row, tok])
                if step_logp == float("-inf"):
                    # reserved ids; only reached when the beam is wider than the vocabulary
                    continue
                candidates.append((score + step_logp, toks, tok))
        candidates.sort(key=lambda c: -c[0])
        alive = []
        for score, toks, tok in candidates[:width]:
            if tok == EOS:
                finished.append(toks)
            elif len(toks) + 1 >= cap:
                finished.append(toks + [tok])
            else:
                alive.append((toks + [tok], score))
    return finished


def decode(model: G2PModel, graphemes: Union[str, GraphemeSequence], mode: Optional[str] = None,
           beam_width: Optional[int] = None) -> PhonemeSequence:
    """
    Autoregressive decoding from BOS until EOS or ceil(max_decode_ratio * n) tokens.

    Args:
        model: Trained model
        graphemes: Input text or encoded graphemes
        mode: ``greedy`` or ``beam`` (defaults to ``model.cfg.decode_mode``)
        beam_width: Overrides ``model.cfg.beam_width``

    Returns:
        The output symbols, without reserved tokens. In beam mode the
        finished hypothesis with the best length-normalized score; the greedy
        hypothesis competes too.

    Raises:
        DomainError: Empty input or an unknown mode
    """
    graphemes = _as_graphemes(model, graphemes)
    mode = mode or model.cfg.decode_mode
    if mode not in ("greedy", "beam"):
        raise DomainError(f"unknown decode mode {mode!r}")
    cap = decode_cap(model, len(graphemes))
    with _inference(model):
        memory, src_pad = model.encode(torch.tensor([graphemes.tokens]), torch.tensor([len(graphemes)]))
        best = _greedy(model, memory, src_pad, cap)
        if mode == "beam":
            pool = [best] + _beam(model, memory, src_pad, cap, beam_width or model.cfg.beam_width)
            scores = [sequence_score(model, graphemes, toks) for toks in pool]
            best = pool[int(np.argmax(scores))]
    return PhonemeSequence(tuple(model.tgt_vocab.decode(best)))


@dataclass(frozen=True)
class SentenceTranscription:
    words: List[PhonemeSequence]
    joined: PhonemeSequence


def transcribe_sentence(model: G2PModel, text: str, mode: Optional[str] = None) -> SentenceTranscription:
    """
    Transcribe running text.

    Lexicon-mode models decode each word and join the results with the word
    boundary symbol; unit-mode models decode the whole (normalized) utterance.
    """
    words = chunk_words(text, model.cfg.keep_punctuation)
    if not words:
        return SentenceTranscription([], PhonemeSequence(()))
    if model.cfg.mode == "unit":
        seq = decode(model, " ".join(words), mode)
        return SentenceTranscription([seq], seq)
    per_word = [decode(model, w, mode) for w in words]
    joined: List[str] = []
    for i, seq in enumerate(per_word):
        if i:
            joined.append(model.cfg.word_boundary)
        joined.extend(seq.symbols)
    return SentenceTranscription(per_word, PhonemeSequence(tuple(joined)))


def transcribe_lines(model: G2PModel, lines: Iterable[str], mode: Optional[str] = None) -> List[str]:
    """``text<TAB>space-joined symbols`` for every non-blank input line."""
    out = []
    for line in lines:
        text = line.rstrip("\n")
        if not text.strip():
            continue
        out.append(f"{text}\t{transcribe_sentence(model, text, mode).joined}")
    return out


def save_g2p(directory: Union[str, Path], model: G2PModel) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_module(directory / MODEL_FILE, model, {"g2p": model.cfg.model_dump(mode="json")})
    model.src_vocab.save(directory / GRAPHEME_VOCAB_FILE)
    model.tgt_vocab.save(directory / OUTPUT_VOCAB_FILE)
    return directory


def load_g2p(directory: Union[str, Path]) -> G2PModel:
    directory = Path(directory)
    state, config = load_module_state(directory / MODEL_FILE)
    if config is None or "g2p" not in config:
        raise DomainError(f"{directory / MODEL_FILE} carries no G2P config")
    model = G2PModel(G2PConfig.model_validate(config["g2p"]),
                     Vocab.load(directory / GRAPHEME_VOCAB_FILE), Vocab.load(directory / OUTPUT_VOCAB_FILE))
    model.load_state_dict(state)
    model.eval()
    return model
