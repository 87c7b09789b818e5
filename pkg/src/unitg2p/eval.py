"""
Evaluation metrics.

PER takes the minimum edit distance over a word's reference pronunciations
and is micro-averaged over the corpus; WER is the fraction of items whose
prediction matches no reference exactly. NMI and purity judge frame
clusterings against gold labels.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Hashable, List, Optional, Sequence, Tuple, Union

import Levenshtein
import numpy as np
import yaml
from sklearn.metrics import normalized_mutual_info_score
from sklearn.metrics.cluster import contingency_matrix

from .exceptions import DomainError

Symbols = Sequence[Hashable]


@dataclass
class EvalReport:
    """
    Evaluation summary.

    Attributes:
        per: Corpus phoneme error rate (micro-averaged)
        wer: Error rate of exact matches, 1 - matched / n_items
        n_items: Number of scored items
        per_item_distances: Edit distance of every item to its chosen reference
        oracle_per: PER of unit predictions mapped onto gold labels, when available
        oracle_wer: WER counterpart of ``oracle_per``
        nmi: NMI of frame targets against gold frame labels, when available
        purity: Purity of frame targets against gold frame labels, when available
        baseline_per: PER of the majority-sequence baseline, when computed
    """

    per: float
    wer: float
    n_items: int
    per_item_distances: List[int] = field(default_factory=list)
    oracle_per: Optional[float] = None
    oracle_wer: Optional[float] = None
    nmi: Optional[float] = None
    purity: Optional[float] = None
    baseline_per: Optional[float] = None

    def __post_init__(self):
        if self.n_items != len(self.per_item_distances):
            raise DomainError(f"n_items={self.n_items} but {len(self.per_item_distances)} distances")

    def metrics(self) -> Dict[str, float]:
        out = {k: v for k, v in asdict(self).items() if k != "per_item_distances" and v is not None}
        out["n_items"] = self.n_items
        return out

    def to_text(self) -> str:
        """One ``name value`` line per metric."""
        lines = []
        for name, value in self.metrics().items():
            lines.append(f"{name} {value}" if isinstance(value, int) else f"{name} {value:.6f}")
        return "\n".join(lines)

    def save(self, path: Union[str, Path], item_ids: Optional[Sequence[str]] = None,
             distances_path: Optional[Union[str, Path]] = None) -> None:
        """Write metrics as YAML key-values; optionally dump per-item distances as TSV."""
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.metrics(), fh, sort_keys=True)
        if distances_path is not None:
            ids = list(item_ids) if item_ids is not None else [str(i) for i in range(self.n_items)]
            with open(distances_path, "w", encoding="utf-8") as fh:
                fh.write("item\tdistance\n")
                for item, dist in zip(ids, self.per_item_distances):
                    fh.write(f"{item}\t{dist}\n")

    @classmethod
    def load(cls, path: Union[str, Path], distances_path: Union[str, Path]) -> "EvalReport":
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        with open(distances_path, encoding="utf-8") as fh:
            next(fh)
            data["per_item_distances"] = [int(line.rstrip("\n").split("\t")[1]) for line in fh if line.strip()]
        return cls(**data)


def levenshtein(a: Symbols, b: Symbols) -> int:
    """Unit-cost insert/delete/substitute distance between two symbol sequences."""
    return Levenshtein.distance(list(a), list(b))


def per(pred: Symbols, refs: Sequence[Symbols]) -> Tuple[int, int]:
    """
    Distance to the closest reference.

    Returns:
        (distance, index of the chosen reference); ties go to the earliest reference

    Raises:
        DomainError: Empty reference list or an empty reference
    """
    if not refs:
        raise DomainError("per needs at least one reference")
    best, best_idx = None, -1
    for idx, ref in enumerate(refs):
        if len(ref) == 0:
            raise DomainError(f"reference {idx} is empty")
        dist = levenshtein(pred, ref)
        if best is None or dist < best:
            best, best_idx = dist, idx
    return best, best_idx


def corpus_per(preds: Sequence[Symbols], refs: Sequence[Sequence[Symbols]]) -> Tuple[float, List[int]]:
    """
    Sum of minimum distances over the sum of the chosen references' lengths.

    Raises:
        DomainError: Length mismatch or an empty corpus
    """
    if len(preds) != len(refs):
        raise DomainError(f"{len(preds)} predictions for {len(refs)} reference sets")
    if not preds:
        raise DomainError("cannot score an empty corpus")
    distances, total_len = [], 0
    for pred, ref_set in zip(preds, refs):
        dist, idx = per(pred, ref_set)
        distances.append(dist)
        total_len += len(ref_set[idx])
    return sum(distances) / total_len, distances


def wer(preds: Sequence[Symbols], refs: Sequence[Sequence[Symbols]]) -> float:
    """
    1 - fraction of predictions that equal at least one of their references.

    Raises:
        DomainError: Length mismatch or an empty corpus
    """
    if len(preds) != len(refs):
        raise DomainError(f"{len(preds)} predictions for {len(refs)} reference sets")
    if not preds:
        raise DomainError("cannot score an empty corpus")
    matched = sum(any(list(pred) == list(ref) for ref in ref_set) for pred, ref_set in zip(preds, refs))
    return 1.0 - matched / len(preds)


def _check_labelings(a: Sequence, b: Sequence) -> Tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError(f"labelings differ in length ({len(a)} vs {len(b)})")
    if len(a) == 0:
        raise DomainError("labelings must be non-empty")
    return a, b


def nmi(a: Sequence, b: Sequence) -> float:
    """Mutual information over the arithmetic mean of the entropies (1.0 for two single-class labelings)."""
    a, b = _check_labelings(a, b)
    return float(normalized_mutual_info_score(a, b, average_method="arithmetic"))


def purity(clusters: Sequence, gold: Sequence) -> float:
    """Fraction of frames carrying their cluster's majority gold label."""
    clusters, gold = _check_labelings(clusters, gold)
    table = contingency_matrix(gold, clusters)
    return float(table.max(axis=0).sum() / table.sum())


def unit_label_map(units: Sequence[int], gold: Sequence[int]) -> Dict[int, int]:
    """
    Many-to-one map from each unit to the gold label it most often covers.

    Ties go to the smaller gold label.
    """
    units, gold = _check_labelings(units, gold)
    counts: Dict[int, Counter] = {}
    for u, g in zip(units.tolist(), gold.tolist()):
        counts.setdefault(u, Counter())[g] += 1
    return {u: min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0] for u, c in counts.items()}


def map_units(units: Sequence[int], mapping: Dict[int, int], default: int = -1) -> List[int]:
    """Relabel units through ``mapping`` and merge the consecutive duplicates this creates."""
    out: List[int] = []
    for u in units:
        label = mapping.get(int(u), default)
        if not out or out[-1] != label:
            out.append(label)
    return out


def majority_baseline(train_targets: Sequence[Symbols]) -> List[Hashable]:
    """
    Most frequent training target sequence; ties go to the lexicographically
    smallest one.

    Raises:
        DomainError: If there are no training targets
    """
    if not train_targets:
        raise DomainError("majority baseline needs training targets")
    counts = Counter(tuple(str(s) for s in t) for t in train_targets)
    best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
    return list(best)
