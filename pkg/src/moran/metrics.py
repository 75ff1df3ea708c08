"""Word accuracy, Levenshtein distance, and evaluation reports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


def word_accuracy(pairs) -> float:
    """Fraction of case-insensitive exact matches over (prediction, label) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("word_accuracy needs at least one pair")
    hits = sum(1 for pred, label in pairs if pred.lower() == label.lower())
    return hits / len(pairs)


@dataclass
class EvalReport:
    word_accuracy: float
    total_edit_distance: int
    records: list  # (label, prediction, distance) in manifest order

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        recs = [(label, pred, edit_distance(pred.lower(), label.lower()))
                for pred, label in pairs]
        total = sum(d for _, _, d in recs)
        return cls(word_accuracy(pairs), total, recs)

    def write(self, path):
        with open(path, "w") as f:
            f.write(f"{self.word_accuracy!r}\t{self.total_edit_distance}\n")
            for i, (label, pred, dist) in enumerate(self.records):
                f.write(f"{i}\t{label}\t{pred}\t{dist}\n")

    @classmethod
    def read(cls, path):
        with open(path) as f:
            head = f.readline().rstrip("\n").split("\t")
            acc, total = float(head[0]), int(head[1])
            recs = []
            for line in f:
                parts = line.rstrip("\n").split("\t")
                if len(parts) == 4:
                    recs.append((parts[1], parts[2], int(parts[3])))
        return cls(acc, total, recs)


def evaluate_pairs(predictions, labels) -> EvalReport:
    return EvalReport.from_pairs(list(zip(predictions, labels)))
