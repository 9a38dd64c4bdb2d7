"""Exact-match triplet scoring, subtask metrics and attention export."""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import AsmoteTriplet, Sentiment


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    f1: float
    gold: int
    predicted: int
    matched: int

    @classmethod
    def from_counts(cls, gold: int, predicted: int, matched: int) -> "MetricReport":
        if matched > min(gold, predicted):
            raise ValueError("matched count exceeds gold or predicted count")
        precision = matched / predicted if predicted else 0.0
        recall = matched / gold if gold else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(precision, recall, f1, gold, predicted, matched)

    def to_dict(self) -> dict:
        return asdict(self)


def _as_set(items, side: str) -> set:
    items = list(items)
    unique = set(items)
    if len(unique) != len(items):
        dup = next(k for k, v in Counter(items).items() if v > 1)
        raise ValueError(f"duplicate {side} triplet {dup}")
    return unique


def triplet_prf(gold: Iterable[tuple[str, AsmoteTriplet]],
                pred: Iterable[tuple[str, AsmoteTriplet]]) -> MetricReport:
    """Exact-match P/R/F1 over ``(sentence id, triplet)`` pairs.

    A prediction counts only when sentence, aspect span, sentiment and the
    whole opinion set equal a gold triplet. Predictions without opinions are
    dropped before scoring.
    """
    gold_set = _as_set(gold, "gold")
    pred_set = _as_set(((sid, t) for sid, t in pred if t.opinions), "predicted")
    return MetricReport.from_counts(len(gold_set), len(pred_set), len(gold_set & pred_set))


def atsa_accuracy(gold: Mapping, pred: Mapping) -> float:
    """Fraction of gold aspects, keyed by ``(sentence id, aspect span)``, labelled correctly."""
    if not gold:
        return 0.0
    missing = [key for key in gold if key not in pred]
    if missing:
        warnings.warn(f"{len(missing)} gold aspects have no sentiment prediction; counted wrong")
    correct = sum(
        1 for key, label in gold.items()
        if key in pred and Sentiment.parse(pred[key]) == Sentiment.parse(label)
    )
    return correct / len(gold)


def towe_f1(gold: Mapping, pred: Mapping) -> MetricReport:
    """Span exact-match P/R/F1 pooled over gold aspects."""
    n_gold = n_pred = matched = 0
    for key, gold_spans in gold.items():
        pred_spans = set(pred.get(key, ()))
        gold_spans = set(gold_spans)
        n_gold += len(gold_spans)
        n_pred += len(pred_spans)
        matched += len(gold_spans & pred_spans)
    return MetricReport.from_counts(n_gold, n_pred, matched)


def span_f1(gold: Mapping, pred: Mapping) -> MetricReport:
    """Exact-match F1 for sets of spans keyed by sentence id (aspect extraction)."""
    n_gold = sum(len(set(v)) for v in gold.values())
    n_pred = sum(len(set(v)) for v in pred.values())
    matched = sum(len(set(gold.get(k, ())) & set(v)) for k, v in pred.items())
    return MetricReport.from_counts(n_gold, n_pred, matched)


def export_attention(model, tokens: Sequence[str], aspect) -> list[dict]:
    """Per-token attention of a fitted extractor for one aspect.

    Returns records ``{"token", "weight"}`` over the marked sentence.
    """
    marked_tokens, weights = model.attention(tokens, aspect)
    return [{"token": t, "weight": float(w)} for t, w in zip(marked_tokens, weights)]


def write_attention(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def format_prf_table(rows: Mapping[str, Mapping[str, MetricReport]]) -> str:
    """Method-by-dataset P/R/F1 grid, percentages with one decimal."""
    datasets = sorted({d for cells in rows.values() for d in cells})
    header = "Method".ljust(14) + "".join(f"| {d:^20}" for d in datasets)
    sub = " " * 14 + "".join(f"| {'P':>6}{'R':>7}{'F1':>7}" for _ in datasets)
    lines = [header, sub]
    for method, cells in rows.items():
        line = method.ljust(14)
        for d in datasets:
            r = cells.get(d)
            line += "| " + ("" if r is None else f"{100 * r.precision:6.1f}{100 * r.recall:7.1f}{100 * r.f1:7.1f}").ljust(20)
        lines.append(line)
    return "\n".join(lines)


def format_stats_table(stats: Mapping[str, Mapping[str, tuple]]) -> str:
    """Dataset statistics grid: one column per (dataset, split)."""
    columns = [(d, s) for d, splits in stats.items() for s in splits]
    names = ("#sentence", "#aspect", "#triplet", "#tc")
    lines = [
        "Dataset".ljust(10) + "".join(f"{d:>8}" for d, _ in columns),
        "".ljust(10) + "".join(f"{s:>8}" for _, s in columns),
    ]
    for row, name in enumerate(names):
        lines.append(name.ljust(10) + "".join(f"{stats[d][s][row]:>8}" for d, s in columns))
    return "\n".join(lines)
