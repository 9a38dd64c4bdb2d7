"""Dataset objects, ingestion of SemEval/TOWE releases, and ASTE-output merging."""

from __future__ import annotations

import enum
import json
import logging
import re
import xml.etree.ElementTree as ET
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)

CONFLICT = "conflict"
SPLIT_NAMES = ("train", "dev", "test")


class CorpusError(ValueError):
    """Raised when an input file cannot be turned into a valid dataset."""


@dataclass(frozen=True, order=True)
class Span:
    """Half-open token interval ``[start, end)``."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid span ({self.start}, {self.end})")

    def __len__(self):
        return self.end - self.start

    def overlaps(self, other: "Span") -> bool:
        return self.start < other.end and other.start < self.end

    def to_list(self) -> list[int]:
        return [self.start, self.end]

    @classmethod
    def from_list(cls, value: Sequence[int]) -> "Span":
        start, end = value
        return cls(int(start), int(end))


class Sentiment(enum.IntEnum):
    POSITIVE = 0
    NEUTRAL = 1
    NEGATIVE = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value) -> "Sentiment":
        if isinstance(value, Sentiment):
            return value
        if isinstance(value, int):
            return cls(value)
        key = str(value).strip().lower()
        aliases = {"pos": "positive", "neu": "neutral", "neg": "negative"}
        key = aliases.get(key, key)
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown sentiment {value!r}") from None


def parse_polarity(value):
    """Parse a polarity string into a Sentiment or the CONFLICT marker."""
    if isinstance(value, str) and value.strip().lower() == CONFLICT:
        return CONFLICT
    return Sentiment.parse(value)


def polarity_label(value) -> str:
    return CONFLICT if value == CONFLICT else Sentiment(value).label


def _check_disjoint(spans: Iterable[Span], what: str):
    ordered = sorted(spans)
    for left, right in zip(ordered, ordered[1:]):
        if left.overlaps(right):
            raise CorpusError(f"overlapping {what} spans {left} and {right}")


@dataclass(frozen=True)
class AspectAnnotation:
    aspect: Span
    sentiment: object  # Sentiment or CONFLICT
    opinions: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "opinions", frozenset(self.opinions))
        if self.sentiment != CONFLICT and not isinstance(self.sentiment, Sentiment):
            object.__setattr__(self, "sentiment", Sentiment.parse(self.sentiment))
        _check_disjoint(self.opinions, "opinion")

    @property
    def is_conflict(self) -> bool:
        return self.sentiment == CONFLICT


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple
    aspects: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "aspects", tuple(self.aspects))
        if not self.tokens:
            raise CorpusError(f"sentence {self.id}: empty token list")
        n = len(self.tokens)
        for annotation in self.aspects:
            for span in (annotation.aspect, *annotation.opinions):
                if span.end > n:
                    raise CorpusError(f"sentence {self.id}: span {span} out of bounds for {n} tokens")
        _check_disjoint((a.aspect for a in self.aspects), f"aspect (sentence {self.id})")

    def __len__(self):
        return len(self.tokens)

    def text(self, span: Span | None = None) -> str:
        if span is None:
            return " ".join(self.tokens)
        return " ".join(self.tokens[span.start:span.end])


@dataclass(frozen=True)
class AsmoteTriplet:
    aspect: Span
    sentiment: Sentiment
    opinions: frozenset

    def __post_init__(self):
        object.__setattr__(self, "opinions", frozenset(self.opinions))
        object.__setattr__(self, "sentiment", Sentiment.parse(self.sentiment))

    def to_dict(self) -> dict:
        return {
            "aspect": self.aspect.to_list(),
            "sentiment": self.sentiment.label,
            "opinions": [span.to_list() for span in sorted(self.opinions)],
        }

    @classmethod
    def from_dict(cls, record: dict) -> "AsmoteTriplet":
        return cls(
            Span.from_list(record["aspect"]),
            Sentiment.parse(record["sentiment"]),
            frozenset(Span.from_list(o) for o in record["opinions"]),
        )


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    sentences: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        seen = set()
        for sentence in self.sentences:
            if sentence.id in seen:
                raise CorpusError(f"duplicate sentence id {sentence.id!r} in split {self.name}")
            seen.add(sentence.id)

    def __len__(self):
        return len(self.sentences)

    def __iter__(self) -> Iterator[Sentence]:
        return iter(self.sentences)


# ---------------------------------------------------------------------------
# operations

def remove_conflict(split: DatasetSplit) -> DatasetSplit:
    sentences = [
        replace(s, aspects=tuple(a for a in s.aspects if not a.is_conflict)) for s in split.sentences
    ]
    return DatasetSplit(split.name, sentences)


def gold_triplets(split: DatasetSplit | Iterable[Sentence]) -> list[tuple[str, AsmoteTriplet]]:
    """One triplet per non-conflict aspect that has at least one opinion."""
    result = []
    for sentence in split:
        for annotation in sentence.aspects:
            if annotation.is_conflict or not annotation.opinions:
                continue
            result.append(
                (sentence.id, AsmoteTriplet(annotation.aspect, annotation.sentiment, annotation.opinions))
            )
    return result


def resolve_sentiment(votes: Iterable[Sentiment]) -> Sentiment:
    """Majority vote; ties go to the more negative label."""
    counts = Counter(Sentiment.parse(v) for v in votes)
    if not counts:
        raise ValueError("no sentiment votes")
    return max(counts, key=lambda s: (counts[s], int(s)))


def merge_aste(triplets: Iterable[tuple]) -> list[AsmoteTriplet]:
    """Group single-opinion triplets of one sentence by aspect span.

    Each input item is ``(aspect, sentiment, opinion)``; the result is sorted
    by aspect span so that input order does not matter.
    """
    votes = defaultdict(list)
    opinions = defaultdict(set)
    for aspect, sentiment, opinion in triplets:
        votes[aspect].append(Sentiment.parse(sentiment))
        opinions[aspect].add(opinion)
    return [
        AsmoteTriplet(aspect, resolve_sentiment(votes[aspect]), frozenset(opinions[aspect]))
        for aspect in sorted(votes)
    ]


def split_stats(split: DatasetSplit) -> tuple[int, int, int, int]:
    """``(#sentence, #aspect, #triplet, #conflict)`` for a split that still has conflicts."""
    n_aspects = n_triplets = n_conflict = 0
    for sentence in split:
        for annotation in sentence.aspects:
            n_aspects += 1
            if annotation.is_conflict:
                n_conflict += 1
            elif annotation.opinions:
                n_triplets += 1
    return len(split), n_aspects, n_triplets, n_conflict


def split_dev(split: DatasetSplit, fraction: float = 0.2, seed: int = 1234,
              dev_ids: Iterable[str] | None = None) -> tuple[DatasetSplit, DatasetSplit]:
    """Carve a dev split out of a training split, by explicit ids or at random."""
    sentences = list(split.sentences)
    if dev_ids is not None:
        wanted = set(dev_ids)
        missing = wanted - {s.id for s in sentences}
        if missing:
            raise CorpusError(f"dev ids not in split: {sorted(missing)[:5]}")
        dev = [s for s in sentences if s.id in wanted]
        train = [s for s in sentences if s.id not in wanted]
    else:
        from sklearn.model_selection import train_test_split

        train, dev = train_test_split(sentences, test_size=fraction, random_state=seed)
    return DatasetSplit("train", train), DatasetSplit("dev", dev)


# ---------------------------------------------------------------------------
# canonical line-delimited format

def sentence_to_record(sentence: Sentence) -> dict:
    return {
        "id": sentence.id,
        "tokens": list(sentence.tokens),
        "aspects": [
            {
                "span": a.aspect.to_list(),
                "sentiment": polarity_label(a.sentiment),
                "opinions": [o.to_list() for o in sorted(a.opinions)],
            }
            for a in sentence.aspects
        ],
    }


def sentence_from_record(record: dict) -> Sentence:
    try:
        aspects = [
            AspectAnnotation(
                Span.from_list(a["span"]),
                parse_polarity(a["sentiment"]),
                frozenset(Span.from_list(o) for o in a.get("opinions", ())),
            )
            for a in record.get("aspects", ())
        ]
        return Sentence(str(record["id"]), record["tokens"], aspects)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorpusError):
            raise
        raise CorpusError(f"bad record {record.get('id', '?')!r}: {exc}") from exc


def save_split(split: DatasetSplit, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for sentence in split:
            f.write(json.dumps(sentence_to_record(sentence), ensure_ascii=False) + "\n")


def load_split(path, name: str | None = None) -> DatasetSplit:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"dataset file not found: {path}")
    sentences = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            sentences.append(sentence_from_record(record))
    return DatasetSplit(name or path.stem, sentences)


def load_dataset(directory) -> dict[str, DatasetSplit]:
    """Load ``train/dev/test.jsonl`` from a dataset directory."""
    directory = Path(directory)
    return {name: load_split(directory / f"{name}.jsonl", name) for name in SPLIT_NAMES}


# ---------------------------------------------------------------------------
# ingestion

_TOKEN_RE = re.compile(r"\w+(?:[-']\w+)*|n't|'\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Whitespace/punctuation tokenizer for sentences missing from the TOWE release."""
    return _TOKEN_RE.findall(text)


def token_char_offsets(text: str, tokens: Sequence[str]) -> list[tuple[int, int]]:
    """Character offsets of each token in ``text``.

    Tokens are located by sequential search; if a token was normalized in the
    release (quotes, brackets), fall back to counting non-space characters.
    """
    offsets = []
    cursor = 0
    for token in tokens:
        pos = text.find(token, cursor)
        if pos < 0 or text[cursor:pos].strip():
            break
        offsets.append((pos, pos + len(token)))
        cursor = pos + len(token)
    else:
        return offsets

    dense = [i for i, ch in enumerate(text) if not ch.isspace()]
    if sum(len(t) for t in tokens) != len(dense):
        raise CorpusError(f"cannot align tokens {list(tokens)[:8]}... with text {text!r}")
    offsets, k = [], 0
    for token in tokens:
        offsets.append((dense[k], dense[k + len(token) - 1] + 1))
        k += len(token)
    return offsets


def char_to_token_span(offsets: Sequence[tuple[int, int]], start: int, end: int) -> Span:
    covered = [i for i, (s, e) in enumerate(offsets) if s < end and start < e]
    if not covered:
        raise CorpusError(f"character span ({start}, {end}) covers no token")
    return Span(covered[0], covered[-1] + 1)


@dataclass
class SemEvalSentence:
    id: str
    text: str
    aspects: list  # (term, from, to, polarity)


def parse_semeval_xml(path) -> list[SemEvalSentence]:
    """Read SemEval 2014 (aspectTerms) or 2015/2016 (Opinions) ABSA XML."""
    try:
        root = ET.parse(path).getroot()
    except (ET.ParseError, OSError) as exc:
        raise CorpusError(f"cannot parse SemEval file {path}: {exc}") from exc
    result = []
    for node in root.iter("sentence"):
        sid = node.get("id")
        text_node = node.find("text")
        if sid is None or text_node is None or text_node.text is None:
            raise CorpusError(f"{path}: sentence without id or text")
        by_offset: dict = {}
        terms = list(node.iter("aspectTerm"))
        if terms:
            items = [(t.get("term"), t.get("from"), t.get("to"), t.get("polarity")) for t in terms]
        else:
            items = [
                (o.get("target"), o.get("from"), o.get("to"), o.get("polarity"))
                for o in node.iter("Opinion")
                if o.get("target") not in (None, "NULL")
            ]
        for term, start, end, polarity in items:
            key = (int(start), int(end))
            polarity = parse_polarity(polarity)
            if key in by_offset and by_offset[key][3] != polarity:
                # same target tagged with different polarities across categories
                polarity = CONFLICT
            by_offset[key] = (term, key[0], key[1], polarity)
        result.append(SemEvalSentence(sid, text_node.text, sorted(by_offset.values(), key=lambda a: a[1])))
    return result


@dataclass
class ToweRecord:
    id: str
    text: str
    tokens: list
    aspect: Span
    opinions: list


def _spans_from_tags(tags: Sequence[str]) -> list[Span]:
    from .tagging import decode_bio

    return sorted(decode_bio(tags))


def parse_towe(path) -> list[ToweRecord]:
    """Read a TOWE tab-separated release: ``s_id, sentence, word\\tag ..., word\\tag ...``."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read TOWE file {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if lineno == 1 and parts[0].strip().lower() in ("s_id", "id"):
            continue
        if len(parts) != 4:
            raise CorpusError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        sid, text, target_field, opinion_field = parts
        target = [item.rsplit("\\", 1) for item in target_field.split(" ")]
        opinion = [item.rsplit("\\", 1) for item in opinion_field.split(" ")]
        if len(target) != len(opinion) or any(len(t) != 2 for t in target + opinion):
            raise CorpusError(f"{path}:{lineno}: malformed tag columns")
        tokens = [t[0] for t in target]
        aspects = _spans_from_tags([t[1] for t in target])
        if len(aspects) != 1:
            raise CorpusError(f"{path}:{lineno}: expected exactly one target span, got {len(aspects)}")
        records.append(ToweRecord(sid, text, tokens, aspects[0], _spans_from_tags([t[1] for t in opinion])))
    return records


def _text_key(text: str) -> str:
    return re.sub(r"\s+", "", text).lower()


def build_dataset(semeval_file, towe_file, name: str = "train") -> DatasetSplit:
    """Align a SemEval file with its TOWE release.

    Every SemEval sentence with at least one aspect term is kept, including
    those whose aspects have no opinions. Tokens come from the TOWE release
    when the sentence appears there.
    """
    semeval = parse_semeval_xml(semeval_file)
    towe = parse_towe(towe_file)

    by_id = {s.id: s for s in semeval}
    by_text = defaultdict(list)
    for s in semeval:
        by_text[_text_key(s.text)].append(s)

    towe_by_sentence = defaultdict(list)
    for record in towe:
        target = by_id.get(record.id)
        if target is None:
            candidates = by_text.get(_text_key(record.text)) or by_text.get(_text_key(" ".join(record.tokens)))
            if not candidates:
                raise CorpusError(f"TOWE record {record.id!r} matches no SemEval sentence")
            target = candidates[0]
        towe_by_sentence[target.id].append(record)

    sentences = []
    for s in semeval:
        if not s.aspects:
            continue
        records = towe_by_sentence.get(s.id, [])
        tokens = records[0].tokens if records else tokenize(s.text)
        offsets = token_char_offsets(s.text, tokens)
        aspect_spans = [char_to_token_span(offsets, a[1], a[2]) for a in s.aspects]
        opinions = defaultdict(set)
        for record in records:
            if record.tokens != tokens:
                raise CorpusError(f"sentence {s.id}: TOWE records disagree on tokenization")
            index = _match_aspect(record, aspect_spans, s, tokens)
            opinions[index].update(record.opinions)
        annotations = [
            AspectAnnotation(span, a[3], frozenset(opinions.get(i, ())))
            for i, (span, a) in enumerate(zip(aspect_spans, s.aspects))
        ]
        # identical token spans from distinct character spans collapse into one aspect
        merged = {}
        for annotation in annotations:
            prev = merged.get(annotation.aspect)
            if prev is not None and prev.sentiment != annotation.sentiment:
                annotation = replace(annotation, sentiment=CONFLICT)
            if prev is not None:
                annotation = replace(annotation, opinions=prev.opinions | annotation.opinions)
            merged[annotation.aspect] = annotation
        sentences.append(Sentence(s.id, tokens, sorted(merged.values(), key=lambda a: a.aspect)))
    return DatasetSplit(name, sentences)


def _match_aspect(record: ToweRecord, spans: list[Span], s: SemEvalSentence, tokens) -> int:
    for i, span in enumerate(spans):
        if span == record.aspect:
            return i
    surface = _text_key("".join(tokens[record.aspect.start:record.aspect.end]))
    same_text = [i for i, a in enumerate(s.aspects) if _text_key(a[0] or "") == surface]
    if same_text:
        return min(same_text, key=lambda i: abs(spans[i].start - record.aspect.start))
    raise CorpusError(
        f"TOWE record {record.id!r}: aspect {record.aspect} ({surface!r}) matches no SemEval aspect"
    )


def load_aspect_per_line(path, name: str | None = None) -> DatasetSplit:
    """Read a JSON-lines file holding one aspect per line.

    Each line carries ``sentence``, ``words``, ``polarity``, ``aspect_term``
    (``start``/``end`` token indices, end exclusive) and ``opinions``.
    Lines for the same sentence text are grouped into one Sentence.
    """
    grouped: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        data = json.loads(line)
        key = data["sentence"]
        entry = grouped.setdefault(key, {"tokens": data["words"], "aspects": {}})
        aspect = Span(data["aspect_term"]["start"], data["aspect_term"]["end"])
        opinions = frozenset(Span(o["start"], o["end"]) for o in data.get("opinions", ()))
        entry["aspects"][aspect] = AspectAnnotation(aspect, parse_polarity(data["polarity"]), opinions)
    sentences = [
        Sentence(f"{i}", entry["tokens"], sorted(entry["aspects"].values(), key=lambda a: a.aspect))
        for i, entry in enumerate(grouped.values())
    ]
    return DatasetSplit(name or Path(path).stem, sentences)


# ---------------------------------------------------------------------------
# ASTE output files

_ASTE_TUPLE_RE = re.compile(r"\(\s*\[([\d,\s]*)\]\s*,\s*\[([\d,\s]*)\]\s*,\s*'(\w+)'\s*\)")


def _index_list_to_span(text: str) -> Span:
    indices = [int(x) for x in text.replace(" ", "").split(",") if x]
    if not indices:
        raise CorpusError("empty index list in ASTE triplet")
    return Span(min(indices), max(indices) + 1)


def read_aste_file(path) -> list[tuple[str, list, list]]:
    """Read ASTE predictions as ``(sentence id, tokens, [(aspect, sentiment, opinion)])``.

    Two layouts are accepted: JSON lines with ``id``, ``tokens`` and
    ``triplets`` (``aspect``/``opinion`` as ``[start, end)`` pairs), and the
    ``sentence####[([a...], [o...], 'NEG'), ...]`` layout with inclusive word
    indices, where the line number serves as sentence id.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"ASTE file not found: {path}")
    result = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            if line.startswith("{"):
                data = json.loads(line)
                triplets = [
                    (Span.from_list(t["aspect"]), Sentiment.parse(t["sentiment"]), Span.from_list(t["opinion"]))
                    for t in data.get("triplets", ())
                ]
                result.append((str(data["id"]), list(data.get("tokens", ())), triplets))
            else:
                text, _, rest = line.partition("####")
                triplets = [
                    (_index_list_to_span(a), Sentiment.parse(s), _index_list_to_span(o))
                    for a, o, s in _ASTE_TUPLE_RE.findall(rest)
                ]
                result.append((str(lineno - 1), text.split(), triplets))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            if isinstance(exc, CorpusError):
                raise
            raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return result


def write_triplets(path, rows: Iterable[tuple[str, Sequence, Sequence[AsmoteTriplet]]]) -> None:
    """Write ``(sentence id, tokens, triplets)`` rows as JSON lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for sid, tokens, triplets in rows:
            record = {"id": sid, "tokens": list(tokens), "triplets": [t.to_dict() for t in triplets]}
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_triplets(path) -> list[tuple[str, AsmoteTriplet]]:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"triplet file not found: {path}")
    result = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            result.extend((str(data["id"]), AsmoteTriplet.from_dict(t)) for t in data["triplets"])
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return result
