"""BIO codec and aspect-marker sentence transformation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import Span

B, I, O = 0, 1, 2
TAG_NAMES = ("B", "I", "O")
TAG_IDS = {name: i for i, name in enumerate(TAG_NAMES)}

ASPECT_START = "#"
ASPECT_END = "$"


def _tag_id(tag) -> int:
    if isinstance(tag, str):
        return TAG_IDS[tag.upper()]
    return int(tag)


def encode_bio(spans: Iterable[Span], length: int) -> list[int]:
    """Tag ids (B=0, I=1, O=2) for non-overlapping spans."""
    tags = [O] * length
    for span in sorted(spans):
        if span.end > length:
            raise ValueError(f"span {span} out of bounds for length {length}")
        if any(tags[i] != O for i in range(span.start, span.end)):
            raise ValueError(f"overlapping span {span}")
        tags[span.start] = B
        for i in range(span.start + 1, span.end):
            tags[i] = I
    return tags


def decode_bio(tags: Sequence) -> set[Span]:
    """Spans from a tag sequence; a stray I opens a span as if it were B."""
    spans = set()
    start = None
    for i, tag in enumerate(map(_tag_id, tags)):
        if tag == B or (tag == I and start is None):
            if start is not None:
                spans.add(Span(start, i))
            start = i
        elif tag == O and start is not None:
            spans.add(Span(start, i))
            start = None
    if start is not None:
        spans.add(Span(start, len(tags)))
    return spans


def tag_names(tags: Sequence[int]) -> list[str]:
    return [TAG_NAMES[t] for t in tags]


@dataclass(frozen=True)
class MarkedSentence:
    """Sentence with ``#`` inserted before the aspect and ``$`` after it."""

    tokens: tuple
    aspect_span: Span
    original_aspect: Span

    def __len__(self):
        return len(self.tokens)

    def to_marked(self, position: int) -> int:
        a = self.original_aspect
        if position < a.start:
            return position
        if position < a.end:
            return position + 1
        return position + 2

    def to_original(self, position: int) -> int | None:
        """Original index of a marked position, or None for a marker token."""
        start, end = self.aspect_span.start, self.aspect_span.end
        if position < start - 1:
            return position
        if position == start - 1 or position == end:
            return None
        if position < end:
            return position - 1
        return position - 2

    def project_in(self, span: Span) -> Span:
        return Span(self.to_marked(span.start), self.to_marked(span.end - 1) + 1)

    def project_out(self, span: Span) -> Span | None:
        """Map a marked-coordinate span back, clipping marker tokens away."""
        kept = [p for p in (self.to_original(q) for q in range(span.start, span.end)) if p is not None]
        if not kept:
            return None
        return Span(min(kept), max(kept) + 1)

    def unmark(self) -> tuple:
        markers = (self.aspect_span.start - 1, self.aspect_span.end)
        return tuple(t for i, t in enumerate(self.tokens) if i not in markers)


def mark_aspect(tokens: Sequence[str], aspect: Span,
                start_marker: str = ASPECT_START, end_marker: str = ASPECT_END) -> MarkedSentence:
    if aspect.end > len(tokens):
        raise ValueError(f"aspect {aspect} out of bounds for {len(tokens)} tokens")
    tokens = tuple(tokens)
    marked = (
        tokens[:aspect.start]
        + (start_marker,)
        + tokens[aspect.start:aspect.end]
        + (end_marker,)
        + tokens[aspect.end:]
    )
    return MarkedSentence(marked, Span(aspect.start + 1, aspect.end + 1), aspect)


def marked_opinion_tags(marked: MarkedSentence, opinions: Iterable[Span]) -> list[int]:
    """Gold TOWE tags in marked coordinates; marker positions are always O."""
    tags = [O] * len(marked)
    for opinion in opinions:
        previous = None
        for position in range(opinion.start, opinion.end):
            q = marked.to_marked(position)
            if tags[q] != O:
                raise ValueError(f"overlapping opinion span {opinion}")
            tags[q] = I if previous == q - 1 else B
            previous = q
    return tags
