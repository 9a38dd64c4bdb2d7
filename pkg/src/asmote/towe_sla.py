"""Stage two, opinion side: aspect-conditioned opinion tagging and the
sequence labeling attention derived from its predictions."""

from __future__ import annotations

import enum

import torch
from torch import nn
from torch.nn import functional as F

from .ate import NUM_TAGS, sequence_nll
from .tagging import B, I, MarkedSentence, decode_bio


class SlaMode(str, enum.Enum):
    LOGITS = "logits"
    PROBABILITIES = "probabilities"


class ToweHead(nn.Module):
    def __init__(self, hidden_size: int):
        super().__init__()
        self.proj = nn.Linear(hidden_size, NUM_TAGS)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.proj(hidden)


def towe_predict(head: nn.Module, hidden: torch.Tensor, marked: MarkedSentence):
    """Opinion tagging over a marked sentence.

    Returns logits, probabilities, tags (marked coordinates) and opinion
    spans projected back to the unmarked sentence.
    """
    logits = head(hidden)
    probabilities = F.softmax(logits, dim=-1)
    tags = probabilities.argmax(dim=-1).tolist()
    spans = {marked.project_out(span) for span in decode_bio(tags)}
    spans.discard(None)
    return logits, probabilities, tags, spans


def towe_loss(probabilities: torch.Tensor, gold) -> torch.Tensor:
    return sequence_nll(probabilities, gold)


def sla_attention(scores: torch.Tensor, mode: SlaMode | str = SlaMode.LOGITS,
                  mask: torch.Tensor | None = None):
    """Attention weights from per-position B/I/O scores ``(..., L, 3)``.

    ``scores`` are TOWE logits or, in probabilities mode, the softmaxed TOWE
    output; the caller passes whichever the mode names. Each position's score
    is the sum of its B and I entries and the weights are their softmax over
    the sequence. Returns ``(alpha, beta)``.
    """
    SlaMode(mode)
    if scores.size(-2) < 1:
        raise ValueError("attention over an empty sequence")
    beta = scores[..., B] + scores[..., I]
    masked = beta if mask is None else beta.masked_fill(~mask.bool(), float("-inf"))
    return F.softmax(masked, dim=-1), beta
