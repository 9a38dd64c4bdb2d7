"""Stage two, sentiment side: aspect and opinion representations and the
sentiment classifier."""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .corpus import Sentiment, Span

NUM_SENTIMENTS = 3


def aspect_repr(hidden: torch.Tensor, aspect: Span) -> torch.Tensor:
    """Mean of the hidden rows covered by ``aspect`` (marked coordinates)."""
    if aspect.end <= aspect.start:
        raise ValueError("empty aspect span")
    if aspect.end > hidden.size(-2):
        raise ValueError(f"aspect {aspect} out of bounds for {hidden.size(-2)} rows")
    return hidden[..., aspect.start:aspect.end, :].mean(dim=-2)


def masked_aspect_repr(hidden: torch.Tensor, aspect_mask: torch.Tensor) -> torch.Tensor:
    """Batched aspect mean: ``hidden (B, L, H)``, ``aspect_mask (B, L)``."""
    weights = aspect_mask.to(hidden.dtype)
    return (hidden * weights.unsqueeze(-1)).sum(dim=1) / weights.sum(dim=1, keepdim=True)


def opinion_repr(hidden: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """Attention-weighted sum of hidden rows."""
    if alpha.size(-1) != hidden.size(-2):
        raise ValueError(f"attention length {alpha.size(-1)} != {hidden.size(-2)} hidden rows")
    return torch.einsum("...l,...lh->...h", alpha, hidden)


class AtsaHead(nn.Module):
    """Two affine layers with a ReLU in between; dropout on the input."""

    def __init__(self, input_size: int, hidden_size: int, dropout: float = 0.5):
        super().__init__()
        self.dropout = nn.Dropout(dropout)
        self.hidden = nn.Linear(input_size, hidden_size)
        self.out = nn.Linear(hidden_size, NUM_SENTIMENTS)

    @property
    def input_size(self) -> int:
        return self.hidden.in_features

    def forward(self, r: torch.Tensor) -> torch.Tensor:
        return self.out(F.relu(self.hidden(self.dropout(r))))


def atsa_predict(head: AtsaHead, r_aspect: torch.Tensor, r_opinion: torch.Tensor | None = None):
    """Sentiment distribution and label; ties go to the lowest label index."""
    r = r_aspect if r_opinion is None else torch.cat([r_aspect, r_opinion], dim=-1)
    if r.size(-1) != head.input_size:
        raise ValueError(f"representation size {r.size(-1)} != head input {head.input_size}")
    p = F.softmax(head(r), dim=-1)
    return p, Sentiment(int(p.argmax(dim=-1).reshape(-1)[0]))


def atsa_loss(p: torch.Tensor, gold) -> torch.Tensor:
    return -torch.log(p[..., int(Sentiment.parse(gold))])


def stage_two_loss(towe_loss, atsa_loss):
    return towe_loss + atsa_loss
