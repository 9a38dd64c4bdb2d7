"""Stage one: aspect term extraction as per-token BIO classification."""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from .tagging import decode_bio

NUM_TAGS = 3


class AteHead(nn.Module):
    """Linear projection from hidden states to B/I/O logits."""

    def __init__(self, hidden_size: int):
        super().__init__()
        self.proj = nn.Linear(hidden_size, NUM_TAGS)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.proj(hidden)


def ate_predict(head: nn.Module, hidden: torch.Tensor):
    """Tags and per-token probabilities for one sentence's hidden states ``(n, h)``."""
    probabilities = F.softmax(head(hidden), dim=-1)
    tags = probabilities.argmax(dim=-1).tolist()
    return tags, probabilities


def predicted_spans(tags):
    return decode_bio(tags)


def _as_index(gold, device) -> torch.Tensor:
    return torch.as_tensor(list(gold) if not torch.is_tensor(gold) else gold, dtype=torch.long, device=device)


def sequence_nll(probabilities: torch.Tensor, gold) -> torch.Tensor:
    """Summed negative log-likelihood of gold tags under per-position distributions."""
    gold = _as_index(gold, probabilities.device)
    if probabilities.shape[:-1] != gold.shape:
        raise ValueError(
            f"length mismatch: {tuple(probabilities.shape[:-1])} predictions vs {tuple(gold.shape)} gold tags"
        )
    picked = probabilities.gather(-1, gold.unsqueeze(-1)).squeeze(-1)
    return -torch.log(picked).sum()


def ate_loss(probabilities: torch.Tensor, gold) -> torch.Tensor:
    return sequence_nll(probabilities, gold)


def masked_sequence_nll(logits: torch.Tensor, gold: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Per-sequence summed NLL from logits ``(B, L, 3)``; padding is ignored."""
    log_probs = F.log_softmax(logits, dim=-1)
    picked = log_probs.gather(-1, gold.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    return -(picked * mask).sum(dim=-1)
