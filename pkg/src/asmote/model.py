"""Torch modules wiring encoders to the task heads."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn
from torch.nn import functional as F

from .ate import AteHead
from .atsa import AtsaHead, masked_aspect_repr, opinion_repr
from .towe_sla import SlaMode, ToweHead, sla_attention


class AteTagger(nn.Module):
    def __init__(self, encoder: nn.Module):
        super().__init__()
        self.encoder = encoder
        self.head = AteHead(encoder.output_size)

    def forward(self, tokens: Sequence[Sequence[str]]):
        hidden, mask = self.encoder(tokens)
        return self.head(hidden), mask


class StageTwoModel(nn.Module):
    """TOWE tagger and ATSA classifier over aspect-marked sentences.

    With ``use_sla`` the classifier input is ``[r_A; r_O]`` where ``r_O`` is
    the hidden states weighted by attention derived from the TOWE scores;
    without it (pipeline variant) the classifier sees ``r_A`` only.
    """

    def __init__(self, towe_encoder: nn.Module, atsa_encoder: nn.Module, use_sla: bool = True,
                 sla_mode: SlaMode | str = SlaMode.LOGITS, detach_attention: bool = False,
                 dropout: float = 0.5):
        super().__init__()
        self.towe_encoder = towe_encoder
        self.towe_head = ToweHead(towe_encoder.output_size)
        self.atsa_encoder = atsa_encoder
        hidden = atsa_encoder.output_size
        self.atsa_head = AtsaHead(2 * hidden if use_sla else hidden, hidden, dropout)
        self.use_sla = use_sla
        self.sla_mode = SlaMode(sla_mode)
        self.detach_attention = detach_attention

    def towe_parameters(self):
        return [*self.towe_encoder.parameters(), *self.towe_head.parameters()]

    def atsa_parameters(self):
        return [*self.atsa_encoder.parameters(), *self.atsa_head.parameters()]

    def towe_state(self) -> dict:
        return {
            "encoder": {k: v.detach().clone() for k, v in self.towe_encoder.state_dict().items()},
            "head": {k: v.detach().clone() for k, v in self.towe_head.state_dict().items()},
        }

    def load_towe_state(self, state: dict):
        self.towe_encoder.load_state_dict(state["encoder"])
        self.towe_head.load_state_dict(state["head"])

    def forward(self, tokens: Sequence[Sequence[str]], aspect_mask: torch.Tensor | None = None,
                towe: bool = True, atsa: bool = True) -> dict:
        out = {}
        logits = None
        if towe or (atsa and self.use_sla):
            hidden, mask = self.towe_encoder(tokens)
            logits = self.towe_head(hidden)
            out["towe_logits"], out["mask"] = logits, mask
        if atsa:
            if aspect_mask is None:
                raise ValueError("sentiment classification needs an aspect mask")
            hidden, mask = self.atsa_encoder(tokens)
            aspect_mask = aspect_mask.to(hidden.device)
            r = masked_aspect_repr(hidden, aspect_mask)
            if self.use_sla:
                scores = logits if self.sla_mode is SlaMode.LOGITS else F.softmax(logits, dim=-1)
                if self.detach_attention:
                    scores = scores.detach()
                alpha, beta = sla_attention(scores, self.sla_mode, mask)
                r = torch.cat([r, opinion_repr(hidden, alpha)], dim=-1)
                out["alpha"], out["beta"] = alpha, beta
            out["sentiment_logits"] = self.atsa_head(r)
            out["mask"] = mask
        return out
