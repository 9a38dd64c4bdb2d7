"""Sentence encoders producing one hidden vector per word."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .tagging import ASPECT_END, ASPECT_START

logger = logging.getLogger(__name__)

ENCODER_KINDS = ("bilstm_emb", "bert", "bilstm_bert")
PAD, UNK = "<pad>", "<unk>"
MAX_LENGTH = 128
MARKER_SLACK = 2  # marked sentences carry two extra tokens


class SequenceTooLongError(ValueError):
    pass


@dataclass
class EncoderConfig:
    """Encoder settings.

    ``hidden_size`` is per LSTM direction; the encoder output is twice that
    for the LSTM kinds and the transformer width for ``bert``.
    ``bilstm_emb`` needs either ``embedding_path`` (word-vector text file)
    or an in-memory ``word_vectors`` mapping.
    """

    kind: str = "bilstm_emb"
    hidden_size: int = 256
    finetune_pretrained: bool = False
    embedding_path: str | None = None
    word_vectors: Mapping[str, Sequence[float]] | None = field(default=None, repr=False)
    embedding_dim: int = 300
    pretrained_path: str | None = None
    max_length: int = MAX_LENGTH
    dropout: float = 0.5
    freeze_embeddings: bool = False

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}; expected one of {ENCODER_KINDS}")
        if self.kind == "bilstm_emb" and self.embedding_path is None and self.word_vectors is None:
            raise ValueError("bilstm_emb encoder requires an embedding source")
        if self.kind != "bilstm_emb" and self.pretrained_path is None:
            raise ValueError(f"{self.kind} encoder requires pretrained_path")

    @property
    def uses_pretrained(self) -> bool:
        return self.kind != "bilstm_emb"


def load_word_vectors(path, restrict_to: Iterable[str] | None = None, dim: int = 300) -> dict[str, np.ndarray]:
    """Read ``token v1 ... vdim`` lines; tokens may contain spaces."""
    wanted = None if restrict_to is None else set(restrict_to)
    if wanted is not None:
        wanted |= {t.lower() for t in wanted}
    vectors = {}
    with open(path, encoding="utf-8", errors="replace") as f:
        for line in f:
            parts = line.rstrip().split(" ")
            if len(parts) < dim + 1:
                continue  # header line of word2vec-style files
            token = " ".join(parts[:-dim])
            if wanted is not None and token not in wanted:
                continue
            vectors[token] = np.asarray(parts[-dim:], dtype=np.float32)
    logger.info("loaded %d word vectors from %s", len(vectors), path)
    return vectors


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for token in (ASPECT_START, ASPECT_END, *tokens):
            self.add(token)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def lookup(self, token: str) -> int:
        index = self.stoi.get(token)
        if index is None:
            index = self.stoi.get(token.lower(), 1)
        return index


def _check_lengths(batch: Sequence[Sequence[str]], limit: int):
    for tokens in batch:
        if len(tokens) == 0:
            raise ValueError("empty token sequence")
        if len(tokens) > limit:
            raise SequenceTooLongError(f"sequence of {len(tokens)} tokens exceeds limit {limit}")


def _pad_mask(lengths: Sequence[int], device=None) -> torch.Tensor:
    lengths = torch.as_tensor(lengths, device=device)
    return torch.arange(int(lengths.max()), device=device)[None, :] < lengths[:, None]


class _BiLSTM(nn.Module):
    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.lstm = nn.LSTM(input_size, hidden_size, batch_first=True, bidirectional=True)

    def forward(self, inputs, lengths):
        packed = nn.utils.rnn.pack_padded_sequence(
            inputs, torch.as_tensor(lengths).cpu(), batch_first=True, enforce_sorted=False
        )
        output, _ = self.lstm(packed)
        output, _ = nn.utils.rnn.pad_packed_sequence(output, batch_first=True, total_length=inputs.size(1))
        return output


class BiLSTMEmbEncoder(nn.Module):
    """Word embeddings (pretrained init, single trainable UNK row) into a BiLSTM."""

    def __init__(self, config: EncoderConfig, vocab: Vocabulary,
                 vectors: Mapping[str, Sequence[float]] | None = None):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.embedding = nn.Embedding(len(vocab), config.embedding_dim, padding_idx=0)
        nn.init.normal_(self.embedding.weight, std=0.1)
        with torch.no_grad():
            self.embedding.weight[0].zero_()
            found = 0
            for token, index in vocab.stoi.items():
                vector = None if vectors is None else vectors.get(token)
                if vector is None and vectors is not None:
                    vector = vectors.get(token.lower())
                if vector is not None and index > 1:
                    self.embedding.weight[index] = torch.as_tensor(np.asarray(vector, dtype=np.float32))
                    found += 1
        logger.debug("initialised %d/%d embedding rows from pretrained vectors", found, len(vocab))
        self.embedding.weight.requires_grad_(not config.freeze_embeddings)
        self.dropout = nn.Dropout(config.dropout)
        self.rnn = _BiLSTM(config.embedding_dim, config.hidden_size)

    @property
    def output_size(self) -> int:
        return 2 * self.config.hidden_size

    def forward(self, batch: Sequence[Sequence[str]]):
        _check_lengths(batch, self.config.max_length + MARKER_SLACK)
        lengths = [len(tokens) for tokens in batch]
        ids = torch.zeros(len(batch), max(lengths), dtype=torch.long)
        for row, tokens in enumerate(batch):
            ids[row, :len(tokens)] = torch.as_tensor([self.vocab.lookup(t) for t in tokens])
        ids = ids.to(self.embedding.weight.device)
        embedded = self.dropout(self.embedding(ids))
        return self.rnn(embedded, lengths), _pad_mask(lengths, ids.device)


class _Transformer(nn.Module):
    """Pretrained transformer returning first-subword vectors per word."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        from transformers import AutoModel, AutoTokenizer

        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.pretrained_path)
        self.model = AutoModel.from_pretrained(config.pretrained_path)
        if not config.finetune_pretrained:
            self.model.requires_grad_(False)

    @property
    def output_size(self) -> int:
        return self.model.config.hidden_size

    def train(self, mode: bool = True):
        super().train(mode)
        if not self.config.finetune_pretrained:
            self.model.eval()
        return self

    def forward(self, batch: Sequence[Sequence[str]]):
        encoded = self.tokenizer(
            [list(tokens) for tokens in batch], is_split_into_words=True,
            padding=True, return_tensors="pt",
        )
        limit = getattr(self.model.config, "max_position_embeddings", 512)
        if encoded["input_ids"].size(1) > limit:
            raise SequenceTooLongError(f"{encoded['input_ids'].size(1)} subwords exceed {limit}")
        device = next(self.model.parameters()).device
        inputs = {k: v.to(device) for k, v in encoded.items()}
        with torch.set_grad_enabled(self.config.finetune_pretrained and torch.is_grad_enabled()):
            states = self.model(**inputs).last_hidden_state
        lengths = [len(tokens) for tokens in batch]
        index = torch.zeros(len(batch), max(lengths), dtype=torch.long)
        for row in range(len(batch)):
            seen = set()
            for position, word in enumerate(encoded.word_ids(row)):
                if word is not None and word not in seen:
                    seen.add(word)
                    index[row, word] = position
            if len(seen) != lengths[row]:
                raise ValueError(f"tokenizer dropped words in {list(batch[row])}")
        index = index.to(device)
        words = states.gather(1, index[:, :, None].expand(-1, -1, states.size(-1)))
        return words, _pad_mask(lengths, device)


class BertEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.transformer = _Transformer(config)

    @property
    def output_size(self) -> int:
        return self.transformer.output_size

    def forward(self, batch):
        _check_lengths(batch, self.config.max_length + MARKER_SLACK)
        return self.transformer(batch)


class BiLSTMBertEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.transformer = _Transformer(config)
        self.dropout = nn.Dropout(config.dropout)
        self.rnn = _BiLSTM(self.transformer.output_size, config.hidden_size)

    @property
    def output_size(self) -> int:
        return 2 * self.config.hidden_size

    def forward(self, batch):
        _check_lengths(batch, self.config.max_length + MARKER_SLACK)
        states, mask = self.transformer(batch)
        return self.rnn(self.dropout(states), [len(t) for t in batch]), mask


def build_encoder(config: EncoderConfig, vocab: Vocabulary | None = None,
                  vectors: Mapping[str, Sequence[float]] | None = None) -> nn.Module:
    if config.kind == "bilstm_emb":
        if vocab is None:
            raise ValueError("bilstm_emb encoder needs a vocabulary")
        if vectors is None:
            vectors = config.word_vectors
        if vectors is None:
            vectors = load_word_vectors(config.embedding_path, restrict_to=vocab.itos, dim=config.embedding_dim)
        return BiLSTMEmbEncoder(config, vocab, vectors)
    if config.kind == "bert":
        return BertEncoder(config)
    return BiLSTMBertEncoder(config)


def pretrained_parameters(encoder: nn.Module) -> list[nn.Parameter]:
    transformer = getattr(encoder, "transformer", None)
    return [] if transformer is None else list(transformer.model.parameters())


def encode(encoder: nn.Module, tokens: Sequence[str], sentence_id: str | None = None) -> torch.Tensor:
    """Hidden states ``(len(tokens), hidden)`` for one sentence in eval mode."""
    limit = encoder.config.max_length + MARKER_SLACK
    if len(tokens) > limit:
        raise SequenceTooLongError(
            f"sentence {sentence_id or '?'}: {len(tokens)} tokens exceed the limit of {limit}"
        )
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            hidden, _ = encoder([list(tokens)])
    finally:
        encoder.train(was_training)
    return hidden[0, :len(tokens)]
