"""scikit-learn style estimator for the full two-stage extractor."""

from __future__ import annotations

import copy
import logging
import random
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import AsmoteTriplet, Sentence, Span, gold_triplets, remove_conflict, DatasetSplit
from .encoder import (
    SequenceTooLongError, Vocabulary, build_encoder, load_word_vectors,
)
from .evaluation import atsa_accuracy, triplet_prf, towe_f1
from .model import AteTagger, StageTwoModel
from .tagging import decode_bio, mark_aspect
from .training import (
    ModelVariant, StageTwoExample, TrainConfig, encoder_configs, predict_ate_tags,
    predict_stage_two, train_stage_one, train_stage_two,
)

logger = logging.getLogger(__name__)


def check_sentences(X, max_length: int = 128, require_annotations: bool = False) -> list[Sentence]:
    """Coerce input to a list of Sentence; bare token lists become unannotated sentences."""
    if isinstance(X, DatasetSplit):
        X = X.sentences
    if isinstance(X, (str, bytes)) or not hasattr(X, "__iter__"):
        raise TypeError("expected a sequence of sentences or token lists")
    sentences = []
    for i, item in enumerate(X):
        if isinstance(item, Sentence):
            sentence = item
        elif isinstance(item, (list, tuple)) and all(isinstance(t, str) for t in item):
            sentence = Sentence(str(i), item)
        else:
            raise TypeError(f"item {i}: expected Sentence or list of tokens, got {type(item).__name__}")
        if len(sentence) > max_length:
            raise SequenceTooLongError(
                f"sentence {sentence.id}: {len(sentence)} tokens exceed the limit of {max_length}"
            )
        sentences.append(sentence)
    if require_annotations and not any(s.aspects for s in sentences):
        raise ValueError("training data has no aspect annotations")
    return sentences


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


class AspectGuidedExtractor(BaseEstimator):
    """Extracts (aspect, sentiment, all-opinions) triplets from tokenized sentences.

    Stage one tags aspects; stage two marks each aspect with ``#``/``$``,
    tags its opinions and classifies its sentiment. ``variant`` selects a row
    of the variant matrix (``AGF``, ``AGF_S``, ``AGF-p``, ``AGF-t``, each
    optionally with ``^B`` or ``^BF``).

    ``fit`` takes annotated Sentence objects (the annotations are the
    targets); ``predict`` returns one list of triplets per sentence.
    """

    def __init__(self, variant="AGF", embedding_path=None, word_vectors=None, pretrained_path=None,
                 hidden_size=256, embedding_dim=300, dropout=0.5, batch_size=32, learning_rate=None,
                 patience=10, max_epochs=100, selection="sum", detach_attention=False, max_length=128,
                 vocabulary=None, random_state=0, device=None):
        self.variant = variant
        self.embedding_path = embedding_path
        self.word_vectors = word_vectors
        self.pretrained_path = pretrained_path
        self.hidden_size = hidden_size
        self.embedding_dim = embedding_dim
        self.dropout = dropout
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.max_epochs = max_epochs
        self.selection = selection
        self.detach_attention = detach_attention
        self.max_length = max_length
        self.vocabulary = vocabulary
        self.random_state = random_state
        self.device = device

    @classmethod
    def from_train_config(cls, config: TrainConfig, **overrides) -> "AspectGuidedExtractor":
        params = dict(
            variant=config.variant, embedding_path=config.embedding_path,
            pretrained_path=config.pretrained_path, hidden_size=config.hidden_size,
            embedding_dim=config.embedding_dim,
            dropout=config.dropout, batch_size=config.batch_size, learning_rate=config.learning_rate,
            patience=config.patience, max_epochs=config.max_epochs, selection=config.selection,
            detach_attention=config.detach_attention, device=config.device,
        )
        params.update(overrides)
        return cls(**params)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            variant=self.variant_.name, batch_size=self.batch_size, learning_rate=self.learning_rate,
            patience=self.patience, max_epochs=self.max_epochs, runs=1, seeds=[self.random_state],
            hidden_size=self.hidden_size, embedding_dim=self.embedding_dim, dropout=self.dropout,
            selection=self.selection, detach_attention=self.detach_attention,
        )

    def _build(self, token_source: Sequence[Sentence] = (), vectors=None):
        """Create untrained modules for the configured variant."""
        self.variant_ = ModelVariant.parse(self.variant)
        kinds = self.variant_.encoder_kinds()
        vocab = None
        if "bilstm_emb" in kinds.values():
            if vectors is None:
                vectors = self.word_vectors
            if not hasattr(self, "vocab_"):
                tokens = sorted({t for s in token_source for t in s.tokens} | set(self.vocabulary or ()))
                if vectors is None:
                    if self.embedding_path is None:
                        raise ValueError("bilstm_emb encoders need embedding_path or word_vectors")
                    vectors = load_word_vectors(self.embedding_path, tokens, self.embedding_dim)
                # tokens without a pretrained vector share the UNK row
                known = [t for t in tokens if t in vectors or t.lower() in vectors]
                logger.info("vocabulary: %d of %d tokens have pretrained vectors", len(known), len(tokens))
                self.vocab_ = Vocabulary(known)
            vocab = self.vocab_
            if vectors is None:
                if self.embedding_path is None:
                    raise ValueError("bilstm_emb encoders need embedding_path or word_vectors")
                vectors = load_word_vectors(self.embedding_path, vocab.itos, self.embedding_dim)
        configs = encoder_configs(
            self.variant_, embedding_path=self.embedding_path, word_vectors=vectors if vectors is not None else {},
            pretrained_path=self.pretrained_path, hidden_size=self.hidden_size,
            embedding_dim=self.embedding_dim, dropout=self.dropout, max_length=self.max_length,
        )
        self.ate_ = AteTagger(build_encoder(configs["ate"], vocab, vectors))
        self.stage_two_ = StageTwoModel(
            build_encoder(configs["towe"], vocab, vectors), build_encoder(configs["atsa"], vocab, vectors),
            use_sla=self.variant_.uses_sla, sla_mode=self.variant_.sla_mode,
            detach_attention=self.detach_attention, dropout=self.dropout,
        )
        device = self.device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.ate_.to(device)
        self.stage_two_.to(device)

    def fit(self, X, y=None, X_dev=None):
        """Train both stages; ``X_dev`` drives early stopping (defaults to ``X``)."""
        train = [s for s in remove_conflict(DatasetSplit("train", check_sentences(X, self.max_length, True)))]
        dev = train if X_dev is None else list(
            remove_conflict(DatasetSplit("dev", check_sentences(X_dev, self.max_length)))
        )
        seed_everything(self.random_state)
        if hasattr(self, "vocab_"):
            del self.vocab_
        self._build([*train, *dev])
        config = self._train_config()
        self.history_ = []
        self.ate_dev_f1_ = train_stage_one(self.ate_, train, dev, config, self.random_state, self.history_)
        result = train_stage_two(self.stage_two_, train, dev, config, self.random_state + 1000, self.history_)
        self.separate_towe_state_ = result["separate_towe"]
        self.stage_two_dev_ = result["best"]
        self._refresh_opinion_model()
        return self

    def _refresh_opinion_model(self):
        # without attention the TOWE tagger is never trained jointly, so both sources coincide
        if not self.variant_.uses_sla:
            self.separate_towe_model_ = self.stage_two_
            return
        self.separate_towe_model_ = copy.deepcopy(self.stage_two_)
        self.separate_towe_model_.load_towe_state(self.separate_towe_state_)

    def _opinion_model(self, opinion_source=None):
        source = opinion_source or ("separate" if self.variant_.family == "AGF-t" else "joint")
        if source not in ("joint", "separate"):
            raise ValueError(f"unknown opinion source {opinion_source!r}")
        return self.separate_towe_model_ if source == "separate" else self.stage_two_

    # -- prediction --------------------------------------------------------

    def predict_aspects(self, X) -> list[set]:
        check_is_fitted(self, "ate_")
        sentences = check_sentences(X, self.max_length)
        tags = predict_ate_tags(self.ate_, [list(s.tokens) for s in sentences])
        return [decode_bio(t) for t in tags]

    def _examples(self, sentences, aspects) -> list[StageTwoExample]:
        return [
            StageTwoExample(s.id, a, mark_aspect(s.tokens, a), [], None, frozenset())
            for s, spans in zip(sentences, aspects) for a in sorted(spans)
        ]

    def predict_details(self, X, aspects=None, opinion_source=None) -> list[list[dict]]:
        """Per sentence, per aspect: ``aspect``, ``sentiment``, ``opinions`` (possibly empty)."""
        check_is_fitted(self, "stage_two_")
        opinion_model = self._opinion_model(opinion_source)
        sentences = check_sentences(X, self.max_length)
        if aspects is None:
            aspects = self.predict_aspects(sentences)
        if len(aspects) != len(sentences):
            raise ValueError("one aspect set per sentence is required")
        examples = self._examples(sentences, aspects)
        result = {s.id: [] for s in sentences}
        if examples:
            sentiments = predict_stage_two(self.stage_two_, examples, towe=False, atsa=True)
            opinions = predict_stage_two(opinion_model, examples, towe=True, atsa=False)
            for e, s_out, o_out in zip(examples, sentiments, opinions):
                result[e.sentence_id].append(
                    {"aspect": e.aspect, "sentiment": s_out["sentiment"], "opinions": o_out["opinions"]}
                )
        return [result[s.id] for s in sentences]

    def predict(self, X, opinion_source=None) -> list[list[AsmoteTriplet]]:
        return [
            [AsmoteTriplet(d["aspect"], d["sentiment"], d["opinions"]) for d in details if d["opinions"]]
            for details in self.predict_details(X, opinion_source=opinion_source)
        ]

    def attention(self, tokens, aspect: Span):
        """Marked tokens and their attention weights for one aspect."""
        check_is_fitted(self, "stage_two_")
        if not self.variant_.uses_sla:
            raise ValueError(f"variant {self.variant_.name} has no attention")
        sentence = check_sentences([tokens], self.max_length)[0]
        example = self._examples([sentence], [{aspect}])[0]
        out = predict_stage_two(self.stage_two_, [example], towe=False, atsa=True)[0]
        return list(example.marked.tokens), out["alpha"]

    # -- scoring -----------------------------------------------------------

    def score(self, X, y=None) -> float:
        return self.evaluate(X)["asmote_f1"]

    def evaluate(self, X, opinion_source=None) -> dict:
        """Triplet P/R/F1 on predicted aspects; ATSA accuracy and TOWE F1 on gold aspects."""
        sentences = list(remove_conflict(DatasetSplit("eval", check_sentences(X, self.max_length))))
        ids = [s.id for s in sentences]
        pred = [
            (sid, t) for sid, triplets in zip(ids, self.predict(sentences, opinion_source)) for t in triplets
        ]
        report = triplet_prf(gold_triplets(sentences), pred)
        gold_aspects = [{a.aspect for a in s.aspects} for s in sentences]
        details = self.predict_details(sentences, aspects=gold_aspects, opinion_source=opinion_source)
        gold_sent, gold_op, pred_sent, pred_op = {}, {}, {}, {}
        for s, items in zip(sentences, details):
            for a in s.aspects:
                gold_sent[(s.id, a.aspect)] = a.sentiment
                gold_op[(s.id, a.aspect)] = a.opinions
            for d in items:
                pred_sent[(s.id, d["aspect"])] = d["sentiment"]
                pred_op[(s.id, d["aspect"])] = d["opinions"]
        towe = towe_f1(gold_op, pred_op)
        return {
            "asmote_precision": report.precision, "asmote_recall": report.recall, "asmote_f1": report.f1,
            "atsa_accuracy": atsa_accuracy(gold_sent, pred_sent),
            "towe_precision": towe.precision, "towe_recall": towe.recall, "towe_f1": towe.f1,
        }

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "stage_two_")
        params = self.get_params()
        params["word_vectors"] = None
        state = {
            "params": params,
            "vocab": getattr(self, "vocab_", None) and self.vocab_.itos,
            "ate": self.ate_.state_dict(),
            "stage_two": self.stage_two_.state_dict(),
            "separate_towe": self.separate_towe_state_,
            "history": self.history_,
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(state, path)

    @classmethod
    def load(cls, path) -> "AspectGuidedExtractor":
        state = torch.load(path, map_location="cpu", weights_only=False)
        estimator = cls(**state["params"])
        if state["vocab"] is not None:
            estimator.vocab_ = Vocabulary(state["vocab"][2:])
        estimator._build(vectors={})
        estimator.ate_.load_state_dict(state["ate"])
        estimator.stage_two_.load_state_dict(state["stage_two"])
        device = next(estimator.stage_two_.parameters()).device
        estimator.separate_towe_state_ = {
            part: {k: v.to(device) for k, v in tensors.items()} for part, tensors in state["separate_towe"].items()
        }
        estimator.history_ = state["history"]
        estimator._refresh_opinion_model()
        return estimator
