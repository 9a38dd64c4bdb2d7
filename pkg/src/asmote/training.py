"""Optimization loops, the two-stage schedule, variant wiring and the
multi-run experiment protocol."""

from __future__ import annotations

import copy
import json
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import torch

from .ate import masked_sequence_nll
from .corpus import CorpusError, Sentence, Sentiment, Span, load_dataset, remove_conflict
from .encoder import EncoderConfig
from .evaluation import span_f1, towe_f1
from .tagging import decode_bio, encode_bio, mark_aspect, marked_opinion_tags
from .towe_sla import SlaMode

logger = logging.getLogger(__name__)

FAMILIES = ("AGF", "AGF-p", "AGF-t")
ENCODER_REGIMES = ("bilstm_emb", "bert_frozen", "bert_finetune")
DATA_ROOT_ENV = "ASMOTE_DATA_ROOT"


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelVariant:
    """One row of the variant matrix.

    ``AGF-p`` trains TOWE and ATSA separately without attention; ``AGF-t``
    trains like ``AGF`` but reads opinions from the TOWE model as it stood
    after its standalone warm-up.
    """

    family: str = "AGF"
    sla_mode: SlaMode = SlaMode.LOGITS
    encoder_regime: str = "bilstm_emb"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.encoder_regime not in ENCODER_REGIMES:
            raise ValueError(f"unknown encoder regime {self.encoder_regime!r}")
        object.__setattr__(self, "sla_mode", SlaMode(self.sla_mode))
        if self.family == "AGF-p" and self.sla_mode is SlaMode.PROBABILITIES:
            raise ValueError("AGF-p has no attention, so it has no probabilities variant")

    @classmethod
    def parse(cls, name: "str | ModelVariant") -> "ModelVariant":
        if isinstance(name, ModelVariant):
            return name
        match = re.fullmatch(r"(AGF(?:-[pt])?)(_S)?(?:\^(BF|B))?", name.strip())
        if match is None:
            raise ValueError(f"cannot parse variant name {name!r}")
        family, probs, bert = match.groups()
        regime = {None: "bilstm_emb", "B": "bert_frozen", "BF": "bert_finetune"}[bert]
        return cls(family, SlaMode.PROBABILITIES if probs else SlaMode.LOGITS, regime)

    @property
    def name(self) -> str:
        suffix = {"bilstm_emb": "", "bert_frozen": "^B", "bert_finetune": "^BF"}[self.encoder_regime]
        return self.family + ("_S" if self.sla_mode is SlaMode.PROBABILITIES else "") + suffix

    @property
    def uses_sla(self) -> bool:
        return self.family != "AGF-p"

    @property
    def finetune(self) -> bool:
        return self.encoder_regime == "bert_finetune"

    def encoder_kinds(self) -> dict[str, str]:
        """Encoder kind per task: ATE and TOWE get BiLSTM-over-BERT, ATSA plain BERT."""
        if self.encoder_regime == "bilstm_emb":
            return {"ate": "bilstm_emb", "towe": "bilstm_emb", "atsa": "bilstm_emb"}
        return {"ate": "bilstm_bert", "towe": "bilstm_bert", "atsa": "bert"}

    def default_learning_rate(self) -> float:
        return 2e-5 if self.finetune else 1e-3


@dataclass
class TrainConfig:
    """Experiment settings; the JSON config file uses the same keys."""

    variant: str = "AGF"
    dataset: str = "14res"
    data_dir: str | None = None
    embedding_path: str | None = None
    pretrained_path: str | None = None
    batch_size: int = 32
    learning_rate: float | None = None
    patience: int = 10
    max_epochs: int = 100
    runs: int = 5
    seeds: list = field(default_factory=list)
    hidden_size: int = 256
    embedding_dim: int = 300
    dropout: float = 0.5
    detach_attention: bool = False
    selection: str = "sum"
    workers: int = 1
    run_dir: str = "runs"
    save_models: bool = False
    device: str | None = None

    def __post_init__(self):
        ModelVariant.parse(self.variant)
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1 or self.runs < 1:
            raise ValueError("batch_size, patience, max_epochs and runs must be positive")
        if self.selection not in ("sum", "atsa", "towe"):
            raise ValueError(f"unknown selection criterion {self.selection!r}")
        if not self.seeds:
            self.seeds = list(range(self.runs))
        if len(self.seeds) != self.runs:
            raise ValueError(f"{len(self.seeds)} seeds given for {self.runs} runs")

    @property
    def model_variant(self) -> ModelVariant:
        return ModelVariant.parse(self.variant)

    @property
    def lr(self) -> float:
        return self.learning_rate if self.learning_rate is not None else self.model_variant.default_learning_rate()

    def dataset_dir(self) -> Path:
        root = self.data_dir or os.environ.get(DATA_ROOT_ENV)
        if root is None:
            raise CorpusError(f"no data directory: set data_dir or ${DATA_ROOT_ENV}")
        root = Path(root)
        return root / self.dataset if (root / self.dataset).is_dir() else root

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    return data


def apply_overrides(data: dict, overrides: Iterable[str]) -> dict:
    """Apply ``key=value`` overrides; values are parsed as JSON when possible."""
    data = dict(data)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not key=value")
        try:
            data[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            data[key.strip()] = value
    return data


class EarlyStopping:
    """Tracks the best dev score; stops after ``patience`` non-improving epochs."""

    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = 0
        self.stale = 0

    def step(self, score: float, epoch: int) -> bool:
        if score > self.best:
            self.best, self.best_epoch, self.stale = score, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


# ---------------------------------------------------------------------------
# examples and batching

@dataclass
class AteExample:
    sentence_id: str
    tokens: list
    tags: list


@dataclass
class StageTwoExample:
    sentence_id: str
    aspect: Span
    marked: object  # MarkedSentence
    tags: list
    sentiment: int | None
    opinions: frozenset


def ate_examples(sentences: Sequence[Sentence]) -> list[AteExample]:
    return [
        AteExample(s.id, list(s.tokens), encode_bio((a.aspect for a in s.aspects), len(s)))
        for s in sentences
    ]


def stage_two_examples(sentences: Sequence[Sentence]) -> list[StageTwoExample]:
    """One example per non-conflict gold aspect, opinion-less aspects included."""
    examples = []
    for s in sentences:
        for a in s.aspects:
            if a.is_conflict:
                continue
            marked = mark_aspect(s.tokens, a.aspect)
            examples.append(
                StageTwoExample(s.id, a.aspect, marked, marked_opinion_tags(marked, a.opinions),
                                int(a.sentiment), a.opinions)
            )
    return examples


def batches(items: Sequence, batch_size: int, generator: torch.Generator | None = None):
    order = torch.randperm(len(items), generator=generator).tolist() if generator is not None else range(len(items))
    order = list(order)
    for i in range(0, len(order), batch_size):
        yield [items[j] for j in order[i:i + batch_size]]


def pad_tags(tag_lists: Sequence[Sequence[int]]) -> torch.Tensor:
    width = max(len(t) for t in tag_lists)
    out = torch.full((len(tag_lists), width), -1, dtype=torch.long)
    for row, tags in enumerate(tag_lists):
        out[row, :len(tags)] = torch.as_tensor(tags)
    return out


def aspect_masks(examples: Sequence[StageTwoExample]) -> torch.Tensor:
    width = max(len(e.marked) for e in examples)
    mask = torch.zeros(len(examples), width, dtype=torch.bool)
    for row, e in enumerate(examples):
        mask[row, e.marked.aspect_span.start:e.marked.aspect_span.end] = True
    return mask


# ---------------------------------------------------------------------------
# losses per batch (sum over positions per sentence, mean over the batch)

def ate_batch_loss(model, batch: Sequence[AteExample]) -> torch.Tensor:
    logits, mask = model([e.tokens for e in batch])
    gold = pad_tags([e.tags for e in batch]).to(logits.device)
    return masked_sequence_nll(logits, gold, mask).mean()


def stage_two_batch_loss(model, batch: Sequence[StageTwoExample], towe: bool = True,
                         atsa: bool = True) -> torch.Tensor:
    out = model([list(e.marked.tokens) for e in batch], aspect_masks(batch) if atsa else None,
                towe=towe, atsa=atsa)
    loss = 0.0
    if towe:
        logits = out["towe_logits"]
        gold = pad_tags([e.tags for e in batch]).to(logits.device)
        loss = loss + masked_sequence_nll(logits, gold, out["mask"])
    if atsa:
        gold = torch.as_tensor([e.sentiment for e in batch], device=out["sentiment_logits"].device)
        loss = loss + torch.nn.functional.cross_entropy(out["sentiment_logits"], gold, reduction="none")
    return loss.mean()


# ---------------------------------------------------------------------------
# batched inference

@torch.no_grad()
def predict_ate_tags(model, token_lists: Sequence[Sequence[str]], batch_size: int = 64) -> list[list[int]]:
    model.eval()
    result = []
    for batch in batches(list(token_lists), batch_size):
        logits, _ = model(batch)
        tags = logits.argmax(dim=-1).tolist()
        result.extend(t[:len(tokens)] for t, tokens in zip(tags, batch))
    return result


@torch.no_grad()
def predict_stage_two(model, examples: Sequence[StageTwoExample], towe: bool = True, atsa: bool = True,
                      batch_size: int = 64) -> list[dict]:
    """Per example: ``opinions`` (original coordinates), ``sentiment``, ``alpha``."""
    model.eval()
    result = []
    for batch in batches(list(examples), batch_size):
        out = model([list(e.marked.tokens) for e in batch], aspect_masks(batch) if atsa else None,
                    towe=towe, atsa=atsa)
        for row, e in enumerate(batch):
            n = len(e.marked)
            item = {}
            if towe:
                tags = out["towe_logits"][row, :n].argmax(dim=-1).tolist()
                spans = {e.marked.project_out(span) for span in decode_bio(tags)}
                spans.discard(None)
                item["opinions"] = frozenset(spans)
            if atsa:
                item["sentiment"] = Sentiment(int(out["sentiment_logits"][row].argmax()))
                if "alpha" in out:
                    item["alpha"] = out["alpha"][row, :n].tolist()
            result.append(item)
    return result


def ate_dev_f1(model, examples: Sequence[AteExample]) -> float:
    tags = predict_ate_tags(model, [e.tokens for e in examples])
    gold = {e.sentence_id: decode_bio(e.tags) for e in examples}
    pred = {e.sentence_id: decode_bio(t) for e, t in zip(examples, tags)}
    return span_f1(gold, pred).f1


def stage_two_dev_scores(model, examples: Sequence[StageTwoExample], towe: bool = True,
                         atsa: bool = True) -> dict:
    outputs = predict_stage_two(model, examples, towe=towe, atsa=atsa)
    scores = {}
    keys = [(e.sentence_id, e.aspect) for e in examples]
    if towe:
        gold = {k: e.opinions for k, e in zip(keys, examples)}
        pred = {k: o["opinions"] for k, o in zip(keys, outputs)}
        scores["towe_f1"] = towe_f1(gold, pred).f1
    if atsa:
        correct = sum(int(o["sentiment"]) == e.sentiment for o, e in zip(outputs, examples))
        scores["atsa_accuracy"] = correct / len(examples) if examples else 0.0
    return scores


# ---------------------------------------------------------------------------
# phases

def run_phase(phase: str, model: torch.nn.Module, parameters: Iterable[torch.nn.Parameter],
              train: Sequence, loss_fn: Callable, score_fn: Callable[[], float],
              config: TrainConfig, seed: int, history: list) -> float:
    """Train until dev score stops improving for ``patience`` epochs; restore the best epoch."""
    params = [p for p in parameters if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.lr)
    stopper = EarlyStopping(config.patience)
    generator = torch.Generator().manual_seed(seed)
    best_state = copy.deepcopy(model.state_dict())
    logger.info("phase %s: %d examples, %d parameter tensors", phase, len(train), len(params))
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        total, steps = 0.0, 0
        for step, batch in enumerate(batches(train, config.batch_size, generator)):
            loss = loss_fn(model, batch)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"phase {phase}, epoch {epoch}, batch {step}: non-finite loss {loss.item()}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item()
            steps += 1
        model.eval()
        score = score_fn()
        if stopper.step(score, epoch):
            best_state = copy.deepcopy(model.state_dict())
        history.append({"phase": phase, "epoch": epoch, "loss": total / max(steps, 1), "dev": score})
        logger.info("phase %s epoch %d loss %.4f dev %.4f (best %.4f @ %d)",
                    phase, epoch, total / max(steps, 1), score, stopper.best, stopper.best_epoch)
        if stopper.should_stop:
            break
    model.load_state_dict(best_state)
    logger.info("phase %s done: best dev %.4f at epoch %d", phase, stopper.best, stopper.best_epoch)
    return stopper.best


def train_stage_one(model, train: Sequence[Sentence], dev: Sequence[Sentence], config: TrainConfig,
                    seed: int = 0, history: list | None = None) -> float:
    """Fit the aspect tagger; returns the best dev span F1."""
    history = [] if history is None else history
    train_ex, dev_ex = ate_examples(train), ate_examples(dev)
    return run_phase("ate", model, model.parameters(), train_ex, ate_batch_loss,
                     lambda: ate_dev_f1(model, dev_ex), config, seed, history)


def _joint_score(scores: dict, selection: str) -> float:
    if selection == "atsa":
        return scores["atsa_accuracy"]
    if selection == "towe":
        return scores["towe_f1"]
    return scores["atsa_accuracy"] + scores["towe_f1"]


def train_stage_two(model, train: Sequence[Sentence], dev: Sequence[Sentence], config: TrainConfig,
                    seed: int = 0, history: list | None = None) -> dict:
    """Fit TOWE and ATSA on gold aspects.

    With attention the TOWE tagger is first trained alone to its early stop,
    then both are trained on the summed loss. Without attention the two are
    trained independently. Returns the TOWE state after the standalone phase
    (``separate_towe``) and the best dev scores.
    """
    history = [] if history is None else history
    train_ex, dev_ex = stage_two_examples(train), stage_two_examples(dev)

    def towe_loss(m, b):
        return stage_two_batch_loss(m, b, towe=True, atsa=False)

    best = {}
    best["towe"] = run_phase(
        "towe", model, model.towe_parameters(), train_ex, towe_loss,
        lambda: stage_two_dev_scores(model, dev_ex, atsa=False)["towe_f1"], config, seed, history,
    )
    separate_towe = model.towe_state()

    if model.use_sla:
        best["joint"] = run_phase(
            "joint", model, model.parameters(), train_ex, stage_two_batch_loss,
            lambda: _joint_score(stage_two_dev_scores(model, dev_ex), config.selection),
            config, seed + 1, history,
        )
    else:
        best["atsa"] = run_phase(
            "atsa", model, model.atsa_parameters(), train_ex,
            lambda m, b: stage_two_batch_loss(m, b, towe=False, atsa=True),
            lambda: stage_two_dev_scores(model, dev_ex, towe=False)["atsa_accuracy"],
            config, seed + 1, history,
        )
    return {"separate_towe": separate_towe, "best": best}


def encoder_configs(variant: ModelVariant, *, embedding_path=None, word_vectors=None, pretrained_path=None,
                    hidden_size=256, embedding_dim=300, dropout=0.5, max_length=128) -> dict[str, EncoderConfig]:
    return {
        task: EncoderConfig(
            kind=kind, hidden_size=hidden_size, finetune_pretrained=variant.finetune,
            embedding_path=embedding_path if kind == "bilstm_emb" else None,
            word_vectors=word_vectors if kind == "bilstm_emb" else None,
            embedding_dim=embedding_dim,
            pretrained_path=pretrained_path if kind != "bilstm_emb" else None,
            max_length=max_length, dropout=dropout,
        )
        for task, kind in variant.encoder_kinds().items()
    }


# ---------------------------------------------------------------------------
# experiments

@dataclass
class RunManifest:
    config: dict
    seeds: list
    runs: list  # metric dicts, one per seed
    average: dict

    @staticmethod
    def average_metrics(runs: Sequence[dict]) -> dict:
        keys = sorted({k for r in runs for k in r})
        return {k: sum(r[k] for r in runs) / len(runs) for k in keys if all(k in r for r in runs)}

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "manifest.jsonl"
        with path.open("w", encoding="utf-8") as f:
            f.write(json.dumps({"type": "config", "config": self.config}) + "\n")
            for seed, metrics in zip(self.seeds, self.runs):
                f.write(json.dumps({"type": "run", "seed": seed, "metrics": metrics}) + "\n")
            f.write(json.dumps({"type": "average", "metrics": self.average}) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.jsonl"
        config, seeds, runs, average = {}, [], [], {}
        for line in path.read_text(encoding="utf-8").splitlines():
            record = json.loads(line)
            if record["type"] == "config":
                config = record["config"]
            elif record["type"] == "run":
                seeds.append(record["seed"])
                runs.append(record["metrics"])
            elif record["type"] == "average":
                average = record["metrics"]
        return cls(config, seeds, runs, average)


def _single_run(config: TrainConfig, seed: int, splits: dict, vocabulary: list, run_dir=None) -> dict:
    from .estimator import AspectGuidedExtractor

    torch.manual_seed(seed)
    estimator = AspectGuidedExtractor.from_train_config(config, random_state=seed, vocabulary=vocabulary)
    estimator.fit(splits["train"].sentences, X_dev=splits["dev"].sentences)
    if config.save_models:
        estimator.save(Path(run_dir or config.run_dir) / f"model_seed{seed}.pt")
    metrics = estimator.evaluate(splits["test"].sentences)
    if estimator.variant_.family == "AGF":
        # the standalone TOWE snapshot gives the AGF-t numbers from the same run
        alt = estimator.evaluate(splits["test"].sentences, opinion_source="separate")
        metrics.update({f"agf_t_{k}": v for k, v in alt.items() if k.startswith("asmote")})
    return metrics


def check_inputs(config: TrainConfig) -> dict:
    """Load data and check external resources before any training starts."""
    directory = config.dataset_dir()
    splits = {name: remove_conflict(split) for name, split in load_dataset(directory).items()}
    variant = config.model_variant
    if variant.encoder_regime == "bilstm_emb":
        if config.embedding_path is None or not Path(config.embedding_path).is_file():
            raise CorpusError(f"word-vector file not found: {config.embedding_path}")
    elif config.pretrained_path is None or not Path(config.pretrained_path).is_dir():
        raise CorpusError(f"pretrained model directory not found: {config.pretrained_path}")
    return splits


def run_experiment(config: TrainConfig, run_dir=None) -> RunManifest:
    """Train and test ``config.runs`` seeds and average their test metrics."""
    splits = check_inputs(config)
    vocabulary = sorted({t for split in splits.values() for s in split for t in s.tokens})
    if config.workers > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            runs = list(pool.map(_single_run, [config] * config.runs, config.seeds,
                                 [splits] * config.runs, [vocabulary] * config.runs, [run_dir] * config.runs))
    else:
        runs = [_single_run(config, seed, splits, vocabulary, run_dir) for seed in config.seeds]
    manifest = RunManifest(config.to_dict(), list(config.seeds), runs, RunManifest.average_metrics(runs))
    manifest.save(run_dir or config.run_dir)
    return manifest
