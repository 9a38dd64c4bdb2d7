"""Independent reference computations shared by the unit and acceptance tests."""

import math
from unittest import mock

import numpy as np
import torch

from asmote import model as model_module
from asmote.corpus import AspectAnnotation, Sentence, Sentiment, Span
from asmote.encoder import EncoderConfig, Vocabulary, build_encoder
from asmote.model import StageTwoModel
from asmote.training import stage_two_batch_loss, stage_two_examples


def scalar_nll(probs, gold):
    total = 0.0
    for row, g in zip(probs, gold):
        total -= math.log(row[g])
    return total


def brute_force_prf(gold, pred):
    """Triplet P/R/F1 by nested loops over ``(sentence id, triplet)`` pairs."""
    gold = [(sid, t.aspect, int(t.sentiment), set(t.opinions)) for sid, t in gold]
    pred = [(sid, t.aspect, int(t.sentiment), set(t.opinions)) for sid, t in pred if len(t.opinions) > 0]
    matched = 0
    for p in pred:
        for g in gold:
            if p[0] == g[0] and p[1] == g[1] and p[2] == g[2] and p[3] == g[3]:
                matched += 1
                break
    precision = matched / len(pred) if pred else 0.0
    recall = matched / len(gold) if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def random_triplet_instance(rng, n_sentences=4, max_len=12):
    """Gold and predicted triplets over a few random sentences, with frequent near misses."""
    from asmote.corpus import AsmoteTriplet

    def triplet(length):
        a = int(rng.integers(0, length))
        n_op = int(rng.integers(0, 3))
        ops = set()
        for _ in range(n_op):
            o = int(rng.integers(0, length))
            ops.add(Span(o, min(length, o + int(rng.integers(1, 3)))))
        return AsmoteTriplet(Span(a, a + 1), Sentiment(int(rng.integers(0, 3))), frozenset(ops))

    gold, pred = {}, {}
    for i in range(n_sentences):
        length = int(rng.integers(3, max_len))
        sid = f"r{i}"
        g = {triplet(length) for _ in range(int(rng.integers(0, 4)))}
        gold.update({(sid, t): None for t in g if t.opinions})
        p = set()
        for t in g:
            roll = rng.random()
            if roll < 0.4:
                p.add(t)
            elif roll < 0.6:
                p.add(AsmoteTriplet(t.aspect, Sentiment((int(t.sentiment) + 1) % 3), t.opinions))
            elif roll < 0.8:
                p.add(AsmoteTriplet(t.aspect, t.sentiment, frozenset(list(t.opinions)[:1])))
        p |= {triplet(length) for _ in range(int(rng.integers(0, 3)))}
        pred.update({(sid, t): None for t in p})
    return list(gold), list(pred)


GRAD_SENTENCE = Sentence("g0", ("the", "sashimi", "was", "not", "fresh"),
                         (AspectAnnotation(Span(1, 2), Sentiment.NEGATIVE, frozenset({Span(3, 5)})),))


def gradient_model(sla_mode="logits", detach=False, use_sla=True, seed=0):
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    vectors = {t: rng.normal(0, 1, 4) for t in GRAD_SENTENCE.tokens}
    vocab = Vocabulary(GRAD_SENTENCE.tokens)

    def encoder():
        config = EncoderConfig("bilstm_emb", hidden_size=2, word_vectors=vectors, embedding_dim=4, dropout=0.0)
        return build_encoder(config, vocab)

    model = StageTwoModel(encoder(), encoder(), use_sla=use_sla, sla_mode=sla_mode,
                          detach_attention=detach, dropout=0.0)
    return model.double().train()


def gradient_check(model, eps=1e-6):
    """Relative error between autograd and central differences for every parameter tensor.

    With detached attention the numerical loss keeps the weights fixed at
    their value under the base parameters, matching the stopped gradient.
    """
    batch = stage_two_examples([GRAD_SENTENCE])
    params = dict(model.named_parameters())
    model.zero_grad()
    loss = stage_two_batch_loss(model, batch)
    loss.backward()
    analytic = {n: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for n, p in params.items()}

    patch = None
    if model.use_sla and model.detach_attention:
        with torch.no_grad():
            fixed = model([list(e.marked.tokens) for e in batch],
                          torch.tensor([[i in range(e.marked.aspect_span.start, e.marked.aspect_span.end)
                                         for i in range(len(e.marked))] for e in batch]))["alpha"].clone()
        original = model_module.sla_attention

        def frozen(scores, mode, mask=None):
            return fixed, original(scores, mode, mask)[1]

        patch = mock.patch.object(model_module, "sla_attention", frozen)
        patch.start()
    errors = {}
    try:
        with torch.no_grad():
            for name, p in params.items():
                numeric = torch.zeros_like(p)
                flat = p.view(-1)
                for k in range(flat.numel()):
                    saved = flat[k].item()
                    flat[k] = saved + eps
                    up = stage_two_batch_loss(model, batch).item()
                    flat[k] = saved - eps
                    down = stage_two_batch_loss(model, batch).item()
                    flat[k] = saved
                    numeric.view(-1)[k] = (up - down) / (2 * eps)
                denom = (numeric.norm() + analytic[name].norm()).item()
                errors[name] = 0.0 if denom < 1e-10 else (numeric - analytic[name]).norm().item() / denom
    finally:
        if patch is not None:
            patch.stop()
    return errors, analytic


# criterion number -> (status, title, detail); printed in the terminal summary
ACCEPTANCE_RESULTS = {}
