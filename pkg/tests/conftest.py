import numpy as np
import pytest
import torch

from asmote.corpus import AspectAnnotation, Sentence, Sentiment, Span

POS, NEU, NEG = Sentiment.POSITIVE, Sentiment.NEUTRAL, Sentiment.NEGATIVE

# (text, [(aspect span, sentiment, [opinion spans])])
MEMORIZATION_SENTENCES = [
    ("the bread is top notch as well .", [((1, 2), POS, [(3, 5)])]),
    ("the lobster knuckles were ok but tasteless , and the sashimi was n't fresh .",
     [((1, 3), NEG, [(4, 5), (6, 7)]), ((10, 11), NEG, [(11, 14)])]),
    ("great food but the service was dreadful .", [((1, 2), POS, [(0, 1)]), ((4, 5), NEG, [(6, 7)])]),
    ("the staff was friendly .", [((1, 2), POS, [(3, 4)])]),
    ("we ordered the pasta .", [((3, 4), NEU, [])]),
    ("the decor is cozy and warm .", [((1, 2), POS, [(3, 4), (5, 6)])]),
    ("prices are too high for the portions .", [((0, 1), NEG, [(2, 4)]), ((6, 7), NEU, [])]),
    ("the wine list is extensive .", [((1, 3), POS, [(4, 5)])]),
    ("our waiter was rude and slow .", [((1, 2), NEG, [(3, 4), (5, 6)])]),
    ("the dessert was ok .", [((1, 2), NEU, [(3, 4)])]),
    ("i loved the sushi .", [((3, 4), POS, [(1, 2)])]),
    ("the music was loud .", [((1, 2), NEG, [(3, 4)])]),
    ("the menu changes every week .", [((1, 2), NEU, [])]),
    ("delicious pizza and fresh salad .", [((1, 2), POS, [(0, 1)]), ((4, 5), POS, [(3, 4)])]),
    ("the coffee was cold and bitter .", [((1, 2), NEG, [(3, 4), (5, 6)])]),
    ("the view is stunning .", [((1, 2), POS, [(3, 4)])]),
    ("the fries were soggy .", [((1, 2), NEG, [(3, 4)])]),
    ("the chef came to our table .", [((1, 2), NEU, [])]),
    ("the soup was bland but the bread was warm .",
     [((1, 2), NEG, [(3, 4)]), ((6, 7), POS, [(8, 9)])]),
    ("the place is small and noisy .", [((1, 2), NEG, [(3, 4), (5, 6)])]),
]


def make_sentence(i, text, annotations):
    return Sentence(
        f"s{i}",
        text.split(),
        [AspectAnnotation(Span(*a), s, frozenset(Span(*o) for o in ops)) for a, s, ops in annotations],
    )


@pytest.fixture(scope="session")
def memorization_sentences():
    return [make_sentence(i, t, a) for i, (t, a) in enumerate(MEMORIZATION_SENTENCES)]


@pytest.fixture(scope="session")
def tiny_vectors(memorization_sentences):
    rng = np.random.default_rng(0)
    tokens = sorted({t for s in memorization_sentences for t in s.tokens})
    return {t: rng.normal(0, 0.5, 16).astype(np.float32) for t in tokens}


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


SEMEVAL_XML = """<?xml version="1.0" encoding="UTF-8"?>
<sentences>
  <sentence id="100">
    <text>The bread is top notch as well.</text>
    <aspectTerms>
      <aspectTerm term="bread" polarity="positive" from="4" to="9"/>
    </aspectTerms>
  </sentence>
  <sentence id="101">
    <text>The lobster knuckles were ok, but tasteless, and the sashimi wasn't fresh; the decor is nothing special.</text>
    <aspectTerms>
      <aspectTerm term="lobster knuckles" polarity="negative" from="4" to="20"/>
      <aspectTerm term="sashimi" polarity="negative" from="53" to="60"/>
      <aspectTerm term="decor" polarity="conflict" from="79" to="84"/>
    </aspectTerms>
  </sentence>
  <sentence id="102">
    <text>We went there on a Tuesday.</text>
  </sentence>
  <sentence id="103">
    <text>The menu is in French.</text>
    <aspectTerms>
      <aspectTerm term="menu" polarity="neutral" from="4" to="8"/>
    </aspectTerms>
  </sentence>
</sentences>
"""

_S101 = "The lobster knuckles were ok , but tasteless , and the sashimi was n't fresh ; the decor is nothing special ."


def _tagged(tokens, spans):
    from asmote.tagging import encode_bio, tag_names

    return " ".join(f"{t}\\{g}" for t, g in zip(tokens, tag_names(encode_bio([Span(*s) for s in spans], len(tokens)))))


def towe_lines():
    t100 = "The bread is top notch as well .".split()
    t101 = _S101.split()
    return [
        "s_id\tsentence\ttarget_tags\topinion_words_tags",
        f"100\t{' '.join(t100)}\t{_tagged(t100, [(1, 2)])}\t{_tagged(t100, [(3, 5)])}",
        f"101\t{_S101}\t{_tagged(t101, [(1, 3)])}\t{_tagged(t101, [(4, 5), (7, 8)])}",
        f"101\t{_S101}\t{_tagged(t101, [(11, 12)])}\t{_tagged(t101, [(12, 15)])}",
    ]


@pytest.fixture
def toy_sources(tmp_path):
    semeval = tmp_path / "semeval.xml"
    semeval.write_text(SEMEVAL_XML, encoding="utf-8")
    towe = tmp_path / "towe.tsv"
    towe.write_text("\n".join(towe_lines()) + "\n", encoding="utf-8")
    return semeval, towe


@pytest.fixture(scope="session")
def tiny_bert(tmp_path_factory, memorization_sentences):
    """A randomly initialised two-head BERT saved to disk with a word-level vocab."""
    from transformers import BertConfig, BertModel, BertTokenizer

    path = tmp_path_factory.mktemp("tiny_bert")
    words = sorted({t.lower() for s in memorization_sentences for t in s.tokens} | {"#", "$"})
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", *words, "##s"]
    BertTokenizer(vocab={w: i for i, w in enumerate(vocab)}).save_pretrained(path)
    config = BertConfig(vocab_size=len(vocab), hidden_size=16, num_hidden_layers=1, num_attention_heads=2,
                        intermediate_size=32, max_position_embeddings=160)
    torch.manual_seed(0)
    BertModel(config).save_pretrained(path)
    return str(path)


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE_RESULTS

    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        status, title, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")
