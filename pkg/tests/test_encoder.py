import numpy as np
import pytest
import torch

from asmote.encoder import (
    EncoderConfig, SequenceTooLongError, Vocabulary, build_encoder, encode, load_word_vectors,
    pretrained_parameters,
)


def emb_encoder(vectors, hidden=8, dropout=0.0, max_length=128):
    vocab = Vocabulary(sorted(vectors))
    config = EncoderConfig("bilstm_emb", hidden_size=hidden, word_vectors=vectors, embedding_dim=16,
                           dropout=dropout, max_length=max_length)
    return build_encoder(config, vocab)


class TestConfig:
    def test_requires_embeddings(self):
        with pytest.raises(ValueError):
            EncoderConfig("bilstm_emb")

    def test_requires_pretrained(self):
        with pytest.raises(ValueError):
            EncoderConfig("bert")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            EncoderConfig("cnn", embedding_path="x")


def test_vocabulary_lookup():
    vocab = Vocabulary(["bread", "the"])
    assert vocab.lookup("<pad>") == 0
    assert vocab.lookup("zzz") == 1
    assert vocab.lookup("Bread") == vocab.lookup("bread") > 1
    assert "#" in vocab and "$" in vocab


def test_load_word_vectors(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("3 2\nthe 0.1 0.2\nnew york 1 2\nbread 3 4\n", encoding="utf-8")
    vectors = load_word_vectors(path, dim=2)
    assert set(vectors) == {"the", "new york", "bread"}
    assert vectors["new york"].tolist() == [1.0, 2.0]
    assert set(load_word_vectors(path, restrict_to=["The"], dim=2)) == {"the"}


class TestBiLSTMEmb:
    def test_embedding_rows_from_vectors(self, tiny_vectors):
        enc = emb_encoder(tiny_vectors)
        row = enc.embedding.weight[enc.vocab.lookup("bread")].detach().numpy()
        assert np.allclose(row, tiny_vectors["bread"])
        assert enc.embedding.weight[0].abs().sum() == 0

    @pytest.mark.parametrize("n", [1, 7, 130])
    def test_shape(self, tiny_vectors, n):
        enc = emb_encoder(tiny_vectors)
        hidden, mask = enc([["bread"] * n])
        assert hidden.shape == (1, n, 16)
        assert mask.all()

    def test_too_long(self, tiny_vectors):
        enc = emb_encoder(tiny_vectors)
        with pytest.raises(SequenceTooLongError, match="s42"):
            encode(enc, ["bread"] * 131, sentence_id="s42")
        with pytest.raises(SequenceTooLongError):
            enc([["bread"] * 131])

    def test_deterministic_in_eval(self, tiny_vectors):
        enc = emb_encoder(tiny_vectors, dropout=0.5)
        tokens = "the bread is top notch".split()
        assert torch.equal(encode(enc, tokens), encode(enc, tokens))
        assert enc.training  # encode restores the previous mode

    def test_padding_does_not_leak(self, tiny_vectors):
        enc = emb_encoder(tiny_vectors).eval()
        short = "the bread is good".split()
        long = "the staff was friendly and the music was loud".split()
        with torch.no_grad():
            batched, mask = enc([short, long])
            alone, _ = enc([short])
        assert torch.allclose(batched[0, :4], alone[0], atol=1e-6)
        assert mask[0].tolist() == [True] * 4 + [False] * 5
        assert batched[0, 4:].abs().sum() == 0

    def test_bidirectional_after_one_epoch(self, tiny_vectors, memorization_sentences):
        enc = emb_encoder(tiny_vectors)
        opt = torch.optim.Adam(enc.parameters(), lr=1e-2)
        for s in memorization_sentences:
            opt.zero_grad()
            hidden, _ = enc([list(s.tokens)])
            hidden.pow(2).mean().backward()
            opt.step()
        base = "the bread is top notch".split()
        h = encode(enc, base)
        h_last = encode(enc, base[:-1] + ["stunning"])
        h_first = encode(enc, ["our"] + base[1:])
        assert not torch.allclose(h[0], h_last[0])  # backward direction sees the future
        assert not torch.allclose(h[-1], h_first[-1])  # forward direction sees the past


class TestBert:
    def config(self, path, kind="bert", finetune=False):
        return EncoderConfig(kind, hidden_size=8, pretrained_path=path, finetune_pretrained=finetune, dropout=0.0)

    def test_first_subword_gather(self, tiny_bert):
        enc = build_encoder(self.config(tiny_bert))
        tokens = ["the", "#", "breads", "$", "were", "good"]
        hidden = encode(enc, tokens)
        assert hidden.shape == (6, 16)
        tok = enc.transformer.tokenizer
        encoded = tok([tokens], is_split_into_words=True, return_tensors="pt")
        with torch.no_grad():
            states = enc.transformer.model(**encoded).last_hidden_state[0]
        word_ids = encoded.word_ids(0)
        firsts = [word_ids.index(w) for w in range(6)]
        assert firsts[3] == firsts[2] + 2  # "breads" spans two pieces
        assert torch.allclose(hidden, states[firsts], atol=1e-6)

    def test_padding_mask(self, tiny_bert):
        enc = build_encoder(self.config(tiny_bert))
        hidden, mask = enc([["the", "bread"], ["the", "bread", "is", "good"]])
        assert hidden.shape == (2, 4, 16)
        assert mask.sum(1).tolist() == [2, 4]

    def test_too_long(self, tiny_bert):
        enc = build_encoder(self.config(tiny_bert))
        with pytest.raises(SequenceTooLongError):
            enc([["the"] * 131])

    def test_frozen_weights_do_not_move(self, tiny_bert):
        enc = build_encoder(self.config(tiny_bert, kind="bilstm_bert"))
        assert enc.output_size == 16
        before = [p.detach().clone() for p in pretrained_parameters(enc)]
        assert before and not any(p.requires_grad for p in pretrained_parameters(enc))
        trainable = [p for p in enc.parameters() if p.requires_grad]
        opt = torch.optim.Adam(trainable, lr=1e-2)
        enc.train()
        assert not enc.transformer.model.training
        for _ in range(3):
            opt.zero_grad()
            hidden, _ = enc([["the", "bread", "is", "good"]])
            hidden.sum().backward()
            opt.step()
        assert all(torch.equal(a, b) for a, b in zip(before, pretrained_parameters(enc)))

    def test_finetuned_weights_move(self, tiny_bert):
        enc = build_encoder(self.config(tiny_bert, finetune=True))
        before = [p.detach().clone() for p in pretrained_parameters(enc)]
        opt = torch.optim.Adam(enc.parameters(), lr=1e-2)
        opt.zero_grad()
        hidden, _ = enc([["the", "bread", "is", "good"]])
        hidden.pow(2).sum().backward()
        opt.step()
        assert not all(torch.equal(a, b) for a, b in zip(before, pretrained_parameters(enc)))
