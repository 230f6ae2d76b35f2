import numpy as np
import pytest

from hnmc.data import (Corpus, EmbeddingTable, embed_corpus, hmm_sampling_params,
                       load_embeddings, one_hot_embeddings, read_conll,
                       synth_corpus, write_conll)


class TestReadConll:
    def test_two_line_sentence(self, tmp_path):
        path = tmp_path / "tiny.conll"
        path.write_text("Batman NOUN\nis VERB\n\n", encoding="utf-8")
        corpus = read_conll(path)
        assert len(corpus) == 1
        tokens, labels = corpus.sequences[0]
        assert tokens == ["Batman", "is"]
        assert [corpus.label_names[i] for i in labels] == ["NOUN", "VERB"]

    def test_label_map_first_seen_order(self, tmp_path):
        path = tmp_path / "c.conll"
        path.write_text("a X\nb Y\nc X\n\nd Z\n\n", encoding="utf-8")
        corpus = read_conll(path)
        assert corpus.label_names == ["X", "Y", "Z"]
        assert corpus.label_map == {"X": 0, "Y": 1, "Z": 2}

    def test_docstart_skipped_and_multi_column(self, tmp_path):
        path = tmp_path / "c.conll"
        path.write_text("-DOCSTART- -X- O\n\nBatman NNP B-PER\nreturns VBZ O\n\n",
                        encoding="utf-8")
        corpus = read_conll(path, token_column=0, label_column=2)
        assert len(corpus) == 1
        assert corpus.sequences[0][0] == ["Batman", "returns"]
        assert corpus.label_names == ["B-PER", "O"]

    def test_blank_only_file_is_empty_corpus(self, tmp_path):
        path = tmp_path / "blank.conll"
        path.write_text("\n\n\n", encoding="utf-8")
        with pytest.raises(ValueError, match="empty corpus"):
            read_conll(path)

    def test_ragged_line(self, tmp_path):
        path = tmp_path / "ragged.conll"
        path.write_text("a X\nb\n\n", encoding="utf-8")
        with pytest.raises(ValueError, match="ragged"):
            read_conll(path, token_column=0, label_column=1)

    def test_frozen_labels_reject_unseen(self, tmp_path):
        path = tmp_path / "c.conll"
        path.write_text("a X\nb NEW\n\n", encoding="utf-8")
        with pytest.raises(ValueError, match="frozen"):
            read_conll(path, label_names=["X", "Y"])

    def test_roundtrip_identity(self, tmp_path):
        corpus = Corpus(sequences=[(["a", "b"], [0, 1]), (["c"], [1])],
                        label_names=["X", "Y"])
        path = tmp_path / "rt.conll"
        write_conll(path, corpus)
        back = read_conll(path)
        assert back.sequences == corpus.sequences
        assert back.label_names == corpus.label_names


class TestEmbeddings:
    def test_load_and_lookup(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("cat 1.0 2.0 3.0\ndog 4.0 5.0 6.0\n", encoding="utf-8")
        table = load_embeddings(path)
        assert table.dim == 3
        assert np.allclose(table.lookup("cat"), [1.0, 2.0, 3.0])
        assert np.allclose(table.lookup("dog"), [4.0, 5.0, 6.0])

    def test_oov_is_zero_vector(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("cat 1.0 2.0\n", encoding="utf-8")
        table = load_embeddings(path)
        assert np.allclose(table.lookup("unseen"), [0.0, 0.0])

    def test_mixed_dimension_error(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("cat 1.0 2.0\ndog 1.0 2.0 3.0\n", encoding="utf-8")
        with pytest.raises(ValueError, match="dimension"):
            load_embeddings(path)

    def test_lowercase_flag(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("Cat 1.0 2.0\n", encoding="utf-8")
        table = load_embeddings(path, lowercase=True)
        assert np.allclose(table.lookup("CAT"), [1.0, 2.0])

    def test_one_hot_table(self):
        table = one_hot_embeddings(["a", "b", "c"])
        assert np.allclose(table.lookup("b"), [0, 1, 0])
        assert np.allclose(table.lookup("zz"), 0.0)

    def test_embed_corpus_constant_dim(self):
        corpus = Corpus(sequences=[(["a", "b"], [0, 1]), (["b"], [1])],
                        label_names=["X", "Y"])
        data = embed_corpus(corpus, one_hot_embeddings(["a", "b"]))
        assert data[0].embeddings.shape == (2, 2)
        assert data[1].embeddings.shape == (1, 2)
        assert data[0].labels == [0, 1]

    def test_lookup_deterministic(self):
        table = EmbeddingTable(dim=2, vectors={"a": np.array([1.0, 0.5])})
        assert np.array_equal(table.lookup("a"), table.lookup("a"))


class TestSynthCorpora:
    def test_fixed_seed_reproducible(self):
        c1, t1 = synth_corpus("hmm_sampled", 7, 20)
        c2, t2 = synth_corpus("hmm_sampled", 7, 20)
        assert c1.sequences == c2.sequences
        assert t1.dim == t2.dim

    def test_hmm_sampled_labels_recoverable_from_tokens(self):
        corpus, _ = synth_corpus("hmm_sampled", 3, 200)
        # near-deterministic emissions: token w_i mostly carries label s_i
        agree = total = 0
        for tokens, labels in corpus.sequences:
            for tok, lab in zip(tokens, labels):
                agree += int(tok == f"w{lab}")
                total += 1
        assert agree / total > 0.9

    def test_lookahead_labels_depend_on_next_token(self):
        corpus, _ = synth_corpus("lookahead", 5, 100)
        cls = {"a": 0, "b": 0, "c": 1, "d": 1}
        for tokens, labels in corpus.sequences:
            for t in range(len(tokens) - 1):
                assert labels[t] == cls[tokens[t + 1]]
            assert labels[-1] == cls[tokens[-1]]

    def test_lookahead_prefix_carries_no_signal(self):
        # empirical mutual independence: over many sequences, the label at a
        # lookahead position is balanced regardless of the current token
        corpus, _ = synth_corpus("lookahead", 11, 2000)
        by_token = {}
        for tokens, labels in corpus.sequences:
            for t in range(len(tokens) - 1):
                by_token.setdefault(tokens[t], []).append(labels[t])
        for token, labs in by_token.items():
            assert abs(np.mean(labs) - 0.5) < 0.05

    def test_empirical_transition_frequencies_converge(self):
        params = hmm_sampling_params(9)
        corpus, _ = synth_corpus("hmm_sampled", 9, 10_000)
        counts = np.zeros((3, 3))
        for _, labels in corpus.sequences:
            for a, b in zip(labels, labels[1:]):
                counts[a, b] += 1
        freq = counts / counts.sum(axis=1, keepdims=True)
        assert np.abs(freq - params.trans).max() < 0.05

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            synth_corpus("nope", 0, 5)
