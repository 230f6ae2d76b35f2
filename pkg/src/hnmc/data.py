"""Corpus reading, embedding tables and synthetic corpora.

File formats:

* column corpora: UTF-8 text, one token per line as whitespace-separated
  columns, blank line between sentences, lines starting with "-DOCSTART-"
  skipped. Token and label columns are configurable indices.
* embedding tables: UTF-8 text, one entry per line, "word v1 v2 ... vD"
  with a constant dimension D. Out-of-vocabulary words map to the zero
  vector, so lookup never fails.

The synthetic corpora are desk-scale stand-ins for tagging datasets: one is
sampled from a seeded hidden Markov chain with near-deterministic emissions
(labels are the hidden states, so high accuracy is attainable), the other
labels every token by the class of the *next* token, which no left-to-right
model can predict above chance.
"""

from dataclasses import dataclass, field

import numpy as np

from .hmm import GenerativeHmmParams, sample_path, stationary_distribution


@dataclass
class Corpus:
    """Token sequences with integer labels and the label-name table."""

    sequences: list  # of (tokens, label_indices)
    label_names: list
    split: str = ""

    @property
    def label_map(self):
        return {name: i for i, name in enumerate(self.label_names)}

    def __len__(self):
        return len(self.sequences)


def read_conll(path, token_column=0, label_column=-1, label_names=None):
    """Read a column corpus; one sequence per sentence.

    With label_names given, the label set is frozen and unseen labels are an
    error (evaluation splits must not extend the training label map);
    otherwise the map is built in first-seen order.
    """
    frozen = label_names is not None
    names = list(label_names) if frozen else []
    index = {n: i for i, n in enumerate(names)}
    sequences = []
    tokens, labels = [], []

    def flush():
        if tokens:
            sequences.append((tokens.copy(), labels.copy()))
            tokens.clear()
            labels.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                flush()
                continue
            if line.startswith("-DOCSTART-"):
                continue
            cols = line.split()
            try:
                token = cols[token_column]
                label = cols[label_column]
            except IndexError:
                raise ValueError(
                    f"{path}:{lineno}: ragged line, {len(cols)} columns but "
                    f"columns {token_column}/{label_column} requested") from None
            if label not in index:
                if frozen:
                    raise ValueError(f"{path}:{lineno}: label {label!r} not in the frozen label set")
                index[label] = len(names)
                names.append(label)
            tokens.append(token)
            labels.append(index[label])
    flush()
    if not sequences:
        raise ValueError(f"{path}: empty corpus")
    return Corpus(sequences=sequences, label_names=names)


def write_conll(path, corpus):
    with open(path, "w", encoding="utf-8") as fh:
        for tokens, labels in corpus.sequences:
            for token, label in zip(tokens, labels):
                fh.write(f"{token} {corpus.label_names[label]}\n")
            fh.write("\n")


@dataclass
class EmbeddingTable:
    """Word -> vector map with a zero vector for unknown words."""

    dim: int
    vectors: dict
    lowercase: bool = False
    unk: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.unk is None:
            self.unk = np.zeros(self.dim)

    def lookup(self, word):
        if self.lowercase:
            word = word.lower()
        return self.vectors.get(word, self.unk)

    def embed(self, tokens):
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self.lookup(t) for t in tokens])


def load_embeddings(path, lowercase=False):
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise ValueError(f"{path}:{lineno}: no vector components")
            elif len(values) != dim:
                raise ValueError(
                    f"{path}:{lineno}: dimension {len(values)} != {dim} of earlier lines")
            key = word.lower() if lowercase else word
            vectors[key] = np.asarray([float(v) for v in values])
    if dim is None:
        raise ValueError(f"{path}: empty embedding file")
    return EmbeddingTable(dim=dim, vectors=vectors, lowercase=lowercase)


def one_hot_embeddings(vocab):
    """One-hot table over a fixed vocabulary (OOV still maps to zeros)."""
    eye = np.eye(len(vocab))
    return EmbeddingTable(dim=len(vocab), vectors={w: eye[i] for i, w in enumerate(vocab)})


@dataclass
class LabeledSequence:
    embeddings: np.ndarray  # (T, D)
    labels: list
    tokens: list


def embed_corpus(corpus, table):
    """Materialize per-sequence embedding matrices; dimension is constant."""
    return [LabeledSequence(embeddings=table.embed(tokens), labels=list(labels), tokens=list(tokens))
            for tokens, labels in corpus.sequences]


def hmm_sampling_params(seed):
    """The seeded generator chain behind synth_corpus("hmm_sampled").

    Three states, three symbols, random mixing transitions, emissions 0.95
    on the diagonal: the Bayes-optimal tagger reads the label off the token
    95+% of the time.
    """
    rng = np.random.default_rng([seed, 0xA])
    trans = rng.dirichlet(np.ones(3), size=3)
    trans = (trans + 0.15) / (1.0 + 0.45)
    emit = np.full((3, 3), 0.025)
    np.fill_diagonal(emit, 0.95)
    return GenerativeHmmParams(pi=stationary_distribution(trans), trans=trans, emit=emit)


def synth_corpus(kind, seed, size, split=""):
    """Deterministic synthetic corpus plus its one-hot embedding table."""
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = np.random.default_rng([seed, 0xB])
    if kind == "hmm_sampled":
        params = hmm_sampling_params(seed)
        tokens_vocab = ["w0", "w1", "w2"]
        label_names = ["s0", "s1", "s2"]
        sequences = []
        for _ in range(size):
            length = int(rng.integers(2, 11))
            states, symbols = sample_path(params, rng, length)
            sequences.append(([tokens_vocab[y] for y in symbols], states))
        corpus = Corpus(sequences=sequences, label_names=label_names, split=split)
        return corpus, one_hot_embeddings(tokens_vocab)
    if kind == "lookahead":
        tokens_vocab = ["a", "b", "c", "d"]
        label_names = ["e0", "e1"]
        cls = [0, 0, 1, 1]
        sequences = []
        for _ in range(size):
            length = int(rng.integers(4, 10))
            symbols = [int(rng.integers(0, 4)) for _ in range(length)]
            labels = [cls[symbols[t + 1]] for t in range(length - 1)] + [cls[symbols[-1]]]
            sequences.append(([tokens_vocab[y] for y in symbols], labels))
        corpus = Corpus(sequences=sequences, label_names=label_names, split=split)
        return corpus, one_hot_embeddings(tokens_vocab)
    raise ValueError(f"unknown synthetic corpus kind {kind!r}")
