"""Linear bag-of-features text classifier.

Each token indexes a row of the lookup table ``A`` (V x d). A document is the
mean of its in-vocabulary rows, ``h``; class scores are ``B^T h + b_out`` with
``B`` (d x k), followed by a softmax. Training minimises the mean negative
log-likelihood of the gold labels with SGD and a linearly decaying rate.
"""

from __future__ import annotations

import os
import string
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import macro_f1
from .linear import log_softmax, softmax, topk_order

_KEEP_PREFIX = "#@"
FORMAT = "text-model/1"


def _is_punct(ch: str) -> bool:
    return ch in string.punctuation or unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, trim punctuation; '#'/'@' prefixes survive."""
    tokens = []
    for raw in text.lower().split():
        i, j = 0, len(raw)
        while i < j and _is_punct(raw[i]) and raw[i] not in _KEEP_PREFIX:
            i += 1
        while j > i and _is_punct(raw[j - 1]):
            j -= 1
        tok = raw[i:j]
        if tok and tok.strip(_KEEP_PREFIX):
            tokens.append(tok)
    return tokens


@dataclass(frozen=True)
class TextVocab:
    tokens: tuple
    min_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def get(self, token: str, default=None):
        return self._index.get(token, default)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        idx = [self._index[t] for t in tokens if t in self._index]
        return np.array(idx, dtype=np.int64)


def build_text_vocab(texts, min_count: int = 2) -> TextVocab:
    """Tokens seen at least ``min_count`` times, ordered by frequency then spelling."""
    counts = Counter(tok for t in texts for tok in tokenize(t))
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return TextVocab(tuple(kept), min_count)


@dataclass(frozen=True)
class TextModelParams:
    A: np.ndarray  # V x d lookup table
    B: np.ndarray  # d x k output transform
    b_out: np.ndarray  # k (zeros when the bias is disabled)

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def k(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class BagOfFeatures:
    h: np.ndarray
    token_count: int


@dataclass(frozen=True)
class TextTrainConfig:
    dim: int = 50
    lr: float = 0.1
    epochs: int = 20
    min_count: int = 2
    seed: int = 0
    patience: int = 3
    bias: bool = True
    l2_normalize: bool = False
    mode: str = "sgd"  # or "batch" for full-batch gradient descent

    def __post_init__(self):
        if self.dim < 1 or self.lr <= 0 or self.epochs < 1 or self.min_count < 1 or self.patience < 1:
            raise ValueError("text training hyperparameters must be positive")
        if self.mode not in ("sgd", "batch"):
            raise ValueError(f"unknown training mode {self.mode!r}")


def bag_of_features(tokens: Sequence[str], params: TextModelParams, vocab: TextVocab) -> BagOfFeatures:
    idx = vocab.encode(tokens)
    if idx.size == 0:
        return BagOfFeatures(np.zeros(params.d), 0)
    return BagOfFeatures(params.A[idx].mean(axis=0), int(idx.size))


def forward(h: np.ndarray, params: TextModelParams) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise ValueError("non-finite bag of features")
    return softmax(h @ params.B + params.b_out)


# Documents as a flat (doc, token) incidence list with averaging weights, so a
# batch of bags is H = segment-mean of A rows.
@dataclass(frozen=True)
class _Docs:
    doc: np.ndarray
    tok: np.ndarray
    weight: np.ndarray
    n: int


def _pack(token_ids: Sequence[np.ndarray]) -> _Docs:
    lengths = np.array([len(t) for t in token_ids], dtype=np.int64)
    doc = np.repeat(np.arange(len(token_ids)), lengths)
    tok = np.concatenate(token_ids) if len(token_ids) else np.zeros(0, dtype=np.int64)
    weight = np.repeat(1.0 / np.maximum(lengths, 1), lengths)
    return _Docs(doc, tok.astype(np.int64), weight, len(token_ids))


def _bags(docs: _Docs, A: np.ndarray) -> np.ndarray:
    H = np.zeros((docs.n, A.shape[1]))
    np.add.at(H, docs.doc, A[docs.tok] * docs.weight[:, None])
    return H


def _loss_and_grads(docs: _Docs, y: np.ndarray, params: TextModelParams):
    H = _bags(docs, params.A)
    logp = log_softmax(H @ params.B + params.b_out)
    n = docs.n
    loss = -logp[np.arange(n), y].mean()
    G = np.exp(logp)
    G[np.arange(n), y] -= 1.0
    G /= n
    gB = H.T @ G
    gb = G.sum(axis=0)
    gH = G @ params.B.T
    gA = np.zeros_like(params.A)
    np.add.at(gA, docs.tok, gH[docs.doc] * docs.weight[:, None])
    return loss, gA, gB, gb


def nll_loss(batch, params: TextModelParams, vocab: TextVocab, labels) -> float:
    """Mean negative log-likelihood of the gold labels over ``(text, label)`` pairs."""
    loss, *_ = nll_loss_and_grad(batch, params, vocab, labels)
    return loss


def nll_loss_and_grad(batch, params: TextModelParams, vocab: TextVocab, labels):
    """Loss plus analytic gradients (dA, dB, db_out)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    index = {lab: i for i, lab in enumerate(labels)}
    docs = _pack([vocab.encode(tokenize(text)) for text, _ in batch])
    y = np.array([index[lab] for _, lab in batch], dtype=np.int64)
    return _loss_and_grads(docs, y, params)


@dataclass
class TextModel:
    """Trained classifier: vocabulary, parameters and the label order."""

    vocab: TextVocab
    params: TextModelParams
    labels: tuple
    l2_normalize: bool = False
    history: list = field(default_factory=list, compare=False)

    def encode(self, text: str) -> np.ndarray:
        return self.vocab.encode(tokenize(text))

    def embed(self, text: str) -> np.ndarray:
        # normalization only shapes the exported embedding, never the classifier
        return embed_text(text, self.params, self.vocab, self.l2_normalize)

    def embed_many(self, texts, normalize=None) -> np.ndarray:
        """Fusion embeddings; ``normalize`` defaults to the model's flag."""
        if not texts:
            return np.zeros((0, self.params.d))
        H = _bags(_pack([self.encode(t) for t in texts]), self.params.A)
        if self.l2_normalize if normalize is None else normalize:
            norms = np.linalg.norm(H, axis=1, keepdims=True)
            H = np.divide(H, norms, out=np.zeros_like(H), where=norms > 0)
        return H

    def predict_proba(self, texts) -> np.ndarray:
        return softmax(self.embed_many(texts, normalize=False) @ self.params.B + self.params.b_out)

    def predict_topk(self, text: str, m: int):
        return predict_topk_text(text, self.params, self.vocab, m, self.labels)

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.savez(
                fh,
                format=np.array(FORMAT),
                tokens=np.array(self.vocab.tokens, dtype=str),
                min_count=np.array(self.vocab.min_count),
                labels=np.array(self.labels, dtype=str),
                l2_normalize=np.array(self.l2_normalize),
                A=self.params.A,
                B=self.params.B,
                b_out=self.params.b_out,
            )
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "TextModel":
        with np.load(path, allow_pickle=False) as z:
            if str(z["format"]) != FORMAT:
                raise ValueError(f"{path}: not a {FORMAT} file")
            vocab = TextVocab(tuple(str(t) for t in z["tokens"]), int(z["min_count"]))
            params = TextModelParams(z["A"].copy(), z["B"].copy(), z["b_out"].copy())
            return cls(vocab, params, tuple(str(t) for t in z["labels"]), bool(z["l2_normalize"]))


def init_params(V: int, d: int, k: int, rng: np.random.Generator) -> TextModelParams:
    A = rng.uniform(-1.0 / d, 1.0 / d, size=(V, d))
    return TextModelParams(A, np.zeros((d, k)), np.zeros(k))


def train_text(train, dev, labels, config: TextTrainConfig = TextTrainConfig(), vocab: TextVocab = None) -> TextModel:
    """Fit on labelled posts; keep the epoch with the best dev macro-F1.

    ``train``/``dev`` are sequences of objects with ``.text`` and ``.label``.
    """
    if not train:
        raise ValueError("empty training set")
    labels = tuple(labels)
    index = {lab: i for i, lab in enumerate(labels)}
    k = len(labels)
    if vocab is None:
        vocab = build_text_vocab([p.text for p in train], config.min_count)
    rng = np.random.default_rng(config.seed)
    params = init_params(max(len(vocab), 1), config.dim, k, rng)
    A, B, b = params.A, params.B, params.b_out

    train_ids = [vocab.encode(tokenize(p.text)) for p in train]
    y = np.array([index[p.label] for p in train], dtype=np.int64)
    docs = _pack(train_ids)
    dev_docs = _pack([vocab.encode(tokenize(p.text)) for p in dev]) if dev else None
    y_dev = np.array([index[p.label] for p in dev], dtype=np.int64) if dev else None

    n = len(train)
    total = config.epochs * (n if config.mode == "sgd" else 1)
    step = 0
    history = []
    best_f1, best, stale = -1.0, None, 0
    for epoch in range(config.epochs):
        if config.mode == "sgd":
            for i in rng.permutation(n):
                lr = config.lr * (1.0 - step / total)
                step += 1
                idx = train_ids[i]
                if idx.size == 0:
                    h = np.zeros(config.dim)
                else:
                    h = A[idx].mean(axis=0)
                s = h @ B + b
                p = np.exp(s - s.max())
                p /= p.sum()
                p[y[i]] -= 1.0
                if idx.size:
                    grad_h = B @ p
                    np.add.at(A, idx, (-lr / idx.size) * grad_h)
                B -= lr * np.outer(h, p)
                if config.bias:
                    b -= lr * p
        else:
            lr = config.lr * (1.0 - step / total)
            step += 1
            _, gA, gB, gb = _loss_and_grads(docs, y, TextModelParams(A, B, b))
            A -= lr * gA
            B -= lr * gB
            if config.bias:
                b -= lr * gb

        current = TextModelParams(A, B, b)
        loss = _loss_and_grads(docs, y, current)[0]
        record = {"epoch": epoch + 1, "loss": float(loss)}
        if dev_docs is not None:
            H_dev = _bags(dev_docs, A)
            f1 = macro_f1(y_dev, np.argmax(H_dev @ B + b, axis=1), k)
            record["dev_macro_f1"] = f1
            if f1 > best_f1:
                best_f1, stale = f1, 0
                best = TextModelParams(A.copy(), B.copy(), b.copy())
            else:
                stale += 1
        history.append(record)
        if dev_docs is not None and stale >= config.patience:
            break

    final = best if best is not None else TextModelParams(A.copy(), B.copy(), b.copy())
    return TextModel(vocab, final, labels, config.l2_normalize, history)


def embed_text(text: str, params: TextModelParams, vocab: TextVocab, l2_normalize: bool = False) -> np.ndarray:
    h = bag_of_features(tokenize(text), params, vocab).h
    if l2_normalize:
        norm = np.linalg.norm(h)
        if norm > 0:
            h = h / norm
    return h


def predict_topk_text(text, params, vocab, m: int, labels):
    """Top-``m`` (label, probability) pairs; ties go to the lower label index."""
    if not 1 <= m <= params.k:
        raise ValueError(f"m must be in [1, {params.k}]")
    probs = forward(embed_text(text, params, vocab), params)
    return [(labels[i], float(probs[i])) for i in topk_order(probs, m)]
