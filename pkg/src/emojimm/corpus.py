"""Posts, label extraction, top-k label tasks, splitting, and JSONL storage."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .emoji_table import DEFAULT_EMOJI_TABLE, EmojiTable, normalize_emoji

MIN_WORDS = 4


class LabelRejected(ValueError):
    """A raw post fails one of the dataset construction filters."""

    reason = "rejected"


class NoEmoji(LabelRejected):
    reason = "no emoji (exactly one emoji required)"


class MultipleEmoji(LabelRejected):
    reason = "more than one emoji (exactly one emoji required)"


class TooShort(LabelRejected):
    reason = f"fewer than {MIN_WORDS} words after emoji removal"


class CorpusFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Post:
    id: str
    text: str
    label: str = ""
    image_ref: Optional[str] = None
    visual_vec: Optional[tuple] = None

    def to_json(self) -> dict:
        obj = {"id": self.id, "text": self.text, "label": self.label}
        if self.image_ref is not None:
            obj["image"] = self.image_ref
        if self.visual_vec is not None:
            obj["visual_vec"] = list(self.visual_vec)
        return obj


@dataclass(frozen=True)
class LabelVocabulary:
    labels: tuple
    counts: tuple

    @property
    def k(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(f"label {label!r} not in vocabulary") from None

    def __post_init__(self):
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(self.labels)})

    def __contains__(self, label) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self.labels)

    def encode(self, labels: Iterable[str]) -> np.ndarray:
        return np.array([self.index(lab) for lab in labels], dtype=np.int64)

    def frequencies(self) -> list[tuple[str, int, float]]:
        total = sum(self.counts) or 1
        return [(lab, c, 100.0 * c / total) for lab, c in zip(self.labels, self.counts)]

    def save(self, path) -> None:
        lines = [f"{lab}\t{c}\n" for lab, c in zip(self.labels, self.counts)]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LabelVocabulary":
        labels, counts = [], []
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                lab, c = line.split("\t")
                counts.append(int(c))
            except ValueError:
                raise CorpusFormatError("expected '<emoji>\\t<count>'", n) from None
            labels.append(lab)
        return cls(tuple(labels), tuple(counts))


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    dev: tuple
    test: tuple
    seed: int


def extract_label(raw_text: str, emoji_table: EmojiTable = DEFAULT_EMOJI_TABLE) -> tuple[str, str]:
    """Return ``(clean_text, emoji)`` for a post carrying exactly one emoji.

    Raises NoEmoji, MultipleEmoji or TooShort when a construction filter fails.
    """
    spans = emoji_table.find_all(raw_text)
    if not spans:
        raise NoEmoji(NoEmoji.reason)
    if len(spans) > 1:
        raise MultipleEmoji(MultipleEmoji.reason)
    (a, b), = spans
    clean = " ".join((raw_text[:a] + " " + raw_text[b:]).split())
    if len(clean.split()) < MIN_WORDS:
        raise TooShort(TooShort.reason)
    return clean, normalize_emoji(raw_text[a:b])


def build_label_vocab(posts: Sequence[Post], k: int) -> LabelVocabulary:
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = Counter(p.label for p in posts)
    if k > len(counts):
        raise ValueError(f"k={k} exceeds the {len(counts)} distinct labels")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return LabelVocabulary(tuple(lab for lab, _ in ranked), tuple(c for _, c in ranked))


def filter_topk(posts: Iterable[Post], vocab: LabelVocabulary) -> list[Post]:
    return [p for p in posts if p.label in vocab]


def split(posts: Sequence[Post], seed: int) -> DatasetSplit:
    """Seeded shuffle, then floor(0.8n) train, floor(0.1n) dev, remainder test."""
    n = len(posts)
    if n < 10:
        raise ValueError(f"need at least 10 posts to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train, n_dev = (8 * n) // 10, n // 10
    shuffled = [posts[i] for i in order]
    return DatasetSplit(
        train=tuple(shuffled[:n_train]),
        dev=tuple(shuffled[n_train : n_train + n_dev]),
        test=tuple(shuffled[n_train + n_dev :]),
        seed=seed,
    )


def _post_from_obj(obj, line: int, require_label: bool) -> Post:
    if not isinstance(obj, dict):
        raise CorpusFormatError("expected a JSON object", line)
    for key in ("id", "text"):
        if not isinstance(obj.get(key), str):
            raise CorpusFormatError(f"field {key!r} must be a string", line)
    label = obj.get("label", "")
    if not isinstance(label, str) or (require_label and not label):
        raise CorpusFormatError("field 'label' must be a non-empty string", line)
    image = obj.get("image")
    if image is not None and not isinstance(image, str):
        raise CorpusFormatError("field 'image' must be a string path", line)
    vec = obj.get("visual_vec")
    if vec is not None:
        if not isinstance(vec, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in vec
        ):
            raise CorpusFormatError("field 'visual_vec' must be an array of numbers", line)
        vec = tuple(float(v) for v in vec)
    return Post(obj["id"], obj["text"], label, image, vec)


def load_posts(path, require_label: bool = True) -> list[Post]:
    posts = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON ({exc.msg})", n) from None
            posts.append(_post_from_obj(obj, n, require_label))
    return posts


def save_posts(path, posts: Iterable[Post]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in posts:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")


def label_posts(raw: Iterable[Post], emoji_table: EmojiTable = DEFAULT_EMOJI_TABLE):
    """Apply extract_label to raw posts; returns (kept posts, reject counts by reason)."""
    kept, rejected = [], Counter()
    for p in raw:
        try:
            text, emoji = extract_label(p.text, emoji_table)
        except LabelRejected as exc:
            rejected[type(exc).__name__] += 1
            continue
        kept.append(Post(p.id, text, emoji, p.image_ref, p.visual_vec))
    return kept, rejected
