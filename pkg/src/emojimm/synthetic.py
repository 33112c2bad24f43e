"""Desk-scale synthetic corpora with controllable per-modality class signal.

Text-signalled classes carry class cue words in their text; image-signalled
classes carry a class colour patch in their picture. Everything else is
filler: neutral words, or a grey patch on a grey background.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import Post
from .emoji_table import TOP20_EMOJI
from .vision import image_embedding, write_ppm

FILLER = (
    "today", "just", "this", "with", "my", "the", "and", "so", "is", "it",
    "we", "our", "at", "for", "time", "day", "night", "weekend", "again",
    "finally", "here", "back", "little", "new", "first", "always", "still",
    "really", "some", "more", "all", "out", "good", "got", "one", "last",
    "can't", "wait", "what", "when",
)

# Cue words per class, roughly themed after the emoji at the same index.
CUES = (
    ("love", "forever", "babe"),
    ("lol", "hilarious", "dead"),
    ("gorgeous", "obsessed", "stunning"),
    ("bestie", "sisters", "xoxo"),
    ("blessed", "smile", "grateful"),
    ("lit", "fire", "savage"),
    ("#usa", "america", "#nyc"),
    ("sunshine", "outside", "summer"),
    ("cool", "shades", "chill"),
    ("yes", "#ootd", "hype"),
    ("blue", "#myboys", "mommy"),
    ("kiss", "muah", "cutie"),
    ("please", "pray", "thankful"),
    ("purple", "vibes", "crush"),
    ("gym", "workout", "#fitness"),
    ("sparkle", "magic", "glitter"),
    ("perfect", "okay", "nailed"),
    ("facts", "real", "#truth"),
    ("party", "birthday", "congrats"),
    ("puppy", "dog", "#doggo"),
)


@dataclass(frozen=True)
class SyntheticSpec:
    k: int
    n: int
    text_signal_classes: tuple
    image_signal_classes: tuple
    noise_rate: float = 0.0
    seed: int = 0
    image_size: int = 32
    labels: Optional[tuple] = None

    def __post_init__(self):
        if self.k < 1 or self.n < 0:
            raise ValueError("k must be >= 1 and n >= 0")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must lie in [0, 1]")
        covered = set(self.text_signal_classes) | set(self.image_signal_classes)
        if covered != set(range(self.k)):
            raise ValueError("text and image signal classes must together cover all k classes")
        if self.labels is None and self.k > len(TOP20_EMOJI):
            raise ValueError(f"give explicit labels for k > {len(TOP20_EMOJI)}")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")

    @property
    def label_list(self) -> tuple:
        return tuple(self.labels) if self.labels is not None else TOP20_EMOJI[: self.k]


def cue_words(c: int) -> tuple:
    return CUES[c] if c < len(CUES) else tuple(f"cue{c}{s}" for s in "abc")


def class_color(c: int, k: int) -> tuple:
    return colorsys.hsv_to_rgb(c / k, 0.85, 0.9)


def synthetic_image(rng: np.random.Generator, size: int, color=None) -> np.ndarray:
    """Grey noisy background with a rectangular patch: coloured, or grey when ``color`` is None."""
    bg = rng.uniform(0.3, 0.7)
    img = np.full((size, size, 3), bg)
    ph, pw = rng.integers(size // 2, size + 1, size=2)
    y0 = rng.integers(0, size - ph + 1)
    x0 = rng.integers(0, size - pw + 1)
    fill = np.asarray(color if color is not None else (rng.uniform(0.2, 0.8),) * 3)
    img[y0 : y0 + ph, x0 : x0 + pw] = fill
    img += rng.normal(0.0, 0.04, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _other(c: int, k: int, rng) -> int:
    return int((c + rng.integers(1, k)) % k) if k > 1 else c


def generate_synthetic(spec: SyntheticSpec, image_dir=None) -> list[Post]:
    """Generate ``spec.n`` labelled posts.

    With ``image_dir`` each picture is written there as PPM and referenced by
    path; otherwise its pooled visual embedding is stored on the post.
    """
    rng = np.random.default_rng(spec.seed)
    labels = spec.label_list
    text_sig = set(spec.text_signal_classes)
    img_sig = set(spec.image_signal_classes)
    if image_dir is not None:
        image_dir = Path(image_dir).resolve()
        image_dir.mkdir(parents=True, exist_ok=True)
    posts = []
    for i in range(spec.n):
        c = int(rng.integers(spec.k))
        # draw every random quantity unconditionally so streams stay aligned
        text_noisy = rng.random() < spec.noise_rate
        img_noisy = rng.random() < spec.noise_rate
        text_cue = _other(c, spec.k, rng) if text_noisy else c
        img_cue = _other(c, spec.k, rng) if img_noisy else c

        words = list(rng.choice(FILLER, size=int(rng.integers(4, 9))))
        if c in text_sig:
            cues = cue_words(text_cue)
            for _ in range(int(rng.integers(1, 3))):
                words.insert(int(rng.integers(0, len(words) + 1)), cues[int(rng.integers(len(cues)))])
        text = " ".join(words)

        color = class_color(img_cue, spec.k) if c in img_sig else None
        img = synthetic_image(rng, spec.image_size, color)
        pid = f"s{spec.seed}-{i:06d}"
        if image_dir is not None:
            path = image_dir / f"{pid}.ppm"
            write_ppm(path, img)
            posts.append(Post(pid, text, labels[c], image_ref=str(path)))
        else:
            vec = tuple(float(v) for v in image_embedding(img))
            posts.append(Post(pid, text, labels[c], visual_vec=vec))
    return posts


def with_emoji_in_text(posts, seed: int = 0) -> list[Post]:
    """Raw-form copies: the label emoji is inserted into the text and the label cleared."""
    rng = np.random.default_rng(seed)
    out = []
    for p in posts:
        words = p.text.split()
        words.insert(int(rng.integers(0, len(words) + 1)), p.label)
        out.append(Post(p.id, " ".join(words), "", p.image_ref, p.visual_vec))
    return out
