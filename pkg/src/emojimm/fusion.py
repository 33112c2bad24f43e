"""Middle fusion: concatenated unimodal embeddings fed to L2 logistic regression.

``run_system`` realises the three systems (visual, textual, multimodal): it
trains whichever embedders the mode needs, extracts features, selects the L2
strength on dev macro-F1 and reports test metrics.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import vision
from .corpus import DatasetSplit, LabelVocabulary, build_label_vocab
from .evaluation import ConfusionMatrix, MetricsReport, evaluate_indices, macro_f1
from .linear import gradient_descent, logreg_objective, softmax, topk_order
from .text_model import TextModel, TextTrainConfig, train_text

log = logging.getLogger(__name__)

MODES = ("visual", "textual", "multimodal")
LAMBDA_GRID = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)
FORMAT = "fusion-logreg/1"


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    modality: str
    text_dim: int = 0

    @property
    def dim(self) -> int:
        return self.values.size

    def parts(self) -> tuple[np.ndarray, np.ndarray]:
        """(text part, visual part) of a multimodal vector."""
        return self.values[: self.text_dim], self.values[self.text_dim :]


def concat(text_emb, vis_emb) -> FeatureVector:
    t = np.asarray(text_emb, dtype=np.float64).ravel()
    v = np.asarray(vis_emb, dtype=np.float64).ravel()
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
        raise ValueError("non-finite embedding")
    return FeatureVector(np.concatenate([t, v]), "multimodal", t.size)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))


def standardize(features) -> tuple[np.ndarray, Standardizer]:
    """Column-wise z-scores on the training set; near-constant columns pass through."""
    X = np.asarray([getattr(f, "values", f) for f in features], dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("standardization needs at least 2 samples")
    mu, sd = X.mean(axis=0), X.std(axis=0)
    flat = sd < 1e-12
    stats = Standardizer(np.where(flat, 0.0, mu), np.where(flat, 1.0, sd))
    return stats.transform(X), stats


@dataclass(frozen=True)
class LogRegConfig:
    max_iter: int = 500
    tol: float = 1e-6
    standardize: bool = True
    init: str = "zeros"  # or "random"
    seed: int = 0


@dataclass(frozen=True)
class LogRegParams:
    W: np.ndarray  # dim x k
    b: np.ndarray
    lam: float
    stats: Standardizer
    loss: float = float("nan")
    iters: int = 0

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    @property
    def k(self) -> int:
        return self.W.shape[1]

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.savez(
                fh,
                format=np.array(FORMAT),
                W=self.W,
                b=self.b,
                lam=np.array(self.lam),
                mean=self.stats.mean,
                std=self.stats.std,
                loss=np.array(self.loss),
                iters=np.array(self.iters),
            )
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "LogRegParams":
        with np.load(path, allow_pickle=False) as z:
            if str(z["format"]) != FORMAT:
                raise ValueError(f"{path}: not a {FORMAT} file")
            return cls(
                z["W"].copy(), z["b"].copy(), float(z["lam"]),
                Standardizer(z["mean"].copy(), z["std"].copy()), float(z["loss"]), int(z["iters"]),
            )


def train_logreg(features, labels, lam: float, config: LogRegConfig = LogRegConfig(), k: Optional[int] = None) -> LogRegParams:
    """Minimise mean NLL + (lam/2)||W||^2 (bias unregularised) by backtracking GD."""
    X = np.asarray([getattr(f, "values", f) for f in features], dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("features and labels disagree in length")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    k = int(y.max()) + 1 if k is None else k
    if config.standardize:
        Z, stats = standardize(X)
    else:
        Z, stats = X, Standardizer.identity(X.shape[1])
    if config.init == "random":
        rng = np.random.default_rng(config.seed)
        W0, b0 = rng.normal(0, 1, size=(X.shape[1], k)), rng.normal(0, 1, size=k)
    else:
        W0, b0 = np.zeros((X.shape[1], k)), np.zeros(k)
    W, b, loss, iters = gradient_descent(W0, b0, Z, y, lam, config.max_iter, config.tol)
    return LogRegParams(W, b, float(lam), stats, float(loss), int(iters))


def logreg_loss(params: LogRegParams, features, labels) -> float:
    Z = params.stats.transform(features)
    return float(logreg_objective(params.W, params.b, Z, np.asarray(labels), params.lam)[0])


def predict_proba(params: LogRegParams, features) -> np.ndarray:
    """Class probabilities; inputs are raw features, standardized with the stored stats."""
    X = np.asarray(getattr(features, "values", features), dtype=np.float64)
    if X.shape[-1] != params.dim:
        raise ValueError(f"feature dim {X.shape[-1]} != model dim {params.dim}")
    return softmax(params.stats.transform(X) @ params.W + params.b)


def predict(params: LogRegParams, features) -> np.ndarray:
    return np.argmax(predict_proba(params, features), axis=-1)


def predict_topk(params: LogRegParams, feature, m: int, labels) -> list[tuple[str, float]]:
    if not 1 <= m <= params.k:
        raise ValueError(f"m must be in [1, {params.k}]")
    p = predict_proba(params, feature)
    return [(labels[i], float(p[i])) for i in topk_order(p, m)]


# ------------------------------------------------------------------ systems


@dataclass(frozen=True)
class SystemConfig:
    text: TextTrainConfig = field(default_factory=TextTrainConfig)
    vision: vision.VisionConfig = field(default_factory=vision.VisionConfig)
    logreg: LogRegConfig = field(default_factory=LogRegConfig)
    lambdas: tuple = LAMBDA_GRID
    train_vision_head: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Pipeline:
    """A trained system: its embedders plus the fusion classifier."""

    mode: str
    labels: tuple
    classifier: LogRegParams
    text_model: Optional[TextModel] = None
    vision_head: Optional[vision.VisionHeadParams] = None
    grid: int = 8
    dev_f1_by_lambda: dict = field(default_factory=dict)

    @property
    def uses_text(self) -> bool:
        return self.mode in ("textual", "multimodal")

    @property
    def uses_visual(self) -> bool:
        return self.mode in ("visual", "multimodal")

    def features(self, posts: Sequence, table=None, image_root=None) -> np.ndarray:
        return extract_features(self.mode, posts, self.text_model, table, self.grid, image_root)

    def predict_proba(self, posts, table=None, image_root=None) -> np.ndarray:
        return predict_proba(self.classifier, self.features(posts, table, image_root))

    def predict(self, posts, table=None, image_root=None) -> np.ndarray:
        return np.argmax(self.predict_proba(posts, table, image_root), axis=1)

    def predict_topk(self, post, m: int, table=None, image_root=None) -> list[tuple[str, float]]:
        if not 1 <= m <= len(self.labels):
            raise ValueError(f"m must be in [1, {len(self.labels)}]")
        p = self.predict_proba([post], table, image_root)[0]
        return [(self.labels[i], float(p[i])) for i in topk_order(p, m)]

    def evaluate(self, posts, table=None, image_root=None) -> tuple[ConfusionMatrix, MetricsReport]:
        index = {lab: i for i, lab in enumerate(self.labels)}
        gold = np.array([index[p.label] for p in posts], dtype=np.int64)
        return evaluate_indices(gold, self.predict(posts, table, image_root), self.labels)

    def save(self, directory) -> None:
        """Write all model files; the directory appears only once complete."""
        directory = Path(directory)
        directory.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=directory.parent))
        try:
            meta = {
                "format": "emojimm-pipeline/1",
                "mode": self.mode,
                "labels": list(self.labels),
                "grid": self.grid,
                "dev_f1_by_lambda": {repr(k): v for k, v in self.dev_f1_by_lambda.items()},
            }
            (tmp / "pipeline.json").write_text(json.dumps(meta, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
            self.classifier.save(tmp / "fusion.npz")
            if self.text_model is not None:
                self.text_model.save(tmp / "text_model.npz")
            if self.vision_head is not None:
                self.vision_head.save(tmp / "vision_head.npz")
            if directory.exists():
                shutil.rmtree(directory)
            os.replace(tmp, directory)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise

    @classmethod
    def load(cls, directory) -> "Pipeline":
        directory = Path(directory)
        meta = json.loads((directory / "pipeline.json").read_text(encoding="utf-8"))
        if meta.get("format") != "emojimm-pipeline/1":
            raise ValueError(f"{directory}: not a pipeline directory")
        text = directory / "text_model.npz"
        head = directory / "vision_head.npz"
        return cls(
            mode=meta["mode"],
            labels=tuple(meta["labels"]),
            classifier=LogRegParams.load(directory / "fusion.npz"),
            text_model=TextModel.load(text) if text.exists() else None,
            vision_head=vision.VisionHeadParams.load(head) if head.exists() else None,
            grid=int(meta["grid"]),
            dev_f1_by_lambda={float(k): v for k, v in meta.get("dev_f1_by_lambda", {}).items()},
        )


def extract_features(mode, posts, text_model=None, table=None, grid=8, image_root=None) -> np.ndarray:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    blocks = []
    if mode in ("textual", "multimodal"):
        if text_model is None:
            raise ValueError(f"mode {mode!r} needs a text model")
        blocks.append(text_model.embed_many([p.text for p in posts]))
    if mode in ("visual", "multimodal"):
        blocks.append(vision.visual_matrix(posts, table, grid, image_root))
    return np.hstack(blocks)


def fit_system(
    mode: str,
    train: Sequence,
    dev: Sequence,
    labels: Sequence[str],
    config: SystemConfig = SystemConfig(),
    table=None,
    image_root=None,
) -> Pipeline:
    """Train the embedders ``mode`` needs, then pick lambda on dev macro-F1."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    labels = tuple(labels.labels if isinstance(labels, LabelVocabulary) else labels)
    index = {lab: i for i, lab in enumerate(labels)}
    k = len(labels)

    if mode != "textual":
        missing = [p.id for p in (*train, *dev) if not vision.has_visual_input(p, table)]
        if missing:
            raise vision.MissingVisualInput(missing)

    text_model = None
    if mode != "visual":
        text_model = train_text(train, dev, labels, config.text)
        log.info("text model trained: %d epochs", len(text_model.history))

    grid = config.vision.grid
    X_tr = extract_features(mode, train, text_model, table, grid, image_root)
    X_dev = extract_features(mode, dev, text_model, table, grid, image_root)
    y_tr = np.array([index[p.label] for p in train], dtype=np.int64)
    y_dev = np.array([index[p.label] for p in dev], dtype=np.int64)

    head = None
    if mode != "textual" and config.train_vision_head:
        vis_dim = X_tr.shape[1] - (text_model.params.d if text_model else 0)
        head = vision.fit_vision_head(X_tr[:, -vis_dim:], y_tr, X_dev[:, -vis_dim:], y_dev, k, config.vision)

    best, best_f1, scores = None, -1.0, {}
    for lam in config.lambdas:
        params = train_logreg(X_tr, y_tr, lam, config.logreg, k=k)
        f1 = macro_f1(y_dev, predict(params, X_dev), k) if len(y_dev) else 0.0
        scores[float(lam)] = f1
        log.info("%s lambda=%g dev macro-F1=%.4f (%d iters)", mode, lam, f1, params.iters)
        if f1 > best_f1:
            best, best_f1 = params, f1

    return Pipeline(mode, labels, best, text_model, head, grid, scores)


def run_system(
    mode: str,
    data: DatasetSplit,
    config: SystemConfig = SystemConfig(),
    labels: Optional[Sequence[str]] = None,
    table=None,
    image_root=None,
) -> tuple[Pipeline, MetricsReport, ConfusionMatrix]:
    """Fit on train/dev and evaluate on test: returns (pipeline, report, confusion)."""
    if labels is None:
        labels = build_label_vocab(data.train, len({p.label for p in data.train})).labels
    if mode != "textual":
        missing = [p.id for p in data.test if not vision.has_visual_input(p, table)]
        if missing:
            raise vision.MissingVisualInput(missing)
    pipe = fit_system(mode, data.train, data.dev, labels, config, table, image_root)
    cm, report = pipe.evaluate(data.test, table, image_root)
    return pipe, report, cm
