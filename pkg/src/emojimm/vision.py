"""Visual embeddings, the linear vision head, and class activation maps.

The built-in featurizer tiles an image into a grid and computes eight fixed
descriptors per tile. Global average pooling of those maps gives the visual
embedding; a linear softmax head on top makes class activation maps exact:
the spatial mean of a CAM equals the head's class score minus its bias.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .evaluation import macro_f1
from .linear import gradient_descent, softmax

CHANNELS = (
    "mean_r",
    "mean_g",
    "mean_b",
    "luminance_std",
    "grad_energy_x",
    "grad_energy_y",
    "mean_saturation",
    "max_brightness",
)
MIN_IMAGE_SIDE = 8


class ImageFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


class MissingVisualInput(ValueError):
    def __init__(self, ids):
        ids = list(ids)
        shown = ", ".join(ids[:20]) + (" ..." if len(ids) > 20 else "")
        super().__init__(f"{len(ids)} post(s) have no visual input: {shown}")
        self.ids = ids


# ---------------------------------------------------------------- image I/O


def _header_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i >= len(data):
            raise ImageFormatError("truncated header", i)
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i] not in b"\r\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        tokens.append((data[start:i], start))
    return tokens, i


def _parse_netpbm(data: bytes, magics: dict):
    """Return (array uint16 H x W x C, maxval) for the supported magic numbers."""
    magic = data[:2]
    if magic not in magics:
        raise ImageFormatError(f"unsupported magic number {magic!r}", 0)
    channels, binary = magics[magic]
    (_, (w_tok, w_off), (h_tok, h_off), (m_tok, m_off)), end = _header_tokens(data, 4)
    values = []
    for tok, off, name in ((w_tok, w_off, "width"), (h_tok, h_off, "height"), (m_tok, m_off, "maxval")):
        if not tok.isdigit():
            raise ImageFormatError(f"invalid {name} {tok!r}", off)
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise ImageFormatError("image has zero size", w_off)
    if not 1 <= maxval <= 65535:
        raise ImageFormatError(f"maxval {maxval} out of range", m_off)
    n = width * height * channels
    if binary:
        if end >= len(data) or not data[end : end + 1].isspace():
            raise ImageFormatError("missing whitespace after maxval", end)
        body = data[end + 1 :]
        width_bytes = 2 if maxval > 255 else 1
        need = n * width_bytes
        if len(body) < need:
            raise ImageFormatError(f"truncated body: need {need} bytes, have {len(body)}", end + 1 + len(body))
        dtype = ">u2" if width_bytes == 2 else np.uint8
        arr = np.frombuffer(body[:need], dtype=dtype).astype(np.uint16)
    else:
        body = data[end:]
        fields = body.split()
        if len(fields) < n:
            raise ImageFormatError(f"truncated body: need {n} samples, have {len(fields)}", len(data))
        try:
            arr = np.array([int(f) for f in fields[:n]], dtype=np.int64)
        except ValueError:
            raise ImageFormatError("non-integer sample in body", end) from None
        if arr.min() < 0 or arr.max() > maxval:
            raise ImageFormatError("sample exceeds maxval", end)
        arr = arr.astype(np.uint16)
    if arr.max(initial=0) > maxval:
        raise ImageFormatError("sample exceeds maxval", end)
    return arr.reshape(height, width, channels), maxval


def load_image(path) -> np.ndarray:
    """Read a PPM (P3 or P6) file into an H x W x 3 float array in [0, 1]."""
    data = Path(path).read_bytes()
    arr, maxval = _parse_netpbm(data, {b"P3": (3, False), b"P6": (3, True)})
    if min(arr.shape[:2]) < MIN_IMAGE_SIDE:
        raise ImageFormatError(f"image smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}", 0)
    return arr.astype(np.float64) / maxval


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255), 0, 255).astype(np.uint8)


def write_ppm(path, image: np.ndarray, binary: bool = True) -> None:
    px = to_bytes(image)
    h, w = px.shape[:2]
    if binary:
        payload = f"P6\n{w} {h}\n255\n".encode() + px.tobytes()
    else:
        rows = [" ".join(str(v) for v in row.reshape(-1)) for row in px]
        payload = (f"P3\n{w} {h}\n255\n" + "\n".join(rows) + "\n").encode()
    Path(path).write_bytes(payload)


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + gray.tobytes())


def read_pgm(path) -> np.ndarray:
    arr, _ = _parse_netpbm(Path(path).read_bytes(), {b"P5": (1, True), b"P2": (1, False)})
    return arr[:, :, 0]


# ------------------------------------------------------------- featurizer


def _grid_shape(grid) -> tuple[int, int]:
    if isinstance(grid, (tuple, list)):
        gy, gx = grid
    else:
        gy = gx = grid
    return int(gy), int(gx)


def _starts(n: int, g: int) -> np.ndarray:
    # equal tiles; the remainder goes to the last tile
    return np.arange(g) * (n // g)


def compute_feature_maps(image: np.ndarray, grid=8) -> np.ndarray:
    """Per-tile descriptors, shape (8, grid_rows, grid_cols), channels as in CHANNELS.

    Every descriptor depends only on the pixels inside its tile.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an H x W x 3 image")
    gy, gx = _grid_shape(grid)
    H, W = img.shape[:2]
    if gy < 1 or gx < 1:
        raise ValueError("grid must be >= 1")
    if H < gy or W < gx:
        raise ValueError(f"image {H}x{W} is smaller than the {gy}x{gx} grid")
    rows, cols = _starts(H, gy), _starts(W, gx)
    th = np.diff(np.append(rows, H))
    tw = np.diff(np.append(cols, W))
    area = np.outer(th, tw).astype(np.float64)

    def tile_sum(a):
        return np.add.reduceat(np.add.reduceat(a, rows, axis=0), cols, axis=1)

    def tile_max(a):
        return np.maximum.reduceat(np.maximum.reduceat(a, rows, axis=0), cols, axis=1)

    R, G, B = img[..., 0], img[..., 1], img[..., 2]
    lum = 0.299 * R + 0.587 * G + 0.114 * B
    lum_mean = tile_sum(lum) / area
    centered = lum - np.repeat(np.repeat(lum_mean, th, axis=0), tw, axis=1)
    lum_std = np.sqrt(tile_sum(centered * centered) / area)

    # squared forward differences; pairs straddling a tile border are dropped
    dx = np.zeros_like(lum)
    dx[:, :-1] = np.diff(lum, axis=1) ** 2
    dx[:, cols[1:] - 1] = 0.0
    dy = np.zeros_like(lum)
    dy[:-1, :] = np.diff(lum, axis=0) ** 2
    dy[rows[1:] - 1, :] = 0.0
    gx_energy = tile_sum(dx) / np.maximum(np.outer(th, tw - 1), 1)
    gy_energy = tile_sum(dy) / np.maximum(np.outer(th - 1, tw), 1)

    vmax = img.max(axis=2)
    vmin = img.min(axis=2)
    sat = np.divide(vmax - vmin, vmax, out=np.zeros_like(vmax), where=vmax > 0)

    return np.stack(
        [
            tile_sum(R) / area,
            tile_sum(G) / area,
            tile_sum(B) / area,
            lum_std,
            gx_energy,
            gy_energy,
            tile_sum(sat) / area,
            tile_max(vmax),
        ]
    )


def global_average_pool(maps: np.ndarray) -> np.ndarray:
    maps = np.asarray(maps, dtype=np.float64)
    return maps.reshape(maps.shape[0], -1).mean(axis=1)


def image_embedding(image: np.ndarray, grid=8) -> np.ndarray:
    return global_average_pool(compute_feature_maps(image, grid))


# ------------------------------------------------------ precomputed vectors


@dataclass(frozen=True)
class PrecomputedEmbeddingTable:
    dim: int
    vectors: dict = field(default_factory=dict)

    def __contains__(self, post_id) -> bool:
        return post_id in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def get(self, post_id) -> Optional[np.ndarray]:
        return self.vectors.get(post_id)


class EmbeddingTableError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def load_embedding_table(path) -> PrecomputedEmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise EmbeddingTableError("expected header 'dim=<N>'", 1)
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise EmbeddingTableError(f"invalid dim {lines[0][4:]!r}", 1) from None
    if dim < 1:
        raise EmbeddingTableError("dim must be positive", 1)
    vectors = {}
    for n, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split("\t")
        pid, vals = parts[0], parts[1:]
        if len(vals) != dim:
            raise EmbeddingTableError(f"row has {len(vals)} values, expected dim={dim}", n)
        if pid in vectors:
            raise EmbeddingTableError(f"duplicate id {pid!r}", n)
        try:
            vec = np.array([float(v) for v in vals], dtype=np.float64)
        except ValueError:
            raise EmbeddingTableError("non-numeric value", n) from None
        if not np.all(np.isfinite(vec)):
            raise EmbeddingTableError("non-finite value", n)
        vectors[pid] = vec
    return PrecomputedEmbeddingTable(dim, vectors)


def save_embedding_table(path, table: PrecomputedEmbeddingTable) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"dim={table.dim}\n")
        for pid, vec in table.vectors.items():
            fh.write(pid + "\t" + "\t".join(repr(float(v)) for v in vec) + "\n")


class VisualEmbedding(NamedTuple):
    vector: np.ndarray
    source: str  # "table" | "post" | "image"


def resolve_image(ref: str, image_root=None) -> Path:
    p = Path(ref)
    if p.is_absolute() or image_root is None:
        return p
    rooted = Path(image_root) / p
    return rooted if rooted.exists() or not p.exists() else p


def has_visual_input(post, table=None) -> bool:
    return (table is not None and post.id in table) or post.visual_vec is not None or post.image_ref is not None


def visual_embedding(post, table: Optional[PrecomputedEmbeddingTable] = None, grid=8, image_root=None) -> VisualEmbedding:
    """Table entry first, then the post's inline vector, then the built-in featurizer."""
    if table is not None and post.id in table:
        return VisualEmbedding(np.array(table.get(post.id), dtype=np.float64), "table")
    if post.visual_vec is not None:
        return VisualEmbedding(np.array(post.visual_vec, dtype=np.float64), "post")
    if post.image_ref is not None:
        img = load_image(resolve_image(post.image_ref, image_root))
        return VisualEmbedding(image_embedding(img, grid), "image")
    raise MissingVisualInput([post.id])


def visual_matrix(posts: Sequence, table=None, grid=8, image_root=None) -> np.ndarray:
    missing = [p.id for p in posts if not has_visual_input(p, table)]
    if missing:
        raise MissingVisualInput(missing)
    if not posts:
        return np.zeros((0, table.dim if table is not None else len(CHANNELS)))
    vecs = [visual_embedding(p, table, grid, image_root).vector for p in posts]
    dims = {v.size for v in vecs}
    if len(dims) != 1:
        raise ValueError(f"visual embeddings have inconsistent dims {sorted(dims)}")
    return np.vstack(vecs)


# -------------------------------------------------------------- vision head


@dataclass(frozen=True)
class VisionHeadParams:
    W: np.ndarray  # m x k
    b: np.ndarray  # k

    @property
    def k(self) -> int:
        return self.W.shape[1]

    def scores(self, pooled: np.ndarray) -> np.ndarray:
        return np.asarray(pooled) @ self.W + self.b

    def predict_proba(self, pooled: np.ndarray) -> np.ndarray:
        return softmax(self.scores(pooled))

    def save(self, path) -> None:
        _atomic_savez(path, format=np.array("vision-head/1"), W=self.W, b=self.b)

    @classmethod
    def load(cls, path) -> "VisionHeadParams":
        with np.load(path, allow_pickle=False) as z:
            if str(z["format"]) != "vision-head/1":
                raise ValueError(f"{path}: not a vision head file")
            return cls(z["W"].copy(), z["b"].copy())


@dataclass(frozen=True)
class VisionConfig:
    grid: int = 8
    lam: float = 1e-4
    max_iter: int = 2000
    eval_every: int = 25
    patience: int = 8
    tol: float = 1e-6


def _atomic_savez(path, **arrays) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def fit_vision_head(X, y, X_dev, y_dev, k: int, config: VisionConfig = VisionConfig()) -> VisionHeadParams:
    """Softmax regression on pooled vectors with early stopping on dev macro-F1.

    Optimization runs on standardized features; the returned head is folded back
    so it applies to raw pooled vectors (keeping the CAM identity exact).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    flat = sd < 1e-12
    mu = np.where(flat, 0.0, mu)
    sd = np.where(flat, 1.0, sd)
    Z = (X - mu) / sd

    def fold(W, b):
        Wr = W / sd[:, None]
        return Wr, b - mu @ Wr

    has_dev = X_dev is not None and len(X_dev) > 0
    best = {"f1": -1.0, "params": None, "stale": 0}

    def check(it, W, b):
        if not has_dev or it % config.eval_every:
            return False
        Wr, br = fold(W, b)
        f1 = macro_f1(y_dev, np.argmax(np.asarray(X_dev) @ Wr + br, axis=1), k)
        if f1 > best["f1"]:
            best.update(f1=f1, params=(Wr, br), stale=0)
        else:
            best["stale"] += 1
        return best["stale"] >= config.patience

    W0 = np.zeros((X.shape[1], k))
    b0 = np.zeros(k)
    W, b, _, _ = gradient_descent(W0, b0, Z, y, config.lam, config.max_iter, config.tol, callback=check)
    final = fold(W, b)
    if has_dev:
        f1 = macro_f1(y_dev, np.argmax(np.asarray(X_dev) @ final[0] + final[1], axis=1), k)
        if f1 > best["f1"] or best["params"] is None:
            best["params"] = final
        final = best["params"]
    return VisionHeadParams(*final)


def train_vision_head(train, dev, labels, config: VisionConfig = VisionConfig(), table=None, image_root=None) -> VisionHeadParams:
    """Fit the head on the visual embeddings of labelled posts."""
    index = {lab: i for i, lab in enumerate(labels)}
    X = visual_matrix(train, table, config.grid, image_root)
    y = np.array([index[p.label] for p in train], dtype=np.int64)
    X_dev = visual_matrix(dev, table, config.grid, image_root) if dev else None
    y_dev = np.array([index[p.label] for p in dev], dtype=np.int64) if dev else None
    return fit_vision_head(X, y, X_dev, y_dev, len(labels), config)


# -------------------------------------------------------------------- CAM


def cam_from_maps(maps: np.ndarray, head: VisionHeadParams, c: int) -> np.ndarray:
    if not 0 <= c < head.k:
        raise IndexError(f"class {c} out of range for a {head.k}-class head")
    if maps.shape[0] != head.W.shape[0]:
        raise ValueError(f"head expects {head.W.shape[0]} channels, maps have {maps.shape[0]}")
    return np.tensordot(head.W[:, c], maps, axes=(0, 0))


def class_activation_map(image: np.ndarray, head: VisionHeadParams, c: int, grid=8) -> np.ndarray:
    """Grid heatmap sum_k W[k, c] * f_k(i, j) for class index ``c``."""
    return cam_from_maps(compute_feature_maps(image, grid), head, c)


def heatmap_to_gray(heatmap: np.ndarray) -> np.ndarray:
    h = np.asarray(heatmap, dtype=np.float64)
    lo, hi = h.min(), h.max()
    if hi - lo <= 0:
        return np.full(h.shape, 128, dtype=np.uint8)
    return np.rint((h - lo) / (hi - lo) * 255).astype(np.uint8)


def render_heatmap(heatmap: np.ndarray, path, scale: int = 1) -> None:
    """Min-max normalize to 0..255 and write a P5 PGM; constant maps are mid-gray."""
    gray = heatmap_to_gray(heatmap)
    if scale > 1:
        gray = np.kron(gray, np.ones((scale, scale), dtype=np.uint8))
    write_pgm(path, gray)
