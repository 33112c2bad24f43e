"""Command-line entry point: synth, prepare, train, eval, predict, saliency, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import vision
from .corpus import (
    CorpusFormatError,
    LabelVocabulary,
    Post,
    build_label_vocab,
    filter_topk,
    label_posts,
    load_posts,
    save_posts,
    split,
)
from .evaluation import (
    MajorityBaseline,
    WeightedRandomBaseline,
    evaluate_indices,
    relative_improvement,
    write_confusion_pgm,
    write_report_json,
)
from .fusion import MODES, LogRegConfig, Pipeline, SystemConfig, fit_system
from .synthetic import SyntheticSpec, generate_synthetic, with_emoji_in_text
from .text_model import TextTrainConfig

log = logging.getLogger("emojimm")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    k: int = 20
    mode: str = "multimodal"
    split_seed: int = 0
    train_seed: int = 0
    baseline_seed: int = 0
    dim: int = 50
    lr: float = 0.1
    epochs: int = 20
    min_count: int = 2
    patience: int = 3
    text_bias: bool = True
    l2_normalize: bool = False
    grid: int = 8
    vision_lambda: float = 1e-4
    vision_max_iter: int = 2000
    logreg_max_iter: int = 500
    logreg_tol: float = 1e-6
    standardize: bool = True
    lambdas: str = "0,1e-4,1e-3,1e-2,1e-1,1"
    top_m: int = 4
    embeddings: str = ""

    def system_config(self) -> SystemConfig:
        return SystemConfig(
            text=TextTrainConfig(
                dim=self.dim, lr=self.lr, epochs=self.epochs, min_count=self.min_count,
                seed=self.train_seed, patience=self.patience, bias=self.text_bias,
                l2_normalize=self.l2_normalize,
            ),
            vision=vision.VisionConfig(grid=self.grid, lam=self.vision_lambda, max_iter=self.vision_max_iter),
            logreg=LogRegConfig(
                max_iter=self.logreg_max_iter, tol=self.logreg_tol, standardize=self.standardize, seed=self.train_seed
            ),
            lambdas=self.lambda_grid(),
        )

    def lambda_grid(self) -> tuple:
        try:
            grid = tuple(float(v) for v in self.lambdas.split(","))
        except ValueError:
            raise UsageError(f"lambdas: cannot parse {self.lambdas!r}") from None
        if not grid or min(grid) < 0:
            raise UsageError("lambdas must be a non-empty list of values >= 0")
        return grid

    def validate(self) -> None:
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.k < 1 or self.top_m < 1 or self.grid < 1:
            raise UsageError("k, top_m and grid must be >= 1")
        self.lambda_grid()
        try:
            self.system_config()
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def dumps(self) -> str:
        return "".join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(name: str, raw: str, kind):
    raw = raw.strip()
    if kind in (bool, "bool"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise UsageError(f"{name}: cannot parse {raw!r}") from None
    return raw


def apply_pairs(cfg: RunConfig, pairs, source: str) -> None:
    known = {f.name: f.type for f in fields(cfg)}
    for lineno, pair in pairs:
        if "=" not in pair:
            raise UsageError(f"{source}:{lineno}: expected key=value, got {pair!r}")
        key, value = (s.strip() for s in pair.split("=", 1))
        if key not in known:
            raise UsageError(f"{source}:{lineno}: unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, value, known[key]))


def load_config(path) -> list:
    pairs = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append((n, line))
    return pairs


def build_config(args, flag_map: dict) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        apply_pairs(cfg, load_config(args.config), args.config)
    apply_pairs(cfg, [(i + 1, s) for i, s in enumerate(getattr(args, "set", None) or [])], "--set")
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _load_table(cfg: RunConfig):
    if not cfg.embeddings:
        return None
    return vision.load_embedding_table(_require_file(cfg.embeddings, "embedding table"))


def _labels_file(directory: Path) -> LabelVocabulary:
    return LabelVocabulary.load(_require_file(directory / "vocab.tsv", "label vocabulary"))


def codepoints(label: str) -> str:
    return "-".join(f"{ord(c):x}" for c in label)


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    text_cls = _int_list(args.text_classes) if args.text_classes else tuple(range((args.k + 1) // 2))
    image_cls = _int_list(args.image_classes) if args.image_classes else tuple(range((args.k + 1) // 2, args.k))
    try:
        spec = SyntheticSpec(args.k, args.n, text_cls, image_cls, args.noise_rate, args.seed, args.image_size)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    posts = generate_synthetic(spec, args.image_dir)
    if args.raw:
        posts = with_emoji_in_text(posts, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_posts(args.out, posts)
    print(f"wrote {len(posts)} posts to {args.out}")
    return 0


def _int_list(s: str) -> tuple:
    try:
        return tuple(int(v) for v in s.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {s!r}") from None


def cmd_prepare(args) -> int:
    cfg = build_config(args, {"k": "k", "seed": "split_seed"})
    raw = load_posts(_require_file(args.raw, "raw post file"), require_label=False)
    labelled, rejected = label_posts(raw)
    if not labelled:
        raise ValueError("no post survived the emoji/length filters")
    try:
        vocab = build_label_vocab(labelled, cfg.k)
    except ValueError as exc:
        raise ValueError(f"cannot build a top-{cfg.k} task: {exc}") from None
    kept = filter_topk(labelled, vocab)
    data = split(kept, cfg.split_seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "dev", "test"):
        save_posts(out / f"{name}.jsonl", getattr(data, name))
    vocab.save(out / "vocab.tsv")
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")

    print(f"raw {len(raw)}  labelled {len(labelled)}  top-{cfg.k} {len(kept)}  "
          f"train/dev/test {len(data.train)}/{len(data.dev)}/{len(data.test)}")
    for reason, n in sorted(rejected.items()):
        print(f"rejected {reason}: {n}")
    test_counts = {lab: 0 for lab in vocab.labels}
    for p in data.test:
        test_counts[p.label] += 1
    n_test = max(len(data.test), 1)
    print("emoji\tcodepoints\tcount\t% test")
    for lab, c in zip(vocab.labels, vocab.counts):
        print(f"{lab}\t{codepoints(lab)}\t{c}\t{100.0 * test_counts[lab] / n_test:.2f}")
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args, {"mode": "mode", "seed": "train_seed"})
    data_dir = Path(args.data)
    vocab = _labels_file(data_dir)
    train = load_posts(_require_file(data_dir / "train.jsonl", "training split"))
    dev = load_posts(_require_file(data_dir / "dev.jsonl", "dev split"))
    table = _load_table(cfg)
    pipe = fit_system(cfg.mode, train, dev, vocab.labels, cfg.system_config(), table, data_dir)
    out = Path(args.out)
    pipe.save(out)
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
    if dev:
        _, report = pipe.evaluate(dev, table, data_dir)
        write_report_json(out / "dev_metrics.json", {"mode": cfg.mode, "split": "dev", **report.to_dict()})
        print(f"{cfg.mode}: dev macro-F1 {100 * report.macro[2]:.1f}")
    print(f"model written to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = build_config(args, {"seed": "baseline_seed"})
    model_dir = Path(args.model)
    _require_file(model_dir / "pipeline.json", "model")
    pipe = Pipeline.load(model_dir)
    data_dir = Path(args.data)
    posts = load_posts(_require_file(data_dir / f"{args.split}.jsonl", f"{args.split} split"))
    table = _load_table(cfg)
    cm, report = pipe.evaluate(posts, table, data_dir)

    result = {"mode": pipe.mode, "split": args.split, **report.to_dict()}
    train_path = data_dir / "train.jsonl"
    if train_path.is_file():
        index = {lab: i for i, lab in enumerate(pipe.labels)}
        y_train = np.array([index[p.label] for p in load_posts(train_path)], dtype=np.int64)
        gold = np.array([index[p.label] for p in posts], dtype=np.int64)
        baselines = {}
        for name, base in (
            ("majority", MajorityBaseline(y_train, len(pipe.labels))),
            ("weighted_random", WeightedRandomBaseline(y_train, len(pipe.labels), cfg.baseline_seed)),
        ):
            _, rep = evaluate_indices(gold, base.predict(len(posts)), pipe.labels)
            baselines[name] = rep.to_dict()["macro"]
        result["baselines"] = baselines

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(out / "metrics.json", result)
    cm.to_csv(out / "confusion.csv")
    write_confusion_pgm(cm, out / "confusion.pgm")
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
    P, R, F = (result["macro"][key] for key in ("precision", "recall", "f1"))
    print(f"{pipe.mode} on {args.split}: P {P} R {R} F1 {F} (n={report.n})")
    return 0


def cmd_predict(args) -> int:
    cfg = build_config(args, {"m": "top_m"})
    pipe = Pipeline.load(_require_file(Path(args.model) / "pipeline.json", "model").parent)
    if args.image:
        _require_file(args.image, "image")
    vec = tuple(float(v) for v in args.visual_vec.split(",")) if args.visual_vec else None
    post = Post(args.post_id, args.text, "", args.image, vec)
    m = min(cfg.top_m, len(pipe.labels))
    for label, prob in pipe.predict_topk(post, m, _load_table(cfg)):
        print(f"{label}\t{codepoints(label)}\t{prob:.6f}")
    return 0


def cmd_saliency(args) -> int:
    cfg = build_config(args, {"m": "top_m"})
    pipe = Pipeline.load(_require_file(Path(args.model) / "pipeline.json", "model").parent)
    head = pipe.vision_head
    if head is None:
        raise UsageError(f"model {args.model} has no vision head (mode {pipe.mode})")
    if head.W.shape[0] != len(vision.CHANNELS):
        raise UsageError("vision head was trained on precomputed vectors; CAM needs the built-in featurizer")
    image = vision.load_image(_require_file(args.image, "image"))
    maps = vision.compute_feature_maps(image, pipe.grid)
    probs = head.predict_proba(vision.global_average_pool(maps))
    if args.classes:
        index = {lab: i for i, lab in enumerate(pipe.labels)}
        try:
            chosen = [index[c] for c in args.classes]
        except KeyError as exc:
            raise UsageError(f"unknown class {exc.args[0]!r}") from None
    else:
        chosen = list(np.argsort(-probs, kind="stable")[: min(cfg.top_m, head.k)])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rank, c in enumerate(chosen, 1):
        label = pipe.labels[c]
        path = out / f"cam_{rank}_{codepoints(label)}.pgm"
        vision.render_heatmap(vision.cam_from_maps(maps, head, c), path, scale=args.scale)
        print(f"{rank}\t{label}\t{probs[c]:.6f}\t{path}")
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
    return 0


SYSTEM_NAMES = {"visual": "Vis", "textual": "Tex", "multimodal": "Mul"}


def build_report(runs: list[dict]) -> dict:
    """Rows per task size k, with baselines and the multimodal-over-textual row."""
    by_k = {}
    for run in runs:
        task = by_k.setdefault(run["k"], {"rows": {}, "baselines": None})
        task["rows"][SYSTEM_NAMES[run["mode"]]] = run["macro"]
        if run.get("baselines") and task["baselines"] is None:
            task["baselines"] = run["baselines"]
    report = {}
    for k in sorted(by_k):
        task = by_k[k]
        rows = {}
        if task["baselines"]:
            rows["Maj"] = task["baselines"]["majority"]
            rows["W.R."] = task["baselines"]["weighted_random"]
        for name in ("Vis", "Tex", "Mul"):
            if name in task["rows"]:
                rows[name] = task["rows"][name]
        if "Mul" in rows and "Tex" in rows:
            rows["%"] = {
                key: relative_improvement(rows["Mul"][key], rows["Tex"][key]) if rows["Tex"][key] > 0 else None
                for key in ("precision", "recall", "f1")
            }
        report[f"top-{k}"] = rows
    return report


def cmd_report(args) -> int:
    runs = []
    for d in args.runs:
        path = Path(d) / "metrics.json" if Path(d).is_dir() else Path(d)
        _require_file(path, "metrics file")
        runs.append(json.loads(path.read_text(encoding="utf-8")))
    report = build_report(runs)
    for task, rows in report.items():
        print(f"{task}\tP\tR\tF1")
        for name, m in rows.items():
            cells = ["-" if m[key] is None else f"{m[key]:.1f}" for key in ("precision", "recall", "f1")]
            print(f"{name}\t" + "\t".join(cells))
    if args.out:
        write_report_json(args.out, report)
    return 0


# ------------------------------------------------------------------ parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emojimm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--text-classes", help="comma-separated class indices with text cues")
    p.add_argument("--image-classes", help="comma-separated class indices with image cues")
    p.add_argument("--noise-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--image-dir", help="write PPM pictures here instead of inline vectors")
    p.add_argument("--raw", action="store_true", help="put the emoji in the text and leave labels empty")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="filter, label and split a raw corpus")
    p.add_argument("raw")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    _common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a visual, textual or multimodal system")
    p.add_argument("--data", required=True, help="directory written by prepare")
    p.add_argument("--out", required=True, help="model directory")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--seed", type=int)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained system on a split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="weighted-random baseline seed")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="top-m emojis for one post")
    p.add_argument("--model", required=True)
    p.add_argument("--text", default="")
    p.add_argument("--image")
    p.add_argument("--visual-vec", help="comma-separated precomputed visual vector")
    p.add_argument("--post-id", default="cli", help="id looked up in the embedding table")
    p.add_argument("-m", type=int)
    _common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("saliency", help="class activation maps for one picture")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--classes", nargs="*", help="emoji labels (default: top-m predicted)")
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, default=8, help="pixels per grid cell in the PGM")
    p.add_argument("-m", type=int)
    _common(p)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("report", help="tabulate eval runs with the improvement row")
    p.add_argument("runs", nargs="+", help="eval output directories or metrics.json files")
    p.add_argument("--out", help="write the table as JSON")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, CorpusFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
