#!/usr/bin/env python3
"""Train a visual system on synthetic pictures and render CAMs for a few test images.

For each chosen image, the picture itself is copied next to one heatmap per
top-4 class, so the highlighted patch can be compared by eye.

    python3 scripts/saliency_demo.py --out /tmp/cam-demo
"""

import argparse
import shutil
from pathlib import Path

import numpy as np

from emojimm import vision
from emojimm.cli import codepoints
from emojimm.corpus import split
from emojimm.fusion import SystemConfig, fit_system
from emojimm.synthetic import SyntheticSpec, generate_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--n", type=int, default=600)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--images", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    spec = SyntheticSpec(args.k, args.n, (), tuple(range(args.k)), seed=args.seed, image_size=32)
    data = split(generate_synthetic(spec, image_dir=out / "images"), seed=args.seed)
    pipe = fit_system("visual", data.train, data.dev, spec.label_list, SystemConfig())
    head = pipe.vision_head

    for post in data.test[: args.images]:
        image = vision.load_image(post.image_ref)
        maps = vision.compute_feature_maps(image, pipe.grid)
        probs = head.predict_proba(vision.global_average_pool(maps))
        target = out / post.id
        target.mkdir(parents=True, exist_ok=True)
        shutil.copy(post.image_ref, target / "image.ppm")
        for rank, c in enumerate(np.argsort(-probs, kind="stable")[:4], 1):
            label = pipe.labels[c]
            vision.render_heatmap(vision.cam_from_maps(maps, head, c), target / f"cam_{rank}_{codepoints(label)}.pgm", scale=4)
            print(f"{post.id}\tgold {post.label}\t#{rank} {label}\tp={probs[c]:.3f}")


if __name__ == "__main__":
    main()
