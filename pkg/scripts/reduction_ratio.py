"""Scene-graph edge counts against the fully connected agent graph, per
template, on generated scenes.

    python3 scripts/reduction_ratio.py --scenes 20 --rb 6 --nrb 2
"""
import argparse

import numpy as np

from hgtraj.scene import GeneratorSpec, generate_synthetic_scenes
from hgtraj.ssg import ssg_reduction_ratio
from hgtraj.templates import TEMPLATES, build_template


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenes", type=int, default=20)
    ap.add_argument("--rb", type=int, default=4)
    ap.add_argument("--nrb", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'template':20s}  mean ratio  min     max")
    for name in TEMPLATES:
        g = build_template(name)
        scenes = generate_synthetic_scenes(GeneratorSpec(name, args.rb, args.nrb, args.scenes), args.seed)
        r = np.array([ssg_reduction_ratio(s, g, 0) for s in scenes])
        print(f"{name:20s}  {r.mean():.4f}      {r.min():.4f}  {r.max():.4f}")


if __name__ == "__main__":
    main()
