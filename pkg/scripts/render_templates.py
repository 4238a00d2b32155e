#!/usr/bin/env python3
"""Draw the posture templates as stick figures into docs/templates.png."""
import argparse

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from walkerpose.pose import Topology as T
from walkerpose.synth import TEMPLATES

BONES = [
    (T.LEFT_SHOULDER, T.RIGHT_SHOULDER), (T.LEFT_HIP, T.RIGHT_HIP),
    (T.LEFT_SHOULDER, T.LEFT_ELBOW), (T.LEFT_ELBOW, T.LEFT_WRIST),
    (T.RIGHT_SHOULDER, T.RIGHT_ELBOW), (T.RIGHT_ELBOW, T.RIGHT_WRIST),
    (T.LEFT_SHOULDER, T.LEFT_HIP), (T.RIGHT_SHOULDER, T.RIGHT_HIP),
    (T.LEFT_HIP, T.LEFT_KNEE), (T.LEFT_KNEE, T.LEFT_ANKLE),
    (T.RIGHT_HIP, T.RIGHT_KNEE), (T.RIGHT_KNEE, T.RIGHT_ANKLE),
    (T.LEFT_EAR, T.NOSE), (T.RIGHT_EAR, T.NOSE),
]


def draw(ax, coords, title):
    for a, b in BONES:
        ax.plot([coords[a, 0], coords[b, 0]], [coords[a, 1], coords[b, 1]],
                "-", color="tab:blue", lw=1.5)
    ax.plot(coords[:, 0], coords[:, 1], ".", color="tab:red", ms=3)
    ax.set_title(title, fontsize=8)
    ax.set_xlim(0, 1)
    ax.set_ylim(1, 0)  # image coordinates grow downward
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="docs/templates.png")
    args = parser.parse_args()
    names = sorted(TEMPLATES)
    cols = 5
    rows = (len(names) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.6 * rows))
    for ax in axes.flat:
        ax.axis("off")
    for ax, name in zip(axes.flat, names):
        ax.axis("on")
        draw(ax, TEMPLATES[name].coords, name)
    fig.tight_layout()
    fig.savefig(args.out, dpi=140)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
