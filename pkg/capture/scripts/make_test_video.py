#!/usr/bin/env python3
"""Build the bundled test video: a rendered synthetic walker session.

Generates a session via the walkerpose CLI (the only coupling is the
documented NDJSON format), renders the first --seconds of it as color-coded
stick-figure footage, and writes MJPG AVI plus the source NDJSON slice.

Run:  python scripts/make_test_video.py --out testdata/walk_10s.avi
"""
import argparse
import json
import os
import subprocess
import sys
import tempfile

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from walkercapture import markers  # noqa: E402


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="testdata/walk_10s.avi")
    parser.add_argument("--ndjson-out", default="testdata/walk_10s_source.ndjson")
    parser.add_argument("--seconds", type=float, default=10.0)
    parser.add_argument("--fps", type=float, default=10.0)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--width", type=int, default=960)
    parser.add_argument("--height", type=int, default=720)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        session_path = os.path.join(tmp, "session.ndjson")
        subprocess.run(["walkerpose", "synth", "session", "--out", session_path,
                        "--seed", str(args.seed), "--fps", str(args.fps)],
                       check=True)
        with open(session_path) as fh:
            lines = fh.read().splitlines()

    n_frames = int(round(args.seconds * args.fps))
    header, samples = lines[0], lines[1:1 + n_frames]
    frames = []
    for line in samples:
        obj = json.loads(line)
        coords = np.asarray(obj["lm"], dtype=np.float64)[:, :3]
        frames.append(markers.render_frame(coords, args.width, args.height))
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    markers.write_video(args.out, frames, fps=args.fps)
    with open(args.ndjson_out, "w") as fh:
        fh.write(header + "\n")
        fh.write("\n".join(samples) + "\n")
    size_mb = os.path.getsize(args.out) / 1e6
    print(f"wrote {args.out} ({len(frames)} frames, {size_mb:.1f} MB) "
          f"and {args.ndjson_out}")


if __name__ == "__main__":
    main()
