"""Animate one appearance across a smooth pose sequence.

Generates a short sequence of interpolated body poses, then renders the
first corpus identity through all of them with a single appearance
encoding. Frames and an index TSV land in <out>/motion; each frame is
bitwise identical to what a standalone pose-transfer call would give.

Run:  python3 demos/05_motion_sequence.py [--out demo_out] [--frames 8]
"""

import argparse
from pathlib import Path

from stylepose.data import SampleLoader, load_manifest
from stylepose.inference import (NoisePolicy, load_trained_model,
                                 motion_transfer, write_frames)
from stylepose.pngio import load_iuv
from stylepose.synthetic import build_pose_sequence


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--checkpoint", default=None)
    ap.add_argument("--frames", type=int, default=8)
    args = ap.parse_args()
    out = Path(args.out)

    ckpt = Path(args.checkpoint) if args.checkpoint else \
        sorted((out / "train").glob("checkpoint_*.bin"))[-1]
    model = load_trained_model(ckpt)
    manifest = load_manifest(out / "corpus" / "manifest.tsv")
    loader = SampleLoader(manifest, model.arch.image_size,
                          model.arch.texture_size)
    actor = loader.load_position(0)

    pose_dir = out / "motion" / "poses"
    pose_paths = build_pose_sequence(pose_dir, args.frames,
                                     image_size=model.arch.image_size,
                                     seed=7)
    poses = [load_iuv(p) for p in pose_paths]

    results = motion_transfer(model, actor.appearance, poses,
                              NoisePolicy("fixed", seed=0))
    written = write_frames(results, out / "motion",
                           pose_sources=[str(p) for p in pose_paths])
    print(f"rendered {len(written)} frames into {out / 'motion'}/ "
          "(see frames.tsv for the pose of each)")


if __name__ == "__main__":
    main()
