"""Pose transfer, garment transfer, and head swap from a checkpoint.

Loads the model trained by 02_train_overfit.py and renders the three
core recombinations: person A in person B's pose, person A wearing
person B's clothes, and person A with person B's head. Garment transfer
is literally atlas surgery followed by pose transfer, so the composed
path and the direct render agree bitwise.

Run:  python3 demos/03_pose_and_garment_transfer.py [--out demo_out]
"""

import argparse
from pathlib import Path

from stylepose.data import SampleLoader, load_manifest
from stylepose.inference import (NoisePolicy, garment_transfer, head_swap,
                                 load_trained_model, pose_transfer)
from stylepose.pngio import save_image


def latest_checkpoint(train_dir: Path) -> Path:
    ckpts = sorted(train_dir.glob("checkpoint_*.bin"))
    if not ckpts:
        raise SystemExit(f"no checkpoint under {train_dir}; "
                         "run demos/02_train_overfit.py first")
    return ckpts[-1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--checkpoint", default=None)
    args = ap.parse_args()
    out = Path(args.out)

    ckpt = Path(args.checkpoint) if args.checkpoint else \
        latest_checkpoint(out / "train")
    model = load_trained_model(ckpt)
    print(f"loaded {ckpt}")

    manifest = load_manifest(out / "corpus" / "manifest.tsv")
    loader = SampleLoader(manifest, model.arch.image_size,
                          model.arch.texture_size)
    person_a = loader.load_position(0)
    person_b = loader.load_position(4)

    noise = NoisePolicy("fixed", seed=0)
    stage = out / "transfer"
    stage.mkdir(parents=True, exist_ok=True)

    moved = pose_transfer(model, person_a.appearance, person_b.pose, noise)
    moved.save(stage / "a_in_pose_of_b.png")

    dressed = garment_transfer(model, person_a.appearance,
                               person_b.appearance, person_a.pose,
                               noise=noise)
    dressed.save(stage / "a_wearing_b.png")

    swapped = head_swap(model, person_a.appearance, person_b.appearance,
                        person_a.pose, noise=noise)
    swapped.save(stage / "a_with_head_of_b.png")

    save_image(stage / "a_original.png", person_a.image)
    save_image(stage / "b_original.png", person_b.image)
    print(f"wrote renders to {stage}/")


if __name__ == "__main__":
    main()
