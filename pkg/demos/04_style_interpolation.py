"""Appearance interpolation between two identities.

The appearance of each person is a single latent vector, so identities
can be blended by interpolating those vectors before synthesis. The
pose and the per-layer noise stay fixed across the sweep; only the
style moves. t = 1 is purely the first person, t = 0 purely the second.

Run:  python3 demos/04_style_interpolation.py [--out demo_out]
"""

import argparse
from pathlib import Path

import numpy as np

from stylepose.data import SampleLoader, load_manifest
from stylepose.inference import (NoisePolicy, interpolate_styles,
                                 load_trained_model)
from stylepose.pngio import save_image


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--checkpoint", default=None)
    ap.add_argument("--levels", type=int, default=5)
    args = ap.parse_args()
    out = Path(args.out)

    ckpt = Path(args.checkpoint) if args.checkpoint else \
        sorted((out / "train").glob("checkpoint_*.bin"))[-1]
    model = load_trained_model(ckpt)
    manifest = load_manifest(out / "corpus" / "manifest.tsv")
    loader = SampleLoader(manifest, model.arch.image_size,
                          model.arch.texture_size)
    person_a = loader.load_position(0)
    person_b = loader.load_position(4)

    ts = [k / (args.levels - 1) for k in range(args.levels)]
    results = interpolate_styles(model, person_a.appearance,
                                 person_b.appearance, person_a.pose, ts,
                                 NoisePolicy("fixed", seed=0))

    stage = out / "interpolation"
    stage.mkdir(parents=True, exist_ok=True)
    strip = np.concatenate([r.image for r in results], axis=1)
    save_image(stage / "sweep.png", strip)
    for r in results:
        save_image(stage / f"t_{r.metadata['t']:.2f}.png", r.image)
    print(f"wrote a {args.levels}-frame sweep to {stage}/ "
          f"(left: pure b, right: pure a)")


if __name__ == "__main__":
    main()
