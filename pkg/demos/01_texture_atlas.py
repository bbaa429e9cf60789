"""Texture atlases from posed images.

Builds a small synthetic corpus, extracts the part-indexed texture atlas
of one image, then swaps the garment cells in from a second person and
writes every intermediate as a PNG. The atlas is the appearance half of
the model's input: each body part's visible pixels are resampled into a
fixed cell of a 4x6 grid, so appearance edits are plain array surgery.

Run:  python3 demos/01_texture_atlas.py [--out demo_out]
"""

import argparse
from pathlib import Path

from stylepose.atlas import GARMENT_PARTS, build_part_layout, compose_hybrid
from stylepose.data import SampleLoader, load_manifest
from stylepose.pngio import save_image, save_texture_map
from stylepose.synthetic import build_corpus


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out")
    args = ap.parse_args()
    out = Path(args.out)

    corpus = out / "corpus"
    build_corpus(corpus, n_persons=2, images_per_person=4, image_size=64,
                 seed=0)
    manifest = load_manifest(corpus / "manifest.tsv")
    loader = SampleLoader(manifest, image_size=64, texture_size=64)

    person_a = loader.load_position(0)
    person_b = loader.load_position(4)
    print(f"loaded {person_a.person_id} and {person_b.person_id}")

    stage = out / "atlas"
    stage.mkdir(parents=True, exist_ok=True)
    save_image(stage / "person_a.png", person_a.image)
    save_image(stage / "person_b.png", person_b.image)
    save_texture_map(person_a.appearance, stage / "atlas_a.png",
                     stage / "atlas_a_mask.png")
    save_texture_map(person_b.appearance, stage / "atlas_b.png",
                     stage / "atlas_b_mask.png")

    layout = build_part_layout(64, 64)
    hybrid = compose_hybrid(person_a.appearance, person_b.appearance,
                            GARMENT_PARTS, layout)
    save_texture_map(hybrid, stage / "atlas_hybrid.png",
                     stage / "atlas_hybrid_mask.png")

    filled = person_a.appearance.valid.mean()
    print(f"atlas coverage for person a: {filled:.1%} of texels")
    print(f"wrote atlases to {stage}/")


if __name__ == "__main__":
    main()
