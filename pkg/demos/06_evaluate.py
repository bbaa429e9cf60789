"""Score a trained model on held-out pose-transfer pairs.

Builds a pair list from the corpus (source appearance, target pose,
ground-truth target image), renders every pair, and reports SSIM plus a
feature-space distance. The report TSV, the summary text, and every
rendered output land in <out>/eval.

Run:  python3 demos/06_evaluate.py [--out demo_out]
"""

import argparse
from pathlib import Path

from stylepose.data import load_manifest
from stylepose.evaluation import evaluate, load_eval_pairs
from stylepose.inference import NoisePolicy, load_trained_model
from stylepose.losses import ConvFeatureStack
from stylepose.synthetic import build_eval_pairs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--checkpoint", default=None)
    args = ap.parse_args()
    out = Path(args.out)

    ckpt = Path(args.checkpoint) if args.checkpoint else \
        sorted((out / "train").glob("checkpoint_*.bin"))[-1]
    model = load_trained_model(ckpt)

    manifest = load_manifest(out / "corpus" / "manifest.tsv")
    pairs_path = build_eval_pairs(manifest, out / "eval" / "pairs.tsv")
    pairs = load_eval_pairs(pairs_path)

    report = evaluate(model, pairs, out / "eval",
                      noise=NoisePolicy("fixed", seed=0),
                      extractor=ConvFeatureStack())
    for key, value in sorted(report.aggregates.items()):
        print(f"{key}: {value:.4f}" if isinstance(value, float)
              else f"{key}: {value}")
    print(f"full report: {out / 'eval' / 'eval_report.tsv'}")


if __name__ == "__main__":
    main()
