"""Train a small model to memorize the synthetic corpus.

Overfitting eight images is the fastest way to watch the whole training
stack work: appearance atlases in, pose maps in, demodulated synthesis
out, both discriminators pushing back. Metrics stream to
<out>/train/metrics.tsv and checkpoints land next to it.

Training runs in two phases through the checkpoint/resume API. The
warm-up runs at library defaults while the discriminators are still
weak. With only eight reals they soon memorize the training set, so the
second phase resumes with a strong gradient penalty (r1_gamma) that
holds both adversaries at their ln-2 equilibrium, switches to full-batch
updates with momentum, and raises the learning rate; with the gradient
noise averaged away the optimizer tolerates strides that halve the
remaining reconstruction error every few hundred steps. On one CPU core
the default 2000 steps take roughly twenty minutes.

Run:  python3 demos/02_train_overfit.py [--out demo_out] [--steps 2000]
"""

import argparse
from dataclasses import replace
from pathlib import Path

import torch

from stylepose.data import load_manifest
from stylepose.networks import ArchConfig
from stylepose.synthetic import build_corpus
from stylepose.training import TrainConfig, run_training

torch.set_num_threads(1)

WARMUP_STEPS = 600


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--steps", type=int, default=2000,
                    help="total steps across both phases")
    ap.add_argument("--unpaired", action="store_true",
                    help="train without cross-pose supervision")
    args = ap.parse_args()
    out = Path(args.out)

    corpus = out / "corpus"
    build_corpus(corpus, n_persons=2, images_per_person=4, image_size=64,
                 seed=0)
    manifest = load_manifest(corpus / "manifest.tsv")

    arch = ArchConfig(image_size=64, texture_size=64, c_e=64, d_z=64,
                      d_w=64, n_map=2, base_channels=16, patch_resolution=8)
    warmup = TrainConfig(
        image_size=64,
        texture_size=64,
        batch_size=4,
        total_steps=min(WARMUP_STEPS, args.steps),
        mode="unpaired" if args.unpaired else "paired",
        arch=arch,
        seed=0,
        checkpoint_interval=10 ** 6,
        log_interval=50,
    )

    def progress(metrics):
        if metrics["step"] % 50 == 0:
            print(f"step {metrics['step']:5d}  total={metrics['total']:8.4f}"
                  f"  self_l1={metrics['self_l1']:.4f}"
                  f"  patch={metrics['patch']:.4f}", flush=True)

    state, ckpt = run_training(warmup, manifest, out / "train",
                               progress=progress)
    if args.steps > warmup.total_steps:
        print(f"--- resuming with gradient penalty at step {state.step} ---")
        anneal = replace(warmup, total_steps=args.steps,
                         batch_size=8, adam_beta1=0.9,
                         learning_rate=0.004, r1_gamma=100.0,
                         checkpoint_interval=max(args.steps // 2, 1))
        state, ckpt = run_training(anneal, manifest, out / "train",
                                   resume_from=ckpt, progress=progress)
    print(f"finished at step {state.step}")
    print(f"checkpoint: {ckpt}")
    print(f"metrics:    {out / 'train' / 'metrics.tsv'}")


if __name__ == "__main__":
    main()
