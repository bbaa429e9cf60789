"""Command-line entry points.

Every command is a thin shell over the library calls, so a scripted run
and the equivalent library calls produce identical bytes. Exit codes:
0 success, 1 internal failure, 2 bad input or configuration, 3 partial
success (some evaluation pairs skipped).
"""

from __future__ import annotations

import argparse
import os
import sys

from .atlas import PART_SET_NAMES, build_part_layout, extract_texture
from .config import load_train_setup, parse_overrides
from .data import resize_image, resize_iuv
from .errors import InputError, StyleposeError, TrainingDivergedError
from .evaluation import evaluate
from .inference import (
    NoisePolicy,
    garment_transfer,
    head_swap,
    interpolate_styles,
    load_trained_model,
    motion_transfer,
    pose_transfer,
    write_frames,
)
from .losses import ConvFeatureStack
from .pngio import load_image, load_iuv, save_texture_map
from .training import run_training

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_BAD_INPUT = 2
EXIT_PARTIAL = 3


def _noise_from_args(args) -> NoisePolicy:
    policy = NoisePolicy.parse(args.noise)
    if policy.kind == "fixed" and args.seed is not None:
        policy = NoisePolicy("fixed", seed=args.seed)
    elif args.seed is not None:
        raise InputError(f"--seed has no effect with {policy.kind!r} noise")
    return policy


def _load_appearance(model, image_path, iuv_path):
    size = model.arch.image_size
    tsize = model.arch.texture_size
    image = resize_image(load_image(image_path), size)
    iuv = resize_iuv(load_iuv(iuv_path), size)
    return extract_texture(image, iuv, build_part_layout(tsize, tsize))


def _load_pose(model, iuv_path):
    return resize_iuv(load_iuv(iuv_path), model.arch.image_size)


def cmd_extract_texture(args, extra) -> int:
    _reject_extra(extra)
    image = load_image(args.image)
    iuv = load_iuv(args.iuv)
    layout = build_part_layout(args.texture_size, args.texture_size)
    texture = extract_texture(image, iuv, layout)
    save_texture_map(texture, args.out_texture, args.out_mask)
    print(f"wrote {args.out_texture} and {args.out_mask}")
    return EXIT_OK


def cmd_train(args, extra) -> int:
    overrides = parse_overrides(extra)
    setup = load_train_setup(args.config, overrides)
    if setup.manifest is None:
        raise InputError("paths.manifest is required to train")
    if setup.out_dir is None:
        raise InputError("paths.out_dir is required to train")

    def progress(metrics):
        if metrics["step"] % setup.config.log_interval == 0:
            print(f"step {metrics['step']}: total={metrics['total']:.6f}")

    state, ckpt = run_training(
        setup.config, setup.manifest, setup.out_dir,
        resume_from=args.resume, cache_dir=setup.cache_dir,
        perceptual_path=setup.perceptual_weights,
        face_path=setup.face_weights, progress=progress,
    )
    print(f"finished at step {state.step}, checkpoint {ckpt}")
    return EXIT_OK


def cmd_pose_transfer(args, extra) -> int:
    _reject_extra(extra)
    model = load_trained_model(args.checkpoint)
    appearance = _load_appearance(model, args.source_image, args.source_iuv)
    pose = _load_pose(model, args.target_iuv)
    result = pose_transfer(model, appearance, pose, _noise_from_args(args))
    result.save(args.out)
    if result.metadata["degenerate_pose"]:
        print("warning: target pose has no foreground pixels", file=sys.stderr)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_garment_transfer(args, extra) -> int:
    _reject_extra(extra)
    model = load_trained_model(args.checkpoint)
    base = _load_appearance(model, args.base_image, args.base_iuv)
    donor = _load_appearance(model, args.donor_image, args.donor_iuv)
    pose = _load_pose(model, args.target_iuv)
    if args.parts not in PART_SET_NAMES:
        raise InputError(
            f"unknown part set {args.parts!r}; "
            f"choose from {sorted(PART_SET_NAMES)}"
        )
    result = garment_transfer(model, base, donor, pose,
                              parts=PART_SET_NAMES[args.parts],
                              noise=_noise_from_args(args))
    result.save(args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_head_swap(args, extra) -> int:
    _reject_extra(extra)
    model = load_trained_model(args.checkpoint)
    base = _load_appearance(model, args.base_image, args.base_iuv)
    donor = _load_appearance(model, args.head_image, args.head_iuv)
    pose = _load_pose(model, args.target_iuv)
    result = head_swap(model, base, donor, pose, noise=_noise_from_args(args))
    result.save(args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_interpolate(args, extra) -> int:
    _reject_extra(extra)
    model = load_trained_model(args.checkpoint)
    appearance_a = _load_appearance(model, args.a_image, args.a_iuv)
    appearance_b = _load_appearance(model, args.b_image, args.b_iuv)
    pose = _load_pose(model, args.target_iuv)
    try:
        ts = [float(v) for v in args.ts.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"--ts expects comma-separated floats, got {args.ts!r}")
    if not ts:
        raise InputError("--ts must name at least one blend weight")
    results = interpolate_styles(model, appearance_a, appearance_b, pose, ts,
                                 noise=_noise_from_args(args))
    os.makedirs(args.out_dir, exist_ok=True)
    lines = ["index\tfile\tt"]
    for i, (t, result) in enumerate(zip(ts, results)):
        name = f"interp_{i:05d}.png"
        result.save(os.path.join(args.out_dir, name))
        lines.append(f"{i}\t{name}\t{t!r}")
    with open(os.path.join(args.out_dir, "interp.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {len(results)} blends to {args.out_dir}")
    return EXIT_OK


def cmd_motion(args, extra) -> int:
    _reject_extra(extra)
    model = load_trained_model(args.checkpoint)
    appearance = _load_appearance(model, args.source_image, args.source_iuv)
    pose_files = sorted(
        f for f in os.listdir(args.pose_dir) if f.endswith(".png")
    )
    if not pose_files:
        raise InputError(f"no pose PNGs found in {args.pose_dir}")
    poses = [_load_pose(model, os.path.join(args.pose_dir, f))
             for f in pose_files]
    frames = motion_transfer(model, appearance, poses,
                             noise=_noise_from_args(args))
    write_frames(frames, args.out_dir, pose_sources=pose_files)
    print(f"wrote {len(frames)} frames to {args.out_dir}")
    return EXIT_OK


def cmd_evaluate(args, extra) -> int:
    _reject_extra(extra)
    model = load_trained_model(args.checkpoint)
    extractor = ConvFeatureStack() if args.perceptual else None
    report = evaluate(model, args.pairs, args.out_dir,
                      noise=_noise_from_args(args), extractor=extractor)
    for key, value in report.aggregates.items():
        print(f"mean {key}: {value:.6f}")
    scored, skipped = len(report.scored), len(report.skipped)
    print(f"scored {scored} pairs, skipped {skipped}")
    return EXIT_PARTIAL if skipped else EXIT_OK


def _reject_extra(extra) -> None:
    if extra:
        raise InputError(f"unrecognized arguments: {' '.join(extra)}")


def _add_noise_args(parser) -> None:
    parser.add_argument("--noise", default="fixed",
                        help="noise policy: fixed[:seed], fresh, or zero")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for the fixed noise policy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stylepose",
        description="Pose- and appearance-conditioned person image synthesis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-texture",
                       help="build an appearance atlas from an image and "
                            "its surface-coordinate map")
    p.add_argument("--image", required=True)
    p.add_argument("--iuv", required=True)
    p.add_argument("--out-texture", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--texture-size", type=int, default=64)
    p.set_defaults(handler=cmd_extract_texture)

    p = sub.add_parser("train", help="run the optimization loop")
    p.add_argument("--config", default=None,
                   help="key=value config file; --section.key value overrides")
    p.add_argument("--resume", default=None,
                   help="checkpoint to continue from")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("pose-transfer",
                       help="render a source appearance in a target pose")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source-image", required=True)
    p.add_argument("--source-iuv", required=True)
    p.add_argument("--target-iuv", required=True)
    p.add_argument("--out", required=True)
    _add_noise_args(p)
    p.set_defaults(handler=cmd_pose_transfer)

    p = sub.add_parser("garment-transfer",
                       help="swap a donor's texels for chosen parts, "
                            "then render")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--base-image", required=True)
    p.add_argument("--base-iuv", required=True)
    p.add_argument("--donor-image", required=True)
    p.add_argument("--donor-iuv", required=True)
    p.add_argument("--target-iuv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parts", default="clothes",
                   help=f"part set to take from the donor "
                        f"({', '.join(sorted(PART_SET_NAMES))})")
    _add_noise_args(p)
    p.set_defaults(handler=cmd_garment_transfer)

    p = sub.add_parser("head-swap",
                       help="replace the head texels, then render")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--base-image", required=True)
    p.add_argument("--base-iuv", required=True)
    p.add_argument("--head-image", required=True)
    p.add_argument("--head-iuv", required=True)
    p.add_argument("--target-iuv", required=True)
    p.add_argument("--out", required=True)
    _add_noise_args(p)
    p.set_defaults(handler=cmd_head_swap)

    p = sub.add_parser("interpolate",
                       help="blend two appearances across a weight sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--a-image", required=True)
    p.add_argument("--a-iuv", required=True)
    p.add_argument("--b-image", required=True)
    p.add_argument("--b-iuv", required=True)
    p.add_argument("--target-iuv", required=True)
    p.add_argument("--ts", required=True,
                   help="comma-separated blend weights in [0, 1]")
    p.add_argument("--out-dir", required=True)
    _add_noise_args(p)
    p.set_defaults(handler=cmd_interpolate)

    p = sub.add_parser("motion",
                       help="render one appearance across a pose sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source-image", required=True)
    p.add_argument("--source-iuv", required=True)
    p.add_argument("--pose-dir", required=True,
                   help="directory of pose PNGs, rendered in sorted order")
    p.add_argument("--out-dir", required=True)
    _add_noise_args(p)
    p.set_defaults(handler=cmd_motion)

    p = sub.add_parser("evaluate",
                       help="score pose transfers against target images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--perceptual", action="store_true",
                   help="also report the frozen-feature distance")
    _add_noise_args(p)
    p.set_defaults(handler=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        return args.handler(args, extra)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except StyleposeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
