"""Synthesis-time operations on a trained model.

Every operation reduces to one primitive: encode a target pose, encode a
source appearance atlas, and render. Garment transfer and head swap
differ from plain pose transfer only in that the atlas is composed from
two people before encoding, so those paths are exactly equivalent to
composing first and transferring second.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .atlas import (
    GARMENT_PARTS,
    HEAD_PARTS,
    IUVMap,
    TextureMap,
    build_part_layout,
    compose_hybrid,
    pose_channels,
)
from .errors import CheckpointError, InputError
from .networks import build_networks, image_batch, make_noise, zero_noise
from .pngio import save_image
from .training import checkpoint_arch, load_checkpoint

NOISE_KINDS = ("fresh", "fixed", "zero")


@dataclass(frozen=True)
class NoisePolicy:
    """How per-layer synthesis noise is drawn at inference time.

    ``fixed`` reseeds a private generator on every call, so repeated calls
    are identical; ``fresh`` draws from the global generator and advances
    it; ``zero`` disables noise.
    """

    kind: str = "fixed"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InputError(f"noise kind must be one of {NOISE_KINDS}, "
                             f"got {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "NoisePolicy":
        """Parse 'zero', 'fresh', or 'fixed[:seed]'."""
        kind, _, seed = text.partition(":")
        if seed and kind != "fixed":
            raise InputError(f"only fixed noise takes a seed, got {text!r}")
        try:
            return cls(kind=kind, seed=int(seed) if seed else 0)
        except ValueError:
            raise InputError(f"bad noise seed in {text!r}")

    def materialize(self, shapes, batch: int):
        if self.kind == "zero":
            return zero_noise(shapes, batch)
        if self.kind == "fixed":
            gen = torch.Generator().manual_seed(self.seed)
            return make_noise(shapes, batch, gen)
        return make_noise(shapes, batch, None)


@dataclass
class TrainedModel:
    """Generator-side networks of a checkpoint, frozen for synthesis."""

    arch: object
    pose_encoder: object
    appearance_encoder: object
    generator: object

    @classmethod
    def from_networks(cls, nets) -> "TrainedModel":
        model = cls(arch=nets.arch, pose_encoder=nets.pose_encoder,
                    appearance_encoder=nets.appearance_encoder,
                    generator=nets.generator)
        for module in (model.pose_encoder, model.appearance_encoder,
                       model.generator):
            module.eval()
            module.requires_grad_(False)
        return model

    def layout(self):
        return build_part_layout(self.arch.texture_size, self.arch.texture_size)

    def appearance_code(self, appearance: TextureMap) -> torch.Tensor:
        ts = self.arch.texture_size
        if appearance.colors.shape != (ts, ts, 3):
            raise InputError(
                f"appearance atlas must be ({ts}, {ts}, 3), "
                f"got {appearance.colors.shape}"
            )
        with torch.no_grad():
            return self.appearance_encoder(image_batch([appearance.colors]))


def load_trained_model(path) -> TrainedModel:
    meta, arrays = load_checkpoint(path)
    nets = build_networks(checkpoint_arch(meta))
    with torch.no_grad():
        for net_name, module in nets.generator_side():
            for pname, p in sorted(module.named_parameters()):
                key = f"param/{net_name}.{pname}"
                if key not in arrays:
                    raise CheckpointError(
                        f"{path}: checkpoint missing array {key!r}")
                p.copy_(torch.from_numpy(arrays[key]))
    return TrainedModel.from_networks(nets)


@dataclass
class SynthesisResult:
    """One rendered frame plus bookkeeping about its inputs."""

    image: np.ndarray
    metadata: dict = field(default_factory=dict)

    def save(self, path) -> None:
        save_image(path, self.image)


def _render(model: TrainedModel, z: torch.Tensor, pose: IUVMap,
            noise: NoisePolicy) -> SynthesisResult:
    grid = image_batch([pose_channels(pose)])
    with torch.no_grad():
        e = model.pose_encoder(grid)
        shapes = model.generator.synthesis.noise_shapes(tuple(e.shape[2:]))
        maps = noise.materialize(shapes, batch=1)
        out = model.generator(e, z, noise=maps)
    image = out[0].permute(1, 2, 0).contiguous().numpy()
    metadata = {"degenerate_pose": not bool(pose.foreground().any())}
    return SynthesisResult(image=image, metadata=metadata)


def pose_transfer(model: TrainedModel, source_appearance: TextureMap,
                  target_pose: IUVMap,
                  noise: NoisePolicy = NoisePolicy()) -> SynthesisResult:
    """Render the source appearance in the target pose."""
    z = model.appearance_code(source_appearance)
    return _render(model, z, target_pose, noise)


def garment_transfer(model: TrainedModel, base_appearance: TextureMap,
                     donor_appearance: TextureMap, target_pose: IUVMap,
                     parts=GARMENT_PARTS,
                     noise: NoisePolicy = NoisePolicy()) -> SynthesisResult:
    """Swap the donor's texels for the given parts, then render."""
    hybrid = compose_hybrid(base_appearance, donor_appearance, parts,
                            model.layout())
    return pose_transfer(model, hybrid, target_pose, noise)


def head_swap(model: TrainedModel, base_appearance: TextureMap,
              head_appearance: TextureMap, target_pose: IUVMap,
              noise: NoisePolicy = NoisePolicy()) -> SynthesisResult:
    return garment_transfer(model, base_appearance, head_appearance,
                            target_pose, parts=HEAD_PARTS, noise=noise)


def interpolate_styles(model: TrainedModel, appearance_a: TextureMap,
                       appearance_b: TextureMap, target_pose: IUVMap, ts,
                       noise: NoisePolicy = NoisePolicy()) -> list:
    """Blend appearance codes: t = 1 is purely a, t = 0 purely b.

    The noise maps are materialized once and shared by every blend so the
    sweep varies only in the appearance code.
    """
    ts = list(ts)
    for t in ts:
        if not 0.0 <= t <= 1.0:
            raise InputError(f"interpolation weight {t} outside [0, 1]")
    z_a = model.appearance_code(appearance_a)
    z_b = model.appearance_code(appearance_b)
    grid = image_batch([pose_channels(target_pose)])
    degenerate = not bool(target_pose.foreground().any())
    results = []
    with torch.no_grad():
        e = model.pose_encoder(grid)
        shapes = model.generator.synthesis.noise_shapes(tuple(e.shape[2:]))
        maps = noise.materialize(shapes, batch=1)
        for t in ts:
            z = t * z_a + (1.0 - t) * z_b
            out = model.generator(e, z, noise=maps)
            image = out[0].permute(1, 2, 0).contiguous().numpy()
            results.append(SynthesisResult(
                image=image,
                metadata={"degenerate_pose": degenerate, "t": float(t)},
            ))
    return results


def motion_transfer(model: TrainedModel, source_appearance: TextureMap,
                    poses, noise: NoisePolicy = NoisePolicy()) -> list:
    """Render one appearance across a pose sequence.

    The appearance code is computed once; each frame is bitwise identical
    to a standalone pose_transfer call with the same noise policy.
    """
    poses = list(poses)
    if not poses:
        raise InputError("motion transfer needs at least one pose")
    z = model.appearance_code(source_appearance)
    return [_render(model, z, pose, noise) for pose in poses]


def write_frames(results, out_dir, pose_sources=None) -> list:
    """Write frame_%05d.png files plus a frames.tsv manifest.

    ``pose_sources`` optionally names the pose input behind each frame;
    the manifest records one row per frame.
    """
    os.makedirs(out_dir, exist_ok=True)
    if pose_sources is None:
        pose_sources = [""] * len(results)
    if len(pose_sources) != len(results):
        raise InputError("one pose source per frame required")
    paths = []
    lines = ["frame\tfile\tpose_source"]
    for i, (result, source) in enumerate(zip(results, pose_sources)):
        name = f"frame_{i:05d}.png"
        result.save(os.path.join(out_dir, name))
        paths.append(os.path.join(out_dir, name))
        lines.append(f"{i}\t{name}\t{source}")
    with open(os.path.join(out_dir, "frames.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return paths
