"""Optimization loop: paired and unpaired training of the synthesis model.

Each step draws a batch, updates the discriminators on detached outputs,
then updates the generator side through the refreshed discriminators.
All randomness flows through three explicit generators (data sampling,
crop geometry, synthesis noise) so a checkpoint can capture the exact
position of the run.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .atlas import HEAD_PARTS, part_bbox, pose_channels
from .container import read_container, write_container
from .data import Manifest, SampleLoader, load_manifest
from .errors import CheckpointError, ConfigurationError, TrainingDivergedError
from .losses import (
    ConvEmbedder,
    ConvFeatureStack,
    LossWeights,
    extract_crops,
    face_identity_loss,
    gan_losses,
    l1_loss,
    load_feature_net,
    patch_cooccurrence_loss,
    perceptual_loss,
    r1_penalty,
    sample_crop_boxes,
    total_loss,
)
from .networks import ArchConfig, Networks, arch_from_json, build_networks, image_batch

CHECKPOINT_FORMAT_VERSION = 1

METRIC_COLUMNS = (
    "step", "total",
    "self_l1", "self_perceptual", "self_face", "self_gan",
    "transfer_l1", "transfer_perceptual", "transfer_face", "transfer_gan",
    "patch", "d_gan", "d_patch", "r1",
)

TRAIN_MODES = ("paired", "unpaired")


@dataclass(frozen=True)
class TrainConfig:
    image_size: int = 64
    texture_size: int = 64
    batch_size: int = 4
    total_steps: int = 1000
    learning_rate: float = 0.002
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    mode: str = "paired"
    weights: LossWeights = field(default_factory=LossWeights)
    arch: ArchConfig = None
    seed: int = 0
    checkpoint_interval: int = 500
    log_interval: int = 50
    r1_gamma: float = 1.0
    r1_interval: int = 16
    n_crop: int = 8
    n_ref: int = 4

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ConfigurationError(
                f"mode must be one of {TRAIN_MODES}, got {self.mode!r}"
            )
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.total_steps < 0:
            raise ConfigurationError("total_steps must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            beta = getattr(self, name)
            if not 0.0 <= beta < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1)")
        for name in ("checkpoint_interval", "log_interval", "r1_interval",
                     "n_crop", "n_ref"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        if self.r1_gamma < 0:
            raise ConfigurationError("r1_gamma must be non-negative")
        if self.arch is None:
            object.__setattr__(self, "arch", ArchConfig(
                image_size=self.image_size, texture_size=self.texture_size))
        elif (self.arch.image_size != self.image_size
              or self.arch.texture_size != self.texture_size):
            raise ConfigurationError(
                "architecture sizes disagree with training sizes: "
                f"{self.arch.image_size}/{self.arch.texture_size} vs "
                f"{self.image_size}/{self.texture_size}"
            )


class ManualAdam:
    """Adam with bias correction; update is -lr * mhat / (sqrt(vhat) + eps)."""

    def __init__(self, named_params, lr: float, beta1: float, beta2: float,
                 eps: float = 1e-8):
        named_params = list(named_params)
        self.names = [name for name, _ in named_params]
        self.params = [p for _, p in named_params]
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]
        self.t = 0

    @torch.no_grad()
    def step(self, grads):
        if len(grads) != len(self.params):
            raise ConfigurationError(
                f"expected {len(self.params)} gradients, got {len(grads)}"
            )
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                m.mul_(self.beta1)
                v.mul_(self.beta2)
            else:
                m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            p.add_((m / bc1) / ((v / bc2).sqrt() + self.eps), alpha=-self.lr)


@dataclass
class TrainState:
    config: TrainConfig
    nets: Networks
    opt_g: ManualAdam
    opt_d: ManualAdam
    perceptual: ConvFeatureStack
    face_embedder: ConvEmbedder
    data_rng: np.random.Generator
    crop_rng: np.random.Generator
    noise_gen: torch.Generator
    step: int = 0


def _named_side_params(modules):
    out = []
    for net_name, module in modules:
        for pname, p in sorted(module.named_parameters()):
            out.append((f"{net_name}.{pname}", p))
    return out


def build_train_state(config: TrainConfig, perceptual_path=None,
                      face_path=None) -> TrainState:
    nets = build_networks(config.arch, seed=config.seed)
    opt_g = ManualAdam(_named_side_params(nets.generator_side()),
                       config.learning_rate, config.adam_beta1, config.adam_beta2)
    opt_d = ManualAdam(_named_side_params(nets.discriminator_side()),
                       config.learning_rate, config.adam_beta1, config.adam_beta2)
    perceptual = (load_feature_net(perceptual_path) if perceptual_path
                  else ConvFeatureStack())
    face = load_feature_net(face_path) if face_path else ConvEmbedder()
    return TrainState(
        config=config,
        nets=nets,
        opt_g=opt_g,
        opt_d=opt_d,
        perceptual=perceptual,
        face_embedder=face,
        data_rng=np.random.default_rng([config.seed, 0]),
        crop_rng=np.random.default_rng([config.seed, 1]),
        noise_gen=torch.Generator().manual_seed(config.seed),
    )


@dataclass
class TrainBatch:
    """One step's inputs: source/target pairs stacked along the batch."""

    pose_self: torch.Tensor
    pose_transfer: torch.Tensor
    real_self: torch.Tensor
    real_transfer: torch.Tensor
    textures: torch.Tensor
    head_self: list
    head_transfer: list
    transfer_supervised: bool


def make_batch(loader: SampleLoader, config: TrainConfig,
               rng: np.random.Generator) -> TrainBatch:
    sources, targets = [], []
    for _ in range(config.batch_size):
        if config.mode == "paired":
            s, t = loader.sample_pair(rng)
        else:
            s = loader.sample_single(rng)
            t = loader.sample_single(rng)
        sources.append(s)
        targets.append(t)
    return TrainBatch(
        pose_self=image_batch([pose_channels(s.pose) for s in sources]),
        pose_transfer=image_batch([pose_channels(t.pose) for t in targets]),
        real_self=image_batch([s.image for s in sources]),
        real_transfer=image_batch([t.image for t in targets]),
        textures=image_batch([s.appearance.colors for s in sources]),
        head_self=[part_bbox(s.pose, HEAD_PARTS) for s in sources],
        head_transfer=[part_bbox(t.pose, HEAD_PARTS) for t in targets],
        transfer_supervised=config.mode == "paired",
    )


def _require_finite(value, name: str, step: int):
    if isinstance(value, torch.Tensor):
        value = value.detach()
    if not math.isfinite(float(value)):
        raise TrainingDivergedError(
            f"non-finite {name} at step {step}: {float(value)}"
        )


def _face_term(state: TrainState, fakes, reals, boxes):
    used = []
    for b in range(fakes.shape[0]):
        loss, skipped = face_identity_loss(
            state.face_embedder, fakes[b], reals[b], boxes[b])
        if not skipped:
            used.append(loss)
    if not used:
        return fakes.new_zeros(())
    return torch.stack(used).mean()


def _patch_terms(state: TrainState, fakes, references, crop_rng, which: int):
    terms = []
    for b in range(fakes.shape[0]):
        pair = patch_cooccurrence_loss(
            state.nets.patch_discriminator, fakes[b], references[b], crop_rng,
            n_crop=state.config.n_crop, n_ref=state.config.n_ref)
        terms.append(pair[which])
    return torch.stack(terms).mean()


def run_step(state: TrainState, batch: TrainBatch, crop_rng=None,
             noise_gen=None, update: bool = True) -> dict:
    """One optimization step; returns the step's metric row.

    With ``update=False`` the same losses are measured but no parameters
    move, which is how the pre-training metrics row is produced.
    """
    cfg = state.config
    nets = state.nets
    crop_rng = state.crop_rng if crop_rng is None else crop_rng
    noise_gen = state.noise_gen if noise_gen is None else noise_gen
    step = state.step + 1 if update else state.step
    n = batch.real_self.shape[0]

    # one generator pass covers both branches; the appearance code of the
    # source conditions self-reconstruction and the transfer alike
    z = nets.appearance_encoder(batch.textures)
    pose_all = torch.cat([batch.pose_self, batch.pose_transfer])
    e_all = nets.pose_encoder(pose_all)
    fake_all = nets.generator(e_all, torch.cat([z, z]), noise_generator=noise_gen)
    fake_self, fake_transfer = fake_all[:n], fake_all[n:]

    real_all = torch.cat([batch.real_self, batch.real_transfer])
    d_real = nets.discriminator(real_all)
    d_fake = nets.discriminator(fake_all.detach())
    _, d_gan = gan_losses(d_real, d_fake)
    d_patch = _patch_terms(state, fake_transfer.detach(), batch.real_self,
                           crop_rng, which=1)
    _require_finite(d_gan, "d_gan", step)
    _require_finite(d_patch, "d_patch", step)
    d_total = d_gan + d_patch
    r1_value = None
    if update and step % cfg.r1_interval == 0:
        # lazy schedule: scale so the time-averaged strength is unchanged
        r1_value = r1_penalty(nets.discriminator, real_all,
                              cfg.r1_gamma) * cfg.r1_interval
        # both adversaries are penalized: an unregularized crop
        # discriminator can sharpen without bound and drive the run into
        # an oscillation that stalls reconstruction
        resolution = nets.patch_discriminator.arch.patch_resolution
        hw = tuple(batch.real_self.shape[2:])
        crop_boxes = sample_crop_boxes(crop_rng, hw, cfg.n_crop)
        ref_boxes = sample_crop_boxes(crop_rng, hw, cfg.n_ref)
        crops = extract_crops(batch.real_self[0], crop_boxes, resolution)
        refs = extract_crops(batch.real_self[0], ref_boxes, resolution)
        r1_value = r1_value + r1_penalty(
            lambda x: nets.patch_discriminator(x, refs), crops,
            cfg.r1_gamma) * cfg.r1_interval
        _require_finite(r1_value, "r1", step)
        d_total = d_total + r1_value

    if update:
        d_params = [p for _, p in _named_side_params(nets.discriminator_side())]
        d_grads = torch.autograd.grad(d_total, d_params, allow_unused=True)
        state.opt_d.step(d_grads)

    d_fake_after = nets.discriminator(fake_all)
    self_terms = {
        "l1": l1_loss(fake_self, batch.real_self),
        "perceptual": perceptual_loss(state.perceptual, fake_self,
                                      batch.real_self),
        "face": _face_term(state, fake_self, batch.real_self, batch.head_self),
        "gan": F.softplus(-d_fake_after[:n]).mean(),
    }
    if batch.transfer_supervised:
        transfer_terms = {
            "l1": l1_loss(fake_transfer, batch.real_transfer),
            "perceptual": perceptual_loss(state.perceptual, fake_transfer,
                                          batch.real_transfer),
            "face": _face_term(state, fake_transfer, batch.real_transfer,
                               batch.head_transfer),
            "gan": F.softplus(-d_fake_after[n:]).mean(),
        }
    else:
        zero = fake_transfer.new_zeros(())
        transfer_terms = {"l1": zero, "perceptual": zero, "face": zero,
                          "gan": F.softplus(-d_fake_after[n:]).mean()}
    patch_g = _patch_terms(state, fake_transfer, batch.real_self, crop_rng,
                           which=0)
    total, breakdown = total_loss(cfg.weights, self_terms, transfer_terms,
                                  patch_g)
    for name, value in breakdown.items():
        _require_finite(value, name, step)
    _require_finite(total, "total", step)

    if update:
        g_params = [p for _, p in _named_side_params(nets.generator_side())]
        g_grads = torch.autograd.grad(total, g_params, allow_unused=True)
        state.opt_g.step(g_grads)
        state.step = step

    scalar = lambda v: float(v.detach())
    metrics = {"step": step, "total": scalar(total)}
    metrics.update({name: scalar(value) for name, value in breakdown.items()})
    metrics["d_gan"] = scalar(d_gan)
    metrics["d_patch"] = scalar(d_patch)
    metrics["r1"] = None if r1_value is None else scalar(r1_value)
    return metrics


def _format_metrics(metrics: dict) -> str:
    cells = []
    for column in METRIC_COLUMNS:
        value = metrics.get(column)
        if value is None:
            cells.append("")
        elif column == "step":
            cells.append(str(value))
        else:
            cells.append(repr(value))
    return "\t".join(cells)


def checkpoint_arrays(state: TrainState) -> dict:
    arrays = {}
    for name, p in _named_side_params(state.nets.all_named()):
        arrays[f"param/{name}"] = p.detach().numpy()
    for tag, opt in (("g", state.opt_g), ("d", state.opt_d)):
        for name, m, v in zip(opt.names, opt.m, opt.v):
            arrays[f"adam_{tag}_m/{name}"] = m.numpy()
            arrays[f"adam_{tag}_v/{name}"] = v.numpy()
    arrays["rng/torch_noise"] = state.noise_gen.get_state().numpy()
    return arrays


def save_checkpoint(path, state: TrainState) -> None:
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arch": json.loads(state.config.arch.canonical_json()),
        "step": state.step,
        "mode": state.config.mode,
        "adam_t_g": state.opt_g.t,
        "adam_t_d": state.opt_d.t,
        "data_rng": state.data_rng.bit_generator.state,
        "crop_rng": state.crop_rng.bit_generator.state,
    }
    write_container(path, meta, checkpoint_arrays(state))


def load_checkpoint(path):
    """Read a checkpoint file; returns (meta, arrays) after validation."""
    try:
        meta, arrays = read_container(path)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    version = meta.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint format version {version!r}"
        )
    for key in ("arch", "step"):
        if key not in meta:
            raise CheckpointError(f"{path}: checkpoint missing {key!r}")
    return meta, arrays


def checkpoint_arch(meta) -> ArchConfig:
    return arch_from_json(json.dumps(meta["arch"]))


def _restore_tensors(prefix, arrays, names, tensors, path):
    for name, tensor in zip(names, tensors):
        key = f"{prefix}/{name}"
        if key not in arrays:
            raise CheckpointError(f"{path}: checkpoint missing array {key!r}")
        stored = arrays[key]
        if tuple(stored.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"{path}: {key!r} has shape {tuple(stored.shape)}, "
                f"expected {tuple(tensor.shape)}"
            )
        with torch.no_grad():
            tensor.copy_(torch.from_numpy(stored))


def restore_train_state(config: TrainConfig, path, perceptual_path=None,
                        face_path=None) -> TrainState:
    meta, arrays = load_checkpoint(path)
    stored_arch = checkpoint_arch(meta)
    if stored_arch != config.arch:
        raise CheckpointError(
            f"{path}: checkpoint architecture {stored_arch.canonical_json()} "
            f"does not match configured {config.arch.canonical_json()}"
        )
    state = build_train_state(config, perceptual_path=perceptual_path,
                              face_path=face_path)
    named = _named_side_params(state.nets.all_named())
    _restore_tensors("param", arrays, [n for n, _ in named],
                     [p for _, p in named], path)
    for tag, opt in (("g", state.opt_g), ("d", state.opt_d)):
        _restore_tensors(f"adam_{tag}_m", arrays, opt.names, opt.m, path)
        _restore_tensors(f"adam_{tag}_v", arrays, opt.names, opt.v, path)
        opt.t = int(meta[f"adam_t_{tag}"])
    if "rng/torch_noise" not in arrays:
        raise CheckpointError(f"{path}: checkpoint missing array 'rng/torch_noise'")
    state.noise_gen.set_state(torch.from_numpy(arrays["rng/torch_noise"]))
    state.data_rng.bit_generator.state = meta["data_rng"]
    state.crop_rng.bit_generator.state = meta["crop_rng"]
    state.step = int(meta["step"])
    return state


def checkpoint_filename(step: int) -> str:
    return f"checkpoint_{step:06d}.bin"


def run_training(config: TrainConfig, manifest, out_dir, resume_from=None,
                 cache_dir=None, perceptual_path=None, face_path=None,
                 progress=None):
    """Train to ``config.total_steps``; returns (state, last checkpoint path).

    ``manifest`` is a Manifest or a path to one. A fresh run writes a new
    metrics.tsv and logs a pre-training row; resuming appends to the
    existing file and continues from the checkpoint's exact position.
    """
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    loader = SampleLoader(manifest, config.image_size, config.texture_size,
                          cache_dir=cache_dir)
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.tsv")

    if resume_from is None:
        state = build_train_state(config, perceptual_path=perceptual_path,
                                  face_path=face_path)
        with open(metrics_path, "w") as fh:
            fh.write("\t".join(METRIC_COLUMNS) + "\n")
            # the step-0 row is measured with throwaway generators so it
            # cannot shift the training stream
            batch = make_batch(loader, config,
                               np.random.default_rng([config.seed, 7]))
            metrics = run_step(
                state, batch,
                crop_rng=np.random.default_rng([config.seed, 8]),
                noise_gen=torch.Generator().manual_seed(config.seed + 7919),
                update=False,
            )
            fh.write(_format_metrics(metrics) + "\n")
    else:
        state = restore_train_state(config, resume_from,
                                    perceptual_path=perceptual_path,
                                    face_path=face_path)
        if state.step > config.total_steps:
            raise ConfigurationError(
                f"checkpoint is at step {state.step}, beyond total_steps "
                f"{config.total_steps}"
            )

    last_saved = None
    ckpt_path = None
    while state.step < config.total_steps:
        batch = make_batch(loader, config, state.data_rng)
        metrics = run_step(state, batch)
        if state.step % config.log_interval == 0:
            with open(metrics_path, "a") as fh:
                fh.write(_format_metrics(metrics) + "\n")
        if state.step % config.checkpoint_interval == 0:
            ckpt_path = os.path.join(out_dir, checkpoint_filename(state.step))
            save_checkpoint(ckpt_path, state)
            last_saved = state.step
        if progress is not None:
            progress(metrics)
    if last_saved != state.step:
        ckpt_path = os.path.join(out_dir, checkpoint_filename(state.step))
        save_checkpoint(ckpt_path, state)
    return state, ckpt_path
