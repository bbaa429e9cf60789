"""Training objective: reconstruction, perceptual, face-identity,
adversarial, and patch co-occurrence terms.

The perceptual and face losses need a frozen feature network. Pretrained
weights are not bundled; the default providers are deterministic,
randomly initialized, frozen stacks (seeded constants below), which
exercise the identical code paths and gradients. Real weights can be
loaded from the array container format instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .container import read_container, write_container
from .errors import ConfigurationError, InputError
from .networks import EqualConv2d, EqualLinear, act, init_parameters

PERCEPTUAL_SEED = 101
FACE_SEED = 202


@dataclass(frozen=True)
class LossWeights:
    lambda_l1: float = 1.0
    lambda_vgg: float = 1.0
    lambda_face: float = 1.0
    lambda_gan: float = 1.0
    lambda_patch: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ConfigurationError(f"{name} must be non-negative, got {value}")


class ConvFeatureStack(nn.Module):
    """Frozen stride-2 convolution stack returning per-layer activations."""

    def __init__(self, channels=(16, 32, 64), in_ch: int = 3, seed: int = PERCEPTUAL_SEED):
        super().__init__()
        self.channels = tuple(int(c) for c in channels)
        dims = [in_ch] + list(self.channels)
        self.convs = nn.ModuleList(
            EqualConv2d(dims[i], dims[i + 1], 3, stride=2, padding=1)
            for i in range(len(self.channels))
        )
        init_parameters(self, torch.Generator().manual_seed(int(seed)))
        self.requires_grad_(False)

    def forward(self, x) -> list:
        feats = []
        for conv in self.convs:
            x = act(conv(x))
            feats.append(x)
        return feats


class ConvEmbedder(nn.Module):
    """Frozen crop embedder: fixed-size input, conv stack, linear head."""

    def __init__(self, input_size: int = 96, channels=(16, 32, 64),
                 embed_dim: int = 64, seed: int = FACE_SEED):
        super().__init__()
        self.input_size = int(input_size)
        self.embed_dim = int(embed_dim)
        self.channels = tuple(int(c) for c in channels)
        dims = [3] + list(self.channels)
        self.convs = nn.ModuleList(
            EqualConv2d(dims[i], dims[i + 1], 3, stride=2, padding=1)
            for i in range(len(self.channels))
        )
        side = self.input_size
        for _ in self.channels:
            side = (side + 1) // 2
        self.head = EqualLinear(self.channels[-1] * side * side, self.embed_dim)
        init_parameters(self, torch.Generator().manual_seed(int(seed)))
        self.requires_grad_(False)

    def forward(self, crops):
        s = self.input_size
        if crops.ndim != 4 or crops.shape[1:] != (3, s, s):
            raise InputError(
                f"expected crops (n, 3, {s}, {s}), got {tuple(crops.shape)}"
            )
        x = crops
        for conv in self.convs:
            x = act(conv(x))
        return self.head(x.flatten(1))


def save_feature_net(net, path) -> None:
    if isinstance(net, ConvFeatureStack):
        meta = {"kind": "feature_stack", "channels": list(net.channels)}
    elif isinstance(net, ConvEmbedder):
        meta = {"kind": "embedder", "channels": list(net.channels),
                "input_size": net.input_size, "embed_dim": net.embed_dim}
    else:
        raise ConfigurationError(f"not a frozen feature net: {type(net).__name__}")
    arrays = {name: p.detach().numpy() for name, p in net.named_parameters()}
    write_container(path, meta, arrays)


def load_feature_net(path):
    meta, arrays = read_container(path)
    kind = meta.get("kind")
    if kind == "feature_stack":
        net = ConvFeatureStack(channels=meta["channels"])
    elif kind == "embedder":
        net = ConvEmbedder(input_size=meta["input_size"],
                           channels=meta["channels"],
                           embed_dim=meta["embed_dim"])
    else:
        raise ConfigurationError(f"{path}: unknown feature net kind {kind!r}")
    with torch.no_grad():
        for name, p in net.named_parameters():
            if name not in arrays:
                raise ConfigurationError(f"{path}: missing array {name!r}")
            p.copy_(torch.from_numpy(arrays[name]))
    net.requires_grad_(False)
    return net


def l1_loss(gen, gt):
    if gen.shape != gt.shape:
        raise InputError(f"shape mismatch: {tuple(gen.shape)} vs {tuple(gt.shape)}")
    return (gen - gt).abs().mean()


def perceptual_loss(extractor, gen, gt):
    """Sum over extractor layers of the mean absolute activation gap."""
    if gen.shape != gt.shape:
        raise InputError(f"shape mismatch: {tuple(gen.shape)} vs {tuple(gt.shape)}")
    total = None
    for fg, ft in zip(extractor(gen), extractor(gt)):
        term = (fg - ft).abs().mean()
        total = term if total is None else total + term
    return total


def face_identity_loss(embedder, gen, gt, head_box):
    """Mean absolute embedding gap of the head crop; (loss, skipped).

    ``head_box`` is (row0, col0, height, width) in image coordinates, or
    None. A missing or degenerate box yields a zero loss flagged skipped.
    """
    if gen.shape != gt.shape:
        raise InputError(f"shape mismatch: {tuple(gen.shape)} vs {tuple(gt.shape)}")
    if gen.ndim != 3:
        raise InputError("face loss expects single images (3, H, W)")
    if head_box is None:
        return gen.new_zeros(()), True
    r0, c0, h, w = (int(v) for v in head_box)
    if h <= 0 or w <= 0:
        return gen.new_zeros(()), True
    if r0 < 0 or c0 < 0 or r0 + h > gen.shape[1] or c0 + w > gen.shape[2]:
        raise InputError(f"head box {head_box} exceeds image {tuple(gen.shape)}")
    size = embedder.input_size
    crops = torch.stack([gen[:, r0:r0 + h, c0:c0 + w],
                         gt[:, r0:r0 + h, c0:c0 + w]])
    crops = F.interpolate(crops, size=(size, size), mode="bilinear",
                          align_corners=False)
    emb = embedder(crops)
    return (emb[0] - emb[1]).abs().mean(), False


def gan_losses(d_logits_real, d_logits_fake):
    """Non-saturating logistic pair: (generator loss, discriminator loss)."""
    g_loss = F.softplus(-d_logits_fake).mean()
    d_loss = F.softplus(d_logits_fake).mean() + F.softplus(-d_logits_real).mean()
    return g_loss, d_loss


def r1_penalty(discriminator, real_images, gamma: float = 1.0):
    """(gamma/2) * E[ ||grad_image d(image)||^2 ] on real images."""
    real = real_images.detach().requires_grad_(True)
    # needs its own graph even when the caller is in no-grad mode
    with torch.enable_grad():
        logits = discriminator(real)
        (grad,) = torch.autograd.grad(logits.sum(), real, create_graph=True)
        return grad.pow(2).flatten(1).sum(dim=1).mean() * (gamma / 2.0)


def sample_crop_boxes(rng, image_hw, count: int):
    """Square crop boxes with side uniform in [S/8, S/4], S = min(H, W)."""
    h, w = image_hw
    s = min(h, w)
    lo, hi = s // 8, s // 4
    if lo < 1:
        raise ConfigurationError(
            f"image {image_hw} too small for patch crops (min side {s} < 8)"
        )
    boxes = []
    for _ in range(count):
        side = int(rng.integers(lo, hi + 1))
        r0 = int(rng.integers(0, h - side + 1))
        c0 = int(rng.integers(0, w - side + 1))
        boxes.append((r0, c0, side))
    return boxes


def extract_crops(image, boxes, resolution: int):
    crops = [
        image[None, :, r0:r0 + side, c0:c0 + side] for r0, c0, side in boxes
    ]
    crops = [
        F.interpolate(c, size=(resolution, resolution), mode="bilinear",
                      align_corners=False)
        for c in crops
    ]
    return torch.cat(crops, dim=0)


def patch_cooccurrence_loss(dpatch, gen_image, ref_image, rng,
                            n_crop: int = 8, n_ref: int = 4):
    """Logistic losses over crops of one generated/reference image pair.

    Draw order is fixed (generated crops, real crops, reference crops) so
    the crop geometry is a pure function of the rng state.
    """
    if gen_image.ndim != 3 or ref_image.ndim != 3:
        raise InputError("patch loss expects single images (3, H, W)")
    resolution = dpatch.arch.patch_resolution
    hw = tuple(gen_image.shape[1:])
    gen_boxes = sample_crop_boxes(rng, hw, n_crop)
    real_boxes = sample_crop_boxes(rng, tuple(ref_image.shape[1:]), n_crop)
    ref_boxes = sample_crop_boxes(rng, tuple(ref_image.shape[1:]), n_ref)
    gen_crops = extract_crops(gen_image, gen_boxes, resolution)
    real_crops = extract_crops(ref_image, real_boxes, resolution)
    ref_crops = extract_crops(ref_image, ref_boxes, resolution)
    fake_logits = dpatch(gen_crops, ref_crops)
    real_logits = dpatch(real_crops, ref_crops)
    g_term = F.softplus(-fake_logits).mean()
    d_term = F.softplus(fake_logits).mean() + F.softplus(-real_logits).mean()
    return g_term, d_term


def total_loss(weights: LossWeights, self_terms: dict, transfer_terms: dict,
               patch_g_term):
    """Weighted sum over both reconstruction branches plus the patch term.

    Each branch dict carries unweighted scalars under the keys ``l1``,
    ``perceptual``, ``face``, and ``gan``. Returns (total, breakdown);
    the breakdown holds the weighted contributions and sums to the total.
    """
    breakdown = {}
    total = None
    for prefix, terms in (("self", self_terms), ("transfer", transfer_terms)):
        for key, lam in (("l1", weights.lambda_l1),
                         ("perceptual", weights.lambda_vgg),
                         ("face", weights.lambda_face),
                         ("gan", weights.lambda_gan)):
            value = terms[key] * lam
            breakdown[f"{prefix}_{key}"] = value
            total = value if total is None else total + value
    patch_value = patch_g_term * weights.lambda_patch
    breakdown["patch"] = patch_value
    total = total + patch_value
    return total, breakdown
