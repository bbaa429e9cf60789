"""Learnable networks.

Five networks make up the pipeline: a pose encoder that turns the
3-channel body-surface rendering into a spatial feature grid, an
appearance encoder that turns a texture atlas into a global code, a
mapping network from that code to a style vector, a synthesis network
whose convolutions are modulated by the style and normalized by weight
demodulation, and two adversaries (a whole-image discriminator and a
patch co-occurrence discriminator).

All layers use equalized learning rate: parameters are stored at unit
scale and multiplied by 1/sqrt(fan_in) at call time. Biases and noise
strengths start at zero; weights start standard normal.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, InputError

DEMOD_EPS = 1e-8
LRELU_SLOPE = 0.2
#: variance-restoring gain applied after every leaky ReLU
ACT_GAIN = math.sqrt(2.0)
#: residual merges are averaged to keep activation variance level
RES_GAIN = 1.0 / math.sqrt(2.0)


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ArchConfig:
    """Construction-time shape parameters shared by all networks."""

    image_size: int = 64
    texture_size: int = 64
    c_e: int = 128
    d_z: int = 128
    d_w: int = 128
    n_map: int = 4
    base_channels: int = 64
    patch_resolution: int = 32

    def __post_init__(self):
        if not (_is_pow2(self.image_size) and self.image_size >= 16):
            raise ConfigurationError(
                f"image_size must be a power of two >= 16, got {self.image_size}"
            )
        if self.texture_size < 16 or self.texture_size % 16:
            raise ConfigurationError(
                f"texture_size must be a multiple of 16, got {self.texture_size}"
            )
        ps = self.patch_resolution
        if not (_is_pow2(ps) and ps >= 8):
            raise ConfigurationError(
                f"patch_resolution must be a power of two >= 8, got {ps}"
            )
        for name in ("c_e", "d_z", "d_w", "base_channels"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.n_map < 0:
            raise ConfigurationError("n_map must be >= 0")
        if self.n_map == 0 and self.d_w != self.d_z:
            raise ConfigurationError(
                "an empty mapping network passes z through unchanged, "
                f"which requires d_w == d_z (got {self.d_w} != {self.d_z})"
            )

    def channels(self, resolution: int) -> int:
        """Channel width at a spatial resolution: doubled per halving,
        capped at c_e."""
        return min(self.c_e, self.base_channels * (self.image_size // resolution))

    def canonical_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))


def arch_from_json(text: str) -> ArchConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"bad architecture JSON: {exc}") from exc
    known = set(ArchConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown architecture keys: {sorted(unknown)}")
    return ArchConfig(**data)


class EqualLinear(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_dim, in_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim)) if bias else None
        self.scale = 1.0 / math.sqrt(in_dim)

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias)


class EqualConv2d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 padding: int = 0, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch)) if bias else None
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return F.conv2d(x, self.weight * self.scale, self.bias,
                        stride=self.stride, padding=self.padding)


def act(x):
    return F.leaky_relu(x, LRELU_SLOPE) * ACT_GAIN


def modulated_conv2d(x, weight, style, demodulate: bool = True,
                     eps: float = DEMOD_EPS, padding: int = 0):
    """Convolution with per-sample input-channel modulation.

    ``weight`` is (out_ch, in_ch, kh, kw), already runtime-scaled;
    ``style`` is (batch, in_ch). Each sample's kernel is w'_ijk =
    s_i * w_ijk; with ``demodulate`` every output channel is rescaled by
    1/sqrt(sum_ik w'^2 + eps). The batch is folded into a single grouped
    convolution.
    """
    if x.ndim != 4:
        raise InputError(f"expected a 4-d feature batch, got {tuple(x.shape)}")
    batch, in_ch, height, width = x.shape
    out_ch, w_in, kh, kw = weight.shape
    if w_in != in_ch:
        raise InputError(
            f"weight expects {w_in} input channels, features have {in_ch}"
        )
    if style.shape != (batch, in_ch):
        raise InputError(
            f"style must be (batch, in_ch) = ({batch}, {in_ch}), "
            f"got {tuple(style.shape)}"
        )
    w = weight.unsqueeze(0) * style[:, None, :, None, None]
    if demodulate:
        sigma = torch.rsqrt(w.pow(2).sum(dim=(2, 3, 4)) + eps)
        w = w * sigma[:, :, None, None, None]
    w = w.reshape(batch * out_ch, in_ch, kh, kw)
    x = x.reshape(1, batch * in_ch, height, width)
    out = F.conv2d(x, w, padding=padding, groups=batch)
    return out.reshape(batch, out_ch, out.shape[2], out.shape[3])


class StyledConv(nn.Module):
    """Modulated 3x3 convolution + noise injection + bias + activation."""

    def __init__(self, in_ch: int, out_ch: int, d_w: int, demodulate: bool = True):
        super().__init__()
        self.affine = EqualLinear(d_w, in_ch)
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, 3, 3))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.noise_strength = nn.Parameter(torch.zeros(()))
        self.scale = 1.0 / math.sqrt(in_ch * 9)
        self.demodulate = demodulate

    def forward(self, x, w, noise):
        style = self.affine(w)
        y = modulated_conv2d(x, self.weight * self.scale, style,
                             demodulate=self.demodulate, padding=1)
        y = y + self.noise_strength * noise
        return act(y + self.bias[None, :, None, None])


class ResBlockDown(nn.Module):
    """Residual block halving the resolution via stride-2 convolution."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = EqualConv2d(in_ch, in_ch, 3, padding=1)
        self.conv2 = EqualConv2d(in_ch, out_ch, 3, stride=2, padding=1)
        self.skip = EqualConv2d(in_ch, out_ch, 1, stride=2, bias=False)

    def forward(self, x):
        y = act(self.conv1(x))
        y = act(self.conv2(y))
        return (y + self.skip(x)) * RES_GAIN


class StyleResBlock(nn.Module):
    """Resolution-preserving residual pair of styled convolutions."""

    def __init__(self, ch: int, d_w: int):
        super().__init__()
        self.conv1 = StyledConv(ch, ch, d_w)
        self.conv2 = StyledConv(ch, ch, d_w)

    def forward(self, x, w, noise1, noise2):
        y = self.conv1(x, w, noise1)
        y = self.conv2(y, w, noise2)
        return (y + x) * RES_GAIN


class StyleResBlockUp(nn.Module):
    """Residual styled block that bilinearly doubles the resolution."""

    def __init__(self, in_ch: int, out_ch: int, d_w: int):
        super().__init__()
        self.conv1 = StyledConv(in_ch, out_ch, d_w)
        self.conv2 = StyledConv(out_ch, out_ch, d_w)
        self.skip = EqualConv2d(in_ch, out_ch, 1, bias=False)

    def forward(self, x, w, noise1, noise2):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        y = self.conv1(x, w, noise1)
        y = self.conv2(y, w, noise2)
        return (y + self.skip(x)) * RES_GAIN


class PoseEncoder(nn.Module):
    """3-channel pose rendering -> (c_e, H/16, W/16) feature grid."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        size = arch.image_size
        self.stem = EqualConv2d(3, arch.channels(size), 3, padding=1)
        widths = [arch.channels(size // k) for k in (1, 2, 4, 8)] + [arch.c_e]
        self.blocks = nn.ModuleList(
            ResBlockDown(widths[i], widths[i + 1]) for i in range(4)
        )

    def forward(self, pose):
        if pose.ndim != 4 or pose.shape[1] != 3:
            raise InputError(f"expected (batch, 3, H, W), got {tuple(pose.shape)}")
        if pose.shape[2] % 16 or pose.shape[3] % 16:
            raise ConfigurationError(
                f"pose grid dims must be divisible by 16, got {tuple(pose.shape[2:])}"
            )
        x = act(self.stem(pose))
        for block in self.blocks:
            x = block(x)
        return x


class AppearanceEncoder(nn.Module):
    """Texture atlas -> global appearance code of dimension d_z.

    Shares the pose encoder's stem/block structure, then two further
    stride-2 convolutions and a fully connected head.
    """

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        ts = arch.texture_size

        def width(res):
            return min(arch.c_e, arch.base_channels * (ts // res))

        self.stem = EqualConv2d(3, width(ts), 3, padding=1)
        widths = [width(ts // k) for k in (1, 2, 4, 8)] + [arch.c_e]
        self.blocks = nn.ModuleList(
            ResBlockDown(widths[i], widths[i + 1]) for i in range(4)
        )
        self.post1 = EqualConv2d(arch.c_e, arch.c_e, 3, stride=2, padding=1)
        self.post2 = EqualConv2d(arch.c_e, arch.c_e, 3, stride=2, padding=1)
        final = ts // 16
        final = (final + 1) // 2
        final = (final + 1) // 2
        self.head = EqualLinear(arch.c_e * final * final, arch.d_z)

    def forward(self, texture):
        ts = self.arch.texture_size
        if texture.ndim != 4 or texture.shape[1:] != (3, ts, ts):
            raise InputError(
                f"expected (batch, 3, {ts}, {ts}), got {tuple(texture.shape)}"
            )
        x = act(self.stem(texture))
        for block in self.blocks:
            x = block(x)
        x = act(self.post1(x))
        x = act(self.post2(x))
        return self.head(x.flatten(1))


class MappingNetwork(nn.Module):
    """n_map equalized fully connected layers from z to the style w."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        dims = [arch.d_z] + [arch.d_w] * arch.n_map
        self.layers = nn.ModuleList(
            EqualLinear(dims[i], dims[i + 1]) for i in range(arch.n_map)
        )

    def forward(self, z):
        w = z
        for layer in self.layers:
            w = act(layer(w))
        return w


class SynthesisNetwork(nn.Module):
    """Pose feature grid + style -> image in [0, 1].

    Four resolution-preserving styled residual blocks at the pose grid
    resolution, then four upsampling styled residual blocks back to full
    resolution, a 1x1 projection to RGB, and (tanh + 1) / 2.
    """

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        size = arch.image_size
        self.base_blocks = nn.ModuleList(
            StyleResBlock(arch.c_e, arch.d_w) for _ in range(4)
        )
        widths = [arch.c_e] + [arch.channels(size // k) for k in (8, 4, 2, 1)]
        self.up_blocks = nn.ModuleList(
            StyleResBlockUp(widths[i], widths[i + 1], arch.d_w) for i in range(4)
        )
        self.to_rgb = EqualConv2d(widths[-1], 3, 1)

    def noise_shapes(self, pose_grid_hw=None) -> list:
        """Spatial shape of each injected noise map, in forward order."""
        h, w = pose_grid_hw or (self.arch.image_size // 16,) * 2
        shapes = [(h, w)] * 8
        for _ in range(4):
            h, w = h * 2, w * 2
            shapes.extend([(h, w)] * 2)
        return shapes

    def forward(self, e, w, noise=None, noise_generator=None):
        if e.ndim != 4 or e.shape[1] != self.arch.c_e:
            raise InputError(
                f"expected pose features (batch, {self.arch.c_e}, h, w), "
                f"got {tuple(e.shape)}"
            )
        if w.shape != (e.shape[0], self.arch.d_w):
            raise InputError(
                f"expected style (batch, {self.arch.d_w}), got {tuple(w.shape)}"
            )
        shapes = self.noise_shapes(tuple(e.shape[2:]))
        if noise is None:
            noise = make_noise(shapes, e.shape[0], generator=noise_generator,
                               dtype=e.dtype, device=e.device)
        else:
            if len(noise) != len(shapes):
                raise InputError(
                    f"expected {len(shapes)} noise maps, got {len(noise)}"
                )
            for n, shape in zip(noise, shapes):
                if n.shape[-2:] != shape:
                    raise InputError(
                        f"noise map shape {tuple(n.shape[-2:])} != expected {shape}"
                    )

        x = e
        k = 0
        for block in self.base_blocks:
            x = block(x, w, noise[k], noise[k + 1])
            k += 2
        for block in self.up_blocks:
            x = block(x, w, noise[k], noise[k + 1])
            k += 2
        rgb = self.to_rgb(x)
        return (torch.tanh(rgb) + 1.0) * 0.5


def make_noise(shapes, batch: int, generator=None, dtype=torch.float32,
               device="cpu"):
    return [
        torch.randn(batch, 1, h, w, generator=generator, dtype=dtype, device=device)
        for h, w in shapes
    ]


def zero_noise(shapes, batch: int, dtype=torch.float32, device="cpu"):
    return [torch.zeros(batch, 1, h, w, dtype=dtype, device=device)
            for h, w in shapes]


class Generator(nn.Module):
    """Mapping network + synthesis network behind one forward call."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        self.mapping = MappingNetwork(arch)
        self.synthesis = SynthesisNetwork(arch)

    def forward(self, e, z, noise=None, noise_generator=None):
        return self.synthesis(e, self.mapping(z), noise=noise,
                              noise_generator=noise_generator)


class Discriminator(nn.Module):
    """Whole-image realness score via a residual downsampling stack."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        size = arch.image_size
        self.stem = EqualConv2d(3, arch.channels(size), 3, padding=1)
        blocks = []
        res = size
        while res > 4:
            blocks.append(ResBlockDown(arch.channels(res), arch.channels(res // 2)))
            res //= 2
        self.blocks = nn.ModuleList(blocks)
        ch = arch.channels(4)
        self.final_conv = EqualConv2d(ch, ch, 3, padding=1)
        self.fc = EqualLinear(ch * 16, ch)
        self.out = EqualLinear(ch, 1)

    def forward(self, image):
        size = self.arch.image_size
        if image.ndim != 4 or image.shape[1:] != (3, size, size):
            raise InputError(
                f"expected (batch, 3, {size}, {size}), got {tuple(image.shape)}"
            )
        x = act(self.stem(image))
        for block in self.blocks:
            x = block(x)
        x = act(self.final_conv(x))
        x = act(self.fc(x.flatten(1)))
        return self.out(x).squeeze(1)


class PatchDiscriminator(nn.Module):
    """Scores crops against the averaged encoding of reference crops."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        ps = arch.patch_resolution

        def width(res):
            return min(arch.c_e, arch.base_channels * (ps // res))

        self.stem = EqualConv2d(3, width(ps), 3, padding=1)
        blocks = []
        res = ps
        while res > 4:
            blocks.append(ResBlockDown(width(res), width(res // 2)))
            res //= 2
        self.blocks = nn.ModuleList(blocks)
        ch = width(4)
        self.embed = EqualLinear(ch * 16, ch)
        self.head1 = EqualLinear(2 * ch, ch)
        self.head2 = EqualLinear(ch, 1)

    def encode(self, patches):
        ps = self.arch.patch_resolution
        if patches.ndim != 4 or patches.shape[1:] != (3, ps, ps):
            raise InputError(
                f"expected patches (n, 3, {ps}, {ps}), got {tuple(patches.shape)}"
            )
        x = act(self.stem(patches))
        for block in self.blocks:
            x = block(x)
        return act(self.embed(x.flatten(1)))

    def forward(self, crops, reference_crops):
        if reference_crops.ndim != 4 or reference_crops.shape[0] == 0:
            raise InputError("the reference crop set must be non-empty")
        crop_vec = self.encode(crops)
        ref_vec = self.encode(reference_crops).mean(dim=0, keepdim=True)
        ref_vec = ref_vec.expand(crop_vec.shape[0], -1)
        x = act(self.head1(torch.cat([crop_vec, ref_vec], dim=1)))
        return self.head2(x).squeeze(1)


@dataclass
class Networks:
    """The five networks plus their shared architecture config."""

    arch: ArchConfig
    pose_encoder: PoseEncoder
    appearance_encoder: AppearanceEncoder
    generator: Generator
    discriminator: Discriminator
    patch_discriminator: PatchDiscriminator

    def generator_side(self):
        return [
            ("pose_encoder", self.pose_encoder),
            ("appearance_encoder", self.appearance_encoder),
            ("generator", self.generator),
        ]

    def discriminator_side(self):
        return [
            ("discriminator", self.discriminator),
            ("patch_discriminator", self.patch_discriminator),
        ]

    def all_named(self):
        return [
            ("pose_encoder", self.pose_encoder),
            ("appearance_encoder", self.appearance_encoder),
            ("generator", self.generator),
            ("discriminator", self.discriminator),
            ("patch_discriminator", self.patch_discriminator),
        ]


def init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Deterministically (re)initialize: weights standard normal, biases
    and noise strengths zero. Iterates parameters in sorted-name order so
    the draw sequence is stable."""
    with torch.no_grad():
        for name, param in sorted(module.named_parameters()):
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "bias" or leaf == "noise_strength":
                param.zero_()
            else:
                param.copy_(torch.randn(param.shape, generator=generator,
                                        dtype=torch.float32))


def build_networks(arch: ArchConfig, seed: int = 0,
                   dtype: torch.dtype = torch.float32) -> Networks:
    """Construct and deterministically initialize all five networks."""
    generator = torch.Generator().manual_seed(int(seed))
    nets = Networks(
        arch=arch,
        pose_encoder=PoseEncoder(arch),
        appearance_encoder=AppearanceEncoder(arch),
        generator=Generator(arch),
        discriminator=Discriminator(arch),
        patch_discriminator=PatchDiscriminator(arch),
    )
    for _, module in nets.all_named():
        init_parameters(module, generator)
        if dtype != torch.float32:
            module.to(dtype)
    return nets


def image_batch(images, dtype=torch.float32):
    """Stack HWC float arrays into an NCHW tensor."""
    arr = np.stack([np.asarray(im) for im in images]).astype(np.float32)
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous().to(dtype)
