"""8-bit PNG encoding and decoding for images, IUV maps, and atlases.

File conventions:

* images: 8-bit RGB PNG, decoded to float32 in [0, 1] (value / 255).
* IUV maps: 3-channel 8-bit PNG; channel 0 is the raw part index (0..24),
  channels 1 and 2 are round(255*u) and round(255*v). Decoding divides by
  255, so a quantization error of at most 1/510 is accepted.
* texture maps: a color PNG plus a grayscale mask PNG (255 = valid texel).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .atlas import IUVMap, PART_COUNT, TextureMap
from .errors import IngestionError


def _read_png(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"file not found: {path}")
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except IngestionError:
        raise
    except Exception as exc:
        raise IngestionError(f"cannot decode {path}: {exc}") from exc


def _to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Decode an RGB PNG to a float32 (H, W, 3) array in [0, 1]."""
    return _read_png(path).astype(np.float32) / np.float32(255.0)


def save_image(path, image: np.ndarray) -> None:
    """Encode a float array in [0, 1] as an 8-bit RGB PNG."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_to_uint8(image), mode="RGB").save(path, format="PNG")


def load_iuv(path) -> IUVMap:
    """Decode a 3-channel IUV PNG."""
    raw = _read_png(path)
    part = raw[:, :, 0].astype(np.int32)
    if part.max(initial=0) > PART_COUNT:
        raise IngestionError(
            f"{path}: part index channel exceeds {PART_COUNT} "
            f"(max {int(part.max())}); not an IUV file?"
        )
    # divide rather than multiply by a reciprocal so u == load_image pixel values
    denom = np.float32(255.0)
    return IUVMap(
        part_index=part,
        u=raw[:, :, 1].astype(np.float32) / denom,
        v=raw[:, :, 2].astype(np.float32) / denom,
    )


def save_iuv(path, iuv: IUVMap) -> None:
    raw = np.stack(
        [
            iuv.part_index.astype(np.uint8),
            _to_uint8(iuv.u),
            _to_uint8(iuv.v),
        ],
        axis=2,
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(raw, mode="RGB").save(path, format="PNG")


def save_texture_map(texture: TextureMap, color_path, mask_path) -> None:
    save_image(color_path, texture.colors)
    Path(mask_path).parent.mkdir(parents=True, exist_ok=True)
    mask = (texture.valid.astype(np.uint8)) * np.uint8(255)
    Image.fromarray(mask, mode="L").save(mask_path, format="PNG")


def load_texture_map(color_path, mask_path) -> TextureMap:
    colors = load_image(color_path)
    mask_path = Path(mask_path)
    if not mask_path.exists():
        raise IngestionError(f"file not found: {mask_path}")
    try:
        with Image.open(mask_path) as img:
            mask = np.asarray(img.convert("L"), dtype=np.uint8)
    except Exception as exc:
        raise IngestionError(f"cannot decode {mask_path}: {exc}") from exc
    if mask.shape != colors.shape[:2]:
        raise IngestionError(
            f"mask {mask.shape} does not match texture {colors.shape[:2]}"
        )
    return TextureMap(colors=colors, valid=mask >= 128)
