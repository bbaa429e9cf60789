"""Pose-normalized UV appearance atlas: part layout, extraction, composition.

The atlas is a single image whose area is split into 24 rectangular part
cells on a fixed 4x6 grid, filled row-major by part id. Appearance sampled
from an input image lands in the cell of the body part each pixel belongs
to, at the texel addressed by the pixel's intra-part (u, v) coordinates.
Because extraction and composition address cells through the same layout,
any region of the atlas can be swapped between subjects to build hybrid
appearances (garment transfer, head swap).

Part ids follow the 24-part DensePose convention. The published part-set
constants below group them by body area; ``GARMENT_PARTS`` is everything
except head and hands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError

PART_COUNT = 24
GRID_ROWS = 4
GRID_COLS = 6

TORSO_PARTS = frozenset({1, 2})
HAND_PARTS = frozenset({3, 4})
FOOT_PARTS = frozenset({5, 6})
LEG_PARTS = frozenset(range(7, 15))
ARM_PARTS = frozenset(range(15, 23))
HEAD_PARTS = frozenset({23, 24})
GARMENT_PARTS = TORSO_PARTS | FOOT_PARTS | LEG_PARTS | ARM_PARTS
ALL_PARTS = frozenset(range(1, PART_COUNT + 1))

#: Named part sets accepted by the CLI's ``--parts`` flag.
PART_SET_NAMES = {
    "clothes": GARMENT_PARTS,
    "head": HEAD_PARTS,
    "torso": TORSO_PARTS,
    "hands": HAND_PARTS,
    "feet": FOOT_PARTS,
    "legs": LEG_PARTS,
    "arms": ARM_PARTS,
    "all": ALL_PARTS,
}


@dataclass
class IUVMap:
    """Per-pixel body-surface coordinates.

    ``part_index`` holds the body-part id per pixel (0 = background) and
    ``u``/``v`` the intra-part surface coordinates in [0, 1]. ``u`` runs
    along atlas columns, ``v`` along atlas rows. u/v values at background
    pixels carry no meaning and are ignored by every consumer.
    """

    part_index: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.part_index = np.asarray(self.part_index)
        self.u = np.asarray(self.u, dtype=np.float32)
        self.v = np.asarray(self.v, dtype=np.float32)
        if self.part_index.ndim != 2:
            raise InputError("part_index must be a 2-D grid")
        if self.u.shape != self.part_index.shape or self.v.shape != self.part_index.shape:
            raise InputError("u, v, and part_index must share the same shape")
        if self.part_index.size:
            lo = int(self.part_index.min())
            hi = int(self.part_index.max())
            if lo < 0 or hi > PART_COUNT:
                raise InputError(
                    f"part_index values must lie in 0..{PART_COUNT}, got {lo}..{hi}"
                )

    @property
    def shape(self):
        return self.part_index.shape

    def foreground(self) -> np.ndarray:
        return self.part_index > 0


@dataclass
class TextureMap:
    """Appearance atlas with a per-texel validity mask.

    Colors at invalid texels are forced to zero on construction.
    """

    colors: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.colors = np.asarray(self.colors, dtype=np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.colors.ndim != 3 or self.colors.shape[2] != 3:
            raise InputError("colors must have shape (Ha, Wa, 3)")
        if self.valid.shape != self.colors.shape[:2]:
            raise InputError("valid mask must match the colors grid")
        self.colors = np.where(self.valid[:, :, None], self.colors, np.float32(0.0))

    @property
    def shape(self):
        return self.valid.shape


@dataclass(frozen=True)
class PartLayout:
    """Placement of the 24 part cells inside the atlas.

    ``regions`` maps part id -> (row0, col0, height, width). Cells are
    pairwise disjoint; texels outside every cell are permanently invalid.
    """

    atlas_height: int
    atlas_width: int
    regions: dict

    def region(self, part_id: int):
        try:
            return self.regions[part_id]
        except KeyError:
            raise InputError(f"unknown part id {part_id}") from None


def build_part_layout(texture_height: int, texture_width: int) -> PartLayout:
    """Lay the 24 part cells out on a 4x6 grid, row-major by part id.

    Cell size is (texture_height // 4, texture_width // 6); part id p
    (1-based) occupies grid row (p-1) // 6, column (p-1) % 6. Leftover
    margin rows/columns from the floor division stay outside every cell.
    """
    if texture_height < GRID_ROWS or texture_width < GRID_COLS:
        raise ConfigurationError(
            f"atlas must be at least {GRID_ROWS}x{GRID_COLS}, "
            f"got {texture_height}x{texture_width}"
        )
    cell_h = texture_height // GRID_ROWS
    cell_w = texture_width // GRID_COLS
    regions = {}
    for part in range(1, PART_COUNT + 1):
        grid_row = (part - 1) // GRID_COLS
        grid_col = (part - 1) % GRID_COLS
        regions[part] = (grid_row * cell_h, grid_col * cell_w, cell_h, cell_w)
    return PartLayout(texture_height, texture_width, regions)


def extract_texture(image: np.ndarray, iuv: IUVMap, layout: PartLayout) -> TextureMap:
    """Sample the visible appearance of ``image`` into the atlas.

    Every foreground pixel writes its color to the texel
    (row0 + round(v*(h-1)), col0 + round(u*(w-1))) of its part's cell.
    Texels hit by several pixels store the arithmetic mean of all
    contributors. Texel addresses and the accumulation run in double
    precision; means are cast to float32 at the end. Rounding is
    nearest-texel with ties to even.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InputError("image must have shape (H, W, 3)")
    if image.shape[:2] != iuv.shape:
        raise InputError(
            f"image {image.shape[:2]} and IUV map {iuv.shape} must share H x W"
        )

    ha, wa = layout.atlas_height, layout.atlas_width
    acc = np.zeros((ha * wa, 3), dtype=np.float64)
    counts = np.zeros(ha * wa, dtype=np.int64)

    fg = iuv.foreground()
    if fg.any():
        parts = iuv.part_index[fg].astype(np.int64)
        u = iuv.u[fg].astype(np.float64)
        v = iuv.v[fg].astype(np.float64)
        colors = image[fg].astype(np.float64)

        row0 = np.empty(PART_COUNT + 1, dtype=np.int64)
        col0 = np.empty(PART_COUNT + 1, dtype=np.int64)
        cell_h = np.empty(PART_COUNT + 1, dtype=np.int64)
        cell_w = np.empty(PART_COUNT + 1, dtype=np.int64)
        for part, (r0, c0, h, w) in layout.regions.items():
            row0[part], col0[part], cell_h[part], cell_w[part] = r0, c0, h, w

        tex_row = row0[parts] + np.rint(v * (cell_h[parts] - 1)).astype(np.int64)
        tex_col = col0[parts] + np.rint(u * (cell_w[parts] - 1)).astype(np.int64)
        flat = tex_row * wa + tex_col
        np.add.at(acc, flat, colors)
        np.add.at(counts, flat, 1)

    valid = counts > 0
    means = np.zeros_like(acc)
    np.divide(acc, counts[:, None], out=means, where=valid[:, None])
    return TextureMap(
        colors=means.reshape(ha, wa, 3).astype(np.float32),
        valid=valid.reshape(ha, wa),
    )


def compose_hybrid(base: TextureMap, donor: TextureMap, parts, layout: PartLayout) -> TextureMap:
    """Replace the cells of ``parts`` in ``base`` with the donor's texels.

    Inside the selected cells the result equals the donor (colors and
    validity); everywhere else it equals the base.
    """
    if base.shape != donor.shape:
        raise InputError(f"base {base.shape} and donor {donor.shape} atlases differ")
    if base.shape != (layout.atlas_height, layout.atlas_width):
        raise InputError("atlas dimensions do not match the layout")
    parts = set(parts)
    unknown = parts - ALL_PARTS
    if unknown:
        raise InputError(f"unknown part ids: {sorted(unknown)}")

    colors = base.colors.copy()
    valid = base.valid.copy()
    for part in sorted(parts):
        r0, c0, h, w = layout.regions[part]
        colors[r0:r0 + h, c0:c0 + w] = donor.colors[r0:r0 + h, c0:c0 + w]
        valid[r0:r0 + h, c0:c0 + w] = donor.valid[r0:r0 + h, c0:c0 + w]
    return TextureMap(colors=colors, valid=valid)


def part_bbox(iuv: IUVMap, parts):
    """Tight image-space bounding box over pixels of the given parts.

    Returns (row0, col0, height, width), or None when no pixel matches.
    """
    parts = set(parts)
    mask = np.isin(iuv.part_index, sorted(parts))
    if not mask.any():
        return None
    rows, cols = np.nonzero(mask)
    r0, c0 = int(rows.min()), int(cols.min())
    return (r0, c0, int(rows.max()) - r0 + 1, int(cols.max()) - c0 + 1)


def pose_channels(iuv: IUVMap) -> np.ndarray:
    """Render an IUV map as the 3-channel float grid fed to the pose encoder.

    Channel 0 is part_index / 24, channels 1 and 2 are u and v. All three
    channels are zero at background pixels.
    """
    fg = iuv.foreground()
    out = np.zeros(iuv.shape + (3,), dtype=np.float32)
    out[:, :, 0] = iuv.part_index.astype(np.float32) / PART_COUNT
    out[:, :, 1] = np.where(fg, iuv.u, 0.0)
    out[:, :, 2] = np.where(fg, iuv.v, 0.0)
    return out
