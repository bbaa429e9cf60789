"""Deterministic synthetic corpus of blocky posed figures.

Each figure is a set of axis-aligned body-part rectangles on a dark
background. A pose is a small vector of limb/body offsets; appearance is
a per-person procedural texture evaluated on the body-surface (u, v)
coordinates, so the same person rendered in two poses has exactly
consistent part textures. Pixel colors and IUV values are quantized to
the 8-bit PNG grid at render time, which makes in-memory renders bitwise
equal to their saved-then-loaded counterparts.
"""

from __future__ import annotations

import math
import os
from pathlib import Path

import numpy as np

from .atlas import IUVMap
from .data import Manifest, ManifestEntry, save_manifest
from .errors import InputError
from .pngio import save_image, save_iuv

BACKGROUND_BYTES = (18, 20, 24)

#: Pose parameters: name -> (low, high) in unit canvas coordinates.
POSE_RANGES = {
    "gx": (-0.01, 0.01),
    "gy": (-0.01, 0.01),
    "arm_dx_l": (-0.04, 0.03),
    "arm_dx_r": (-0.02, 0.04),
    "arm_dy_l": (-0.03, 0.03),
    "arm_dy_r": (-0.03, 0.03),
    "leg_dx_l": (-0.02, 0.0),
    "leg_dx_r": (0.0, 0.02),
}


def sample_pose_params(rng: np.random.Generator) -> dict:
    return {
        name: float(rng.uniform(lo, hi)) for name, (lo, hi) in POSE_RANGES.items()
    }


def interpolate_pose_params(a: dict, b: dict, t: float) -> dict:
    return {name: (1.0 - t) * a[name] + t * b[name] for name in POSE_RANGES}


def part_pixel_rects(pose: dict, size: int) -> dict:
    """Integer pixel rectangle (row0, col0, height, width) per part id.

    Rectangle sizes depend only on ``size`` (never on the pose), so a
    part has an identical pixel footprint in every pose and its texture
    bytes repeat exactly across renders of one person. Limb offsets are
    bounded so the rectangles stay pairwise disjoint and inside the
    canvas for every pose in POSE_RANGES. Four-segment limb strips are
    tiled with shared integer edges, leaving no intra-limb gaps.
    """
    gx, gy = pose["gx"], pose["gy"]
    al, ar = pose["arm_dx_l"], pose["arm_dx_r"]
    dyl, dyr = pose["arm_dy_l"], pose["arm_dy_r"]
    ll, lr = pose["leg_dx_l"], pose["leg_dx_r"]

    def length(span):
        return max(1, int(np.rint(span * size)))

    def origin(coord, extent):
        return min(max(0, int(np.rint(coord * size))), size - extent)

    def block(part, r0, c0, h_span, w_span, rects):
        h, w = length(h_span), length(w_span)
        rects[part] = (origin(r0 + gy, h), origin(c0 + gx, w), h, w)

    def strip(parts, r0, c0, h_span, w_span, rects):
        h, w = length(h_span), length(w_span)
        row0, col0 = origin(r0 + gy, h), origin(c0 + gx, w)
        edges = [int(np.rint(h * k / len(parts))) for k in range(len(parts) + 1)]
        for part, e0, e1 in zip(parts, edges, edges[1:]):
            rects[part] = (row0 + e0, col0, e1 - e0, w)

    def hstrip(parts, r0, c0, h_span, w_span, rects):
        # left/right halves tiled on a shared integer edge
        h, w = length(h_span), length(w_span)
        row0, col0 = origin(r0 + gy, h), origin(c0 + gx, w)
        edges = [int(np.rint(w * k / len(parts))) for k in range(len(parts) + 1)]
        for part, e0, e1 in zip(parts, edges, edges[1:]):
            rects[part] = (row0, col0 + e0, h, e1 - e0)

    rects = {}
    hstrip((23, 24), 0.02, 0.38, 0.16, 0.24, rects)
    hstrip((1, 2), 0.20, 0.34, 0.32, 0.32, rects)
    strip((15, 17, 19, 21), 0.20 + dyl, 0.05 + al, 0.46, 0.22, rects)
    strip((16, 18, 20, 22), 0.20 + dyr, 0.73 + ar, 0.46, 0.22, rects)
    block(3, 0.70 + dyl, 0.08 + al, 0.08, 0.16, rects)
    block(4, 0.70 + dyr, 0.76 + ar, 0.08, 0.16, rects)
    strip((7, 9, 11, 13), 0.54, 0.34 + ll, 0.38, 0.14, rects)
    strip((8, 10, 12, 14), 0.54, 0.52 + lr, 0.38, 0.14, rects)
    block(5, 0.93, 0.34 + ll, 0.06, 0.14, rects)
    block(6, 0.93, 0.52 + lr, 0.06, 0.14, rects)
    return rects


#: Parts of one limb share a base color, like segments of a real limb
#: share skin or sleeve appearance. Keys are part ids, values the part
#: whose color the key borrows.
PART_COLOR_GROUPS = {
    1: 1, 2: 1, 23: 23, 24: 23, 3: 3, 4: 4, 5: 5, 6: 6,
    15: 15, 17: 15, 19: 15, 21: 15,
    16: 16, 18: 16, 20: 16, 22: 16,
    7: 7, 9: 7, 11: 7, 13: 7,
    8: 8, 10: 8, 12: 8, 14: 8,
}


def texture_color(person_seed: int, part: int, u, v) -> np.ndarray:
    """Procedural surface color in [0,1]; broadcast over u/v arrays.

    Depends only on (person_seed, part) and the surface coordinates, so
    renders of the same person agree across poses wherever the same
    (u, v) is visible.
    """
    group = PART_COLOR_GROUPS.get(int(part), int(part))
    grng = np.random.default_rng(np.random.SeedSequence([int(person_seed), group]))
    base = 0.25 + 0.5 * grng.random(3)
    rng = np.random.default_rng(np.random.SeedSequence([int(person_seed), int(part)]))
    # gentle single-cycle shading on a limb-wide color: keeps the image
    # dominated by a few color regions so the corpus stays learnable by
    # a small generator
    amp = 0.03 + 0.03 * rng.random()
    fu = 1
    fv = 1
    phase = 2.0 * math.pi * rng.random()
    shifts = np.array([0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0])

    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    angle = 2.0 * math.pi * (fu * u + fv * v) + phase
    color = base + amp * np.sin(angle[..., None] + shifts)
    return np.clip(color, 0.0, 1.0)


def _quantize_uv(count: int) -> np.ndarray:
    # byte-quantized coordinates, decoded exactly like the PNG loader
    if count <= 1:
        return np.zeros(count, dtype=np.uint8)
    frac = np.arange(count, dtype=np.float64) / (count - 1)
    return np.rint(frac * 255.0).astype(np.uint8)


def render_person(person_seed: int, pose: dict, image_size: int):
    """Render one figure; returns (image float32 (S,S,3), IUVMap).

    Both returned values are already on the 8-bit grid: saving them as
    PNGs and loading them back reproduces them bitwise.
    """
    size = int(image_size)
    if size < 32:
        raise InputError(f"image_size must be at least 32, got {size}")
    image_bytes = np.empty((size, size, 3), dtype=np.uint8)
    image_bytes[:, :] = BACKGROUND_BYTES
    part_grid = np.zeros((size, size), dtype=np.int32)
    u_bytes = np.zeros((size, size), dtype=np.uint8)
    v_bytes = np.zeros((size, size), dtype=np.uint8)

    rects = part_pixel_rects(pose, size)
    for part in sorted(rects):
        pr0, pc0, h, w = rects[part]
        pr1, pc1 = pr0 + h, pc0 + w
        ub = _quantize_uv(w)
        vb = _quantize_uv(h)
        u_grid = np.broadcast_to(ub[None, :].astype(np.float32) / np.float32(255.0), (h, w))
        v_grid = np.broadcast_to((vb[:, None].astype(np.float32) / np.float32(255.0)), (h, w))
        color = texture_color(person_seed, part, u_grid, v_grid)
        image_bytes[pr0:pr1, pc0:pc1] = np.clip(
            np.rint(color * 255.0), 0, 255
        ).astype(np.uint8)
        part_grid[pr0:pr1, pc0:pc1] = part
        u_bytes[pr0:pr1, pc0:pc1] = ub[None, :]
        v_bytes[pr0:pr1, pc0:pc1] = vb[:, None]

    image = image_bytes.astype(np.float32) / np.float32(255.0)
    iuv = IUVMap(
        part_index=part_grid,
        u=u_bytes.astype(np.float32) / np.float32(255.0),
        v=v_bytes.astype(np.float32) / np.float32(255.0),
    )
    return image, iuv


def person_seed_for(corpus_seed: int, person_index: int) -> int:
    return int(corpus_seed) * 100003 + int(person_index)


def build_corpus(out_dir, n_persons: int = 2, images_per_person: int = 4,
                 image_size: int = 64, seed: int = 0) -> Path:
    """Write a posed-figure corpus and its manifest; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for p in range(n_persons):
        person_id = f"person{p:02d}"
        pseed = person_seed_for(seed, p)
        for k in range(images_per_person):
            pose = sample_pose_params(rng)
            image, iuv = render_person(pseed, pose, image_size)
            image_rel = f"{person_id}/img_{k:03d}.png"
            iuv_rel = f"{person_id}/img_{k:03d}_iuv.png"
            save_image(out_dir / image_rel, image)
            save_iuv(out_dir / iuv_rel, iuv)
            entries.append(ManifestEntry(person_id, image_rel, iuv_rel))
    index = {}
    for pos, entry in enumerate(entries):
        index.setdefault(entry.person_id, []).append(pos)
    manifest = Manifest(entries=entries, index=index, root=out_dir)
    manifest_path = out_dir / "manifest.tsv"
    save_manifest(manifest, manifest_path)
    return manifest_path


def build_eval_pairs(manifest: Manifest, out_path) -> Path:
    """Write a transfer-pair list: each person's images chained in a cycle.

    TSV columns: pair_id, source image, source IUV, target image, target
    IUV; paths are written relative to the pair file's own directory so
    the list works from anywhere.
    """
    out_path = Path(out_path)
    out_root = out_path.resolve().parent

    def rel(path):
        return os.path.relpath(Path(manifest.resolve(path)).resolve(), out_root)

    lines = []
    for person_id, positions in manifest.index.items():
        if len(positions) < 2:
            continue
        for k, pos in enumerate(positions):
            src = manifest.entries[pos]
            tgt = manifest.entries[positions[(k + 1) % len(positions)]]
            pair_id = f"{person_id}_{k:02d}"
            lines.append(
                f"{pair_id}\t{rel(src.image_path)}\t{rel(src.iuv_path)}"
                f"\t{rel(tgt.image_path)}\t{rel(tgt.iuv_path)}\n"
            )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("".join(lines), encoding="utf-8")
    return out_path


def build_pose_sequence(out_dir, n_frames: int, image_size: int = 64,
                        seed: int = 0) -> list:
    """Write a smooth IUV pose sequence (no images); returns the paths."""
    if n_frames < 1:
        raise InputError("a pose sequence needs at least one frame")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    start = sample_pose_params(rng)
    end = sample_pose_params(rng)
    paths = []
    for k in range(n_frames):
        t = k / (n_frames - 1) if n_frames > 1 else 0.0
        pose = interpolate_pose_params(start, end, t)
        # person identity is irrelevant: only the IUV is kept
        _, iuv = render_person(0, pose, image_size)
        path = out_dir / f"pose_{k:05d}.png"
        save_iuv(path, iuv)
        paths.append(path)
    return paths
