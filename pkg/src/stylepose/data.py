"""Corpus ingestion: manifests of (person, image, IUV) assets, sample
loading with optional texture caching, and training-pair sampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .atlas import IUVMap, TextureMap, build_part_layout, extract_texture
from .errors import IngestionError, SamplingError
from .pngio import load_image, load_iuv, load_texture_map, save_texture_map


@dataclass(frozen=True)
class ManifestEntry:
    person_id: str
    image_path: str
    iuv_path: str


@dataclass
class Manifest:
    """Entries in file order plus an index from person id to positions.

    Relative asset paths are resolved against ``root`` (the directory the
    manifest file lives in).
    """

    entries: list
    index: dict
    root: Path

    def __len__(self):
        return len(self.entries)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p


def load_manifest(path) -> Manifest:
    """Parse a TSV manifest: ``person_id<TAB>image_path<TAB>iuv_path``."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"manifest not found: {path}")
    entries = []
    index = {}
    seen = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3 or not all(f.strip() for f in fields):
            raise IngestionError(
                f"{path}:{lineno}: expected person_id<TAB>image_path<TAB>iuv_path, "
                f"got {line!r}"
            )
        person_id, image_path, iuv_path = (f.strip() for f in fields)
        key = (person_id, image_path)
        if key in seen:
            raise IngestionError(
                f"{path}:{lineno}: duplicate entry for person {person_id!r} "
                f"and image {image_path!r}"
            )
        seen.add(key)
        index.setdefault(person_id, []).append(len(entries))
        entries.append(ManifestEntry(person_id, image_path, iuv_path))
    return Manifest(entries=entries, index=index, root=path.parent)


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"{e.person_id}\t{e.image_path}\t{e.iuv_path}\n" for e in manifest.entries
    ]
    path.write_text("".join(lines), encoding="utf-8")


def eligible_pair_identities(manifest: Manifest) -> list:
    """Person ids with at least two entries, in first-appearance order."""
    return [pid for pid, positions in manifest.index.items() if len(positions) >= 2]


def choose_pair_positions(manifest: Manifest, rng: np.random.Generator):
    """Pick (source, target) entry positions of one person, distinct poses.

    Uniform over eligible identities, then uniform over ordered pairs of
    distinct positions. Fully determined by the rng state.
    """
    eligible = eligible_pair_identities(manifest)
    if not eligible:
        raise SamplingError("no person has two or more entries; cannot sample pairs")
    person = eligible[int(rng.integers(len(eligible)))]
    positions = manifest.index[person]
    i = int(rng.integers(len(positions)))
    j = int(rng.integers(len(positions) - 1))
    if j >= i:
        j += 1
    return positions[i], positions[j]


def choose_single_position(manifest: Manifest, rng: np.random.Generator) -> int:
    if not manifest.entries:
        raise SamplingError("manifest is empty; cannot sample")
    return int(rng.integers(len(manifest.entries)))


@dataclass
class Sample:
    person_id: str
    image: np.ndarray
    pose: IUVMap
    appearance: TextureMap


def _resize_bilinear(grid: np.ndarray, size: int) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(grid, dtype=np.float32))
    t = t.permute(2, 0, 1).unsqueeze(0)
    with torch.no_grad():
        out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out.squeeze(0).permute(1, 2, 0).contiguous().numpy()


def _resize_nearest(grid: np.ndarray, size: int) -> np.ndarray:
    t = torch.from_numpy(grid.astype(np.float32))[None, None]
    with torch.no_grad():
        out = F.interpolate(t, size=(size, size), mode="nearest")
    return out[0, 0].numpy()


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    if image.shape[:2] == (size, size):
        return image
    return _resize_bilinear(image, size)


def resize_iuv(iuv: IUVMap, size: int) -> IUVMap:
    """Nearest-neighbor for the discrete part labels, bilinear for u/v."""
    if iuv.shape == (size, size):
        return iuv
    part = _resize_nearest(iuv.part_index.astype(np.float32), size)
    uv = _resize_bilinear(np.stack([iuv.u, iuv.v], axis=2), size)
    return IUVMap(
        part_index=np.rint(part).astype(iuv.part_index.dtype),
        u=uv[:, :, 0],
        v=uv[:, :, 1],
    )


class SampleLoader:
    """Load manifest entries as training samples at a fixed working size.

    Appearance atlases are extracted on load; pass ``cache_dir`` to store
    them as PNG pairs under ``<cache>/<person_id>/<image_stem>.tex.png``.
    """

    def __init__(self, manifest: Manifest, image_size: int, texture_size: int,
                 cache_dir=None):
        self.manifest = manifest
        self.image_size = int(image_size)
        self.texture_size = int(texture_size)
        self.layout = build_part_layout(self.texture_size, self.texture_size)
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None

    def _cache_paths(self, entry: ManifestEntry):
        stem = Path(entry.image_path).stem
        base = self.cache_dir / entry.person_id
        return base / f"{stem}.tex.png", base / f"{stem}.mask.png"

    def _load_texture(self, entry: ManifestEntry, image, iuv) -> TextureMap:
        if self.cache_dir is not None:
            tex_path, mask_path = self._cache_paths(entry)
            if tex_path.exists() and mask_path.exists():
                cached = load_texture_map(tex_path, mask_path)
                if cached.shape == (self.texture_size, self.texture_size):
                    return cached
        texture = extract_texture(image, iuv, self.layout)
        if self.cache_dir is not None:
            tex_path, mask_path = self._cache_paths(entry)
            save_texture_map(texture, tex_path, mask_path)
        return texture

    def load_position(self, position: int) -> Sample:
        entry = self.manifest.entries[position]
        image = resize_image(load_image(self.manifest.resolve(entry.image_path)),
                             self.image_size)
        iuv = resize_iuv(load_iuv(self.manifest.resolve(entry.iuv_path)),
                         self.image_size)
        texture = self._load_texture(entry, image, iuv)
        return Sample(person_id=entry.person_id, image=image, pose=iuv,
                      appearance=texture)

    def sample_pair(self, rng: np.random.Generator):
        i, j = choose_pair_positions(self.manifest, rng)
        return self.load_position(i), self.load_position(j)

    def sample_single(self, rng: np.random.Generator) -> Sample:
        return self.load_position(choose_single_position(self.manifest, rng))
