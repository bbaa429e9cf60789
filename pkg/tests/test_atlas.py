"""Texture atlas tests: layout geometry, extraction vs a brute-force
oracle, hybrid composition identities, and pose-channel rendering."""

import numpy as np
import pytest

from stylepose.atlas import (
    ALL_PARTS,
    ARM_PARTS,
    FOOT_PARTS,
    GARMENT_PARTS,
    HAND_PARTS,
    HEAD_PARTS,
    LEG_PARTS,
    PART_COUNT,
    TORSO_PARTS,
    IUVMap,
    TextureMap,
    build_part_layout,
    compose_hybrid,
    extract_texture,
    part_bbox,
    pose_channels,
)
from stylepose.errors import ConfigurationError, InputError


def extract_texture_oracle(image, iuv, layout):
    """Reference extraction: per-texel contributor lists, means in float64.

    Loops over pixels in row-major order and mirrors the documented texel
    address formula with python-level arithmetic only.
    """
    ha, wa = layout.atlas_height, layout.atlas_width
    contributors = {}
    h_img, w_img = iuv.shape
    for r in range(h_img):
        for c in range(w_img):
            part = int(iuv.part_index[r, c])
            if part == 0:
                continue
            row0, col0, cell_h, cell_w = layout.regions[part]
            tr = row0 + round(float(iuv.v[r, c]) * (cell_h - 1))
            tc = col0 + round(float(iuv.u[r, c]) * (cell_w - 1))
            contributors.setdefault((tr, tc), []).append(
                [float(x) for x in image[r, c]]
            )
    colors = np.zeros((ha, wa, 3), dtype=np.float64)
    valid = np.zeros((ha, wa), dtype=bool)
    for (tr, tc), pixel_list in contributors.items():
        valid[tr, tc] = True
        for ch in range(3):
            colors[tr, tc, ch] = sum(p[ch] for p in pixel_list) / len(pixel_list)
    return colors.astype(np.float32), valid


def random_instance(rng, max_side=16, atlas_min=8, atlas_max=48):
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    image = rng.random((h, w, 3)).astype(np.float32)
    part = rng.integers(0, PART_COUNT + 1, size=(h, w))
    u = rng.random((h, w)).astype(np.float32)
    v = rng.random((h, w)).astype(np.float32)
    iuv = IUVMap(part_index=part, u=u, v=v)
    ha = int(rng.integers(atlas_min, atlas_max + 1))
    wa = int(rng.integers(atlas_min, atlas_max + 1))
    layout = build_part_layout(ha, wa)
    return image, iuv, layout


class TestPartLayout:
    def test_frozen_regions_256(self):
        layout = build_part_layout(256, 256)
        assert layout.region(1) == (0, 0, 64, 42)
        assert layout.region(24) == (192, 210, 64, 42)

    def test_degenerate_grid(self):
        layout = build_part_layout(4, 6)
        for part in range(1, PART_COUNT + 1):
            r0, c0, h, w = layout.region(part)
            assert (h, w) == (1, 1)
            assert (r0, c0) == ((part - 1) // 6, (part - 1) % 6)

    def test_cells_disjoint_and_in_bounds(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            ha = int(rng.integers(4, 64))
            wa = int(rng.integers(6, 64))
            layout = build_part_layout(ha, wa)
            cover = np.zeros((ha, wa), dtype=np.int64)
            for part in range(1, PART_COUNT + 1):
                r0, c0, h, w = layout.region(part)
                assert r0 >= 0 and c0 >= 0
                assert r0 + h <= ha and c0 + w <= wa
                cover[r0:r0 + h, c0:c0 + w] += 1
            assert cover.max() == 1

    def test_too_small_rejected(self):
        with pytest.raises(ConfigurationError):
            build_part_layout(3, 6)
        with pytest.raises(ConfigurationError):
            build_part_layout(4, 5)

    def test_unknown_part_rejected(self):
        layout = build_part_layout(64, 96)
        with pytest.raises(InputError):
            layout.region(0)
        with pytest.raises(InputError):
            layout.region(25)


class TestExtractTexture:
    def test_single_pixel(self):
        layout = build_part_layout(64, 96)
        image = np.array([[[0.25, 0.5, 0.75]]], dtype=np.float32)
        iuv = IUVMap(
            part_index=np.array([[3]]),
            u=np.array([[0.5]], dtype=np.float32),
            v=np.array([[0.5]], dtype=np.float32),
        )
        tex = extract_texture(image, iuv, layout)
        row0, col0, h, w = layout.region(3)
        tr = row0 + round(0.5 * (h - 1))
        tc = col0 + round(0.5 * (w - 1))
        assert tex.valid.sum() == 1
        assert tex.valid[tr, tc]
        np.testing.assert_array_equal(tex.colors[tr, tc], image[0, 0])

    def test_collision_mean(self):
        layout = build_part_layout(8, 12)
        image = np.array([[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]], dtype=np.float32)
        iuv = IUVMap(
            part_index=np.array([[5, 5]]),
            u=np.zeros((1, 2), dtype=np.float32),
            v=np.zeros((1, 2), dtype=np.float32),
        )
        tex = extract_texture(image, iuv, layout)
        r0, c0, _, _ = layout.region(5)
        np.testing.assert_allclose(tex.colors[r0, c0], [0.5, 0.0, 0.5])
        assert tex.valid.sum() == 1

    def test_background_only(self):
        layout = build_part_layout(16, 24)
        image = np.ones((4, 4, 3), dtype=np.float32)
        iuv = IUVMap(
            part_index=np.zeros((4, 4), dtype=np.int64),
            u=np.zeros((4, 4), dtype=np.float32),
            v=np.zeros((4, 4), dtype=np.float32),
        )
        tex = extract_texture(image, iuv, layout)
        assert not tex.valid.any()
        assert not tex.colors.any()

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            image, iuv, layout = random_instance(rng)
            got = extract_texture(image, iuv, layout)
            want_colors, want_valid = extract_texture_oracle(image, iuv, layout)
            np.testing.assert_array_equal(got.valid, want_valid)
            np.testing.assert_array_equal(got.colors, want_colors)

    def test_boundary_uv_values(self):
        # u/v of exactly 0 and 1 must land on the first and last texel.
        layout = build_part_layout(32, 48)
        image = np.zeros((2, 2, 3), dtype=np.float32)
        image[0, 0] = [1.0, 0.0, 0.0]
        image[1, 1] = [0.0, 1.0, 0.0]
        iuv = IUVMap(
            part_index=np.array([[7, 0], [0, 7]]),
            u=np.array([[0.0, 0.0], [0.0, 1.0]], dtype=np.float32),
            v=np.array([[0.0, 0.0], [0.0, 1.0]], dtype=np.float32),
        )
        tex = extract_texture(image, iuv, layout)
        r0, c0, h, w = layout.region(7)
        assert tex.valid[r0, c0]
        assert tex.valid[r0 + h - 1, c0 + w - 1]
        np.testing.assert_array_equal(tex.colors[r0, c0], [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(tex.colors[r0 + h - 1, c0 + w - 1], [0.0, 1.0, 0.0])

    def test_shape_mismatch_rejected(self):
        layout = build_part_layout(16, 24)
        image = np.zeros((4, 5, 3), dtype=np.float32)
        iuv = IUVMap(
            part_index=np.zeros((4, 4), dtype=np.int64),
            u=np.zeros((4, 4), dtype=np.float32),
            v=np.zeros((4, 4), dtype=np.float32),
        )
        with pytest.raises(InputError):
            extract_texture(image, iuv, layout)


class TestComposeHybrid:
    def _random_texture(self, rng, ha, wa):
        return TextureMap(
            colors=rng.random((ha, wa, 3)).astype(np.float32),
            valid=rng.random((ha, wa)) < 0.7,
        )

    def test_self_composition_identity(self):
        rng = np.random.default_rng(7)
        layout = build_part_layout(32, 48)
        tex = self._random_texture(rng, 32, 48)
        for parts in (HEAD_PARTS, GARMENT_PARTS, ALL_PARTS, set()):
            out = compose_hybrid(tex, tex, parts, layout)
            np.testing.assert_array_equal(out.colors, tex.colors)
            np.testing.assert_array_equal(out.valid, tex.valid)

    def test_donor_regions_and_base_elsewhere(self):
        rng = np.random.default_rng(8)
        layout = build_part_layout(32, 48)
        base = self._random_texture(rng, 32, 48)
        donor = self._random_texture(rng, 32, 48)
        parts = {1, 15, 23}
        out = compose_hybrid(base, donor, parts, layout)
        swapped = np.zeros((32, 48), dtype=bool)
        for part in parts:
            r0, c0, h, w = layout.region(part)
            swapped[r0:r0 + h, c0:c0 + w] = True
        np.testing.assert_array_equal(out.colors[swapped], donor.colors[swapped])
        np.testing.assert_array_equal(out.valid[swapped], donor.valid[swapped])
        np.testing.assert_array_equal(out.colors[~swapped], base.colors[~swapped])
        np.testing.assert_array_equal(out.valid[~swapped], base.valid[~swapped])

    def test_idempotent(self):
        rng = np.random.default_rng(9)
        layout = build_part_layout(32, 48)
        base = self._random_texture(rng, 32, 48)
        donor = self._random_texture(rng, 32, 48)
        once = compose_hybrid(base, donor, GARMENT_PARTS, layout)
        twice = compose_hybrid(once, donor, GARMENT_PARTS, layout)
        np.testing.assert_array_equal(once.colors, twice.colors)
        np.testing.assert_array_equal(once.valid, twice.valid)

    def test_unknown_parts_rejected(self):
        layout = build_part_layout(32, 48)
        tex = TextureMap(colors=np.zeros((32, 48, 3)), valid=np.zeros((32, 48), dtype=bool))
        with pytest.raises(InputError):
            compose_hybrid(tex, tex, {0}, layout)
        with pytest.raises(InputError):
            compose_hybrid(tex, tex, {25}, layout)

    def test_size_mismatch_rejected(self):
        layout = build_part_layout(32, 48)
        a = TextureMap(colors=np.zeros((32, 48, 3)), valid=np.zeros((32, 48), dtype=bool))
        b = TextureMap(colors=np.zeros((16, 48, 3)), valid=np.zeros((16, 48), dtype=bool))
        with pytest.raises(InputError):
            compose_hybrid(a, b, {1}, layout)


class TestPartSets:
    def test_partition(self):
        union = TORSO_PARTS | HAND_PARTS | FOOT_PARTS | LEG_PARTS | ARM_PARTS | HEAD_PARTS
        assert union == ALL_PARTS
        total = sum(len(s) for s in
                    (TORSO_PARTS, HAND_PARTS, FOOT_PARTS, LEG_PARTS, ARM_PARTS, HEAD_PARTS))
        assert total == PART_COUNT

    def test_garment_set(self):
        assert GARMENT_PARTS == ALL_PARTS - HEAD_PARTS - HAND_PARTS


class TestPartBbox:
    def test_known_mask(self):
        part = np.zeros((6, 8), dtype=np.int64)
        part[1, 2] = 23
        part[3, 5] = 24
        iuv = IUVMap(part_index=part,
                     u=np.zeros((6, 8), dtype=np.float32),
                     v=np.zeros((6, 8), dtype=np.float32))
        assert part_bbox(iuv, HEAD_PARTS) == (1, 2, 3, 4)
        assert part_bbox(iuv, {23}) == (1, 2, 1, 1)
        assert part_bbox(iuv, {5}) is None

    def test_full_frame(self):
        part = np.full((4, 4), 1, dtype=np.int64)
        iuv = IUVMap(part_index=part,
                     u=np.zeros((4, 4), dtype=np.float32),
                     v=np.zeros((4, 4), dtype=np.float32))
        assert part_bbox(iuv, ALL_PARTS) == (0, 0, 4, 4)


class TestPoseChannels:
    def test_values_and_background(self):
        part = np.array([[0, 12], [24, 0]], dtype=np.int64)
        u = np.array([[0.9, 0.25], [0.5, 0.9]], dtype=np.float32)
        v = np.array([[0.9, 0.75], [0.125, 0.9]], dtype=np.float32)
        grid = pose_channels(IUVMap(part_index=part, u=u, v=v))
        assert grid.shape == (2, 2, 3)
        assert grid.dtype == np.float32
        np.testing.assert_array_equal(grid[0, 0], [0.0, 0.0, 0.0])
        np.testing.assert_array_equal(grid[1, 1], [0.0, 0.0, 0.0])
        np.testing.assert_allclose(grid[0, 1], [12 / 24, 0.25, 0.75])
        np.testing.assert_allclose(grid[1, 0], [24 / 24, 0.5, 0.125])


class TestIUVValidation:
    def test_bad_part_values(self):
        with pytest.raises(InputError):
            IUVMap(part_index=np.array([[25]]),
                   u=np.zeros((1, 1)), v=np.zeros((1, 1)))
        with pytest.raises(InputError):
            IUVMap(part_index=np.array([[-1]]),
                   u=np.zeros((1, 1)), v=np.zeros((1, 1)))

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            IUVMap(part_index=np.zeros((2, 2), dtype=np.int64),
                   u=np.zeros((2, 3)), v=np.zeros((2, 2)))

    def test_invalid_texels_zeroed(self):
        colors = np.ones((4, 6, 3), dtype=np.float32)
        valid = np.zeros((4, 6), dtype=bool)
        valid[0, 0] = True
        tex = TextureMap(colors=colors, valid=valid)
        assert tex.colors[0, 0].sum() == 3.0
        assert tex.colors[1:].sum() == 0.0
