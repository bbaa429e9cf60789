import math

import numpy as np
import pytest
import torch
from torch import nn

from stylepose.errors import ConfigurationError, InputError
from stylepose.losses import (
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
    save_feature_net,
    total_loss,
)
from stylepose.networks import build_networks

from helpers import finite_difference_check, tiny_arch

LN2 = math.log(2.0)


class TestLossWeights:
    def test_defaults_are_one(self):
        w = LossWeights()
        assert w.lambda_l1 == w.lambda_vgg == w.lambda_face == 1.0
        assert w.lambda_gan == w.lambda_patch == 1.0

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigurationError):
            LossWeights(lambda_gan=-0.1)

    def test_zero_weights_allowed(self):
        LossWeights(lambda_l1=0.0, lambda_patch=0.0)


class TestL1:
    def test_hand_computed(self):
        gen = torch.tensor([[0.0, 1.0], [0.5, 0.5]])
        gt = torch.tensor([[1.0, 1.0], [0.0, 0.5]])
        assert torch.isclose(l1_loss(gen, gt), torch.tensor(0.375))

    def test_identical_is_zero(self):
        x = torch.rand(2, 3, 8, 8)
        assert l1_loss(x, x).item() == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            l1_loss(torch.zeros(3, 4, 4), torch.zeros(3, 4, 5))


class TestPerceptual:
    def test_identity_extractor_reduces_to_l1(self):
        # with p(x) = [x] the layer sum collapses to plain mean abs error
        gen = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(0))
        gt = torch.rand(2, 3, 8, 8, generator=torch.Generator().manual_seed(1))
        identity = lambda x: [x]
        assert torch.equal(perceptual_loss(identity, gen, gt), l1_loss(gen, gt))

    def test_identical_inputs_zero(self):
        stack = ConvFeatureStack(channels=(4, 8))
        x = torch.rand(1, 3, 16, 16)
        assert perceptual_loss(stack, x, x).item() == 0.0

    def test_layer_sum(self):
        stack = ConvFeatureStack(channels=(4, 8))
        gen = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(2))
        gt = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(3))
        expect = sum((fg - ft).abs().mean() for fg, ft in zip(stack(gen), stack(gt)))
        assert torch.isclose(perceptual_loss(stack, gen, gt), expect)

    def test_gradient_wrt_input(self):
        stack = ConvFeatureStack(channels=(4, 8)).double()
        gt = torch.rand(1, 3, 16, 16, dtype=torch.float64,
                        generator=torch.Generator().manual_seed(4))
        gen = torch.rand(1, 3, 16, 16, dtype=torch.float64,
                         generator=torch.Generator().manual_seed(5))
        gen.requires_grad_(True)
        finite_difference_check(
            lambda: perceptual_loss(stack, gen, gt),
            [gen],
            np.random.default_rng(11),
        )

    def test_frozen(self):
        stack = ConvFeatureStack()
        assert all(not p.requires_grad for p in stack.parameters())


class TestFaceIdentity:
    def setup_method(self):
        self.embedder = ConvEmbedder(input_size=32, channels=(4, 8), embed_dim=8)

    def test_absent_box_skipped(self):
        x = torch.rand(3, 16, 16)
        loss, skipped = face_identity_loss(self.embedder, x, x, None)
        assert skipped and loss.item() == 0.0

    def test_degenerate_box_skipped(self):
        x = torch.rand(3, 16, 16)
        loss, skipped = face_identity_loss(self.embedder, x, x, (2, 2, 0, 5))
        assert skipped and loss.item() == 0.0

    def test_identical_images_zero(self):
        x = torch.rand(3, 16, 16)
        loss, skipped = face_identity_loss(self.embedder, x, x, (2, 3, 8, 9))
        assert not skipped
        assert loss.item() == 0.0

    def test_different_images_positive(self):
        g = torch.Generator().manual_seed(6)
        a = torch.rand(3, 16, 16, generator=g)
        b = torch.rand(3, 16, 16, generator=g)
        loss, skipped = face_identity_loss(self.embedder, a, b, (0, 0, 16, 16))
        assert not skipped and loss.item() > 0.0

    def test_out_of_bounds_box(self):
        x = torch.rand(3, 16, 16)
        with pytest.raises(InputError):
            face_identity_loss(self.embedder, x, x, (10, 10, 8, 8))

    def test_gradient_wrt_input(self):
        emb = ConvEmbedder(input_size=16, channels=(4,), embed_dim=4).double()
        g = torch.Generator().manual_seed(7)
        gt = torch.rand(3, 16, 16, dtype=torch.float64, generator=g)
        gen = torch.rand(3, 16, 16, dtype=torch.float64, generator=g)
        gen.requires_grad_(True)
        finite_difference_check(
            lambda: face_identity_loss(emb, gen, gt, (2, 2, 10, 11))[0],
            [gen],
            np.random.default_rng(12),
        )


class TestGanLosses:
    def test_zero_logits_closed_form(self):
        zeros = torch.zeros(4)
        g, d = gan_losses(zeros, zeros)
        assert math.isclose(g.item(), LN2, rel_tol=1e-6)
        assert math.isclose(d.item(), 2 * LN2, rel_tol=1e-6)

    def test_scalar_closed_form(self):
        real = torch.tensor([1.5])
        fake = torch.tensor([-0.5])
        g, d = gan_losses(real, fake)
        sp = lambda v: math.log1p(math.exp(v))
        assert math.isclose(g.item(), sp(0.5), rel_tol=1e-6)
        assert math.isclose(d.item(), sp(-0.5) + sp(-1.5), rel_tol=1e-6)

    def test_confident_discriminator_lowers_d_loss(self):
        sure = gan_losses(torch.tensor([5.0]), torch.tensor([-5.0]))[1]
        unsure = gan_losses(torch.tensor([0.0]), torch.tensor([0.0]))[1]
        assert sure.item() < unsure.item()


class _PixelSum(nn.Module):
    def forward(self, x):
        return x.flatten(1).sum(dim=1)


class TestR1:
    def test_constant_discriminator_zero(self):
        class Const(nn.Module):
            def forward(self, x):
                return x.new_ones(x.shape[0]) * 3.0 + x.sum() * 0.0

        penalty = r1_penalty(Const(), torch.rand(2, 3, 8, 8), gamma=1.0)
        assert penalty.item() == pytest.approx(0.0, abs=1e-12)

    def test_pixel_sum_closed_form(self):
        # d(image) = sum of entries has unit gradient everywhere, so the
        # penalty is gamma/2 times the element count of one image
        x = torch.rand(3, 3, 4, 5)
        penalty = r1_penalty(_PixelSum(), x, gamma=2.0)
        assert penalty.item() == pytest.approx(3 * 4 * 5, rel=1e-6)

    def test_gamma_scaling(self):
        d = build_networks(tiny_arch(), seed=8).discriminator
        x = torch.rand(2, 3, 16, 16, generator=torch.Generator().manual_seed(8))
        p1 = r1_penalty(d, x, gamma=1.0).item()
        p4 = r1_penalty(d, x, gamma=4.0).item()
        assert p4 == pytest.approx(4 * p1, rel=1e-6)

    def test_gradient_wrt_discriminator_params(self):
        d = build_networks(tiny_arch(), seed=9,
                           dtype=torch.float64).discriminator
        x = torch.rand(2, 3, 16, 16, dtype=torch.float64,
                       generator=torch.Generator().manual_seed(9))
        params = [p for p in d.parameters() if p.requires_grad]
        finite_difference_check(
            lambda: r1_penalty(d, x, gamma=1.0),
            params,
            np.random.default_rng(13),
            h=1e-4,
        )


class TestCropBoxes:
    def test_bounds(self):
        rng = np.random.default_rng(0)
        for r0, c0, side in sample_crop_boxes(rng, (64, 64), 200):
            assert 8 <= side <= 16
            assert 0 <= r0 <= 64 - side
            assert 0 <= c0 <= 64 - side

    def test_side_range_covered(self):
        rng = np.random.default_rng(1)
        sides = {side for _, _, side in sample_crop_boxes(rng, (64, 64), 500)}
        assert sides == set(range(8, 17))

    def test_deterministic(self):
        a = sample_crop_boxes(np.random.default_rng(2), (32, 32), 10)
        b = sample_crop_boxes(np.random.default_rng(2), (32, 32), 10)
        assert a == b

    def test_too_small_image(self):
        with pytest.raises(ConfigurationError):
            sample_crop_boxes(np.random.default_rng(0), (6, 6), 1)

    def test_extract_crops_shape(self):
        image = torch.rand(3, 32, 32)
        boxes = sample_crop_boxes(np.random.default_rng(3), (32, 32), 5)
        crops = extract_crops(image, boxes, 8)
        assert crops.shape == (5, 3, 8, 8)

    def test_extract_full_image_crop(self):
        image = torch.rand(3, 8, 8)
        crops = extract_crops(image, [(0, 0, 8)], 8)
        assert torch.allclose(crops[0], image)


class TestPatchCooccurrence:
    def setup_method(self):
        self.arch = tiny_arch()
        self.dpatch = build_networks(self.arch, seed=20).patch_discriminator
        g = torch.Generator().manual_seed(20)
        self.gen = torch.rand(3, 16, 16, generator=g)
        self.ref = torch.rand(3, 16, 16, generator=g)

    def test_zero_head_gives_log2(self):
        # untrained head zeroed out scores every crop 0, so both sides
        # reduce to softplus(0) sums: ln 2 and 2 ln 2
        with torch.no_grad():
            self.dpatch.head2.weight.zero_()
            self.dpatch.head2.bias.zero_()
        g_term, d_term = patch_cooccurrence_loss(
            self.dpatch, self.gen, self.ref, np.random.default_rng(4)
        )
        assert g_term.item() == pytest.approx(LN2, rel=1e-6)
        assert d_term.item() == pytest.approx(2 * LN2, rel=1e-6)

    def test_deterministic_in_rng_state(self):
        a = patch_cooccurrence_loss(self.dpatch, self.gen, self.ref,
                                    np.random.default_rng(5))
        b = patch_cooccurrence_loss(self.dpatch, self.gen, self.ref,
                                    np.random.default_rng(5))
        assert a[0].item() == b[0].item() and a[1].item() == b[1].item()

    def test_seed_changes_values(self):
        a = patch_cooccurrence_loss(self.dpatch, self.gen, self.ref,
                                    np.random.default_rng(5))
        b = patch_cooccurrence_loss(self.dpatch, self.gen, self.ref,
                                    np.random.default_rng(6))
        assert a[0].item() != b[0].item()

    def test_crop_counts(self):
        seen = []
        original = self.dpatch.forward

        def spy(crops, refs):
            seen.append((crops.shape[0], refs.shape[0]))
            return original(crops, refs)

        self.dpatch.forward = spy
        patch_cooccurrence_loss(self.dpatch, self.gen, self.ref,
                                np.random.default_rng(7), n_crop=6, n_ref=3)
        assert seen == [(6, 3), (6, 3)]

    def test_too_small_image(self):
        small = torch.rand(3, 4, 4)
        with pytest.raises(ConfigurationError):
            patch_cooccurrence_loss(self.dpatch, small, small,
                                    np.random.default_rng(8))

    def test_gradient_wrt_generated_image(self):
        dpatch = build_networks(self.arch, seed=22,
                                dtype=torch.float64).patch_discriminator
        gen = self.gen.double().clone().requires_grad_(True)
        ref = self.ref.double()
        finite_difference_check(
            lambda: patch_cooccurrence_loss(dpatch, gen, ref,
                                            np.random.default_rng(9))[0],
            [gen],
            np.random.default_rng(14),
        )

    def test_gradient_wrt_dpatch_params(self):
        dpatch = build_networks(self.arch, seed=22,
                                dtype=torch.float64).patch_discriminator
        gen = self.gen.double()
        ref = self.ref.double()
        params = [p for p in dpatch.parameters() if p.requires_grad]
        finite_difference_check(
            lambda: patch_cooccurrence_loss(dpatch, gen, ref,
                                            np.random.default_rng(10))[1],
            params,
            np.random.default_rng(15),
        )


class TestTotalLoss:
    @staticmethod
    def _terms(base):
        return {
            "l1": torch.tensor(base + 0.1),
            "perceptual": torch.tensor(base + 0.2),
            "face": torch.tensor(base + 0.3),
            "gan": torch.tensor(base + 0.4),
        }

    def test_breakdown_sums_to_total(self):
        weights = LossWeights(lambda_l1=0.5, lambda_vgg=2.0, lambda_face=0.25,
                              lambda_gan=1.5, lambda_patch=3.0)
        total, parts = total_loss(weights, self._terms(0.0), self._terms(1.0),
                                  torch.tensor(0.7))
        assert total.item() == pytest.approx(
            sum(v.item() for v in parts.values()), rel=1e-6
        )
        assert set(parts) == {
            "self_l1", "self_perceptual", "self_face", "self_gan",
            "transfer_l1", "transfer_perceptual", "transfer_face",
            "transfer_gan", "patch",
        }

    def test_weight_linearity(self):
        base = LossWeights()
        doubled = LossWeights(lambda_vgg=2.0)
        t1, p1 = total_loss(base, self._terms(0.0), self._terms(1.0),
                            torch.tensor(0.7))
        t2, p2 = total_loss(doubled, self._terms(0.0), self._terms(1.0),
                            torch.tensor(0.7))
        gap = (p1["self_perceptual"] + p1["transfer_perceptual"]).item()
        assert t2.item() == pytest.approx(t1.item() + gap, rel=1e-6)

    def test_zero_weights_zero_total(self):
        weights = LossWeights(lambda_l1=0.0, lambda_vgg=0.0, lambda_face=0.0,
                              lambda_gan=0.0, lambda_patch=0.0)
        total, _ = total_loss(weights, self._terms(0.0), self._terms(1.0),
                              torch.tensor(0.7))
        assert total.item() == 0.0

    def test_patch_applied_once(self):
        weights = LossWeights(lambda_l1=0.0, lambda_vgg=0.0, lambda_face=0.0,
                              lambda_gan=0.0, lambda_patch=2.0)
        total, parts = total_loss(weights, self._terms(0.0), self._terms(1.0),
                                  torch.tensor(0.7))
        assert total.item() == pytest.approx(1.4, rel=1e-6)
        assert parts["patch"].item() == pytest.approx(1.4, rel=1e-6)


class TestFeatureNetIO:
    def test_stack_round_trip(self, tmp_path):
        stack = ConvFeatureStack(channels=(4, 8), seed=33)
        path = tmp_path / "stack.bin"
        save_feature_net(stack, path)
        loaded = load_feature_net(path)
        x = torch.rand(1, 3, 16, 16, generator=torch.Generator().manual_seed(21))
        for a, b in zip(stack(x), loaded(x)):
            assert torch.equal(a, b)

    def test_embedder_round_trip(self, tmp_path):
        emb = ConvEmbedder(input_size=16, channels=(4,), embed_dim=4, seed=34)
        path = tmp_path / "emb.bin"
        save_feature_net(emb, path)
        loaded = load_feature_net(path)
        x = torch.rand(2, 3, 16, 16, generator=torch.Generator().manual_seed(22))
        assert torch.equal(emb(x), loaded(x))
        assert loaded.input_size == 16

    def test_loaded_net_frozen(self, tmp_path):
        emb = ConvEmbedder(input_size=16, channels=(4,), embed_dim=4)
        path = tmp_path / "emb.bin"
        save_feature_net(emb, path)
        loaded = load_feature_net(path)
        assert all(not p.requires_grad for p in loaded.parameters())

    def test_same_seed_same_net(self):
        a = ConvFeatureStack(channels=(4, 8), seed=1)
        b = ConvFeatureStack(channels=(4, 8), seed=1)
        x = torch.rand(1, 3, 16, 16)
        for fa, fb in zip(a(x), b(x)):
            assert torch.equal(fa, fb)
