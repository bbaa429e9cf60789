import numpy as np
import pytest
import torch

from stylepose.atlas import GARMENT_PARTS, HEAD_PARTS, IUVMap, compose_hybrid
from stylepose.data import SampleLoader
from stylepose.errors import CheckpointError, InputError
from stylepose.inference import (
    NoisePolicy,
    TrainedModel,
    garment_transfer,
    head_swap,
    interpolate_styles,
    load_trained_model,
    motion_transfer,
    pose_transfer,
    write_frames,
)
from stylepose.networks import build_networks
from stylepose.training import TrainConfig, build_train_state, save_checkpoint

from helpers import tiny_arch


def tiny_trained_state(seed):
    cfg = TrainConfig(image_size=16, texture_size=16, arch=tiny_arch(),
                      seed=seed, total_steps=0)
    return build_train_state(cfg)


@pytest.fixture(scope="module")
def model():
    return TrainedModel.from_networks(build_networks(tiny_arch(), seed=3))


@pytest.fixture(scope="module")
def noisy_model():
    # fresh init zeroes every noise strength, which would hide the noise
    # policy entirely; give them weight as training would
    nets = build_networks(tiny_arch(), seed=3)
    with torch.no_grad():
        for name, p in nets.generator.named_parameters():
            if name.endswith("noise_strength"):
                p.fill_(0.5)
    return TrainedModel.from_networks(nets)


@pytest.fixture(scope="module")
def samples(corpus_manifest):
    loader = SampleLoader(corpus_manifest, image_size=16, texture_size=16)
    return [loader.load_position(i) for i in (0, 1, 4)]


def blank_pose(size=16):
    zeros = np.zeros((size, size), dtype=np.uint8)
    return IUVMap(part_index=zeros, u=np.zeros((size, size), np.float32),
                  v=np.zeros((size, size), np.float32))


class TestNoisePolicy:
    def test_parse_kinds(self):
        assert NoisePolicy.parse("zero").kind == "zero"
        assert NoisePolicy.parse("fresh").kind == "fresh"
        fixed = NoisePolicy.parse("fixed:42")
        assert fixed.kind == "fixed" and fixed.seed == 42

    def test_parse_default_seed(self):
        assert NoisePolicy.parse("fixed").seed == 0

    def test_bad_kind(self):
        with pytest.raises(InputError):
            NoisePolicy.parse("gaussian")

    def test_seed_on_zero_rejected(self):
        with pytest.raises(InputError):
            NoisePolicy.parse("zero:3")

    def test_bad_seed(self):
        with pytest.raises(InputError):
            NoisePolicy.parse("fixed:lots")


class TestPoseTransfer:
    def test_output_shape_and_range(self, model, samples):
        result = pose_transfer(model, samples[0].appearance, samples[1].pose)
        assert result.image.shape == (16, 16, 3)
        assert result.image.dtype == np.float32
        assert result.image.min() >= 0.0 and result.image.max() <= 1.0

    def test_fixed_noise_repeats(self, model, samples):
        a = pose_transfer(model, samples[0].appearance, samples[1].pose,
                          NoisePolicy("fixed", seed=9))
        b = pose_transfer(model, samples[0].appearance, samples[1].pose,
                          NoisePolicy("fixed", seed=9))
        assert np.array_equal(a.image, b.image)

    def test_fresh_noise_varies(self, noisy_model, samples):
        a = pose_transfer(noisy_model, samples[0].appearance, samples[1].pose,
                          NoisePolicy("fresh"))
        b = pose_transfer(noisy_model, samples[0].appearance, samples[1].pose,
                          NoisePolicy("fresh"))
        assert not np.array_equal(a.image, b.image)

    def test_zero_noise_differs_from_fixed(self, noisy_model, samples):
        zero = pose_transfer(noisy_model, samples[0].appearance,
                             samples[1].pose, NoisePolicy("zero"))
        fixed = pose_transfer(noisy_model, samples[0].appearance,
                              samples[1].pose, NoisePolicy("fixed", seed=9))
        assert not np.array_equal(zero.image, fixed.image)

    def test_degenerate_pose_flagged(self, model, samples):
        result = pose_transfer(model, samples[0].appearance, blank_pose())
        assert result.metadata["degenerate_pose"]
        assert result.image.shape == (16, 16, 3)

    def test_normal_pose_not_flagged(self, model, samples):
        result = pose_transfer(model, samples[0].appearance, samples[1].pose)
        assert not result.metadata["degenerate_pose"]

    def test_wrong_atlas_size(self, model, samples, corpus_manifest):
        loader = SampleLoader(corpus_manifest, image_size=16,
                              texture_size=32)
        big = loader.load_position(0)
        with pytest.raises(InputError):
            pose_transfer(model, big.appearance, samples[1].pose)


class TestCompositionIdentities:
    def test_garment_transfer_equals_composed_pose_transfer(self, model, samples):
        noise = NoisePolicy("fixed", seed=4)
        direct = garment_transfer(model, samples[0].appearance,
                                  samples[2].appearance, samples[1].pose,
                                  noise=noise)
        hybrid = compose_hybrid(samples[0].appearance, samples[2].appearance,
                                GARMENT_PARTS, model.layout())
        via_compose = pose_transfer(model, hybrid, samples[1].pose, noise=noise)
        assert np.array_equal(direct.image, via_compose.image)

    def test_head_swap_is_garment_transfer_on_head(self, model, samples):
        noise = NoisePolicy("fixed", seed=5)
        swapped = head_swap(model, samples[0].appearance,
                            samples[2].appearance, samples[1].pose, noise=noise)
        explicit = garment_transfer(model, samples[0].appearance,
                                    samples[2].appearance, samples[1].pose,
                                    parts=HEAD_PARTS, noise=noise)
        assert np.array_equal(swapped.image, explicit.image)


class TestInterpolation:
    def test_endpoints_bitwise(self, model, samples):
        noise = NoisePolicy("fixed", seed=6)
        results = interpolate_styles(model, samples[0].appearance,
                                     samples[2].appearance, samples[1].pose,
                                     ts=[1.0, 0.5, 0.0], noise=noise)
        pure_a = pose_transfer(model, samples[0].appearance, samples[1].pose,
                               noise=noise)
        pure_b = pose_transfer(model, samples[2].appearance, samples[1].pose,
                               noise=noise)
        assert np.array_equal(results[0].image, pure_a.image)
        assert np.array_equal(results[2].image, pure_b.image)
        assert results[1].metadata["t"] == 0.5

    def test_midpoint_differs_from_endpoints(self, model, samples):
        results = interpolate_styles(model, samples[0].appearance,
                                     samples[2].appearance, samples[1].pose,
                                     ts=[0.0, 0.5, 1.0])
        assert not np.array_equal(results[1].image, results[0].image)
        assert not np.array_equal(results[1].image, results[2].image)

    def test_out_of_range_rejected(self, model, samples):
        for bad in (-0.1, 1.5):
            with pytest.raises(InputError):
                interpolate_styles(model, samples[0].appearance,
                                   samples[2].appearance, samples[1].pose,
                                   ts=[bad])


class TestMotion:
    def test_frames_match_standalone_calls(self, model, samples):
        noise = NoisePolicy("fixed", seed=7)
        poses = [samples[0].pose, samples[1].pose, samples[2].pose]
        frames = motion_transfer(model, samples[0].appearance, poses,
                                 noise=noise)
        assert len(frames) == 3
        for pose, frame in zip(poses, frames):
            alone = pose_transfer(model, samples[0].appearance, pose,
                                  noise=noise)
            assert np.array_equal(frame.image, alone.image)

    def test_empty_sequence_rejected(self, model, samples):
        with pytest.raises(InputError):
            motion_transfer(model, samples[0].appearance, [])

    def test_write_frames(self, model, samples, tmp_path):
        frames = motion_transfer(model, samples[0].appearance,
                                 [samples[1].pose, samples[2].pose])
        paths = write_frames(frames, tmp_path / "motion",
                             pose_sources=["p1.png", "p2.png"])
        assert [p.split("/")[-1] for p in paths] == [
            "frame_00000.png", "frame_00001.png"]
        manifest = (tmp_path / "motion" / "frames.tsv").read_text().splitlines()
        assert manifest[0] == "frame\tfile\tpose_source"
        assert manifest[1] == "0\tframe_00000.png\tp1.png"
        assert len(manifest) == 3

    def test_write_frames_source_mismatch(self, model, samples, tmp_path):
        frames = motion_transfer(model, samples[0].appearance, [samples[1].pose])
        with pytest.raises(InputError):
            write_frames(frames, tmp_path / "motion", pose_sources=["a", "b"])


class TestModelLoading:
    def test_checkpoint_round_trip(self, samples, tmp_path):
        state = tiny_trained_state(seed=11)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, state)
        loaded = load_trained_model(path)
        direct = TrainedModel.from_networks(state.nets)
        noise = NoisePolicy("fixed", seed=8)
        a = pose_transfer(loaded, samples[0].appearance, samples[1].pose, noise)
        b = pose_transfer(direct, samples[0].appearance, samples[1].pose, noise)
        assert np.array_equal(a.image, b.image)
        assert loaded.arch == tiny_arch()

    def test_frozen_after_load(self, tmp_path):
        state = tiny_trained_state(seed=11)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, state)
        loaded = load_trained_model(path)
        assert all(not p.requires_grad
                   for p in loaded.generator.parameters())

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_trained_model(tmp_path / "absent.bin")
