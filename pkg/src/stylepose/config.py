"""Flat key=value run configuration.

Keys are namespaced by section prefix: ``train.`` for the optimization
loop, ``arch.`` for network dimensions, ``loss.`` for objective knobs,
and ``paths.`` for file locations. Unknown keys are rejected rather than
ignored so typos fail loudly. Command-line overrides use the same names.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import ConfigurationError
from .losses import LossWeights
from .networks import ArchConfig
from .training import TrainConfig

TRAIN_KEYS = {
    "image_size": int,
    "texture_size": int,
    "batch_size": int,
    "total_steps": int,
    "learning_rate": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "mode": str,
    "seed": int,
    "checkpoint_interval": int,
    "log_interval": int,
}

ARCH_KEYS = {
    "c_e": int,
    "d_z": int,
    "d_w": int,
    "n_map": int,
    "base_channels": int,
    "patch_resolution": int,
}

LOSS_KEYS = {
    "lambda_l1": float,
    "lambda_vgg": float,
    "lambda_face": float,
    "lambda_gan": float,
    "lambda_patch": float,
    "r1_gamma": float,
    "r1_interval": int,
    "n_crop": int,
    "n_ref": int,
    "patch_resolution": int,
}

PATHS_KEYS = {
    "manifest": str,
    "out_dir": str,
    "cache_dir": str,
    "perceptual_weights": str,
    "face_weights": str,
}

SECTIONS = {
    "train": TRAIN_KEYS,
    "arch": ARCH_KEYS,
    "loss": LOSS_KEYS,
    "paths": PATHS_KEYS,
}

CACHE_ENV_VAR = "STYLEPOSE_CACHE"


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse key=value lines into a flat dict; # starts a comment line."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(
                f"{source}:{lineno}: expected key=value, got {raw!r}"
            )
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigurationError(f"{source}:{lineno}: empty key")
        if key in entries:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def read_config_file(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}")
    return parse_config_text(text, source=str(path))


def parse_overrides(tokens) -> dict:
    """Turn ['--train.seed', '3', ...] pairs into a flat entry dict."""
    entries = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--"):
            raise ConfigurationError(f"expected --section.key, got {token!r}")
        key = token[2:]
        if "=" in key:
            key, _, value = key.partition("=")
        else:
            if i + 1 >= len(tokens):
                raise ConfigurationError(f"override {token!r} is missing a value")
            i += 1
            value = tokens[i]
        if key in entries:
            raise ConfigurationError(f"duplicate override {key!r}")
        entries[key] = value
        i += 1
    return entries


def _convert(key: str, value: str, target):
    try:
        return target(value)
    except ValueError:
        raise ConfigurationError(
            f"config key {key!r} expects {target.__name__}, got {value!r}"
        )


def _split_sections(entries: dict) -> dict:
    sections = {name: {} for name in SECTIONS}
    for key, value in entries.items():
        section, _, field_name = key.partition(".")
        if not field_name or section not in SECTIONS:
            raise ConfigurationError(f"unknown config key {key!r}")
        known = SECTIONS[section]
        if field_name not in known:
            raise ConfigurationError(f"unknown config key {key!r}")
        sections[section][field_name] = _convert(key, value, known[field_name])
    return sections


@dataclass
class TrainSetup:
    """A fully resolved training run: behavior config plus file locations."""

    config: TrainConfig
    manifest: str = None
    out_dir: str = None
    cache_dir: str = None
    perceptual_weights: str = None
    face_weights: str = None


def build_train_setup(entries: dict) -> TrainSetup:
    sections = _split_sections(entries)
    train = sections["train"]
    arch_kwargs = sections["arch"]
    loss = dict(sections["loss"])
    paths = sections["paths"]

    loss_patch_res = loss.pop("patch_resolution", None)
    if loss_patch_res is not None:
        existing = arch_kwargs.get("patch_resolution")
        if existing is not None and existing != loss_patch_res:
            raise ConfigurationError(
                "patch_resolution given twice with different values: "
                f"arch={existing}, loss={loss_patch_res}"
            )
        arch_kwargs["patch_resolution"] = loss_patch_res

    weights = LossWeights(**{k: v for k, v in loss.items()
                             if k.startswith("lambda_")})
    train_extra = {k: v for k, v in loss.items() if not k.startswith("lambda_")}

    image_size = train.get("image_size", 64)
    texture_size = train.get("texture_size", 64)
    arch = ArchConfig(image_size=image_size, texture_size=texture_size,
                      **arch_kwargs)
    config = TrainConfig(arch=arch, weights=weights, **train, **train_extra)

    cache_dir = paths.get("cache_dir") or os.environ.get(CACHE_ENV_VAR)
    return TrainSetup(
        config=config,
        manifest=paths.get("manifest"),
        out_dir=paths.get("out_dir"),
        cache_dir=cache_dir,
        perceptual_weights=paths.get("perceptual_weights"),
        face_weights=paths.get("face_weights"),
    )


def load_train_setup(config_path=None, overrides=None) -> TrainSetup:
    entries = read_config_file(config_path) if config_path else {}
    if overrides:
        entries.update(overrides)
    return build_train_setup(entries)
