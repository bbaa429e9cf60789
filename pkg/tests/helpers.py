"""Shared test utilities: tiny architectures and the central
finite-difference gradient oracle."""

import numpy as np
import torch

from stylepose.networks import ArchConfig


def tiny_arch(**overrides) -> ArchConfig:
    """Smallest architecture the shape contracts allow; cheap enough for
    double-precision finite differences."""
    kw = dict(image_size=16, texture_size=16, c_e=8, d_z=8, d_w=8,
              n_map=2, base_channels=4, patch_resolution=8)
    kw.update(overrides)
    return ArchConfig(**kw)


def finite_difference_check(loss_fn, params, rng, n_probes=5, h=1e-5,
                            rel_tol=1e-3):
    """Compare autograd against central differences at random parameter
    probes. ``loss_fn`` must be a pure function of ``params`` returning a
    scalar tensor; everything must be double precision."""
    params = [p for p in params if p.requires_grad]
    loss = loss_fn()
    assert loss.dtype == torch.float64, "finite differences need float64"
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    reachable = [(p, g) for p, g in zip(params, grads) if g is not None]
    assert reachable, "no parameter receives gradient"
    for _ in range(n_probes):
        param, grad = reachable[int(rng.integers(len(reachable)))]
        idx = tuple(int(rng.integers(s)) for s in param.shape)
        with torch.no_grad():
            origin = param[idx].item()
            param[idx] = origin + h
            loss_plus = loss_fn().item()
            param[idx] = origin - h
            loss_minus = loss_fn().item()
            param[idx] = origin
        fd = (loss_plus - loss_minus) / (2.0 * h)
        an = grad[idx].item()
        denom = max(abs(fd), abs(an), 1e-8)
        assert abs(fd - an) / denom < rel_tol, (
            f"finite difference {fd:.6e} vs autograd {an:.6e} "
            f"at {tuple(param.shape)}[{idx}]"
        )


def probe_rng(seed=0):
    return np.random.default_rng(seed)
