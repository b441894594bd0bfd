"""Shared test utilities: finite-difference gradient checks and seeded tensors.

The FD harness is the independent oracle for every autograd result in the
suite: central differences with step 1e-5, compared by norm-based relative
error so tolerances are scale-free.
"""

from __future__ import annotations

from typing import Callable

import torch
from torch import Tensor, nn

from netbend.rng import philox

FD_STEP = 1e-5


def rand_tensor(seed: int, shape: tuple[int, ...], lo: float = -1.0, hi: float = 1.0) -> Tensor:
    return torch.from_numpy(philox(seed).uniform(lo, hi, shape))


def randn_tensor(seed: int, shape: tuple[int, ...]) -> Tensor:
    return torch.from_numpy(philox(seed).standard_normal(shape))


def fd_gradient(fn: Callable[[Tensor], Tensor], x: Tensor, step: float = FD_STEP) -> Tensor:
    """Central-difference gradient of a scalar function, entry by entry."""
    base = x.detach().clone()
    flat = base.reshape(-1)
    grad = torch.empty_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + step
            hi = float(fn(base.reshape(x.shape)))
            flat[i] = orig - step
            lo = float(fn(base.reshape(x.shape)))
            flat[i] = orig
            grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(x.shape)


def autograd_gradient(fn: Callable[[Tensor], Tensor], x: Tensor) -> Tensor:
    leaf = x.detach().clone().requires_grad_(True)
    fn(leaf).backward()
    return leaf.grad.detach()


def relative_error(a: Tensor, b: Tensor) -> float:
    denom = max(float(b.reshape(-1).norm()), 1e-12)
    return float((a - b).reshape(-1).norm()) / denom


def gradient_error(fn: Callable[[Tensor], Tensor], x: Tensor, step: float = FD_STEP) -> float:
    """Relative error between autograd and finite differences, w.r.t. the input."""
    return relative_error(autograd_gradient(fn, x), fd_gradient(fn, x, step))


def parameter_gradient_error(
    module: nn.Module, scalar_fn: Callable[[], Tensor], step: float = FD_STEP
) -> float:
    """Same check, but w.r.t. every parameter of `module`.

    `scalar_fn` must recompute the forward pass on each call; parameters are
    perturbed in place for the difference quotients and restored afterwards.
    """
    params = list(module.parameters())
    auto = torch.autograd.grad(scalar_fn(), params)
    fd_parts = []
    with torch.no_grad():
        for param in params:
            flat = param.reshape(-1)
            grad = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + step
                hi = float(scalar_fn())
                flat[i] = orig - step
                lo = float(scalar_fn())
                flat[i] = orig
                grad[i] = (hi - lo) / (2.0 * step)
            fd_parts.append(grad)
    auto_cat = torch.cat([g.reshape(-1) for g in auto])
    fd_cat = torch.cat(fd_parts)
    return relative_error(auto_cat, fd_cat)


def state_snapshot(module: nn.Module) -> dict[str, Tensor]:
    """Deep copy of all parameters and buffers, for bitwise comparisons."""
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def states_equal(a: dict[str, Tensor], b: dict[str, Tensor]) -> bool:
    return set(a) == set(b) and all(torch.equal(a[k], b[k]) for k in a)
