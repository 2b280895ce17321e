"""Small shared pieces for the trainable modules."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn

__all__ = [
    "TrainingError",
    "seed_everything",
    "state_to_numpy",
    "load_state_from_numpy",
    "timestep_embedding",
    "window_normalize",
]


class TrainingError(RuntimeError):
    """Raised when a training loop diverges. Carries the last good state."""

    def __init__(self, message: str, last_good_state: dict | None = None):
        super().__init__(message)
        self.last_good_state = last_good_state


def seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def state_to_numpy(module: nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_state_from_numpy(
    module: nn.Module, tensors: dict[str, np.ndarray], prefix: str = ""
) -> None:
    state = {
        k[len(prefix) :]: torch.as_tensor(v)
        for k, v in tensors.items()
        if k.startswith(prefix)
    }
    module.load_state_dict(state)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float32, device=t.device) / half
    )
    args = t.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


def window_normalize(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Zero-mean unit-variance normalization over all entries of each sample.

    Makes downstream embeddings invariant to positive rescaling of the input.
    """
    dims = tuple(range(1, x.ndim))
    mean = x.mean(dim=dims, keepdim=True)
    std = x.std(dim=dims, keepdim=True)
    return (x - mean) / (std + eps)
