"""Embedding network: ResNet50 trunk, GeM pooling, linear projection.

The final projection is part of the supplied weights; there is no separate
reduction architecture to configure. Networks run in eval mode so batch
statistics never update between calls.
"""

from __future__ import annotations

import os

import torch
import torch.nn.functional as F
import torchvision

from .errors import ExportError


class GeMPool(torch.nn.Module):
    """Generalized-mean pooling over the spatial dimensions.

    p=1 is average pooling; large p approaches max pooling. Activations are
    clamped at ``eps`` so fractional powers stay real.
    """

    def __init__(self, p: float = 3.0, eps: float = 1e-6):
        super().__init__()
        if p < 1.0:
            raise ExportError(f"GeM exponent must be >= 1, got {p}")
        self.p = p
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x.clamp(min=self.eps).pow(self.p).mean(dim=(-2, -1)).pow(1.0 / self.p)


class GlobalDescriptorNet(torch.nn.Module):
    """One fixed-length unit-norm vector per input image."""

    def __init__(self, out_dim: int = 256, gem_p: float = 3.0):
        super().__init__()
        trunk = torchvision.models.resnet50(weights=None)
        # keep everything up to the last residual stage; pooling and the
        # classifier head are replaced
        self.features = torch.nn.Sequential(*list(trunk.children())[:-2])
        self.pool = GeMPool(gem_p)
        self.project = torch.nn.Linear(2048, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        v = self.project(self.pool(self.features(x)))
        return F.normalize(v, dim=1)


def build_embedder(weights: str, out_dim: int = 256) -> GlobalDescriptorNet:
    """Construct the network from a weights reference.

    ``weights`` is either ``"seed:<int>"`` (fresh deterministic
    initialization, for smoke runs and fixtures) or a path to a state dict
    saved from a trained GlobalDescriptorNet.
    """
    if weights.startswith("seed:"):
        try:
            seed = int(weights[len("seed:"):])
        except ValueError as exc:
            raise ExportError(f"bad seed reference {weights!r}") from exc
        torch.manual_seed(seed)
        net = GlobalDescriptorNet(out_dim)
    else:
        if not os.path.isfile(weights):
            raise FileNotFoundError(f"weights file not found: {weights}")
        torch.manual_seed(0)
        net = GlobalDescriptorNet(out_dim)
        try:
            state = torch.load(weights, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        except (RuntimeError, KeyError, ValueError) as exc:
            raise ExportError(f"weights file {weights!r} not loadable: {exc}") from exc
    net.eval()
    return net
