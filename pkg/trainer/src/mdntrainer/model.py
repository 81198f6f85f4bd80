"""Torch model of the factored action-mixture network plus its loss.

Architecture: scalars through fc1/fc2 (ReLU); the two-channel semantic grid
through two reflect-padded convolutions (16 filters 7x7 stride 4, then 32
filters 3x3 stride 1) and fc3; concatenated trunk fc4/fc5; per action axis a
softmax mixing head, an identity mean head (normalized units) and a
non-negative-ELU variance head.  Every tensor maps 1:1 onto the MDNW names
(conv1.w, fc6.lon.b, ...), so an exported file reproduces this forward pass
bit-for-bit up to float32 rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .weights_io import WeightsFile

AXES = ("lon", "lat")


@dataclass(frozen=True)
class NetSpec:
    """Shape-defining subset of the weights metadata."""

    k: int
    g: int = 8
    hidden: tuple[int, int, int, int, int] = (256, 128, 256, 256, 128)
    n_lon: int = 128
    n_lat: int = 256
    scalar_len: int = 448
    dv_min: float = -5.0
    dv_max: float = 5.0
    dy_min: float = -3.5
    dy_max: float = 3.5

    @classmethod
    def from_metadata(cls, meta: dict) -> "NetSpec":
        return cls(k=int(meta["K"]), g=int(meta["G"]),
                   hidden=tuple(int(n) for n in meta["hidden"]),
                   n_lon=int(meta["grid"]["n_lon"]),
                   n_lat=int(meta["grid"]["n_lat"]),
                   scalar_len=int(meta["norms"]["slots"])
                   * int(meta["norms"]["history_len"]) * 7,
                   dv_min=float(meta["bounds"]["dv_min"]),
                   dv_max=float(meta["bounds"]["dv_max"]),
                   dy_min=float(meta["bounds"]["dy_min"]),
                   dy_max=float(meta["bounds"]["dy_max"]))

    def half_range(self, axis: str) -> float:
        if axis == "lon":
            return 0.5 * (self.dv_max - self.dv_min)
        return 0.5 * (self.dy_max - self.dy_min)

    def midpoint(self, axis: str) -> float:
        if axis == "lon":
            return 0.5 * (self.dv_max + self.dv_min)
        return 0.5 * (self.dy_max + self.dy_min)


def nnelu(x: torch.Tensor) -> torch.Tensor:
    """Non-negative ELU: x + 1 for x >= 0, exp(x) below.

    Computed branch-wise; elu(x) + 1 would cancel to exactly zero in float32
    once exp(x) drops under the epsilon at 1.
    """
    return torch.where(x >= 0, x + 1.0, torch.exp(x.clamp(max=0.0)))


class MdnNet(nn.Module):
    def __init__(self, spec: NetSpec):
        super().__init__()
        self.spec = spec
        n1, n2, n3, n4, n5 = spec.hidden
        self.pad1 = nn.ReflectionPad2d(3)
        self.conv1 = nn.Conv2d(2, 16, 7, stride=4)
        self.pad2 = nn.ReflectionPad2d(1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=1)
        with torch.no_grad():
            probe = torch.zeros(1, 2, spec.n_lat, spec.n_lon)
            flat = self._visual_trunk(probe).shape[1]
        self.fc1 = nn.Linear(spec.scalar_len, n1)
        self.fc2 = nn.Linear(n1, n2)
        self.fc3 = nn.Linear(flat, n3)
        self.fc4 = nn.Linear(n2 + n3, n4)
        self.fc5 = nn.Linear(n4, n5)
        gk = spec.g * spec.k
        self.heads = nn.ModuleDict()
        for head in ("fc6", "fc7", "fc8"):
            for axis in AXES:
                self.heads[f"{head}_{axis}"] = nn.Linear(n5, gk)

    def _visual_trunk(self, grid: torch.Tensor) -> torch.Tensor:
        v = torch.relu(self.conv1(self.pad1(grid)))
        v = torch.relu(self.conv2(self.pad2(v)))
        return v.flatten(1)

    def forward(self, grid: torch.Tensor, scalars: torch.Tensor) -> dict:
        """Returns per axis: mixing probs, de-normalized means, variances.

        grid: (B, 2, n_lat, n_lon) normalized; scalars: (B, scalar_len).
        Output tensors are (B, G, K).
        """
        b = grid.shape[0]
        h = torch.relu(self.fc1(scalars))
        h = torch.relu(self.fc2(h))
        v = torch.relu(self.fc3(self._visual_trunk(grid)))
        trunk = torch.relu(self.fc4(torch.cat([h, v], dim=1)))
        trunk = torch.relu(self.fc5(trunk))
        out = {}
        g, k = self.spec.g, self.spec.k
        for axis in AXES:
            logits = self.heads[f"fc6_{axis}"](trunk).reshape(b, g, k)
            mu_n = self.heads[f"fc7_{axis}"](trunk).reshape(b, g, k)
            raw = self.heads[f"fc8_{axis}"](trunk).reshape(b, g, k)
            out[axis] = (
                torch.softmax(logits, dim=-1),
                self.spec.midpoint(axis) + mu_n * self.spec.half_range(axis),
                nnelu(raw),
            )
        return out

    # ------------------------------------------------------------- export

    def _name_map(self) -> dict[str, torch.Tensor]:
        pairs = {"conv1": self.conv1, "conv2": self.conv2, "fc1": self.fc1,
                 "fc2": self.fc2, "fc3": self.fc3, "fc4": self.fc4,
                 "fc5": self.fc5}
        out = {}
        for name, mod in pairs.items():
            out[f"{name}.w"] = mod.weight
            out[f"{name}.b"] = mod.bias
        for head in ("fc6", "fc7", "fc8"):
            for axis in AXES:
                mod = self.heads[f"{head}_{axis}"]
                out[f"{head}.{axis}.w"] = mod.weight
                out[f"{head}.{axis}.b"] = mod.bias
        return out

    def export_tensors(self) -> dict[str, np.ndarray]:
        return {name: t.detach().cpu().numpy().astype(np.float32)
                for name, t in self._name_map().items()}

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for name, t in self._name_map().items():
                src = torch.from_numpy(np.ascontiguousarray(tensors[name]))
                if tuple(t.shape) != tuple(src.shape):
                    raise ValueError(f"tensor {name}: model expects "
                                     f"{tuple(t.shape)}, file has "
                                     f"{tuple(src.shape)}")
                t.copy_(src)


def mixture_log_prob(values: torch.Tensor, phi: torch.Tensor,
                     mu: torch.Tensor, var: torch.Tensor) -> torch.Tensor:
    """log p(values) under per-slot 1D mixtures.

    values: (B, G, S); phi/mu/var: (B, G, K).  Returns (B, G, S).
    """
    v = values.unsqueeze(-1)                         # (B, G, S, 1)
    var = var.clamp_min(1e-12).unsqueeze(2)          # (B, G, 1, K)
    mu = mu.unsqueeze(2)
    log_comp = (-0.5 * ((v - mu) ** 2 / var + torch.log(2 * math.pi * var))
                + torch.log(phi.clamp_min(1e-12)).unsqueeze(2))
    return torch.logsumexp(log_comp, dim=-1)


def mdn_loss(outputs: dict, batch: dict, alpha: float) -> torch.Tensor:
    """Weighted negative log-likelihood plus variance regularization.

    Per valid agent slot and axis, the NLL is the visit-count-weighted mean
    of -log p(sample); the per-sample weights enter normalized to mean one
    within the slot's sample set.  The regularizer is alpha times the L2 norm
    of the slot's stacked per-axis variance vector.  Both terms average over
    the valid slots of each record and over the batch, keeping the loss scale
    independent of agent count and sample count.
    """
    slot_mask = batch["slot_mask"]                   # (B, G) bool
    denom = slot_mask.sum(dim=1).clamp_min(1)        # valid agents per record
    nll_axes = []
    var_vectors = []
    for axis in AXES:
        phi, mu, var = outputs[axis]
        values = batch[f"{axis}_values"]             # (B, G, S)
        weights = batch[f"{axis}_weights"]           # (B, G, S), 0 = padding
        logp = mixture_log_prob(values, phi, mu, var)
        wsum = weights.sum(dim=-1).clamp_min(1e-12)  # (B, G)
        nll = -(weights * logp).sum(dim=-1) / wsum   # weighted mean per slot
        nll_axes.append(nll)
        var_vectors.append(var)
    per_slot_nll = 0.5 * (nll_axes[0] + nll_axes[1])
    nll_term = ((per_slot_nll * slot_mask).sum(dim=1) / denom).mean()

    sigma = torch.cat(var_vectors, dim=-1)           # (B, G, 2K)
    sigma_norm = torch.linalg.vector_norm(sigma, dim=-1)
    reg_term = ((sigma_norm * slot_mask).sum(dim=1) / denom).mean()
    loss = nll_term + alpha * reg_term
    if not torch.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss: nll={float(nll_term)}, reg={float(reg_term)}")
    return loss


def reference_forward(weights: WeightsFile, grid: np.ndarray,
                      scalars: np.ndarray) -> dict:
    """Forward pass straight from a weights file; the cross-implementation
    oracle.  Returns per axis (phi, mu, var) arrays of shape (G, K)."""
    spec = NetSpec.from_metadata(weights.metadata)
    net = MdnNet(spec)
    net.load_tensors(weights.tensors)
    net.eval()
    with torch.no_grad():
        out = net(torch.from_numpy(np.asarray(grid, np.float32)).unsqueeze(0),
                  torch.from_numpy(np.asarray(scalars, np.float32)
                                   ).unsqueeze(0))
    return {axis: tuple(t.squeeze(0).numpy() for t in out[axis])
            for axis in AXES}
