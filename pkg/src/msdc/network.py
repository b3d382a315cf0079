"""Dual convolutional network: a state head and a per-state power head.

Both stacks read the same normalized aggregate window of length ``w`` and
emit a ``q x M`` matrix. The state stack's rows are softmax distributions over
the appliance's states; the value stack's rows are nonnegative per-state
power levels in watts. Predicted power is their row-wise dot product.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DataError, NumericalError

DTYPE = torch.float64


@dataclass
class ArchConfig:
    input_len: int = 400
    output_len: int = 64
    n_states: int = 3
    conv_channels: list[int] = field(default_factory=lambda: [30, 30, 40, 50, 50, 50])
    kernel_sizes: list[int] = field(default_factory=lambda: [10, 8, 6, 5, 5, 5])
    hidden: int = 1024
    power_activation: str = "softplus"

    def __post_init__(self):
        if len(self.conv_channels) != len(self.kernel_sizes):
            raise DataError("conv_channels and kernel_sizes must have equal length")
        if not 0 < self.output_len < self.input_len:
            raise DataError("need 0 < output_len < input_len")
        if self.n_states < 1:
            raise DataError("need at least one state")


class ConvStack(nn.Module):
    """Length-preserving 1-D convolutions followed by two dense layers."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        convs = []
        c_in = 1
        for c_out, k in zip(arch.conv_channels, arch.kernel_sizes):
            convs.append(nn.Conv1d(c_in, c_out, k, dtype=DTYPE))
            c_in = c_out
        self.convs = nn.ModuleList(convs)
        self.fc1 = nn.Linear(c_in * arch.input_len, arch.hidden, dtype=DTYPE)
        self.fc2 = nn.Linear(arch.hidden, arch.output_len * arch.n_states, dtype=DTYPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x.unsqueeze(1)
        for conv in self.convs:
            k = conv.kernel_size[0]
            h = F.relu(conv(F.pad(h, ((k - 1) // 2, k // 2))))
        h = F.relu(self.fc1(h.flatten(1)))
        return self.fc2(h).view(-1, self.arch.output_len, self.arch.n_states)


def glorot_init_(module: nn.Module, generator: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.Linear)):
            fan_out, fan_in = m.weight.shape[0], m.weight.shape[1]
            receptive = m.weight[0, 0].numel()
            bound = (6.0 / ((fan_in + fan_out) * receptive)) ** 0.5
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=generator)
                m.bias.zero_()


class DualCnn(nn.Module):
    """State network and value network sharing an input window, not weights."""

    def __init__(self, arch: ArchConfig, power_scale: float = 1.0, seed: int = 0):
        super().__init__()
        if not power_scale > 0:
            raise DataError(f"power_scale must be positive, got {power_scale}")
        self.arch = arch
        self.power_scale = float(power_scale)
        self.state_net = ConvStack(arch)
        self.value_net = ConvStack(arch)
        gen = torch.Generator().manual_seed(seed)
        glorot_init_(self.state_net, gen)
        glorot_init_(self.value_net, gen)

    def _check_input(self, x) -> torch.Tensor:
        x = torch.as_tensor(x, dtype=DTYPE)
        if x.ndim == 1:
            x = x.unsqueeze(0)
        if x.ndim != 2 or x.shape[1] != self.arch.input_len:
            raise DataError(
                f"expected input windows of length {self.arch.input_len}, got shape {tuple(x.shape)}"
            )
        return x

    def state_logits(self, x) -> torch.Tensor:
        return self.state_net(self._check_input(x))

    def powers(self, x) -> torch.Tensor:
        return self.power_scale * F.softplus(self.value_net(self._check_input(x)))

    def forward(self, x):
        x = self._check_input(x)
        logits = self.state_net(x)
        return logits, torch.softmax(logits, dim=-1), self.power_scale * F.softplus(self.value_net(x))


def forward_state(net: DualCnn, x) -> tuple[torch.Tensor, torch.Tensor]:
    logits = net.state_logits(x)
    return logits, torch.softmax(logits, dim=-1)


def forward_power(net: DualCnn, x) -> torch.Tensor:
    return net.powers(x)


def combine(probs: torch.Tensor, powers: torch.Tensor) -> torch.Tensor:
    """Expected power per row: sum over states of probability times power."""
    probs, powers = torch.as_tensor(probs), torch.as_tensor(powers)
    if probs.shape != powers.shape:
        raise DataError(f"shape mismatch: {tuple(probs.shape)} vs {tuple(powers.shape)}")
    return (probs * powers).sum(-1)


def decode_states(probs) -> torch.Tensor:
    # torch.argmax returns the first maximal index, i.e. ties go to the lower state
    return torch.argmax(torch.as_tensor(probs), dim=-1)


def loss_power(probs, powers, target) -> torch.Tensor:
    target = torch.as_tensor(target, dtype=DTYPE)
    return ((target - combine(probs, powers)) ** 2).mean()


def loss_state_ce(logits, labels) -> torch.Tensor:
    logits = torch.as_tensor(logits, dtype=DTYPE)
    labels = torch.as_tensor(labels, dtype=torch.long)
    M = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= M):
        raise DataError(f"state label out of range for {M} states")
    logp = torch.log_softmax(logits, dim=-1)
    return -logp.gather(-1, labels.unsqueeze(-1)).mean()


def loss_msdc(state_loss, power_loss):
    return state_loss + power_loss


def batch_loss(net: DualCnn, inputs, target_power, target_states, loss_kind: str = "msdc",
               crf=None, emission: str = "log_prob") -> dict[str, torch.Tensor]:
    """All loss terms for one batch; ``total`` is what training minimizes."""
    from . import crf as crf_mod

    logits, probs, powers = net(inputs)
    # measured in units of the appliance's peak power so neither term swamps the other
    scale = net.power_scale
    j_power = loss_power(probs, powers / scale, torch.as_tensor(target_power, dtype=DTYPE) / scale)
    labels = torch.as_tensor(target_states, dtype=torch.long)
    if loss_kind == "msdc":
        j_state = loss_state_ce(logits, labels)
    elif loss_kind == "msdc_crf":
        if crf is None:
            raise DataError("loss kind msdc_crf needs CRF parameters")
        emissions = crf_mod.emissions_from_logits(logits, emission)
        j_state = crf_mod.loss_crf(emissions, crf, labels).mean()
    else:
        raise DataError(f"unknown loss kind {loss_kind!r}")
    return {"total": j_state + j_power, "state": j_state, "power": j_power}


def backward(net: DualCnn, inputs, target_power, target_states, loss_kind: str = "msdc",
             crf=None, emission: str = "log_prob") -> dict[str, torch.Tensor]:
    """Gradients of the selected loss with respect to every parameter.

    Keys are parameter names (CRF parameters prefixed ``crf.``).
    """
    params = dict(net.named_parameters())
    if crf is not None and loss_kind == "msdc_crf":
        params.update({f"crf.{k}": v for k, v in crf.named_parameters()})
    loss = batch_loss(net, inputs, target_power, target_states, loss_kind, crf, emission)["total"]
    grads = torch.autograd.grad(loss, list(params.values()))
    out = dict(zip(params.keys(), grads))
    for name, g in out.items():
        if not torch.all(torch.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    return out


def arch_to_dict(arch: ArchConfig) -> dict:
    return asdict(arch)


def state_dict_to_lists(module: nn.Module) -> dict[str, dict]:
    return {
        name: {"shape": list(t.shape), "data": t.detach().reshape(-1).tolist()}
        for name, t in module.state_dict().items()
    }


def load_lists_into(module: nn.Module, payload: dict[str, dict]) -> None:
    tensors = {
        name: torch.tensor(np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]), dtype=DTYPE)
        for name, v in payload.items()
    }
    module.load_state_dict(tensors)
