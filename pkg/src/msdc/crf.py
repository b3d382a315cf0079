"""Linear-chain CRF over the state network's per-timestep outputs.

Shapes: emissions ``(..., q, M)``, labels ``(..., q)``. Leading dimensions are
treated as a batch.
"""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import DataError
from .network import DTYPE

EMISSION_MODES = ("log_prob", "prob")


class LinearChainCrf(nn.Module):
    """Transition scores ``transition[a, b]`` for moving from state a to b,
    plus start and stop scores. All zero at initialization."""

    def __init__(self, n_states: int):
        super().__init__()
        self.n_states = n_states
        self.transition = nn.Parameter(torch.zeros(n_states, n_states, dtype=DTYPE))
        self.start = nn.Parameter(torch.zeros(n_states, dtype=DTYPE))
        self.stop = nn.Parameter(torch.zeros(n_states, dtype=DTYPE))

    @classmethod
    def from_arrays(cls, transition, start, stop) -> "LinearChainCrf":
        transition = torch.as_tensor(transition, dtype=DTYPE)
        crf = cls(transition.shape[0])
        with torch.no_grad():
            crf.transition.copy_(transition)
            crf.start.copy_(torch.as_tensor(start, dtype=DTYPE))
            crf.stop.copy_(torch.as_tensor(stop, dtype=DTYPE))
        return crf


def emissions_from_logits(logits: torch.Tensor, mode: str = "log_prob") -> torch.Tensor:
    if mode == "log_prob":
        return torch.log_softmax(logits, dim=-1)
    if mode == "prob":
        return torch.softmax(logits, dim=-1)
    raise DataError(f"unknown emission mode {mode!r}; expected one of {EMISSION_MODES}")


def _check_labels(labels, n_states: int) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_states):
        raise DataError(f"label out of range for {n_states} states")
    return labels


def sequence_score(emissions, crf: LinearChainCrf, labels) -> torch.Tensor:
    emissions = torch.as_tensor(emissions, dtype=DTYPE)
    labels = _check_labels(labels, emissions.shape[-1])
    if emissions.shape[-2] < 1:
        raise DataError("sequence must have at least one step")
    score = crf.start[labels[..., 0]] + crf.stop[labels[..., -1]]
    score = score + emissions.gather(-1, labels.unsqueeze(-1)).squeeze(-1).sum(-1)
    if labels.shape[-1] > 1:
        score = score + crf.transition[labels[..., :-1], labels[..., 1:]].sum(-1)
    return score


def log_partition(emissions, crf: LinearChainCrf) -> torch.Tensor:
    """Log of the summed exponentiated scores of all label sequences (forward algorithm)."""
    emissions = torch.as_tensor(emissions, dtype=DTYPE)
    q = emissions.shape[-2]
    if q < 1:
        raise DataError("sequence must have at least one step")
    alpha = crf.start + emissions[..., 0, :]
    for t in range(1, q):
        alpha = torch.logsumexp(alpha.unsqueeze(-1) + crf.transition, dim=-2) + emissions[..., t, :]
    return torch.logsumexp(alpha + crf.stop, dim=-1)


def loss_crf(emissions, crf: LinearChainCrf, labels) -> torch.Tensor:
    """Negative log-likelihood of ``labels``: log Z minus the sequence score."""
    return log_partition(emissions, crf) - sequence_score(emissions, crf, labels)


def viterbi(emissions, crf: LinearChainCrf) -> tuple[np.ndarray, np.ndarray]:
    """Highest-scoring label sequence and its score.

    Among equally scored sequences the lexicographically smallest is returned:
    best suffix scores are computed backwards, then labels are chosen forwards
    taking the first maximizer at every step.
    """
    e = np.asarray(torch.as_tensor(emissions, dtype=DTYPE).detach())
    trans = crf.transition.detach().numpy()
    start = crf.start.detach().numpy()
    stop = crf.stop.detach().numpy()
    squeeze = e.ndim == 2
    if squeeze:
        e = e[None]
    B, q, M = e.shape
    suffix = np.empty((B, q, M))
    suffix[:, -1] = e[:, -1] + stop
    for t in range(q - 2, -1, -1):
        suffix[:, t] = e[:, t] + np.max(trans[None] + suffix[:, t + 1, None, :], axis=-1)
    first = start + suffix[:, 0]
    labels = np.empty((B, q), dtype=np.int64)
    labels[:, 0] = np.argmax(first, axis=-1)
    best = first[np.arange(B), labels[:, 0]]
    for t in range(1, q):
        cand = trans[labels[:, t - 1]] + suffix[:, t]
        labels[:, t] = np.argmax(cand, axis=-1)
    if squeeze:
        return labels[0], best[0]
    return labels, best


def crf_to_dict(crf: LinearChainCrf) -> dict:
    return {
        "n_states": crf.n_states,
        "transition": crf.transition.detach().tolist(),
        "start": crf.start.detach().tolist(),
        "stop": crf.stop.detach().tolist(),
    }


def crf_from_dict(payload: dict) -> LinearChainCrf:
    return LinearChainCrf.from_arrays(payload["transition"], payload["start"], payload["stop"])
