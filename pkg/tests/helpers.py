"""Shared fixtures: tiny architectures and a finite-difference gradient oracle."""
import numpy as np
import torch

from msdc.network import ArchConfig, batch_loss

ACCEPTANCE_LINES: list[str] = []


def tiny_arch(M=3):
    # default widths / 10, same kernels, hidden 1024 / 64
    return ArchConfig(16, 4, M, [3, 3, 4, 5, 5, 5], [10, 8, 6, 5, 5, 5], 16)


def _params(net, crf, loss_kind):
    params = dict(net.named_parameters())
    if crf is not None and loss_kind == "msdc_crf":
        params.update({f"crf.{k}": v for k, v in crf.named_parameters()})
    return params


def finite_difference_grads(net, crf, x, y, s, loss_kind, h=1e-4):
    """Central differences, one parameter entry at a time, in float64."""
    out = {}
    with torch.no_grad():
        for name, p in _params(net, crf, loss_kind).items():
            flat = p.view(-1)
            grad = np.empty(flat.numel())
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = batch_loss(net, x, y, s, loss_kind, crf)["total"].item()
                flat[i] = orig - h
                down = batch_loss(net, x, y, s, loss_kind, crf)["total"].item()
                flat[i] = orig
                grad[i] = (up - down) / (2 * h)
            out[name] = grad.reshape(tuple(p.shape))
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest |a - n| / max(|a|, |n|, floor) over every parameter entry."""
    worst = 0.0
    for name, n in numeric.items():
        a = analytic[name].detach().numpy()
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(err.max()))
    return worst


def randomize_(module, seed, scale=0.5):
    """Random weights and nonzero biases, so no ReLU sits exactly on its kink."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.uniform_(-scale, scale, generator=g)
    return module


def brute_force_crf(emissions, transition, start, stop):
    """Enumerate all label sequences: (log Z, best path, best score).

    itertools.product yields sequences in lexicographic order, so keeping the
    first strict maximum gives the lexicographically smallest tied path.
    """
    import itertools

    e = np.asarray(emissions, float)
    T = np.asarray(transition, float)
    q, M = e.shape
    scores = []
    best, best_path = -np.inf, None
    for path in itertools.product(range(M), repeat=q):
        s = start[path[0]] + stop[path[-1]] + sum(e[t, path[t]] for t in range(q))
        s += sum(T[path[t], path[t + 1]] for t in range(q - 1))
        scores.append(s)
        if s > best:
            best, best_path = s, path
    scores = np.asarray(scores)
    m = scores.max()
    return m + np.log(np.exp(scores - m).sum()), list(best_path), best


def random_crf_fixture(rng, M=None, q=None, scale=2.0):
    M = M or int(rng.integers(1, 5))
    q = q or int(rng.integers(1, 7))
    return (rng.normal(0, scale, (q, M)), rng.normal(0, scale, (M, M)),
            rng.normal(0, scale, M), rng.normal(0, scale, M))


def synthetic_data(T, seed=0, means=(0.0, 200.0, 1100.0), stds=(2.0, 4.0, 5.0), stay=0.97,
                   base_load=30.0, noise_std=5.0):
    """Cyclic FSM appliance plus a 2-state neighbour, aggregated with base load and noise."""
    from msdc.simulator import AggregationNoiseSpec, ApplianceFsm, aggregate, simulate_appliance
    from msdc.states import extract_state_model
    from msdc.trainer import ApplianceData

    M = len(means)
    P = np.full((M, M), 0.0)
    for s in range(M):
        P[s, s] = stay
        P[s, (s + 1) % M] += 1 - stay
    target = ApplianceFsm("target", tuple(means), tuple(stds), tuple(map(tuple, P)))
    other = ApplianceFsm("other", (0.0, 500.0), (1.0, 5.0), ((0.99, 0.01), (0.02, 0.98)))
    y, _ = simulate_appliance(target, T, seed=seed)
    y2, _ = simulate_appliance(other, T, seed=seed + 1000)
    x = aggregate([y, y2], AggregationNoiseSpec(base_load=base_load, noise_std=noise_std), seed=seed + 2000)
    model, labels = extract_state_model(y, appliance_id="target")
    return ApplianceData(x, y, labels, model)


def tiny_train_config(**overrides):
    from msdc.trainer import TrainConfig

    base = dict(input_len=16, output_len=4, train_stride=4, conv_channels=[3, 3, 4, 5, 5, 5],
                kernel_sizes=[10, 8, 6, 5, 5, 5], hidden=16, batch_size=32, max_epochs=3, patience=3)
    base.update(overrides)
    return TrainConfig(**base)
