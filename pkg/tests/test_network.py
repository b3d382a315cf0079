import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from msdc.crf import LinearChainCrf
from msdc.errors import DataError, NumericalError
from msdc.network import (ArchConfig, DualCnn, backward, batch_loss, combine, decode_states,
                          forward_power, forward_state, loss_msdc, loss_power, loss_state_ce)

from .helpers import finite_difference_grads, max_relative_error, randomize_, tiny_arch


def identity_conv_net(arch):
    net = DualCnn(arch)
    with torch.no_grad():
        for stack in (net.state_net, net.value_net):
            for conv in stack.convs:
                conv.weight.fill_(1.0)
                conv.bias.zero_()
            stack.fc1.weight.zero_()
            stack.fc1.weight[0, 0] = 1.0
            stack.fc1.weight[1, 2] = 1.0
            stack.fc1.weight[1, 7] = 1.0
            stack.fc1.bias.copy_(torch.tensor([0.0, -1.0]))
            stack.fc2.weight.copy_(torch.tensor([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [1.0, -1.0]]))
            stack.fc2.bias.zero_()
    return net


class TestForward:
    arch = ArchConfig(8, 2, 2, [1] * 6, [1] * 6, 2)

    def test_hand_computed_state_pass(self):
        net = identity_conv_net(self.arch)
        x = torch.tensor([1.0, -1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0])
        logits, probs = forward_state(net, x)
        # relu(x) = [1,0,2,0,0,0,0,3]; fc1 -> relu([1, 5-1]) = [1, 4]; fc2 -> [1, 4, 0, -3]
        assert logits[0].tolist() == [[1.0, 4.0], [0.0, -3.0]]
        e3 = math.exp(3)
        np.testing.assert_allclose(probs[0].detach(), [[1 / (1 + e3), e3 / (1 + e3)],
                                              [e3 / (1 + e3), 1 / (1 + e3)]], rtol=1e-14)

    def test_hand_computed_power_pass(self):
        net = identity_conv_net(self.arch)
        x = torch.tensor([1.0, -1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 3.0])
        powers = forward_power(net, x)
        expected = [[math.log1p(math.e), math.log1p(math.e ** 4)],
                    [math.log(2.0), math.log1p(math.exp(-3))]]
        np.testing.assert_allclose(powers[0].detach(), expected, rtol=1e-14)

    def test_matches_loop_oracle(self):
        arch = ArchConfig(8, 2, 2, [2, 3, 2, 2, 3, 2], [3, 2, 4, 1, 2, 3], 5)
        net = randomize_(DualCnn(arch, power_scale=7.0), seed=3)
        x = np.random.default_rng(0).normal(size=8)
        logits, probs, powers = net(torch.tensor(x))
        np.testing.assert_allclose(logits[0].detach().numpy(), loop_forward(net.state_net, x), rtol=1e-12)
        np.testing.assert_allclose(powers[0].detach().numpy(),
                                   7.0 * np.log1p(np.exp(loop_forward(net.value_net, x))), rtol=1e-12)

    def test_zero_weights(self):
        net = DualCnn(ArchConfig(16, 4, 3, [2] * 6, [3] * 6, 4), power_scale=100.0)
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        logits, probs, powers = net(torch.randn(5, 16, dtype=torch.float64))
        assert torch.all(probs == 1 / 3)
        np.testing.assert_allclose(powers.detach(), 100.0 * math.log(2.0), rtol=1e-15)

    def test_shape_mismatch(self):
        net = DualCnn(ArchConfig(16, 4, 3, [2] * 6, [3] * 6, 4))
        with pytest.raises(DataError):
            forward_state(net, torch.zeros(15, dtype=torch.float64))

    @given(st.integers(0, 2**31 - 1))
    def test_rows_are_distributions_and_powers_nonnegative(self, seed):
        torch.manual_seed(seed)
        net = DualCnn(ArchConfig(16, 4, 3, [2] * 6, [3] * 6, 4), seed=seed)
        x = torch.randn(3, 16, dtype=torch.float64) * 50
        _, probs, powers = net(x)
        assert torch.all((probs.sum(-1) - 1).abs() <= 1e-6)
        assert torch.all(powers >= 0)

    def test_softplus_range_for_negative_preactivation(self):
        net = DualCnn(ArchConfig(8, 2, 2, [1] * 6, [1] * 6, 2), power_scale=10.0)
        with torch.no_grad():
            for p in net.value_net.parameters():
                p.zero_()
            net.value_net.fc2.bias.fill_(-4.0)
        powers = forward_power(net, torch.zeros(8))
        assert torch.all((powers > 0) & (powers < 10.0 * math.log(2.0)))


def loop_forward(stack, x):
    """Explicit-loop reimplementation of a ConvStack forward pass."""
    h = np.asarray(x, float)[None, :]
    for conv in stack.convs:
        W = conv.weight.detach().numpy()
        b = conv.bias.detach().numpy()
        c_out, c_in, k = W.shape
        L = h.shape[1]
        left = (k - 1) // 2
        out = np.zeros((c_out, L))
        for o in range(c_out):
            for t in range(L):
                acc = b[o]
                for i in range(c_in):
                    for j in range(k):
                        src = t - left + j
                        if 0 <= src < L:
                            acc += W[o, i, j] * h[i, src]
                out[o, t] = acc
        h = np.maximum(out, 0.0)
    flat = h.reshape(-1)
    W1, b1 = stack.fc1.weight.detach().numpy(), stack.fc1.bias.detach().numpy()
    W2, b2 = stack.fc2.weight.detach().numpy(), stack.fc2.bias.detach().numpy()
    hidden = np.maximum(W1 @ flat + b1, 0.0)
    return (W2 @ hidden + b2).reshape(stack.arch.output_len, stack.arch.n_states)


class TestCombineAndDecode:
    def test_one_hot_row(self):
        assert combine(torch.tensor([[0.0, 1.0, 0.0]]), torch.tensor([[5.0, 7.0, 9.0]])).tolist() == [7.0]

    def test_uniform_row(self):
        assert combine(torch.tensor([[0.5, 0.5]]), torch.tensor([[0.0, 100.0]])).tolist() == [50.0]

    def test_dot_product(self):
        out = combine(torch.tensor([[0.2, 0.3, 0.5]], dtype=torch.float64),
                      torch.tensor([[0.0, 200.0, 1100.0]], dtype=torch.float64))
        assert out.item() == pytest.approx(610.0, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            combine(torch.zeros(2, 3), torch.zeros(2, 2))

    @given(st.floats(-10, 10), st.integers(0, 10_000))
    def test_bilinear(self, alpha, seed):
        g = torch.Generator().manual_seed(seed)
        P = torch.rand(4, 3, generator=g, dtype=torch.float64)
        C = torch.rand(4, 3, generator=g, dtype=torch.float64) * 100
        torch.testing.assert_close(combine(alpha * P, C), alpha * combine(P, C), rtol=1e-12, atol=1e-10)

    def test_decode(self):
        assert decode_states(torch.tensor([[0.9, 0.1]])).tolist() == [0]
        assert decode_states(torch.tensor([[0.5, 0.5]])).tolist() == [0]
        assert decode_states(torch.tensor([[0.1, 0.9], [0.6, 0.4]])).tolist() == [1, 0]


class TestLosses:
    def test_power_loss_zero_on_perfect_prediction(self):
        P = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        C = torch.tensor([[10.0, 3.0], [1.0, 20.0]], dtype=torch.float64)
        assert loss_power(P, C, [10.0, 20.0]).item() == 0.0

    def test_power_loss_offset(self):
        P = torch.tensor([[0.0, 1.0]] * 3, dtype=torch.float64)
        y = torch.tensor([1.0, 5.0, 9.0], dtype=torch.float64)
        C = torch.stack([torch.zeros(3, dtype=torch.float64), y + 2], dim=1)
        assert loss_power(P, C, y).item() == 4.0

    def test_power_loss_hand_arithmetic(self):
        P = torch.tensor([[1.0], [1.0]], dtype=torch.float64)
        C = torch.tensor([[13.0], [16.0]], dtype=torch.float64)
        assert loss_power(P, C, [10.0, 20.0]).item() == 12.5

    @given(st.integers(0, 10_000))
    def test_power_loss_nonnegative(self, seed):
        g = torch.Generator().manual_seed(seed)
        P = torch.softmax(torch.randn(5, 3, generator=g, dtype=torch.float64), -1)
        C = torch.rand(5, 3, generator=g, dtype=torch.float64)
        assert loss_power(P, C, torch.rand(5, generator=g, dtype=torch.float64)).item() > 0

    def test_cross_entropy(self):
        assert loss_state_ce(torch.zeros(1, 4), [2]).item() == pytest.approx(math.log(4), abs=1e-12)
        assert loss_state_ce(torch.tensor([[1.0, 0.0]]), [1]).item() == pytest.approx(
            math.log(math.e + 1), abs=1e-12)
        assert loss_state_ce(torch.tensor([[0.0, 800.0]]), [1]).item() == pytest.approx(0.0, abs=1e-300)
        with pytest.raises(DataError):
            loss_state_ce(torch.zeros(1, 2), [2])

    def test_msdc_sum(self):
        assert loss_msdc(0.0, 0.0) == 0.0
        assert loss_msdc(1.0, 2.5) == 3.5

    def test_msdc_equals_sum_of_parts(self):
        net = DualCnn(tiny_arch(), power_scale=3.0, seed=1)
        x = torch.randn(4, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
        y = torch.rand(4, 4, dtype=torch.float64) * 3
        s = torch.randint(0, 3, (4, 4))
        losses = batch_loss(net, x, y, s)
        logits, probs, powers = net(x)
        expected = loss_state_ce(logits, s) + loss_power(probs, powers / 3.0, y / 3.0)
        assert losses["total"].item() == pytest.approx(expected.item(), rel=1e-14)


class TestBackward:
    def test_stationary_point(self):
        arch = ArchConfig(8, 2, 2, [1] * 6, [1] * 6, 2)
        net = DualCnn(arch, power_scale=1.0)
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        x = torch.zeros(2, 8, dtype=torch.float64)
        # uniform probs, powers ln2: predicting ln2 everywhere is exact
        y = torch.full((2, 2), math.log(2.0), dtype=torch.float64)
        # uniform targets: half the windows in each state per position
        s = torch.tensor([[0, 1], [1, 0]])
        grads = backward(net, x, y, s, "msdc")
        assert all(torch.all(g.abs() < 1e-15) for g in grads.values())

    @pytest.mark.parametrize("loss_kind", ["msdc", "msdc_crf"])
    def test_matches_finite_differences(self, loss_kind):
        torch.manual_seed(0)
        arch = ArchConfig(12, 3, 2, [2, 2, 3, 3, 3, 3], [4, 3, 3, 2, 2, 2], 6)
        net = randomize_(DualCnn(arch, power_scale=2.0), seed=5)
        crf = LinearChainCrf(2) if loss_kind == "msdc_crf" else None
        if crf is not None:
            with torch.no_grad():
                for p in crf.parameters():
                    p.normal_(generator=torch.Generator().manual_seed(9))
        g = torch.Generator().manual_seed(1)
        x = torch.randn(3, 12, dtype=torch.float64, generator=g)
        y = torch.rand(3, 3, dtype=torch.float64, generator=g) * 2
        s = torch.randint(0, 2, (3, 3), generator=g)
        grads = backward(net, x, y, s, loss_kind, crf)
        numeric = finite_difference_grads(net, crf, x, y, s, loss_kind)
        assert max_relative_error(grads, numeric) < 1e-4

    def test_loss_scaling_scales_gradient(self):
        net = DualCnn(tiny_arch(), power_scale=1.0, seed=2)
        g = torch.Generator().manual_seed(3)
        x = torch.randn(2, 16, dtype=torch.float64, generator=g)
        y = torch.rand(2, 4, dtype=torch.float64, generator=g)
        params = list(net.parameters())
        _, probs, powers = net(x)
        g1 = torch.autograd.grad(loss_power(probs, powers, y), params)
        _, probs, powers = net(x)
        g2 = torch.autograd.grad(2 * loss_power(probs, powers, y), params)
        for a, b in zip(g1, g2):
            torch.testing.assert_close(2 * a, b, rtol=1e-13, atol=0)

    def test_non_finite_gradient_raises(self):
        net = DualCnn(tiny_arch(), seed=0)
        with torch.no_grad():
            net.value_net.fc2.bias.fill_(float("nan"))
        x = torch.randn(1, 16, dtype=torch.float64)
        with pytest.raises(NumericalError):
            backward(net, x, torch.zeros(1, 4), torch.zeros(1, 4, dtype=torch.long))
