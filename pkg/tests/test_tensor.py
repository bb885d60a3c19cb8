"""Tests for the tape, the Module base class and the differentiable operators."""

import numpy as np
import pytest

from arcconv.core import functional as F
from arcconv.core.errors import ConfigurationError, ContractError, DimensionError, InputError, MissingEntryError
from arcconv.core.layers import Conv2d, Linear
from arcconv.core.module import Sequential, layer_rng, truncated_normal
from arcconv.core.tensor import Parameter, Tensor, no_grad


class TestTensor:
    """Test cases for Tensor and the tape."""

    def test_broadcast_add_gradient(self):
        """Test that a broadcast operand receives the summed gradient."""
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.arange(3.0), requires_grad=True)
        (a + b).sum().backward()
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(b.grad, np.full(3, 2.0))

    def test_mul_div_gradients(self):
        """Test product and quotient rules."""
        a = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        b = Tensor(np.array([4.0, 5.0]), requires_grad=True)
        (a * b / b * a).sum().backward()
        np.testing.assert_allclose(a.grad, 2 * a.data)
        np.testing.assert_allclose(b.grad, np.zeros(2), atol=1e-12)

    def test_reshape_and_index(self):
        """Test that reshape and indexing route gradients back to the source."""
        x = Tensor(np.arange(6.0), requires_grad=True)
        x.reshape(2, 3)[1].sum().backward()
        np.testing.assert_array_equal(x.grad, [0, 0, 0, 1, 1, 1])

    def test_mean(self):
        """Test mean value and gradient."""
        x = Tensor(np.arange(4.0), requires_grad=True)
        m = x.mean()
        m.backward()
        assert m.item() == 1.5
        np.testing.assert_array_equal(x.grad, np.full(4, 0.25))

    def test_backward_requires_scalar(self):
        """Test that backward on a non-scalar is a contract error."""
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()

    def test_item_requires_single_element(self):
        """Test that item() refuses multi-element tensors."""
        with pytest.raises(ContractError):
            Tensor(np.ones(2)).item()

    def test_no_grad_records_nothing(self):
        """Test that results computed under no_grad are detached."""
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = x * 3.0
        assert not y.requires_grad
        assert y.is_leaf

    def test_rank_limit(self):
        """Test that tensors above rank 5 are rejected."""
        with pytest.raises(DimensionError):
            Tensor(np.ones((1,) * 6))

    def test_empty_extent_rejected(self):
        """Test that zero-sized extents are rejected."""
        with pytest.raises(DimensionError):
            Tensor(np.ones((2, 0)))

    def test_dtype_preserved(self):
        """Test that binary32 data stays binary32."""
        x = Tensor(np.ones(3, dtype=np.float32))
        assert x.dtype == np.float32
        assert (x * 2.0).dtype == np.float32

    def test_parameter_grad_buffer(self):
        """Test that a Parameter starts with a zero gradient of its own shape."""
        p = Parameter(np.ones((2, 2)))
        np.testing.assert_array_equal(p.grad, np.zeros((2, 2)))
        assert p.trainable


class TestModule:
    """Test cases for the Module base class."""

    def test_named_parameters_and_groups(self):
        """Test hierarchical names and the backbone/head split."""
        model = Sequential(Conv2d(1, 2, name="c"), Linear(2, 3, name="h"))
        names = [name for name, _ in model.named_parameters()]
        assert names == ["0.weight", "1.weight", "1.bias"]
        groups = model.param_groups(head_prefix="1.")
        assert len(groups["backbone"]) == 1
        assert len(groups["head"]) == 2

    def test_state_dict_round_trip(self):
        """Test that load_state_dict restores exported values."""
        model = Sequential(Conv2d(1, 2, seed=0, name="c"))
        state = model.state_dict()
        model[0].weight.data[...] = 0.0
        model.load_state_dict(state)
        np.testing.assert_array_equal(model[0].weight.data, state["0.weight"])

    def test_load_state_dict_missing_entry(self):
        """Test that a missing entry names the parameter."""
        model = Sequential(Conv2d(1, 2, name="c"))
        with pytest.raises(MissingEntryError) as exc:
            model.load_state_dict({})
        assert exc.value.name == "0.weight"

    def test_load_state_dict_shape_mismatch(self):
        """Test that a wrongly shaped entry is rejected."""
        model = Sequential(Conv2d(1, 2, name="c"))
        with pytest.raises(DimensionError):
            model.load_state_dict({"0.weight": np.zeros((1, 1, 3, 3))})

    def test_layer_rng_is_reproducible(self):
        """Test that equal (seed, name, stream) triples give equal draws."""
        a = layer_rng(3, "stage_a.0.conv", 0).normal(size=4)
        b = layer_rng(3, "stage_a.0.conv", 0).normal(size=4)
        c = layer_rng(3, "stage_a.0.conv", 1).normal(size=4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_truncated_normal_bound(self, rng):
        """Test that truncated normal samples stay within two standard deviations."""
        samples = truncated_normal(rng, (1000,), std=0.2)
        assert np.all(np.abs(samples) <= 0.4)


class TestFunctional:
    """Test cases for the differentiable operators."""

    def test_conv2d_matches_oracle(self, rng, conv_oracle):
        """Test im2col convolution against the loop oracle with stride and padding."""
        x = rng.normal(size=(2, 3, 7, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        out = F.conv2d(Tensor(x), Tensor(w), stride=2, padding=1)
        np.testing.assert_allclose(out.data, conv_oracle(x, w, 2, 1), atol=1e-12)

    def test_depthwise_conv_matches_oracle(self, rng, conv_oracle):
        """Test groups == C_in against the loop oracle."""
        x = rng.normal(size=(2, 4, 5, 5))
        w = rng.normal(size=(4, 1, 3, 3))
        out = F.grouped_conv2d(Tensor(x), Tensor(w), groups=4, padding=1)
        np.testing.assert_allclose(out.data, conv_oracle(x, w, 1, 1, groups=4), atol=1e-12)

    def test_patch_ops_match_grouped_conv(self, rng):
        """Test that the patch-based depthwise and per-sample convolutions agree with grouped conv."""
        x = rng.normal(size=(3, 4, 6, 6))
        dw = rng.normal(size=(4, 1, 3, 3))
        kernels = rng.normal(size=(3, 5, 4, 3, 3))
        cols = F.patches(Tensor(x), 3, 1, 1)
        depthwise = F.depthwise_from_patches(cols, Tensor(dw), (6, 6))
        expected = F.grouped_conv2d(Tensor(x), Tensor(dw), groups=4, padding=1)
        np.testing.assert_allclose(depthwise.data, expected.data, atol=1e-12)

        per_sample = F.conv_from_patches(cols, Tensor(kernels), (6, 6))
        for b in range(3):
            single = F.conv2d(Tensor(x[b:b + 1]), Tensor(kernels[b]), padding=1)
            np.testing.assert_allclose(per_sample.data[b], single.data[0], atol=1e-12)

    def test_conv_shape_errors(self, rng):
        """Test conv argument validation."""
        x = Tensor(rng.normal(size=(1, 3, 4, 4)))
        with pytest.raises(DimensionError):
            F.conv2d(x, Tensor(rng.normal(size=(2, 2, 3, 3))))
        with pytest.raises(DimensionError):
            F.conv2d(x, Tensor(rng.normal(size=(2, 3, 7, 7))))
        with pytest.raises(ConfigurationError):
            F.grouped_conv2d(x, Tensor(rng.normal(size=(2, 1, 3, 3))), groups=2)

    def test_channel_layer_norm_statistics(self, rng):
        """Test that every position is normalized over channels."""
        x = Tensor(rng.normal(3.0, 2.0, size=(2, 8, 3, 3)))
        out = F.channel_layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
        np.testing.assert_allclose(out.data.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.data.var(axis=1), 1.0, atol=1e-4)

    def test_softsign_range(self):
        """Test softsign values and its open range."""
        out = F.softsign(Tensor(np.array([-1e12, -1.0, 0.0, 3.0])))
        np.testing.assert_allclose(out.data[1:], [-0.5, 0.0, 0.75])
        assert -1.0 < out.data[0] < 0.0

    def test_cross_entropy_value(self):
        """Test cross-entropy against a direct computation."""
        logits = np.array([[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]])
        labels = np.array([1, 2])
        loss = F.softmax_cross_entropy(Tensor(logits), labels).item()
        expected = np.mean([np.log(np.exp(logits[i]).sum()) - logits[i, labels[i]] for i in range(2)])
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_cross_entropy_label_range(self):
        """Test that out-of-range labels are rejected."""
        with pytest.raises(InputError):
            F.softmax_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_relu_records_branch(self):
        """Test that relu reports its mask to an active branch probe."""
        with F.branch_probe() as log:
            F.relu(Tensor(np.array([-1.0, 2.0])))
        assert len(log) == 1

    def test_conv_gradients_match_finite_differences(self, rng):
        """Test conv backward for input and kernel against central differences."""
        x = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
        u = rng.normal(size=(1, 3, 2, 2))

        def loss():
            return (F.conv2d(x, w, stride=2, padding=1) * u).sum()

        loss().backward()
        eps = 1e-6
        for leaf in (x, w):
            flat = leaf.data.reshape(-1)
            numeric = np.zeros(flat.size)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                plus = loss().item()
                flat[i] = original - eps
                minus = loss().item()
                flat[i] = original
                numeric[i] = (plus - minus) / (2 * eps)
            np.testing.assert_allclose(leaf.grad.reshape(-1), numeric, rtol=1e-6, atol=1e-8)
