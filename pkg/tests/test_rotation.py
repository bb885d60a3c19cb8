"""Tests for kernel rotation."""

import math

import numpy as np
import pytest

from arcconv.analysis.gradient_check import gradcheck
from arcconv.core.errors import DimensionError
from arcconv.core.rotation import (KernelStack, RotationPlan, interpolation_matrices, rotate_experts,
                                   rotate_kernel_stack, rotate_plane, rotate_vjp)
from arcconv.core.tensor import Parameter, Tensor


class TestRotatePlane:
    """Test cases for single-plane rotation."""

    def test_zero_angle_is_identity(self, rng):
        """Test that a zero angle returns the kernel bit for bit."""
        plane = rng.normal(size=(5, 5))
        np.testing.assert_array_equal(rotate_plane(plane, 0.0), plane)

    @pytest.mark.parametrize("quarter", [1, 2, 3, -1])
    def test_quarter_turns_are_permutations(self, kernel_1_to_9, quarter):
        """Test that multiples of 90 degrees permute the grid exactly (counter-clockwise)."""
        rotated = rotate_plane(kernel_1_to_9, quarter * math.pi / 2)
        np.testing.assert_array_equal(rotated, np.rot90(kernel_1_to_9, quarter))

    def test_ninety_degrees_on_reference_kernel(self, kernel_1_to_9):
        """Test the 90 degree image of the 1..9 kernel."""
        expected = np.array([[3, 6, 9], [2, 5, 8], [1, 4, 7]], dtype=np.float64)
        np.testing.assert_array_equal(rotate_plane(kernel_1_to_9, math.pi / 2), expected)

    def test_full_turn_is_identity(self, rng):
        """Test that 2*pi snaps back to the identity."""
        plane = rng.normal(size=(3, 3))
        np.testing.assert_array_equal(rotate_plane(plane, 2 * math.pi), plane)

    def test_binary32_quarter_turn(self, kernel_1_to_9):
        """Test that binary32 kernels rotate exactly and keep their dtype."""
        plane = kernel_1_to_9.astype(np.float32)
        rotated = rotate_plane(plane, math.pi)
        assert rotated.dtype == np.float32
        np.testing.assert_array_equal(rotated, np.rot90(plane, 2))

    def test_centre_is_fixed(self, rng):
        """Test that the centre tap of an odd kernel never moves."""
        plane = rng.normal(size=(3, 3))
        for angle in (0.3, 1.0, -2.2):
            assert rotate_plane(plane, angle)[1, 1] == pytest.approx(plane[1, 1], abs=1e-15)

    def test_non_square_plane_rejected(self):
        """Test that non-square planes are rejected."""
        with pytest.raises(DimensionError):
            rotate_plane(np.zeros((3, 2)), 0.5)


class TestInterpolationMatrix:
    """Test cases for the bilinear sampling matrices."""

    def test_identity_at_zero(self):
        """Test that the zero-angle matrix is the identity."""
        np.testing.assert_array_equal(RotationPlan(0.0, 3).interpolation_matrix(), np.eye(9))

    def test_weights_are_a_partition_of_at_most_one(self):
        """Test that every row has non-negative weights summing to at most one."""
        matrix = RotationPlan(0.7, 5).interpolation_matrix()
        assert np.all(matrix >= -1e-15)
        assert np.all(matrix.sum(axis=1) <= 1.0 + 1e-12)

    def test_derivative_matches_finite_difference(self):
        """Test dM/dtheta away from cell boundaries."""
        angle, eps = 0.4, 1e-7
        deriv = RotationPlan(angle, 3).angle_derivative()
        numeric = (interpolation_matrices(angle + eps, 3)[0] - interpolation_matrices(angle - eps, 3)[0]) / (2 * eps)
        np.testing.assert_allclose(deriv, numeric, atol=1e-6)

    def test_batched_angles(self):
        """Test that batched angles give one matrix per angle."""
        matrices, _ = interpolation_matrices(np.zeros((2, 3)), 3)
        assert matrices.shape == (2, 3, 9, 9)

    def test_non_finite_angle_rejected(self):
        """Test that NaN angles are rejected."""
        with pytest.raises(DimensionError):
            RotationPlan(float("nan"), 3)
        with pytest.raises(DimensionError):
            interpolation_matrices(np.array([np.inf]), 3)

    def test_center(self):
        """Test the rotation centre of even and odd kernels."""
        assert RotationPlan(0.0, 3).center == (1.0, 1.0)
        assert RotationPlan(0.0, 4).center == (1.5, 1.5)


class TestKernelStack:
    """Test cases for multi-expert and per-sample rotation."""

    def test_shapes(self, rng):
        """Test output shapes for per-expert and per-sample angles."""
        weights = rng.normal(size=(3, 4, 2, 3, 3))
        assert rotate_kernel_stack(weights, np.zeros(3)).shape == (3, 4, 2, 3, 3)
        assert rotate_kernel_stack(weights, np.zeros((5, 3))).shape == (5, 3, 4, 2, 3, 3)

    def test_angle_count_must_match_experts(self, rng):
        """Test that one angle per expert is required."""
        with pytest.raises(DimensionError):
            rotate_kernel_stack(rng.normal(size=(3, 1, 1, 3, 3)), np.zeros(2))

    def test_rotation_is_linear(self, rng):
        """Test linearity in the weights."""
        a, b = rng.normal(size=(2, 2, 1, 2, 3, 3))
        theta = np.array([0.3, -1.2])
        combined = rotate_kernel_stack(2.0 * a - 0.5 * b, theta)
        np.testing.assert_allclose(combined, 2.0 * rotate_kernel_stack(a, theta) - 0.5 * rotate_kernel_stack(b, theta),
                                   atol=1e-12)

    def test_each_expert_uses_its_own_angle(self, kernel_1_to_9):
        """Test that expert i is turned by theta[i] only."""
        weights = np.stack([kernel_1_to_9, kernel_1_to_9])[:, None, None]
        out = rotate_kernel_stack(weights, np.array([0.0, math.pi / 2]))
        np.testing.assert_array_equal(out[0, 0, 0], kernel_1_to_9)
        np.testing.assert_array_equal(out[1, 0, 0], np.rot90(kernel_1_to_9))

    def test_vjp_is_adjoint(self, rng):
        """Test <rotate(W), U> == <W, vjp(U)> for the weight gradient."""
        weights = rng.normal(size=(2, 3, 2, 3, 3))
        theta = np.array([[0.3, -1.1], [2.0, 0.7]])
        upstream = rng.normal(size=(2, 2, 3, 2, 3, 3))
        grad_w, grad_theta = rotate_vjp(weights, theta, upstream)
        lhs = np.sum(rotate_kernel_stack(weights, theta) * upstream)
        assert np.sum(weights * grad_w) == pytest.approx(lhs, rel=1e-12)
        assert grad_theta.shape == theta.shape

    def test_rotate_experts_folds_samples(self, rng):
        """Test the [N * n, ...] folding of the differentiable op."""
        weights = Parameter(rng.normal(size=(2, 3, 2, 3, 3)))
        theta = Tensor(np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]))
        out = rotate_experts(weights, theta)
        assert out.shape == (6, 3, 2, 3, 3)
        np.testing.assert_array_equal(out.data[3], rotate_kernel_stack(weights.data, theta.data)[1, 1])

    def test_rotate_experts_needs_2d_theta(self, rng):
        """Test that theta must be [N, n]."""
        with pytest.raises(DimensionError):
            rotate_experts(Parameter(rng.normal(size=(2, 1, 1, 3, 3))), Tensor(np.zeros(2)))

    def test_kernel_stack_properties(self, rng):
        """Test the KernelStack accessors."""
        stack = KernelStack(Parameter(rng.normal(size=(4, 5, 6, 3, 3))))
        assert (stack.n, stack.k, stack.expert_shape) == (4, 3, (5, 6, 3, 3))
        with pytest.raises(DimensionError):
            KernelStack(Parameter(rng.normal(size=(4, 5, 3, 3))))

    def test_gradcheck(self):
        """Test rotation gradients (weights and angles) against finite differences."""
        report = gradcheck("rotation", seed=0)
        assert report.passed, report.details
