"""Rotate convolution kernels by sampling their bilinear kernel space.

Axis convention: row index grows downward, column index grows to the right,
and a positive angle turns the kernel counter-clockwise as drawn. To rotate
the kernel by +theta, every target cell samples the source plane at its own
centred coordinate turned clockwise by theta:

    src_row = ctr + sin(theta) * u + cos(theta) * v
    src_col = ctr + cos(theta) * u - sin(theta) * v

with u = col - ctr, v = row - ctr and ctr = (k - 1) / 2. Samples outside the
k x k grid read 0, so the map is linear in the weights and can be written as a
k^2 x k^2 interpolation matrix per angle.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from arcconv.core.errors import DimensionError
from arcconv.core.functional import record_branch
from arcconv.core.tensor import Parameter, Tensor, make_result

# sin/cos closer than this to zero are taken as exactly zero (quarter turns)
TRIG_SNAP = 1e-15

# (row offset, col offset) of the four bilinear taps
_TAPS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _snapped_trig(angles: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    cos, sin = np.cos(angles), np.sin(angles)
    cos = np.where(np.abs(cos) < TRIG_SNAP, 0.0, cos)
    sin = np.where(np.abs(sin) < TRIG_SNAP, 0.0, sin)
    return cos, sin


def interpolation_matrices(angles, k: int, with_derivative: bool = False
                           ) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Bilinear sampling matrices M[..., k*k, k*k] with rotated_flat = M @ flat.

    With `with_derivative`, also returns dM/dtheta. Inside a bilinear cell the
    derivative is taken from the cell [i, i+1) that contains the sample.
    """
    angles = np.asarray(angles, dtype=np.float64)
    if not np.all(np.isfinite(angles)):
        raise DimensionError("rotation angles must be finite")
    batch_shape = angles.shape
    a = angles.reshape(-1, 1)
    p = k * k
    ctr = (k - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    u = (cols - ctr).reshape(1, -1)
    v = (rows - ctr).reshape(1, -1)

    cos, sin = _snapped_trig(a)
    src_r = ctr + sin * u + cos * v
    src_c = ctr + cos * u - sin * v
    r0 = np.floor(src_r)
    c0 = np.floor(src_c)
    fr = src_r - r0
    fc = src_c - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    record_branch(r0, c0)

    weights = {
        (0, 0): (1 - fr) * (1 - fc),
        (0, 1): (1 - fr) * fc,
        (1, 0): fr * (1 - fc),
        (1, 1): fr * fc,
    }
    matrix = np.zeros((a.shape[0], p, p), dtype=np.float64)
    deriv = np.zeros_like(matrix) if with_derivative else None
    if with_derivative:
        dr = cos * u - sin * v
        dc = -sin * u - cos * v
        dweights = {
            (0, 0): -dr * (1 - fc) - (1 - fr) * dc,
            (0, 1): -dr * fc + (1 - fr) * dc,
            (1, 0): dr * (1 - fc) - fr * dc,
            (1, 1): dr * fc + fr * dc,
        }

    for tap in _TAPS:
        tr, tc = r0 + tap[0], c0 + tap[1]
        valid = (tr >= 0) & (tr < k) & (tc >= 0) & (tc < k)
        b_idx, p_idx = np.nonzero(valid)
        src_idx = (tr * k + tc)[valid]
        np.add.at(matrix, (b_idx, p_idx, src_idx), weights[tap][valid])
        if with_derivative:
            np.add.at(deriv, (b_idx, p_idx, src_idx), dweights[tap][valid])

    matrix = matrix.reshape(batch_shape + (p, p))
    if with_derivative:
        deriv = deriv.reshape(batch_shape + (p, p))
    return matrix, deriv


@dataclass(frozen=True)
class RotationPlan:
    """Rotation of a k x k plane about its centre by `angle` radians (CCW positive)."""
    angle: float
    k: int
    out_of_support_value: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.angle):
            raise DimensionError("rotation angle must be finite")
        if self.k < 1:
            raise DimensionError("kernel size must be >= 1")

    @property
    def center(self) -> Tuple[float, float]:
        c = (self.k - 1) / 2.0
        return c, c

    def interpolation_matrix(self) -> np.ndarray:
        return interpolation_matrices(self.angle, self.k)[0]

    def angle_derivative(self) -> np.ndarray:
        return interpolation_matrices(self.angle, self.k, with_derivative=True)[1]


@dataclass
class KernelStack:
    """The n expert kernels, stored as one Parameter of shape [n, C_out, C_in, k, k]."""
    weights: Parameter

    def __post_init__(self):
        shape = self.weights.shape
        if len(shape) != 5 or shape[3] != shape[4]:
            raise DimensionError(f"kernel stack must be [n, C_out, C_in, k, k], got {shape}")

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def k(self) -> int:
        return self.weights.shape[-1]

    @property
    def expert_shape(self) -> Tuple[int, int, int, int]:
        return tuple(self.weights.shape[1:])


def _check_angles(weights: np.ndarray, theta: np.ndarray) -> None:
    if weights.ndim != 5 or weights.shape[3] != weights.shape[4]:
        raise DimensionError(f"kernel stack must be [n, C_out, C_in, k, k], got {weights.shape}")
    if theta.ndim < 1 or theta.shape[-1] != weights.shape[0]:
        raise DimensionError(f"need one angle per expert ({weights.shape[0]}), got shape {theta.shape}")


def rotate_kernel_stack(weights, theta) -> np.ndarray:
    """Rotate every [k, k] plane of expert i by theta[..., i].

    weights: [n, C_out, C_in, k, k]; theta: [n] or [N, n].
    Returns theta.shape + [C_out, C_in, k, k].
    """
    weights = np.asarray(weights)
    theta = np.asarray(theta, dtype=np.float64)
    _check_angles(weights, theta)
    n, k = weights.shape[0], weights.shape[-1]
    matrix, _ = interpolation_matrices(theta, k)
    flat = weights.astype(np.float64).reshape(n, -1, k * k)
    out = np.matmul(flat, np.swapaxes(matrix, -1, -2))
    return out.reshape(theta.shape + weights.shape[1:]).astype(weights.dtype)


def rotate_plane(plane, angle: float) -> np.ndarray:
    """Rotate a single [k, k] plane."""
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.shape[0] != plane.shape[1]:
        raise DimensionError(f"expected a square plane, got {plane.shape}")
    return rotate_kernel_stack(plane[None, None, None], np.array([angle]))[0, 0, 0]


def rotate_vjp(weights, theta, upstream) -> Tuple[np.ndarray, np.ndarray]:
    """Pull an upstream gradient back through rotate_kernel_stack.

    grad_W scatters upstream through the same four bilinear taps (the adjoint
    of the sampling map); grad_theta chains dM/dtheta with the weights and is
    summed over all planes of each expert.
    """
    weights = np.asarray(weights)
    theta = np.asarray(theta, dtype=np.float64)
    _check_angles(weights, theta)
    n, k = weights.shape[0], weights.shape[-1]
    p = k * k
    expected = theta.shape + weights.shape[1:]
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != expected:
        raise DimensionError(f"upstream shape {upstream.shape} != {expected}")

    matrix, deriv = interpolation_matrices(theta, k, with_derivative=True)
    flat = weights.astype(np.float64).reshape(n, -1, p)
    up = upstream.reshape(theta.shape + (flat.shape[1], p))
    grad_w = np.matmul(up, matrix).reshape((-1, n, flat.shape[1], p)).sum(axis=0)
    d_rotated = np.matmul(flat, np.swapaxes(deriv, -1, -2))
    grad_theta = (up * d_rotated).sum(axis=(-1, -2))
    return grad_w.reshape(weights.shape), grad_theta


def rotate_experts(weights: Tensor, theta: Tensor) -> Tensor:
    """Differentiable per-sample rotation.

    weights: [n, C_out, C_in, k, k]; theta: [N, n]. Returns the rotated
    experts folded to [N * n, C_out, C_in, k, k].
    """
    if theta.ndim != 2:
        raise DimensionError(f"theta must be [N, n], got {theta.shape}")
    rotated = rotate_kernel_stack(weights.data, theta.data)
    full_shape = rotated.shape
    folded = rotated.reshape((-1,) + weights.shape[1:])

    def backward(g):
        grad_w, grad_theta = rotate_vjp(weights.data, theta.data, g.reshape(full_shape))
        return grad_w, grad_theta

    return make_result(folded, (weights, theta), backward, "rotate")
