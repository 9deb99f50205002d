"""Variational quantum feature layer on a statevector simulator.

The circuit is fixed: L repetitions of (Ry(theta_i) on every qubit, then a
CNOT ring control i -> target (i+1) mod n).  Angles come from the feature
vector through a tanh bottleneck, so the same angles are re-uploaded in
every repetition; there are no free circuit parameters.

Bit order is little-endian: qubit i is bit i of the amplitude index.  Both
the CNOT permutation and the Z readout depend on this, so it is fixed here
and nowhere else.

Gradients are exact, computed by reverse (adjoint) differentiation of the
simulation: one backward sweep with two statevectors instead of 2*n*L
re-simulations.  The parameter-shift rule is kept in the test suite as an
independent oracle.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, _make, matmul, tanh, transpose

MAX_QUBITS = 12
NORM_TOL = 1e-8


def _check_qubits(n: int) -> None:
    if not 1 <= n <= MAX_QUBITS:
        raise ConfigError(f"qubit count must be in [1, {MAX_QUBITS}], got {n}")


def _apply_2x2(state: np.ndarray, qubit: int, m00, m01, m10, m11) -> np.ndarray:
    """Apply a per-sample 2x2 matrix to one qubit of state[N, 2^n].

    The coefficients are arrays of shape [N] (or scalars), letting every
    batch element carry its own rotation angle.
    """
    num = state.shape[0]
    view = state.reshape(num, -1, 2, 1 << qubit)
    s0, s1 = view[:, :, 0, :], view[:, :, 1, :]

    def col(coef):
        a = np.asarray(coef, dtype=np.float64)
        return a.reshape(num, 1, 1) if a.ndim else a

    out = np.empty_like(view)
    out[:, :, 0, :] = col(m00) * s0 + col(m01) * s1
    out[:, :, 1, :] = col(m10) * s0 + col(m11) * s1
    return out.reshape(state.shape)


def _cnot_perm(n: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << n)
    return idx ^ (((idx >> control) & 1) << target)


def _ring_perms(n: int) -> list:
    if n == 1:
        return []
    return [_cnot_perm(n, i, (i + 1) % n) for i in range(n)]


def _simulate(thetas: np.ndarray, depth: int, trace: Optional[list] = None) -> np.ndarray:
    """Run the circuit for a batch of angle rows; returns [N, 2^n] amplitudes.

    When ``trace`` is given, the state after every individual gate is
    appended to it (used by the unitarity checks).
    """
    num, n = thetas.shape
    _check_qubits(n)
    if depth < 1:
        raise ConfigError(f"circuit depth must be >= 1, got {depth}")
    state = np.zeros((num, 1 << n), dtype=np.complex128)
    state[:, 0] = 1.0
    half = 0.5 * thetas
    c, s = np.cos(half), np.sin(half)
    perms = _ring_perms(n)
    for _ in range(depth):
        for q in range(n):
            state = _apply_2x2(state, q, c[:, q], -s[:, q], s[:, q], c[:, q])
            if trace is not None:
                trace.append(state)
        for perm in perms:
            state = state[:, perm]
            if trace is not None:
                trace.append(state)
    return state


def run_circuit(theta: np.ndarray, depth: int = 1, trace: Optional[list] = None) -> np.ndarray:
    """Simulate one sample: theta[n] -> 2^n complex amplitudes."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ShapeError(f"run_circuit expects a 1-d angle vector, got shape {theta.shape}")
    return _simulate(theta[None, :], depth, trace=trace)[0]


def _z_signs(n: int) -> np.ndarray:
    """signs[i, k] = +1 if bit i of k is 0 else -1."""
    k = np.arange(1 << n)
    i = np.arange(n)
    return 1.0 - 2.0 * ((k[None, :] >> i[:, None]) & 1)


def measure_z(state: np.ndarray) -> np.ndarray:
    """Pauli-Z expectation per qubit: z_i = sum_k |a_k|^2 * (+-1)."""
    state = np.asarray(state, dtype=np.complex128)
    single = state.ndim == 1
    if single:
        state = state[None, :]
    dim = state.shape[1]
    n = dim.bit_length() - 1
    if 1 << n != dim:
        raise ShapeError(f"state length {dim} is not a power of two")
    probs = np.abs(state) ** 2
    norms = probs.sum(axis=1)
    if np.abs(norms - 1.0).max() > NORM_TOL:
        worst = np.abs(norms - 1.0).max()
        raise ContractError(f"state norm deviates from 1 by {worst:.3e}")
    z = probs @ _z_signs(n).T
    return z[0] if single else z


def quantum_backward(theta: np.ndarray, depth: int, upstream: np.ndarray) -> np.ndarray:
    """dL/dtheta given dL/dz, by adjoint reverse differentiation.

    Folds the upstream weights into one diagonal observable
    O = sum_i upstream_i * Z_i, then sweeps the circuit backwards keeping
    two states: phi (the forward state with gates peeled off) and
    lam = (suffix unitaries)^dagger O |phi_final>.  Each Ry occurrence
    contributes 2 Re <lam| dRy |phi>; re-uploaded angles accumulate over
    repetitions automatically.
    """
    theta = np.asarray(theta, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    single = theta.ndim == 1
    if single:
        theta, upstream = theta[None, :], upstream[None, :]
    if upstream.shape != theta.shape:
        raise ShapeError(f"upstream shape {upstream.shape} does not match angles {theta.shape}")
    num, n = theta.shape
    _check_qubits(n)

    half = 0.5 * theta
    c, s = np.cos(half), np.sin(half)
    signs = _z_signs(n)
    perms = _ring_perms(n)

    phi = _simulate(theta, depth)
    # diagonal observable folded from the upstream cotangent
    diag = upstream @ signs
    lam = diag * phi
    grad = np.zeros_like(theta)

    for _ in range(depth):
        for perm in reversed(perms):
            phi = phi[:, perm]
            lam = lam[:, perm]
        for q in reversed(range(n)):
            cq, sq = c[:, q], s[:, q]
            # Ry(-theta) undoes the gate
            phi = _apply_2x2(phi, q, cq, sq, -sq, cq)
            dphi = _apply_2x2(phi, q, -0.5 * sq, -0.5 * cq, 0.5 * cq, -0.5 * sq)
            grad[:, q] += 2.0 * np.real(np.conj(lam) * dphi).sum(axis=1)
            lam = _apply_2x2(lam, q, cq, sq, -sq, cq)

    return grad[0] if single else grad


def circuit_expectations(theta: Tensor, depth: int) -> Tensor:
    """Differentiable node mapping angle rows [N, n] to Z expectations [N, n]."""
    if theta.ndim != 2:
        raise ShapeError(f"circuit_expectations expects [N, n] angles, got {theta.shape}")
    z = measure_z(_simulate(theta.data, depth))

    def backward_fn(g):
        return (quantum_backward(theta.data, depth, g),)

    return _make(z, (theta,), backward_fn)


def encode_angles(h: Tensor, wq: Tensor) -> Tensor:
    """theta = pi * tanh(h @ wq^T), rows bounded inside (-pi, pi)."""
    if h.shape[1] != wq.shape[1]:
        raise ShapeError(
            f"encode_angles feature mismatch: h has {h.shape[1]} features (axis 1), "
            f"wq expects {wq.shape[1]}"
        )
    return tanh(matmul(h, transpose(wq))) * math.pi


def fuse(h: Tensor, z: Tensor, wr: Tensor, alpha: float) -> Tensor:
    """Residual enhancement h' = h + alpha * (z @ wr^T)."""
    if alpha < 0:
        raise ConfigError(f"fusion coefficient must be >= 0, got {alpha}")
    if wr.shape[1] != z.shape[1] or wr.shape[0] != h.shape[1]:
        raise ShapeError(
            f"fuse shape mismatch: h {h.shape}, z {z.shape}, wr {wr.shape}"
        )
    return h + matmul(z, transpose(wr)) * float(alpha)


class QuantumLayer:
    """Feature enhancement block: encode, simulate, measure, fuse.

    With alpha = 0 the layer short-circuits to the identity so the forward
    pass is bit-identical to a model without the layer.
    """

    def __init__(self, features: int, qubits: int = 8, depth: int = 2,
                 alpha: float = 0.1, rng: Optional[np.random.Generator] = None):
        _check_qubits(qubits)
        if depth < 1:
            raise ConfigError(f"circuit depth must be >= 1, got {depth}")
        if alpha < 0:
            raise ConfigError(f"fusion coefficient must be >= 0, got {alpha}")
        if rng is None:
            rng = np.random.default_rng()
        bound = math.sqrt(6.0 / (features + qubits))
        self.wq = Tensor(rng.uniform(-bound, bound, size=(qubits, features)),
                         requires_grad=True)
        self.wr = Tensor(0.1 * rng.uniform(-bound, bound, size=(features, qubits)),
                         requires_grad=True)
        self.qubits = qubits
        self.depth = depth
        self.alpha = float(alpha)

    def forward(self, h: Tensor) -> Tensor:
        if self.alpha == 0.0:
            return h
        theta = encode_angles(h, self.wq)
        z = circuit_expectations(theta, self.depth)
        return fuse(h, z, self.wr, self.alpha)

    def parameters(self):
        return [("quantum.wq", self.wq), ("quantum.wr", self.wr)]
