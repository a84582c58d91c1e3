"""Ideal quantum model of the momentum/polarization single-photon interferometer.

The photon carries two qubits: momentum (paths ``|0>``, ``|1>``) and
polarization (``|V>``, ``|H>``). All 4x4 operators and density matrices use
the fixed basis order ``(|0V>, |0H>, |1V>, |1H>)``, i.e. momentum (x)
polarization with polarization varying fastest. Detector channels map onto
that order as ``1 -> |0V>``, ``2 -> |0H>``, ``3 -> |1V>``, ``4 -> |1H>``.

Matrices are plain ``numpy`` complex arrays. Functions are pure and all
parameter objects are frozen, so everything here is safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ATOL = 1e-12
PSD_FLOOR = -1e-10
PROB_CLAMP_SLACK = 1e-9

BASIS_LABELS = ("0V", "0H", "1V", "1H")

# Balanced lossless beam splitter, phase plate and mirror-swap acting on the
# momentum qubit; the interferometer rotation is their composition.
V_BS = np.array([[math.sqrt(0.5), 1j * math.sqrt(0.5)],
                 [1j * math.sqrt(0.5), math.sqrt(0.5)]], dtype=complex)
V_MR = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


def v_phase(phi: float) -> np.ndarray:
    """Relative phase between the two interferometer arms (2*phi total)."""
    return np.array([[np.exp(2j * phi), 0.0], [0.0, 1.0]], dtype=complex)


@dataclass(frozen=True)
class Outcome:
    """A single detection outcome: path bit ``a`` and polarization bit ``b``.

    ``a = 0`` is path ``|0>``; ``b = 0`` is vertical polarization ``|V>``.
    """

    a: int
    b: int

    def __post_init__(self) -> None:
        if self.a not in (0, 1) or self.b not in (0, 1):
            raise ValueError(f"outcome bits must be 0 or 1, got a={self.a} b={self.b}")

    @property
    def channel(self) -> int:
        """Detector channel in {1, 2, 3, 4} under the fixed basis order."""
        return 2 * self.a + self.b + 1

    @property
    def index(self) -> int:
        """Position of the outcome's basis state in the 4x4 matrix layout."""
        return 2 * self.a + self.b

    @classmethod
    def from_channel(cls, channel: int) -> "Outcome":
        if channel not in (1, 2, 3, 4):
            raise ValueError(f"channel must be in 1..4, got {channel}")
        return cls((channel - 1) // 2, (channel - 1) % 2)


OUTCOMES = tuple(Outcome.from_channel(c) for c in (1, 2, 3, 4))


@dataclass(frozen=True)
class StateParams:
    """Parameters of the trusted-source state family.

    v is the entanglement visibility, delta an extra phase between the two
    paths, pi1/pi2 unwanted wave-plate rotations in paths 0 and 1, and
    t0n/t1n the normalized path transmission amplitudes (t0n^2 + t1n^2 = 1).
    """

    v: float
    delta: float = 0.0
    pi1: float = 0.0
    pi2: float = 0.0
    t0n: float = math.sqrt(0.5)
    t1n: float = math.sqrt(0.5)

    def __post_init__(self) -> None:
        if not 0.0 <= self.v <= 1.0:
            raise ValueError(f"visibility must be in [0, 1], got {self.v}")
        if self.t0n < 0 or self.t1n < 0:
            raise ValueError("normalized transmissions must be nonnegative")
        norm = self.t0n ** 2 + self.t1n ** 2
        if abs(norm - 1.0) > ATOL:
            raise ValueError(f"t0n^2 + t1n^2 must equal 1, got {norm}")


#: Hyperspherical angle domains: first four restricted to keep the Cholesky
#: diagonal nonnegative, the last one a full period.
CHOLESKY_ANGLE_HIGH = np.array([math.pi / 2] * 4 + [math.pi] * 10 + [2 * math.pi])


@dataclass(frozen=True)
class CholeskyAngles:
    """15 hyperspherical angles parameterizing an arbitrary 4x4 density matrix."""

    eta: tuple

    def __post_init__(self) -> None:
        eta = tuple(float(x) for x in self.eta)
        if len(eta) != 15:
            raise ValueError(f"expected 15 angles, got {len(eta)}")
        for i, (x, hi) in enumerate(zip(eta, CHOLESKY_ANGLE_HIGH)):
            if not 0.0 <= x <= hi:
                raise ValueError(f"eta[{i}]={x} outside [0, {hi}]")
        object.__setattr__(self, "eta", eta)


def mat_equal(a: np.ndarray, b: np.ndarray, atol: float = ATOL) -> bool:
    """Elementwise equality of two matrices up to an absolute tolerance."""
    return bool(np.all(np.abs(np.asarray(a) - np.asarray(b)) <= atol))


def check_density_matrix(rho: np.ndarray, atol: float = ATOL) -> np.ndarray:
    """Validate a 4x4 density matrix (Hermitian, unit trace, PSD).

    Positivity is checked against a small negative eigenvalue floor so that
    states on the boundary survive rounding. Returns ``rho`` unchanged.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got shape {rho.shape}")
    if not mat_equal(rho, rho.conj().T, atol):
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > atol:
        raise ValueError(f"density matrix trace is {tr}, expected 1")
    lo = np.linalg.eigvalsh(rho).min()
    if lo < PSD_FLOOR:
        raise ValueError(f"density matrix has eigenvalue {lo} < {PSD_FLOOR}")
    return rho


def rotation2(angle: float) -> np.ndarray:
    """Real 2x2 rotation [[cos, sin], [-sin, cos]]."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s], [-s, c]], dtype=complex)


def momentum_rotation(phi: float) -> np.ndarray:
    """Momentum-qubit rotation realized by the balanced interferometer.

    Equal to the component product ``V_BS V(phi) V_MR V_BS`` and carries the
    physically irrelevant global phase ``i e^{i phi}``; downstream consumers
    must compare probabilities, not amplitudes.
    """
    return 1j * np.exp(1j * phi) * rotation2(phi)


def polarization_rotation(theta: float) -> np.ndarray:
    """Polarization-qubit rotation implemented by the half-wave plates."""
    return rotation2(theta)


def ideal_probabilities(rho: np.ndarray, phi: float, theta: float) -> np.ndarray:
    """Outcome probabilities of the PVM after the ideal product rotation.

    Returns the four channel probabilities (basis order) of measuring the
    rotated state; they are clamped to [0, 1] after an internal consistency
    check against negative/overshooting values.
    """
    u = np.kron(momentum_rotation(phi), polarization_rotation(theta))
    p = np.einsum("jk,kl,jl->j", u, np.asarray(rho, dtype=complex), u.conj()).real
    if p.min() < -PROB_CLAMP_SLACK or p.max() > 1.0 + PROB_CLAMP_SLACK:
        raise ValueError(f"probabilities out of range beyond slack: {p}")
    return np.clip(p, 0.0, 1.0)


def ideal_probability(rho: np.ndarray, phi: float, theta: float, out: Outcome) -> float:
    """Probability of a single outcome under the ideal product measurement."""
    return float(ideal_probabilities(rho, phi, theta)[out.index])


def _rho_pure(delta: float, t0n: float, t1n: float) -> np.ndarray:
    """Projector on t0n |0V> + t1n e^{i delta} |1H>."""
    psi = np.zeros(4, dtype=complex)
    psi[0] = t0n
    psi[3] = t1n * np.exp(1j * delta)
    return np.outer(psi, psi.conj())


def waveplate_error_rotation(pi1: float, pi2: float) -> np.ndarray:
    """Block-diagonal polarization rotation by pi1 in path 0 and pi2 in path 1."""
    r = np.zeros((4, 4), dtype=complex)
    r[0:2, 0:2] = rotation2(pi1)
    r[2:4, 2:4] = rotation2(pi2)
    return r


def model_state(p: StateParams) -> np.ndarray:
    """Source state: visibility-blended entangled state with wave-plate errors.

    Builds ``R(pi1, pi2) rho_s(v, delta) R(pi1, pi2)^dag`` where ``rho_s`` is
    the pure target state mixed with white noise at visibility ``v``.
    """
    rho_s = p.v * _rho_pure(p.delta, p.t0n, p.t1n) + (1.0 - p.v) * np.eye(4) / 4.0
    r = waveplate_error_rotation(p.pi1, p.pi2)
    return check_density_matrix(r @ rho_s @ r.conj().T)


def hypersphere_coords(eta: np.ndarray) -> np.ndarray:
    """Map batched 15-angle vectors to unit vectors in R^16.

    ``eta`` has shape (..., 15); the result has shape (..., 16) and unit
    Euclidean norm (radius fixed to 1).
    """
    eta = np.asarray(eta, dtype=float)
    x = np.empty(eta.shape[:-1] + (16,))
    sin_running = np.ones(eta.shape[:-1])
    for k in range(15):
        x[..., k] = np.cos(eta[..., k]) * sin_running
        sin_running = sin_running * np.sin(eta[..., k])
    x[..., 15] = sin_running
    return x


# (row, col) slots of the Cholesky factor: x1..x4 on the diagonal, x5..x10
# filling the upper triangle of the real part, x11..x16 the strictly upper
# triangle of the imaginary part.
_CHOL_REAL_SLOTS = ((0, 0), (1, 1), (2, 2), (3, 3),
                    (0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (0, 3))
_CHOL_IMAG_SLOTS = ((0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (0, 3))


def cholesky_states(eta: np.ndarray) -> np.ndarray:
    """Vectorized map from (..., 15) angle arrays to (..., 4, 4) density matrices.

    The matrices are positive semidefinite with unit trace by construction
    (the 16 Cholesky entries live on the unit sphere).
    """
    x = hypersphere_coords(eta)
    t = np.zeros(x.shape[:-1] + (4, 4), dtype=complex)
    for i, (r, c) in enumerate(_CHOL_REAL_SLOTS):
        t[..., r, c] += x[..., i]
    for i, (r, c) in enumerate(_CHOL_IMAG_SLOTS):
        t[..., r, c] += 1j * x[..., 10 + i]
    return np.einsum("...ji,...jk->...ik", t.conj(), t)


def cholesky_state(angles: CholeskyAngles) -> np.ndarray:
    """Density matrix for one 15-angle vector (see :func:`cholesky_states`)."""
    return check_density_matrix(cholesky_states(np.asarray(angles.eta)))


def model_states(v: np.ndarray, delta: np.ndarray, pi1: np.ndarray,
                 pi2: np.ndarray, t0n, t1n) -> np.ndarray:
    """Vectorized :func:`model_state` over batched (v, delta, pi1, pi2).

    All inputs (including the normalized transmissions) broadcast to a
    common shape (...,); the result has shape (..., 4, 4). No validity
    checks are performed: optimizer probes may sit slightly outside the
    physical box.
    """
    v, delta, pi1, pi2, t0n, t1n = np.broadcast_arrays(v, delta, pi1, pi2, t0n, t1n)
    shape = v.shape
    psi = np.zeros(shape + (4,), dtype=complex)
    psi[..., 0] = t0n
    psi[..., 3] = t1n * np.exp(1j * delta)
    pure = psi[..., :, None] * psi.conj()[..., None, :]
    rho_s = v[..., None, None] * pure + (1.0 - v)[..., None, None] * (np.eye(4) / 4.0)
    r = np.zeros(shape + (4, 4))
    c1, s1 = np.cos(pi1), np.sin(pi1)
    c2, s2 = np.cos(pi2), np.sin(pi2)
    r[..., 0, 0] = c1
    r[..., 0, 1] = s1
    r[..., 1, 0] = -s1
    r[..., 1, 1] = c1
    r[..., 2, 2] = c2
    r[..., 2, 3] = s2
    r[..., 3, 2] = -s2
    r[..., 3, 3] = c2
    return np.einsum("...jk,...kl,...ml->...jm", r, rho_s, r)
