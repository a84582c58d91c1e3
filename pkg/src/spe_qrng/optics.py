"""Non-ideal optical model: lossy polarization-dependent components.

The beam splitters and delay-line mirrors of the interferometer transmit the
two polarizations differently and absorb part of the light, so the full
4x4 evolution is neither unitary nor a momentum (x) polarization product.
Detection probabilities are renormalized by the surviving trace. A tunable
family of *product-form* unitaries (parameterized by two beam-splitter
angles alpha, beta) serves as the reference the lossy model is compared
against when bounding non-ideality.

Component coefficients are stored at amplitude level (square roots of the
measured power coefficients); uncertainties follow by the first-order rule
``sigma_amp = sigma_power / (2 amp)``. Everything here is a pure function
over frozen parameter objects and safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SurvivalTraceZero
from .quantum import Outcome, rotation2, v_phase

TRACE_FLOOR = 1e-12
_SQ5 = math.sqrt(0.5)
_SWAP2 = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


def _amp(power: float, sigma: float) -> tuple[float, float]:
    """Amplitude and first-order amplitude uncertainty from a power coefficient."""
    if power < 0:
        raise ValueError(f"power coefficient must be nonnegative, got {power}")
    a = math.sqrt(power)
    return a, (sigma / (2.0 * a) if a > 0 else 0.0)


@dataclass(frozen=True)
class BeamSplitterParams:
    """Amplitude transmission/reflection of one beam splitter, per polarization."""

    t_v: float
    r_v: float
    t_h: float
    r_h: float
    t_v_err: float = 0.0
    r_v_err: float = 0.0
    t_h_err: float = 0.0
    r_h_err: float = 0.0

    def __post_init__(self) -> None:
        for name in ("t_v", "r_v", "t_h", "r_h"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.t_v ** 2 + self.r_v ** 2 > 1 + 1e-9 or self.t_h ** 2 + self.r_h ** 2 > 1 + 1e-9:
            raise ValueError("beam splitter gains power: t^2 + r^2 > 1")

    @classmethod
    def from_powers(cls, t_v2, r_v2, t_h2, r_h2) -> "BeamSplitterParams":
        """Build from measured (power, sigma) pairs."""
        tv, dtv = _amp(*t_v2)
        rv, drv = _amp(*r_v2)
        th, dth = _amp(*t_h2)
        rh, drh = _amp(*r_h2)
        return cls(tv, rv, th, rh, dtv, drv, dth, drh)

    @classmethod
    def balanced(cls) -> "BeamSplitterParams":
        return cls(_SQ5, _SQ5, _SQ5, _SQ5)


@dataclass(frozen=True)
class MirrorParams:
    """Amplitude transmissions of the two delay lines, per polarization.

    Delay line 1 feeds path 0 of the second beam splitter, delay line 2
    feeds path 1.
    """

    g_v1: float
    g_h1: float
    g_v2: float
    g_h2: float
    g_v1_err: float = 0.0
    g_h1_err: float = 0.0
    g_v2_err: float = 0.0
    g_h2_err: float = 0.0

    def __post_init__(self) -> None:
        for name in ("g_v1", "g_h1", "g_v2", "g_h2"):
            val = getattr(self, name)
            if not 0 <= val <= 1 + 1e-9:
                raise ValueError(f"{name} must satisfy |gamma| <= 1, got {val}")

    @classmethod
    def from_powers(cls, g_v1_2, g_h1_2, g_v2_2, g_h2_2) -> "MirrorParams":
        gv1, dgv1 = _amp(*g_v1_2)
        gh1, dgh1 = _amp(*g_h1_2)
        gv2, dgv2 = _amp(*g_v2_2)
        gh2, dgh2 = _amp(*g_h2_2)
        return cls(gv1, gh1, gv2, gh2, dgv1, dgh1, dgv2, dgh2)

    @classmethod
    def lossless(cls) -> "MirrorParams":
        return cls(1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class ComponentSet:
    """All measured amplitude coefficients of the optical train.

    ``t0``/``t1`` are the generation-stage path transmissions; they only
    enter through their normalized ratio (the source-state amplitudes).
    """

    bs1: BeamSplitterParams
    bs2: BeamSplitterParams
    mirror: MirrorParams
    t0: float = _SQ5
    t1: float = _SQ5
    t0_err: float = 0.0
    t1_err: float = 0.0

    @classmethod
    def ideal(cls) -> "ComponentSet":
        """Lossless balanced components (the textbook interferometer)."""
        return cls(BeamSplitterParams.balanced(), BeamSplitterParams.balanced(),
                   MirrorParams.lossless())

    @property
    def t0n(self) -> float:
        """Normalized path-0 transmission amplitude."""
        return self.t0 / math.hypot(self.t0, self.t1)

    @property
    def t1n(self) -> float:
        return self.t1 / math.hypot(self.t0, self.t1)

    def amplitude_vector(self) -> tuple[np.ndarray, np.ndarray]:
        """All 14 amplitude coefficients and their uncertainties, fixed order."""
        b1, b2, m = self.bs1, self.bs2, self.mirror
        vals = np.array([b1.t_v, b1.r_v, b1.t_h, b1.r_h,
                         b2.t_v, b2.r_v, b2.t_h, b2.r_h,
                         m.g_v1, m.g_h1, m.g_v2, m.g_h2,
                         self.t0, self.t1])
        errs = np.array([b1.t_v_err, b1.r_v_err, b1.t_h_err, b1.r_h_err,
                         b2.t_v_err, b2.r_v_err, b2.t_h_err, b2.r_h_err,
                         m.g_v1_err, m.g_h1_err, m.g_v2_err, m.g_h2_err,
                         self.t0_err, self.t1_err])
        return vals, errs

    def with_amplitudes(self, vals: np.ndarray) -> "ComponentSet":
        """Rebuild the set from a 14-vector (uncertainties dropped)."""
        v = np.clip(np.asarray(vals, dtype=float), 0.0, None)
        return ComponentSet(
            bs1=BeamSplitterParams(*v[0:4]),
            bs2=BeamSplitterParams(*v[4:8]),
            mirror=MirrorParams(*np.clip(v[8:12], 0.0, 1.0)),
            t0=v[12], t1=v[13],
        )


def real_bs(p: BeamSplitterParams) -> np.ndarray:
    """Lossy beam splitter on the full 4-dimensional space.

    Transmissions are real and sit on the diagonal per polarization;
    reflections couple the two paths with a factor ``i``.
    """
    return np.array([
        [p.t_v, 0, 1j * p.r_v, 0],
        [0, p.t_h, 0, 1j * p.r_h],
        [1j * p.r_v, 0, p.t_v, 0],
        [0, 1j * p.r_h, 0, p.t_h],
    ], dtype=complex)


def real_mirror(p: MirrorParams) -> np.ndarray:
    """Delay-line mirrors: swap the two paths with per-polarization attenuation."""
    return np.array([
        [0, 0, p.g_v1, 0],
        [0, 0, 0, p.g_h1],
        [p.g_v2, 0, 0, 0],
        [0, p.g_h2, 0, 0],
    ], dtype=complex)


def _phase_block(phi) -> np.ndarray:
    """(V(phi) x I2) as a batched diagonal: phase on the path-0 rows."""
    phi = np.asarray(phi, dtype=float)
    d = np.ones(phi.shape + (4,), dtype=complex)
    d[..., 0] = d[..., 1] = np.exp(2j * phi)
    return d


def _pol_block(theta) -> np.ndarray:
    """(I2 x U_theta) as a batched 4x4 block-diagonal rotation."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    u = np.zeros(theta.shape + (4, 4), dtype=complex)
    for off in (0, 2):
        u[..., off, off] = c
        u[..., off, off + 1] = s
        u[..., off + 1, off] = -s
        u[..., off + 1, off + 1] = c
    return u


def u_real_batch(phi, theta, ubs1: np.ndarray, ubs2: np.ndarray,
                 umr: np.ndarray) -> np.ndarray:
    """Batched lossy evolution (I x U_theta) U_BS2 (V(phi) x I) U_Mr U_BS1.

    ``phi``/``theta`` broadcast against the leading dimensions of the
    component matrices, so either the angles or the components (or both)
    may carry a batch axis.
    """
    m0 = np.einsum("...jk,...kl->...jl", umr, ubs1)
    t1 = _phase_block(phi)[..., :, None] * m0
    t2 = np.einsum("...jk,...kl->...jl", ubs2, t1)
    return np.einsum("...jk,...kl->...jl", _pol_block(theta), t2)


def u_real(phi: float, theta: float, c: ComponentSet) -> np.ndarray:
    """Lossy 4x4 evolution of the full interferometer (generally non-unitary)."""
    return u_real_batch(phi, theta, real_bs(c.bs1), real_bs(c.bs2),
                        real_mirror(c.mirror))


def symmetric_bs(angle: float) -> np.ndarray:
    """Polarization-independent beam splitter with mixing angle in [0, pi/2]."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 1j * s], [1j * s, c]], dtype=complex)


def u_ideal_tilde(phi: float, theta: float, alpha: float, beta: float) -> np.ndarray:
    """Product-form unitary reference with adjustable beam-splitter angles.

    alpha (first BS) and beta (second BS) range over [0, pi/2]; the balanced
    case alpha = beta = pi/4 reproduces the ideal rotation. The result always
    factors as (momentum operator) x (polarization rotation).
    """
    if not (0 <= alpha <= math.pi / 2 and 0 <= beta <= math.pi / 2):
        raise ValueError("alpha and beta must lie in [0, pi/2]")
    um = symmetric_bs(beta) @ v_phase(phi) @ _SWAP2 @ symmetric_bs(alpha)
    return np.kron(um, rotation2(theta))


def tilde_momentum_batch(phi, b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Batched 2x2 momentum factor of the product-form reference."""
    left = b2
    right = _SWAP2 @ b1
    phi = np.asarray(phi, dtype=float)
    d = np.ones(phi.shape + (2,), dtype=complex)
    d[..., 0] = np.exp(2j * phi)
    mid = d[..., :, None] * right
    return np.einsum("jk,...kl->...jl", left, mid)


def u_ideal_tilde_batch(phi, theta, alpha: float, beta: float) -> np.ndarray:
    """Batched product-form reference unitary (see :func:`u_ideal_tilde`)."""
    um = tilde_momentum_batch(phi, symmetric_bs(alpha), symmetric_bs(beta))
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    ut = np.zeros(theta.shape + (2, 2), dtype=complex)
    ut[..., 0, 0] = c
    ut[..., 0, 1] = s
    ut[..., 1, 0] = -s
    ut[..., 1, 1] = c
    u = np.einsum("...ac,...bd->...abcd", um, ut)
    return u.reshape(u.shape[:-4] + (4, 4))


def channel_weights(u: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Diagonal of U rho U^dag: unnormalized channel weights (batched)."""
    return np.einsum("...jk,...kl,...jl->...j", u, rho, u.conj()).real


def real_probabilities(rho: np.ndarray, phi: float, theta: float,
                       c: ComponentSet) -> np.ndarray:
    """All four renormalized detection probabilities of the lossy model.

    Raises :class:`SurvivalTraceZero` when essentially every photon is lost
    and the conditional distribution is undefined.
    """
    w = channel_weights(u_real(phi, theta, c), np.asarray(rho, dtype=complex))
    total = w.sum()
    if total <= TRACE_FLOOR:
        raise SurvivalTraceZero(f"surviving trace {total} <= {TRACE_FLOOR}")
    return np.clip(w / total, 0.0, 1.0)


def real_probability(rho: np.ndarray, phi: float, theta: float, out: Outcome,
                     c: ComponentSet) -> float:
    """One renormalized outcome probability of the lossy model."""
    return float(real_probabilities(rho, phi, theta, c)[out.index])


def tilde_probabilities(rho: np.ndarray, phi: float, theta: float,
                        alpha: float, beta: float) -> np.ndarray:
    """Outcome probabilities under the product-form reference (no renormalization)."""
    w = channel_weights(u_ideal_tilde(phi, theta, alpha, beta),
                        np.asarray(rho, dtype=complex))
    return np.clip(w, 0.0, 1.0)
