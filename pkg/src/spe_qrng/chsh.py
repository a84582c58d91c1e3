"""CHSH correlation, guessing-probability bounds, and certified min-entropy.

The correlation function combines the four angle settings with a fixed sign
convention: channels {1, 4} count as equal outcomes (a = b), and the
negative sign sits on the (phi0, theta1) acquisition. That placement, and
equivalently the momentum-setting index assignment, is pinned down by the
published counts reproducing the measured violation; see the acceptance
tests.

``certify`` assembles the full chain: estimate the violation from counts,
bound the adversary's guessing probability (widened by the non-ideality
bounds e_P and e_I), correct for detector memory, and convert to min-entropy
per detected symbol and an extractable-bit rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import markov as mk
from .errors import EmptySubinterval, InsufficientData
from .ingest import subinterval_frequencies
from .optics import ComponentSet, real_probabilities
from .quantum import ideal_probabilities

TSIRELSON = 2.0 * math.sqrt(2.0)

#: Setting order (x, y) = (momentum index, polarization index) used by count
#: tables, and the CHSH sign of each setting. The lone minus sign belongs to
#: the (phi0, theta1) acquisition.
SETTING_ORDER = ((0, 0), (1, 0), (0, 1), (1, 1))
SETTING_SIGNS = (1.0, 1.0, -1.0, 1.0)


@dataclass(frozen=True)
class AngleSettings:
    """The two momentum and two polarization measurement angles (radians)."""

    phi0: float
    phi1: float
    theta0: float
    theta1: float

    def __post_init__(self) -> None:
        for name in ("phi0", "phi1", "theta0", "theta1"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def maximal_violation(cls) -> "AngleSettings":
        """Angles at which the ideal entangled state saturates the quantum bound."""
        return cls(3 * math.pi / 8, 5 * math.pi / 8, 0.0, math.pi / 4)

    def angles_for(self, x: int, y: int) -> tuple[float, float]:
        return ((self.phi0, self.phi1)[x], (self.theta0, self.theta1)[y])


@dataclass(frozen=True)
class CountTable:
    """Channel counts per setting with the acquisition duration per setting.

    ``counts[s, c]`` is the number of accepted events in channel ``c + 1``
    for setting ``SETTING_ORDER[s]``.
    """

    counts: np.ndarray
    duration_s: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        duration = np.asarray(self.duration_s, dtype=float)
        if counts.shape != (4, 4) or (counts < 0).any():
            raise ValueError("counts must be a 4x4 array of nonnegative integers")
        if duration.shape != (4,) or (duration <= 0).any():
            raise ValueError("need a positive duration per setting")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "duration_s", duration)

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def n_raw(self) -> int:
        return int(self.counts.sum())

    @property
    def total_duration_s(self) -> float:
        return float(self.duration_s.sum())

    def probabilities(self) -> np.ndarray:
        return self.counts / self.totals[:, None]


def _correlator(p: np.ndarray) -> np.ndarray:
    """E = P(a = b) - P(a != b) from channel probabilities (last axis)."""
    return p[..., 0] + p[..., 3] - p[..., 1] - p[..., 2]


def chsh_combination(per_setting_probs: np.ndarray) -> float:
    """Signed CHSH sum over the fixed setting order."""
    e = _correlator(np.asarray(per_setting_probs))
    return float(np.dot(SETTING_SIGNS, e))


def chsh_ideal(rho: np.ndarray, s: AngleSettings) -> float:
    """CHSH value of a state under the ideal product measurement model."""
    p = np.stack([ideal_probabilities(rho, *s.angles_for(x, y))
                  for x, y in SETTING_ORDER])
    return chsh_combination(p)


def chsh_real(rho: np.ndarray, s: AngleSettings, c: ComponentSet) -> float:
    """CHSH value under the lossy component model (renormalized probabilities)."""
    p = np.stack([real_probabilities(rho, *s.angles_for(x, y), c)
                  for x, y in SETTING_ORDER])
    return chsh_combination(p)


@dataclass(frozen=True)
class ChshEstimate:
    """Empirical CHSH estimate with its uncertainty and input probabilities."""

    i_hat: float
    std_error: float
    probabilities: np.ndarray
    raw_probabilities: np.ndarray
    markov_corrected: bool
    subinterval_values: np.ndarray | None = field(default=None, repr=False)


def estimate_chsh(counts: CountTable,
                  sequences: dict | None = None,
                  k: int = 5,
                  detector: mk.DetectorParams | None = None) -> ChshEstimate:
    """Estimate the CHSH violation from per-setting channel counts.

    When the per-setting symbol sequences are available the probabilities
    are corrected with the detector-memory MLE (using each acquisition's own
    accepted rate) and the uncertainty is the standard error of the CHSH
    value over ``k`` equal sub-intervals. With counts alone the estimate is
    the plug-in value and the uncertainty follows from multinomial variance.

    ``sequences`` maps the setting pair (x, y) to its
    :class:`~spe_qrng.ingest.SymbolSequence`.
    """
    if (counts.totals < 100 * k).any():
        raise InsufficientData(
            f"every setting needs at least {100 * k} events, totals are "
            f"{counts.totals.tolist()}")
    raw = counts.probabilities()

    probs = raw.copy()
    corrected = False
    if sequences is not None and detector is not None:
        probs = np.empty_like(raw)
        for i, xy in enumerate(SETTING_ORDER):
            seq = sequences[xy]
            rate = len(seq) / counts.duration_s[i]
            est = mk.mle_estimate(mk.TransitionCounts.from_symbols(seq.symbols),
                                  detector.with_rate(rate))
            probs[i] = est.p_hat
        corrected = True

    i_hat = chsh_combination(probs)

    sub_values = None
    if sequences is not None:
        sub_probs = np.empty((k, 4, 4))
        for i, xy in enumerate(SETTING_ORDER):
            try:
                sub_probs[:, i] = subinterval_frequencies(sequences[xy], k)
            except EmptySubinterval as exc:
                raise InsufficientData(
                    f"setting {xy}: {exc}") from exc
        sub_values = np.array([chsh_combination(sub_probs[sl]) for sl in range(k)])
        std_error = float(sub_values.std(ddof=1) / math.sqrt(k))
    else:
        e = _correlator(raw)
        var = (1.0 - e ** 2) / counts.totals
        std_error = float(math.sqrt(var.sum()))

    return ChshEstimate(i_hat=float(i_hat), std_error=std_error,
                        probabilities=probs, raw_probabilities=raw,
                        markov_corrected=corrected,
                        subinterval_values=sub_values)


def guessing_bound(i_hat: float, e_i: float = 0.0, e_p: float = 0.0) -> float:
    """Adversary guessing probability allowed by a CHSH violation.

    ``1/2 + 1/2 sqrt(2 - (|i_hat| - e_i)^2 / 4) + e_p``, clamped to 1. A
    result of 1 certifies nothing (vacuous bound); callers should check
    :func:`is_vacuous`.
    """
    if e_i < 0 or e_p < 0:
        raise ValueError("non-ideality bounds must be nonnegative")
    t = abs(i_hat) - e_i
    if t > TSIRELSON + 1e-9:
        raise ValueError(f"|i_hat| - e_i = {t} exceeds the quantum bound")
    t = min(max(t, 0.0), TSIRELSON)
    p = 0.5 + 0.5 * math.sqrt(max(2.0 - t * t / 4.0, 0.0)) + e_p
    return min(p, 1.0)


def is_vacuous(p_guess: float) -> bool:
    """True when the guessing bound certifies no randomness at all."""
    return p_guess >= 1.0 - 1e-12


@dataclass(frozen=True)
class CertificationResult:
    """Certified min-entropy of one dataset under one trust level."""

    i_hat: float
    i_hat_err: float
    e_p: float
    e_p_err: float
    e_i: float
    e_i_err: float
    p_guess_star: float
    h_min_star: float
    h_min_star_err: float
    bits_per_second: float
    n_raw: int
    duration_s: float
    lambda_eff: float
    trust: str
    vacuous: bool
    markov_corrected: bool

    def to_dict(self) -> dict:
        out = {}
        for name, value in self.__dict__.items():
            out[name] = (value.item() if isinstance(value, np.generic) else value)
        return out


def _h_star(i_hat: float, e_i: float, e_p: float, det: mk.DetectorParams) -> tuple[float, float]:
    """Memory-corrected guessing probability and min-entropy in bits/symbol."""
    p_max = guessing_bound(i_hat, e_i, e_p)
    p_star = min(mk.effective_guessing(p_max, det), 1.0)
    if is_vacuous(p_star):
        return 1.0, 0.0
    return p_star, -math.log2(p_star)


def certify(counts: CountTable, e_p: float, e_i: float,
            det: mk.DetectorParams, trust: str = "unspecified",
            e_p_err: float = 0.0, e_i_err: float = 0.0,
            sequences: dict | None = None, k: int = 5) -> CertificationResult:
    """Run the complete certification chain on one dataset.

    ``e_p``/``e_i`` are the non-ideality bounds for the chosen trust level
    (precomputed by the bounds optimizer for the component set in use, or
    injected from a cache). When the detector's ``lambda_eff`` is zero it is
    filled from the dataset's aggregate accepted-event rate.

    The entropy rate identity ``bits_per_second = n_raw * h_min_star /
    duration`` holds exactly by construction.
    """
    est = estimate_chsh(counts, sequences=sequences, k=k,
                        detector=det if sequences is not None else None)
    if det.lambda_eff <= 0:
        det = det.with_rate(counts.n_raw / counts.total_duration_s)

    p_star, h = _h_star(est.i_hat, e_i, e_p, det)

    # first-order error propagation through the certification chain
    def h_of(i, ei, ep):
        return _h_star(i, max(ei, 0.0), max(ep, 0.0), det)[1]

    di, de = 1e-6, 1e-6
    dh_di = (h_of(est.i_hat + di, e_i, e_p) - h_of(est.i_hat - di, e_i, e_p)) / (2 * di)
    dh_dei = (h_of(est.i_hat, e_i + de, e_p) - h_of(est.i_hat, max(e_i - de, 0), e_p)) / (2 * de)
    dh_dep = (h_of(est.i_hat, e_i, e_p + de) - h_of(est.i_hat, e_i, max(e_p - de, 0))) / (2 * de)
    h_err = math.sqrt((dh_di * est.std_error) ** 2 + (dh_dei * e_i_err) ** 2
                      + (dh_dep * e_p_err) ** 2)

    duration = counts.total_duration_s
    return CertificationResult(
        i_hat=est.i_hat, i_hat_err=est.std_error,
        e_p=e_p, e_p_err=e_p_err, e_i=e_i, e_i_err=e_i_err,
        p_guess_star=p_star, h_min_star=h, h_min_star_err=h_err,
        bits_per_second=counts.n_raw * h / duration,
        n_raw=counts.n_raw, duration_s=duration,
        lambda_eff=det.lambda_eff, trust=trust,
        vacuous=is_vacuous(p_star),
        markov_corrected=est.markov_corrected,
    )
