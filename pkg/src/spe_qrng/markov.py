"""Markov model of detector memory: afterpulsing and dead time.

Afterpulses re-fire the detector that just clicked and the dead time skews
which detector catches the next photon, so consecutive symbols from the
four-channel measurement are weakly correlated. Under Poissonian arrivals
(effective detected rate ``lambda_eff``), small afterpulse probability and
``lambda_eff * T_dead`` of order 1e-2 or less, the symbol stream is a
stationary first-order Markov chain whose transition matrix is an explicit
function of the underlying channel probabilities ``p``. This module provides
that transition law, an exact sampler for it, the constrained maximum
likelihood estimator inverting it, and the worst-case correction ``M`` that
maps an i.i.d. guessing bound to one valid in the presence of memory.

All functions are pure; simulation is a single stream per seed, and
replicated simulations can run concurrently on independently derived seeds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .errors import DegenerateData
from .ingest import SymbolSequence

#: Model-validity guards: beyond these the Markov approximation degrades.
MAX_LAMBDA_TDEAD = 0.05
MAX_P_AFTER = 0.01


@dataclass(frozen=True)
class DetectorParams:
    """Single-photon detector characteristics relevant to memory effects.

    t_dead is the dead time in seconds, p_after the afterpulse probability,
    lambda_eff the effective detected rate in Hz (aggregated over the four
    detectors).
    """

    t_dead: float
    p_after: float
    lambda_eff: float

    def __post_init__(self) -> None:
        if self.t_dead < 0 or self.lambda_eff < 0:
            raise ValueError("dead time and rate must be nonnegative")
        if not 0 <= self.p_after <= 1:
            raise ValueError("afterpulse probability must be in [0, 1]")
        if self.lambda_td > MAX_LAMBDA_TDEAD:
            warnings.warn(
                f"lambda_eff * t_dead = {self.lambda_td:.3g} exceeds "
                f"{MAX_LAMBDA_TDEAD}; the Markov model may be inaccurate",
                RuntimeWarning, stacklevel=2)
        if self.p_after > MAX_P_AFTER:
            warnings.warn(
                f"afterpulse probability {self.p_after} exceeds {MAX_P_AFTER}",
                RuntimeWarning, stacklevel=2)

    @property
    def lambda_td(self) -> float:
        """Dimensionless dead-time load lambda_eff * t_dead."""
        return self.lambda_eff * self.t_dead

    def with_rate(self, lambda_eff: float) -> "DetectorParams":
        return DetectorParams(self.t_dead, self.p_after, lambda_eff)


@dataclass(frozen=True)
class TransitionCounts:
    """Observed transition counts n[i][j] (i -> j) plus the first symbol."""

    n: np.ndarray
    first_symbol: int

    def __post_init__(self) -> None:
        n = np.asarray(self.n)
        if n.shape != (4, 4) or (n < 0).any():
            raise ValueError("need a 4x4 array of nonnegative counts")
        if self.first_symbol not in (1, 2, 3, 4):
            raise ValueError("first symbol must be a channel in 1..4")
        object.__setattr__(self, "n", n.astype(np.int64))

    @property
    def total(self) -> int:
        return int(self.n.sum())

    @classmethod
    def from_symbols(cls, symbols: np.ndarray) -> "TransitionCounts":
        symbols = np.asarray(symbols)
        if symbols.size < 2:
            raise ValueError("need at least two symbols to count transitions")
        idx = symbols.astype(np.int64) - 1
        flat = np.bincount(idx[:-1] * 4 + idx[1:], minlength=16)
        return cls(flat.reshape(4, 4), int(symbols[0]))


@dataclass(frozen=True)
class ProbEstimate:
    """Channel probabilities with two-sided confidence bounds.

    Channels that never occur are pinned to zero with a one-sided upper
    bound; their indices are listed in ``degenerate``.
    """

    p_hat: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    level: float = 0.95
    degenerate: tuple = ()


def _q_matrix(p: np.ndarray) -> np.ndarray:
    """Dead-time redistribution kernel: q_ij = p_i^2 on, (1+p_i) p_j off diagonal."""
    p = np.asarray(p, dtype=float)
    q = (1.0 + p)[:, None] * p[None, :]
    np.fill_diagonal(q, p ** 2)
    return q


def transition_matrix(p: np.ndarray, d: DetectorParams) -> np.ndarray:
    """Row-stochastic transition law of the detector-memory chain.

    P_ij = p_a delta_ij + (1 - p_a) ((1 - lambda T_d) p_j + lambda T_d q_ij).
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (4,) or (p < 0).any():
        raise ValueError("p must be four nonnegative probabilities")
    if abs(p.sum() - 1.0) > 1e-10:
        raise ValueError(f"probabilities must sum to 1, got {p.sum()}")
    lt = d.lambda_td
    mat = (1.0 - d.p_after) * ((1.0 - lt) * np.tile(p, (4, 1)) + lt * _q_matrix(p))
    return mat + d.p_after * np.eye(4)


def stationary_distribution(mat: np.ndarray) -> np.ndarray:
    """Stationary row vector of a 4x4 stochastic matrix (unit left eigenvector)."""
    vals, vecs = np.linalg.eig(np.asarray(mat, dtype=float).T)
    k = int(np.argmin(np.abs(vals - 1.0)))
    pi = np.real(vecs[:, k])
    pi = np.abs(pi)
    return pi / pi.sum()


def chain_symbols(p: np.ndarray, d: DetectorParams, n: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Sample ``n`` chain symbols using the caller's generator.

    The transition law is a three-way mixture: with probability p_a the
    previous symbol repeats, with probability (1-p_a)(1-lambda T_d) the next
    symbol is an independent draw from ``p``, otherwise it follows the
    dead-time kernel row. Branches and candidate i.i.d. draws are generated
    up front; only the rare non-i.i.d. steps are resolved sequentially. The
    first symbol comes from the stationary distribution.
    """
    if n < 2:
        raise ValueError("chain length must be at least 2")
    p = np.asarray(p, dtype=float)
    mat = transition_matrix(p, d)

    cum_p = np.cumsum(p)
    cum_q = np.cumsum(_q_matrix(p), axis=1)

    symbols = np.empty(n, dtype=np.int8)
    symbols[0] = 1 + np.searchsorted(np.cumsum(stationary_distribution(mat)),
                                     rng.random())

    u_branch = rng.random(n - 1)
    u_value = rng.random(n - 1)
    # candidate next-symbols as if every step were the i.i.d. branch
    symbols[1:] = 1 + np.searchsorted(cum_p, u_value)

    thresh_stay = d.p_after
    thresh_iid = d.p_after + (1.0 - d.p_after) * (1.0 - d.lambda_td)
    special = np.nonzero(u_branch >= thresh_iid)[0]
    stays = np.nonzero(u_branch < thresh_stay)[0]
    # resolve in time order so each step sees the final previous symbol
    order = np.sort(np.concatenate([special, stays]))
    is_stay = np.isin(order, stays)
    for t, stay in zip(order, is_stay):
        prev = symbols[t]
        if stay:
            symbols[t + 1] = prev
        else:
            symbols[t + 1] = 1 + np.searchsorted(cum_q[prev - 1], u_value[t])
    return symbols


def simulate_chain(p: np.ndarray, d: DetectorParams, n: int,
                   seed: int) -> SymbolSequence:
    """Seeded, deterministic chain realization (see :func:`chain_symbols`)."""
    symbols = chain_symbols(p, d, n, np.random.default_rng(seed))
    return SymbolSequence(symbols=symbols, bin_ns=0, n_bins_total=n,
                          n_empty=0, n_multi=0)


def _softmax_simplex(z: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Map free logits to the simplex over ``active`` channels (last logit 0)."""
    full = np.zeros(4)
    logits = np.concatenate([z, [0.0]])
    logits -= logits.max()
    w = np.exp(logits)
    full[active] = w / w.sum()
    return full


def _loglik_and_grad(p: np.ndarray, counts: TransitionCounts,
                     d: DetectorParams) -> tuple[float, np.ndarray]:
    """Mean log-likelihood of the chain and its gradient in p-space."""
    n = counts.n
    total = max(counts.total, 1)
    lt = d.lambda_td
    pa = d.p_after
    mat = (1.0 - pa) * ((1.0 - lt) * np.tile(p, (4, 1)) + lt * _q_matrix(p))
    mat += pa * np.eye(4)

    first = counts.first_symbol - 1
    with np.errstate(divide="ignore"):
        logm = np.where(n > 0, np.log(np.where(mat > 0, mat, 1.0)), 0.0)
    ll = float((n * logm).sum())
    grad = np.zeros(4)
    if p[first] > 0:
        ll += np.log(p[first])
        grad[first] += 1.0 / p[first]

    ratio = np.where(mat > 0, n / np.where(mat > 0, mat, 1.0), 0.0)
    # dP_ij/dp_k: diagonal terms depend on p_i only, off-diagonal on p_i and p_j
    diag_coeff = (1.0 - pa) * ((1.0 - lt) + 2.0 * lt * p)
    grad += np.diag(ratio) * diag_coeff
    off = ratio.copy()
    np.fill_diagonal(off, 0.0)
    grad += (1.0 - pa) * (1.0 + lt * p) @ off          # via p_j, j = column
    grad += (1.0 - pa) * lt * (off @ p)                # via p_i, i = row
    return ll / total, grad / total


def mle_estimate(counts: TransitionCounts, d: DetectorParams,
                 level: float = 0.95, min_transitions: int = 1000) -> ProbEstimate:
    """Constrained maximum-likelihood channel probabilities with intervals.

    The four probabilities are optimized on the simplex through a logistic
    reparameterization (quasi-Newton on the free logits, analytic gradient,
    gradient tolerance 1e-10). Confidence intervals come from the observed
    information via the delta method. Channels absent from the data are
    pinned to zero with a one-sided upper bound.

    Parameters
    ----------
    counts : TransitionCounts
        Transition table and first symbol of one acquisition.
    d : DetectorParams
        Detector memory parameters (dead time, afterpulsing, rate).
    level : float
        Two-sided confidence level.
    min_transitions : int
        Below this total a warning is issued (intervals are asymptotic).
    """
    total = counts.total
    if total < 1:
        raise DegenerateData("no transitions observed")
    if total < min_transitions:
        warnings.warn(f"only {total} transitions; confidence intervals are "
                      "asymptotic and may be unreliable", RuntimeWarning,
                      stacklevel=2)

    seen = (counts.n.sum(axis=0) + counts.n.sum(axis=1)) > 0
    seen[counts.first_symbol - 1] = True
    active = np.nonzero(seen)[0]
    missing = np.nonzero(~seen)[0]
    if active.size < 2:
        # a single channel fires: the estimate is that channel with certainty
        p_hat = np.zeros(4)
        p_hat[active[0]] = 1.0
        upper = np.minimum(1.0, -np.log(1.0 - level) / max(total, 1))
        ci_low = p_hat.copy()
        ci_high = np.where(p_hat > 0, 1.0, upper)
        return ProbEstimate(p_hat, ci_low, ci_high, level,
                            tuple(int(c) + 1 for c in missing))

    freq = counts.n.sum(axis=0).astype(float)
    freq[counts.first_symbol - 1] += 1.0
    start = np.log(np.maximum(freq[active] / freq[active].sum(), 1e-9))
    z0 = start[:-1] - start[-1]

    def neg(z):
        ll, grad_p = _loglik_and_grad(_softmax_simplex(z, active), counts, d)
        return -ll, -_chain_rule(grad_p, z, active)

    def _chain_rule(grad_p, z, active_idx):
        pa = _softmax_simplex(z, active_idx)[active_idx]
        g = grad_p[active_idx]
        # softmax Jacobian: dp_m/dz_k = p_m (delta_mk - p_k), k over free logits
        return pa[:-1] * (g[:-1] - g @ pa)

    res = minimize(neg, z0, jac=True, method="BFGS",
                   options={"gtol": 1e-10, "maxiter": 500})
    z_hat = res.x
    p_hat = _softmax_simplex(z_hat, active)

    # observed information: numerical Hessian of -mean loglik from the
    # analytic gradient, then delta method through the softmax Jacobian
    k = z_hat.size
    h = 1e-5
    hess = np.zeros((k, k))
    for a in range(k):
        zp = z_hat.copy(); zp[a] += h
        zm = z_hat.copy(); zm[a] -= h
        hess[:, a] = (neg(zp)[1] - neg(zm)[1]) / (2 * h)
    hess = 0.5 * (hess + hess.T)
    try:
        cov_z = np.linalg.inv(hess) / total
    except np.linalg.LinAlgError:
        cov_z = np.full((k, k), np.nan)

    pa_vec = p_hat[active]
    jac = np.zeros((active.size, k))
    for m in range(active.size):
        for kk in range(k):
            jac[m, kk] = pa_vec[m] * ((1.0 if m == kk else 0.0) - pa_vec[kk])
    var_p = np.einsum("mk,kl,ml->m", jac, cov_z, jac)
    se = np.sqrt(np.maximum(var_p, 0.0))

    zcrit = norm.ppf(0.5 + level / 2.0)
    ci_low = np.zeros(4)
    ci_high = np.zeros(4)
    ci_low[active] = np.maximum(pa_vec - zcrit * se, 0.0)
    ci_high[active] = np.minimum(pa_vec + zcrit * se, 1.0)
    if missing.size:
        upper = min(1.0, -np.log(1.0 - level) / total)
        ci_high[missing] = upper
        warnings.warn(f"channels {[int(c) + 1 for c in missing]} never appear; "
                      "their estimates are pinned to 0 with one-sided bounds",
                      RuntimeWarning, stacklevel=2)
    return ProbEstimate(p_hat, ci_low, ci_high, level,
                        tuple(int(c) + 1 for c in missing))


def guess_correction(p_max: float, d: DetectorParams) -> float:
    """Worst-case next-symbol guessing probability given sup_j p_j <= p_max.

    Maximizes the transition probability over repeat (afterpulse-boosted)
    and switch transitions; reduces to the identity when the detector has
    no memory.
    """
    if not 0.0 <= p_max <= 1.0:
        raise ValueError(f"p_max must be in [0, 1], got {p_max}")
    lt = d.lambda_td
    pa = d.p_after
    repeat = pa + (1.0 - pa) * ((1.0 - lt) * p_max + lt * p_max ** 2)
    switch = (1.0 - pa) * (p_max + lt * p_max * (1.0 - p_max))
    return max(repeat, switch)


def effective_guessing(p_max: float, d: DetectorParams) -> float:
    """Bound on the guessing probability of the next raw symbol.

    Alias of :func:`guess_correction`; this is the memory-corrected quantity
    the certification pipeline feeds into the min-entropy.
    """
    return guess_correction(p_max, d)
