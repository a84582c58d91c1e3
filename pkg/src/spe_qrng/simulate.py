"""Forward model: synthetic time-tagged event streams with known ground truth.

For each angle setting the channel probabilities come from the lossy optical
model applied to a configurable source state; arrival times follow a Poisson
process and channel assignments follow the detector-memory chain, so the
synthetic data exercise the same estimators (binning, Markov MLE, CHSH) as
a real acquisition.
"""

from __future__ import annotations

import numpy as np

from .chsh import SETTING_ORDER, AngleSettings
from .ingest import SymbolSequence, bin_events
from .markov import DetectorParams, chain_symbols
from .optics import ComponentSet, real_probabilities
from .quantum import StateParams, model_state


def simulate_setting(rho: np.ndarray, phi: float, theta: float,
                     c: ComponentSet, det: DetectorParams, rate_hz: float,
                     duration_s: float, rng: np.random.Generator
                     ) -> tuple[np.ndarray, np.ndarray]:
    """One acquisition: sorted nanosecond timestamps and channel labels."""
    p = real_probabilities(rho, phi, theta, c)
    n = int(rng.poisson(rate_hz * duration_s))
    n = max(n, 2)
    timestamps = np.sort(rng.uniform(0.0, duration_s * 1e9, size=n)).astype(np.int64)
    channels = chain_symbols(p, det.with_rate(rate_hz), n, rng)
    return timestamps, channels.astype(np.int64)


def simulate_run(state: StateParams, angles: AngleSettings, c: ComponentSet,
                 det: DetectorParams, rate_hz: float, duration_s: float,
                 seed: int) -> tuple[dict, dict]:
    """Simulate all four settings; returns (events by setting, manifest).

    ``events`` maps the setting pair (x, y) to (timestamps_ns, channels).
    The manifest echoes every ground-truth parameter for downstream
    regression checks.
    """
    rho = model_state(state)
    events = {}
    truth_probs = {}
    for i, (x, y) in enumerate(SETTING_ORDER):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(100, i)))
        phi, theta = angles.angles_for(x, y)
        events[(x, y)] = simulate_setting(rho, phi, theta, c, det,
                                          rate_hz, duration_s, rng)
        truth_probs[f"{x}{y}"] = [float(v) for v in
                                  real_probabilities(rho, phi, theta, c)]
    manifest = {
        "seed": seed,
        "rate_hz": rate_hz,
        "duration_s": duration_s,
        "state": {"v": state.v, "delta": state.delta, "pi1": state.pi1,
                  "pi2": state.pi2, "t0n": state.t0n, "t1n": state.t1n},
        "angles": {"phi0": angles.phi0, "phi1": angles.phi1,
                   "theta0": angles.theta0, "theta1": angles.theta1},
        "channel_probabilities": truth_probs,
        "detector": {"t_dead": det.t_dead, "p_after": det.p_after},
    }
    return events, manifest


def ingest_run(events: dict, bin_ns: int, duration_s: float) -> dict:
    """Bin each simulated setting into a SymbolSequence keyed by (x, y)."""
    out: dict[tuple, SymbolSequence] = {}
    for xy, (t, ch) in events.items():
        out[xy] = bin_events(t, ch, bin_ns, int(duration_s * 1e9), setting=xy)
    return out
