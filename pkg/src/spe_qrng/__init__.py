"""Min-entropy certification for a single-photon-entanglement QRNG.

The pipeline goes: time-tagged events -> symbol sequences (``ingest``) ->
CHSH violation estimate with detector-memory correction (``chsh``,
``markov``) -> guessing-probability bound widened by worst-case optical
non-idealities (``bounds`` over the models in ``quantum``/``optics``) ->
certified min-entropy and Toeplitz extraction (``extractor``).
"""

from .bounds import (BoundResult, OptimizerConfig, TrustLevel, compute_bounds,
                     compute_e_i, compute_e_p, propagate_errors)
from .chsh import (AngleSettings, CertificationResult, ChshEstimate,
                   CountTable, certify, chsh_ideal, chsh_real, estimate_chsh,
                   guessing_bound, is_vacuous)
from .config import RunConfig, load_config, reference_config
from .extractor import BitBuffer, extract, marginal_bits, output_length
from .ingest import (SymbolSequence, bin_events, effective_rate, read_events,
                     subinterval_probabilities)
from .markov import (DetectorParams, ProbEstimate, TransitionCounts,
                     effective_guessing, guess_correction, mle_estimate,
                     simulate_chain, transition_matrix)
from .optics import (BeamSplitterParams, ComponentSet, MirrorParams, real_bs,
                     real_mirror, real_probabilities, real_probability,
                     u_ideal_tilde, u_real)
from .quantum import (CholeskyAngles, Outcome, StateParams, cholesky_state,
                      ideal_probabilities, ideal_probability, model_state,
                      momentum_rotation, polarization_rotation)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
