"""Turn time-tagged detection events into clean symbol sequences.

Events are binned into fixed windows; windows with exactly one detection
yield a symbol (the detector channel), empty and multi-detection windows are
discarded and only counted. Dead-time effects are deliberately *not* handled
here; the Markov detector model downstream absorbs them, so binning stays a
pure bookkeeping layer.

Event files are ASCII, one ``<timestamp_ns>,<channel>`` pair per line, with
optional ``#`` comment/header lines. Symbol files use a compact binary
format: a 16-byte little-endian header (magic ``QSYM``, version, bin width
in ns, symbol count) followed by one byte per symbol (values 1..4).
Each file is processed in a single pass with no shared mutable state, so
the four acquisitions of a run can be ingested concurrently.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelOutOfRange, EmptySubinterval, UnsortedInput

QSYM_MAGIC = b"QSYM"
QSYM_VERSION = 1
_QSYM_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class EventRecord:
    """One detection: nanosecond timestamp since acquisition start + channel."""

    timestamp_ns: int
    channel: int


@dataclass(frozen=True)
class SymbolSequence:
    """Accepted symbols of one acquisition plus discard bookkeeping.

    ``bin_indices`` (when available) holds the originating bin of each
    symbol, enabling duration-based sub-interval slicing; sequences without
    timing (e.g. simulated chains) leave it ``None`` and use ``bin_ns = 0``.
    """

    symbols: np.ndarray
    bin_ns: int
    n_bins_total: int
    n_empty: int
    n_multi: int
    setting: tuple | None = None
    bin_indices: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        sym = np.asarray(self.symbols, dtype=np.int8)
        if sym.size and (sym.min() < 1 or sym.max() > 4):
            raise ChannelOutOfRange("symbols must be channels in 1..4")
        if len(sym) != self.n_bins_total - self.n_empty - self.n_multi:
            raise ValueError("counter bookkeeping does not match symbol count")
        object.__setattr__(self, "symbols", sym)

    def __len__(self) -> int:
        return int(self.symbols.size)

    @property
    def multi_fraction(self) -> float:
        """Share of multi-detection bins among non-empty bins."""
        occupied = self.n_multi + len(self)
        return self.n_multi / occupied if occupied else 0.0

    def channel_counts(self) -> np.ndarray:
        """Counts per channel 1..4."""
        return np.bincount(self.symbols, minlength=5)[1:]


def read_events(path) -> tuple[np.ndarray, np.ndarray]:
    """Load an ASCII event file into (timestamps_ns, channels) arrays."""
    data = np.loadtxt(path, delimiter=",", comments="#", dtype=np.int64, ndmin=2)
    if data.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return data[:, 0], data[:, 1]


def write_events(path, timestamps_ns: np.ndarray, channels: np.ndarray) -> None:
    """Write events as ``timestamp_ns,channel`` lines with a comment header."""
    with open(path, "w") as fh:
        fh.write("# timestamp_ns,channel\n")
        for t, c in zip(np.asarray(timestamps_ns), np.asarray(channels)):
            fh.write(f"{int(t)},{int(c)}\n")


def bin_events(timestamps_ns: np.ndarray, channels: np.ndarray, bin_ns: int,
               duration_ns: int, setting: tuple | None = None) -> SymbolSequence:
    """Bin a sorted event stream into accepted single-detection symbols.

    Bins are half-open ``[k*bin_ns, (k+1)*bin_ns)``; events beyond the
    acquisition window are ignored. Bins with zero or multiple events are
    discarded and counted.
    """
    if bin_ns <= 0:
        raise ValueError("bin width must be positive")
    t = np.asarray(timestamps_ns, dtype=np.int64)
    ch = np.asarray(channels, dtype=np.int64)
    if t.size and np.any(np.diff(t) < 0):
        raise UnsortedInput("event timestamps must be nondecreasing")
    if ch.size and (ch.min() < 1 or ch.max() > 4):
        raise ChannelOutOfRange("channels must be in 1..4")

    n_bins = int(duration_ns // bin_ns)
    keep = (t >= 0) & (t < n_bins * bin_ns)
    t, ch = t[keep], ch[keep]
    bins = (t // bin_ns).astype(np.int64)

    occupancy = np.bincount(bins, minlength=n_bins)
    single = occupancy == 1
    n_empty = int((occupancy == 0).sum())
    n_multi = int((occupancy >= 2).sum())

    channel_sum = np.bincount(bins, weights=ch, minlength=n_bins)
    accepted_bins = np.nonzero(single)[0]
    symbols = channel_sum[accepted_bins].astype(np.int8)
    return SymbolSequence(symbols=symbols, bin_ns=int(bin_ns),
                          n_bins_total=n_bins, n_empty=n_empty,
                          n_multi=n_multi, setting=setting,
                          bin_indices=accepted_bins)


def subinterval_frequencies(seq: SymbolSequence, k: int) -> np.ndarray:
    """Per-channel relative frequencies in k equal sub-intervals, shape (k, 4).

    Sub-intervals are equal-duration slices when the sequence carries bin
    indices, equal-count slices otherwise. Each slice must be nonempty.
    """
    if k < 2:
        raise ValueError("need at least two sub-intervals")
    if seq.bin_indices is not None:
        edges = np.linspace(0, seq.n_bins_total, k + 1)
        positions = seq.bin_indices
    else:
        edges = np.linspace(0, len(seq), k + 1)
        positions = np.arange(len(seq))
    slice_of = np.clip(np.searchsorted(edges, positions, side="right") - 1,
                       0, k - 1)
    freqs = np.empty((k, 4))
    for s in range(k):
        sym = seq.symbols[slice_of == s]
        if sym.size == 0:
            raise EmptySubinterval(f"sub-interval {s} of {k} contains no symbols")
        freqs[s] = np.bincount(sym, minlength=5)[1:] / sym.size
    return freqs


def subinterval_probabilities(seq: SymbolSequence, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard error over k equal sub-intervals."""
    freqs = subinterval_frequencies(seq, k)
    return freqs.mean(axis=0), freqs.std(axis=0, ddof=1) / np.sqrt(k)


def effective_rate(seq: SymbolSequence, duration_s: float) -> float:
    """Accepted-symbol rate in Hz."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    return len(seq) / duration_s


def write_symbols(path, seq: SymbolSequence) -> None:
    """Write the compact binary symbol file (QSYM format)."""
    header = _QSYM_HEADER.pack(QSYM_MAGIC, QSYM_VERSION, int(seq.bin_ns), len(seq))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(seq.symbols.astype(np.uint8).tobytes())


def read_symbols(path) -> SymbolSequence:
    """Read a QSYM file back into a bare symbol sequence (no discard counters)."""
    with open(path, "rb") as fh:
        magic, version, bin_ns, count = _QSYM_HEADER.unpack(fh.read(_QSYM_HEADER.size))
        if magic != QSYM_MAGIC:
            raise ValueError(f"not a QSYM file: magic {magic!r}")
        if version != QSYM_VERSION:
            raise ValueError(f"unsupported QSYM version {version}")
        symbols = np.frombuffer(fh.read(count), dtype=np.uint8).astype(np.int8)
    if symbols.size != count:
        raise ValueError("truncated QSYM file")
    return SymbolSequence(symbols=symbols, bin_ns=int(bin_ns),
                          n_bins_total=count, n_empty=0, n_multi=0)
