"""Command-line pipeline: simulate, ingest, chsh, bounds, certify, extract.

Every command that produces numbers writes a pair of reports (machine JSON +
human text) embedding the configuration hash and seed; with identical inputs
and seed the numerical fields are byte-identical across runs. Exit codes are
one per error class so scripts can tell configuration mistakes from data or
optimizer failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bounds as bnd
from . import chsh as ch
from . import errors as err
from . import extractor as ext
from . import ingest as ing
from . import simulate as sim
from .config import RunConfig, load_config, reference_config
from .optics import ComponentSet
from .quantum import StateParams

EXIT_CODES = (
    (err.ConfigError, 2),
    (err.UnsortedInput, 3),
    (err.ChannelOutOfRange, 3),
    (err.InsufficientData, 3),
    (err.EmptySubinterval, 3),
    (err.DegenerateData, 3),
    (err.OptimizerDiverged, 4),
    (err.SurvivalTraceZero, 5),
    (err.OutputLengthNonpositive, 6),
)


def _config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(
        json.dumps(cfg.raw, sort_keys=True).encode()).hexdigest()


def _load(args) -> RunConfig:
    return load_config(args.config) if args.config else reference_config()


def _write_report(out_dir: Path, name: str, result: dict, meta: dict,
                  text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"meta": meta, "result": result}
    json_path = out_dir / f"{name}.json"
    with open(json_path, "w") as fh:
        json.dump(payload, fh, indent=2)
    with open(out_dir / f"{name}.txt", "w") as fh:
        fh.write(text)
    return json_path


def _meta(args, cfg: RunConfig | None, command: str) -> dict:
    meta = {"command": command, "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S")}
    if cfg is not None:
        meta["config_hash"] = _config_hash(cfg)
    if getattr(args, "seed", None) is not None:
        meta["seed"] = args.seed
    return meta


def _sequences_from_events(events_dir: Path, bin_ns: int, duration_s: float) -> dict:
    sequences = {}
    for x, y in ch.SETTING_ORDER:
        path = events_dir / f"events_{x}{y}.csv"
        t, c = ing.read_events(path)
        sequences[(x, y)] = ing.bin_events(t, c, bin_ns, int(duration_s * 1e9),
                                           setting=(x, y))
    return sequences


def _counts_from_sequences(sequences: dict, duration_s: float) -> ch.CountTable:
    rows = [sequences[xy].channel_counts() for xy in ch.SETTING_ORDER]
    return ch.CountTable(np.array(rows), np.full(4, duration_s))


def cmd_simulate(args) -> int:
    cfg = _load(args)
    state = StateParams(v=args.state_v, delta=args.state_delta,
                        pi1=args.state_pi1, pi2=args.state_pi2,
                        t0n=cfg.components.t0n, t1n=cfg.components.t1n)
    events, manifest = sim.simulate_run(state, cfg.angles, cfg.components,
                                        cfg.detector, args.rate_hz,
                                        args.duration_s, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for (x, y), (t, c) in events.items():
        ing.write_events(out_dir / f"events_{x}{y}.csv", t, c)
    manifest["config_hash"] = _config_hash(cfg)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote 4 event files + manifest to {out_dir}")
    return 0


def cmd_ingest(args) -> int:
    t, c = ing.read_events(args.events)
    setting = tuple(int(s) for s in args.setting.split(",")) if args.setting else None
    seq = ing.bin_events(t, c, args.bin_ns, int(args.duration_s * 1e9),
                         setting=setting)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.events).stem
    ing.write_symbols(out_dir / f"{stem}.qsym", seq)
    result = {
        "accepted_symbols": len(seq),
        "n_bins_total": seq.n_bins_total,
        "n_empty": seq.n_empty,
        "n_multi": seq.n_multi,
        "multi_fraction": seq.multi_fraction,
        "channel_counts": [int(v) for v in seq.channel_counts()],
        "effective_rate_hz": ing.effective_rate(seq, args.duration_s),
        "bin_ns": seq.bin_ns,
        "setting": list(setting) if setting else None,
    }
    text = "\n".join(f"{k}: {v}" for k, v in result.items()) + "\n"
    _write_report(out_dir, f"{stem}_summary", result,
                  _meta(args, None, "ingest"), text)
    print(f"{len(seq)} symbols accepted "
          f"({seq.n_multi} multi, {seq.n_empty} empty bins discarded)")
    return 0


def _estimate(args, cfg: RunConfig):
    if args.events_dir:
        events_dir = Path(args.events_dir)
        duration = args.duration_s
        manifest = events_dir / "manifest.json"
        if duration is None and manifest.exists():
            duration = float(json.loads(manifest.read_text())["duration_s"])
        if duration is None:
            raise err.ConfigError("pass --duration-s or keep manifest.json "
                                  "next to the event files")
        sequences = _sequences_from_events(events_dir, cfg.bin_ns, duration)
        counts = _counts_from_sequences(sequences, duration)
    else:
        if cfg.counts is None:
            raise err.ConfigError("configuration carries no counts; "
                                  "pass --events-dir or a config with counts")
        counts, sequences = cfg.counts, None
    est = ch.estimate_chsh(counts, sequences=sequences, k=args.subintervals,
                           detector=cfg.detector if sequences else None)
    return counts, sequences, est


def cmd_chsh(args) -> int:
    cfg = _load(args)
    counts, _, est = _estimate(args, cfg)
    result = {
        "i_hat": est.i_hat,
        "abs_i_hat": abs(est.i_hat),
        "std_error": est.std_error,
        "markov_corrected": est.markov_corrected,
        "probabilities": est.probabilities.tolist(),
        "raw_probabilities": est.raw_probabilities.tolist(),
        "totals": counts.totals.tolist(),
    }
    text = (f"CHSH estimate |I| = {abs(est.i_hat):.6f} +- {est.std_error:.6f}\n"
            f"markov corrected: {est.markov_corrected}\n")
    _write_report(Path(args.out_dir), "chsh", result, _meta(args, cfg, "chsh"), text)
    print(text, end="")
    return 0


def _optimizer_config(args) -> bnd.OptimizerConfig:
    if args.paper_scale:
        cfg = bnd.OptimizerConfig.paper_scale(seed=args.seed)
    else:
        cfg = bnd.OptimizerConfig(seed=args.seed)
    overrides = {}
    if args.n_starts_ep:
        overrides["n_starts_ep"] = args.n_starts_ep
    if args.n_starts_ei:
        overrides["n_starts_ei"] = args.n_starts_ei
    if args.grid_size:
        overrides["grid_size"] = args.grid_size
    if overrides:
        cfg = bnd.OptimizerConfig(**{**cfg.to_dict(), **overrides})
    return cfg


def cmd_bounds(args) -> int:
    cfg = _load(args)
    trust = bnd.TrustLevel(args.trust)
    ocfg = _optimizer_config(args)
    components = (ComponentSet.ideal() if args.ideal_components
                  else cfg.components)
    result = bnd.compute_bounds(trust, components, ocfg, n_mc=args.n_mc)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = out_dir / f"bounds_{args.trust}.json"
    bnd.write_bound_cache(cache, result, components, ocfg)
    print(f"e_P = {result.e_p:.6f} +- {result.e_p_err:.6f}  "
          f"e_I = {result.e_i:.6f} +- {result.e_i_err:.6f}\n"
          f"cache written to {cache}")
    return 0


def cmd_certify(args) -> int:
    cfg = _load(args)
    trust_name = args.trust
    if args.bounds_cache:
        cache = bnd.read_bound_cache(args.bounds_cache)
        e_p, e_i = cache["e_p"], cache["e_i"]
        e_p_err = cache.get("e_p_err") or 0.0
        e_i_err = cache.get("e_i_err") or 0.0
        trust_name = cache["trust"]
        provenance = f"cache:{args.bounds_cache}"
    elif args.e_p is not None and args.e_i is not None:
        e_p, e_i, e_p_err, e_i_err = args.e_p, args.e_i, 0.0, 0.0
        provenance = "cli"
    elif args.use_published:
        if not cfg.published_bounds or trust_name not in cfg.published_bounds:
            raise err.ConfigError(f"no published bounds for {trust_name!r}")
        row = cfg.published_bounds[trust_name]
        e_p, e_i = row["e_p"], row["e_i"]
        e_p_err, e_i_err = row.get("e_p_err", 0.0), row.get("e_i_err", 0.0)
        provenance = "published"
    elif args.compute_bounds:
        ocfg = _optimizer_config(args)
        result = bnd.compute_bounds(bnd.TrustLevel(trust_name), cfg.components,
                                    ocfg, n_mc=args.n_mc)
        e_p, e_i = result.e_p, result.e_i
        e_p_err, e_i_err = result.e_p_err, result.e_i_err
        provenance = "computed"
    else:
        raise err.ConfigError("need --bounds-cache, --use-published, "
                              "--e-p/--e-i, or --compute-bounds")

    counts, sequences, est = _estimate(args, cfg)
    cert = ch.certify(counts, e_p=e_p, e_i=e_i,
                      det=cfg.detector, trust=trust_name,
                      e_p_err=e_p_err, e_i_err=e_i_err,
                      sequences=sequences, k=args.subintervals)
    result = cert.to_dict()
    result["bound_provenance"] = provenance
    result["probabilities"] = est.probabilities.tolist()
    text = (
        f"trust level        : {trust_name}\n"
        f"|I| estimate       : {abs(cert.i_hat):.6f} +- {cert.i_hat_err:.6f}\n"
        f"e_P                : {cert.e_p:.6f} +- {cert.e_p_err:.6f}\n"
        f"e_I                : {cert.e_i:.6f} +- {cert.e_i_err:.6f}\n"
        f"p*_guess           : {cert.p_guess_star:.6f}\n"
        f"H*_min             : {cert.h_min_star:.6f} bits/symbol "
        f"({100 * cert.h_min_star:.2f}% +- {100 * cert.h_min_star_err:.2f}%)\n"
        f"certified bit rate : {cert.bits_per_second / 1e3:.3f} kHz\n"
        f"vacuous            : {cert.vacuous}\n")
    _write_report(Path(args.out_dir), "certification", result,
                  _meta(args, cfg, "certify"), text)
    print(text, end="")
    return 0


def cmd_extract(args) -> int:
    if args.from_symbols:
        seq = ing.read_symbols(args.from_symbols)
        raw = ext.marginal_bits(seq)
    elif args.raw_bits:
        raw = ext.BitBuffer.read(args.raw_bits)
    else:
        raise err.ConfigError("need --raw-bits or --from-symbols")
    m = ext.output_length(raw.n_bits, args.h_min, args.epsilon)
    need = raw.n_bits + m - 1
    if args.seed_file:
        seed = ext.BitBuffer.read(args.seed_file, n_bits=need)
    else:
        seed = ext.BitBuffer.random(need, args.seed or 0)
        seed.write(Path(args.out).with_suffix(".seed"))
    out = ext.extract(raw, args.h_min, args.epsilon, seed)
    out.write(args.out)
    print(f"extracted {out.n_bits} bits from {raw.n_bits} raw bits -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spe-qrng",
        description="Certify and extract min-entropy from a single-photon-"
                    "entanglement QRNG.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration JSON "
                        "(default: bundled measured dataset)")
    common.add_argument("--seed", type=int, default=0, help="global RNG seed")
    common.add_argument("--out-dir", default="out", help="output directory")
    common.add_argument("--paper-scale", action="store_true",
                        help="full-size multistart budgets")

    p = sub.add_parser("simulate", parents=[common],
                       help="generate synthetic event files")
    p.add_argument("--rate-hz", type=float, default=175000.0)
    p.add_argument("--duration-s", type=float, default=10.0)
    p.add_argument("--state-v", type=float, default=1.0)
    p.add_argument("--state-delta", type=float, default=0.0)
    p.add_argument("--state-pi1", type=float, default=0.0)
    p.add_argument("--state-pi2", type=float, default=0.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", parents=[common],
                       help="bin a time-tagged event file into symbols")
    p.add_argument("events", help="ASCII event file (timestamp_ns,channel)")
    p.add_argument("--bin-ns", type=int, default=1000)
    p.add_argument("--duration-s", type=float, required=True)
    p.add_argument("--setting", help="x,y label for the acquisition")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("chsh", parents=[common],
                       help="estimate the CHSH violation")
    p.add_argument("--events-dir", help="directory from `simulate`")
    p.add_argument("--duration-s", type=float,
                   help="per-setting duration (default: manifest value)")
    p.add_argument("--subintervals", type=int, default=5)
    p.set_defaults(func=cmd_chsh)

    p = sub.add_parser("bounds", parents=[common],
                       help="compute e_P/e_I for a trust level")
    p.add_argument("--trust", default="general_rho",
                   choices=bnd.TRUST_VARIANTS)
    p.add_argument("--n-starts-ep", type=int)
    p.add_argument("--n-starts-ei", type=int)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--n-mc", type=int, default=4000)
    p.add_argument("--ideal-components", action="store_true",
                   help="use lossless balanced components (null test)")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("certify", parents=[common],
                       help="run the full certification chain")
    p.add_argument("--trust", default="general_rho",
                   choices=bnd.TRUST_VARIANTS)
    p.add_argument("--bounds-cache", help="bound cache JSON from `bounds`")
    p.add_argument("--use-published", action="store_true",
                   help="take e_P/e_I from the configuration")
    p.add_argument("--e-p", type=float)
    p.add_argument("--e-i", type=float)
    p.add_argument("--compute-bounds", action="store_true")
    p.add_argument("--events-dir", help="directory from `simulate`")
    p.add_argument("--duration-s", type=float,
                   help="per-setting duration (default: manifest value)")
    p.add_argument("--subintervals", type=int, default=5)
    p.add_argument("--n-starts-ep", type=int)
    p.add_argument("--n-starts-ei", type=int)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--n-mc", type=int, default=4000)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("extract", parents=[common],
                       help="Toeplitz-extract uniform bits")
    p.add_argument("--raw-bits", help="packed raw bit file")
    p.add_argument("--from-symbols", help="QSYM symbol file (marginal bits)")
    p.add_argument("--h-min", type=float, required=True)
    p.add_argument("--epsilon", type=float, default=ext.DEFAULT_EPSILON)
    p.add_argument("--seed-file", help="packed seed bits (n + m - 1)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except err.SpeQrngError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for cls, code in EXIT_CODES:
            if isinstance(exc, cls):
                return code
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
