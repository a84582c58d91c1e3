"""Configuration loading: components, detector, angles, counts.

One JSON file carries everything a pipeline run needs. Power coefficients
appear as ``[value, standard_error]`` pairs and are converted to amplitude
level once, at load time. The bundled ``data/reference.json`` holds the
measured reference dataset so each command works out of the box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .chsh import AngleSettings, CountTable
from .errors import ConfigError
from .markov import DetectorParams
from .optics import BeamSplitterParams, ComponentSet, MirrorParams

SCHEMA_VERSION = 1

#: JSON keys of the four acquisitions, in count-table setting order.
SETTING_KEYS = ("phi0_theta0", "phi1_theta0", "phi0_theta1", "phi1_theta1")
CHANNEL_KEYS = ("0V", "0H", "1V", "1H")


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration plus the raw document for provenance."""

    components: ComponentSet
    detector: DetectorParams
    angles: AngleSettings
    counts: CountTable | None
    bin_ns: int
    published_bounds: dict | None
    raw: dict


def _pair(section: dict, key: str) -> tuple[float, float]:
    try:
        value, err = section[key]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"expected [value, error] pair at {key!r}") from exc
    return float(value), float(err)


def components_from_dict(doc: dict) -> ComponentSet:
    try:
        bs1 = doc["bs1"]
        bs2 = doc["bs2"]
        dl = doc["delay_lines"]
        gen = doc["generation"]
    except KeyError as exc:
        raise ConfigError(f"missing component section {exc}") from exc
    def amp(power, err):
        a = np.sqrt(power)
        return a, (err / (2 * a) if a > 0 else 0.0)

    amp0, amp0e = amp(*_pair(gen, "t0_power"))
    amp1, amp1e = amp(*_pair(gen, "t1_power"))
    return ComponentSet(
        bs1=BeamSplitterParams.from_powers(
            _pair(bs1, "t_v_power"), _pair(bs1, "r_v_power"),
            _pair(bs1, "t_h_power"), _pair(bs1, "r_h_power")),
        bs2=BeamSplitterParams.from_powers(
            _pair(bs2, "t_v_power"), _pair(bs2, "r_v_power"),
            _pair(bs2, "t_h_power"), _pair(bs2, "r_h_power")),
        mirror=MirrorParams.from_powers(
            _pair(dl, "g_v1_power"), _pair(dl, "g_h1_power"),
            _pair(dl, "g_v2_power"), _pair(dl, "g_h2_power")),
        t0=float(amp0), t1=float(amp1),
        t0_err=float(amp0e), t1_err=float(amp1e),
    )


def detector_from_dict(doc: dict) -> DetectorParams:
    try:
        return DetectorParams(
            t_dead=float(doc["dead_time_ns"]) * 1e-9,
            p_after=float(doc["afterpulse_probability"]),
            lambda_eff=float(doc.get("lambda_eff_hz", 0.0)),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad detector section: {exc}") from exc


def counts_from_dict(doc: dict) -> CountTable:
    duration = float(doc["duration_s"])
    rows = []
    for key in SETTING_KEYS:
        try:
            setting = doc["counts"][key]
            rows.append([int(setting[ch]) for ch in CHANNEL_KEYS])
        except KeyError as exc:
            raise ConfigError(f"missing counts entry {exc} under {key!r}") from exc
    return CountTable(np.array(rows), np.full(4, duration))


def parse_config(doc: dict) -> RunConfig:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version "
                          f"{doc.get('schema_version')!r}, expected {SCHEMA_VERSION}")
    try:
        angles = AngleSettings(**{k: float(doc["angles"][k])
                                  for k in ("phi0", "phi1", "theta0", "theta1")})
    except KeyError as exc:
        raise ConfigError(f"missing angle {exc}") from exc
    acq = doc.get("acquisition")
    counts = counts_from_dict(acq) if acq and "counts" in acq else None
    return RunConfig(
        components=components_from_dict(doc.get("components", {})),
        detector=detector_from_dict(doc.get("detector", {})),
        angles=angles,
        counts=counts,
        bin_ns=int(acq.get("bin_ns", 1000)) if acq else 1000,
        published_bounds=doc.get("published_bounds"),
        raw=doc,
    )


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)


def reference_config() -> RunConfig:
    """The bundled measured reference dataset."""
    text = resources.files("spe_qrng").joinpath("data/reference.json").read_text()
    return parse_config(json.loads(text))
