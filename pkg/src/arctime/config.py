"""INI run configuration with typed defaults.

One file holds every tunable setting, grouped into sections that mirror the
pipeline stages. Command-line flags override values read from the file.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .model import DEFAULT_PRIOR_SPEEDS


class ConfigError(ValueError):
    """Unknown key, bad value or missing file in a run configuration."""


@dataclass
class DataSection:
    nodes: str = "nodes.csv"
    arcs: str = "arcs.csv"
    trips: str = "trips.csv"
    gps: str = "gps.csv"
    true_times: str = ""
    true_params: str = ""
    max_gap_s: float = 300.0
    min_gap_speed: float = 1.0


@dataclass
class ModelSection:
    prior_speed_primary: float = DEFAULT_PRIOR_SPEEDS["primary"]
    prior_speed_secondary: float = DEFAULT_PRIOR_SPEEDS["secondary"]
    prior_speed_tertiary: float = DEFAULT_PRIOR_SPEEDS["tertiary"]
    s2: float = 1.0
    b1: float = 0.05
    b2: float = 1.5
    b3: float = 0.01
    b4: float = 0.5
    C: float = 0.01
    location_var: float = 100.0


@dataclass
class SamplerSection:
    iterations: int = 50000
    burn_in: int = 25000
    thin: int = 10
    K: int = 6
    alpha: float = 1.0
    alpha_prime: float = 0.5
    eta2: float = 0.25
    nu2: float = 0.01
    chains: int = 2


@dataclass
class SimulateSection:
    grid: str = "8x8"
    block_m: float = 200.0
    regime: str = "good"
    trips: int = 500
    mode: str = "by_distance"
    path_model: str = "greedy"


@dataclass
class EvaluateSection:
    methods: str = "bayes,harmonic,mle,budge"
    n_draws: int = 5000
    n_bins: int = 10
    min_per_bin: int = 30
    map_draws: int = 2000


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def prior_speeds(self) -> dict[str, float]:
        m = self.model
        return {"primary": m.prior_speed_primary, "secondary": m.prior_speed_secondary,
                "tertiary": m.prior_speed_tertiary}

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; stable across runs."""
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_ini(self) -> str:
        lines = []
        for sec in fields(self):
            lines.append(f"[{sec.name}]")
            for f in fields(getattr(self, sec.name)):
                lines.append(f"{f.name} = {getattr(getattr(self, sec.name), f.name)}")
            lines.append("")
        return "\n".join(lines)


def _coerce(section: str, key: str, raw: str, like):
    try:
        if isinstance(like, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(like).__name__}") from None


def load_config(path=None) -> RunConfig:
    """Read an INI file over the defaults; ``None`` gives the defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case (C)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None
    for name in parser.sections():
        if not hasattr(cfg, name):
            raise ConfigError(f"unknown config section [{name}]")
        sec = getattr(cfg, name)
        known = {f.name for f in fields(sec)}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            setattr(sec, key, _coerce(name, key, raw, getattr(sec, key)))
    return cfg
