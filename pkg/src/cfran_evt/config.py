"""Experiment configuration: TOML schema, defaults, overrides, echo.

The file uses one block per subsystem ([network], [power], [fbl],
[tail], [solver], [sim], [evt]); unknown keys are rejected so typos
cannot silently fall back to defaults. Every run echoes the fully
materialized configuration into its output JSON.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .phy import FblParams, PowerParams
from .queueing import TailParams, default_moment_budgets
from .solver import SolverParams
from .topology import ConfigurationError, NetworkConfig


@dataclass(frozen=True)
class SimConfig:
    """Horizon and replication plan."""

    T: int = 5000
    warmup: int = 1000
    seeds: tuple = (1,)
    policies: tuple = ("evt_aware", "queue_aware_baseline")
    strict: bool = False

    def __post_init__(self):
        if not self.T > self.warmup >= 0:
            raise ConfigurationError("need T > warmup >= 0")
        if len(self.seeds) < 1:
            raise ConfigurationError("need at least one seed")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "policies", tuple(self.policies))


@dataclass(frozen=True)
class EvtConfig:
    """Online tail-fitting schedule and feedback coupling."""

    window: int = 2000  # sliding window of backlog samples
    refit_every: int = 500  # slots between refits
    n_min: int = 50  # exceedances required for a refit
    evt_feedback: bool = True  # couple fits back into the weights
    prior_xi: float = 0.1  # tail prior before enough data
    prior_sigma: float = 0.5
    feedback_gain: float = 0.5  # weight scaling per unit of budget overshoot
    feedback_cap: float = 8.0  # max multiple of the base weight
    feedback_decay: float = 0.01  # relaxation toward base per refit

    def __post_init__(self):
        if min(self.window, self.refit_every, self.n_min) < 1:
            raise ConfigurationError("window, refit_every, n_min must be >= 1")
        if self.prior_sigma <= 0 or self.prior_xi >= 0.5:
            raise ConfigurationError("tail prior must have sigma > 0 and xi < 1/2")
        if self.feedback_cap < 1.0 or self.feedback_gain < 0 or not 0 <= self.feedback_decay <= 1:
            raise ConfigurationError("invalid feedback constants")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs, fully materialized."""

    network: NetworkConfig = field(default_factory=NetworkConfig)
    power: PowerParams = field(default_factory=PowerParams)
    fbl: FblParams = field(default_factory=FblParams)
    tail: TailParams = field(default_factory=TailParams)
    solver: SolverParams = field(default_factory=SolverParams)
    sim: SimConfig = field(default_factory=SimConfig)
    evt: EvtConfig = field(default_factory=EvtConfig)
    sinr_contamination: str = "standard"  # 'standard' | 'literal'

    def __post_init__(self):
        if self.sinr_contamination not in ("standard", "literal"):
            raise ConfigurationError("sinr_contamination must be 'standard' or 'literal'")


_BLOCK_KEYS = {
    "network": {f.name for f in dataclasses.fields(NetworkConfig)} | {"sinr_contamination"},
    "power": {f.name for f in dataclasses.fields(PowerParams)},
    "fbl": {"eps_decode", "form"},
    "tail": {f.name for f in dataclasses.fields(TailParams)},
    "solver": {f.name for f in dataclasses.fields(SolverParams)},
    "sim": {f.name for f in dataclasses.fields(SimConfig)},
    "evt": {f.name for f in dataclasses.fields(EvtConfig)},
}


def _check_keys(raw: dict) -> None:
    for block, entries in raw.items():
        if block not in _BLOCK_KEYS:
            raise ConfigurationError(f"unknown config block [{block}]")
        if not isinstance(entries, dict):
            raise ConfigurationError(f"[{block}] must be a table")
        unknown = set(entries) - _BLOCK_KEYS[block]
        if unknown:
            raise ConfigurationError(f"unknown keys in [{block}]: {sorted(unknown)}")


def parse_override_value(text: str):
    """Parse an override value with TOML literal rules; bare words stay strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply dotted `block.key=value` strings onto the raw config dict."""
    out = {k: dict(v) for k, v in raw.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override must look like block.key=value, got {item!r}")
        path, value = item.split("=", 1)
        parts = path.strip().split(".")
        if len(parts) != 2:
            raise ConfigurationError(f"override path must be block.key, got {path!r}")
        block, key = parts
        out.setdefault(block, {})[key.strip()] = parse_override_value(value.strip())
    return out


def build_config(raw: dict) -> ExperimentConfig:
    """Materialize an ExperimentConfig from a raw (TOML) dict."""
    _check_keys(raw)
    net_raw = dict(raw.get("network", {}))
    contamination = net_raw.pop("sinr_contamination", "standard")
    network = NetworkConfig(**net_raw)

    evt = EvtConfig(**raw.get("evt", {}))

    power_raw = dict(raw.get("power", {}))
    power_raw.setdefault("rho_d_watts", network.rho_d)
    power = PowerParams(**power_raw)
    if len(power.alpha_m) not in (1, network.M):
        raise ConfigurationError(f"alpha_m needs 1 or M={network.M} entries, got {len(power.alpha_m)}")

    fbl_raw = dict(raw.get("fbl", {}))
    fbl = FblParams(
        eps_decode=fbl_raw.get("eps_decode", 1e-5),
        tau_c=network.tau_c,
        eta_p=network.eta_p,
        form=fbl_raw.get("form", "standard"),
    )

    tail_raw = dict(raw.get("tail", {}))
    if "zeta1" not in tail_raw or "zeta2" not in tail_raw:
        z1, z2 = default_moment_budgets(tail_raw.get("eps_Q", 0.01), evt.prior_xi, evt.prior_sigma)
        tail_raw.setdefault("zeta1", z1)
        tail_raw.setdefault("zeta2", z2)
    tail = TailParams(**tail_raw)

    solver = SolverParams(**raw.get("solver", {}))
    sim = SimConfig(**raw.get("sim", {}))
    return ExperimentConfig(
        network=network,
        power=power,
        fbl=fbl,
        tail=tail,
        solver=solver,
        sim=sim,
        evt=evt,
        sinr_contamination=contamination,
    )


def load_config(path, overrides=None) -> ExperimentConfig:
    """Read, override, validate, and materialize a TOML config file."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"malformed TOML in {path}: {exc}")
    raw = apply_overrides(raw, overrides)
    return build_config(raw)


def effective_config(cfg: ExperimentConfig) -> dict:
    """Fully materialized defaults-included echo, JSON-ready."""

    def as_dict(obj):
        out = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    return {
        "network": as_dict(cfg.network) | {"sinr_contamination": cfg.sinr_contamination},
        "power": as_dict(cfg.power),
        "fbl": as_dict(cfg.fbl),
        "tail": as_dict(cfg.tail),
        "solver": as_dict(cfg.solver),
        "sim": as_dict(cfg.sim),
        "evt": as_dict(cfg.evt),
    }
