"""Configuration dataclasses for simulation scenarios and analysis runs.

All scenario inputs are plain dataclasses so configs can round-trip through
JSON.  Validation errors carry the path of the offending field.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional


class ConfigError(ValueError):
    """Raised for invalid configuration; `path` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


POLICY_LONGEST_HEADER_CHAIN = "longest-header-chain"
POLICY_GREEDY = "greedy"
POLICY_FRESHEST_BLOCK = "freshest-block"
POLICIES = (POLICY_LONGEST_HEADER_CHAIN, POLICY_GREEDY, POLICY_FRESHEST_BLOCK)

PROTOCOL_POW = "pow"
PROTOCOL_POS = "pos"
PROTOCOL_SAPOS = "sapos"
PROTOCOLS = (PROTOCOL_POW, PROTOCOL_POS, PROTOCOL_SAPOS)

ATTACK_NONE = "none"
ATTACK_PRIVATE = "private"
ATTACK_TEASER = "teaser"
ATTACK_POS_TEASER = "pos-teaser"
ATTACK_PARTITION = "partition"
ATTACKS = (ATTACK_NONE, ATTACK_PRIVATE, ATTACK_TEASER, ATTACK_POS_TEASER,
           ATTACK_PARTITION)


@dataclass(frozen=True)
class SimParams:
    """Physical and clock parameters of one simulated execution.

    Rates are in blocks per second; the slot clock has period `tau` seconds.
    `nu` and `c_tilde` are the analysis companions tied to the network
    parameters by (nu + 1) * tau == delta_h + c_tilde / capacity; either may
    be omitted and is then derived from the other.
    """

    n_nodes: int = 20
    beta: float = 0.0
    rho: float = 0.01
    tau: float = 0.1
    delta_h: float = 0.0
    capacity: float = 1.0
    nu: Optional[int] = None
    c_tilde: Optional[float] = None
    horizon_slots: int = 10_000
    seed: int = 0

    @property
    def lambda_rate(self) -> float:
        """Total block production rate in blocks per second (rho / tau)."""
        return self.rho / self.tau

    @property
    def n_adversary(self) -> int:
        if self.beta <= 0.0:
            return 0
        return max(1, round(self.beta * self.n_nodes))

    @property
    def honest_nodes(self) -> tuple[int, ...]:
        return tuple(range(self.n_nodes - self.n_adversary))

    @property
    def adversary_nodes(self) -> tuple[int, ...]:
        return tuple(range(self.n_nodes - self.n_adversary, self.n_nodes))

    @property
    def delay_slots(self) -> int:
        """Forced header delivery delay, in whole slots."""
        return math.ceil(self.delta_h / self.tau - 1e-12)

    def resolved(self) -> "SimParams":
        """Return a copy with nu and c_tilde both filled in and validated."""
        self.validate()  # field ranges first, the derivation divides by them
        nu, c_tilde = self.nu, self.c_tilde
        if nu is None and c_tilde is None:
            raise ConfigError("sim.nu", "one of nu or c_tilde is required")
        if nu is None:
            nu = round((self.delta_h + c_tilde / self.capacity) / self.tau) - 1
        if c_tilde is None:
            c_tilde = ((nu + 1) * self.tau - self.delta_h) * self.capacity
        out = dataclasses.replace(self, nu=nu, c_tilde=c_tilde)
        out.validate()
        return out

    def validate(self) -> None:
        if self.n_nodes < 1:
            raise ConfigError("sim.n_nodes", "must be >= 1")
        if not (0.0 <= self.beta < 0.5):
            raise ConfigError("sim.beta", "must lie in [0, 0.5)")
        if self.rho <= 0.0:
            raise ConfigError("sim.rho", "must be positive")
        if self.tau <= 0.0:
            raise ConfigError("sim.tau", "must be positive")
        if self.delta_h < 0.0:
            raise ConfigError("sim.delta_h", "must be non-negative")
        if self.capacity <= 0.0:
            raise ConfigError("sim.capacity", "must be positive")
        if self.horizon_slots < 1:
            raise ConfigError("sim.horizon_slots", "must be >= 1")
        if self.nu is not None and self.nu < 0:
            raise ConfigError("sim.nu", "must be >= 0")
        if self.nu is not None and self.c_tilde is not None:
            # The analysis window and the bandwidth budget must describe the
            # same physical interval, up to one slot of rounding.
            lhs = (self.nu + 1) * self.tau
            rhs = self.delta_h + self.c_tilde / self.capacity
            if abs(lhs - rhs) > self.tau + 1e-9:
                raise ConfigError(
                    "sim.nu",
                    f"(nu+1)*tau = {lhs:g} disagrees with "
                    f"delta_h + c_tilde/capacity = {rhs:g} by more than one slot")


@dataclass(frozen=True)
class AttackConfig:
    """Adversary strategy selection and its knobs."""

    strategy: str = ATTACK_NONE
    spv_rate: float = 0.0
    partition_duration: float = 15.0   # seconds the network stays split
    run_after: float = 4000.0          # seconds simulated after the split heals
    sacrifice_every: int = 0           # SaPoS runs: plant an equivocation pair
                                       # after every n-th content release

    def validate(self) -> None:
        if self.strategy not in ATTACKS:
            raise ConfigError("attack.strategy", f"unknown strategy {self.strategy!r}")
        if self.spv_rate < 0.0:
            raise ConfigError("attack.spv_rate", "must be non-negative")
        if self.partition_duration < 0.0:
            raise ConfigError("attack.partition_duration", "must be non-negative")
        if self.run_after < 0.0:
            raise ConfigError("attack.run_after", "must be non-negative")
        if self.sacrifice_every < 0:
            raise ConfigError("attack.sacrifice_every", "must be non-negative")


@dataclass(frozen=True)
class SaPoSParams:
    """Confirmation and proof-inclusion depths for the equivocation-blanking
    protocol, tied to the recurrence distance k_cp."""

    k_cp: int = 3
    k_conf: Optional[int] = None
    k_epf: Optional[int] = None

    def resolved(self) -> "SaPoSParams":
        k_conf = self.k_conf if self.k_conf is not None else 6 * self.k_cp + 1
        k_epf = self.k_epf if self.k_epf is not None else 4 * self.k_cp
        out = dataclasses.replace(self, k_conf=k_conf, k_epf=k_epf)
        out.validate()
        return out

    def validate(self) -> None:
        if self.k_cp < 1:
            raise ConfigError("sapos.k_cp", "must be >= 1")
        if self.k_conf is not None and self.k_conf != 6 * self.k_cp + 1:
            raise ConfigError("sapos.k_conf", "must equal 6*k_cp + 1")
        if self.k_epf is not None and self.k_epf != 4 * self.k_cp:
            raise ConfigError("sapos.k_epf", "must equal 4*k_cp")


@dataclass(frozen=True)
class TxGenConfig:
    """Deterministic transaction feed: `sigma` block-units per second arriving
    as fixed-size transactions, aggregated over a burst window."""

    sigma: float = 0.0
    burst_window: float = 0.0   # seconds over which arrivals may bunch
    tx_size: float = 0.25       # fraction of one block

    def validate(self) -> None:
        if self.sigma < 0.0:
            raise ConfigError("txgen.sigma", "must be non-negative")
        if not (0.0 < self.tx_size <= 1.0):
            raise ConfigError("txgen.tx_size", "must lie in (0, 1]")
        if self.burst_window < 0.0:
            raise ConfigError("txgen.burst_window", "must be non-negative")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce one experiment family."""

    sim: SimParams = field(default_factory=SimParams)
    attack: AttackConfig = field(default_factory=AttackConfig)
    policy: str = POLICY_LONGEST_HEADER_CHAIN
    protocol: str = PROTOCOL_POW
    sapos: SaPoSParams = field(default_factory=SaPoSParams)
    txgen: TxGenConfig = field(default_factory=TxGenConfig)
    k_conf: Optional[int] = None     # PoW/PoS confirmation depth (default 2*k_cp+1)
    repeat: int = 1
    seed_stride: int = 1

    def resolved(self) -> "ScenarioConfig":
        sim = self.sim.resolved()
        sapos = self.sapos.resolved()
        self.attack.validate()
        self.txgen.validate()
        if self.policy not in POLICIES:
            raise ConfigError("policy", f"unknown policy {self.policy!r}")
        if self.protocol not in PROTOCOLS:
            raise ConfigError("protocol", f"unknown protocol {self.protocol!r}")
        if self.repeat < 1:
            raise ConfigError("repeat", "must be >= 1")
        if self.seed_stride < 1:
            raise ConfigError("seed_stride", "must be >= 1")
        k_conf = self.k_conf
        if k_conf is None:
            k_conf = (sapos.k_conf if self.protocol == PROTOCOL_SAPOS
                      else 2 * sapos.k_cp + 1)
        if k_conf < 0:
            raise ConfigError("k_conf", "must be >= 0")
        return dataclasses.replace(self, sim=sim, sapos=sapos, k_conf=k_conf)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "config", "expected a JSON object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
        sub = _NESTED.get((cls, key))
        kwargs[key] = _build(sub, value, f"{path}.{key}" if path else key) if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(path or "config", str(exc)) from exc


_NESTED = {
    (ScenarioConfig, "sim"): SimParams,
    (ScenarioConfig, "attack"): AttackConfig,
    (ScenarioConfig, "sapos"): SaPoSParams,
    (ScenarioConfig, "txgen"): TxGenConfig,
}


def scenario_from_dict(data: dict) -> ScenarioConfig:
    """Parse and validate a ScenarioConfig from JSON-shaped data."""
    return _build(ScenarioConfig, data, "").resolved()


def scenario_from_json(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(path, f"invalid JSON: {exc}") from exc
    return scenario_from_dict(data)


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)
