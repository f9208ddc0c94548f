"""Scenario configuration schema (JSON) and loading with complete violation lists."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import SchemaViolation

PRESETS = ("basic", "byzantine", "swap", "scaling", "energy")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SimConfig(_Strict):
    seed: int = Field(0, ge=0)
    cycles: int = Field(200, ge=0)
    cycle_ms: int = Field(500, ge=2)
    relay_bound: int = Field(1, ge=0)
    relay_budget_ms: Optional[int] = Field(None, ge=0)


class NetConfig(_Strict):
    base_latency_ms: int = Field(10, ge=0)
    jitter_ms: int = Field(0, ge=0)
    drop_prob: float = Field(0.0, ge=0.0, le=1.0)


class GroupsConfig(_Strict):
    min_size: int = Field(4, ge=1)
    parallel: int = Field(1, ge=1)


class SelectorConfig(_Strict):
    redraw_every: int = Field(1, ge=1)


class ShardsConfig(_Strict):
    count: int = Field(16, ge=1)
    replication: int = Field(2, ge=1)
    rebalance_every: int = Field(16, ge=0)


class NodeSpec(_Strict):
    name: str = "n"
    count: int = Field(1, ge=1)
    kind: Literal["Server", "Mobile"] = "Server"
    capacity: int = Field(10, ge=1)
    availability: Optional[float] = Field(None, ge=0.0, le=1.0)
    fault: Literal["Honest", "Crash", "Equivocate", "TamperSegment"] = "Honest"

    @model_validator(mode="after")
    def _availability(self):
        if self.kind == "Server" and self.availability not in (None, 1.0):
            raise ValueError("server nodes are always available (availability 1)")
        return self


class AccountSpec(_Strict):
    name: str
    balance: float = Field(0.0, ge=0.0)  # coins
    governance: bool = False


class WorkloadConfig(_Strict):
    mode: Literal["poisson", "closed_loop"] = "poisson"
    rate: float = Field(3.0, ge=0.0)  # expected transactions per cycle
    users: int = Field(16, ge=2)
    balance: float = Field(1000.0, ge=0.0)  # coins per generated user
    value_min: float = Field(1.0, ge=0.0)
    value_max: float = Field(10.0, ge=0.0)
    contract_fraction: float = Field(0.0, ge=0.0, le=1.0)
    receipt_fraction: float = Field(0.0, ge=0.0, le=1.0)
    data_fraction: float = Field(0.0, ge=0.0, le=1.0)
    payload_bytes: int = Field(64, ge=1)
    contracts: int = Field(2, ge=0)
    # closed loop: each user submits while its reservation fee covers the friction
    reference_fee: float = Field(50.0, gt=0.0)
    spread: float = Field(1.0, ge=0.0)
    activity: float = Field(1.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _fractions(self):
        if self.value_max < self.value_min:
            raise ValueError("value_max < value_min")
        if self.contract_fraction + self.receipt_fraction + self.data_fraction > 1.0 + 1e-9:
            raise ValueError("transaction-kind fractions sum above 1")
        if self.contract_fraction > 0 and self.contracts == 0:
            raise ValueError("contract_fraction > 0 needs at least one contract account")
        return self


class TokenomicsConfig(_Strict):
    F0: float = Field(1.0, gt=0.0)
    F_min: float = Field(1.0, gt=0.0)
    F_max: float = Field(1e6, gt=0.0)
    alpha: float = Field(0.5, gt=0.0)
    window: int = Field(32, ge=1)
    mint_bps: int = Field(0, ge=0)
    mint_every: int = Field(0, ge=0)
    stamp_base: int = Field(0, ge=0, le=24)

    @model_validator(mode="after")
    def _clamps(self):
        if not self.F_min <= self.F0 <= self.F_max:
            raise ValueError("need F_min <= F0 <= F_max")
        return self


class ChainSpec(_Strict):
    id: str = Field("A", min_length=1, pattern=r"^[A-Za-z0-9_-]+$")
    nodes: list[NodeSpec] = Field(default_factory=lambda: [NodeSpec(count=8)])
    accounts: list[AccountSpec] = Field(default_factory=list)
    workload: Optional[WorkloadConfig] = None


class FaultSpec(_Strict):
    chain: str = "A"
    node: str
    fault: Literal["Crash", "Equivocate", "TamperSegment"]
    from_cycle: int = Field(0, ge=0)
    to_cycle: Optional[int] = Field(None, ge=0)


class SwapSpec(_Strict):
    party_a: str
    chain_a: str = "A"
    amount_a: float = Field(gt=0.0)
    chain_b: str = "B"
    amount_b: float = Field(gt=0.0)
    timeout_cycles: int = Field(8, ge=1)
    fee_bps: int = Field(150, ge=0, lt=10_000)
    acceptors: list[str] = Field(min_length=1)
    start_cycle: int = Field(1, ge=0)


class ScalingConfig(_Strict):
    settings: list[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16], min_length=1)
    nodes_per_setting: int = Field(4, ge=1)
    rate_per_setting: float = Field(16.0, gt=0.0)


class OutputConfig(_Strict):
    dir: str = "out"
    events: bool = True


class ScenarioConfig(_Strict):
    name: str = "scenario"
    description: str = ""
    sim: SimConfig = Field(default_factory=SimConfig)
    net: NetConfig = Field(default_factory=NetConfig)
    groups: GroupsConfig = Field(default_factory=GroupsConfig)
    selector: SelectorConfig = Field(default_factory=SelectorConfig)
    shards: ShardsConfig = Field(default_factory=ShardsConfig)
    tokenomics: TokenomicsConfig = Field(default_factory=TokenomicsConfig)
    chains: list[ChainSpec] = Field(default_factory=lambda: [ChainSpec()], min_length=1)
    workload: WorkloadConfig = Field(default_factory=lambda: WorkloadConfig(rate=0.0))
    swaps: list[SwapSpec] = Field(default_factory=list)
    faults: list[FaultSpec] = Field(default_factory=list)
    scaling: Optional[ScalingConfig] = None
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _references(self):
        problems = []
        ids = [c.id for c in self.chains]
        if len(set(ids)) != len(ids):
            problems.append("chains: duplicate chain id")
        for i, f in enumerate(self.faults):
            if f.chain not in ids:
                problems.append(f"faults.{i}.chain: unknown chain {f.chain!r}")
            elif f.node not in _node_names(self.chains[ids.index(f.chain)]):
                problems.append(f"faults.{i}.node: unknown node {f.node!r}")
            if f.to_cycle is not None and f.to_cycle < f.from_cycle:
                problems.append(f"faults.{i}: to_cycle before from_cycle")
        for i, s in enumerate(self.swaps):
            for side in ("chain_a", "chain_b"):
                if getattr(s, side) not in ids:
                    problems.append(f"swaps.{i}.{side}: unknown chain {getattr(s, side)!r}")
            if s.chain_a == s.chain_b:
                problems.append(f"swaps.{i}: chain_a and chain_b must differ")
        if problems:
            raise ValueError("; ".join(problems))
        return self


def _node_names(chain: ChainSpec) -> set[str]:
    return {f"{spec.name}{i}" for spec in chain.nodes for i in range(spec.count)}


def node_names(chain: ChainSpec) -> list[str]:
    return [f"{spec.name}{i}" for spec in chain.nodes for i in range(spec.count)]


def _format(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        if e["type"] == "extra_forbidden":
            out.append(f"{loc}: unknown key")
        else:
            out.append(f"{loc}: {e['msg']}")
    return out


def parse_config(data) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise SchemaViolation(_format(exc)) from None


def preset_path(name: str) -> Path:
    return Path(str(resources.files("parax") / "presets" / f"{name}.json"))


def resolve_config_path(ref: str | Path) -> Path:
    """A file path, or the name of a shipped preset."""
    p = Path(ref)
    if p.exists():
        return p
    stem = p.stem if p.suffix == ".json" else str(ref)
    if stem in PRESETS and p.parent in (Path("."), Path("examples"), Path("presets")):
        return preset_path(stem)
    raise FileNotFoundError(str(ref))


def validate_config(path: str | Path) -> ScenarioConfig:
    path = resolve_config_path(path)
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation([f"<file>: invalid JSON ({exc.msg} at line {exc.lineno})"]) from None
    return parse_config(data)


def load_preset(name: str) -> ScenarioConfig:
    return validate_config(preset_path(name))
