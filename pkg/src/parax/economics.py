"""Friction-based token economy: supply/demand metrics, the friction controller,
fee charging, reward distribution and inflation."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .errors import InsufficientBalance
from .ledger import PAYLOAD_RELEASE, Reader, SignedTransaction, Writer, resource_units

BAND = 0.10  # tolerated relative imbalance between demand and supply
BPS = 10_000


@dataclass(frozen=True)
class CycleObservation:
    """Raw per-cycle log entry kept by a chain."""

    cycle: int
    supply_nodes: tuple[tuple[int, float], ...]  # (capacity, availability) of active nodes
    demand_units: int
    tx_count: int
    resource_units: int
    transferred: int
    circulating: int
    group_sizes: tuple[int, int, int, int] = (0, 0, 0, 0)
    duration_ms: int = 0


@dataclass(frozen=True)
class CycleMetrics:
    cycle: int
    n_g: tuple[int, int, int, int]
    tx_count: int
    resource_units: int
    duration_ms: int
    velocity: float
    supply: float
    demand: float

    @property
    def ratio(self) -> float:
        return self.demand / self.supply if self.supply > 0 else math.inf


def velocity(history: Sequence[CycleObservation], window: int) -> float:
    """Value transferred over the window divided by the window's mean circulating balance."""
    recent = list(history)[-window:] if window > 0 else []
    if not recent:
        return 0.0
    mean_balance = sum(o.circulating for o in recent) / len(recent)
    if mean_balance <= 0:
        return 0.0
    return sum(o.transferred for o in recent) / mean_balance


def measure_cycle(history: Sequence[CycleObservation], window: int = 32) -> CycleMetrics:
    """Metrics for the last observation in ``history``."""
    obs = history[-1]
    supply = sum(cap * avail for cap, avail in obs.supply_nodes)
    return CycleMetrics(
        cycle=obs.cycle,
        n_g=obs.group_sizes,
        tx_count=obs.tx_count,
        resource_units=obs.resource_units,
        duration_ms=obs.duration_ms,
        velocity=velocity(history, window),
        supply=float(supply),
        demand=float(obs.demand_units),
    )


class Correction(enum.Enum):
    NO_ACTION = "NoAction"
    RAISE = "RaisePressure"
    EASE = "EasePressure"


def check_resource_balance(metrics: CycleMetrics) -> Correction:
    if metrics.supply <= 0:
        raise ValueError("supply must be positive")
    r = metrics.demand / metrics.supply
    if r > 1 + BAND:
        return Correction.RAISE
    if r < 1 - BAND:
        return Correction.EASE
    return Correction.NO_ACTION


@dataclass(frozen=True)
class FrictionState:
    F: float = 1.0
    F_min: float = 1.0
    F_max: float = 1e6
    alpha: float = 0.5
    pool: int = 0

    def __post_init__(self):
        if self.F_min <= 0:
            raise ValueError("F_min must be positive")
        if not self.F_min <= self.F <= self.F_max:
            raise ValueError("F outside [F_min, F_max]")
        if self.pool < 0:
            raise ValueError("negative pool")


def clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def update_friction(state: FrictionState, metrics: CycleMetrics, alpha: float | None = None) -> FrictionState:
    """F' = clamp(F * (D/S)^alpha). Idle supply holds F unchanged."""
    if metrics.supply <= 0:
        return state
    alpha = state.alpha if alpha is None else alpha
    ratio = metrics.demand / metrics.supply
    new_f = state.F * ratio**alpha if ratio > 0 else state.F_min
    return replace(state, F=clamp(new_f, state.F_min, state.F_max))


def steer_friction(state: FrictionState, metrics: CycleMetrics) -> tuple[FrictionState, Correction]:
    """One controller step with the band correction: alpha doubles for the
    cycle whenever D/S sits outside 1 +- BAND."""
    if metrics.supply <= 0:
        return state, Correction.NO_ACTION
    action = check_resource_balance(metrics)
    alpha = state.alpha if action is Correction.NO_ACTION else state.alpha * 2
    return update_friction(state, metrics, alpha), action


# --------------------------------------------------------------------------
# fees


def friction_fee(F: float, units: int) -> int:
    return math.ceil(F * units)


def release_payload(fee: int, swap_id: bytes) -> bytes:
    return Writer().u8(PAYLOAD_RELEASE).u64(fee).blob(swap_id).getvalue()


def declared_fee(payload: bytes) -> int:
    """Fee carried by a scripted release payload (0 when the payload is not one)."""
    if not payload or payload[0] != PAYLOAD_RELEASE:
        return 0
    r = Reader(payload[1:])
    try:
        return r.u64()
    except Exception:
        return 0


@dataclass(frozen=True)
class FeeRecord:
    tx_sender: bytes
    fee: int
    units: int


def charge_friction(
    tx: SignedTransaction, F: float, balance: int, scripted: bool = False
) -> FeeRecord:
    """Fee for ``tx`` at friction F; scripted (contract-originated) transactions
    pay the fee their payload declares instead."""
    units = resource_units(tx)
    fee = declared_fee(tx.payload) if scripted else friction_fee(F, units)
    if balance < tx.value + fee:
        raise InsufficientBalance(f"balance {balance} < value {tx.value} + fee {fee}")
    return FeeRecord(tx.sender, fee, units)


# --------------------------------------------------------------------------
# rewards and inflation


@dataclass(frozen=True)
class Distribution:
    payouts: tuple[tuple[str, int], ...]
    remainder: int

    @property
    def total(self) -> int:
        return sum(a for _, a in self.payouts)


def distribute_rewards(pool: int, participation: Mapping[str, int]) -> Distribution:
    """Pro-rata split of the pool by participation weight; the integer remainder
    stays in the pool."""
    if pool < 0:
        raise ValueError("negative pool")
    weights = {k: w for k, w in participation.items() if w > 0}
    total = sum(weights.values())
    if total == 0 or pool == 0:
        return Distribution((), pool)
    payouts = tuple((k, pool * w // total) for k, w in sorted(weights.items()))
    payouts = tuple(p for p in payouts if p[1] > 0)
    paid = sum(a for _, a in payouts)
    return Distribution(payouts, pool - paid)


def mint_inflation(rate_bps: int, supply: int) -> int:
    if rate_bps < 0:
        raise ValueError("negative inflation rate")
    return supply * rate_bps // BPS


@dataclass
class EconomicsLog:
    rows: list[dict] = field(default_factory=list)

    HEADER = ("cycle", "S", "D", "F", "v", "pool", "minted", "distributed")

    def append(self, **row):
        self.rows.append(row)

    def to_csv(self) -> str:
        lines = [",".join(self.HEADER)]
        for r in self.rows:
            lines.append(",".join(_fmt(r[h]) for h in self.HEADER))
        return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(round(x, 9))
    return str(x)


def conservation_ok(balances: Iterable[int], pool: int, initial_supply: int, minted: int) -> bool:
    return sum(balances) + pool == initial_supply + minted
