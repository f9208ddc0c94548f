"""Exhaustive drop/timeout enumeration over the swap protocol.

Stateless depth-first search: each run replays the swap from scratch with a
decision prefix for the protocol messages it consults, delivering anything
beyond the prefix. Every consulted message then spawns a branch in which it
is dropped. A run that consulted c of the 12 messages stands for 2^(12-c)
drop subsets, so the weights of one timeout placement must add to 4096.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .config import parse_config
from .interop import MESSAGES, Exchange, Phase, ScriptedCourier, SwapOffer, sign_offer
from .scenario import account_key, build_world, coins, custody_key

PLACEMENTS: tuple[Optional[int], ...] = (None, 1, 2, 3, 4, 5, 6)

_CONFIG = {
    "name": "modelcheck",
    "sim": {"seed": 0, "cycles": 0},
    "chains": [
        {"id": "A", "nodes": [{"count": 4, "capacity": 10}], "accounts": [{"name": "alice", "balance": 500}]},
        {"id": "B", "nodes": [{"count": 4, "capacity": 10}], "accounts": [{"name": "bob", "balance": 500}]},
    ],
    "output": {"events": False},
}


@dataclass
class Terminal:
    decisions: tuple[bool, ...]
    consulted: tuple[str, ...]
    phase: Phase
    verdict: str  # published-both / refunded-both / mixed:...
    conserved: bool
    custody_empty: bool

    @property
    def weight(self) -> int:
        return 2 ** (len(MESSAGES) - len(self.consulted))


@dataclass
class PlacementResult:
    expire_before: Optional[int]
    runs: int = 0
    coverage: int = 0
    verdicts: Counter = field(default_factory=Counter)
    violations: list[Terminal] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and self.coverage == 2 ** len(MESSAGES)


def _classify(before, after, amount_a: int, amount_b: int, fee_bps: int) -> str:
    """Compare balances net of friction: a party either ends with its
    counter-asset on the other chain or lost nothing beyond fees."""
    def delta(name, chain):
        return after[(name, chain)] - before[(name, chain)]

    got_a = delta("bob", "A") >= amount_a - amount_a * fee_bps // 10_000  # bob received A's asset
    got_b = delta("alice", "B") >= amount_b - amount_b * fee_bps // 10_000
    lost_a = delta("alice", "A") <= -amount_a
    lost_b = delta("bob", "B") <= -amount_b
    if got_a and got_b and lost_a and lost_b:
        return "published-both"
    if not (got_a or got_b or lost_a or lost_b):
        return "refunded-both"
    return f"mixed:got_a={got_a},got_b={got_b},lost_a={lost_a},lost_b={lost_b}"


def run_once(decisions: Sequence[bool], expire_before: Optional[int], seed: int = 0,
             amounts: tuple[float, float] = (100.0, 250.0), fee_bps: int = 150) -> Terminal:
    cfg = parse_config({**_CONFIG, "sim": {"seed": seed, "cycles": 0}})
    world, wallet = build_world(cfg, seed)
    prefix = list(decisions)

    def decide(_name: str) -> bool:
        i = len(courier.consulted) - 1  # consulted already includes this message
        return prefix[i] if i < len(prefix) else True

    courier = ScriptedCourier(decide)
    ex = Exchange(world, {c: custody_key(seed, c) for c in world.chains}, wallet, courier)
    alice, bob = account_key(seed, "alice"), account_key(seed, "bob")
    names = {alice.account_id: "alice", bob.account_id: "bob"}

    def snapshot():
        return {(names[a], c): world.chains[c].state.balance(a)
                for a in names for c in world.chains}

    world.start()
    before = snapshot()
    offer = sign_offer(SwapOffer(alice.account_id, "A", coins(amounts[0]), "B", coins(amounts[1]),
                                 timeout_cycles=8, fee_bps=fee_bps), alice)
    swap = ex.run_swap(offer, [bob.account_id], expire_before=expire_before)
    verdict = _classify(before, snapshot(), coins(amounts[0]), coins(amounts[1]), fee_bps)
    conserved = all(c.state.conserved() for c in world.chains.values())
    custody_empty = all(world.chains[c].state.balance(custody_key(seed, c).account_id) == 0
                        for c in world.chains) and all(not ca.entries for ca in ex.custody.values())
    return Terminal(tuple(prefix[:len(courier.consulted)]), tuple(courier.consulted),
                    swap.phase, verdict, conserved, custody_empty)


def explore(expire_before: Optional[int], seed: int = 0) -> PlacementResult:
    res = PlacementResult(expire_before)
    stack: list[tuple[bool, ...]] = [()]
    while stack:
        prefix = stack.pop()
        t = run_once(prefix, expire_before, seed)
        res.runs += 1
        res.coverage += t.weight
        res.verdicts[t.verdict] += 1
        if t.verdict.startswith("mixed") or not t.conserved or not t.custody_empty:
            res.violations.append(t)
        full = t.decisions + (True,) * (len(t.consulted) - len(t.decisions))
        for j in range(len(prefix), len(t.consulted)):
            stack.append(full[:j] + (False,))
    return res


def model_check(placements: Sequence[Optional[int]] = PLACEMENTS, seed: int = 0) -> list[PlacementResult]:
    return [explore(p, seed) for p in placements]
