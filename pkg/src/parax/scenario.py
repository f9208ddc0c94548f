"""Scenario runner: builds chains on one simulated network, feeds them a
workload, drives swaps, and writes the report, economics, trace and block files."""
from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .audit import AuditResult, audit_bytes
from .blockio import write_blockfile
from .chain import Chain, ChainParams
from .config import ChainSpec, ScenarioConfig, WorkloadConfig
from .economics import BAND
from .errors import ParaxError
from .interop import TERMINAL, Exchange, SwapOffer, sign_offer
from .ledger import (
    HEARTBIT,
    PAYLOAD_CALL,
    PAYLOAD_DATA,
    PAYLOAD_RECEIPT,
    KeyPair,
    create_transaction,
    digest,
    hash_transaction,
    stamp_difficulty,
)
from .netsim import Fault, Network, NodeClass, NodeProfile

log = logging.getLogger(__name__)


def coins(amount: float) -> int:
    return int(round(amount * HEARTBIT))


def account_key(seed: int, name: str) -> KeyPair:
    return KeyPair.from_seed(f"{seed}|account|{name}")


def custody_key(seed: int, chain_id: str) -> KeyPair:
    return KeyPair.from_seed(f"{seed}|custody|{chain_id}")


def _rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng([seed, int.from_bytes(digest(tag.encode())[:8], "big")])


# --------------------------------------------------------------------------
# world


class World:
    """Chains sharing one network clock. Every tick runs validation on all
    chains, then the cross-chain guards, then construction, then hands the
    next cycle's workload to the network as client submissions."""

    def __init__(self, net: Network):
        self.net = net
        self.chains: dict[str, Chain] = {}
        self.guards: list[Callable[[], dict]] = []
        self.sources: list = []
        self.last_cycle: Optional[int] = None
        self.conservation_checks = 0
        self.conservation_failures: list[tuple[str, int]] = []
        self.submitted: Counter = Counter()
        net.on_cycle.append(self._tick)
        net.on_deliver = self._deliver

    def add_chain(self, chain: Chain) -> Chain:
        self.chains[chain.chain_id] = chain
        return chain

    def _entry(self, chain: Chain) -> Optional[str]:
        up = chain.active_nodes()
        return up[0] if up else None

    def _emit(self, cycle: int):
        if self.last_cycle is not None and cycle > self.last_cycle:
            return
        for src in self.sources:
            chain = self.chains[src.chain_id]
            # one message per sender keeps that sender's nonces in order
            bundles: dict[bytes, list] = {}
            for tx, cert in src.emit(cycle):
                bundles.setdefault(tx.sender, []).append((tx, cert))
                self.submitted[chain.chain_id] += 1
            dst = self._entry(chain)
            if dst is None:
                continue
            for items in bundles.values():
                size = sum(len(tx.payload) + 200 for tx, _ in items)
                self.net.send(None, dst, "submit", body=(chain.chain_id, items), size=size)

    def start(self):
        self._emit(1)

    def _tick(self, cycle: int, now: int):
        chains = [self.chains[c] for c in sorted(self.chains)]
        for chain in chains:
            chain.prepare_cycle()
        veto: dict[str, set] = defaultdict(set)
        hold: dict[str, set] = defaultdict(set)
        for guard in self.guards:
            v, h = guard()
            for cid, hashes in v.items():
                veto[cid] |= hashes
            for cid, hashes in h.items():
                hold[cid] |= hashes
        for chain in chains:
            chain.commit_cycle(veto.get(chain.chain_id, ()), hold.get(chain.chain_id, ()))
            self.conservation_checks += 1
            if not chain.state.conserved():
                self.conservation_failures.append((chain.chain_id, cycle))
        self._emit(cycle + 1)

    def _deliver(self, msg):
        if msg.kind == "submit":
            cid, items = msg.body
            for tx, cert in items:
                self.chains[cid].try_submit(tx, cert)

    def advance(self, cycles: int = 1):
        self.net.run_until(cycle=self.net.cycle + cycles)

    def run_to(self, cycle: int):
        if self.net.cycle < cycle:
            self.net.run_until(cycle=cycle)


# --------------------------------------------------------------------------
# workloads


@dataclass
class Population:
    users: list[KeyPair]
    contracts: list[bytes]


def make_population(seed: int, chain_id: str, w: WorkloadConfig) -> Population:
    users = [KeyPair.from_seed(f"{seed}|user|{chain_id}|{i}") for i in range(w.users)]
    contracts = [KeyPair.from_seed(f"{seed}|contract|{chain_id}|{i}").account_id
                 for i in range(w.contracts)]
    return Population(users, contracts)


class _Source:
    def __init__(self, chain: Chain, w: WorkloadConfig, pop: Population, seed: int):
        self.chain = chain
        self.chain_id = chain.chain_id
        self.w = w
        self.pop = pop
        self.rng = _rng(seed, f"workload|{chain.chain_id}")
        self._batch: Counter = Counter()

    def _kind(self) -> str:
        w = self.w
        x = self.rng.random()
        for kind, frac in (("contract", w.contract_fraction), ("receipt", w.receipt_fraction),
                           ("data", w.data_fraction)):
            if x < frac:
                return kind
            x -= frac
        return "transfer"

    def _make(self, user_index: int, kind: str):
        w, rng, pop = self.w, self.rng, self.pop
        key = pop.users[user_index]
        value = coins(rng.uniform(w.value_min, w.value_max))
        body = rng.bytes(max(w.payload_bytes - 1, 0))
        if kind == "contract":
            to = pop.contracts[int(rng.integers(len(pop.contracts)))]
            payload = bytes([PAYLOAD_CALL]) + body
        else:
            j = int(rng.integers(len(pop.users) - 1))
            to = pop.users[j + (j >= user_index)].account_id
            payload = {"transfer": b"", "receipt": bytes([PAYLOAD_RECEIPT]) + body,
                       "data": bytes([PAYLOAD_DATA]) + body}[kind]
        nonce = self.chain.dag.expected_nonce(key.account_id) + self._batch[user_index]
        self._batch[user_index] += 1
        difficulty = 0
        if self.chain.params.stamp_base:
            difficulty = stamp_difficulty(self.chain.params.stamp_base, 1 + len(payload) // 256)
        return create_transaction(key, to, value, nonce, payload, cycle=self.chain.cycle,
                                  difficulty=difficulty)


class PoissonSource(_Source):
    """Open-loop arrivals: Poisson count per cycle, uniform senders."""

    def emit(self, cycle: int):
        self._batch.clear()
        n = int(self.rng.poisson(self.w.rate))
        out = []
        for _ in range(n):
            i = int(self.rng.integers(len(self.pop.users)))
            out.append(self._make(i, self._kind()))
        return out


class ClosedLoopSource(_Source):
    """Demand that reacts to price: user i keeps one transaction in flight
    while its reservation fee covers the current friction."""

    def __init__(self, chain, w, pop, seed):
        super().__init__(chain, w, pop, seed)
        n = len(pop.users)
        self.reservation = w.reference_fee * np.exp(w.spread * self.rng.standard_normal(n))
        self.kinds = [self._kind() for _ in range(n)]
        self.inflight: dict[int, bytes] = {}

    def emit(self, cycle: int):
        self._batch.clear()
        chain = self.chain
        F = chain.friction.F
        out = []
        for i in range(len(self.pop.users)):
            h = self.inflight.get(i)
            if h is not None and h not in chain.outcomes:
                continue
            if self.reservation[i] < F or self.rng.random() >= self.w.activity:
                continue
            tx, cert = self._make(i, self.kinds[i])
            self.inflight[i] = hash_transaction(tx)
            out.append((tx, cert))
        return out


# --------------------------------------------------------------------------
# building


def _profiles(spec: ChainSpec, chain_id: str) -> list[NodeProfile]:
    out = []
    for ns in spec.nodes:
        cls = NodeClass(ns.kind)
        avail = ns.availability if ns.availability is not None else (1.0 if cls is NodeClass.SERVER else 0.9)
        for i in range(ns.count):
            out.append(NodeProfile(f"{chain_id}.{ns.name}{i}", cls, ns.capacity, avail, Fault(ns.fault)))
    return out


def chain_params(cfg: ScenarioConfig, chain_id: str, seed: int, **over) -> ChainParams:
    t = cfg.tokenomics
    p = ChainParams(
        chain_id=chain_id, seed=seed, group_size=cfg.groups.min_size, parallel=cfg.groups.parallel,
        redraw_every=cfg.selector.redraw_every, relay_bound=cfg.sim.relay_bound,
        relay_budget_ms=cfg.sim.relay_budget_ms, shard_count=cfg.shards.count,
        replication=cfg.shards.replication, rebalance_every=cfg.shards.rebalance_every,
        F0=t.F0, F_min=t.F_min, F_max=t.F_max, alpha=t.alpha, window=t.window,
        mint_bps=t.mint_bps, mint_every=t.mint_every, stamp_base=t.stamp_base,
    )
    for k, v in over.items():
        setattr(p, k, v)
    return p


def _network(cfg: ScenarioConfig, seed: int) -> Network:
    return Network(seed, cycle_ms=cfg.sim.cycle_ms, base_latency_ms=cfg.net.base_latency_ms,
                   jitter_ms=cfg.net.jitter_ms, drop_prob=cfg.net.drop_prob,
                   keep_transcript=cfg.output.events)


def build_world(cfg: ScenarioConfig, seed: int) -> tuple[World, dict[bytes, KeyPair]]:
    """Chains, genesis balances, fault windows and workload sources."""
    world = World(_network(cfg, seed))
    wallet: dict[bytes, KeyPair] = {}
    multi = len(cfg.chains) > 1
    for spec in cfg.chains:
        cid = spec.id
        balances: dict[bytes, int] = {}
        for acct in spec.accounts:
            key = account_key(seed, acct.name)
            wallet[key.account_id] = key
            balances[key.account_id] = balances.get(key.account_id, 0) + coins(acct.balance)
        w = spec.workload or cfg.workload
        pop = make_population(seed, cid, w)
        if w.rate > 0 or w.mode == "closed_loop":
            for u in pop.users:
                balances[u.account_id] = coins(w.balance)
        contracts = list(pop.contracts)
        if multi:
            contracts.append(custody_key(seed, cid).account_id)
        chain = world.add_chain(Chain(chain_params(cfg, cid, seed), _profiles(spec, cid),
                                      balances, contracts, net=world.net))
        if w.mode == "closed_loop":
            world.sources.append(ClosedLoopSource(chain, w, pop, seed))
        elif w.rate > 0:
            world.sources.append(PoissonSource(chain, w, pop, seed))
    for f in cfg.faults:
        world.net.inject_fault(f"{f.chain}.{f.node}", Fault(f.fault), f.from_cycle, f.to_cycle)
    return world, wallet


# --------------------------------------------------------------------------
# running


@dataclass
class RunReport:
    report: dict
    audit: AuditResult
    blocks: bytes
    economics: dict[str, str] = field(default_factory=dict)
    trace: str = ""
    events: str = ""

    @property
    def passed(self) -> bool:
        return self.audit.passed

    def write(self, out_dir: str | Path):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.report, sort_keys=True, indent=2) + "\n")
        (out / "blocks.bin").write_bytes(self.blocks)
        for i, (cid, text) in enumerate(self.economics.items()):
            name = "economics.csv" if i == 0 else f"economics-{cid}.csv"
            (out / name).write_text(text)
        (out / "trace.log").write_text(self.trace)
        if self.events:
            (out / "events.log").write_text(self.events)


def first_in_band(chain: Chain, hold: int = 1) -> Optional[int]:
    """First cycle from which per-cycle D/S stays inside the band for ``hold`` cycles."""
    run = 0
    for rep in chain.reports:
        ok = rep.supply > 0 and abs(rep.demand / rep.supply - 1.0) <= BAND
        run = run + 1 if ok else 0
        if run >= hold:
            return rep.cycle - hold + 1
    return None


def _chain_section(chain: Chain) -> dict:
    s = chain.summary()
    s["throughput"] = [r.finalized for r in chain.reports]
    ratios = [r.demand / r.supply for r in chain.reports if r.supply > 0]
    s["economics"] = {
        "final_friction": chain.friction.F,
        "mean_ratio_last_window": (sum(ratios[-chain.params.window:]) / len(ratios[-chain.params.window:])
                                   if ratios else 0.0),
        "first_cycle_in_band": first_in_band(chain),
    }
    s["errors"] = sum(len(r.errors) for r in chain.reports)
    return s


def _swap_section(ex: Exchange, specs, results) -> list[dict]:
    out = []
    for spec, res in zip(specs, results):
        if isinstance(res, str):
            out.append({"party_a": spec.party_a, "phase": "Failed", "error": res})
            continue
        value = res.asset_a[1] + res.asset_b[1]
        out.append({
            "swap_id": res.swap_id.hex(),
            "party_a": spec.party_a,
            "party_b": res.party_b.hex() if res.party_b else None,
            "phase": res.phase.value,
            "fees": res.fees,
            "exchanged_value": value,
            "fee_fraction": res.fees / value if value else 0.0,
            "history": [[p.value, t] for p, t in res.history],
        })
    return out


def _run_swaps(world: World, cfg: ScenarioConfig, seed: int, wallet) -> tuple[Optional[Exchange], list]:
    if not cfg.swaps:
        return None, []
    keys = {cid: custody_key(seed, cid) for cid in world.chains}
    ex = Exchange(world, keys, wallet)
    results = []
    for i, spec in enumerate(sorted(cfg.swaps, key=lambda s: s.start_cycle)):
        world.run_to(spec.start_cycle)
        key = account_key(seed, spec.party_a)
        wallet.setdefault(key.account_id, key)
        for name in spec.acceptors:
            k = account_key(seed, name)
            wallet.setdefault(k.account_id, k)
        try:
            offer = sign_offer(SwapOffer(
                key.account_id, spec.chain_a, coins(spec.amount_a), spec.chain_b,
                coins(spec.amount_b), spec.timeout_cycles, spec.fee_bps, salt=i), key)
            swap = ex.run_swap(offer, [account_key(seed, n).account_id for n in spec.acceptors])
            assert swap.phase in TERMINAL
            results.append(swap)
        except ParaxError as exc:
            results.append(f"{type(exc).__name__}: {exc}")
    return ex, results


def _trace_text(chains: list[Chain], ex: Optional[Exchange]) -> str:
    lines = []
    for chain in chains:
        lines.append(f"# chain {chain.chain_id}")
        lines.extend(chain.trace)
    if ex is not None:
        lines.append("# swaps")
        lines.extend(ex.trace)
    return "\n".join(lines) + "\n"


def _finish(cfg, seed, worlds: list[World], extra: dict, ex=None) -> RunReport:
    chains = [c for w in worlds for c in (w.chains[k] for k in sorted(w.chains))]
    blocks = write_blockfile((c.genesis, c.blocks) for c in chains)
    sections = {c.chain_id: _chain_section(c) for c in chains}
    audit = audit_bytes(blocks, {cid: s["final_block_hash"] for cid, s in sections.items()})
    checks = sum(w.conservation_checks for w in worlds)
    failures = [f for w in worlds for f in w.conservation_failures]
    report = {
        "scenario": cfg.name,
        "seed": seed,
        "cycles": max(w.net.cycle for w in worlds),
        "chains": sections,
        "totals": {
            "finalized": sum(s["finalized"] for s in sections.values()),
            "rejected": sum(s["rejected"] for s in sections.values()),
            "submitted": sum(sum(w.submitted.values()) for w in worlds),
        },
        "conservation": {"checks": checks, "failures": [list(f) for f in failures[:10]],
                         "passed": not failures},
        "audit": {"passed": audit.passed, "line": audit.line(), "blocks": audit.blocks,
                  "transactions": audit.transactions},
        **extra,
    }
    econ = {c.chain_id: c.econ.to_csv() for c in chains}
    events = "\n".join(line for w in worlds for line in w.net.transcript)
    return RunReport(report, audit, blocks, econ, _trace_text(chains, ex),
                     events + "\n" if events else "")


def _run_scaling(cfg: ScenarioConfig, seed: int) -> RunReport:
    sc = cfg.scaling
    base = cfg.chains[0].nodes[0]
    worlds = []
    rows = []
    for s in sc.settings:
        world = World(_network(cfg, seed))
        cid = f"S{s}"
        w = cfg.workload.model_copy(update={"rate": sc.rate_per_setting * s, "mode": "poisson"})
        pop = make_population(seed, cid, w)
        profiles = [NodeProfile(f"{cid}.n{i}", NodeClass.SERVER, base.capacity)
                    for i in range(sc.nodes_per_setting * s)]
        chain = world.add_chain(Chain(
            chain_params(cfg, cid, seed, parallel=s), profiles,
            {u.account_id: coins(w.balance) for u in pop.users}, pop.contracts, net=world.net))
        world.sources.append(PoissonSource(chain, w, pop, seed))
        world.last_cycle = cfg.sim.cycles
        world.start()
        world.run_to(cfg.sim.cycles)
        done = chain.summary()["finalized"]
        rows.append({"setting": s, "nodes": len(profiles), "finalized": done,
                     "throughput": done / max(cfg.sim.cycles, 1)})
        worlds.append(world)
    ratios = [b["throughput"] / a["throughput"] if a["throughput"] else 0.0
              for a, b in zip(rows, rows[1:])]
    return _finish(cfg, seed, worlds, {"scaling": {"settings": rows, "ratios": ratios}})


def run_scenario(cfg: ScenarioConfig, seed: Optional[int] = None) -> RunReport:
    """Execute a validated scenario; deterministic in (config, seed)."""
    seed = cfg.sim.seed if seed is None else seed
    if cfg.scaling is not None:
        return _run_scaling(cfg, seed)
    world, wallet = build_world(cfg, seed)
    world.last_cycle = cfg.sim.cycles
    world.start()
    ex, results = _run_swaps(world, cfg, seed, wallet)
    world.run_to(cfg.sim.cycles)
    extra = {}
    if cfg.swaps:
        specs = sorted(cfg.swaps, key=lambda s: s.start_cycle)
        extra["swaps"] = _swap_section(ex, specs, results)
    return _finish(cfg, seed, [world], extra, ex)


def closed_loop_convergence(cfg: ScenarioConfig, seed: int, max_cycles: int = 200,
                            hold: int = 20) -> Optional[int]:
    """Cycle at which D/S enters the band and then holds for ``hold`` cycles,
    or None if that does not happen by ``max_cycles``. Stops early once the
    hold is met, since the outcome is decided at that point."""
    cfg = cfg.model_copy(update={"output": cfg.output.model_copy(update={"events": False})})
    world, _ = build_world(cfg, seed)
    world.last_cycle = max_cycles
    world.start()
    chain = world.chains[cfg.chains[0].id]
    for _ in range(max_cycles):
        world.advance()
        start = first_in_band(chain, hold)
        if start is not None:
            return start
    return None
