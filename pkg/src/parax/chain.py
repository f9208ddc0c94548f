"""One simulated chain: admission into the DAG, per-cycle committee validation,
the constructor phase, and the economics loop that closes each cycle."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

from .blockio import Genesis
from .consensus import (
    Block,
    Candidate,
    ChainState,
    ValidatorSet,
    Verdict,
    aggregate_votes,
    build_body,
    seal_block,
    segment_count,
    segment_transaction,
    sign_ballot,
    validate_segment,
    verify_ballot,
)
from .dag import DagPool, Status
from .economics import (
    CycleObservation,
    EconomicsLog,
    FrictionState,
    distribute_rewards,
    measure_cycle,
    mint_inflation,
    steer_friction,
)
from .errors import BadSignature, ParaxError, StampNotFound
from .ledger import (
    Account,
    Certificate,
    KeyPair,
    SignedTransaction,
    canonical_encode,
    digest,
    hash_transaction,
    initiator_matches,
    leading_zero_bits,
    resource_units,
    stamp_difficulty,
)
from .netsim import Fault, Network, NodeProfile
from .sharding import (
    CONSTRUCTOR_TAG,
    KEY_SPACE,
    assign_groups,
    classify_group,
    is_rebalance_boundary,
    key_prefix,
    make_shard_map,
    rebalance,
    select_validators,
    shard_for_key,
)

log = logging.getLogger(__name__)


@dataclass
class ChainParams:
    chain_id: str = "A"
    seed: int = 0
    group_size: int = 4
    parallel: int = 1  # committees per group
    redraw_every: int = 1
    relay_bound: int = 1
    relay_budget_ms: Optional[int] = None  # default: half a cycle
    shard_count: int = 16
    replication: int = 2
    rebalance_every: int = 16
    F0: float = 1.0
    F_min: float = 1.0
    F_max: float = 1e6
    alpha: float = 0.5
    window: int = 32
    mint_bps: int = 0
    mint_every: int = 0
    stamp_base: int = 0


@dataclass
class CycleReport:
    chain: str
    cycle: int
    height: Optional[int] = None
    finalized: int = 0
    rejected: int = 0
    deferred: int = 0
    validated: int = 0
    demand: int = 0
    supply: float = 0.0
    friction: float = 0.0
    committees: dict[str, tuple[str, ...]] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)


@dataclass
class Outcome:
    status: str  # Finalized / Rejected
    cycle: int
    height: Optional[int] = None
    reason: str = ""


def _flip(b: bytes) -> bytes:
    if not b:
        return b"\x01"
    return bytes([b[0] ^ 0xFF]) + b[1:]


class Chain:
    def __init__(
        self,
        params: ChainParams,
        nodes: Sequence[NodeProfile],
        balances: Mapping[bytes, int],
        contracts: Iterable[bytes] = (),
        net: Optional[Network] = None,
    ):
        self.params = p = params
        self.chain_id = p.chain_id
        self.net = net if net is not None else Network(p.seed)
        self.node_ids: list[str] = []
        self.keys: dict[str, KeyPair] = {}
        self.profiles: dict[str, NodeProfile] = {}
        for prof in nodes:
            if prof.keypair is None:
                prof.keypair = KeyPair.from_seed(f"{p.seed}|{p.chain_id}|{prof.node_id}")
            self.net.spawn_node(prof)
            self.node_ids.append(prof.node_id)
            self.keys[prof.node_id] = prof.keypair
            self.profiles[prof.node_id] = prof
        contracts = set(contracts)
        accounts = {aid: Account(aid, bal, is_contract=aid in contracts) for aid, bal in balances.items()}
        for cid in contracts:
            accounts.setdefault(cid, Account(cid, 0, is_contract=True))
        self.state = ChainState.genesis(accounts.values())
        self.genesis = Genesis(
            p.chain_id, p.seed, tuple(accounts[k] for k in sorted(accounts)),
            tuple((n, self.keys[n].public) for n in self.node_ids),
        )
        self.head_hash = self.genesis.hash()
        self.blocks: list[Block] = []
        self.smap = make_shard_map(p.seed, p.shard_count, self.node_ids,
                                   min(p.replication, len(self.node_ids)))
        self.dag = DagPool(
            classify=lambda tx: classify_group(tx, self.state.is_contract),
            shard_of=lambda key: shard_for_key(key, self.smap),
            committed_nonce=lambda sender: self.state.account(sender).nonce,
        )
        self.friction = FrictionState(F=p.F0, F_min=p.F_min, F_max=p.F_max, alpha=p.alpha)
        self.initiators: dict[bytes, Certificate] = {}
        self.waiting: list[int] = []
        self.ready: dict[int, Candidate] = {}
        self.deferrals: Counter = Counter()
        self.pinned: set[bytes] = set()
        self.outcomes: dict[bytes, Outcome] = {}
        self.trace: list[str] = []
        self.history: list[CycleObservation] = []
        self.econ = EconomicsLog()
        self.reports: list[CycleReport] = []
        self.pending_rewards: tuple[tuple[bytes, int], ...] = ()
        self.pending_mint = 0
        self.participation: Counter = Counter()
        self.shard_moves = 0
        self.admission_failures: Counter = Counter()
        self._report: Optional[CycleReport] = None
        self._cset: Optional[ValidatorSet] = None
        self._aggregator: Optional[str] = None
        self._group_sizes = [0, 0, 0, 0]

    # ---------------------------------------------------------------- queries

    @property
    def cycle(self) -> int:
        return self.dag.cycle

    @property
    def height(self) -> int:
        return len(self.blocks)

    def active_nodes(self) -> list[str]:
        return [n for n in self.node_ids if self.net.is_up(n)]

    def is_contract(self, account_id: bytes) -> bool:
        return self.state.is_contract(account_id)

    def status_of(self, tx_hash: bytes) -> Optional[Status]:
        if tx_hash not in self.dag:
            return None
        return self.dag.by_hash(tx_hash).status

    def relay_budget(self) -> int:
        p = self.params
        return p.relay_budget_ms if p.relay_budget_ms is not None else self.net.cycle_ms // 2

    # -------------------------------------------------------------- admission

    def submit(self, tx: SignedTransaction, cert: Certificate) -> int:
        """Admit a certified transaction into the DAG."""
        if not initiator_matches(tx, cert):
            raise BadSignature("initiator certificate does not cover this transaction")
        if self.params.stamp_base > 0:
            need = stamp_difficulty(self.params.stamp_base, resource_units(tx))
            if leading_zero_bits(cert.cert_hash) < need:
                raise StampNotFound(f"stamp below difficulty {need}")
        vid = self.dag.insert_transaction(tx, current_cycle=self.dag.cycle)
        self.initiators[self.dag.vertex(vid).tx_hash] = cert
        return vid

    def try_submit(self, tx: SignedTransaction, cert: Certificate) -> Optional[int]:
        try:
            return self.submit(tx, cert)
        except ParaxError as exc:
            self.admission_failures[type(exc).__name__] += 1
            return None

    # ------------------------------------------------------------------ cycle

    def live_units(self) -> int:
        ids = self.dag.pending_ids() + self.waiting + list(self.ready)
        return sum(resource_units(self.dag.vertex(i).tx) for i in ids)

    def _label(self, vid: int) -> tuple[int, int]:
        v = self.dag.vertex(vid)
        par = self.params.parallel
        lane = key_prefix(v.tx_hash) * par // KEY_SPACE if par > 1 else 0
        return v.group, lane

    @staticmethod
    def _label_text(group: int, lane: int, parallel: int) -> str:
        return f"G{group}" if parallel == 1 else f"G{group}.{lane}"

    def prepare_cycle(self) -> CycleReport:
        """Advance the DAG and run the validation phase of one cycle."""
        p = self.params
        demand = self.live_units()
        batch = self.dag.advance_cycle()
        cycle = self.dag.cycle
        rep = self._report = CycleReport(self.chain_id, cycle, demand=demand,
                                         friction=self.friction.F)
        self.waiting = sorted(self.waiting + batch.vertex_ids())
        active = self.active_nodes()

        if is_rebalance_boundary(cycle, p.rebalance_every):
            self.smap, plan = rebalance(p.seed, cycle, self.smap, self.node_ids)
            self.shard_moves += len(plan)

        self._cset, self._aggregator = None, None
        if active:
            size = min(p.group_size, len(active))
            members = select_validators(p.seed, cycle, f"{p.chain_id}:{CONSTRUCTOR_TAG}",
                                        active, size, p.redraw_every)
            self._cset = ValidatorSet(0, cycle, members)
            self._aggregator = next(
                (m for m in members if self.net.fault_of(m) is not Fault.CRASH), None)

        work: dict[tuple[int, int], list[int]] = {}
        for vid in self.waiting:
            work.setdefault(self._label(vid), []).append(vid)
        # rotate the draw order so no group is permanently last when nodes are scarce
        order = sorted(work, key=lambda gl: ((gl[0] - 1 - cycle) % 4, gl[1]))
        labels = [self._label_text(g, l, p.parallel) for g, l in order]
        assignment = assign_groups(p.seed, cycle, active, labels, p.group_size, p.redraw_every)
        self._group_sizes = [0, 0, 0, 0]

        # a sender's transactions validate in nonce order: one whose predecessor
        # is still waiting is held back without counting against the relay bound
        ahead = Counter(c.tx.sender for c in self.ready.values())
        waiting_nonces: dict[bytes, set[int]] = {}
        for vid in self.waiting:
            tx = self.dag.vertex(vid).tx
            waiting_nonces.setdefault(tx.sender, set()).add(tx.nonce)

        still: list[int] = []
        for (group, lane), label in zip(order, labels):
            vids = work[(group, lane)]
            members = assignment.group_map.get(label)
            if members is None or self._aggregator is None:
                still.extend(vids)
                continue
            rep.committees[label] = members
            self._group_sizes[group - 1] += len(members)
            vset = ValidatorSet(group, cycle, members)
            cap = sum(self.profiles[m].capacity for m in members)
            used = 0
            for i, vid in enumerate(vids):
                tx = self.dag.vertex(vid).tx
                want = self.state.account(tx.sender).nonce + ahead[tx.sender]
                if tx.nonce > want:
                    if want in waiting_nonces.get(tx.sender, ()):
                        still.append(vid)
                    else:
                        self._reject(vid, "nonce-gap")
                    continue
                units = resource_units(tx)
                if used and used + units > cap:
                    still.extend(vids[i:])
                    break
                used += units
                try:
                    verdict = self._validate(vid, vset)
                    if verdict == "deferred":
                        still.append(vid)
                    elif verdict == "validated":
                        ahead[tx.sender] += 1
                except ParaxError as exc:  # surfaced in the report, never fatal
                    rep.errors.append(f"{type(exc).__name__}: {exc}")
                    self._reject(vid, "error")
        self.waiting = sorted(still)
        return rep

    def _validate(self, vid: int, vset: ValidatorSet) -> str:
        net = self.net
        v = self.dag.vertex(vid)
        tx, tx_hash = v.tx, v.tx_hash
        enc = canonical_encode(tx)
        k = segment_count(vset.size)
        segs = segment_transaction(enc, k)
        want = [digest(s) for s in segs]
        fee = self.state.fee_for(tx, self.friction.F)
        deadline = net.now + self.relay_budget()
        votes = []
        for m in vset.members:
            fault = net.fault_of(m)
            if fault is Fault.CRASH:
                continue
            if not net.arrived(net.send(None, m, "segments", size=len(enc)), deadline):
                continue
            received = [_flip(s) for s in segs] if fault is Fault.TAMPER else segs
            verdicts = [
                validate_segment(m, tx, i, self.state, received=received[i],
                                 expected_digests=want, fee=fee, tx_hash=tx_hash)
                for i in range(k)
            ]
            ballots = [sign_ballot(self.keys[m], m, tx_hash, verdicts)]
            if fault is Fault.EQUIVOCATE:
                flipped = [
                    replace(x, verdict=Verdict.REJECT if x.verdict is Verdict.APPROVE else Verdict.APPROVE,
                            reason=None if x.verdict is Verdict.REJECT else "equivocation")
                    for x in verdicts
                ]
                ballots.append(sign_ballot(self.keys[m], m, tx_hash, flipped))
            for ballot in ballots:
                msg = net.send(m, self._aggregator, "ballot", size=64 + 40 * k)
                if net.arrived(msg, deadline) and verify_ballot(self.keys[m].public, ballot):
                    votes.extend(ballot)

        res = aggregate_votes(votes, vset, segments=k, subject=tx.cert_id)
        counted = Counter(x.voter for x in votes if x.voter not in res.equivocators)
        for voter in counted:
            self.participation[voter] += k
        rep = self._report
        if res.validated:
            self.dag.mark_status(vid, Status.VALIDATED)
            self.ready[vid] = Candidate(
                tx, tx_hash, v.group, (v.cycle, vid), self.initiators[tx_hash],
                res.certificate, vset.members, vset.quorum, res.evidence,
            )
            rep.validated += 1
            return "validated"
        if res.decisive:
            self._reject(vid, res.reason or "rejected")
            return "rejected"
        self.deferrals[vid] += 1
        if self.deferrals[vid] > self.params.relay_bound:
            self._reject(vid, "relay-timeout")
            return "rejected"
        rep.deferred += 1
        return "deferred"

    def _reject(self, vid: int, reason: str):
        v = self.dag.vertex(vid)
        self.dag.mark_status(vid, Status.REJECTED)
        self.ready.pop(vid, None)
        self.deferrals.pop(vid, None)
        self.outcomes[v.tx_hash] = Outcome("Rejected", self.cycle, None, reason)
        self.trace.append(f"{self.cycle} - {v.tx_hash.hex()} G{v.group} Rejected:{reason}")
        if self._report is not None:
            self._report.rejected += 1

    def pin(self, tx_hash: bytes):
        """Exempt a validated transaction from the relay bound (a committed
        cross-chain leg must be retried until it lands)."""
        self.pinned.add(tx_hash)

    def ready_hashes(self) -> set[bytes]:
        return {c.tx_hash for c in self.ready.values()}

    def commit_cycle(self, veto: Iterable[bytes] = (), hold: Iterable[bytes] = ()) -> CycleReport:
        """Constructor phase, then the economics update for the cycle.

        Vetoed candidates are rejected; held ones stay validated but are left
        out of this cycle's block."""
        p = self.params
        rep = self._report
        cycle = self.dag.cycle
        veto, hold = set(veto), set(hold)
        for vid, cand in sorted(self.ready.items()):
            if cand.tx_hash in veto:
                self._reject(vid, "cross-chain-veto")

        block = None
        distributed = minted = 0
        finalized_value = finalized_units = finalized = 0
        if self._cset is not None:
            sealed = self._construct(cycle, hold)
            if sealed is not None:
                block, body, signers = sealed
                distributed = sum(a for _, a in block.rewards)
                minted = block.minted
                self.state = body.state
                self.blocks.append(block)
                self.head_hash = block.block_hash()
                self.pending_rewards, self.pending_mint = (), 0
                rep.height = block.height
                for m in signers:
                    self.participation[m] += 1
                for cand, _fee in body.applied:
                    vid = cand.order[1]
                    self.dag.mark_status(vid, Status.FINALIZED)
                    del self.ready[vid]
                    self.deferrals.pop(vid, None)
                    self.outcomes[cand.tx_hash] = Outcome("Finalized", cycle, block.height)
                    self.trace.append(
                        f"{cycle} {block.height} {cand.tx_hash.hex()} G{cand.group} Finalized")
                    finalized += 1
                    finalized_value += cand.tx.value
                    finalized_units += resource_units(cand.tx)
                for cand, reason in body.vetoed:
                    self._reject(cand.order[1], f"constructor-veto:{reason}")
        if block is None:
            for vid, cand in sorted(self.ready.items()):
                if cand.tx_hash in self.pinned or cand.tx_hash in hold:
                    continue
                self.deferrals[vid] += 1
                if self.deferrals[vid] > p.relay_bound:
                    self._reject(vid, "relay-timeout")
        rep.finalized = finalized

        supply_nodes = tuple((self.profiles[n].capacity, self.profiles[n].availability)
                             for n in self.active_nodes())
        self.history.append(CycleObservation(
            cycle, supply_nodes, rep.demand, finalized, finalized_units, finalized_value,
            self.state.total_balances(), tuple(self._group_sizes), self.net.cycle_ms,
        ))
        metrics = measure_cycle(self.history, p.window)
        rep.supply = metrics.supply
        F_used = self.friction.F
        steered, _action = steer_friction(self.friction, metrics)
        self.friction = replace(steered, pool=self.state.pool)
        self.econ.append(cycle=cycle, S=metrics.supply, D=int(metrics.demand), F=F_used,
                         v=metrics.velocity, pool=self.state.pool, minted=minted,
                         distributed=distributed)

        if not self.pending_rewards:
            dist = distribute_rewards(self.state.pool, self.participation)
            self.pending_rewards = tuple((self.keys[n].account_id, a) for n, a in dist.payouts)
        self.participation = Counter()
        if p.mint_bps and p.mint_every and cycle % p.mint_every == 0:
            supply = self.state.initial_supply + self.state.minted + self.pending_mint
            self.pending_mint += mint_inflation(p.mint_bps, supply)
        self.reports.append(rep)
        self._report = None
        return rep

    def _construct(self, cycle: int, hold: set[bytes] = frozenset()):
        net = self.net
        cset = self._cset
        batch = [c for c in self.ready.values() if c.tx_hash not in hold]
        body = build_body(self.state, batch, self.friction.F,
                          self.pending_mint, self.pending_rewards)
        honest_root = body.state.state_root()
        deadline = net.now + self.relay_budget()
        for leader in cset.members:
            lfault = net.fault_of(leader)
            if lfault is Fault.CRASH:
                continue
            root = _flip(honest_root) if lfault is Fault.TAMPER else honest_root
            signers = []
            for m in cset.members:
                f = net.fault_of(m)
                if f is Fault.CRASH:
                    continue
                if m != leader and not net.arrived(net.send(leader, m, "proposal", 256), deadline):
                    continue
                if f is Fault.HONEST and root != honest_root:
                    continue  # honest members replay the batch and refuse a wrong root
                signers.append(m)
            if len(signers) >= cset.quorum:
                block = seal_block(
                    body, prev_hash=self.head_hash, height=len(self.blocks) + 1, cycle=cycle,
                    friction=self.friction.F, minted=self.pending_mint,
                    rewards=self.pending_rewards, cset=cset, signers=signers, state_root=root,
                )
                return block, body, signers
        return None

    def run_cycle(self) -> CycleReport:
        self.prepare_cycle()
        return self.commit_cycle()

    def attach(self):
        """Drive this chain from the network's cycle clock."""
        self.net.on_cycle.append(lambda cycle, now: self.run_cycle())
        return self

    # ----------------------------------------------------------------- export

    def certificates_for(self, tx_hash: bytes) -> Optional[tuple[Certificate, ...]]:
        out = self.outcomes.get(tx_hash)
        if out is None or out.height is None:
            return None
        for e in self.blocks[out.height - 1].entries:
            if hash_transaction(e.tx) == tx_hash:
                return e.certs
        return None

    def summary(self) -> dict:
        statuses = Counter(o.status for o in self.outcomes.values())
        live = len(self.dag.pending_ids()) + len(self.waiting) + len(self.ready)
        return {
            "final_block_hash": self.head_hash.hex(),
            "height": self.height,
            "finalized": statuses.get("Finalized", 0),
            "rejected": statuses.get("Rejected", 0),
            "unresolved": live,
            "admission_failures": dict(sorted(self.admission_failures.items())),
            "friction": self.friction.F,
            "pool": self.state.pool,
            "minted": self.state.minted,
            "initial_supply": self.state.initial_supply,
            "shard_moves": self.shard_moves,
        }
