"""Cross-chain flash contract: initiate, lock, flash-match, sync and publish,
with custody escrow on each chain, a timeout/refund path and a paired-release guard.

The exchange runs on top of a world object that owns the chains and the
network clock. Operations are synchronous: each one submits what it needs,
drives the world forward until the relevant transactions resolve, and
returns. Inter-chain protocol messages go through a courier so tests can
decide exactly which ones get lost.
"""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence

from .economics import BPS, friction_fee, release_payload
from .errors import (
    BadSignature,
    DuplicateSwap,
    InsufficientBalance,
    WrongPhase,
)
from .ledger import (
    PAYLOAD_CALL,
    KeyPair,
    SignedTransaction,
    Writer,
    create_transaction,
    digest,
    verify_raw,
)


class Phase(enum.Enum):
    INITIATED = "Initiated"
    LOCKED_A = "LockedA"
    MATCHED = "Matched"
    LOCKED_BOTH = "LockedBoth"
    SYNCED = "Synced"
    PUBLISHED = "Published"
    REFUNDED = "Refunded"
    ABORTED = "Aborted"


FORWARD = {
    Phase.INITIATED: Phase.LOCKED_A,
    Phase.LOCKED_A: Phase.MATCHED,
    Phase.MATCHED: Phase.LOCKED_BOTH,
    Phase.LOCKED_BOTH: Phase.SYNCED,
    Phase.SYNCED: Phase.PUBLISHED,
}
TERMINAL = frozenset({Phase.PUBLISHED, Phase.REFUNDED, Phase.ABORTED})

# the protocol trace: every message that gates a step
MESSAGES = (
    "offer->A", "offer->B",
    "lock-request->A",
    "lockA-receipt->B",
    "match-notice->B",
    "lockB-receipt->A", "checksum A->B", "checksum B->A",
    "release->A", "release->B", "prepared A->B", "prepared B->A",
)


def transition_ok(old: Phase, new: Phase) -> bool:
    if old in TERMINAL:
        return False
    return FORWARD.get(old) is new or new in (Phase.REFUNDED, Phase.ABORTED)


# --------------------------------------------------------------------------
# offers, receipts, contracts


@dataclass(frozen=True)
class SwapOffer:
    party_a: bytes
    chain_a: str
    amount_a: int
    chain_b: str
    amount_b: int
    timeout_cycles: int = 8
    fee_bps: int = 150
    salt: int = 0
    signature: bytes = b""

    def __post_init__(self):
        if self.amount_a <= 0 or self.amount_b <= 0:
            raise ValueError("swap amounts must be positive")
        if not 0 <= self.fee_bps < BPS:
            raise ValueError("fee_bps outside [0, 10000)")
        if self.chain_a == self.chain_b:
            raise ValueError("a swap needs two distinct chains")

    def body(self) -> bytes:
        return (Writer().text("offer").blob(self.party_a).text(self.chain_a).u64(self.amount_a)
                .text(self.chain_b).u64(self.amount_b).u32(self.timeout_cycles)
                .u32(self.fee_bps).u64(self.salt).getvalue())

    @property
    def swap_id(self) -> bytes:
        return digest(self.body())


def sign_offer(offer: SwapOffer, key: KeyPair) -> SwapOffer:
    if key.account_id != offer.party_a:
        raise BadSignature("offer key does not match party_a")
    return replace(offer, signature=key.public + key.sign(offer.body()))


def verify_offer(offer: SwapOffer) -> bool:
    sig = offer.signature
    if len(sig) != 96 or digest(sig[:32]) != offer.party_a:
        return False
    return verify_raw(sig[:32], offer.body(), sig[32:])


@dataclass(frozen=True)
class LockReceipt:
    chain: str
    swap_id: bytes
    party: bytes
    amount: int
    tx_hash: bytes
    height: int

    def encode(self) -> bytes:
        return (Writer().text(self.chain).blob(self.swap_id).blob(self.party).u64(self.amount)
                .blob(self.tx_hash).u64(self.height).getvalue())


@dataclass
class CustodyAccount:
    chain: str
    account_id: bytes
    entries: dict[bytes, tuple[bytes, int]] = field(default_factory=dict)  # swap -> (owner, amount)

    @property
    def balance(self) -> int:
        return sum(a for _, a in self.entries.values())


@dataclass
class SwapContract:
    swap_id: bytes
    chain_a: str
    chain_b: str
    party_a: bytes
    party_b: Optional[bytes]
    asset_a: tuple[str, int]
    asset_b: tuple[str, int]
    phase: Phase
    timeout_at: int
    fee_bps: int
    lock_receipts: dict[str, LockReceipt] = field(default_factory=dict)
    checksums: dict[str, bytes] = field(default_factory=dict)
    # what each chain believes the receipts are (its own plus the relayed one)
    views: dict[str, dict[str, LockReceipt]] = field(default_factory=dict)
    releases: dict[str, bytes] = field(default_factory=dict)
    refunds: dict[str, bytes] = field(default_factory=dict)
    decision: Optional[str] = None
    known: set[str] = field(default_factory=set)  # chains that received the offer
    tamper_view: Optional[str] = None
    history: list[tuple[Phase, int]] = field(default_factory=list)
    fees: int = 0
    held: int = 0  # cycles a lone ready release leg has been held back


@dataclass(frozen=True)
class MatchResult:
    matched: bool
    party_b: Optional[bytes] = None


@dataclass(frozen=True)
class SettlementRecord:
    swap_id: bytes
    checksum_a: bytes
    checksum_b: bytes

    @property
    def agreed(self) -> bool:
        return self.checksum_a == self.checksum_b


def settlement_checksum(receipts: Mapping[str, LockReceipt], chains: Sequence[str],
                        swap_id: bytes, phase: Phase) -> bytes:
    w = Writer()
    for c in chains:
        r = receipts.get(c)
        w.blob(r.encode() if r else b"")
    return digest(w.blob(swap_id).text(phase.value).getvalue())


# --------------------------------------------------------------------------
# couriers


class Courier(Protocol):
    def deliver(self, swap: "SwapContract", name: str) -> bool: ...


class NetCourier:
    """Carries protocol messages over the simulated network. A message that
    made it once stays delivered; a lost one may be retried later."""

    def __init__(self, world):
        self.world = world
        self.delivered: set[tuple[bytes, str]] = set()

    def _endpoint(self, chain_id: str) -> Optional[str]:
        chain = self.world.chains[chain_id]
        up = chain.active_nodes()
        return up[0] if up else None

    def deliver(self, swap: "SwapContract", name: str) -> bool:
        key = (swap.swap_id, name)
        if key in self.delivered:
            return True
        src_side, dst_side = _route(name)
        sides = {"A": swap.chain_a, "B": swap.chain_b}
        src = self._endpoint(sides[src_side]) if src_side else None
        dst = self._endpoint(sides[dst_side])
        if dst is None or (src_side and src is None):
            return False
        msg = self.world.net.send(src, dst, "swap:" + name, size=128)
        if not msg.dropped:
            self.delivered.add(key)
        return not msg.dropped


def _route(name: str) -> tuple[Optional[str], str]:
    """(source side, destination side) of a protocol message; None = the client."""
    if "->" in name and " " in name:  # "checksum A->B", "prepared B->A"
        a, b = name.split(" ")[1].split("->")
        return a, b
    head, dst = name.split("->")
    if head.startswith("lockA"):
        return "A", dst
    if head.startswith("lockB"):
        return "B", dst
    return None, dst


class ScriptedCourier:
    """Answers each distinct message from a decision function, once."""

    def __init__(self, decide: Callable[[str], bool]):
        self.decide = decide
        self.answers: dict[tuple[bytes, str], bool] = {}
        self.consulted: list[str] = []

    def deliver(self, swap: "SwapContract", name: str) -> bool:
        key = (swap.swap_id, name)
        if key not in self.answers:
            self.consulted.append(name)
            self.answers[key] = bool(self.decide(name))
        return self.answers[key]


# --------------------------------------------------------------------------
# the exchange


class World(Protocol):  # what the exchange needs from its host
    chains: Mapping
    net: object
    guards: list

    def advance(self, cycles: int = 1): ...


class Exchange:
    def __init__(
        self,
        world,
        custody_keys: Mapping[str, KeyPair],
        wallet: Mapping[bytes, KeyPair],
        courier: Optional[Courier] = None,
        wait_cycles: int = 12,
        hold_cycles: int = 4,
    ):
        self.world = world
        self.custody_keys = dict(custody_keys)
        self.custody = {c: CustodyAccount(c, k.account_id) for c, k in custody_keys.items()}
        self.wallet = dict(wallet)
        self.courier = courier if courier is not None else NetCourier(world)
        self.wait_cycles = wait_cycles
        self.hold_cycles = hold_cycles
        self.swaps: dict[bytes, SwapContract] = {}
        self.trace: list[str] = []
        self._vetoed: dict[str, set[bytes]] = defaultdict(set)
        world.guards.append(self.guard)

    # ------------------------------------------------------------- helpers

    @property
    def now(self) -> int:
        return self.world.net.now

    def _chain(self, chain_id: str):
        return self.world.chains[chain_id]

    def _side(self, swap: SwapContract, chain_id: str) -> str:
        return "A" if chain_id == swap.chain_a else "B"

    def _send(self, swap: SwapContract, name: str) -> bool:
        ok = self.courier.deliver(swap, name)
        self._log(swap, "-", f"msg {name} {'delivered' if ok else 'lost'}")
        return ok

    def _log(self, swap: SwapContract, chain: str, detail: str):
        self.trace.append(f"{swap.swap_id.hex()[:16]} {swap.phase.value} {self.now} {chain} {detail}")

    def _move(self, swap: SwapContract, new: Phase):
        if not transition_ok(swap.phase, new):
            raise WrongPhase(f"{swap.phase.value} -> {new.value}")
        swap.phase = new
        swap.history.append((new, self.now))
        self._log(swap, "-", "phase")

    def _expect(self, swap: SwapContract, *phases: Phase):
        if swap.phase not in phases:
            raise WrongPhase(f"swap is {swap.phase.value}, needs {'/'.join(p.value for p in phases)}")

    def _settle_tx(self, chain_id: str, key: KeyPair, to: bytes, value: int, payload: bytes):
        """Submit a transaction and drive the world until it resolves.

        Returns (tx_hash, outcome or None when it never resolved in time)."""
        chain = self._chain(chain_id)
        nonce = chain.dag.expected_nonce(key.account_id)
        tx, cert = create_transaction(key, to, value, nonce, payload, cycle=chain.cycle)
        chain.submit(tx, cert)
        h = chain.dag.vertex(len(chain.dag) - 1).tx_hash
        for _ in range(self.wait_cycles):
            self.world.advance()
            if h in chain.outcomes:
                return h, chain.outcomes[h]
        return h, None

    # ----------------------------------------------------------- operations

    def initiate_swap(self, offer: SwapOffer) -> SwapContract:
        if not verify_offer(offer):
            raise BadSignature("offer signature invalid")
        sid = offer.swap_id
        if sid in self.swaps:
            raise DuplicateSwap(sid.hex())
        chain_a = self._chain(offer.chain_a)
        if chain_a.state.balance(offer.party_a) < offer.amount_a:
            raise InsufficientBalance("party_a cannot cover the offered asset")
        swap = SwapContract(
            swap_id=sid, chain_a=offer.chain_a, chain_b=offer.chain_b, party_a=offer.party_a,
            party_b=None, asset_a=(offer.chain_a, offer.amount_a),
            asset_b=(offer.chain_b, offer.amount_b), phase=Phase.INITIATED,
            timeout_at=self.now + offer.timeout_cycles * self.world.net.cycle_ms,
            fee_bps=offer.fee_bps,
        )
        swap.history.append((Phase.INITIATED, self.now))
        self.swaps[sid] = swap
        self._log(swap, offer.chain_a, f"initiate {offer.amount_a}->{offer.amount_b}")
        swap.views = {swap.chain_a: {}, swap.chain_b: {}}
        swap.known = {c for c, name in ((swap.chain_a, "offer->A"), (swap.chain_b, "offer->B"))
                      if self._send(swap, name)}
        return swap

    def lock_asset(self, chain_id: str, swap: SwapContract, party: bytes) -> Optional[LockReceipt]:
        """Move the party's leg into custody. Returns None when the step could
        not run yet (a gating message was lost or the transfer did not land)."""
        if chain_id == swap.chain_a and party == swap.party_a:
            self._expect(swap, Phase.INITIATED)
            amount, gate, nxt = swap.asset_a[1], "lock-request->A", Phase.LOCKED_A
        elif chain_id == swap.chain_b and party == swap.party_b:
            self._expect(swap, Phase.MATCHED)
            amount, gate, nxt = swap.asset_b[1], "match-notice->B", Phase.LOCKED_BOTH
        else:
            raise WrongPhase("party may not lock on this chain in the current phase")
        if chain_id not in swap.known or not self._send(swap, gate):
            return None
        chain = self._chain(chain_id)
        key = self.wallet[party]
        payload = bytes([PAYLOAD_CALL]) + swap.swap_id
        probe = SignedTransaction(party, b"", amount, 0, payload)
        fee = friction_fee(chain.friction.F, 1 + len(probe.payload) // 256)
        if chain.state.balance(party) < amount + fee:
            raise InsufficientBalance("party cannot cover its lock")
        custody = self.custody[chain_id]
        h, out = self._settle_tx(chain_id, key, custody.account_id, amount, payload)
        if out is None or out.status != "Finalized":
            self._log(swap, chain_id, f"lock {h.hex()[:16]} failed")
            return None
        custody.entries[swap.swap_id + chain_id.encode()] = (party, amount)
        receipt = LockReceipt(chain_id, swap.swap_id, party, amount, h, out.height)
        swap.lock_receipts[chain_id] = receipt
        swap.views[chain_id][chain_id] = receipt
        swap.fees += self._fee_paid(chain_id, h)
        self._move(swap, nxt)
        self._log(swap, chain_id, f"locked {amount} height {out.height}")
        return receipt

    def flash_match(self, swap: SwapContract, candidates: Iterable[bytes]) -> MatchResult:
        self._expect(swap, Phase.LOCKED_A)
        if swap.chain_b not in swap.known or not self._send(swap, "lockA-receipt->B"):
            return MatchResult(False)
        swap.views[swap.chain_b][swap.chain_a] = swap.lock_receipts[swap.chain_a]
        chain_b = self._chain(swap.chain_b)
        want = swap.asset_b[1]
        for cand in sorted(set(candidates)):
            if cand == swap.party_a:
                continue
            if chain_b.state.balance(cand) >= want:
                swap.party_b = cand
                self._move(swap, Phase.MATCHED)
                self._log(swap, swap.chain_b, f"matched {cand.hex()[:16]}")
                return MatchResult(True, cand)
        return MatchResult(False)

    def sync_settle(self, swap: SwapContract) -> Optional[SettlementRecord]:
        self._expect(swap, Phase.LOCKED_BOTH)
        if not self._send(swap, "lockB-receipt->A"):
            return None
        swap.views[swap.chain_a][swap.chain_b] = swap.lock_receipts[swap.chain_b]
        if swap.tamper_view is not None:
            other = swap.chain_b if swap.tamper_view == swap.chain_a else swap.chain_a
            r = swap.views[swap.tamper_view][other]
            swap.views[swap.tamper_view][other] = replace(r, amount=r.amount + 1)
        order = (swap.chain_a, swap.chain_b)
        ca = settlement_checksum(swap.views[swap.chain_a], order, swap.swap_id, swap.phase)
        cb = settlement_checksum(swap.views[swap.chain_b], order, swap.swap_id, swap.phase)
        swap.checksums = {swap.chain_a: ca, swap.chain_b: cb}
        if not (self._send(swap, "checksum A->B") and self._send(swap, "checksum B->A")):
            return None
        record = SettlementRecord(swap.swap_id, ca, cb)
        if record.agreed:
            self._move(swap, Phase.SYNCED)
        else:
            self._log(swap, "-", "checksum mismatch")
            self._unwind(swap, Phase.ABORTED)
        return record

    def tamper_receipt(self, swap: SwapContract, chain_id: str):
        """Fault hook: the counter-party receipt relayed to ``chain_id`` arrives altered."""
        swap.tamper_view = chain_id

    def publish_state(self, swap: SwapContract) -> Optional[tuple[bytes, bytes]]:
        """Paired release from both custodies; either both land or both are
        vetoed and the locks are refunded."""
        self._expect(swap, Phase.SYNCED)
        legs = (
            (swap.chain_a, swap.party_b, swap.asset_a[1], "release->A"),
            (swap.chain_b, swap.party_a, swap.asset_b[1], "release->B"),
        )
        for chain_id, to, amount, gate in legs:
            if not self._send(swap, gate):
                continue
            fee = amount * swap.fee_bps // BPS
            chain = self._chain(chain_id)
            key = self.custody_keys[chain_id]
            nonce = chain.dag.expected_nonce(key.account_id)
            tx, cert = create_transaction(key, to, amount - fee,
                                          nonce, release_payload(fee, swap.swap_id), cycle=chain.cycle)
            chain.submit(tx, cert)
            swap.releases[chain_id] = chain.dag.vertex(len(chain.dag) - 1).tx_hash
            self._log(swap, chain_id, f"release {amount - fee} fee {fee}")
        if len(swap.releases) < 2:
            swap.decision = "abort"
            for c, h in swap.releases.items():
                self._vetoed[c].add(h)
        for _ in range(self.wait_cycles):
            if swap.decision is not None and self._legs_resolved(swap):
                break
            self.world.advance()
        if swap.decision == "commit":
            # committed legs are pinned; they land unless the chain stops entirely
            for _ in range(self.wait_cycles):
                if self._legs_resolved(swap):
                    break
                self.world.advance()
            if not all(self._chain(c).outcomes.get(h) is not None
                       and self._chain(c).outcomes[h].status == "Finalized"
                       for c, h in swap.releases.items()):
                raise RuntimeError("committed release did not finalize")
            for c, h in swap.releases.items():
                swap.fees += self._fee_paid(c, h)
                self.custody[c].entries.pop(swap.swap_id + c.encode(), None)
            self._move(swap, Phase.PUBLISHED)
            return swap.releases[swap.chain_a], swap.releases[swap.chain_b]
        self._unwind(swap, Phase.ABORTED)
        return None

    def _fee_paid(self, chain_id: str, tx_hash: bytes) -> int:
        chain = self._chain(chain_id)
        out = chain.outcomes[tx_hash]
        return next(e.fee for e in chain.blocks[out.height - 1].entries if e.tx_hash == tx_hash)

    def _legs_resolved(self, swap: SwapContract) -> bool:
        return all(h in self._chain(c).outcomes for c, h in swap.releases.items())

    def expire(self, swap: SwapContract, now: Optional[int] = None) -> list[bytes]:
        now = self.now if now is None else now
        if swap.phase in TERMINAL or now < swap.timeout_at or swap.decision == "commit":
            return []
        return self._unwind(swap, Phase.REFUNDED)

    def _unwind(self, swap: SwapContract, final: Phase) -> list[bytes]:
        """Return every active lock to its owner, then close the swap."""
        if swap.decision == "commit":
            raise WrongPhase("release already committed")
        swap.decision = "abort"
        for c, h in swap.releases.items():
            self._vetoed[c].add(h)
        for _ in range(self.wait_cycles):
            if self._legs_resolved(swap):
                break
            self.world.advance()
        refunds = []
        for chain_id in (swap.chain_a, swap.chain_b):
            entry_key = swap.swap_id + chain_id.encode()
            entry = self.custody[chain_id].entries.get(entry_key)
            if entry is None:
                continue
            owner, amount = entry
            for _attempt in range(3):
                h, out = self._settle_tx(chain_id, self.custody_keys[chain_id], owner, amount,
                                         release_payload(0, swap.swap_id))
                if out is not None and out.status == "Finalized":
                    break
            else:
                raise RuntimeError("refund could not be finalized")
            del self.custody[chain_id].entries[entry_key]
            swap.refunds[chain_id] = h
            refunds.append(h)
            self._log(swap, chain_id, f"refund {amount}")
        self._move(swap, final)
        return refunds

    # ----------------------------------------------------------------- guard

    def guard(self) -> tuple[dict[str, set[bytes]], dict[str, set[bytes]]]:
        """Cross-chain pairing check, run between validation and construction.

        Returns (veto, hold) per chain. Both release legs must be validated in
        the same cycle and each chain must have heard the other's prepared
        vote. A leg that is ready early is held back for up to ``hold_cycles``
        while its partner catches up; past that, or if the partner was
        rejected, every leg is vetoed so neither chain pays out alone.
        """
        hold: dict[str, set[bytes]] = defaultdict(set)
        for swap in self.swaps.values():
            if swap.decision is not None or not swap.releases:
                continue
            ready = {c: h in self._chain(c).ready_hashes() for c, h in swap.releases.items()}
            resolved = any(h in self._chain(c).outcomes for c, h in swap.releases.items())
            if len(ready) == 2 and all(ready.values()):
                ok = self._send(swap, "prepared A->B") and self._send(swap, "prepared B->A")
            elif not resolved and not any(ready.values()):
                continue  # neither leg validated yet
            elif not resolved and swap.held < self.hold_cycles:
                swap.held += 1
                for c, h in swap.releases.items():
                    if ready[c]:
                        hold[c].add(h)
                continue
            else:
                ok = False
            swap.decision = "commit" if ok else "abort"
            self._log(swap, "-", f"guard {swap.decision}")
            for c, h in swap.releases.items():
                if ok:
                    self._chain(c).pin(h)
                else:
                    self._vetoed[c].add(h)
        veto = {c: {h for h in hs if h in self._chain(c).ready_hashes()}
                for c, hs in self._vetoed.items()}
        return veto, dict(hold)

    # ---------------------------------------------------------------- driver

    def run_swap(
        self,
        offer: SwapOffer,
        candidates: Sequence[bytes],
        expire_before: Optional[int] = None,
    ) -> SwapContract:
        """Drive one swap to a terminal phase.

        Steps are attempted once per cycle; a step that cannot run waits for
        the next cycle until the timeout fires. ``expire_before`` forces the
        timeout just before step 1..5 (lockA, match, lockB, sync, publish) or,
        with 6, after publishing.
        """
        swap = self.initiate_swap(offer)
        steps = [
            lambda: self.lock_asset(swap.chain_a, swap, swap.party_a),
            lambda: self.flash_match(swap, candidates).matched or None,
            lambda: self.lock_asset(swap.chain_b, swap, swap.party_b),
            lambda: self.sync_settle(swap),
            lambda: self.publish_state(swap),
        ]
        i = 0
        while swap.phase not in TERMINAL:
            if expire_before is not None and i + 1 >= expire_before:
                self.expire(swap, now=max(self.now, swap.timeout_at))
                break
            if i < len(steps) and steps[i]() is not None:
                i += 1
                continue
            if swap.phase in TERMINAL:
                break
            if self.now >= swap.timeout_at:
                self.expire(swap)
                break
            self.world.advance()
        if expire_before == 6:
            self.expire(swap, now=max(self.now, swap.timeout_at))
        return swap
