"""Blockless DAG mempool with cycle counters and four indexed views."""
from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import BadSignature, DuplicateTransaction, IllegalTransition, NonceGap
from .ledger import SignedTransaction, hash_transaction, verify_signature

MAX_PARENTS = 2


class Status(enum.Enum):
    PENDING = "Pending"
    ASSIGNED = "Assigned"
    VALIDATED = "Validated"
    FINALIZED = "Finalized"
    REJECTED = "Rejected"


_ALLOWED = {
    Status.PENDING: {Status.ASSIGNED, Status.REJECTED},
    Status.ASSIGNED: {Status.VALIDATED, Status.REJECTED},
    Status.VALIDATED: {Status.FINALIZED, Status.REJECTED},
    Status.FINALIZED: set(),
    Status.REJECTED: set(),
}


def transition_allowed(old: Status, new: Status) -> bool:
    return new in _ALLOWED[old]


@dataclass
class DagVertex:
    id: int
    tx_hash: bytes
    parents: tuple[int, ...]
    cycle: int
    group: int
    status: Status
    tx: SignedTransaction
    # (status, cycle, seq) per transition, used to rebuild the parsing index
    history: list[tuple[Status, int, int]] = field(default_factory=list)


@dataclass
class DagViews:
    global_state_view: dict[bytes, bytes] = field(default_factory=dict)
    tx_view: dict[bytes, int] = field(default_factory=dict)
    storage_view: dict[int, set[bytes]] = field(default_factory=dict)
    parsing_index: dict[int, list[int]] = field(default_factory=dict)


@dataclass
class CycleBatch:
    cycle: int
    groups: dict[int, list[int]] = field(default_factory=dict)

    def __len__(self):
        return sum(len(v) for v in self.groups.values())

    def vertex_ids(self) -> list[int]:
        return sorted(i for ids in self.groups.values() for i in ids)


def _sorted_remove(lst: list[int], x: int):
    i = bisect.bisect_left(lst, x)
    if i < len(lst) and lst[i] == x:
        del lst[i]


def _sorted_add(lst: list[int], x: int):
    i = bisect.bisect_left(lst, x)
    if i == len(lst) or lst[i] != x:
        lst.insert(i, x)


class DagPool:
    """Single-writer DAG store.

    ``classify`` maps a transaction to its group (1..4), ``shard_of`` maps a
    digest to a storage shard, ``committed_nonce`` reports the sender nonce
    in committed chain state.
    """

    def __init__(
        self,
        classify: Callable[[SignedTransaction], int],
        shard_of: Callable[[bytes], int] = lambda key: 0,
        committed_nonce: Callable[[bytes], int] = lambda sender: 0,
    ):
        self.classify = classify
        self.shard_of = shard_of
        self.committed_nonce = committed_nonce
        self.cycle = 0
        self.vertices: list[DagVertex] = []
        self.views = DagViews()
        self._pending: list[int] = []
        self._next_nonce: dict[bytes, int] = {}
        self._validated_children: dict[int, int] = {}
        self._children: dict[int, list[int]] = {}
        self._frontier: list[int] = []
        self._open_tips: list[int] = []
        self._touches: dict[bytes, list[int]] = {}
        self._seq = 0

    # ------------------------------------------------------------------ queries

    def __len__(self):
        return len(self.vertices)

    def __contains__(self, tx_hash: bytes):
        return tx_hash in self.views.tx_view

    def vertex(self, vid: int) -> DagVertex:
        return self.vertices[vid]

    def by_hash(self, tx_hash: bytes) -> DagVertex:
        return self.vertices[self.views.tx_view[tx_hash]]

    def expected_nonce(self, sender: bytes) -> int:
        return max(self._next_nonce.get(sender, 0), self.committed_nonce(sender))

    def frontier(self, k: int) -> list[int]:
        """The k oldest live vertices that have no validated children."""
        if k < 0:
            raise ValueError("k must be non-negative")
        return self._frontier[:k]

    def pending_ids(self) -> list[int]:
        return list(self._pending)

    # ---------------------------------------------------------------- mutation

    def insert_transaction(
        self, tx: SignedTransaction, current_cycle: Optional[int] = None
    ) -> int:
        tx_hash = hash_transaction(tx)
        if tx_hash in self.views.tx_view:
            raise DuplicateTransaction(tx_hash.hex())
        if not verify_signature(tx):
            raise BadSignature(tx_hash.hex())
        want = self.expected_nonce(tx.sender)
        if tx.nonce != want:
            raise NonceGap(f"nonce {tx.nonce}, expected {want}")
        cycle = self.cycle if current_cycle is None else current_cycle
        vid = len(self.vertices)
        parents = tuple(self._open_tips[:MAX_PARENTS])
        v = DagVertex(vid, tx_hash, parents, cycle, self.classify(tx), Status.PENDING, tx)
        v.history.append((Status.PENDING, cycle, self._next_seq()))
        self.vertices.append(v)
        for p in parents:
            self._children.setdefault(p, []).append(vid)
        self._validated_children[vid] = 0
        self._next_nonce[tx.sender] = tx.nonce + 1
        self._pending.append(vid)
        self._frontier.append(vid)
        self._open_tips.append(vid)

        views = self.views
        views.tx_view[tx_hash] = vid
        views.storage_view.setdefault(self.shard_of(tx_hash), set()).add(tx_hash)
        for acct in (tx.sender, tx.to):
            self._touches.setdefault(acct, []).append(vid)
            views.global_state_view[acct] = tx_hash
        return vid

    def advance_cycle(self) -> CycleBatch:
        self.cycle += 1
        batch = CycleBatch(self.cycle)
        pending, self._pending = self._pending, []
        for vid in pending:
            v = self.vertices[vid]
            self.mark_status(vid, Status.ASSIGNED)
            batch.groups.setdefault(v.group, []).append(vid)
        batch.groups = dict(sorted(batch.groups.items()))
        return batch

    def mark_status(self, vid: int, new: Status) -> DagVertex:
        v = self.vertices[vid]
        old = v.status
        if not transition_allowed(old, new):
            raise IllegalTransition(f"{old.value} -> {new.value}")
        v.status = new
        v.history.append((new, self.cycle, self._next_seq()))
        if old is Status.PENDING:
            _sorted_remove(self._pending, vid)

        if new is Status.VALIDATED:
            _sorted_remove(self._open_tips, vid)
            for p in v.parents:
                self._validated_children[p] += 1
                _sorted_remove(self._frontier, p)
                _sorted_remove(self._open_tips, p)
        elif new is Status.REJECTED:
            _sorted_remove(self._open_tips, vid)
            _sorted_remove(self._frontier, vid)
            if old is Status.VALIDATED:
                for p in v.parents:
                    self._validated_children[p] -= 1
                    self._restore_tip(p)
            self._next_nonce[v.tx.sender] = min(
                self._next_nonce.get(v.tx.sender, v.tx.nonce), v.tx.nonce
            )
            for acct in (v.tx.sender, v.tx.to):
                self._refresh_state_view(acct)

        if new in (Status.VALIDATED, Status.FINALIZED):
            self.views.parsing_index.setdefault(self.cycle, []).append(vid)
        return v

    # ----------------------------------------------------------------- helpers

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _restore_tip(self, p: int):
        pv = self.vertices[p]
        if self._validated_children[p] or pv.status is Status.REJECTED:
            return
        _sorted_add(self._frontier, p)
        if pv.status in (Status.PENDING, Status.ASSIGNED):
            _sorted_add(self._open_tips, p)

    def _refresh_state_view(self, acct: bytes):
        live = [i for i in self._touches.get(acct, []) if self.vertices[i].status is not Status.REJECTED]
        if live:
            self.views.global_state_view[acct] = self.vertices[live[-1]].tx_hash
        else:
            self.views.global_state_view.pop(acct, None)

    def rebuild_views(self) -> DagViews:
        """Recompute all four views from the vertex store alone."""
        out = DagViews()
        for v in self.vertices:
            out.tx_view[v.tx_hash] = v.id
            out.storage_view.setdefault(self.shard_of(v.tx_hash), set()).add(v.tx_hash)
            if v.status is not Status.REJECTED:
                for acct in (v.tx.sender, v.tx.to):
                    out.global_state_view[acct] = v.tx_hash
        entries = [
            (seq, cycle, v.id)
            for v in self.vertices
            for status, cycle, seq in v.history
            if status in (Status.VALIDATED, Status.FINALIZED)
        ]
        for seq, cycle, vid in sorted(entries):
            out.parsing_index.setdefault(cycle, []).append(vid)
        return out

    def is_acyclic(self) -> bool:
        state: dict[int, int] = {}
        for root in range(len(self.vertices)):
            if root in state:
                continue
            stack = [(root, iter(self.vertices[root].parents))]
            state[root] = 1
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    state[node] = 2
                    stack.pop()
                elif state.get(nxt) == 1:
                    return False
                elif nxt not in state:
                    state[nxt] = 1
                    stack.append((nxt, iter(self.vertices[nxt].parents)))
        return True

    def dump(self) -> str:
        lines = []
        for v in self.vertices:
            parents = ",".join(map(str, v.parents)) or "-"
            lines.append(f"{v.id} {parents} {v.cycle} G{v.group} {v.status.value} {v.tx_hash.hex()}")
        return "\n".join(lines) + ("\n" if lines else "")
