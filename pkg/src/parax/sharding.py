"""Group classification, hash-ranked validator selection, and the prefix-range shard map."""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .errors import InsufficientNodes
from .ledger import PAYLOAD_RECEIPT, SignedTransaction, Writer, digest

GROUPS = (1, 2, 3, 4)
CONSTRUCTOR_TAG = "C"
KEY_SPACE = 1 << 64  # ranges are taken over the first 8 bytes of a digest


def group_label(group: int) -> str:
    return f"G{group}"


def classify_group(tx: SignedTransaction, is_contract: Callable[[bytes], bool]) -> int:
    """G1 contract accounts, G2 plain transfers, G3 receipts, G4 everything else."""
    if is_contract(tx.to):
        return 1
    if not tx.payload:
        return 2
    if tx.payload[0] == PAYLOAD_RECEIPT:
        return 3
    return 4


def rank_digest(seed: int, epoch: int, tag: str, node_id: str) -> bytes:
    return digest(Writer().u64(seed).u64(epoch).text(tag).text(node_id).getvalue())


def select_validators(
    seed: int,
    cycle: int,
    group: str,
    nodes: Iterable[str],
    k: int,
    redraw_every: int = 1,
) -> tuple[str, ...]:
    """The k nodes with the smallest rank digest for (seed, cycle epoch, group)."""
    nodes = list(nodes)
    if not nodes:
        raise InsufficientNodes("no active nodes")
    if k > len(nodes):
        raise InsufficientNodes(f"need {k} nodes, have {len(nodes)}")
    epoch = cycle // max(1, redraw_every)
    ranked = sorted(nodes, key=lambda n: (rank_digest(seed, epoch, group, n), n))
    return tuple(ranked[:k])


@dataclass
class GroupAssignment:
    cycle: int
    group_map: dict[str, tuple[str, ...]] = field(default_factory=dict)
    unstaffed: list[str] = field(default_factory=list)

    def sizes(self) -> dict[str, int]:
        return {g: len(m) for g, m in self.group_map.items()}


def assign_groups(
    seed: int,
    cycle: int,
    active: Iterable[str],
    labels: Sequence[str],
    size: int,
    redraw_every: int = 1,
) -> GroupAssignment:
    """Draw disjoint committees for ``labels`` in order; labels that cannot be
    staffed from the remaining pool are reported as unstaffed."""
    remaining = sorted(active)
    out = GroupAssignment(cycle)
    for label in labels:
        if len(remaining) < size:
            out.unstaffed.append(label)
            continue
        members = select_validators(seed, cycle, label, remaining, size, redraw_every)
        out.group_map[label] = members
        taken = set(members)
        remaining = [n for n in remaining if n not in taken]
    return out


# --------------------------------------------------------------------------
# shard map


@dataclass(frozen=True)
class ShardMap:
    lows: tuple[int, ...]  # range i covers [lows[i], lows[i+1]) of the prefix space
    shard_homes: tuple[tuple[str, ...], ...]
    replication: int

    @property
    def count(self) -> int:
        return len(self.lows)

    def ranges(self) -> list[tuple[int, int, int]]:
        his = list(self.lows[1:]) + [KEY_SPACE]
        return [(lo, hi, i) for i, (lo, hi) in enumerate(zip(self.lows, his))]

    def holders(self, shard: int) -> tuple[str, ...]:
        return self.shard_homes[shard]

    def shards_of(self, node_id: str) -> set[int]:
        return {i for i, homes in enumerate(self.shard_homes) if node_id in homes}

    def is_valid(self) -> bool:
        if not self.lows or self.lows[0] != 0:
            return False
        if any(b <= a for a, b in zip(self.lows, self.lows[1:])) or self.lows[-1] >= KEY_SPACE:
            return False
        return all(len(set(h)) == self.replication == len(h) for h in self.shard_homes)


def key_prefix(key: bytes) -> int:
    return int.from_bytes(key[:8].ljust(8, b"\x00"), "big")


def shard_for_key(key: bytes, smap: ShardMap) -> int:
    return bisect.bisect_right(smap.lows, key_prefix(key)) - 1


def equal_ranges(count: int) -> tuple[int, ...]:
    return tuple(i * KEY_SPACE // count for i in range(count))


def draw_homes(seed, cycle, count, nodes, replication) -> tuple[tuple[str, ...], ...]:
    return tuple(
        tuple(sorted(select_validators(seed, cycle, f"S{i}", nodes, replication)))
        for i in range(count)
    )


def make_shard_map(seed: int, count: int, nodes: Sequence[str], replication: int) -> ShardMap:
    return ShardMap(equal_ranges(count), draw_homes(seed, 0, count, nodes, replication), replication)


@dataclass(frozen=True)
class Move:
    shard: int
    from_node: str
    to_node: str


def rebalance(
    seed: int, cycle: int, smap: ShardMap, nodes: Sequence[str]
) -> tuple[ShardMap, list[Move]]:
    """Re-draw every shard's homes; ranges are left untouched."""
    homes = draw_homes(seed, cycle, smap.count, nodes, smap.replication)
    plan = []
    for shard, (old, new) in enumerate(zip(smap.shard_homes, homes)):
        leaving = sorted(set(old) - set(new))
        arriving = sorted(set(new) - set(old))
        plan.extend(Move(shard, a, b) for a, b in zip(leaving, arriving))
    return ShardMap(smap.lows, homes, smap.replication), plan


def apply_plan(smap: ShardMap, plan: Iterable[Move]) -> ShardMap:
    homes = [list(h) for h in smap.shard_homes]
    for mv in plan:
        h = homes[mv.shard]
        h[h.index(mv.from_node)] = mv.to_node
    return ShardMap(smap.lows, tuple(tuple(sorted(h)) for h in homes), smap.replication)


def is_rebalance_boundary(cycle: int, every: int) -> bool:
    return every > 0 and cycle > 0 and cycle % every == 0
