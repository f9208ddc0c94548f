"""4-ary Merkle commitments: an ordered tree for lists of digests and a keyed
trie for certificate hashes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import IndexOutOfRange
from .ledger import digest

ARITY = 4
SENTINEL = digest(b"")
LEAF_TAG = b"\x00"
NODE_TAG = b"\x01"


def leaf_node(leaf: bytes) -> bytes:
    return digest(LEAF_TAG + leaf)


def inner_node(children: Sequence[bytes]) -> bytes:
    return digest(NODE_TAG + b"".join(children))


def _levels(leaves: Sequence[bytes]) -> list[list[bytes]]:
    level = [leaf_node(x) for x in leaves]
    levels = [level]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), ARITY):
            group = list(level[i:i + ARITY])
            group += [SENTINEL] * (ARITY - len(group))
            nxt.append(inner_node(group))
        level = nxt
        levels.append(level)
    return levels


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    if not leaves:
        return SENTINEL
    return _levels(leaves)[-1][0]


@dataclass(frozen=True)
class MerkleProof:
    index: int
    path: tuple[tuple[int, tuple[bytes, ...]], ...]  # (position, 3 siblings) leaf-up


def merkle_prove(leaves: Sequence[bytes], index: int) -> MerkleProof:
    if not 0 <= index < len(leaves):
        raise IndexOutOfRange(f"index {index} outside {len(leaves)} leaves")
    path = []
    pos = index
    for level in _levels(leaves)[:-1]:
        base = pos - pos % ARITY
        group = list(level[base:base + ARITY])
        group += [SENTINEL] * (ARITY - len(group))
        slot = pos % ARITY
        path.append((slot, tuple(group[:slot] + group[slot + 1:])))
        pos //= ARITY
    return MerkleProof(index, tuple(path))


def merkle_verify(root: bytes, leaf: bytes, proof: MerkleProof) -> bool:
    h = leaf_node(leaf)
    pos = proof.index
    for slot, siblings in proof.path:
        if len(siblings) != ARITY - 1 or slot != pos % ARITY:
            return False
        children = list(siblings[:slot]) + [h] + list(siblings[slot:])
        h = inner_node(children)
        pos //= ARITY
    return pos == 0 and h == root


# --------------------------------------------------------------------------
# keyed trie: first branch on group (0..3), then on 2-bit digits of the key


def _key_digit(group: int, key: bytes, depth: int) -> int:
    if depth == 0:
        return group
    bit = 2 * (depth - 1)
    byte = key[bit // 8]
    return (byte >> (6 - bit % 8)) & 0b11


def trie_leaf(key: bytes, leaf: bytes) -> bytes:
    return digest(LEAF_TAG + key + leaf)


class TrieCommitment:
    """Sparse 4-way trie keyed by (group index, digest); single-entry subtrees
    collapse to their leaf so depth stays logarithmic in the entry count."""

    def __init__(self):
        self._entries: dict[tuple[int, bytes], bytes] = {}

    def insert(self, group: int, key: bytes, leaf: bytes):
        if not 0 <= group < ARITY:
            raise ValueError("group index must be 0..3")
        self._entries[(group, key)] = leaf

    def __len__(self):
        return len(self._entries)

    def _node(self, items, depth) -> bytes:
        if not items:
            return SENTINEL
        if len(items) == 1 and depth > 0:
            (g, k), leaf = items[0]
            return trie_leaf(k, leaf)
        buckets = [[] for _ in range(ARITY)]
        for item in items:
            (g, k), _ = item
            buckets[_key_digit(g, k, depth)].append(item)
        return inner_node([self._node(b, depth + 1) for b in buckets])

    def root(self) -> bytes:
        return self._node(sorted(self._entries.items()), 0)

    def prove(self, group: int, key: bytes) -> tuple[tuple[int, tuple[bytes, ...]], ...]:
        if (group, key) not in self._entries:
            raise KeyError("no such entry")
        items = sorted(self._entries.items())
        path = []
        depth = 0
        while len(items) > 1 or depth == 0:
            buckets = [[] for _ in range(ARITY)]
            for item in items:
                (g, k), _ = item
                buckets[_key_digit(g, k, depth)].append(item)
            d = _key_digit(group, key, depth)
            siblings = tuple(self._node(b, depth + 1) for i, b in enumerate(buckets) if i != d)
            path.append((d, siblings))
            items = buckets[d]
            depth += 1
        return tuple(path)


def trie_verify(root: bytes, group: int, key: bytes, leaf: bytes, proof) -> bool:
    if not proof or len(proof) > 1 + 4 * len(key):
        return False
    h = trie_leaf(key, leaf)
    for depth in range(len(proof) - 1, -1, -1):
        d, siblings = proof[depth]
        if len(siblings) != ARITY - 1 or d != _key_digit(group, key, depth):
            return False
        h = inner_node(list(siblings[:d]) + [h] + list(siblings[d:]))
    return h == root
