import hashlib
import os

import pytest
from hypothesis import given, strategies as st

from parax.errors import IndexOutOfRange
from parax.merkle import (
    SENTINEL,
    MerkleProof,
    TrieCommitment,
    merkle_prove,
    merkle_root,
    merkle_verify,
    trie_verify,
)


def h(b):
    return hashlib.sha256(b).digest()


def flip(b: bytes, bit: int) -> bytes:
    out = bytearray(b)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


FIXTURE = [bytes([i]) * 8 for i in range(4)]


def test_empty_and_single():
    assert merkle_root([]) == SENTINEL == h(b"")
    assert merkle_root([b"L"]) == h(b"\x00L")


def test_four_leaf_fixture_hand_expanded():
    want = h(b"\x01" + b"".join(h(b"\x00" + x) for x in FIXTURE))
    assert merkle_root(FIXTURE) == want
    assert want.hex() == "93cfd9b0c77bebb63f67c05b4f98cdb1c2df17602f5ef94accf33ec1c6022825"


def test_five_leaves_pad_with_sentinel():
    leaves = FIXTURE + [b"e"]
    lower = h(b"\x01" + b"".join(h(b"\x00" + x) for x in FIXTURE))
    upper = h(b"\x01" + h(b"\x00e") + SENTINEL * 3)
    assert merkle_root(leaves) == h(b"\x01" + lower + upper + SENTINEL * 2)


def test_nine_leaf_proofs():
    leaves = [f"leaf{i}".encode() for i in range(9)]
    root = merkle_root(leaves)
    for i, leaf in enumerate(leaves):
        assert merkle_verify(root, leaf, merkle_prove(leaves, i))
        assert not merkle_verify(root, flip(leaf, 0), merkle_prove(leaves, i))
        assert not merkle_verify(root, leaf, merkle_prove(leaves, (i + 1) % 9))


def test_prove_out_of_range():
    with pytest.raises(IndexOutOfRange):
        merkle_prove([b"a"], 1)
    with pytest.raises(IndexOutOfRange):
        merkle_prove([], 0)


def test_malformed_proof_is_false():
    leaves = [b"a", b"b"]
    p = merkle_prove(leaves, 0)
    bad = MerkleProof(0, ((0, p.path[0][1][:2]),))
    assert not merkle_verify(merkle_root(leaves), b"a", bad)


@given(st.lists(st.binary(max_size=16), min_size=1, max_size=40), st.data())
def test_proofs_verify_property(leaves, data):
    i = data.draw(st.integers(0, len(leaves) - 1))
    assert merkle_verify(merkle_root(leaves), leaves[i], merkle_prove(leaves, i))


def test_trie_membership():
    trie = TrieCommitment()
    entries = [(g % 4, h(bytes([g]))) for g in range(20)]
    for g, k in entries:
        trie.insert(g, k, k)
    root = trie.root()
    for g, k in entries:
        proof = trie.prove(g, k)
        assert trie_verify(root, g, k, k, proof)
        assert not trie_verify(root, g, k, flip(k, 3), proof)
        assert not trie_verify(root, (g + 1) % 4, k, k, proof)
    with pytest.raises(KeyError):
        trie.prove(0, b"\x00" * 32)


def test_trie_root_independent_of_insert_order():
    items = [(i % 4, h(os.urandom(4))) for i in range(12)]
    a, b = TrieCommitment(), TrieCommitment()
    for g, k in items:
        a.insert(g, k, k)
    for g, k in reversed(items):
        b.insert(g, k, k)
    assert a.root() == b.root()
    assert TrieCommitment().root() == SENTINEL
