"""End-to-end acceptance checks, one test per criterion.

Each check records a one-line verdict; the lines are printed in the pytest
terminal summary (see conftest.py).
"""
import json
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import chisquare

from parax.audit import audit_bytes
from parax.blockio import read_blockfile, write_blockfile
from parax.config import PRESETS, load_preset
from parax.economics import Correction, CycleMetrics, FrictionState, steer_friction, update_friction
from parax.ledger import PAYLOAD_CALL, PAYLOAD_RECEIPT, Stage, contract_id, hash_transaction
from parax.merkle import merkle_prove, merkle_root, merkle_verify
from parax.modelcheck import model_check
from parax.netsim import Fault
from parax.scenario import closed_loop_convergence, run_scenario
from parax.sharding import select_validators

from conftest import keys, make_chain, submit

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str):
    RESULTS[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])
    assert ok, RESULTS[n]


_RUNS = {}


def preset_run(name):
    if name not in _RUNS:
        t0 = time.perf_counter()
        res = run_scenario(load_preset(name))
        _RUNS[name] = (res, time.perf_counter() - t0)
    return _RUNS[name]


def test_c1_pipeline_finality():
    res, elapsed = preset_run("basic")
    chain = res.report["chains"]["A"]
    entries = [e for _, blocks in read_blockfile(res.blocks).values() for b in blocks for e in b.entries]
    chained = all(
        [c.stage for c in e.certs] == [Stage.INITIATOR, Stage.VALIDATOR, Stage.CONSTRUCTOR]
        and e.certs[1].subject == e.certs[0].cert_hash and e.certs[2].subject == e.certs[1].cert_hash
        and e.certs[0].cert_hash == e.tx.cert_id
        for e in entries)
    submitted = res.report["totals"]["submitted"]
    ok = (submitted > 0 and chain["finalized"] == submitted == len(entries)
          and chain["rejected"] == 0 and chain["unresolved"] == 0 and not chain["admission_failures"]
          and chained and res.passed and elapsed < 10.0)
    record(1, ok, f"basic: {chain['finalized']}/{submitted} finalized, 3 chained certs each={chained}, "
                  f"audit {'pass' if res.passed else 'FAIL'}, {elapsed:.1f}s (< 10s)")


def test_c2_swap_atomicity_model_check():
    t0 = time.perf_counter()
    results = model_check()
    elapsed = time.perf_counter() - t0
    verdicts = set()
    for r in results:
        verdicts |= set(r.verdicts)
    mixed = sum(len(r.violations) for r in results)
    ok = all(r.ok for r in results) and verdicts <= {"published-both", "refunded-both"} and elapsed <= 60
    record(2, ok, f"{len(results)} timeout placements x 4096 drop subsets, {sum(r.runs for r in results)} runs, "
                  f"terminal verdicts {sorted(verdicts)}, {mixed} mixed, {elapsed:.1f}s (<= 60s)")


def test_c3_conservation_all_presets():
    lines, ok = [], True
    for name in PRESETS:
        res, _ = preset_run(name)
        cons = res.report["conservation"]
        ok &= cons["passed"] and cons["checks"] > 0 and res.passed
        lines.append(f"{name} {cons['checks']} checks")
    record(3, ok, "exact supply after every block (in-run check and replay audit): " + ", ".join(lines))


def test_c4_selector_fairness():
    nodes = [f"n{i}" for i in range(8)]
    counts = dict.fromkeys(nodes, 0)
    for c in range(10_000):
        for n in select_validators(0, c, "G2", nodes, 2):
            counts[n] += 1
    p = chisquare(list(counts.values())).pvalue
    ok = all(abs(v - 2500) <= 130 for v in counts.values()) and p > 0.001
    record(4, ok, f"counts {min(counts.values())}..{max(counts.values())} (2500 +- 130), chi-square p={p:.3f}")


def _byzantine_run(fault, node, group):
    payer, poor, dest = keys("payer", "poor", "dest")
    target = contract_id("ct")
    chain = make_chain(4, {payer.account_id: 10_000, poor.account_id: 50}, [target], relay_bound=2)
    chain.net.inject_fault(node, fault)
    to = target if group == 1 else dest.account_id
    payload = {1: b"", 2: b"", 3: bytes([PAYLOAD_RECEIPT]) + b"r", 4: bytes([PAYLOAD_CALL]) + b"c"}[group]
    good = submit(chain, payer, to, 100, payload)
    bad = submit(chain, poor, to, 1_000, payload)  # overspends
    for _ in range(6):
        chain.run_cycle()
    finalized = {h for h, o in chain.outcomes.items() if o.status == "Finalized"}
    audit = audit_bytes(write_blockfile([(chain.genesis, chain.blocks)]))
    invalid_final = hash_transaction(bad) in finalized
    return invalid_final, audit.passed, chain.state.conserved(), hash_transaction(good) in finalized


def test_c5_byzantine_single_fault():
    cases = bad = 0
    honest_final = 0
    for fault in (Fault.CRASH, Fault.EQUIVOCATE, Fault.TAMPER):
        for node in ("n0", "n1", "n2", "n3"):
            for group in (1, 2, 3, 4):
                invalid_final, audited, conserved, good_final = _byzantine_run(fault, node, group)
                cases += 1
                honest_final += good_final
                bad += invalid_final or not audited or not conserved
    record(5, bad == 0, f"{cases} single-fault cases (3 classes x 4 nodes x 4 groups): "
                        f"{bad} with an invalid finalization or failed audit; "
                        f"valid tx finalized in {honest_final}/{cases}")


def _closed_loop_cfg():
    cfg = load_preset("basic")
    node = cfg.chains[0].nodes[0].model_copy(update={"capacity": 2})
    chain = cfg.chains[0].model_copy(update={"nodes": [node]})
    w = cfg.workload.model_copy(update={"mode": "closed_loop", "users": 64, "contract_fraction": 0.5,
                                        "receipt_fraction": 0.0, "data_fraction": 0.0})
    return cfg.model_copy(update={"chains": [chain], "workload": w})


def test_c6_friction_controller():
    rng = np.random.default_rng(6)
    fixed = 0
    for _ in range(1000):
        F = float(rng.uniform(1.0, 1e6))
        s = FrictionState(F=F, alpha=float(rng.uniform(0.01, 3.0)))
        S = float(rng.uniform(0.5, 1e5))
        m = CycleMetrics(0, (0, 0, 0, 0), 0, 0, 0, 0.0, S, S)
        fixed += update_friction(s, m).F == F and steer_friction(s, m) == (s, Correction.NO_ACTION)
    cfg = _closed_loop_cfg()
    starts = [closed_loop_convergence(cfg, seed, max_cycles=200, hold=20) for seed in range(20)]
    hits = sum(s is not None for s in starts)
    ok = fixed == 1000 and hits >= 19
    record(6, ok, f"fixed point {fixed}/1000; closed loop D/S in [0.9, 1.1] (held 20 cycles) by cycle 200 "
                  f"for {hits}/20 seeds (need 19), entry cycles {min(s for s in starts if s is not None)}.."
                  f"{max(s for s in starts if s is not None)}")


def test_c7_shard_scaling():
    res, _ = preset_run("scaling")
    rows = res.report["scaling"]["settings"]
    ratios = res.report["scaling"]["ratios"]
    ok = [r["setting"] for r in rows] == [1, 2, 4, 8, 16] and all(r >= 1.6 for r in ratios)
    record(7, ok, "throughput " + " / ".join(f"{r['throughput']:.1f}" for r in rows)
                  + " tx/cycle, per-doubling ratios " + ", ".join(f"{r:.2f}" for r in ratios) + " (>= 1.6)")


def test_c8_swap_fee_band():
    res, _ = preset_run("swap")
    (swap,) = res.report["swaps"]
    frac = swap["fee_fraction"]
    ok = swap["phase"] == "Published" and 0.01 <= frac <= 0.02
    record(8, ok, f"swap {swap['phase']}, fees {swap['fees']} of {swap['exchanged_value']} base units "
                  f"= {frac:.2%} (configured fee_bps target, band 1-2%)")


def test_c9_determinism():
    same = []
    for name in ("basic", "swap", "byzantine"):
        first, _ = preset_run(name)
        again = run_scenario(load_preset(name))
        a = json.dumps(first.report, sort_keys=True, indent=2)
        b = json.dumps(again.report, sort_keys=True, indent=2)
        same.append(a == b and first.blocks == again.blocks)
    record(9, all(same), "report.json and blocks.bin byte-identical on rerun for basic, swap, byzantine: "
                         + ", ".join(map(str, same)))


def _flip(b, bit):
    out = bytearray(b)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def test_c10_merkle_correctness():
    import hashlib
    h = lambda b: hashlib.sha256(b).digest()
    fixture = [bytes([i]) * 8 for i in range(4)]
    oracle = h(b"\x01" + b"".join(h(b"\x00" + x) for x in fixture))
    proofs = mutations = escaped = 0
    for n in range(65):
        leaves = [i.to_bytes(2, "big") + b"leaf-" + bytes([n]) for i in range(n)]
        root = merkle_root(leaves)
        for bit in range(256):
            mutated_root = _flip(root, bit)
            for i, leaf in enumerate(leaves[:1]):
                mutations += 1
                escaped += merkle_verify(mutated_root, leaf, merkle_prove(leaves, i))
        for i, leaf in enumerate(leaves):
            proof = merkle_prove(leaves, i)
            proofs += 1
            if not merkle_verify(root, leaf, proof):
                escaped += 1
            for bit in range(len(leaf) * 8):
                mutations += 1
                escaped += merkle_verify(root, _flip(leaf, bit), proof)
            for level, (slot, sibs) in enumerate(proof.path):
                for j, s in enumerate(sibs):
                    for bit in (0, 77, 255):
                        path = list(proof.path)
                        path[level] = (slot, sibs[:j] + (_flip(s, bit),) + sibs[j + 1:])
                        mutations += 1
                        escaped += merkle_verify(root, leaf, replace(proof, path=tuple(path)))
    ok = escaped == 0 and merkle_root(fixture) == oracle
    record(10, ok, f"leaf counts 0-64: {proofs} proofs verify, {mutations} single-bit mutations "
                   f"(leaf, root, sibling) all rejected={escaped == 0}; 4-leaf root matches hand expansion")
