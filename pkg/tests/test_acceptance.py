"""Acceptance gate: one test per release criterion, at the stated tolerances.

Each test prints a [PASS]/[FAIL] line so `pytest -s tests/test_acceptance.py`
reads as a checklist.
"""

import json
import random
import threading
import time
from fractions import Fraction
from itertools import combinations

import pytest

from bluesim.coa import CoaKind
from bluesim.engine import Engine, OutOfBoundsViolation, ScriptDecisionProvider
from bluesim.ids import compile_signatures, scan_payload
from bluesim.kernel import SeededRng, SimTime
from bluesim.learning import (ActionValueTable, LessonRecord, Outcome, UnlearnableAction,
                              disperse, record_outcome, recover, threat_digest)
from bluesim.messaging import (AgentMessage, FragmentPolicy, KeyRing, MessageType,
                               SealedMessage, fragment, open_sealed, reassemble, seal)
from bluesim.metrics import compute_metrics, records_to_dicts, verify_table1
from bluesim.scenario import load_builtin, loads_scenario

T = SimTime.from_seconds


def report(name: str, ok: bool, detail: str = "") -> None:
    tag = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[{tag}] {name}{suffix}")
    assert ok, f"{name}{suffix}"


class TestCriterion1GoldenTimeline:
    def test_verify_table1_passes_under_one_second(self):
        start = time.monotonic()
        engine = Engine(load_builtin("table1"))
        engine.run()
        elapsed = time.monotonic() - start
        result = verify_table1(records_to_dicts(engine.sim.trace))
        report("golden timeline: 11 milestones ordered within ±0.01 s, runtime < 1 s",
               result.passed and elapsed < 1.0,
               result.failure or f"runtime {elapsed:.3f}s")


class TestCriterion2Determinism:
    def test_three_scenarios_three_seeds_byte_identical(self):
        mismatches = []
        for name in ("table1", "clean", "blind"):
            for seed in (1, 42, 99):
                runs = []
                for _ in range(2):
                    engine = Engine(load_builtin(name), seed_override=seed)
                    engine.run()
                    runs.append(engine.trace_jsonl())
                if runs[0] != runs[1]:
                    mismatches.append((name, seed))
        report("determinism: 3 scenarios x 3 seeds, byte-identical trace files",
               not mismatches, f"mismatches: {mismatches}" if mismatches else "9 pairs")


class TestCriterion3IdsOracle:
    def test_full_match_oracle_and_control_runs(self):
        rng = random.Random(20_250_810)
        disagreements = 0
        for trial in range(1000):
            pattern = bytes(rng.getrandbits(8) for _ in range(rng.randrange(8, 32)))
            payload = bytearray(rng.getrandbits(8) for _ in range(rng.randrange(16, 512)))
            if trial % 3 != 0 and len(payload) > len(pattern):
                pos = rng.randrange(0, len(payload) - len(pattern))
                payload[pos:pos + len(pattern)] = pattern
            payload = bytes(payload)
            db = compile_signatures([("p", pattern, 0.5)], k=8)
            scanned = any(pid == "p" and frac == 1.0
                          for pid, frac in scan_payload(db, payload))
            disagreements += scanned != (pattern in payload)

        clean = Engine(load_builtin("clean"))
        clean.run()
        clean_fp = compute_metrics(records_to_dicts(clean.sim.trace)).false_positives

        blind = Engine(load_builtin("blind"))
        blind.run()
        blind_fn = compute_metrics(records_to_dicts(blind.sim.trace)).false_negatives

        report("ids oracle: 0/1000 disagreements with substring search, "
               "clean-run FP = 0, blind-run FN = 1",
               disagreements == 0 and clean_fp == 0 and blind_fn == 1,
               f"disagreements={disagreements} FP={clean_fp} FN={blind_fn}")


class TestCriterion4MessagingProperties:
    KEY = bytes(range(32))

    def _ring(self):
        return KeyRing(own_id="Blue-17", own_signing_key=b"\x01" * 32,
                       peer_verify_keys={"Blue-19": self.KEY})

    def test_honest_tamper_and_fragment_properties(self):
        rng = random.Random(1717)
        ring = self._ring()
        false_rejections = 0
        for nonce in range(10_000):
            issued = rng.uniform(0, 1000.0)
            msg = AgentMessage(MessageType.PEER_RESPONSE, "Blue-19", "Blue-17",
                               T(issued), nonce, {"n": nonce})
            sealed = seal(msg, self.KEY)
            now = T(issued + rng.uniform(0.0, 59.9))
            if open_sealed(sealed, ring, now) != msg:
                false_rejections += 1

        ring2 = self._ring()
        wrong_key = bytes(range(1, 33))
        false_accepts = 0
        for nonce in range(10_000):
            msg = AgentMessage(MessageType.PEER_RESPONSE, "Blue-19", "Blue-17",
                               T(1.0), nonce, {"n": nonce})
            if nonce % 2 == 0:
                sealed = seal(msg, self.KEY)
                raw = bytearray(sealed.to_bytes())
                raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
                sealed = SealedMessage(bytes(raw[:-16]), bytes(raw[-16:]))
            else:
                sealed = seal(msg, wrong_key)
            if isinstance(open_sealed(sealed, ring2, T(2.0)),
                          (AgentMessage,)):
                false_accepts += 1

        routes = [["a", "b"], ["a", "c"], ["a", "d"]]
        fragment_failures = 0
        for trial in range(1000):
            n = rng.randrange(33, 600)
            sealed = SealedMessage(bytes(rng.getrandbits(8) for _ in range(n)),
                                   bytes(rng.getrandbits(8) for _ in range(16)))
            frags = fragment(sealed,
                             FragmentPolicy(rng.choice([16, 32, 64]), 3,
                                            rng.choice([0.5, 1.0, 2.0])),
                             routes, SeededRng(trial, "acc"))
            rng.shuffle(frags)
            result = reassemble(frags)
            if not (isinstance(result, SealedMessage)
                    and result.to_bytes() == sealed.to_bytes()):
                fragment_failures += 1

        report("messaging: 10,000 honest pairs 0 rejections; 10,000 tampered/wrong-key "
               "0 acceptances; 1,000 fragment fuzz round trips with covers",
               false_rejections == 0 and false_accepts == 0 and fragment_failures == 0,
               f"rej={false_rejections} acc={false_accepts} frag={fragment_failures}")


def propagation_config(seed: int) -> dict:
    rng = random.Random(seed)
    nodes = [{"id": f"dev-{i}", "kind": "device"} for i in range(50)]
    nodes.append({"id": "c2-node", "kind": "c2"})
    boundary = sorted({f"dev-{i}" for i in range(50) if rng.random() < 0.5}
                      | {"dev-0", "dev-1", "c2-node"})
    links = [{"src": "dev-0", "dst": f"dev-{i}", "delay": 0.1, "bidirectional": True}
             for i in range(1, 50)]
    links.append({"src": "dev-0", "dst": "c2-node", "delay": 0.1, "bidirectional": True})
    transfers, migrations = [], []
    for i in range(10):
        target = f"dev-{rng.randrange(1, 50)}"
        if rng.random() < 0.5:
            transfers.append({"at": 1.0 + i, "by": "Blue-17", "to_node": target})
        else:
            migrations.append({"at": 1.0 + i, "agent": "Blue-50", "to_node": target})
    return {"name": f"prop-{seed}", "seed": seed, "duration": 15.0, "nodes": nodes,
            "links": links, "signatures": [],
            "blue_agents": [{"id": "Blue-17", "node": "dev-0", "peers": ["Blue-50"]},
                            {"id": "Blue-50", "node": "dev-1", "peers": ["Blue-17"]}],
            "c2": {"id": "Blue-C2", "node": "c2-node"}, "red": None,
            "trust": {"quorum": 0, "eligible_approvers": [], "boundary": boundary},
            "transfers": transfers, "migrations": migrations}


class TestCriterion5PropagationSafety:
    def test_boundary_assertion_and_quorum_denials(self):
        violations = 0
        out_of_bounds_attempts = 0
        for seed in range(8):
            config = loads_scenario(json.dumps(propagation_config(seed)), f"prop-{seed}")
            engine = Engine(config)
            try:
                engine.run()
            except OutOfBoundsViolation:
                violations += 1
                continue
            trace = records_to_dicts(engine.sim.trace)
            out_of_bounds_attempts += sum(
                1 for e in trace
                if (e["kind"] == "transfer-denied" and e["details"]["reason"] == "boundary")
                or (e["kind"] == "boundary-check"
                    and e["details"]["verdict"] == "out-of-bounds"))

        quorum = Engine(load_builtin("quorum"))
        quorum.run()
        qtrace = records_to_dicts(quorum.sim.trace)
        under_quorum_allowed = any(
            e["kind"] == "transfer-authorized" and len(e["details"]["approvals"]) < 2
            for e in qtrace)
        quorum_denials = [e for e in qtrace if e["kind"] == "transfer-denied"
                          and e["details"]["reason"] == "quorum"]

        report("propagation safety: no live agent out-of-bounds across randomized "
               "50-node runs; q=2 denies every under-quorum transfer",
               violations == 0 and out_of_bounds_attempts > 0
               and not under_quorum_allowed and len(quorum_denials) >= 1,
               f"violations={violations} oob_attempts={out_of_bounds_attempts} "
               f"quorum_denials={len(quorum_denials)}")


class TestCriterion6LearningMath:
    def test_sequence_contraction_and_vocabulary(self):
        table = ActionValueTable(Fraction(1, 2))
        digest = threat_digest(["sig"], "network")
        sequence = [Fraction(0)]
        for i in range(3):
            record_outcome(table, LessonRecord(digest, CoaKind.BLOCK,
                                               Outcome.SUCCESS, T(float(i))))
            sequence.append(table.value(digest, CoaKind.BLOCK))
        sequence_ok = sequence == [0, Fraction(1, 2), Fraction(3, 4), Fraction(7, 8)]

        rng = random.Random(606)
        contraction_ok = True
        for _ in range(1000):
            alpha = Fraction(rng.randrange(1, 128), 128)
            t2 = ActionValueTable(alpha)
            key = (digest, CoaKind.HONEYPOT_ISOLATE)
            t2.entries[key] = Fraction(rng.randrange(-127, 128), 128)
            before = t2.entries[key]
            outcome = rng.choice([Outcome.SUCCESS, Outcome.FAILURE])
            reward = 1 if outcome is Outcome.SUCCESS else -1
            record_outcome(t2, LessonRecord(digest, CoaKind.HONEYPOT_ISOLATE,
                                            outcome, T(0.0)))
            if abs(t2.entries[key] - reward) != (1 - alpha) * abs(before - reward):
                contraction_ok = False
                break

        static_ok = "C2_REQUEST" not in CoaKind.__members__ and \
            not any("request" in kind.value for kind in CoaKind)
        runtime_ok = False
        bogus = LessonRecord.__new__(LessonRecord)
        object.__setattr__(bogus, "threat_digest", digest)
        object.__setattr__(bogus, "action", "c2-request")
        object.__setattr__(bogus, "outcome", Outcome.SUCCESS)
        object.__setattr__(bogus, "at", T(0.0))
        try:
            record_outcome(ActionValueTable(), bogus)
        except UnlearnableAction:
            runtime_ok = True

        report("learning math: Q sequence 0 -> 0.5 -> 0.75 -> 0.875; contraction exact "
               "over 1,000 random updates; c2 escalation unlearnable",
               sequence_ok and contraction_ok and static_ok and runtime_ok,
               f"seq={sequence_ok} contraction={contraction_ok} "
               f"static={static_ok} runtime={runtime_ok}")


class TestCriterion7DispersalHiding:
    def test_k3_n5_recovery_and_uniformity(self):
        from scipy.stats import chisquare
        data = b"\x00" * 4  # adversarial plaintext: any bias would show
        counts = [0] * 256
        recover_failures = 0
        hide_failures = 0
        trials = 10_000
        for trial in range(trials):
            shares = disperse(data, 3, 5, SeededRng(trial, "acceptance"))
            for subset in combinations(shares, 3):
                if recover(list(subset)) != data:
                    recover_failures += 1
            for subset in combinations(shares, 2):
                try:
                    recover(list(subset))
                    hide_failures += 1
                except Exception:
                    pass
            if trial < 2000:
                for share in shares[:2]:
                    for byte in share.share_bytes:
                        counts[byte] += 1
        pvalue = chisquare(counts).pvalue
        report("dispersal: k=3/n=5 over 10,000 trials, every 3-subset recovers, every "
               "2-subset fails, sub-threshold bytes uniform at the 0.01 level",
               recover_failures == 0 and hide_failures == 0 and pvalue > 0.01,
               f"recover_failures={recover_failures} hide_failures={hide_failures} "
               f"chi2_p={pvalue:.4f}")


class TestCriterion8ScriptLiveEquivalence:
    def test_wire_protocol_reproduces_headless_trace(self):
        import urllib.request
        from bluesim.server import InteractiveSession

        decisions = [{"deferral_id": 1, "decision": "approve", "rationale": "contain"}]
        headless = Engine(load_builtin("table1-semi"),
                          decision_provider=ScriptDecisionProvider(list(decisions)))
        headless.run()

        session = InteractiveSession(load_builtin("table1-semi"), port=0)
        thread = threading.Thread(target=session.run, daemon=True)
        thread.start()
        base = f"http://127.0.0.1:{session.port}"
        deadline = time.monotonic() + 30
        posted = False
        while time.monotonic() < deadline and not posted:
            with urllib.request.urlopen(f"{base}/state", timeout=5) as response:
                state = json.loads(response.read())
            if state.get("paused_on"):
                payload = json.dumps(decisions[0]).encode()
                request = urllib.request.Request(f"{base}/decisions", data=payload,
                                                 headers={"Content-Type": "application/json"})
                urllib.request.urlopen(request, timeout=5).read()
                posted = True
            else:
                time.sleep(0.02)
        session.finished.wait(timeout=60)
        thread.join(timeout=60)
        session.shutdown()

        identical = posted and session.engine.trace_jsonl() == headless.trace_jsonl()
        report("script/live equivalence: wire-protocol decisions reproduce the "
               "headless trace byte for byte", identical,
               "posted and compared" if posted else "never saw the pause")
