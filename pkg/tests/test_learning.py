import random
from fractions import Fraction

import pytest

from bluesim.coa import CoaKind
from bluesim.kernel import SeededRng, SimTime
from bluesim.learning import (ActionValueTable, CorruptBlob, InsufficientShares,
                              LearningError, LessonRecord, LessonStore, Outcome,
                              Repository, RepositoryUnreachable, UnlearnableAction,
                              canonical_serialize, compress, decompress, disperse,
                              record_outcome, recover, sync_to_repository,
                              threat_digest)

DIGEST = threat_digest(["sig-a"], "network")


def lesson(action=CoaKind.HONEYPOT_ISOLATE, outcome=Outcome.SUCCESS, at=1.0,
           digest=DIGEST):
    return LessonRecord(digest, action, outcome, SimTime.from_seconds(at))


class TestActionValues:
    def test_hand_computed_sequence(self):
        table = ActionValueTable(Fraction(1, 2))
        expected = [Fraction(1, 2), Fraction(3, 4), Fraction(7, 8)]
        for want in expected:
            record_outcome(table, lesson())
            assert table.value(DIGEST, CoaKind.HONEYPOT_ISOLATE) == want

    def test_negative_rewards_converge_to_floor(self):
        table = ActionValueTable(Fraction(1, 2))
        for _ in range(60):
            record_outcome(table, lesson(outcome=Outcome.FAILURE))
            q = table.value(DIGEST, CoaKind.HONEYPOT_ISOLATE)
            assert -1 <= q < 0
        assert table.value(DIGEST, CoaKind.HONEYPOT_ISOLATE) > Fraction(-1)

    def test_contraction_identity_exact(self):
        rng = random.Random(8)
        for _ in range(1000):
            alpha = Fraction(rng.randrange(1, 64), 64)
            table = ActionValueTable(alpha)
            key = (DIGEST, CoaKind.BLOCK)
            table.entries[key] = Fraction(rng.randrange(-63, 64), 64)
            before = table.entries[key]
            outcome = rng.choice([Outcome.SUCCESS, Outcome.FAILURE])
            reward = 1 if outcome is Outcome.SUCCESS else -1
            record_outcome(table, lesson(action=CoaKind.BLOCK, outcome=outcome))
            after = table.entries[key]
            assert abs(after - reward) == (1 - alpha) * abs(before - reward)

    def test_q_bounds_over_random_updates(self):
        rng = random.Random(9)
        table = ActionValueTable(Fraction(rng.randrange(1, 100), 100))
        for _ in range(500):
            record_outcome(table, lesson(
                action=rng.choice(list(CoaKind)),
                outcome=rng.choice([Outcome.SUCCESS, Outcome.FAILURE])))
        assert all(-1 <= q <= 1 for q in table.entries.values())

    def test_best_action_deterministic_tiebreak(self):
        table = ActionValueTable()
        table.entries[(DIGEST, CoaKind.BLOCK)] = Fraction(1, 2)
        table.entries[(DIGEST, CoaKind.QUARANTINE)] = Fraction(1, 2)
        assert table.best_action(DIGEST) is CoaKind.BLOCK  # declaration order

    def test_escalation_is_not_learnable(self):
        # the chain-of-command action is absent from the vocabulary entirely
        assert "C2_REQUEST" not in CoaKind.__members__
        assert not any("c2" in kind.value for kind in CoaKind)
        table = ActionValueTable()
        bogus = lesson().__class__.__new__(lesson().__class__)
        object.__setattr__(bogus, "threat_digest", DIGEST)
        object.__setattr__(bogus, "action", "c2-request")
        object.__setattr__(bogus, "outcome", Outcome.SUCCESS)
        object.__setattr__(bogus, "at", SimTime(0))
        with pytest.raises(UnlearnableAction):
            record_outcome(table, bogus)

    def test_bad_alpha(self):
        with pytest.raises(LearningError):
            ActionValueTable(0)


class TestLessonBlobs:
    def test_empty_round_trip(self):
        assert decompress(compress([])) == []

    def test_round_trip_exact(self):
        records = [lesson(at=i * 0.5, outcome=Outcome.SUCCESS if i % 2 else Outcome.FAILURE,
                          action=list(CoaKind)[i % len(CoaKind)])
                   for i in range(100)]
        assert decompress(compress(records)) == records

    def test_repeated_digests_strictly_smaller_than_canonical(self):
        digests = [threat_digest([f"sig-{i}"], "network") for i in range(5)]
        records = [lesson(digest=digests[i % 5], at=10.0 + i * 0.25) for i in range(1000)]
        blob = compress(records)
        assert decompress(blob) == records
        assert len(blob) < len(canonical_serialize(records))

    def test_never_larger_than_canonical_at_sixteen_records(self):
        rng = random.Random(44)
        for _ in range(50):
            count = rng.randrange(16, 80)
            records = [lesson(digest=random.Random(rng.random()).randbytes(16),
                              at=rng.uniform(0, 4e5),
                              action=rng.choice(list(CoaKind)),
                              outcome=rng.choice([Outcome.SUCCESS, Outcome.FAILURE]))
                       for _ in range(count)]
            blob = compress(records)
            assert decompress(blob) == records
            assert len(blob) <= len(canonical_serialize(records))

    def test_truncated_blob_rejected(self):
        blob = compress([lesson(at=i) for i in range(20)])
        with pytest.raises(CorruptBlob):
            decompress(blob[:-3])

    def test_tampered_byte_rejected(self):
        blob = bytearray(compress([lesson(at=i) for i in range(20)]))
        blob[5] ^= 0xFF
        with pytest.raises(CorruptBlob):
            decompress(bytes(blob))


class TestRepositorySync:
    def test_contested_uploads_nothing(self):
        store = LessonStore("Blue-17")
        store.add(lesson())
        assert sync_to_repository(store, Repository(), contested=True) == 0
        assert len(store.unsynced()) == 1

    def test_uncontested_uploads_all_then_none(self):
        store = LessonStore("Blue-17")
        repo = Repository()
        for i in range(5):
            store.add(lesson(at=float(i)))
        assert sync_to_repository(store, repo, contested=False) == 5
        assert sync_to_repository(store, repo, contested=False) == 0
        assert len(repo.entries) == 5

    def test_broadcast_lesson_deduped_across_agents(self):
        shared = lesson(at=3.0)
        a, b = LessonStore("Blue-17"), LessonStore("Blue-19")
        a.add(shared, origin="Blue-17")
        b.add(shared, origin="Blue-17")  # relayed copy keeps its origin
        repo = Repository()
        sync_to_repository(a, repo, contested=False)
        sync_to_repository(b, repo, contested=False)
        assert len(repo.entries) == 1

    def test_unreachable_repository_raises_and_keeps_records(self):
        store = LessonStore("Blue-17")
        store.add(lesson())
        repo = Repository()
        repo.reachable = False
        with pytest.raises(RepositoryUnreachable):
            sync_to_repository(store, repo, contested=False)
        assert len(store.unsynced()) == 1

    def test_dump_is_jsonable(self):
        import json
        store = LessonStore("Blue-17")
        store.add(lesson())
        repo = Repository()
        sync_to_repository(store, repo, contested=False)
        assert json.dumps(repo.dump())


class TestDispersal:
    def test_three_of_three(self):
        data = b"lessons-learned-blob"
        shares = disperse(data, 3, 3, SeededRng(1, "d"))
        assert recover(shares) == data
        for drop in range(3):
            subset = [s for s in shares if s.index != drop]
            with pytest.raises(InsufficientShares):
                recover(subset)

    def test_one_of_one(self):
        data = b"tiny"
        shares = disperse(data, 1, 1, SeededRng(2, "d"))
        assert recover(shares) == data

    def test_every_k_subset_recovers(self):
        from itertools import combinations
        data = bytes(range(32))
        shares = disperse(data, 3, 5, SeededRng(3, "d"))
        for subset in combinations(shares, 3):
            assert recover(list(subset)) == data
        for subset in combinations(shares, 2):
            with pytest.raises(InsufficientShares):
                recover(list(subset))

    def test_randomized_recovery_oracle(self):
        rng = random.Random(55)
        for trial in range(1000):
            n = rng.randrange(1, 6)
            k = rng.randrange(1, n + 1)
            data = bytes(rng.getrandbits(8) for _ in range(rng.randrange(0, 40)))
            shares = disperse(data, k, n, SeededRng(trial, "fuzz"))
            picked = rng.sample(shares, k)
            assert recover(picked) == data

    def test_duplicate_share_does_not_count_twice(self):
        data = b"secret"
        shares = disperse(data, 3, 5, SeededRng(4, "d"))
        with pytest.raises(InsufficientShares):
            recover([shares[0], shares[0], shares[1]])

    def test_mixed_groups_rejected(self):
        a = disperse(b"one", 2, 2, SeededRng(5, "d"))
        b = disperse(b"two", 2, 2, SeededRng(6, "d"))
        with pytest.raises(LearningError):
            recover([a[0], b[1]])

    def test_bad_parameters(self):
        with pytest.raises(LearningError):
            disperse(b"x", 3, 2, SeededRng(7, "d"))

    def test_sub_threshold_shares_look_uniform(self):
        # fixed data, many trials: bytes of any k-1 shares should be uniform
        from scipy.stats import chisquare
        data = b"\x00" * 8  # worst case: all-zero plaintext
        counts = [0] * 256
        for trial in range(2000):
            shares = disperse(data, 3, 3, SeededRng(trial, "u"))
            for share in shares[:2]:
                for byte in share.share_bytes:
                    counts[byte] += 1
        result = chisquare(counts)
        assert result.pvalue > 0.01
