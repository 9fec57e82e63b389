import pytest

from bluesim.kernel import Node, SimTime
from bluesim.messaging import AgentMessage, KeyRing, MessageType, seal
from bluesim.trust import (Admitted, Allow, BoundarySpec, BoundaryVerdict, Deny, Evidence,
                           Rejected, TransferPolicy, TrustError, TrustLevel, TrustRecord,
                           authorize_transfer, check_boundary, comply_to_connect,
                           evaluate_trust)

T1 = SimTime.from_seconds(1.0)
T2 = SimTime.from_seconds(2.0)


class TestTrustLifecycle:
    def test_invalid_signature_suspects(self):
        record = TrustRecord("Blue-23")
        updated = evaluate_trust(record, Evidence.INVALID_SIGNATURE, T1)
        assert updated.level is TrustLevel.SUSPECTED_COMPROMISED

    def test_quarantine_revokes(self):
        record = TrustRecord("Blue-23", TrustLevel.SUSPECTED_COMPROMISED)
        updated = evaluate_trust(record, Evidence.QUARANTINED, T1)
        assert updated.level is TrustLevel.REVOKED

    def test_valid_never_upgrades(self):
        for level in TrustLevel:
            record = TrustRecord("Blue-23", level)
            updated = evaluate_trust(record, Evidence.VALID, T2)
            assert updated.level is level
            assert updated.last_verified == T2

    def test_stale_is_lower_severity_note(self):
        record = TrustRecord("Blue-23")
        updated = evaluate_trust(record, Evidence.STALE_TIMESTAMP, T1)
        assert updated.level is TrustLevel.TRUSTED
        assert any("stale-timestamp" in e for e in updated.evidence)

    def test_monotone_downward_only(self):
        record = TrustRecord("Blue-23", TrustLevel.REVOKED)
        for evidence in Evidence:
            assert evaluate_trust(record, evidence, T1).level is TrustLevel.REVOKED

    def test_evidence_trail_grows(self):
        record = TrustRecord("Blue-23")
        record = evaluate_trust(record, Evidence.VALID, T1, "resp-1")
        record = evaluate_trust(record, Evidence.INVALID_SIGNATURE, T2, "resp-2")
        assert len(record.evidence) == 2


KEY = bytes(32)
RING = KeyRing(own_id="container:device-23", own_signing_key=b"\x01" * 32,
               peer_verify_keys={"Blue-17": KEY})
BOUNDARY = BoundarySpec(frozenset({"device-17", "device-23", "device-40"}))


def make_package(key=KEY, msg_type=MessageType.OVERWRITE_PACKAGE):
    msg = AgentMessage(msg_type, "Blue-17", "container:device-23", T1, 1,
                       {"new_agent": "Blue-24"})
    return seal(msg, key)


def ring():
    return KeyRing(own_id="container:device-23", own_signing_key=b"\x01" * 32,
                   peer_verify_keys={"Blue-17": KEY})


class TestAuthorizeTransfer:
    def test_baseline_zero_quorum_allows(self):
        verdict = authorize_transfer(make_package(), Node("device-23"), set(),
                                     TransferPolicy(0, frozenset()), BOUNDARY, ring(), T2)
        assert isinstance(verdict, Allow)

    def test_quorum_not_met_denied(self):
        policy = TransferPolicy(2, frozenset({"Blue-19", "Blue-C2"}))
        verdict = authorize_transfer(make_package(), Node("device-23"), {"Blue-19"},
                                     policy, BOUNDARY, ring(), T2)
        assert verdict == Deny("quorum", "1 of 2 approvals")

    def test_non_eligible_approvals_ignored(self):
        policy = TransferPolicy(2, frozenset({"Blue-19", "Blue-C2"}))
        verdict = authorize_transfer(make_package(), Node("device-23"),
                                     {"Blue-19", "Red-35", "randomer"},
                                     policy, BOUNDARY, ring(), T2)
        assert isinstance(verdict, Deny) and verdict.reason == "quorum"

    def test_out_of_bounds_denied(self):
        verdict = authorize_transfer(make_package(), Node("device-99"), set(),
                                     TransferPolicy(0, frozenset()), BOUNDARY, ring(), T2)
        assert isinstance(verdict, Deny) and verdict.reason == "boundary"

    def test_bad_container_auth_denied(self):
        forged = make_package(key=b"\x07" * 32)  # not Blue-17's registered key
        verdict = authorize_transfer(forged, Node("device-23"), set(),
                                     TransferPolicy(0, frozenset()), BOUNDARY, ring(), T2)
        assert isinstance(verdict, Deny) and verdict.reason == "container-auth"

    def test_wrong_message_type_denied(self):
        verdict = authorize_transfer(make_package(msg_type=MessageType.ACK),
                                     Node("device-23"), set(),
                                     TransferPolicy(0, frozenset()), BOUNDARY, ring(), T2)
        assert isinstance(verdict, Deny) and verdict.reason == "container-auth"

    def test_check_order_quorum_before_boundary(self):
        policy = TransferPolicy(1, frozenset({"Blue-19"}))
        verdict = authorize_transfer(make_package(), Node("device-99"), set(),
                                     policy, BOUNDARY, ring(), T2)
        assert isinstance(verdict, Deny) and verdict.reason == "quorum"


class TestBoundary:
    def test_in_bounds(self):
        assert check_boundary("device-17", BOUNDARY) is BoundaryVerdict.IN_BOUNDS

    def test_out_of_bounds(self):
        assert check_boundary("rogue-node", BOUNDARY) is BoundaryVerdict.OUT_OF_BOUNDS

    def test_empty_boundary_rejected(self):
        with pytest.raises(TrustError):
            BoundarySpec(frozenset())


class TestComplyToConnect:
    REQUIRED = ["patched", "baseline-image", "attestation"]

    def test_compliant_admitted(self):
        facts = {"patched": True, "baseline-image": True, "attestation": True}
        assert comply_to_connect(facts, self.REQUIRED) == Admitted()

    def test_failing_predicate_named(self):
        facts = {"patched": True, "baseline-image": False, "attestation": True}
        assert comply_to_connect(facts, self.REQUIRED) == Rejected("baseline-image")

    def test_missing_predicate_fails(self):
        assert comply_to_connect({"patched": True}, self.REQUIRED) == \
            Rejected("baseline-image")

    def test_no_requirements_always_admitted(self):
        assert comply_to_connect({}, []) == Admitted()


class TestTransferPolicy:
    def test_quorum_cannot_exceed_approvers(self):
        with pytest.raises(TrustError):
            TransferPolicy(3, frozenset({"a", "b"}))

    def test_negative_quorum_rejected(self):
        with pytest.raises(TrustError):
            TransferPolicy(-1, frozenset())
