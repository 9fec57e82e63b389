import pytest

from bluesim.c2 import (AlreadyResolved, C2State, Decision, DeferralStatus, Enqueued,
                        Respond, UnknownDeferral, expire_deferral, handle_c2_request,
                        resolve_deferral)
from bluesim.coa import CoaKind
from bluesim.kernel import SimTime
from bluesim.learning import ActionValueTable, record_outcome, LessonRecord, Outcome, \
    threat_digest
from bluesim.messaging import AgentMessage, C2Schedule, MessageType

T = SimTime.from_seconds


def make_state() -> C2State:
    return C2State(c2_id="Blue-C2", node_id="c2-node",
                   schedule=C2Schedule(b"seed", 30.0, 65536))


def request(confidence=0.7, mode="full", digest=""):
    return AgentMessage(MessageType.C2_REQUEST, "Blue-17", "Blue-C2", T(0.22), 1,
                        {"confidence": confidence, "mode": mode,
                         "flow": "device-17->red-site", "digest": digest,
                         "subject": "device-17"})


class TestHandleRequest:
    def test_high_confidence_full_mode_recommends_block(self):
        result = handle_c2_request(make_state(), request(0.95), "device-17", T(1.0))
        assert isinstance(result, Respond) and result.coa.kind is CoaKind.BLOCK

    def test_mid_confidence_recommends_honeypot(self):
        result = handle_c2_request(make_state(), request(0.7), "device-17", T(1.0))
        assert isinstance(result, Respond)
        assert result.coa.kind is CoaKind.HONEYPOT_ISOLATE

    def test_semi_mode_enqueues_deferral(self):
        state = make_state()
        result = handle_c2_request(state, request(0.7, mode="semi"), "device-17", T(2.47))
        assert isinstance(result, Enqueued)
        deferral = result.deferral
        assert deferral.deadline == T(32.47)
        assert deferral.proposed.kind is CoaKind.HONEYPOT_ISOLATE
        assert state.pending() == [deferral]

    def test_registry_tracks_contact(self):
        state = make_state()
        handle_c2_request(state, request(), "device-17", T(1.0))
        assert state.registry["Blue-17"].node == "device-17"
        assert state.registry["Blue-17"].last_contact == T(1.0)

    def test_learned_preference_overrides_default(self):
        state = make_state()
        digest = threat_digest(["sig-x"], "network")
        for _ in range(3):
            record_outcome(state.table, LessonRecord(digest, CoaKind.BLOCK,
                                                     Outcome.SUCCESS, T(1.0)))
        result = handle_c2_request(make_state_with(state.table),
                                   request(0.7, digest=digest.hex()), "device-17", T(5.0))
        # bands alone would say honeypot at 0.7; positive memory says block
        assert isinstance(result, Respond) and result.coa.kind is CoaKind.BLOCK

    def test_agent_targeted_memory_falls_back_to_bands(self):
        state = make_state()
        digest = threat_digest(["sig-y"], "network")
        record_outcome(state.table, LessonRecord(digest, CoaKind.QUARANTINE,
                                                 Outcome.SUCCESS, T(1.0)))
        result = handle_c2_request(make_state_with(state.table),
                                   request(0.7, digest=digest.hex()), "device-17", T(5.0))
        assert isinstance(result, Respond)
        assert result.coa.kind is CoaKind.HONEYPOT_ISOLATE


def make_state_with(table: ActionValueTable) -> C2State:
    state = make_state()
    state.table = table
    return state


class TestDeferralLifecycle:
    def _enqueued(self):
        state = make_state()
        result = handle_c2_request(state, request(0.7, mode="semi"), "device-17", T(2.47))
        return state, result.deferral

    def test_approve_returns_proposed(self):
        state, deferral = self._enqueued()
        resolved, coa = resolve_deferral(state, deferral.deferral_id,
                                         Decision.APPROVE, "go")
        assert resolved.status is DeferralStatus.APPROVED
        assert coa is deferral.proposed

    def test_deny_returns_log_only(self):
        state, deferral = self._enqueued()
        _, coa = resolve_deferral(state, deferral.deferral_id, Decision.DENY, "hold")
        assert coa.kind is CoaKind.LOG_ONLY

    def test_expiry_authorizes_fallback(self):
        state, deferral = self._enqueued()
        expired, coa = expire_deferral(state, deferral.deferral_id)
        assert expired.status is DeferralStatus.EXPIRED
        assert coa.kind is CoaKind.HONEYPOT_ISOLATE

    def test_unknown_deferral(self):
        state, _ = self._enqueued()
        with pytest.raises(UnknownDeferral):
            resolve_deferral(state, 999, Decision.APPROVE)

    def test_exactly_one_terminal_state(self):
        state, deferral = self._enqueued()
        resolve_deferral(state, deferral.deferral_id, Decision.APPROVE)
        with pytest.raises(AlreadyResolved):
            resolve_deferral(state, deferral.deferral_id, Decision.DENY)
        with pytest.raises(AlreadyResolved):
            expire_deferral(state, deferral.deferral_id)

    def test_deferral_ids_unique_and_increasing(self):
        state = make_state()
        ids = []
        for i in range(5):
            result = handle_c2_request(state, request(0.7, mode="semi"),
                                       "device-17", T(float(i)))
            ids.append(result.deferral.deferral_id)
        assert ids == sorted(set(ids))

    def test_view_is_jsonable(self):
        import json
        _, deferral = self._enqueued()
        assert json.loads(json.dumps(deferral.view()))["deferral_id"] == 1
