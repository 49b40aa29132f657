"""Contract verdicts: registration, assignment, prescription, upload, access."""

from datetime import datetime, timezone

import pytest

from stimchain import contracts, crypto
from stimchain import device as devmod
from stimchain.ledger import ChainState, Transaction, make_genesis

from conftest import EPOCH, make_prescription

SEED = 99


def ident(name):
    return crypto.Identity.derive(name, SEED)


AUTHORITY = ident("authority")


def fresh_state() -> ChainState:
    genesis = make_genesis(
        {"val-0": ident("val-0").sign_pub}, {"authority": AUTHORITY.sign_pub}, f=0
    )
    return ChainState.from_genesis(genesis)


class World:
    """Small harness that signs and applies transactions directly."""

    def __init__(self):
        self.state = fresh_state()
        self.seqs: dict[str, int] = {}
        self.height = 1

    def tx(self, actor: str, kind: str, payload: dict) -> Transaction:
        self.seqs[actor] = self.seqs.get(actor, 0) + 1
        return Transaction(kind, payload, actor, self.seqs[actor]).signed_by(ident(actor))

    def apply(self, tx: Transaction) -> contracts.ContractResult:
        result = contracts.evaluate(self.state, tx, self.height)
        self.state.applied_seq.setdefault(tx.submitter, set()).add(tx.seq)
        self.height += 1
        return result

    def register(self, kind: str, name: str) -> contracts.ContractResult:
        who = ident(name)
        payload = {"id": name, "sign_pub": who.sign_pub, "agree_pub": who.agree_pub}
        payload["authority"] = "authority"
        payload["authority_sig"] = AUTHORITY.sign(
            contracts.registration_payload_bytes(kind, payload)
        )
        return self.apply(self.tx(name, kind, payload))

    def registered_world(self):
        self.register("RegisterDoctor", "doc-1")
        self.register("RegisterPatient", "pat-1")
        self.apply(self.tx("authority", "AssignDoctor",
                           {"patient_id": "pat-1", "doctor_id": "doc-1"}))
        return self

    def prescribe(self, rx=None) -> contracts.ContractResult:
        rx = rx or make_prescription().signed_by(ident("doc-1"))
        return self.apply(self.tx("doc-1", "PrescriptionIssued", {
            "prescription": rx.signing_payload(), "signature": rx.signature,
        }))

    def upload(self, actor="pat-1", session="S-1", seq=1, content=None, **over):
        payload = {
            "patient_id": "pat-1", "session_id": session,
            "content_id": content or f"c{seq:064d}"[:64], "batch_seq": seq,
            "session_start_unix_ms": int(EPOCH.replace(
                tzinfo=timezone.utc).timestamp() * 1000),
            "prescription_id": "rx-1", "sample_count": 60,
        }
        payload.update(over)
        return self.apply(self.tx(actor, "DataUpload", payload))


# --- registration ----------------------------------------------------------


def test_registration_with_countersignature_applied():
    assert World().register("RegisterDoctor", "doc-1").verdict == "Applied"


def test_registration_without_countersignature_rejected():
    w = World()
    who = ident("doc-1")
    payload = {"id": "doc-1", "sign_pub": who.sign_pub, "agree_pub": who.agree_pub,
               "authority": "authority", "authority_sig": b"\x00" * 64}
    result = w.apply(w.tx("doc-1", "RegisterDoctor", payload))
    assert (result.verdict, result.reason) == ("Rejected", "unvalidated")


def test_duplicate_registration_rejected():
    w = World()
    w.register("RegisterDoctor", "doc-1")
    result = w.register("RegisterDoctor", "doc-1")
    assert (result.verdict, result.reason) == ("Rejected", "duplicate")


# --- assignment ------------------------------------------------------------


def test_assignment_requires_authority():
    w = World().registered_world()
    result = w.apply(w.tx("doc-1", "AssignDoctor",
                          {"patient_id": "pat-1", "doctor_id": "doc-1"}))
    assert (result.verdict, result.reason) == ("Rejected", "not_authority")


def test_assignment_unregistered_doctor_rejected():
    w = World()
    w.register("RegisterPatient", "pat-1")
    result = w.apply(w.tx("authority", "AssignDoctor",
                          {"patient_id": "pat-1", "doctor_id": "ghost"}))
    assert result.verdict == "Rejected"


def test_reassignment_replaces_primary_doctor():
    w = World().registered_world()
    w.register("RegisterDoctor", "doc-2")
    result = w.apply(w.tx("authority", "AssignDoctor",
                          {"patient_id": "pat-1", "doctor_id": "doc-2"}))
    assert result.verdict == "Applied"
    assert w.state.assignments["pat-1"] == "doc-2"


# --- prescription ----------------------------------------------------------


def test_prescription_applied():
    w = World().registered_world()
    assert w.prescribe().verdict == "Applied"


def test_prescription_from_unassigned_doctor_rejected():
    w = World()
    w.register("RegisterDoctor", "doc-1")
    w.register("RegisterPatient", "pat-1")
    result = w.prescribe()
    assert (result.verdict, result.reason) == ("Rejected", "not_assigned")


def test_prescription_submitter_must_be_prescriber():
    w = World().registered_world()
    w.register("RegisterDoctor", "doc-2")
    rx = make_prescription().signed_by(ident("doc-1"))
    result = w.apply(w.tx("doc-2", "PrescriptionIssued", {
        "prescription": rx.signing_payload(), "signature": rx.signature,
    }))
    assert (result.verdict, result.reason) == ("Rejected", "not_prescriber")


def test_prescription_outside_envelope_rejected():
    w = World().registered_world()
    rx = make_prescription(current_ma=2.5).signed_by(ident("doc-1"))
    result = w.prescribe(rx)
    assert (result.verdict, result.reason) == ("Rejected", "safety")


def test_prescription_bad_signature_unverifiable():
    w = World().registered_world()
    rx = make_prescription().signed_by(ident("doc-2"))  # wrong key
    result = w.prescribe(rx)
    assert result.verdict == "Rejected"
    assert result.reason.startswith("unverifiable")


def test_duplicate_prescription_id_rejected():
    w = World().registered_world()
    w.prescribe()
    result = w.prescribe()
    assert (result.verdict, result.reason) == ("Rejected", "duplicate")


# --- data upload -----------------------------------------------------------


def test_upload_applied_and_creates_session():
    w = World().registered_world()
    result = w.upload()
    assert result.verdict == "Applied"
    assert w.state.sessions["S-1"]["batches"] == 1


def test_upload_sequence_must_be_dense():
    w = World().registered_world()
    w.upload(seq=1, content="a" * 64)
    gap = w.upload(seq=3, content="b" * 64)
    assert (gap.verdict, gap.reason) == ("Rejected", "sequence_gap")
    dup = w.upload(seq=1, content="d" * 64)
    assert (dup.verdict, dup.reason) == ("Rejected", "duplicate_seq")
    ok = w.upload(seq=2, content="e" * 64)
    assert ok.verdict == "Applied"


def test_upload_first_batch_must_be_seq_one():
    w = World().registered_world()
    result = w.upload(seq=2)
    assert (result.verdict, result.reason) == ("Rejected", "sequence_gap")


def test_upload_duplicate_content_rejected():
    w = World().registered_world()
    w.upload(seq=1, content="a" * 64)
    result = w.upload(seq=2, content="a" * 64)
    assert (result.verdict, result.reason) == ("Rejected", "duplicate_content")


def test_upload_owner_only():
    w = World().registered_world()
    result = w.upload(actor="doc-1")
    assert (result.verdict, result.reason) == ("Rejected", "not_owner")


# --- access workflow -------------------------------------------------------


def grant_flow(w: World, scope=None, expiry=1000):
    w.apply(w.tx("doc-1", "AccessRequest", {
        "doctor_id": "doc-1", "patient_id": "pat-1",
        "scope": scope or {"kind": "all"},
    }))
    wrapped = crypto.wrap_key(
        crypto.derive_data_key("pat-1", SEED), ident("pat-1"),
        ident("doc-1").agree_pub, "grant-1",
    )
    return w.apply(w.tx("pat-1", "AccessGrant", {
        "grant_id": "grant-1", "patient_id": "pat-1", "doctor_id": "doc-1",
        "wrapped_key": wrapped, "scope": scope or {"kind": "all"},
        "expiry_height": expiry,
    }))


def read_tx(w: World, content="c" + "0" * 63):
    return w.apply(w.tx("doc-1", "AccessRead", {
        "doctor_id": "doc-1", "patient_id": "pat-1",
        "content_id": content, "grant_id": "grant-1",
    }))


def test_request_grant_read_applied():
    w = World().registered_world()
    w.upload()
    assert grant_flow(w).verdict == "Applied"
    result = read_tx(w, content=f"c{1:064d}"[:64])
    assert result.verdict == "Applied"
    assert len(w.state.reads) == 1


def test_grant_without_pending_request_rejected():
    w = World().registered_world()
    wrapped = crypto.wrap_key(
        crypto.derive_data_key("pat-1", SEED), ident("pat-1"),
        ident("doc-1").agree_pub, "grant-1",
    )
    result = w.apply(w.tx("pat-1", "AccessGrant", {
        "grant_id": "grant-1", "patient_id": "pat-1", "doctor_id": "doc-1",
        "wrapped_key": wrapped, "scope": {"kind": "all"}, "expiry_height": 99,
    }))
    assert (result.verdict, result.reason) == ("Rejected", "no_pending_request")


def test_grant_signed_by_other_patient_rejected():
    w = World().registered_world()
    w.register("RegisterPatient", "pat-2")
    w.apply(w.tx("doc-1", "AccessRequest", {
        "doctor_id": "doc-1", "patient_id": "pat-1", "scope": {"kind": "all"},
    }))
    result = w.apply(w.tx("pat-2", "AccessGrant", {
        "grant_id": "grant-1", "patient_id": "pat-1", "doctor_id": "doc-1",
        "wrapped_key": b"x", "scope": {"kind": "all"}, "expiry_height": 99,
    }))
    assert (result.verdict, result.reason) == ("Rejected", "not_owner")


def test_read_after_expiry_rejected():
    w = World().registered_world()
    w.upload()
    grant_flow(w, expiry=w.height)  # expires immediately
    w.height += 5
    result = read_tx(w, content=f"c{1:064d}"[:64])
    assert (result.verdict, result.reason) == ("Rejected", "expired")


def test_read_out_of_scope_rejected():
    w = World().registered_world()
    w.upload(session="S-1")
    grant_flow(w, scope={"kind": "sessions", "sessions": ["S-2"]})
    result = read_tx(w, content=f"c{1:064d}"[:64])
    assert (result.verdict, result.reason) == ("Rejected", "out_of_scope")


def test_read_unknown_content_rejected():
    w = World().registered_world()
    grant_flow(w)
    result = read_tx(w, content="f" * 64)
    assert (result.verdict, result.reason) == ("Rejected", "unknown_content")


# --- anomaly alerts --------------------------------------------------------


def test_alert_recorded_with_alert_verdict():
    w = World().registered_world()
    result = w.apply(w.tx("pat-1", "AnomalyAlert", {
        "patient_id": "pat-1", "session_id": "S-1",
        "rule_ids": ["R2"], "observed_micro_amp": 2200,
    }))
    assert result.verdict == "Alert"
    assert w.state.alerts[0]["rule_ids"] == ["R2"]


# --- admission checks ------------------------------------------------------


def test_replayed_sequence_rejected():
    w = World().registered_world()
    tx = w.tx("authority", "AssignDoctor",
              {"patient_id": "pat-1", "doctor_id": "doc-1"})
    assert w.apply(tx).verdict == "Applied"
    again = contracts.evaluate(w.state, tx, w.height)
    assert (again.verdict, again.reason) == ("Rejected", "replayed_sequence")


def test_unknown_submitter_rejected():
    w = World()
    result = w.apply(w.tx("ghost", "AssignDoctor",
                          {"patient_id": "pat-1", "doctor_id": "doc-1"}))
    assert (result.verdict, result.reason) == ("Rejected", "unknown_submitter")


def test_bad_signature_rejected():
    w = World().registered_world()
    tx = w.tx("authority", "AssignDoctor",
              {"patient_id": "pat-1", "doctor_id": "doc-1"})
    object.__setattr__(tx, "signature", b"\x00" * 64)
    result = w.apply(tx)
    assert (result.verdict, result.reason) == ("Rejected", "bad_signature")


# --- anomaly rule evaluation ----------------------------------------------


def sample(elapsed_s, current_ma, state=devmod.DeviceState.STIMULATING):
    from datetime import timedelta
    return devmod.TelemetrySample(
        at=EPOCH + timedelta(seconds=elapsed_s),
        current=int(round(current_ma)), current_ma=current_ma, state=state,
    )


def start_ms(at=EPOCH):
    return int(at.replace(tzinfo=timezone.utc).timestamp() * 1000)


def test_clean_plateau_fires_nothing():
    w = World().registered_world()
    rx = make_prescription(1.0, 20)
    samples = [sample(i, 1.0) for i in range(31, 90)]
    assert contracts.evaluate_anomaly(
        w.state, "S-1", "pat-1", start_ms(), 89, samples, rx) == []


def test_r1_plateau_overcurrent():
    w = World().registered_world()
    rx = make_prescription(1.0, 20)
    samples = [sample(40, 1.11)]
    assert contracts.evaluate_anomaly(
        w.state, "S-1", "pat-1", start_ms(), 40, samples, rx) == ["R1"]


def test_r1_margin_is_exclusive():
    w = World().registered_world()
    rx = make_prescription(1.0, 20)
    samples = [sample(40, 1.10)]
    assert contracts.evaluate_anomaly(
        w.state, "S-1", "pat-1", start_ms(), 40, samples, rx) == []


def test_r2_hard_cap():
    w = World().registered_world()
    rx = make_prescription(1.9, 20)
    samples = [sample(40, 2.2)]
    fired = contracts.evaluate_anomaly(
        w.state, "S-1", "pat-1", start_ms(), 40, samples, rx)
    assert "R2" in fired


def test_r3_overrun():
    w = World().registered_world()
    rx = make_prescription(1.0, 5)
    fired = contracts.evaluate_anomaly(
        w.state, "S-1", "pat-1", start_ms(), 5 * 60 + 61, [], rx)
    assert fired == ["R3"]


def test_r4_schedule_violation_counts_chain_sessions():
    w = World().registered_world()
    rx = make_prescription(per_week=1)
    w.upload(session="S-0")  # one completed session on-chain this ISO week
    fired = contracts.evaluate_anomaly(
        w.state, "S-1", "pat-1", start_ms(), 1, [sample(1, 0.03)], rx)
    assert fired == ["R4"]


def test_empty_evaluation_is_noop():
    w = World().registered_world()
    rx = make_prescription()
    assert contracts.evaluate_anomaly(
        w.state, "S-1", "pat-1", start_ms(), 0, [], rx) == []
