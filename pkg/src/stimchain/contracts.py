"""Deterministic contract rules applied during block application.

Each rule is a pure function of (ChainState, transaction): no clock reads,
no randomness. Rejections are verdicts, not errors — a rejected transaction
still occupies the chain as an annotated no-op, preserving the audit trail.

Anomaly rule identifiers are stable external names:
  R1 overcurrent (plateau sample above setpoint + 0.1 mA)
  R2 hard cap    (any sample above 2.0 mA)
  R3 overrun     (session elapsed beyond duration + 60 s)
  R4 schedule    (session started despite a schedule denial)
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

from . import crypto, device, encoding
from .ledger import ChainState, Transaction

OVERCURRENT_MARGIN_MA = 0.1
OVERRUN_MARGIN_S = 60

RULE_OVERCURRENT = "R1"
RULE_HARD_CAP = "R2"
RULE_OVERRUN = "R3"
RULE_SCHEDULE = "R4"


@dataclass(frozen=True)
class ContractResult:
    verdict: str  # "Applied" | "Rejected" | "Alert"
    reason: str = ""
    rule_ids: tuple[str, ...] = ()
    delta: str = ""

    @property
    def applied(self) -> bool:
        return self.verdict in ("Applied", "Alert")


def _applied(delta: str) -> ContractResult:
    return ContractResult("Applied", delta=delta)


def _rejected(reason: str) -> ContractResult:
    return ContractResult("Rejected", reason=reason)


def registration_payload_bytes(kind: str, payload: dict) -> bytes:
    """Bytes the hospital authority countersigns to validate a registration."""
    return encoding.encode({
        "register": kind,
        "id": payload["id"],
        "sign_pub": payload["sign_pub"],
        "agree_pub": payload["agree_pub"],
    })


def registration_contract(state: ChainState, tx: Transaction) -> ContractResult:
    p = tx.payload
    authority = p.get("authority")
    auth_pub = state.authorities.get(authority)
    if auth_pub is None or not crypto.verify(
        auth_pub, registration_payload_bytes(tx.kind, p), p.get("authority_sig", b"")
    ):
        return _rejected("unvalidated")
    if state.is_registered(p["id"]):
        return _rejected("duplicate")
    entry = {"sign_pub": p["sign_pub"], "agree_pub": p["agree_pub"]}
    if tx.kind == "RegisterPatient":
        state.patients[p["id"]] = entry
    else:
        state.doctors[p["id"]] = entry
    return _applied(f"registered {p['id']}")


def assignment_contract(state: ChainState, tx: Transaction) -> ContractResult:
    p = tx.payload
    if tx.submitter not in state.authorities:
        return _rejected("not_authority")
    if p["doctor_id"] not in state.doctors:
        return _rejected("unregistered")
    if p["patient_id"] not in state.patients:
        return _rejected("unregistered")
    # A reassignment replaces the patient's single primary doctor.
    state.assignments[p["patient_id"]] = p["doctor_id"]
    return _applied(f"assigned {p['doctor_id']} to {p['patient_id']}")


def prescription_contract(state: ChainState, tx: Transaction) -> ContractResult:
    payload = tx.payload["prescription"]
    signature = tx.payload["signature"]
    rx = device.Prescription.from_payload(payload, signature)
    if tx.submitter != rx.prescriber_id:
        return _rejected("not_prescriber")
    if state.assignments.get(rx.patient_id) != rx.prescriber_id:
        return _rejected("not_assigned")
    pub = state.doctors.get(rx.prescriber_id, {}).get("sign_pub")
    report = device.validate_prescription(rx, pub)
    if report.unverifiable:
        return _rejected(f"unverifiable: {report.unverifiable}")
    if not report.ok:
        return _rejected("safety")
    if rx.prescription_id in state.prescriptions:
        return _rejected("duplicate")
    state.prescriptions[rx.prescription_id] = {"payload": payload, "signature": signature}
    return _applied(f"prescription {rx.prescription_id}")


def upload_contract(state: ChainState, tx: Transaction, height: int) -> ContractResult:
    p = tx.payload
    if tx.submitter != p["patient_id"]:
        return _rejected("not_owner")
    if p["patient_id"] not in state.patients:
        return _rejected("unregistered")
    if p["content_id"] in state.content:
        return _rejected("duplicate_content")
    session = state.sessions.get(p["session_id"])
    if session is None:
        if p["batch_seq"] != 1:
            return _rejected("sequence_gap")
        session = {
            "patient_id": p["patient_id"],
            "prescription_id": p["prescription_id"],
            "start_unix_ms": p["session_start_unix_ms"],
            "batches": 0,
        }
        state.sessions[p["session_id"]] = session
    else:
        if session["patient_id"] != p["patient_id"]:
            return _rejected("not_owner")
        if p["batch_seq"] != session["batches"] + 1:
            return _rejected(
                "duplicate_seq" if p["batch_seq"] <= session["batches"] else "sequence_gap"
            )
    session["batches"] = p["batch_seq"]
    state.content[p["content_id"]] = {
        "patient_id": p["patient_id"],
        "session_id": p["session_id"],
        "batch_seq": p["batch_seq"],
        "height": height,
    }
    return _applied(f"upload {p['content_id'][:12]} seq {p['batch_seq']}")


def access_contract(state: ChainState, tx: Transaction, height: int) -> ContractResult:
    p = tx.payload
    if tx.kind == "AccessRequest":
        if tx.submitter != p["doctor_id"] or p["doctor_id"] not in state.doctors:
            return _rejected("identity")
        if p["patient_id"] not in state.patients:
            return _rejected("unknown_patient")
        state.pending_requests[(p["doctor_id"], p["patient_id"])] = {
            "scope": p["scope"], "height": height,
        }
        return _applied(f"request {p['doctor_id']}->{p['patient_id']}")
    if tx.kind == "AccessGrant":
        if tx.submitter != p["patient_id"]:
            return _rejected("not_owner")
        key = (p["doctor_id"], p["patient_id"])
        if key not in state.pending_requests:
            return _rejected("no_pending_request")
        if p["grant_id"] in state.grants:
            return _rejected("duplicate")
        del state.pending_requests[key]
        state.grants[p["grant_id"]] = {
            "patient_id": p["patient_id"],
            "doctor_id": p["doctor_id"],
            "wrapped_key": p["wrapped_key"],
            "scope": p["scope"],
            "expiry_height": p["expiry_height"],
            "granted_height": height,
        }
        return _applied(f"grant {p['grant_id']}")
    # AccessRead
    grant = state.grants.get(p["grant_id"])
    if grant is None:
        return _rejected("no_grant")
    if grant["doctor_id"] != p["doctor_id"] or tx.submitter != p["doctor_id"]:
        return _rejected("identity")
    if grant["patient_id"] != p["patient_id"]:
        return _rejected("not_owner")
    if height > grant["expiry_height"]:
        return _rejected("expired")
    content = state.content.get(p["content_id"])
    if content is None:
        return _rejected("unknown_content")
    if content["patient_id"] != p["patient_id"]:
        return _rejected("not_owner")
    if not scope_covers(grant["scope"], content["session_id"]):
        return _rejected("out_of_scope")
    state.reads.append({
        "doctor_id": p["doctor_id"],
        "patient_id": p["patient_id"],
        "content_id": p["content_id"],
        "grant_id": p["grant_id"],
        "height": height,
    })
    return _applied(f"read {p['content_id'][:12]} by {p['doctor_id']}")


def scope_covers(scope: dict, session_id: str) -> bool:
    if scope.get("kind") == "all":
        return True
    return session_id in scope.get("sessions", [])


def alert_contract(state: ChainState, tx: Transaction, height: int) -> ContractResult:
    p = tx.payload
    if tx.submitter != p["patient_id"]:
        return _rejected("not_owner")
    if p["patient_id"] not in state.patients:
        return _rejected("unregistered")
    rule_ids = tuple(p["rule_ids"])
    state.alerts.append({
        "patient_id": p["patient_id"],
        "session_id": p["session_id"],
        "rule_ids": list(rule_ids),
        "observed_micro_amp": p.get("observed_micro_amp", 0),
        "height": height,
    })
    return ContractResult("Alert", rule_ids=rule_ids, delta=f"alert {','.join(rule_ids)}")


def evaluate(state: ChainState, tx: Transaction, height: int) -> ContractResult:
    """Admission-checked transaction dispatch during block application."""
    pub = state.signer_pub(tx.submitter)
    if pub is None and tx.kind in ("RegisterPatient", "RegisterDoctor"):
        # self-signed bootstrap: the submitter's own key rides in the payload
        pub = tx.payload.get("sign_pub")
    if pub is None:
        return _rejected("unknown_submitter")
    if not crypto.verify(pub, tx.signing_bytes(), tx.signature):
        return _rejected("bad_signature")
    if tx.seq in state.applied_seq.get(tx.submitter, ()):
        return _rejected("replayed_sequence")
    if tx.kind in ("RegisterPatient", "RegisterDoctor"):
        return registration_contract(state, tx)
    if tx.kind == "AssignDoctor":
        return assignment_contract(state, tx)
    if tx.kind == "PrescriptionIssued":
        return prescription_contract(state, tx)
    if tx.kind == "DataUpload":
        return upload_contract(state, tx, height)
    if tx.kind in ("AccessRequest", "AccessGrant", "AccessRead"):
        return access_contract(state, tx, height)
    if tx.kind == "AnomalyAlert":
        return alert_contract(state, tx, height)
    return _rejected(f"unknown_kind:{tx.kind}")


# --- Telemetry anomaly evaluation ----------------------------------------


def _iso_week(unix_ms: int) -> tuple[int, int]:
    at = datetime.fromtimestamp(unix_ms / 1000.0, tz=timezone.utc)
    iso = at.isocalendar()
    return (iso[0], iso[1])


def evaluate_anomaly(
    state: ChainState,
    session_id: str,
    patient_id: str,
    session_start_unix_ms: int,
    elapsed_s: int,
    samples: list[device.TelemetrySample],
    rx: device.Prescription,
) -> list[str]:
    """Evaluate rules R1-R4 over the samples seen so far in a session.

    Called by the gateway before upload; also usable by auditors replaying
    stored batches. Returns the firing rule ids (possibly empty).
    """
    fired: list[str] = []
    overcurrent_at = rx.current_setpoint + OVERCURRENT_MARGIN_MA
    for s in samples:
        if s.state is device.DeviceState.STIMULATING and s.current_ma > overcurrent_at + 1e-9:
            fired.append(RULE_OVERCURRENT)
            break
    for s in samples:
        if s.current_ma > device.HARD_CAP_MA + 1e-9:
            fired.append(RULE_HARD_CAP)
            break
    if elapsed_s > rx.session_duration * 60 + OVERRUN_MARGIN_S:
        fired.append(RULE_OVERRUN)
    week = _iso_week(session_start_unix_ms)
    prior = sum(
        1
        for sid, sess in state.sessions.items()
        if sid != session_id
        and sess["patient_id"] == patient_id
        and _iso_week(sess["start_unix_ms"]) == week
    )
    if prior >= rx.sessions_per_week:
        fired.append(RULE_SCHEDULE)
    return fired
