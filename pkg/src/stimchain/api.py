"""Request/response facade for consoles and tooling.

Every mutating call becomes a signed transaction attributable to the
caller and blocks until the ledger commits it (or a 10 simulated-second
timeout). Capabilities derive solely from chain-state roles; there is no
side door: nothing the API can change exists outside the chain.

Authentication is challenge-response over the caller's registered signing
key. Payload schemas are documented in docs/api.md.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from . import crypto, device as devmod
from .ledger import Transaction, verify_chain
from .scenario import Runner
from .store import PermissionDenied
from .gateway import parse_batch

COMMIT_TIMEOUT_MS = 10_000


@dataclass
class ApiError(Exception):
    status: str  # "forbidden" | "not_found" | "timeout" | "bad_request" | "unauthenticated"
    detail: str = ""

    def __str__(self):
        return f"{self.status}: {self.detail}"


@dataclass
class TelemetryStream:
    session_id: str
    patient_id: str
    frames: list[dict] = field(default_factory=list)  # monotone seq, never reordered

    def after(self, seq: int) -> list[dict]:
        # seq numbers start at 1 and are dense; resume is a slice
        return self.frames[seq:]


def _sample_frame(seq: int, sample: devmod.TelemetrySample) -> dict:
    return {
        "seq": seq,
        "at": sample.at.isoformat(),
        "current": sample.current,
        "state": sample.state.value if sample.state else None,
    }


class ApiService:
    """In-process binding; the HTTP server in server.py wraps this 1:1."""

    def __init__(self, runner: Runner):
        self.runner = runner
        self.streams: dict[str, TelemetryStream] = {}
        self._challenges: dict[str, bytes] = {}
        self._tokens: dict[str, str] = {}  # token -> caller
        runner.telemetry_hook = self._on_sample

    # --- authentication --------------------------------------------------

    def challenge(self, caller: str) -> bytes:
        nonce = hashlib.sha256(
            f"challenge:{self.runner.config.seed}:{caller}:{len(self._tokens)}".encode()
        ).digest()
        self._challenges[caller] = nonce
        return nonce

    def login(self, caller: str, signature: bytes) -> str:
        nonce = self._challenges.pop(caller, None)
        pub = self.runner.state().signer_pub(caller)
        if nonce is None or pub is None or not crypto.verify(pub, nonce, signature):
            raise ApiError("unauthenticated", "challenge signature does not verify")
        token = hashlib.sha256(b"token:" + nonce).hexdigest()
        self._tokens[token] = caller
        return token

    def session_for(self, identity: crypto.Identity) -> str:
        """Convenience login for in-process callers holding their own key."""
        nonce = self.challenge(identity.name)
        return self.login(identity.name, identity.sign(nonce))

    def _caller(self, token: str) -> str:
        caller = self._tokens.get(token)
        if caller is None:
            raise ApiError("unauthenticated", "unknown or expired token")
        return caller

    # --- roles ------------------------------------------------------------

    def _role(self, caller: str) -> str:
        state = self.runner.state()
        if caller in state.authorities:
            return "authority"
        if caller in state.doctors:
            return "doctor"
        if caller in state.patients:
            return "patient"
        raise ApiError("forbidden", f"{caller} has no registered role")

    def _require(self, caller: str, *roles: str) -> str:
        role = self._role(caller)
        if role not in roles:
            raise ApiError("forbidden", f"{role} may not call this")
        return role

    def _assigned_doctor(self, patient_id: str) -> Optional[str]:
        return self.runner.state().assignments.get(patient_id)

    # --- commit plumbing --------------------------------------------------

    def _await_commit(self, tx: Transaction) -> dict:
        h = tx.tx_hash()
        state = self.runner.state()
        self.runner.sim.run_until(
            predicate=lambda: h in state.results,
            max_time_ms=self.runner.sim.now_ms + COMMIT_TIMEOUT_MS,
        )
        result = state.results.get(h)
        if result is None:
            raise ApiError("timeout", f"transaction {h[:16]} not committed; retry with same id")
        return {"tx": h, "verdict": result["verdict"], "reason": result["reason"]}

    # --- dispatch ---------------------------------------------------------

    def handle(self, request: dict) -> dict:
        """Route a request: {"method", "token", "params"} -> response dict."""
        method = request.get("method", "")
        caller = self._caller(request.get("token", ""))
        params = request.get("params", {}) or {}
        handler = getattr(self, "do_" + method.replace("-", "_"), None)
        if handler is None:
            raise ApiError("bad_request", f"unknown method {method!r}")
        return handler(caller, params)

    def do_register(self, caller: str, p: dict) -> dict:
        self._require(caller, "authority")
        kind = p.get("kind")
        if kind not in ("patient", "doctor"):
            raise ApiError("bad_request", "kind must be patient or doctor")
        if kind == "patient":
            self.runner.directory[p["id"]] = p.get("name", p["id"])
            self.runner.data_keys[p["id"]] = crypto.derive_data_key(
                p["id"], self.runner.config.seed
            )
            self.runner._register("RegisterPatient", p["id"])
        else:
            self.runner._register("RegisterDoctor", p["id"])
        # registration txs are submitted by the registrant; find the latest
        tx_kind = "RegisterPatient" if kind == "patient" else "RegisterDoctor"
        return self._await_registration(p["id"], tx_kind)

    def _await_registration(self, name: str, kind: str) -> dict:
        state = self.runner.state()
        self.runner.sim.run_until(
            predicate=lambda: state.is_registered(name),
            max_time_ms=self.runner.sim.now_ms + COMMIT_TIMEOUT_MS,
        )
        if not state.is_registered(name):
            raise ApiError("timeout", f"registration of {name} not committed")
        return {"verdict": "Applied", "id": name}

    def do_assign(self, caller: str, p: dict) -> dict:
        self._require(caller, "authority")
        tx = self.runner.submit("authority", "AssignDoctor", {
            "patient_id": p["patient"], "doctor_id": p["doctor"],
        })
        return self._await_commit(tx)

    def do_prescribe(self, caller: str, p: dict) -> dict:
        self._require(caller, "doctor")
        sham = p.get("sham")
        if sham in (None, "none"):
            policy = devmod.ShamPolicy.none()
        else:
            policy = devmod.ShamPolicy.crossover(float(sham["fraction"]), int(sham["seed"]))
        runner = self.runner
        rx = devmod.Prescription(
            prescription_id=p.get("id", f"rx-api-{runner._next_seq('rx:' + p['patient'])}"),
            patient_id=p["patient"],
            prescriber_id=caller,
            current_setpoint=float(p["current_ma"]),
            session_duration=int(p["duration_min"]),
            sessions_per_week=int(p.get("per_week", 5)),
            total_weeks=int(p.get("weeks", 6)),
            montage=devmod.ElectrodeMontage(
                devmod.HeadPosition("I", 2), devmod.HeadPosition("II", -2)
            ),
            sham_policy=policy,
        ).signed_by(runner._identity(caller))
        tx = runner.submit(caller, "PrescriptionIssued", {
            "prescription": rx.signing_payload(), "signature": rx.signature,
        })
        out = self._await_commit(tx)
        out["prescription_id"] = rx.prescription_id
        return out

    def do_validate_prescription(self, caller: str, p: dict) -> dict:
        """Server-side verdict for a dosing form; mirrors the device validator."""
        self._role(caller)
        rx = devmod.Prescription(
            prescription_id="form", patient_id="form", prescriber_id=caller,
            current_setpoint=float(p["current_ma"]),
            session_duration=int(p["duration_min"]),
            sessions_per_week=int(p["per_week"]),
            total_weeks=int(p["weeks"]),
            montage=devmod.ElectrodeMontage(
                devmod.HeadPosition("I", 2), devmod.HeadPosition("II", -2)
            ),
            sham_policy=devmod.ShamPolicy.none(),
        )
        report = devmod.validate_prescription(rx)
        return {
            "ok": report.ok,
            "violations": [
                {"field": v.field_name, "observed": v.observed, "allowed": v.allowed}
                for v in report.violations
            ],
        }

    def do_start_session(self, caller: str, p: dict) -> dict:
        patient = p["patient"]
        role = self._require(caller, "doctor", "patient")
        if role == "patient" and caller != patient:
            raise ApiError("forbidden", "patients may start only their own sessions")
        if role == "doctor" and self._assigned_doctor(patient) != caller:
            raise ApiError("forbidden", "doctor is not assigned to this patient")
        outcome = self.runner.start_session(patient, force=bool(p.get("force", False)))
        if outcome is None:
            raise ApiError("bad_request", "no committed prescription for patient")
        if outcome.denied:
            return {"session": outcome.session_id, "denied": outcome.denied}
        return {"session": outcome.session_id, "state": outcome.device.state.value}

    def _session_ctx(self, session_id: str):
        for gw in self.runner.gateways.values():
            if session_id in gw.sessions:
                return gw.sessions[session_id]
        raise ApiError("not_found", f"unknown session {session_id}")

    def do_abort_session(self, caller: str, p: dict) -> dict:
        ctx = self._session_ctx(p["session"])
        role = self._require(caller, "doctor", "patient")
        patient = ctx.prescription.patient_id
        if role == "patient" and caller != patient:
            raise ApiError("forbidden", "not your session")
        if role == "doctor" and self._assigned_doctor(patient) != caller:
            raise ApiError("forbidden", "doctor is not assigned to this patient")
        ctx.device.abort(p.get("reason", f"{caller}_abort"))
        return {"session": p["session"], "state": ctx.device.state.value}

    # --- telemetry --------------------------------------------------------

    def _on_sample(self, session_id: str, seq: int, sample) -> None:
        stream = self.streams.get(session_id)
        if stream is None:
            ctx = None
            for gw in self.runner.gateways.values():
                if session_id in gw.sessions:
                    ctx = gw.sessions[session_id]
            patient = ctx.prescription.patient_id if ctx else ""
            stream = self.streams[session_id] = TelemetryStream(session_id, patient)
        stream.frames.append(_sample_frame(seq, sample))

    def _authorize_stream(self, caller: str, stream: TelemetryStream) -> None:
        if caller == stream.patient_id:
            return
        if self._assigned_doctor(stream.patient_id) == caller:
            return
        state = self.runner.state()
        for g in state.grants.values():
            if g["doctor_id"] == caller and g["patient_id"] == stream.patient_id:
                return
        raise ApiError("forbidden", "no relationship with this patient")

    def do_stream_telemetry(self, caller: str, p: dict) -> dict:
        stream = self.streams.get(p["session"])
        if stream is None:
            raise ApiError("not_found", f"unknown session {p['session']}")
        self._authorize_stream(caller, stream)
        after = int(p.get("after", 0))
        frames = stream.after(after)
        return {"session": stream.session_id, "frames": frames}

    def do_list_telemetry(self, caller: str, p: dict) -> dict:
        return self.do_stream_telemetry(caller, {**p, "after": 0})

    # --- access workflow --------------------------------------------------

    def do_request_access(self, caller: str, p: dict) -> dict:
        self._require(caller, "doctor")
        tx = self.runner.submit(caller, "AccessRequest", {
            "doctor_id": caller, "patient_id": p["patient"],
            "scope": p.get("scope", {"kind": "all"}),
        })
        return self._await_commit(tx)

    def do_grant_access(self, caller: str, p: dict) -> dict:
        self._require(caller, "patient")
        runner = self.runner
        doctor = p["doctor"]
        runner.grant_counter += 1
        grant_id = f"grant-{runner.grant_counter}"
        doctor_pub = runner.state().doctors.get(doctor, {}).get("agree_pub")
        if doctor_pub is None:
            raise ApiError("bad_request", f"doctor {doctor} not registered")
        wrapped = crypto.wrap_key(
            runner.data_keys[caller], runner._identity(caller), doctor_pub, grant_id
        )
        gw = runner._gateway_for(caller)
        tx = gw._next_tx("AccessGrant", {
            "grant_id": grant_id, "patient_id": caller, "doctor_id": doctor,
            "wrapped_key": wrapped, "scope": p.get("scope", {"kind": "all"}),
            "expiry_height": runner.observer.height + int(p.get("expiry_blocks", 1000)),
        })
        runner.broadcast_tx(caller, tx)
        out = self._await_commit(tx)
        out["grant_id"] = grant_id
        return out

    def do_deny_access(self, caller: str, p: dict) -> dict:
        self._require(caller, "patient")
        # denial is recorded implicitly: the pending request is simply never
        # granted; report current pending state back to the console
        return {"denied": p["doctor"]}

    def do_list_requests(self, caller: str, p: dict) -> dict:
        self._require(caller, "patient")
        state = self.runner.state()
        pending = [
            {"doctor": d, "scope": info["scope"]}
            for (d, pt), info in state.pending_requests.items()
            if pt == caller
        ]
        return {"pending": pending}

    def do_list_records(self, caller: str, p: dict) -> dict:
        patient = p.get("patient", caller)
        role = self._role(caller)
        if role == "patient" and caller != patient:
            raise ApiError("forbidden", "not your records")
        state = self.runner.state()
        records = [
            {"content_id": cid, "session": c["session_id"], "batch_seq": c["batch_seq"]}
            for cid, c in state.content.items()
            if c["patient_id"] == patient
        ]
        return {"records": records}

    def do_read_record(self, caller: str, p: dict) -> dict:
        self._require(caller, "doctor")
        runner = self.runner
        state = runner.state()
        patient = p["patient"]
        cid = p["content_id"]
        grant_id = next(
            (gid for gid, g in state.grants.items()
             if g["doctor_id"] == caller and g["patient_id"] == patient),
            None,
        )
        if grant_id is None:
            raise ApiError("forbidden", "no grant from this patient")
        tx = runner.submit(caller, "AccessRead", {
            "doctor_id": caller, "patient_id": patient,
            "content_id": cid, "grant_id": grant_id,
        })
        result = self._await_commit(tx)
        if result["verdict"] != "Applied":
            raise ApiError("forbidden", f"read rejected: {result['reason']}")
        try:
            ciphertext = runner.store.get(cid, {"read_tx": tx.tx_hash()})
        except PermissionDenied as exc:
            raise ApiError("forbidden", str(exc)) from exc
        grant = state.grants[grant_id]
        data_key = crypto.unwrap_key(
            grant["wrapped_key"], runner._identity(caller),
            state.patients[patient]["agree_pub"], grant_id,
        )
        seq, session_id, samples = parse_batch(crypto.unseal(ciphertext, data_key))
        return {
            "tx": tx.tx_hash(), "content_id": cid, "session": session_id,
            "batch_seq": seq,
            "samples": [
                {"at": s.at.isoformat(), "current": s.current} for s in samples
            ],
        }

    # --- audit ------------------------------------------------------------

    def do_audit(self, caller: str, p: dict) -> dict:
        patient = p["patient"]
        role = self._role(caller)
        if role == "patient" and caller != patient:
            raise ApiError("forbidden", "not your audit trail")
        if role == "doctor" and self._assigned_doctor(patient) != caller:
            raise ApiError("forbidden", "doctor is not assigned to this patient")
        return audit_report(self.runner, patient)

    def do_chain_audit(self, caller: str, p: dict) -> dict:
        self._role(caller)
        ref = max(self.runner.honest_validators(), key=lambda v: len(v.chain))
        verdict = verify_chain(ref.chain)
        return {
            "height": len(ref.chain) - 1,
            "ok": verdict.ok,
            "first_invalid_height": verdict.first_invalid_height,
            "reason": verdict.reason,
        }


AUDIT_KINDS = ("DataUpload", "AccessRequest", "AccessGrant", "AccessRead", "AnomalyAlert")


def audit_report(runner: Runner, patient_id: str) -> dict:
    """Chain-ordered audit trail of data events for one patient."""
    ref = max(runner.honest_validators(), key=lambda v: len(v.chain))
    verdict = verify_chain(ref.chain)
    events = []
    for block in ref.chain[1:]:
        for tx in block.txs:
            if tx.kind not in AUDIT_KINDS:
                continue
            if tx.payload.get("patient_id") != patient_id:
                continue
            result = runner.state().results.get(tx.tx_hash(), {})
            events.append({
                "height": block.height,
                "kind": tx.kind,
                "verdict": result.get("verdict"),
                "reason": result.get("reason", ""),
                "tx": tx.tx_hash(),
                "detail": {
                    k: v for k, v in tx.payload.items()
                    if k in ("session_id", "content_id", "batch_seq", "doctor_id",
                             "grant_id", "rule_ids", "expiry_height")
                },
            })
    return {
        "patient": patient_id,
        "events": events,
        "chain_ok": verdict.ok,
        "first_invalid_height": verdict.first_invalid_height,
    }
