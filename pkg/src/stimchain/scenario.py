"""Scenario configuration and the world runner.

A scenario file (YAML, schema in docs/scenarios.md) fully determines an
execution: roster, fault schedules, and a timestamped workload script.
The runner builds validators, an observer-backed store, per-patient
gateways and devices, drives the workload through the event fabric, and
checks the cross-module invariants at the end.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

import yaml

from . import contracts, crypto, device as devmod, netsim
from .gateway import Gateway
from .ledger import (
    Block, ChainState, Transaction, export_chain, make_genesis, replay, verify_chain,
)
from .pbft import Observer, Validator
from .store import CloudStore

logger = logging.getLogger(__name__)

DEFAULT_EPOCH = "2021-09-20T09:00:00"  # a Monday: sessions land in clean ISO weeks
QUIESCE_GRACE_MS = 8_000


class ScenarioError(Exception):
    """Configuration rejected at load time."""


@dataclass
class ScenarioConfig:
    seed: int
    duration_s: int = 120
    epoch: str = DEFAULT_EPOCH
    validators: int = 4
    heartbeat_s: int = 10
    timeout_s: int = 6
    latency_ms: tuple[int, int] = (5, 15)
    drop_prob: float = 0.0
    store_quota_bytes: int = 64 * 1024 * 1024
    partitions: list[netsim.PartitionRule] = field(default_factory=list)
    byzantine: list[netsim.BehaviorRule] = field(default_factory=list)
    workload: list[dict] = field(default_factory=list)
    expect: dict = field(default_factory=dict)

    def __post_init__(self):
        # accept plain dicts for behaviors/partitions so programmatic callers
        # match the YAML grammar
        names = self.validator_names()
        self.byzantine = [
            b if isinstance(b, netsim.BehaviorRule) else netsim.BehaviorRule(
                node=_node_name(b["node"], names),
                kind=b["kind"],
                from_ms=int(b.get("from_s", 0)) * 1000,
                to_ms=int(b.get("to_s", self.duration_s)) * 1000,
                delay_ms=int(b.get("delay_ms", 0)),
            )
            for b in self.byzantine
        ]
        self.partitions = [
            p if isinstance(p, netsim.PartitionRule) else netsim.PartitionRule(
                from_ms=int(p["from_s"]) * 1000,
                to_ms=int(p["to_s"]) * 1000,
                groups=tuple(frozenset(_node_name(m, names) for m in g)
                             for g in p["groups"]),
            )
            for p in self.partitions
        ]

    @property
    def f(self) -> int:
        return (self.validators - 1) // 3

    def validator_names(self) -> list[str]:
        return [f"val-{i}" for i in range(self.validators)]


def _node_name(ref, names: list[str]) -> str:
    if isinstance(ref, int):
        if not 0 <= ref < len(names):
            raise ScenarioError(f"byzantine node index {ref} out of range")
        return names[ref]
    if ref not in names:
        raise ScenarioError(f"unknown node {ref!r}")
    return ref


def load_config(source) -> ScenarioConfig:
    """Load and validate a scenario; *source* is a path or a YAML string."""
    if isinstance(source, (str, Path)) and Path(str(source)).exists():
        text = Path(source).read_text()
    else:
        text = str(source)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"YAML parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a mapping")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ScenarioConfig:
    if "seed" not in raw:
        raise ScenarioError("missing required field: seed")
    cfg = ScenarioConfig(seed=int(raw["seed"]))
    cfg.duration_s = int(raw.get("duration_s", cfg.duration_s))
    cfg.epoch = str(raw.get("epoch", cfg.epoch))
    cfg.validators = int(raw.get("validators", cfg.validators))
    if cfg.validators < 4:
        raise ScenarioError("need at least 4 validators (n = 3f+1, f >= 1)")
    cfg.heartbeat_s = int(raw.get("heartbeat_s", cfg.heartbeat_s))
    cfg.timeout_s = int(raw.get("timeout_s", cfg.timeout_s))
    lat = raw.get("latency_ms", list(cfg.latency_ms))
    cfg.latency_ms = (lat, lat) if isinstance(lat, int) else (int(lat[0]), int(lat[1]))
    cfg.drop_prob = float(raw.get("drop_prob", 0.0))
    if not 0.0 <= cfg.drop_prob <= 1.0:
        raise ScenarioError(f"drop_prob {cfg.drop_prob} outside [0, 1]")
    cfg.store_quota_bytes = int(raw.get("store_quota_bytes", cfg.store_quota_bytes))
    names = cfg.validator_names()
    for p in raw.get("partitions", []) or []:
        cfg.partitions.append(netsim.PartitionRule(
            from_ms=int(p["from_s"]) * 1000,
            to_ms=int(p["to_s"]) * 1000,
            groups=tuple(frozenset(_node_name(m, names) for m in g) for g in p["groups"]),
        ))
    for b in raw.get("byzantine", []) or []:
        kind = b.get("kind")
        if kind not in (netsim.BEHAVIOR_SILENT, netsim.BEHAVIOR_EQUIVOCATE, netsim.BEHAVIOR_DELAY):
            raise ScenarioError(f"unknown byzantine kind {kind!r}")
        cfg.byzantine.append(netsim.BehaviorRule(
            node=_node_name(b["node"], names),
            kind=kind,
            from_ms=int(b.get("from_s", 0)) * 1000,
            to_ms=int(b.get("to_s", cfg.duration_s)) * 1000,
            delay_ms=int(b.get("delay_ms", 0)),
        ))
    workload = raw.get("workload", []) or []
    for i, action in enumerate(workload):
        if not isinstance(action, dict) or "action" not in action or "at_s" not in action:
            raise ScenarioError(f"workload entry {i} needs 'action' and 'at_s'")
    cfg.workload = workload
    cfg.expect = raw.get("expect", {}) or {}
    try:
        datetime.fromisoformat(cfg.epoch)
    except ValueError as exc:
        raise ScenarioError(f"bad epoch timestamp: {cfg.epoch}") from exc
    return cfg


@dataclass
class SessionOutcome:
    session_id: str
    patient_id: str
    arm: devmod.Arm
    started_at: datetime
    device: devmod.Device
    record: devmod.SessionRecord
    denied: Optional[str] = None


class Runner:
    """Builds the world for one scenario and executes it."""

    def __init__(self, config: ScenarioConfig, store_root: Optional[Path] = None):
        self.config = config
        self.epoch = datetime.fromisoformat(config.epoch)
        self.sim = netsim.Simulator(
            seed=config.seed,
            latency_ms=config.latency_ms,
            drop_prob=config.drop_prob,
            partitions=config.partitions,
            behaviors=config.byzantine,
        )
        names = config.validator_names()
        self.validator_ids = names
        self.identities = {n: crypto.Identity.derive(n, config.seed) for n in names}
        self.authority = crypto.Identity.derive("authority", config.seed)
        self.identities["authority"] = self.authority
        validator_pubs = {n: self.identities[n].sign_pub for n in names}
        self.genesis = make_genesis(validator_pubs, {"authority": self.authority.sign_pub}, config.f)

        quiet_after = config.duration_s * 1000
        self.validators: dict[str, Validator] = {}
        for n in names:
            v = Validator(
                identity=self.identities[n],
                validators=names,
                pubkeys=validator_pubs,
                genesis=self.genesis,
                sim=self.sim,
                observers=["observer-0"],
                heartbeat_ms=config.heartbeat_s * 1000,
                timeout_ms=config.timeout_s * 1000,
            )
            v.quiet_after_ms = quiet_after
            self.validators[n] = v
            self.sim.add_node(v)
        self.observer = Observer("observer-0", self.genesis)
        self.sim.add_node(self.observer)
        self.store = CloudStore(root=store_root, quota_bytes=config.store_quota_bytes)
        self.store.attach_chain_view(self.observer.state)

        self._client_nodes: set[str] = set()
        self._ensure_client("authority")
        self.seqs: dict[str, int] = {}
        self.directory: dict[str, str] = {}  # patient id -> display name (off-chain)
        self.gateways: dict[str, Gateway] = {}
        self.data_keys: dict[str, bytes] = {}
        self.session_history: dict[str, list[datetime]] = {}
        self.session_counter: dict[str, int] = {}
        self.sessions: list[SessionOutcome] = []
        self.pending_faults: dict[str, dict[int, float]] = {}
        self.read_results: list[dict] = []
        self.pending_reads: list[dict] = []
        self.grant_counter = 0
        self.workload_errors: list[str] = []
        self.invariant_failures: list[str] = []
        self.telemetry_hook = None  # set by the api service when attached

    # --- plumbing --------------------------------------------------------

    def _ensure_client(self, name: str) -> None:
        if name not in self._client_nodes and name not in self.sim.nodes:
            node = netsim.Node()
            node.node_id = name
            self.sim.add_node(node)
            self._client_nodes.add(name)

    def _identity(self, name: str) -> crypto.Identity:
        if name not in self.identities:
            self.identities[name] = crypto.Identity.derive(name, self.config.seed)
        return self.identities[name]

    def _next_seq(self, actor: str) -> int:
        self.seqs[actor] = self.seqs.get(actor, 0) + 1
        return self.seqs[actor]

    def submit(self, actor: str, kind: str, payload: dict) -> Transaction:
        """Sign and broadcast a transaction from *actor* to every validator."""
        self._ensure_client(actor)
        tx = Transaction(kind, payload, actor, self._next_seq(actor)).signed_by(
            self._identity(actor)
        )
        self.broadcast_tx(actor, tx)
        return tx

    def broadcast_tx(self, actor: str, tx: Transaction) -> None:
        self._ensure_client(actor)
        self.sim.broadcast(actor, self.validator_ids, {"type": "tx", "tx": tx.to_wire()})

    def now_dt(self) -> datetime:
        return self.epoch + timedelta(milliseconds=self.sim.now_ms)

    def unix_ms(self, at: datetime) -> int:
        return int(at.replace(tzinfo=timezone.utc).timestamp() * 1000)

    def state(self) -> ChainState:
        return self.observer.state

    # --- workload actions -------------------------------------------------

    def prepare(self) -> None:
        """Start the validators and schedule the configured workload."""
        for v in self.validators.values():
            v.start()
        for entry in self.config.workload:
            at_ms = int(entry["at_s"] * 1000)
            self.sim.call_at(at_ms, lambda e=entry: self._dispatch(e), label=entry["action"])

    def run(self) -> "RunReport":
        self.prepare()
        bound = self.config.duration_s * 1000 + QUIESCE_GRACE_MS
        self.sim.run_until(time_ms=bound)
        return self._report()

    def _dispatch(self, entry: dict) -> None:
        action = entry["action"]
        handler = getattr(self, f"_do_{action}", None)
        if handler is None:
            self.workload_errors.append(f"unknown action {action!r}")
            return
        try:
            handler(entry)
        except Exception as exc:  # workload errors are data for the report
            self.workload_errors.append(f"{action}: {exc}")
            logger.exception("workload action %s failed", action)

    def _do_register_doctor(self, e: dict) -> None:
        self._register("RegisterDoctor", e["id"])

    def _do_register_patient(self, e: dict) -> None:
        self.directory[e["id"]] = e.get("name", e["id"])
        self._register("RegisterPatient", e["id"])
        self.data_keys[e["id"]] = crypto.derive_data_key(e["id"], self.config.seed)

    def _register(self, kind: str, name: str) -> None:
        ident = self._identity(name)
        payload = {
            "id": name,
            "sign_pub": ident.sign_pub,
            "agree_pub": ident.agree_pub,
            "authority": "authority",
        }
        payload["authority_sig"] = self.authority.sign(
            contracts.registration_payload_bytes(kind, payload)
        )
        self.submit(name, kind, payload)

    def _do_assign(self, e: dict) -> None:
        self.submit("authority", "AssignDoctor", {
            "patient_id": e["patient"], "doctor_id": e["doctor"],
        })

    def _do_prescribe(self, e: dict) -> None:
        doctor = e["doctor"]
        sham = e.get("sham", "none")
        if sham == "none" or sham is None:
            policy = devmod.ShamPolicy.none()
        else:
            policy = devmod.ShamPolicy.crossover(float(sham["fraction"]), int(sham["seed"]))
        rx = devmod.Prescription(
            prescription_id=e.get("id", f"rx-{e['patient']}-{self._next_seq('rx:' + e['patient'])}"),
            patient_id=e["patient"],
            prescriber_id=doctor,
            current_setpoint=float(e["current_ma"]),
            session_duration=int(e["duration_min"]),
            sessions_per_week=int(e.get("per_week", 5)),
            total_weeks=int(e.get("weeks", 6)),
            montage=devmod.ElectrodeMontage(
                anode=devmod.HeadPosition("I", 2), cathode=devmod.HeadPosition("II", -2)
            ),
            sham_policy=policy,
        ).signed_by(self._identity(doctor))
        self.submit(doctor, "PrescriptionIssued", {
            "prescription": rx.signing_payload(), "signature": rx.signature,
        })

    def _gateway_for(self, patient_id: str) -> Gateway:
        if patient_id not in self.gateways:
            self.gateways[patient_id] = Gateway(
                patient=self._identity(patient_id),
                data_key=self.data_keys[patient_id],
                submit_tx=lambda tx, p=patient_id: self.broadcast_tx(p, tx),
                store=self.store,
                chain_view=self.state,
                now_ms=lambda: self.sim.now_ms,
                on_sample=self._on_sample,
                seq_source=lambda p=patient_id: self._next_seq(p),
            )
        return self.gateways[patient_id]

    def _on_sample(self, session_id: str, seq: int, sample) -> None:
        if self.telemetry_hook is not None:
            self.telemetry_hook(session_id, seq, sample)

    def prescription_for(self, patient_id: str) -> Optional[devmod.Prescription]:
        latest = None
        for rec in self.state().prescriptions.values():
            rx = devmod.Prescription.from_payload(rec["payload"], rec["signature"])
            if rx.patient_id == patient_id:
                latest = rx
        return latest

    def _do_session(self, e: dict) -> None:
        patient = e["patient"]
        self.start_session(patient, force=bool(e.get("force", False)),
                           session_id=e.get("session_id"))

    def start_session(
        self, patient: str, force: bool = False, session_id: Optional[str] = None
    ) -> Optional[SessionOutcome]:
        rx = self.prescription_for(patient)
        if rx is None:
            self.workload_errors.append(f"session: no committed prescription for {patient}")
            return None
        index = self.session_counter.get(patient, 0)
        session_id = session_id or f"S-{patient}-{index}"
        now = self.now_dt()
        history = self.session_history.setdefault(patient, [])
        decision = devmod.check_schedule(history, rx, now)
        arm = devmod.assign_arm(rx.sham_policy, patient, index)
        if not decision.allowed and not force:
            outcome = SessionOutcome(session_id, patient, arm, now,
                                     devmod.Device(), devmod.SessionRecord("", 0),
                                     denied=decision.reason)
            self.sessions.append(outcome)
            self.sim.record_event(f"session {session_id} denied: {decision.reason}")
            return outcome
        self.session_counter[patient] = index + 1
        dev = devmod.Device()
        dev.reading_faults = self.pending_faults.pop(patient, {})
        dev.start_session(rx, arm, now)
        gw = self._gateway_for(patient)
        gw.open_session(session_id, rx, dev, self.unix_ms(now))
        record = devmod.SessionRecord(
            patient_name=self.directory.get(patient, patient),
            treatment_length=rx.session_duration, arm=arm,
        )
        outcome = SessionOutcome(session_id, patient, arm, now, dev, record)
        self.sessions.append(outcome)
        history_entry = now

        def tick():
            if not dev.running:
                return
            sample = dev.tick()
            record.samples.append(sample)
            try:
                gw.ingest_sample(session_id, sample)
            except Exception as exc:
                self.workload_errors.append(f"ingest {session_id}: {exc}")
                return
            if dev.running:
                self.sim.call_at(self.sim.now_ms + 1000, tick)
            elif dev.state is devmod.DeviceState.COMPLETED:
                history.append(history_entry)

        self.sim.call_at(self.sim.now_ms + 1000, tick)
        return outcome

    def _do_inject_fault(self, e: dict) -> None:
        patient = e["patient"]
        faults = {int(e["at_elapsed_s"]): float(e["current_ma"])}
        gw = self.gateways.get(patient)
        active = None
        if gw:
            active = next(
                (c for c in gw.sessions.values() if c.device.running), None
            )
        if active is not None:
            active.device.reading_faults.update(faults)
        else:
            self.pending_faults.setdefault(patient, {}).update(faults)

    def _do_request_access(self, e: dict) -> None:
        self.submit(e["doctor"], "AccessRequest", {
            "doctor_id": e["doctor"], "patient_id": e["patient"],
            "scope": e.get("scope", {"kind": "all"}),
        })

    def _do_grant_access(self, e: dict) -> None:
        patient, doctor = e["patient"], e["doctor"]
        self.grant_counter += 1
        grant_id = f"grant-{self.grant_counter}"
        doctor_pub = self.state().doctors.get(doctor, {}).get("agree_pub")
        if doctor_pub is None:
            self.workload_errors.append(f"grant_access: doctor {doctor} not registered")
            return
        wrapped = crypto.wrap_key(
            self.data_keys[patient], self._identity(patient), doctor_pub, grant_id
        )
        gw = self._gateway_for(patient)
        tx = gw._next_tx("AccessGrant", {
            "grant_id": grant_id, "patient_id": patient, "doctor_id": doctor,
            "wrapped_key": wrapped, "scope": e.get("scope", {"kind": "all"}),
            "expiry_height": self.observer.height + int(e.get("expiry_blocks", 1000)),
        })
        self.broadcast_tx(patient, tx)

    def _do_read_records(self, e: dict) -> None:
        doctor, patient = e["doctor"], e["patient"]
        count = int(e.get("count", 1))
        state = self.state()
        grant_id = next(
            (gid for gid, g in state.grants.items()
             if g["doctor_id"] == doctor and g["patient_id"] == patient),
            None,
        )
        if grant_id is None:
            self.workload_errors.append(f"read_records: no grant for {doctor}/{patient}")
            return
        cids = [cid for cid, c in state.content.items() if c["patient_id"] == patient]
        for cid in cids[:count]:
            tx = self.submit(doctor, "AccessRead", {
                "doctor_id": doctor, "patient_id": patient,
                "content_id": cid, "grant_id": grant_id,
            })
            self.pending_reads.append({
                "tx_hash": tx.tx_hash(), "doctor": doctor, "patient": patient,
                "content_id": cid, "grant_id": grant_id,
                "deadline_ms": self.sim.now_ms + 30_000,
            })
        self.sim.call_at(self.sim.now_ms + 1000, self._process_pending_reads)

    def _process_pending_reads(self) -> None:
        state = self.state()
        still_pending = []
        for req in self.pending_reads:
            result = state.results.get(req["tx_hash"])
            if result is None:
                if self.sim.now_ms < req["deadline_ms"]:
                    still_pending.append(req)
                else:
                    self.workload_errors.append(
                        f"read of {req['content_id'][:12]} timed out uncommitted"
                    )
                continue
            if result["verdict"] != "Applied":
                self.read_results.append({**req, "ok": False, "reason": result["reason"]})
                continue
            try:
                ciphertext = self.store.get(req["content_id"], {"read_tx": req["tx_hash"]})
                grant = state.grants[req["grant_id"]]
                owner_pub = state.patients[req["patient"]]["agree_pub"]
                data_key = crypto.unwrap_key(
                    grant["wrapped_key"], self._identity(req["doctor"]),
                    owner_pub, req["grant_id"],
                )
                plaintext = crypto.unseal(ciphertext, data_key)
                from .gateway import parse_batch
                seq, session_id, samples = parse_batch(plaintext)
                self.read_results.append({
                    **req, "ok": True, "batch_seq": seq,
                    "session_id": session_id, "samples": len(samples),
                })
            except Exception as exc:
                self.read_results.append({**req, "ok": False, "reason": str(exc)})
        self.pending_reads = still_pending
        if self.pending_reads:
            self.sim.call_at(self.sim.now_ms + 1000, self._process_pending_reads)

    # --- end-of-run checks ------------------------------------------------

    def honest_validators(self) -> list[Validator]:
        byz = {b.node for b in self.config.byzantine}
        return [v for n, v in self.validators.items() if n not in byz]

    def _report(self) -> "RunReport":
        honest = self.honest_validators()
        failures = list(self.invariant_failures)

        # agreement: no two honest nodes commit different blocks at a height
        forks = 0
        max_h = max(len(v.chain) for v in honest)
        for h in range(1, max_h):
            hashes = {v.chain[h].block_hash() for v in honest if h < len(v.chain)}
            if len(hashes) > 1:
                forks += 1
                failures.append(f"fork at height {h}")

        exports = {export_chain(v.chain) for v in honest}
        chains_identical = len(exports) == 1
        if not chains_identical:
            failures.append("honest chains are not byte-identical at scenario end")

        ref = max(honest, key=lambda v: len(v.chain))
        verdict = verify_chain(ref.chain)
        if not verdict.ok:
            failures.append(f"chain verification failed at {verdict.first_invalid_height}: {verdict.reason}")

        replayed = replay(ref.chain)
        if replayed.results != ref.state.results:
            failures.append("replay from genesis does not reproduce live state")

        state = self.state()
        uploads_applied = sum(
            1 for r in state.results.values()
            if r["kind"] == "DataUpload" and r["verdict"] == "Applied"
        )
        batches_emitted = sum(len(g.published) for g in self.gateways.values())
        if uploads_applied != batches_emitted:
            failures.append(
                f"audit: {batches_emitted} batches published but {uploads_applied} DataUpload applied"
            )
        for cid in state.content:
            if not self.store.stat(cid)[0]:
                failures.append(f"dangling content pointer {cid[:12]}")
        reads_applied = sum(
            1 for r in state.results.values()
            if r["kind"] == "AccessRead" and r["verdict"] == "Applied"
        )
        reads_served = sum(1 for r in self.store.read_log if not r.get("self"))
        if reads_applied != reads_served:
            failures.append(
                f"audit: {reads_applied} AccessRead applied but {reads_served} store reads served"
            )
        if not self.store.verify_integrity():
            failures.append("store integrity: entry bytes changed")

        chain_bytes = export_chain(ref.chain)
        for pid, name in self.directory.items():
            needle = name.encode("utf-8")
            if any(needle in ct for ct in self.store.entries.values()):
                failures.append(f"PHI leak: display name of {pid} in stored ciphertext")
            if needle in chain_bytes:
                failures.append(f"PHI leak: display name of {pid} on chain")

        tx_counts: dict[str, dict[str, int]] = {}
        for r in state.results.values():
            kind = tx_counts.setdefault(r["kind"], {})
            kind[r["verdict"]] = kind.get(r["verdict"], 0) + 1

        view_changes = max((v.view for v in honest), default=0)
        expect = self.config.expect
        timed_out = False
        if "min_height" in expect and self.observer.height < expect["min_height"]:
            timed_out = True
        if "min_alerts" in expect and len(state.alerts) < expect["min_alerts"]:
            failures.append(f"expected >= {expect['min_alerts']} alerts, saw {len(state.alerts)}")
        if "max_alerts" in expect and len(state.alerts) > expect["max_alerts"]:
            failures.append(f"expected <= {expect['max_alerts']} alerts, saw {len(state.alerts)}")

        return RunReport(
            runner=self,
            height=self.observer.height,
            tx_counts=tx_counts,
            alerts=list(state.alerts),
            view_changes=view_changes,
            forks=forks,
            chains_identical=chains_identical,
            failures=failures,
            workload_errors=list(self.workload_errors),
            timed_out=timed_out,
            chain_bytes=chain_bytes,
        )


@dataclass
class RunReport:
    runner: Runner
    height: int
    tx_counts: dict
    alerts: list
    view_changes: int
    forks: int
    chains_identical: bool
    failures: list[str]
    workload_errors: list[str]
    timed_out: bool
    chain_bytes: bytes

    @property
    def ok(self) -> bool:
        return not self.failures and not self.timed_out

    @property
    def trace(self) -> list[str]:
        return self.runner.sim.trace

    def summary_lines(self) -> list[str]:
        lines = [
            f"height {self.height}",
            f"view_changes {self.view_changes}",
            f"alerts {len(self.alerts)}",
            f"forks {self.forks}",
            f"chains_identical {str(self.chains_identical).lower()}",
            f"timed_out {str(self.timed_out).lower()}",
        ]
        for kind in sorted(self.tx_counts):
            for verdict in sorted(self.tx_counts[kind]):
                lines.append(f"tx {kind} {verdict} {self.tx_counts[kind][verdict]}")
        for err in self.workload_errors:
            lines.append(f"workload_error {err}")
        for failure in self.failures:
            lines.append(f"invariant_failure {failure}")
        lines.append(f"result {'ok' if self.ok else 'fail'}")
        return lines


def run_scenario(config: ScenarioConfig, store_root: Optional[Path] = None) -> RunReport:
    return Runner(config, store_root=store_root).run()
