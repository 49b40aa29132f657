"""Patient-side gateway: the virtual patient.

Collects 1 Hz device samples, batches them, evaluates anomaly rules before
upload, seals batches under the patient data key (display name stripped:
linkage exists only through on-chain identifiers), stores them off-chain,
and records every upload on the ledger.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import contracts, crypto, device as devmod
from .ledger import ChainState, Transaction
from .store import CloudStore, SealedBlob, QuotaExceeded, StoreError

logger = logging.getLogger(__name__)

BATCH_SAMPLES = 60
MAX_STORE_RETRIES = 5


class GatewayError(Exception):
    pass


class OutOfOrderSample(GatewayError):
    """Device clock fault: a sample not later than its predecessor."""


class FatalDesync(GatewayError):
    """The ledger rejected our batch sequence; local and chain state disagree."""


@dataclass
class TelemetryBatch:
    patient_id: str
    session_id: str
    batch_seq: int  # starts at 1, no gaps within a session
    samples: list[devmod.TelemetrySample] = field(default_factory=list)
    created_at_ms: int = 0

    def plaintext(self) -> bytes:
        """Batch encoding: header line plus session-log data lines (no name)."""
        lines = [f"Batch:{self.batch_seq},Session:{self.session_id}"]
        lines.extend(s.log_line() for s in self.samples)
        return ("\n".join(lines) + "\n").encode("utf-8")


def parse_batch(data: bytes) -> tuple[int, str, list[devmod.TelemetrySample]]:
    """Inverse of TelemetryBatch.plaintext for readers holding the data key."""
    text = data.decode("utf-8")
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or not lines[0].startswith("Batch:"):
        raise GatewayError("missing batch header")
    head, session_part = lines[0].split(",", 1)
    seq = int(head.split(":", 1)[1])
    session_id = session_part.split(":", 1)[1]
    body = "Patient name: \nTreatment length: 0 mins\n" + "\n".join(lines[1:]) + "\n"
    record = devmod.parse_session(body.encode("utf-8"))
    return seq, session_id, record.samples


@dataclass
class SessionContext:
    session_id: str
    prescription: devmod.Prescription
    start_unix_ms: int
    device: devmod.Device
    batch_seq: int = 0
    buffer: list[devmod.TelemetrySample] = field(default_factory=list)
    all_samples: list[devmod.TelemetrySample] = field(default_factory=list)
    last_sample_at: Optional[object] = None
    alerted_rules: set = field(default_factory=set)
    closed: bool = False


class Gateway:
    """One gateway per patient; sequential within a session.

    Collaborators are injected: a store client, a transaction submitter
    (broadcasts to validators), and a follower chain-state view used for
    anomaly evaluation.
    """

    def __init__(
        self,
        patient: crypto.Identity,
        data_key: bytes,
        submit_tx: Callable[[Transaction], None],
        store: CloudStore,
        chain_view: Callable[[], ChainState],
        now_ms: Callable[[], int],
        on_sample: Optional[Callable[[str, int, devmod.TelemetrySample], None]] = None,
        seq_source: Optional[Callable[[], int]] = None,
    ):
        self.patient = patient
        self.patient_id = patient.name
        self.data_key = data_key
        self.submit_tx = submit_tx
        self.store = store
        self.chain_view = chain_view
        self.now_ms = now_ms
        self.on_sample = on_sample
        # the patient's ledger sequence must be shared across every client
        # that signs for them, or the replay guard rejects honest traffic
        self._seq_source = seq_source
        self.next_seq = 1
        self.sessions: dict[str, SessionContext] = {}
        self.published: list[str] = []  # content ids in publish order
        self.alerts_raised: list[dict] = []
        self.store_retries = 0

    def _next_tx(self, kind: str, payload: dict) -> Transaction:
        if self._seq_source is not None:
            seq = self._seq_source()
        else:
            seq = self.next_seq
            self.next_seq += 1
        tx = Transaction(kind, payload, self.patient_id, seq)
        return tx.signed_by(self.patient)

    def open_session(
        self, session_id: str, rx: devmod.Prescription, dev: devmod.Device, start_unix_ms: int
    ) -> SessionContext:
        ctx = SessionContext(
            session_id=session_id, prescription=rx, start_unix_ms=start_unix_ms, device=dev
        )
        self.sessions[session_id] = ctx
        return ctx

    def ingest_sample(self, session_id: str, sample: devmod.TelemetrySample) -> None:
        """Buffer one sample; flush a batch every 60 samples or at session end."""
        ctx = self.sessions[session_id]
        if ctx.last_sample_at is not None and sample.at <= ctx.last_sample_at:
            raise OutOfOrderSample(
                f"sample at {sample.at} not after {ctx.last_sample_at} (device clock fault)"
            )
        ctx.last_sample_at = sample.at
        ctx.buffer.append(sample)
        ctx.all_samples.append(sample)
        if self.on_sample:
            self.on_sample(session_id, len(ctx.all_samples), sample)
        self._evaluate_anomalies(ctx)
        if len(ctx.buffer) >= BATCH_SAMPLES:
            self._flush(ctx)
        if not ctx.device.running and not ctx.closed:
            self.close_session(session_id)

    def close_session(self, session_id: str) -> None:
        ctx = self.sessions[session_id]
        if ctx.closed:
            return
        ctx.closed = True
        if ctx.buffer:
            self._flush(ctx)

    def _flush(self, ctx: SessionContext) -> None:
        ctx.batch_seq += 1
        batch = TelemetryBatch(
            patient_id=self.patient_id,
            session_id=ctx.session_id,
            batch_seq=ctx.batch_seq,
            samples=list(ctx.buffer),
            created_at_ms=self.now_ms(),
        )
        ctx.buffer = []
        blob = self.seal_batch(batch)
        self.publish_batch(batch, blob, ctx)

    def seal_batch(self, batch: TelemetryBatch) -> SealedBlob:
        """Encrypt a batch; the plaintext carries no patient-identifying fields."""
        if not batch.samples:
            raise GatewayError("empty batch")
        return SealedBlob.seal(
            batch.plaintext(),
            self.data_key,
            key_id=f"datakey:{self.patient_id}",
            nonce_material=f"{batch.session_id}:{batch.batch_seq}",
        )

    def publish_batch(self, batch: TelemetryBatch, blob: SealedBlob, ctx: SessionContext) -> str:
        """Store the blob and record the upload on the ledger; idempotent."""
        delay_ms = 100
        for attempt in range(MAX_STORE_RETRIES + 1):
            try:
                self.store.put(blob)
                break
            except QuotaExceeded:
                raise
            except StoreError:
                if attempt == MAX_STORE_RETRIES:
                    raise
                self.store_retries += 1
                delay_ms *= 2  # bounded exponential backoff, simulated time
        tx = self._next_tx("DataUpload", {
            "patient_id": self.patient_id,
            "session_id": batch.session_id,
            "content_id": blob.content_id,
            "batch_seq": batch.batch_seq,
            "session_start_unix_ms": ctx.start_unix_ms,
            "prescription_id": ctx.prescription.prescription_id,
            "sample_count": len(batch.samples),
        })
        self.submit_tx(tx)
        self.published.append(blob.content_id)
        return blob.content_id

    def _evaluate_anomalies(self, ctx: SessionContext) -> None:
        fired = contracts.evaluate_anomaly(
            self.chain_view(),
            ctx.session_id,
            self.patient_id,
            ctx.start_unix_ms,
            ctx.device.elapsed_s,
            ctx.all_samples[-BATCH_SAMPLES:],
            ctx.prescription,
        )
        fresh = [r for r in fired if r not in ctx.alerted_rules]
        if fresh:
            ctx.alerted_rules.update(fresh)
            self.raise_alert(ctx, fresh)

    def raise_alert(self, ctx: SessionContext, rule_ids: list[str]) -> None:
        """Record the anomaly on-chain and stop the device immediately."""
        if not rule_ids:
            return
        worst = max((s.current_ma for s in ctx.all_samples[-BATCH_SAMPLES:]), default=0.0)
        tx = self._next_tx("AnomalyAlert", {
            "patient_id": self.patient_id,
            "session_id": ctx.session_id,
            "rule_ids": sorted(rule_ids),
            "observed_micro_amp": int(round(worst * 1000)),
            "batch_seq": ctx.batch_seq + 1,
        })
        self.submit_tx(tx)
        self.alerts_raised.append({"session_id": ctx.session_id, "rule_ids": sorted(rule_ids)})
        ctx.device.abort("anomaly:" + ",".join(sorted(rule_ids)))
        logger.warning("anomaly %s on session %s: device aborted", rule_ids, ctx.session_id)
