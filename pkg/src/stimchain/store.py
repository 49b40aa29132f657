"""Off-chain content-addressed blob store.

Holds sealed telemetry only; the chain stores pointers. The store trusts
nothing but its own follower view of the committed chain: a read must cite
a committed, applied AccessRead transaction (or be a signed owner
self-read). Layout on disk is one file per content id under a two-level
hex fan-out; an in-memory mode backs the simulator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import crypto, encoding
from .ledger import ChainState

logger = logging.getLogger(__name__)

DEFAULT_QUOTA_BYTES = 64 * 1024 * 1024


class StoreError(Exception):
    pass


class QuotaExceeded(StoreError):
    pass


class NotFound(StoreError):
    pass


class PermissionDenied(StoreError):
    pass


@dataclass(frozen=True)
class SealedBlob:
    ciphertext: bytes
    content_id: str
    key_id: str  # patient data-key reference

    @classmethod
    def seal(cls, plaintext: bytes, data_key: bytes, key_id: str, nonce_material: str) -> "SealedBlob":
        ct = crypto.seal(plaintext, data_key, nonce_material)
        return cls(ciphertext=ct, content_id=crypto.content_id(ct), key_id=key_id)


def self_read_payload(patient_id: str, content_id: str) -> bytes:
    return encoding.encode({"self_read": patient_id, "content_id": content_id})


@dataclass
class CloudStore:
    """Content-addressed store with an optional on-disk backing directory."""

    root: Optional[Path] = None
    quota_bytes: int = DEFAULT_QUOTA_BYTES
    entries: dict[str, bytes] = field(default_factory=dict)
    used_bytes: int = 0
    # follower view of the chain, fed by a ledger observer
    chain_state: Optional[ChainState] = None
    read_log: list[dict] = field(default_factory=list)
    denied_log: list[dict] = field(default_factory=list)

    def attach_chain_view(self, state: ChainState) -> None:
        self.chain_state = state

    def _path_for(self, content_id: str) -> Path:
        assert self.root is not None
        return self.root / content_id[:2] / content_id[2:4] / content_id

    def put(self, blob: SealedBlob) -> str:
        """Store a sealed blob; idempotent for identical bytes."""
        cid = crypto.content_id(blob.ciphertext)
        if cid != blob.content_id:
            raise StoreError("content_id does not match ciphertext")
        if cid in self.entries:
            return cid
        if self.used_bytes + len(blob.ciphertext) > self.quota_bytes:
            raise QuotaExceeded(f"store quota {self.quota_bytes} bytes exceeded")
        self.entries[cid] = blob.ciphertext
        self.used_bytes += len(blob.ciphertext)
        if len(blob.ciphertext) == 0:
            logger.info("stored empty blob %s", cid)
        if self.root is not None:
            path = self._path_for(cid)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(blob.ciphertext)
        return cid

    def stat(self, content_id: str) -> tuple[bool, int]:
        """Existence and size only; requires no proof and logs no read event."""
        data = self.entries.get(content_id)
        if data is None:
            return (False, 0)
        return (True, len(data))

    def get(self, content_id: str, proof: dict) -> bytes:
        """Return stored bytes for an authorized read.

        *proof* is either {"read_tx": <tx hash>} citing a committed, applied
        AccessRead, or {"self": patient_id, "sig": ...} for an owner
        self-read signed with the patient's registered key.
        """
        self._authorize(content_id, proof)
        data = self.entries.get(content_id)
        if data is None:
            raise NotFound(content_id)
        return data

    def _authorize(self, content_id: str, proof: dict) -> None:
        state = self.chain_state
        if state is None:
            raise PermissionDenied("store has no chain view")
        if "self" in proof:
            patient_id = proof["self"]
            pub = state.patients.get(patient_id, {}).get("sign_pub")
            owner = state.content.get(content_id, {}).get("patient_id")
            if (
                pub is None
                or (owner is not None and owner != patient_id)
                or not crypto.verify(pub, self_read_payload(patient_id, content_id), proof.get("sig", b""))
            ):
                self._deny(content_id, proof, "self-read not authorized")
            self.read_log.append({"reader": patient_id, "content_id": content_id, "self": True})
            return
        tx_hash = proof.get("read_tx")
        result = state.results.get(tx_hash) if tx_hash else None
        if result is None or result["kind"] != "AccessRead" or result["verdict"] != "Applied":
            self._deny(content_id, proof, "no applied AccessRead transaction")
        if result["content_id"] != content_id:
            self._deny(content_id, proof, "AccessRead does not cover this content")
        self.read_log.append({
            "reader": result["reader"], "content_id": content_id, "self": False, "read_tx": tx_hash,
        })

    def _deny(self, content_id: str, proof: dict, reason: str) -> None:
        self.denied_log.append({"content_id": content_id, "reason": reason})
        raise PermissionDenied(reason)

    def verify_integrity(self) -> bool:
        """Re-hash every entry; entries are immutable once written."""
        return all(crypto.content_id(data) == cid for cid, data in self.entries.items())
