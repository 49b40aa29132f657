"""Transactions, blocks, chain state, and chain verification.

The chain is a hash-linked sequence of blocks, each carrying a commit
certificate of 2f+1 validator signatures over (height, block hash).
ChainState is a pure fold of contract evaluation over committed blocks:
replaying any exported chain from genesis reproduces it exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

from . import crypto, encoding

TX_KINDS = (
    "RegisterPatient",
    "RegisterDoctor",
    "AssignDoctor",
    "PrescriptionIssued",
    "DataUpload",
    "AccessRequest",
    "AccessGrant",
    "AccessRead",
    "AnomalyAlert",
)


@dataclass(frozen=True)
class Transaction:
    kind: str
    payload: dict
    submitter: str
    seq: int  # client sequence number, strictly increasing per submitter
    signature: bytes = b""

    def signing_payload(self) -> dict:
        return {
            "kind": self.kind,
            "payload": self.payload,
            "submitter": self.submitter,
            "seq": self.seq,
        }

    def signing_bytes(self) -> bytes:
        return encoding.encode(self.signing_payload())

    def signed_by(self, identity: crypto.Identity) -> "Transaction":
        return Transaction(
            self.kind, self.payload, self.submitter, self.seq,
            identity.sign(self.signing_bytes()),
        )

    def to_wire(self) -> dict:
        d = self.signing_payload()
        d["signature"] = self.signature
        return d

    @classmethod
    def from_wire(cls, d: dict) -> "Transaction":
        return cls(d["kind"], d["payload"], d["submitter"], d["seq"], d["signature"])

    def tx_hash(self) -> str:
        return encoding.digest_hex(self.to_wire())


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    txs: tuple[Transaction, ...]
    proposer: str
    view: int
    proposed_at_ms: int
    # height 0 only: bootstrap roster (validator/authority public keys, f)
    genesis_meta: Optional[dict] = None
    # 2f+1 entries of {node, sig}; sig is over (height, block_hash)
    certificate: tuple[dict, ...] = ()

    def tx_digest(self) -> bytes:
        return encoding.digest([tx.to_wire() for tx in self.txs])

    def header(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "tx_digest": self.tx_digest(),
            "proposer": self.proposer,
            "view": self.view,
            "proposed_at_ms": self.proposed_at_ms,
            "genesis_meta": self.genesis_meta,
        }

    def block_hash(self) -> bytes:
        return encoding.digest(self.header())

    def commit_payload(self) -> bytes:
        """Bytes each validator signs to certify this block."""
        return commit_payload(self.height, self.block_hash())

    def to_wire(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "txs": [tx.to_wire() for tx in self.txs],
            "proposer": self.proposer,
            "view": self.view,
            "proposed_at_ms": self.proposed_at_ms,
            "genesis_meta": self.genesis_meta,
            "certificate": [dict(e) for e in self.certificate],
        }

    @classmethod
    def from_wire(cls, d: dict) -> "Block":
        return cls(
            height=d["height"],
            prev_hash=d["prev_hash"],
            txs=tuple(Transaction.from_wire(t) for t in d["txs"]),
            proposer=d["proposer"],
            view=d["view"],
            proposed_at_ms=d["proposed_at_ms"],
            genesis_meta=d["genesis_meta"],
            certificate=tuple(d["certificate"]),
        )

    def encode(self) -> bytes:
        return encoding.encode(self.to_wire())


def commit_payload(height: int, block_hash: bytes) -> bytes:
    return encoding.encode({"certify_height": height, "block_hash": block_hash})


def make_genesis(
    validator_pubs: dict[str, bytes],
    authority_pubs: dict[str, bytes],
    f: int,
) -> Block:
    """Bootstrap block carrying the admitted validator and authority roster."""
    meta = {
        "validators": {k: validator_pubs[k] for k in sorted(validator_pubs)},
        "authorities": {k: authority_pubs[k] for k in sorted(authority_pubs)},
        "f": f,
    }
    return Block(
        height=0, prev_hash=b"\x00" * 32, txs=(), proposer="genesis",
        view=0, proposed_at_ms=0, genesis_meta=meta,
    )


# --- Materialized state ---------------------------------------------------


@dataclass
class ChainState:
    """Materialized view folded from committed blocks by the contract rules."""

    authorities: dict[str, bytes] = field(default_factory=dict)
    validators: dict[str, bytes] = field(default_factory=dict)
    # id -> {"sign_pub", "agree_pub"}
    patients: dict[str, dict] = field(default_factory=dict)
    doctors: dict[str, dict] = field(default_factory=dict)
    assignments: dict[str, str] = field(default_factory=dict)  # patient -> primary doctor
    prescriptions: dict[str, dict] = field(default_factory=dict)  # id -> payload
    # content_id -> {"patient_id", "session_id", "batch_seq"}
    content: dict[str, dict] = field(default_factory=dict)
    # session_id -> {"patient_id", "prescription_id", "start_ms", "batches"}
    sessions: dict[str, dict] = field(default_factory=dict)
    # (doctor, patient) pending access requests -> scope
    pending_requests: dict[tuple[str, str], dict] = field(default_factory=dict)
    # grant_id -> {"patient_id", "doctor_id", "wrapped_key", "scope", "expiry_height", "granted_height"}
    grants: dict[str, dict] = field(default_factory=dict)
    alerts: list[dict] = field(default_factory=list)
    # submitter -> set of consumed client sequence numbers; a set rather
    # than a floor so honest transactions reordered in flight still land
    applied_seq: dict[str, set] = field(default_factory=dict)
    # tx_hash -> {"height", "verdict", "reason", "kind"} for every committed tx
    results: dict[str, dict] = field(default_factory=dict)
    reads: list[dict] = field(default_factory=list)  # applied AccessRead events

    @classmethod
    def from_genesis(cls, genesis: Block) -> "ChainState":
        meta = genesis.genesis_meta or {}
        return cls(
            authorities=dict(meta.get("authorities", {})),
            validators=dict(meta.get("validators", {})),
        )

    def signer_pub(self, name: str) -> Optional[bytes]:
        for roster in (self.authorities, self.validators):
            if name in roster:
                return roster[name]
        if name in self.patients:
            return self.patients[name]["sign_pub"]
        if name in self.doctors:
            return self.doctors[name]["sign_pub"]
        return None

    def is_registered(self, name: str) -> bool:
        return self.signer_pub(name) is not None


def apply_block(state: ChainState, block: Block) -> list:
    """Evaluate each transaction in order; rejections are recorded no-ops."""
    from . import contracts  # deferred: contracts imports this module's types

    results = []
    for tx in block.txs:
        result = contracts.evaluate(state, tx, block.height)
        entry = {
            "height": block.height,
            "kind": tx.kind,
            "verdict": result.verdict,
            "reason": result.reason,
            "rule_ids": list(result.rule_ids),
        }
        if tx.kind in ("DataUpload", "AccessRead"):
            entry["content_id"] = tx.payload.get("content_id")
            entry["reader"] = tx.payload.get("doctor_id")
        state.results[tx.tx_hash()] = entry
        state.applied_seq.setdefault(tx.submitter, set()).add(tx.seq)
        results.append(result)
    return results


def replay(blocks: list[Block]) -> ChainState:
    """Fold a full chain (starting at genesis) into its ChainState."""
    state = ChainState.from_genesis(blocks[0])
    for block in blocks[1:]:
        apply_block(state, block)
    return state


# --- Verification ---------------------------------------------------------


@dataclass(frozen=True)
class ChainVerdict:
    ok: bool
    first_invalid_height: Optional[int] = None
    reason: Optional[str] = None


def verify_chain(blocks: list[Block]) -> ChainVerdict:
    """Check hash linkage, heights, commit certificates, and tx signatures.

    Pure function over an exported chain; the roster comes from genesis.
    """
    if not blocks:
        return ChainVerdict(False, 0, "empty chain")
    genesis = blocks[0]
    if genesis.height != 0 or genesis.genesis_meta is None:
        return ChainVerdict(False, genesis.height, "missing genesis")
    validators = genesis.genesis_meta["validators"]
    f = genesis.genesis_meta["f"]
    quorum = 2 * f + 1
    state = ChainState.from_genesis(genesis)
    prev = genesis
    for block in blocks[1:]:
        h = block.height
        if h != prev.height + 1:
            return ChainVerdict(False, h, f"height gap after {prev.height}")
        if block.prev_hash != prev.block_hash():
            return ChainVerdict(False, h, "previous-hash mismatch")
        signers = set()
        payload = block.commit_payload()
        for entry in block.certificate:
            node = entry["node"]
            if node in validators and node not in signers:
                if crypto.verify(validators[node], payload, entry["sig"]):
                    signers.add(node)
        if len(signers) < quorum:
            return ChainVerdict(False, h, f"certificate has {len(signers)} valid signatures, need {quorum}")
        for tx in block.txs:
            pub = state.signer_pub(tx.submitter)
            if pub is None and tx.kind not in ("RegisterPatient", "RegisterDoctor"):
                return ChainVerdict(False, h, f"unknown submitter {tx.submitter}")
            if pub is not None and not crypto.verify(pub, tx.signing_bytes(), tx.signature):
                return ChainVerdict(False, h, f"bad signature on tx by {tx.submitter}")
        apply_block(state, block)
        prev = block
    return ChainVerdict(True)


# --- Chain files ----------------------------------------------------------


def export_chain(blocks: list[Block]) -> bytes:
    """Concatenated length-prefixed canonical block encodings."""
    out = bytearray()
    for block in blocks:
        raw = block.encode()
        out += struct.pack(">I", len(raw))
        out += raw
    return bytes(out)


def import_chain(data: bytes) -> list[Block]:
    blocks = []
    offset = 0
    while offset < len(data):
        if offset + 4 > len(data):
            raise encoding.EncodingError(f"truncated chain file at offset {offset}")
        (length,) = struct.unpack_from(">I", data, offset)
        offset += 4
        if offset + length > len(data):
            raise encoding.EncodingError(f"truncated block at offset {offset}")
        blocks.append(Block.from_wire(encoding.decode(data[offset : offset + length])))
        offset += length
    return blocks
