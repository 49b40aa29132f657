"""Three-phase byzantine-fault-tolerant consensus over the message fabric.

n = 3f+1 validators; quorums are 2f+1. Primary for view v is validator
v mod n (round-robin). The primary proposes on transaction arrival and on
a heartbeat interval (empty blocks keep liveness observable); replicas
broadcast prepares on a valid pre-prepare, commits on a prepare quorum,
and append on a commit quorum. A progress timeout with per-view doubling
drives the view-change sub-protocol; a prepared-but-uncommitted block is
carried into the new view and re-proposed with the same digest.

Commit signatures are made over (height, block hash) only, so they double
as the block's commit certificate and aggregate across views.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional

from . import crypto, encoding, netsim
from .ledger import Block, ChainState, Transaction, apply_block, commit_payload

logger = logging.getLogger(__name__)

DEFAULT_HEARTBEAT_MS = 10_000
DEFAULT_TIMEOUT_MS = 6_000
MAX_TIMEOUT_DOUBLINGS = 6


class NotPrimary(Exception):
    pass


@dataclass
class Round:
    """Per-height consensus bookkeeping."""

    preprepare_digest: Optional[bytes] = None
    blocks: dict[bytes, Block] = field(default_factory=dict)
    prepares: dict[bytes, dict[str, bytes]] = field(default_factory=dict)
    commits: dict[bytes, dict[str, bytes]] = field(default_factory=dict)
    sent_prepare: bool = False
    sent_commit: bool = False
    prepared_digest: Optional[bytes] = None

    def prepare_count(self, digest: bytes) -> int:
        return len(self.prepares.get(digest, {}))

    def commit_count(self, digest: bytes) -> int:
        return len(self.commits.get(digest, {}))


def _prepare_payload(view: int, height: int, digest: bytes) -> bytes:
    return encoding.encode({"prepare_view": view, "height": height, "digest": digest})


def _vc_payload(msg: dict) -> bytes:
    return encoding.encode({k: v for k, v in msg.items() if k not in ("sig", "type")})


class Validator(netsim.Node):
    """Single-threaded event-driven consensus validator."""

    def __init__(
        self,
        identity: crypto.Identity,
        validators: list[str],
        pubkeys: dict[str, bytes],
        genesis: Block,
        sim: netsim.Simulator,
        observers: Optional[list[str]] = None,
        heartbeat_ms: int = DEFAULT_HEARTBEAT_MS,
        timeout_ms: int = DEFAULT_TIMEOUT_MS,
    ):
        self.identity = identity
        self.node_id = identity.name
        self.validators = list(validators)
        self.pubkeys = dict(pubkeys)
        self.n = len(validators)
        self.f = (self.n - 1) // 3
        self.quorum = 2 * self.f + 1
        self.sim = sim
        self.observers = list(observers or [])
        self.heartbeat_ms = heartbeat_ms
        self.base_timeout_ms = timeout_ms

        self.chain: list[Block] = [genesis]
        self.state = ChainState.from_genesis(genesis)
        self.mempool: dict[str, Transaction] = {}
        self.pending_seq: dict[str, set] = {}
        self.rejected_admission: list[tuple[str, str]] = []

        self.view = 0
        self.failed_views = 0  # consecutive views without progress, bounds the timeout
        self.proposing_height: Optional[int] = None
        self.rounds: dict[int, Round] = {}
        self.vc_votes: dict[int, dict[str, dict]] = {}
        self.last_vc_target = 0
        self.sent_new_view: set[int] = set()
        self.equivocation_evidence: list[dict] = []
        self.view_changes_seen = 0
        self._timer_epoch = 0
        self._future: list[tuple[str, dict]] = []
        # after this instant the node stops initiating proposals and view
        # changes, letting in-flight rounds drain so chains converge
        self.quiet_after_ms: Optional[int] = None

    # --- helpers ---------------------------------------------------------

    @property
    def next_height(self) -> int:
        return len(self.chain)

    def primary_of(self, view: int) -> str:
        return self.validators[view % self.n]

    @property
    def is_primary(self) -> bool:
        return self.primary_of(self.view) == self.node_id

    def current_timeout_ms(self) -> int:
        return self.base_timeout_ms * (2 ** min(self.failed_views, MAX_TIMEOUT_DOUBLINGS))

    def _round(self, height: int) -> Round:
        if height not in self.rounds:
            self.rounds[height] = Round()
        return self.rounds[height]

    def _sign_msg(self, msg: dict) -> dict:
        msg["sender"] = self.node_id
        msg["sig"] = self.identity.sign(_vc_payload(msg))
        return msg

    def _msg_valid(self, msg: dict) -> bool:
        pub = self.pubkeys.get(msg.get("sender", ""))
        if pub is None:
            return False
        return crypto.verify(pub, _vc_payload(msg), msg.get("sig", b""))

    def _broadcast(self, msg: dict) -> None:
        self.sim.broadcast(self.node_id, self.validators, msg)

    # --- lifecycle -------------------------------------------------------

    def start(self) -> None:
        self._arm_progress_timer()
        self.sim.set_timer(self.node_id, self.heartbeat_ms, "heartbeat")

    def _arm_progress_timer(self) -> None:
        self._timer_epoch += 1
        delay = self.heartbeat_ms + self.current_timeout_ms()
        self.sim.set_timer(self.node_id, delay, f"progress:{self._timer_epoch}")

    def _quiet(self, now_ms: int) -> bool:
        return self.quiet_after_ms is not None and now_ms >= self.quiet_after_ms

    def on_timer(self, tag: str, now_ms: int) -> None:
        if tag == "heartbeat":
            if self.is_primary and self.proposing_height is None and not self._quiet(now_ms):
                self._propose(now_ms)
            if not self._quiet(now_ms):
                self.sim.set_timer(self.node_id, self.heartbeat_ms, "heartbeat")
            return
        if tag.startswith("progress:"):
            if int(tag.split(":", 1)[1]) != self._timer_epoch:
                return  # superseded by a commit or view entry
            if not self._quiet(now_ms):
                self._start_view_change(now_ms)

    # --- proposals -------------------------------------------------------

    def propose_block(self, now_ms: int) -> Block:
        """Build the next block from the mempool; primary only."""
        if not self.is_primary:
            raise NotPrimary(f"{self.node_id} is not primary for view {self.view}")
        txs = tuple(sorted(self.mempool.values(), key=lambda t: (t.submitter, t.seq)))
        return Block(
            height=self.next_height,
            prev_hash=self.chain[-1].block_hash(),
            txs=txs,
            proposer=self.node_id,
            view=self.view,
            proposed_at_ms=now_ms,
        )

    def _propose(self, now_ms: int) -> None:
        block = self.propose_block(now_ms)
        self.proposing_height = block.height
        behavior = self.sim.behavior_at(self.node_id, now_ms)
        if behavior is not None and behavior.kind == netsim.BEHAVIOR_EQUIVOCATE:
            self._propose_equivocating(block, now_ms)
            return
        msg = {"type": "pre-prepare", "view": self.view, "height": block.height,
               "block": block.to_wire()}
        self._sign_msg(msg)
        self._broadcast(msg)
        self._accept_preprepare(block, self.view, now_ms)

    def _propose_equivocating(self, block: Block, now_ms: int) -> None:
        # Conflicting proposals to disjoint halves; own votes withheld.
        other = dataclasses.replace(block, proposed_at_ms=block.proposed_at_ms + 1)
        peers = [v for v in self.validators if v != self.node_id]
        half = len(peers) // 2
        for target, blk in ((peers[:half], block), (peers[half:], other)):
            msg = {"type": "pre-prepare", "view": self.view, "height": blk.height,
                   "block": blk.to_wire()}
            self._sign_msg(msg)
            for to in target:
                self.sim.send(self.node_id, to, msg)
        self.sim.record_event(f"equivocation by {self.node_id} at height {block.height}")

    # --- message handling ------------------------------------------------

    def on_message(self, sender: str, message: dict, now_ms: int) -> None:
        mtype = message.get("type")
        if mtype == "tx":
            self._handle_tx(Transaction.from_wire(message["tx"]), now_ms)
        elif mtype == "pre-prepare":
            self._handle_preprepare(message, now_ms)
        elif mtype == "prepare":
            self._handle_prepare(message, now_ms)
        elif mtype == "commit":
            self._handle_commit(message, now_ms)
        elif mtype == "view-change":
            self._handle_view_change(message, now_ms)
        elif mtype == "new-view":
            self._handle_new_view(message, now_ms)
        elif mtype == "sync-req":
            self._handle_sync_req(sender, message)
        elif mtype == "sync-blocks":
            self._handle_sync_blocks(message, now_ms)

    def submit_transaction(self, tx: Transaction, now_ms: int) -> tuple[bool, str]:
        """Local admission entry point; returns (accepted, reason)."""
        return self._handle_tx(tx, now_ms)

    def _handle_tx(self, tx: Transaction, now_ms: int) -> tuple[bool, str]:
        h = tx.tx_hash()
        if h in self.mempool:
            return False, "replay"
        pub = self.state.signer_pub(tx.submitter)
        if pub is None and tx.kind in ("RegisterPatient", "RegisterDoctor"):
            pub = tx.payload.get("sign_pub")
        if pub is None:
            self.rejected_admission.append((h, "unknown_signer"))
            return False, "unknown_signer"
        if not crypto.verify(pub, tx.signing_bytes(), tx.signature):
            self.rejected_admission.append((h, "bad_signature"))
            return False, "bad_signature"
        if tx.seq in self.state.applied_seq.get(tx.submitter, ()) or tx.seq in (
            self.pending_seq.get(tx.submitter, ())
        ):
            self.rejected_admission.append((h, "stale_sequence"))
            return False, "stale_sequence"
        self.mempool[h] = tx
        self.pending_seq.setdefault(tx.submitter, set()).add(tx.seq)
        if self.is_primary and self.proposing_height is None:
            self._propose(now_ms)
        return True, "accepted"

    def _handle_preprepare(self, msg: dict, now_ms: int) -> None:
        if not self._msg_valid(msg):
            return
        height, view = msg["height"], msg["view"]
        if height > self.next_height:
            self._buffer_and_sync(msg, msg["sender"])
            return
        if height < self.next_height:
            return
        if view != self.view:
            if view > self.view:
                self._future.append(("view", msg))
            return
        if msg["sender"] != self.primary_of(view):
            return
        block = Block.from_wire(msg["block"])
        self._accept_preprepare(block, view, now_ms)

    def _accept_preprepare(self, block: Block, view: int, now_ms: int) -> None:
        if block.height != self.next_height:
            return
        if block.prev_hash != self.chain[-1].block_hash():
            self.sim.record_event(f"{self.node_id} rejects pre-prepare: bad prev hash")
            return
        digest = block.block_hash()
        rnd = self._round(block.height)
        if rnd.preprepare_digest is not None and rnd.preprepare_digest != digest:
            self.equivocation_evidence.append(
                {"height": block.height, "view": view,
                 "digests": [rnd.preprepare_digest, digest]}
            )
            self.sim.record_event(
                f"{self.node_id} records conflicting pre-prepare at height {block.height}"
            )
            return
        rnd.preprepare_digest = digest
        rnd.blocks[digest] = block
        if not rnd.sent_prepare:
            rnd.sent_prepare = True
            sig = self.identity.sign(_prepare_payload(self.view, block.height, digest))
            msg = {"type": "prepare", "view": self.view, "height": block.height,
                   "digest": digest, "sender": self.node_id, "sig": sig}
            if not self._suppressed(now_ms):
                self._broadcast(msg)
            self._record_prepare(block.height, self.view, digest, self.node_id, sig, now_ms)

    def _suppressed(self, now_ms: int) -> bool:
        behavior = self.sim.behavior_at(self.node_id, now_ms)
        return behavior is not None and behavior.kind == netsim.BEHAVIOR_EQUIVOCATE

    def _handle_prepare(self, msg: dict, now_ms: int) -> None:
        height, view, digest = msg["height"], msg["view"], msg["digest"]
        if height > self.next_height:
            self._buffer_and_sync(msg, msg["sender"])
            return
        if height < self.next_height or view != self.view:
            return
        pub = self.pubkeys.get(msg["sender"])
        if pub is None or not crypto.verify(
            pub, _prepare_payload(view, height, digest), msg["sig"]
        ):
            return
        rnd = self._round(height)
        if rnd.preprepare_digest is not None and digest != rnd.preprepare_digest:
            # a peer prepared a different digest for this (view, height): the
            # primary sent conflicting pre-prepares; keep the signed prepare
            # as evidence and refuse to vote for the rival digest
            self.equivocation_evidence.append(
                {"height": height, "view": view,
                 "digests": [rnd.preprepare_digest, digest],
                 "witness": msg["sender"]}
            )
            self.sim.record_event(
                f"{self.node_id} sees conflicting prepare at height {height}"
            )
        self._record_prepare(height, view, digest, msg["sender"], msg["sig"], now_ms)

    def _record_prepare(
        self, height: int, view: int, digest: bytes, sender: str, sig: bytes, now_ms: int
    ) -> None:
        rnd = self._round(height)
        rnd.prepares.setdefault(digest, {})[sender] = sig
        if (
            not rnd.sent_commit
            and rnd.prepare_count(digest) >= self.quorum
            and digest in rnd.blocks
        ):
            rnd.sent_commit = True
            rnd.prepared_digest = digest
            sig = self.identity.sign(commit_payload(height, digest))
            msg = {"type": "commit", "view": self.view, "height": height,
                   "digest": digest, "sender": self.node_id, "sig": sig}
            if not self._suppressed(now_ms):
                self._broadcast(msg)
            self._record_commit(height, digest, self.node_id, sig, now_ms)

    def _handle_commit(self, msg: dict, now_ms: int) -> None:
        height, digest = msg["height"], msg["digest"]
        if height > self.next_height:
            self._buffer_and_sync(msg, msg["sender"])
            return
        pub = self.pubkeys.get(msg["sender"])
        if pub is None or not crypto.verify(pub, commit_payload(height, digest), msg["sig"]):
            return
        self._record_commit(height, digest, msg["sender"], msg["sig"], now_ms)

    def _record_commit(
        self, height: int, digest: bytes, sender: str, sig: bytes, now_ms: int
    ) -> None:
        rnd = self._round(height)
        rnd.commits.setdefault(digest, {})[sender] = sig
        if height < self.next_height:
            # late certificate signature for an already-appended block
            if self.chain[height].block_hash() == digest:
                self._refresh_certificate(height)
            return
        if rnd.commit_count(digest) >= self.quorum and digest in rnd.blocks:
            self._append(rnd.blocks[digest], rnd, digest, now_ms)

    def _certificate_entries(self, rnd: Round, digest: bytes) -> tuple[dict, ...]:
        return tuple(
            {"node": node, "sig": sig}
            for node, sig in sorted(rnd.commits.get(digest, {}).items())
        )

    def _refresh_certificate(self, height: int) -> None:
        block = self.chain[height]
        rnd = self.rounds.get(height)
        if rnd is None:
            return
        self.chain[height] = dataclasses.replace(
            block, certificate=self._certificate_entries(rnd, block.block_hash())
        )

    def _append(self, block: Block, rnd: Round, digest: bytes, now_ms: int) -> None:
        committed = dataclasses.replace(
            block, certificate=self._certificate_entries(rnd, digest)
        )
        self.chain.append(committed)
        apply_block(self.state, committed)
        for tx in committed.txs:
            self.mempool.pop(tx.tx_hash(), None)
        self.failed_views = 0
        if self.proposing_height is not None and self.proposing_height <= block.height:
            self.proposing_height = None
        self._arm_progress_timer()
        self.sim.record_event(
            f"{self.node_id} commits height {block.height} view {block.view} "
            f"txs {len(block.txs)}"
        )
        for obs in self.observers:
            self.sim.send(self.node_id, obs, {"type": "block-commit", "block": committed.to_wire()})
        self._drain_future(now_ms)
        if self.is_primary and self.proposing_height is None and self.mempool:
            self._propose(now_ms)

    # --- view change -----------------------------------------------------

    def _prepared_proof(self) -> Optional[dict]:
        rnd = self.rounds.get(self.next_height)
        if rnd is None or rnd.prepared_digest is None:
            return None
        digest = rnd.prepared_digest
        if rnd.prepare_count(digest) < self.quorum:
            return None
        return {
            "block": rnd.blocks[digest].to_wire(),
            "prepares": [
                {"node": node, "sig": sig, "view": self.view}
                for node, sig in sorted(rnd.prepares[digest].items())
            ],
        }

    def _start_view_change(self, now_ms: int, target: Optional[int] = None) -> None:
        target = max(target or 0, self.view + 1, self.last_vc_target + 1)
        self.last_vc_target = target
        self.failed_views += 1
        msg = {"type": "view-change", "new_view": target,
               "next_height": self.next_height, "prepared": self._prepared_proof()}
        self._sign_msg(msg)
        self.sim.record_event(f"{self.node_id} starts view change -> view {target}")
        self._broadcast(msg)
        self._handle_view_change(msg, now_ms)
        self._arm_progress_timer()

    def _handle_view_change(self, msg: dict, now_ms: int) -> None:
        if not self._msg_valid(msg):
            return
        new_view = msg["new_view"]
        if new_view <= self.view:
            return
        votes = self.vc_votes.setdefault(new_view, {})
        votes[msg["sender"]] = msg
        # join: enough peers want this view that staying behind risks liveness
        if len(votes) >= self.f + 1 and self.last_vc_target < new_view:
            self._start_view_change(now_ms, target=new_view)
            votes = self.vc_votes[new_view]
        if (
            len(votes) >= self.quorum
            and self.primary_of(new_view) == self.node_id
            and new_view not in self.sent_new_view
        ):
            self.sent_new_view.add(new_view)
            chosen = [votes[k] for k in sorted(votes)][: self.quorum]
            prepared = self._best_prepared(chosen)
            nv = {"type": "new-view", "new_view": new_view,
                  "view_changes": chosen, "prepared": prepared}
            self._sign_msg(nv)
            self._broadcast(nv)
            self._enter_view(new_view, prepared, now_ms)

    def _best_prepared(self, view_changes: list[dict]) -> Optional[dict]:
        best = None
        best_height = -1
        for vc in view_changes:
            prepared = vc.get("prepared")
            if prepared is None:
                continue
            height = prepared["block"]["height"]
            if height >= self.next_height and height > best_height:
                best, best_height = prepared, height
        return best

    def _handle_new_view(self, msg: dict, now_ms: int) -> None:
        if not self._msg_valid(msg):
            return
        new_view = msg["new_view"]
        if new_view <= self.view or msg["sender"] != self.primary_of(new_view):
            return
        valid = [vc for vc in msg["view_changes"]
                 if self._msg_valid(vc) and vc["new_view"] == new_view]
        if len({vc["sender"] for vc in valid}) < self.quorum:
            return
        self._enter_view(new_view, msg.get("prepared"), now_ms)

    def _enter_view(self, new_view: int, prepared: Optional[dict], now_ms: int) -> None:
        self.view = new_view
        self.proposing_height = None
        self.view_changes_seen += 1
        self.sim.record_event(f"{self.node_id} enters view {new_view}")
        rnd = self._round(self.next_height)
        rnd.preprepare_digest = None
        rnd.prepares = {}
        rnd.sent_prepare = False
        rnd.sent_commit = False
        carried = False
        if prepared is not None:
            block = Block.from_wire(prepared["block"])
            if block.height == self.next_height and self._prepared_valid(prepared, block):
                # same digest continues in the new view; never replaced
                self._accept_preprepare(block, new_view, now_ms)
                carried = True
                if self.is_primary:
                    self.proposing_height = block.height
        self._arm_progress_timer()
        self._drain_future(now_ms)
        if self.is_primary and not carried and self.mempool:
            self._propose(now_ms)

    def _prepared_valid(self, prepared: dict, block: Block) -> bool:
        digest = block.block_hash()
        count = 0
        for entry in prepared["prepares"]:
            pub = self.pubkeys.get(entry["node"])
            if pub is not None and crypto.verify(
                pub, _prepare_payload(entry["view"], block.height, digest), entry["sig"]
            ):
                count += 1
        return count >= self.quorum

    # --- catch-up --------------------------------------------------------

    def _buffer_and_sync(self, msg: dict, sender: str) -> None:
        self._future.append(("height", msg))
        self.sim.send(self.node_id, sender,
                      {"type": "sync-req", "from_height": self.next_height})

    def _handle_sync_req(self, sender: str, msg: dict) -> None:
        frm = msg["from_height"]
        if frm >= self.next_height:
            return
        blocks = [b.to_wire() for b in self.chain[frm : frm + 20]]
        self.sim.send(self.node_id, sender, {"type": "sync-blocks", "blocks": blocks})

    def _handle_sync_blocks(self, msg: dict, now_ms: int) -> None:
        from .ledger import verify_chain  # local import to avoid cycle at module load

        for wire in msg["blocks"]:
            block = Block.from_wire(wire)
            if block.height != self.next_height:
                continue
            if block.prev_hash != self.chain[-1].block_hash():
                return
            payload = block.commit_payload()
            signers = {
                e["node"] for e in block.certificate
                if e["node"] in self.pubkeys
                and crypto.verify(self.pubkeys[e["node"]], payload, e["sig"])
            }
            if len(signers) < self.quorum:
                return
            self.chain.append(block)
            apply_block(self.state, block)
            for tx in block.txs:
                self.mempool.pop(tx.tx_hash(), None)
            self.sim.record_event(f"{self.node_id} syncs height {block.height}")
        self._arm_progress_timer()
        self._drain_future(now_ms)

    def _drain_future(self, now_ms: int) -> None:
        pending, self._future = self._future, []
        for _, msg in pending:
            self.on_message(msg.get("sender", ""), msg, now_ms)


class Observer(netsim.Node):
    """Non-voting chain follower: verifies certificates and folds state."""

    def __init__(self, node_id: str, genesis: Block):
        self.node_id = node_id
        meta = genesis.genesis_meta or {}
        self.pubkeys = dict(meta.get("validators", {}))
        self.f = meta.get("f", 0)
        self.quorum = 2 * self.f + 1
        self.chain: list[Block] = [genesis]
        self.state = ChainState.from_genesis(genesis)
        self._pending: dict[int, Block] = {}

    @property
    def height(self) -> int:
        return len(self.chain) - 1

    def on_message(self, sender: str, message: dict, now_ms: int) -> None:
        if message.get("type") != "block-commit":
            return
        block = Block.from_wire(message["block"])
        if block.height < len(self.chain):
            return
        self._pending[block.height] = block
        while len(self.chain) in self._pending:
            nxt = self._pending.pop(len(self.chain))
            if not self._certified(nxt):
                break
            self.chain.append(nxt)
            apply_block(self.state, nxt)

    def _certified(self, block: Block) -> bool:
        if block.prev_hash != self.chain[-1].block_hash():
            return False
        payload = block.commit_payload()
        signers = {
            e["node"] for e in block.certificate
            if e["node"] in self.pubkeys
            and crypto.verify(self.pubkeys[e["node"]], payload, e["sig"])
        }
        return len(signers) >= self.quorum
