"""Identity keys, signatures, batch sealing, and key wrapping.

Every participant owns an Ed25519 signing key (transactions, consensus
messages) and an X25519 agreement key (receiving wrapped data keys).
Telemetry batches are sealed with ChaCha20-Poly1305 under a per-patient
symmetric data key; grants wrap that data key to a doctor's agreement key
via a static-static X25519 exchange, which keeps every ciphertext in the
system a deterministic function of the scenario seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.hashes import SHA256

DATA_KEY_BYTES = 32
NONCE_BYTES = 12


class SealError(Exception):
    """Encryption/decryption failure (wrong key, corrupt ciphertext, missing key)."""


class SignatureError(Exception):
    """Signature verification failure."""


@dataclass
class Identity:
    """A named principal with signing and key-agreement keys."""

    name: str
    signing_key: Ed25519PrivateKey
    agreement_key: X25519PrivateKey

    @classmethod
    def derive(cls, name: str, seed: int) -> "Identity":
        """Derive a reproducible identity from (name, seed)."""
        sign_seed = hashlib.sha256(f"sign:{seed}:{name}".encode()).digest()
        agree_seed = hashlib.sha256(f"agree:{seed}:{name}".encode()).digest()
        return cls(
            name=name,
            signing_key=Ed25519PrivateKey.from_private_bytes(sign_seed),
            agreement_key=X25519PrivateKey.from_private_bytes(agree_seed),
        )

    @property
    def sign_pub(self) -> bytes:
        return self.signing_key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    @property
    def agree_pub(self) -> bytes:
        return self.agreement_key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    def sign(self, message: bytes) -> bytes:
        return self.signing_key.sign(message)


def verify(sign_pub: bytes, message: bytes, signature: bytes) -> bool:
    """Check an Ed25519 signature; returns False rather than raising."""
    try:
        Ed25519PublicKey.from_public_bytes(sign_pub).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


def require_valid(sign_pub: bytes, message: bytes, signature: bytes) -> None:
    if not verify(sign_pub, message, signature):
        raise SignatureError("signature does not verify")


def derive_data_key(patient_id: str, seed: int) -> bytes:
    """Per-patient symmetric data key, reproducible from the scenario seed."""
    return hashlib.sha256(f"datakey:{seed}:{patient_id}".encode()).digest()


def content_id(ciphertext: bytes) -> str:
    """Content address of a sealed blob: lowercase hex SHA-256 of the ciphertext."""
    return hashlib.sha256(ciphertext).hexdigest()


def seal(plaintext: bytes, data_key: bytes, nonce_material: str) -> bytes:
    """Authenticated encryption of a batch under the patient data key.

    The nonce is derived from *nonce_material*, which callers must keep
    unique per (key, plaintext context) — the gateway uses (session, seq).
    """
    if data_key is None or len(data_key) != DATA_KEY_BYTES:
        raise SealError("missing or malformed data key")
    nonce = hashlib.sha256(nonce_material.encode()).digest()[:NONCE_BYTES]
    return nonce + ChaCha20Poly1305(data_key).encrypt(nonce, plaintext, None)


def unseal(ciphertext: bytes, data_key: bytes) -> bytes:
    if data_key is None or len(data_key) != DATA_KEY_BYTES:
        raise SealError("missing or malformed data key")
    if len(ciphertext) < NONCE_BYTES:
        raise SealError("ciphertext too short")
    nonce, body = ciphertext[:NONCE_BYTES], ciphertext[NONCE_BYTES:]
    try:
        return ChaCha20Poly1305(data_key).decrypt(nonce, body, None)
    except InvalidTag as exc:
        raise SealError("authenticated decryption failed") from exc


def _wrap_key_material(shared: bytes, context: str) -> bytes:
    return HKDF(
        algorithm=SHA256(),
        length=DATA_KEY_BYTES,
        salt=None,
        info=f"key-wrap:{context}".encode(),
    ).derive(shared)


def wrap_key(
    data_key: bytes, owner: Identity, recipient_agree_pub: bytes, context: str
) -> bytes:
    """Wrap the owner's data key to a recipient's X25519 public key.

    Static-static exchange: both sides can derive the wrapping key, and the
    ciphertext is deterministic for a given (owner, recipient, context).
    """
    shared = owner.agreement_key.exchange(
        X25519PublicKey.from_public_bytes(recipient_agree_pub)
    )
    kek = _wrap_key_material(shared, context)
    nonce = hashlib.sha256(f"wrap:{context}".encode()).digest()[:NONCE_BYTES]
    return nonce + ChaCha20Poly1305(kek).encrypt(nonce, data_key, None)


def unwrap_key(
    wrapped: bytes, recipient: Identity, owner_agree_pub: bytes, context: str
) -> bytes:
    shared = recipient.agreement_key.exchange(
        X25519PublicKey.from_public_bytes(owner_agree_pub)
    )
    kek = _wrap_key_material(shared, context)
    if len(wrapped) < NONCE_BYTES:
        raise SealError("wrapped key too short")
    nonce, body = wrapped[:NONCE_BYTES], wrapped[NONCE_BYTES:]
    try:
        return ChaCha20Poly1305(kek).decrypt(nonce, body, None)
    except InvalidTag as exc:
        raise SealError("key unwrap failed") from exc
