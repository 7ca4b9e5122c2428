"""Canonical data model: documents, digests, identities, and signatures.

Everything that crosses a trust boundary is a *canonical document*: a tree
of string-keyed objects, arrays, strings, signed 64-bit integers, booleans,
and null. The canonical encoding (sorted keys, minimal escaping, no
whitespace, no floats) is unique per logical document, so content digests
and cross-node bit-equality are well defined.

Signatures never cover raw structures directly. Each proof type signs
``domain_tag || sha256(canonical_encoding(payload))`` with its own one-byte
domain tag, which blocks cross-protocol signature replay.
"""

from __future__ import annotations

import dataclasses
import json
import time
from typing import Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey
from cryptography.hazmat.primitives import hashes, serialization

from . import kernels
from .errors import NonCanonicalValue, UnknownKey

Doc = Union[dict, list, str, int, bool, None]

DIGEST_SIZE = 32

# One-byte signing domains, one per proof type.
DOMAIN_SOURCE_RECORD = b"\x01"
DOMAIN_ATTESTATION = b"\x02"
DOMAIN_FILTER = b"\x03"
DOMAIN_INFERENCE = b"\x04"

ROLES = ("source", "attestor", "executor", "committee-node", "recipient")
SIGNING_ROLES = ("source", "attestor", "executor", "committee-node")


def canonical_encode(doc: Doc) -> bytes:
    """Unique byte encoding of a canonical document.

    Raises NonCanonicalValue for floats, non-string keys, integers outside
    the signed 64-bit range, unpaired surrogates, and unsupported types.
    """
    return kernels.encode_canonical(doc)


def _reject_float(token: str):
    raise NonCanonicalValue(f"non-integer number in canonical input: {token}")


def _object_pairs(pairs):
    obj: dict = {}
    for key, value in pairs:
        if key in obj:
            raise NonCanonicalValue(f"duplicate object key: {key!r}")
        obj[key] = value
    return obj


def canonical_decode(data: bytes) -> Doc:
    """Parse canonical bytes back into a document.

    Strict inverse of canonical_encode: input that is valid JSON but not in
    canonical form (extra whitespace, unsorted keys, non-minimal escapes,
    leading zeros) is rejected, so encode(decode(b)) == b always holds.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise NonCanonicalValue(f"input is not valid UTF-8: {exc}") from exc
    try:
        doc = json.loads(
            text,
            parse_float=_reject_float,
            parse_constant=_reject_float,
            object_pairs_hook=_object_pairs,
        )
    except NonCanonicalValue:
        raise
    except ValueError as exc:
        raise NonCanonicalValue(f"input is not valid JSON: {exc}") from exc
    if canonical_encode(doc) != data:
        raise NonCanonicalValue("input is valid JSON but not in canonical form")
    return doc


def export_json(doc: Doc) -> bytes:
    """Human-readable export of a document (indented, sorted keys)."""
    return (json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n").encode("utf-8")


_HEX_ALPHABET = frozenset("0123456789abcdef")


def require_keys(doc: Doc, required: frozenset, optional: frozenset = frozenset()) -> dict:
    """Schema guard for wire-format objects: exact required keys, no strays.

    Permissive parsing would let a mutated key name masquerade as an
    ignorable extra while its field silently defaults.
    """
    if not isinstance(doc, dict):
        raise NonCanonicalValue("expected an object")
    keys = set(doc.keys())
    if not required.issubset(keys) or not keys.issubset(required | optional):
        raise NonCanonicalValue(
            f"object keys {sorted(keys)} do not match the schema {sorted(required)}"
        )
    return doc


def hex_to_bytes(text) -> bytes:
    """Strict lowercase hex decoding.

    bytes.fromhex is case-insensitive, which would let a case flip inside a
    serialized digest or signature decode to the same bytes and slip past
    every integrity check; wire formats therefore admit lowercase only.
    """
    if not isinstance(text, str) or len(text) % 2 != 0 or not _HEX_ALPHABET.issuperset(text):
        raise NonCanonicalValue(f"bad hex string: {text!r}")
    return bytes.fromhex(text)


@dataclasses.dataclass(frozen=True)
class Digest:
    """A 32-byte SHA-256 digest over a canonical encoding."""

    value: bytes

    def __post_init__(self):
        if not isinstance(self.value, bytes) or len(self.value) != DIGEST_SIZE:
            raise NonCanonicalValue("digest must be exactly 32 bytes")

    @property
    def hex(self) -> str:
        return self.value.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        try:
            raw = hex_to_bytes(text)
        except (ValueError, TypeError) as exc:
            raise NonCanonicalValue(f"bad digest hex: {text!r}") from exc
        return cls(raw)

    def __repr__(self):
        return f"Digest({self.hex[:12]}…)"


def digest(data: bytes) -> Digest:
    """SHA-256 of raw bytes."""
    h = hashes.Hash(hashes.SHA256())
    h.update(data)
    return Digest(h.finalize())


def doc_digest(doc: Doc) -> Digest:
    return digest(canonical_encode(doc))


@dataclasses.dataclass(frozen=True)
class KeyIdentity:
    """Public half of a key pair: role, raw public key, and its fingerprint."""

    role: str
    public_key: bytes
    fingerprint: Digest

    def __post_init__(self):
        if self.role not in ROLES:
            raise UnknownKey(f"unknown role: {self.role!r}")
        if digest(self.public_key) != self.fingerprint:
            raise UnknownKey("fingerprint does not match public key")

    @classmethod
    def for_public_key(cls, role: str, public_key: bytes) -> "KeyIdentity":
        return cls(role=role, public_key=public_key, fingerprint=digest(public_key))

    def to_doc(self) -> Doc:
        return {
            "fingerprint": self.fingerprint.hex,
            "public_key": self.public_key.hex(),
            "role": self.role,
        }

    @classmethod
    def from_doc(cls, doc: Doc) -> "KeyIdentity":
        try:
            require_keys(doc, frozenset({"fingerprint", "public_key", "role"}))
        except NonCanonicalValue as exc:
            raise UnknownKey(str(exc)) from exc
        try:
            role = doc["role"]
            public_key = hex_to_bytes(doc["public_key"])
            fingerprint = Digest.from_hex(doc["fingerprint"])
        except (KeyError, TypeError, ValueError, NonCanonicalValue) as exc:
            raise UnknownKey(f"malformed identity: {exc}") from exc
        return cls(role=role, public_key=public_key, fingerprint=fingerprint)


@dataclasses.dataclass(frozen=True)
class SecretKey:
    """Private half of a key pair. Never serialized into proofs."""

    role: str
    private_bytes: bytes
    identity: KeyIdentity

    def to_doc(self) -> Doc:
        return {
            "private_key": self.private_bytes.hex(),
            "public_key": self.identity.public_key.hex(),
            "role": self.role,
        }

    @classmethod
    def from_doc(cls, doc: Doc) -> "SecretKey":
        if not isinstance(doc, dict):
            raise UnknownKey("secret key must be an object")
        try:
            role = doc["role"]
            private_bytes = hex_to_bytes(doc["private_key"])
        except (KeyError, TypeError, ValueError) as exc:
            raise UnknownKey(f"malformed secret key: {exc}") from exc
        return _rebuild_secret(role, private_bytes)


def _rebuild_secret(role: str, private_bytes: bytes) -> SecretKey:
    if role == "recipient":
        pub = X25519PrivateKey.from_private_bytes(private_bytes).public_key()
    else:
        pub = Ed25519PrivateKey.from_private_bytes(private_bytes).public_key()
    public_bytes = pub.public_bytes(
        encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw
    )
    identity = KeyIdentity.for_public_key(role, public_bytes)
    return SecretKey(role=role, private_bytes=private_bytes, identity=identity)


def keygen(role: str) -> tuple[SecretKey, KeyIdentity]:
    """Fresh key pair for a role.

    Signing roles get Ed25519 keys; the recipient role gets an X25519 key
    usable only for sealed payload delivery.
    """
    if role not in ROLES:
        raise UnknownKey(f"unknown role: {role!r}")
    if role == "recipient":
        priv = X25519PrivateKey.generate()
    else:
        priv = Ed25519PrivateKey.generate()
    private_bytes = priv.private_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PrivateFormat.Raw,
        encryption_algorithm=serialization.NoEncryption(),
    )
    secret = _rebuild_secret(role, private_bytes)
    return secret, secret.identity


def sign(secret: SecretKey, message: bytes) -> bytes:
    if secret.role not in SIGNING_ROLES:
        raise UnknownKey(f"role {secret.role!r} holds an encryption key, not a signing key")
    return Ed25519PrivateKey.from_private_bytes(secret.private_bytes).sign(message)


def verify_sig(identity: KeyIdentity, message: bytes, signature: bytes) -> bool:
    if identity.role not in SIGNING_ROLES:
        return False
    try:
        key = Ed25519PublicKey.from_public_bytes(identity.public_key)
        key.verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


def sign_payload(secret: SecretKey, domain: bytes, payload_doc: Doc) -> bytes:
    """Sign ``domain || sha256(canonical payload)``."""
    return sign(secret, domain + doc_digest(payload_doc).value)


def verify_payload(identity: KeyIdentity, domain: bytes, payload_doc: Doc, signature: bytes) -> bool:
    try:
        message = domain + doc_digest(payload_doc).value
    except NonCanonicalValue:
        return False
    return verify_sig(identity, message, signature)


@dataclasses.dataclass(frozen=True)
class DataRecord:
    """A sourced datum: canonical content plus provenance metadata."""

    source_id: str
    subject_id: str
    content: Doc
    content_type: str
    fetched_at: int

    def __post_init__(self):
        if not isinstance(self.fetched_at, int) or self.fetched_at <= 0:
            raise NonCanonicalValue("fetched_at must be a positive unix timestamp")

    def to_doc(self) -> Doc:
        return {
            "content": self.content,
            "content_type": self.content_type,
            "fetched_at": self.fetched_at,
            "source_id": self.source_id,
            "subject_id": self.subject_id,
        }

    @classmethod
    def from_doc(cls, doc: Doc) -> "DataRecord":
        require_keys(
            doc, frozenset({"content", "content_type", "fetched_at", "source_id", "subject_id"})
        )
        try:
            return cls(
                source_id=doc["source_id"],
                subject_id=doc["subject_id"],
                content=doc["content"],
                content_type=doc["content_type"],
                fetched_at=doc["fetched_at"],
            )
        except KeyError as exc:
            raise NonCanonicalValue(f"record missing field {exc}") from exc


def record_digest(record: DataRecord) -> Digest:
    """Content digest of the full record (metadata included)."""
    return doc_digest(record.to_doc())


def now_s() -> int:
    return int(time.time())
