"""Consumer-side policy engine: composed proof chains and their offline
verification.

A chain composes a source attestation, zero or more filter proofs with
their disclosed specs, an optional inference proof, and the delivered
payload, linked hop to hop by content digests. Verification is pure and
offline: every trust root lives in the policy, the clock is an explicit
argument, and every check always runs so a failing report attributes every
broken property, not just the first.

``created_at`` on a chain is unprotected metadata: it appears in the JSON
export but not in the canonical encoding, because nothing in the pipeline
signs the assembled chain object itself. Everything inside the canonical
encoding is covered by some signature, digest recomputation, or
consistency rule.

Sealed delivery uses a hybrid scheme (X25519 key agreement, HKDF-SHA256,
ChaCha20-Poly1305) with the plaintext digest alongside in the clear, so the
chain verifies without decryption; the digest is an accepted metadata leak.
Ciphertext integrity is enforced by the AEAD tag at opening time.
"""

from __future__ import annotations

import dataclasses
import json

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives import serialization

from .attestor import (
    MODE_ORACLE_PROXY,
    MODE_SOURCE_SIGNED,
    SourceAttestation,
    _MODE_ROLE,
)
from .committee import CommitteeConfig, verify_committee_proof
from .core import (
    DataRecord,
    Digest,
    Doc,
    KeyIdentity,
    SecretKey,
    canonical_decode,
    canonical_encode,
    doc_digest,
    export_json,
    hex_to_bytes,
    now_s,
    record_digest,
    require_keys,
    verify_sig,
)
from .errors import DecryptFailure, NonCanonicalValue, ParseError, UnknownKey
from .filters import FilterProof, FilterSpec, verify_filter_proof
from .pinned import InferenceOutput, InferenceProof, service_ref, verify_single_signature

SEAL_SUITE = "x25519-hkdf-sha256-chacha20poly1305"
_SEAL_INFO_PREFIX = b"props-seal-v1"
_SEAL_NONCE = bytes(12)  # single-use derived key per message

PAYLOAD_RECORD = "record"
PAYLOAD_OUTPUT = "output"
PAYLOAD_SEALED = "sealed"

DELIVERY_PLAINTEXT = "plaintext"
DELIVERY_SEALED = "sealed"
DELIVERY_ANY = "any"

REQUIRE_NONE = "none"
REQUIRE_EXACT = "exact"
REQUIRE_SERVICE_REF = "service-ref"
REQUIRE_COMMITTEE = "committee"

REPORT_SCHEMA = 1


# --- sealed payloads -----------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class SealedPayload:
    payload_type: str  # "record" | "output"
    plaintext_digest: Digest
    ephemeral_pk: bytes
    ciphertext: bytes
    suite: str = SEAL_SUITE

    def to_doc(self) -> Doc:
        return {
            "ciphertext": self.ciphertext.hex(),
            "ephemeral_pk": self.ephemeral_pk.hex(),
            "payload_type": self.payload_type,
            "plaintext_digest": self.plaintext_digest.hex,
            "suite": self.suite,
        }

    @classmethod
    def from_doc(cls, doc: Doc) -> "SealedPayload":
        try:
            require_keys(
                doc,
                frozenset({"ciphertext", "ephemeral_pk", "payload_type", "plaintext_digest", "suite"}),
            )
        except NonCanonicalValue as exc:
            raise ParseError(str(exc)) from exc
        try:
            sealed = cls(
                payload_type=doc["payload_type"],
                plaintext_digest=Digest.from_hex(doc["plaintext_digest"]),
                ephemeral_pk=hex_to_bytes(doc["ephemeral_pk"]),
                ciphertext=hex_to_bytes(doc["ciphertext"]),
                suite=doc["suite"],
            )
        except (KeyError, TypeError, ValueError, NonCanonicalValue) as exc:
            raise ParseError(f"malformed sealed payload: {exc}") from exc
        if sealed.suite != SEAL_SUITE or sealed.payload_type not in (PAYLOAD_RECORD, PAYLOAD_OUTPUT):
            raise ParseError("unsupported sealed payload header")
        return sealed


def _seal_key(shared: bytes, ephemeral_pk: bytes, recipient_pk: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=_SEAL_INFO_PREFIX + ephemeral_pk + recipient_pk,
    ).derive(shared)


def seal_payload(recipient: KeyIdentity, payload) -> SealedPayload:
    """Encrypt a record or inference output to a recipient key.

    The plaintext digest travels in the clear so chain linkage is checkable
    without the decryption key.
    """
    if recipient.role != "recipient":
        raise UnknownKey("sealing requires a recipient-role identity")
    if isinstance(payload, DataRecord):
        payload_type, doc = PAYLOAD_RECORD, payload.to_doc()
    elif isinstance(payload, InferenceOutput):
        payload_type, doc = PAYLOAD_OUTPUT, payload.to_doc()
    else:
        raise ParseError(f"cannot seal a {type(payload).__name__}")
    plaintext = canonical_encode(doc)
    plaintext_digest = doc_digest(doc)
    ephemeral = X25519PrivateKey.generate()
    ephemeral_pk = ephemeral.public_key().public_bytes(
        encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw
    )
    shared = ephemeral.exchange(X25519PublicKey.from_public_bytes(recipient.public_key))
    key = _seal_key(shared, ephemeral_pk, recipient.public_key)
    ciphertext = ChaCha20Poly1305(key).encrypt(_SEAL_NONCE, plaintext, plaintext_digest.value)
    return SealedPayload(
        payload_type=payload_type,
        plaintext_digest=plaintext_digest,
        ephemeral_pk=ephemeral_pk,
        ciphertext=ciphertext,
    )


def open_payload(recipient_secret: SecretKey, sealed: SealedPayload):
    """Decrypt a sealed payload; returns a DataRecord or InferenceOutput."""
    if recipient_secret.role != "recipient":
        raise UnknownKey("opening requires the recipient secret key")
    try:
        priv = X25519PrivateKey.from_private_bytes(recipient_secret.private_bytes)
        shared = priv.exchange(X25519PublicKey.from_public_bytes(sealed.ephemeral_pk))
        key = _seal_key(shared, sealed.ephemeral_pk, recipient_secret.identity.public_key)
        plaintext = ChaCha20Poly1305(key).decrypt(
            _SEAL_NONCE, sealed.ciphertext, sealed.plaintext_digest.value
        )
    except Exception as exc:
        raise DecryptFailure("wrong key or tampered ciphertext") from exc
    doc = canonical_decode(plaintext)
    if doc_digest(doc) != sealed.plaintext_digest:
        raise DecryptFailure("plaintext digest mismatch")
    if sealed.payload_type == PAYLOAD_RECORD:
        return DataRecord.from_doc(doc)
    return InferenceOutput.from_doc(doc)


# --- chain ------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Payload:
    kind: str
    record: DataRecord | None = None
    output: InferenceOutput | None = None
    sealed: SealedPayload | None = None

    def __post_init__(self):
        populated = {
            PAYLOAD_RECORD: self.record,
            PAYLOAD_OUTPUT: self.output,
            PAYLOAD_SEALED: self.sealed,
        }
        if self.kind not in populated or populated[self.kind] is None:
            raise ParseError(f"payload kind {self.kind!r} does not match its content")
        if sum(v is not None for v in populated.values()) != 1:
            raise ParseError("payload must carry exactly one variant")

    @property
    def digest(self) -> Digest:
        if self.kind == PAYLOAD_RECORD:
            return record_digest(self.record)
        if self.kind == PAYLOAD_OUTPUT:
            return doc_digest(self.output.to_doc())
        return self.sealed.plaintext_digest

    @property
    def effective_type(self) -> str:
        """record or output, looking through sealing."""
        if self.kind == PAYLOAD_SEALED:
            return self.sealed.payload_type
        return self.kind

    def to_doc(self) -> Doc:
        if self.kind == PAYLOAD_RECORD:
            return {"kind": PAYLOAD_RECORD, "record": self.record.to_doc()}
        if self.kind == PAYLOAD_OUTPUT:
            return {"kind": PAYLOAD_OUTPUT, "output": self.output.to_doc()}
        return {"kind": PAYLOAD_SEALED, "sealed": self.sealed.to_doc()}

    @classmethod
    def from_doc(cls, doc: Doc) -> "Payload":
        if not isinstance(doc, dict):
            raise ParseError("payload must be an object")
        kind = doc.get("kind")
        try:
            require_keys(doc, frozenset({"kind", kind if isinstance(kind, str) else "kind"}))
        except NonCanonicalValue as exc:
            raise ParseError(str(exc)) from exc
        try:
            if kind == PAYLOAD_RECORD:
                return cls(kind=kind, record=DataRecord.from_doc(doc["record"]))
            if kind == PAYLOAD_OUTPUT:
                return cls(kind=kind, output=InferenceOutput.from_doc(doc["output"]))
            if kind == PAYLOAD_SEALED:
                return cls(kind=kind, sealed=SealedPayload.from_doc(doc["sealed"]))
        except (KeyError, NonCanonicalValue) as exc:
            raise ParseError(f"malformed payload: {exc}") from exc
        raise ParseError(f"unknown payload kind: {kind!r}")


@dataclasses.dataclass(frozen=True)
class PropChain:
    attestation: SourceAttestation
    filter_specs: tuple[FilterSpec, ...]
    filter_proofs: tuple[FilterProof, ...]
    inference_proof: InferenceProof | None
    payload: Payload
    created_at: int

    def __post_init__(self):
        object.__setattr__(self, "filter_specs", tuple(self.filter_specs))
        object.__setattr__(self, "filter_proofs", tuple(self.filter_proofs))

    def canonical_doc(self) -> Doc:
        return {
            "attestation": self.attestation.to_doc(),
            "filter_proofs": [p.to_doc() for p in self.filter_proofs],
            "filter_specs": [s.to_doc() for s in self.filter_specs],
            "inference_proof": self.inference_proof.to_doc() if self.inference_proof else None,
            "payload": self.payload.to_doc(),
        }

    def canonical_bytes(self) -> bytes:
        return canonical_encode(self.canonical_doc())

    def to_doc(self) -> Doc:
        doc = self.canonical_doc()
        doc["created_at"] = self.created_at
        doc["type"] = "prop-chain"
        doc["v"] = 1
        return doc

    def export(self) -> bytes:
        return export_json(self.to_doc())

    _CANONICAL_KEYS = frozenset(
        {"attestation", "filter_proofs", "filter_specs", "inference_proof", "payload"}
    )
    _EXPORT_KEYS = frozenset({"created_at", "type", "v"})

    @classmethod
    def from_doc(cls, doc: Doc) -> "PropChain":
        if not isinstance(doc, dict):
            raise ParseError("chain must be an object")
        keys = set(doc.keys())
        if keys != cls._CANONICAL_KEYS and keys != (cls._CANONICAL_KEYS | cls._EXPORT_KEYS):
            raise ParseError(f"chain keys {sorted(keys)} do not match the schema")
        try:
            inference_doc = doc["inference_proof"]
            return cls(
                attestation=SourceAttestation.from_doc(doc["attestation"]),
                filter_specs=tuple(FilterSpec.from_doc(s) for s in doc["filter_specs"]),
                filter_proofs=tuple(FilterProof.from_doc(p) for p in doc["filter_proofs"]),
                inference_proof=InferenceProof.from_doc(inference_doc) if inference_doc else None,
                payload=Payload.from_doc(doc["payload"]),
                created_at=doc.get("created_at", 0),
            )
        except ParseError:
            raise
        except Exception as exc:
            raise ParseError(f"malformed chain: {exc}") from exc

    @classmethod
    def from_canonical_bytes(cls, data: bytes, created_at: int = 0) -> "PropChain":
        try:
            doc = canonical_decode(data)
        except NonCanonicalValue as exc:
            raise ParseError(f"chain bytes are not canonical: {exc}") from exc
        chain = cls.from_doc(doc)
        return dataclasses.replace(chain, created_at=created_at)

    @classmethod
    def from_json_bytes(cls, data: bytes) -> "PropChain":
        try:
            doc = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise ParseError(f"chain JSON does not parse: {exc}") from exc
        return cls.from_doc(doc)


# --- policy ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ModelRequirement:
    kind: str
    pinned_digest: Digest | None = None
    service_id: str | None = None
    trusted_executors: tuple[KeyIdentity, ...] = ()
    committee: CommitteeConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "trusted_executors", tuple(self.trusted_executors))
        if self.kind not in (REQUIRE_NONE, REQUIRE_EXACT, REQUIRE_SERVICE_REF, REQUIRE_COMMITTEE):
            raise ParseError(f"unknown model requirement: {self.kind!r}")
        if self.kind == REQUIRE_EXACT and self.pinned_digest is None:
            raise ParseError("exact requirement needs a pinned digest")
        if self.kind == REQUIRE_SERVICE_REF and (self.service_id is None or not self.trusted_executors):
            raise ParseError("service-ref requirement needs a service id and trusted executors")
        if self.kind == REQUIRE_COMMITTEE and (self.committee is None or self.pinned_digest is None):
            raise ParseError("committee requirement needs a committee config and pinned digest")

    def to_doc(self) -> Doc:
        doc: dict = {"kind": self.kind}
        if self.pinned_digest is not None:
            doc["pinned_digest"] = self.pinned_digest.hex
        if self.service_id is not None:
            doc["service_id"] = self.service_id
        if self.trusted_executors:
            doc["trusted_executors"] = [i.to_doc() for i in self.trusted_executors]
        if self.committee is not None:
            doc["committee"] = self.committee.to_doc()
        return doc

    @classmethod
    def from_doc(cls, doc: Doc) -> "ModelRequirement":
        if not isinstance(doc, dict):
            raise ParseError("model requirement must be an object")
        try:
            return cls(
                kind=doc["kind"],
                pinned_digest=Digest.from_hex(doc["pinned_digest"]) if "pinned_digest" in doc else None,
                service_id=doc.get("service_id"),
                trusted_executors=tuple(
                    KeyIdentity.from_doc(i) for i in doc.get("trusted_executors", [])
                ),
                committee=CommitteeConfig.from_doc(doc["committee"]) if "committee" in doc else None,
            )
        except (KeyError, TypeError, NonCanonicalValue, UnknownKey) as exc:
            raise ParseError(f"malformed model requirement: {exc}") from exc


@dataclasses.dataclass(frozen=True)
class VerifierPolicy:
    trusted_attestors: tuple[KeyIdentity, ...]
    trusted_sources: tuple[str, ...]
    filter_whitelist: tuple[Digest, ...]
    required_record_type: str
    model_requirement: ModelRequirement
    max_age_seconds: int
    delivery: str = DELIVERY_ANY

    def __post_init__(self):
        object.__setattr__(self, "trusted_attestors", tuple(self.trusted_attestors))
        object.__setattr__(self, "trusted_sources", tuple(self.trusted_sources))
        object.__setattr__(self, "filter_whitelist", tuple(self.filter_whitelist))
        if self.delivery not in (DELIVERY_PLAINTEXT, DELIVERY_SEALED, DELIVERY_ANY):
            raise ParseError(f"unknown delivery requirement: {self.delivery!r}")

    def to_doc(self) -> Doc:
        return {
            "delivery": self.delivery,
            "filter_whitelist": [d.hex for d in self.filter_whitelist],
            "max_age_seconds": self.max_age_seconds,
            "model_requirement": self.model_requirement.to_doc(),
            "required_record_type": self.required_record_type,
            "trusted_attestors": [i.to_doc() for i in self.trusted_attestors],
            "trusted_sources": list(self.trusted_sources),
            "type": "verifier-policy",
            "v": 1,
        }

    @classmethod
    def from_doc(cls, doc: Doc) -> "VerifierPolicy":
        if not isinstance(doc, dict):
            raise ParseError("policy must be an object")
        try:
            return cls(
                trusted_attestors=tuple(KeyIdentity.from_doc(i) for i in doc["trusted_attestors"]),
                trusted_sources=tuple(doc["trusted_sources"]),
                filter_whitelist=tuple(Digest.from_hex(d) for d in doc["filter_whitelist"]),
                required_record_type=doc["required_record_type"],
                model_requirement=ModelRequirement.from_doc(doc["model_requirement"]),
                max_age_seconds=doc["max_age_seconds"],
                delivery=doc.get("delivery", DELIVERY_ANY),
            )
        except (KeyError, TypeError, NonCanonicalValue, UnknownKey) as exc:
            raise ParseError(f"malformed policy: {exc}") from exc


# --- report --------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Check:
    check_id: str
    ok: bool
    reason: str

    def to_doc(self) -> Doc:
        return {"check_id": self.check_id, "ok": self.ok, "reason": self.reason}


@dataclasses.dataclass(frozen=True)
class VerificationReport:
    verdict: bool
    checks: tuple[Check, ...]
    verified_at: int

    def failed_checks(self) -> list[Check]:
        return [c for c in self.checks if not c.ok]

    def reason_codes(self) -> list[str]:
        return [c.reason for c in self.checks if not c.ok]

    def to_doc(self) -> Doc:
        return {
            "checks": [c.to_doc() for c in self.checks],
            "type": "verification-report",
            "v": REPORT_SCHEMA,
            "verdict": "pass" if self.verdict else "fail",
            "verified_at": self.verified_at,
        }

    @classmethod
    def from_doc(cls, doc: Doc) -> "VerificationReport":
        if not isinstance(doc, dict) or doc.get("type") != "verification-report":
            raise ParseError("not a verification report")
        try:
            checks = tuple(
                Check(check_id=c["check_id"], ok=bool(c["ok"]), reason=c["reason"])
                for c in doc["checks"]
            )
            return cls(
                verdict=doc["verdict"] == "pass",
                checks=checks,
                verified_at=doc["verified_at"],
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed report: {exc}") from exc


def report_export(report: VerificationReport) -> bytes:
    """Lossless, schema-versioned JSON export."""
    return export_json(report.to_doc())


def report_import(data: bytes) -> VerificationReport:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise ParseError(f"report JSON does not parse: {exc}") from exc
    return VerificationReport.from_doc(doc)


# --- verification ----------------------------------------------------------------------

CHECK_PARSE = "chain-parse"
CHECK_ATT_WELLFORMED = "attestation-wellformed"
CHECK_ATT_SIGNATURE = "attestation-signature"
CHECK_ATT_TRUSTED = "attestation-signer-trusted"
CHECK_SOURCE_TRUSTED = "source-trusted"
CHECK_RECORD_TYPE = "record-type"
CHECK_FILTER_WHITELIST = "filter-whitelist"
CHECK_FILTER_PROOFS = "filter-proofs"
CHECK_LINKAGE = "linkage"
CHECK_MODEL = "model-requirement"
CHECK_FRESHNESS = "freshness"
CHECK_DELIVERY = "delivery-mode"
CHECK_PAYLOAD = "payload-linkage"

ALL_CHECKS = (
    CHECK_PARSE,
    CHECK_ATT_WELLFORMED,
    CHECK_ATT_SIGNATURE,
    CHECK_ATT_TRUSTED,
    CHECK_SOURCE_TRUSTED,
    CHECK_RECORD_TYPE,
    CHECK_FILTER_WHITELIST,
    CHECK_FILTER_PROOFS,
    CHECK_LINKAGE,
    CHECK_MODEL,
    CHECK_FRESHNESS,
    CHECK_DELIVERY,
    CHECK_PAYLOAD,
)

REASON_OK = "ok"
REASON_MALFORMED = "Malformed"
REASON_BAD_SIGNATURE = "BadSignature"
REASON_UNTRUSTED_SIGNER = "UntrustedSigner"
REASON_SOURCE_NOT_TRUSTED = "SourceNotTrusted"
REASON_RECORD_TYPE = "RecordTypeMismatch"
REASON_NOT_WHITELISTED = "FilterNotWhitelisted"
REASON_BAD_FILTER_PROOF = "BadFilterProof"
REASON_LINKAGE = "LinkageMismatch"
REASON_MISSING_INFERENCE = "MissingInferenceProof"
REASON_UNEXPECTED_INFERENCE = "UnexpectedInferenceProof"
REASON_PIN_MISMATCH = "PinMismatch"
REASON_UNTRUSTED_EXECUTOR = "UntrustedExecutor"
REASON_STALE = "StaleAttestation"
REASON_FUTURE = "FutureAttestation"
REASON_DELIVERY = "DeliveryModeMismatch"
REASON_PAYLOAD_TYPE = "PayloadTypeMismatch"
REASON_PAYLOAD_DIGEST = "PayloadDigestMismatch"


def _attestation_wellformed(att: SourceAttestation) -> bool:
    from .attestor import request_commitment

    if att.mode not in _MODE_ROLE:
        return False
    if att.attestor_identity.role != _MODE_ROLE[att.mode]:
        return False
    if not isinstance(att.issued_at, int) or att.issued_at <= 0:
        return False
    expected = doc_digest(
        {
            "credential_digest": att.credential_digest.hex,
            "record_type": att.record_type,
            "source_id": att.source_id,
        }
    )
    return expected == att.request_digest


def _check_model(chain: PropChain, requirement: ModelRequirement) -> str:
    proof = chain.inference_proof
    if requirement.kind == REQUIRE_NONE:
        return REASON_UNEXPECTED_INFERENCE if proof is not None else REASON_OK
    if proof is None:
        return REASON_MISSING_INFERENCE
    if requirement.kind == REQUIRE_EXACT:
        if proof.pinned_digest != requirement.pinned_digest:
            return REASON_PIN_MISMATCH
        signer = verify_single_signature(proof)
        if signer is None or signer.role != "executor":
            return REASON_BAD_SIGNATURE
        return REASON_OK
    if requirement.kind == REQUIRE_SERVICE_REF:
        expected = service_ref(requirement.service_id).pinned_digest
        if proof.pinned_digest != expected:
            return REASON_PIN_MISMATCH
        signer = verify_single_signature(proof)
        if signer is None:
            return REASON_BAD_SIGNATURE
        trusted = {i.fingerprint for i in requirement.trusted_executors}
        if signer.fingerprint not in trusted:
            return REASON_UNTRUSTED_EXECUTOR
        return REASON_OK
    # committee
    return verify_committee_proof(proof, requirement.committee, requirement.pinned_digest)


def verify_chain(chain: PropChain, policy: VerifierPolicy, now: int | None = None) -> VerificationReport:
    """Run the full policy over a chain. Never raises; all checks always run."""
    now = now if now is not None else now_s()
    att = chain.attestation
    checks: list[Check] = [Check(CHECK_PARSE, True, REASON_OK)]

    def add(check_id: str, ok: bool, reason: str) -> None:
        checks.append(Check(check_id, ok, reason if not ok else REASON_OK))

    wellformed = _attestation_wellformed(att)
    add(CHECK_ATT_WELLFORMED, wellformed, REASON_MALFORMED)

    sig_ok = wellformed and verify_sig(att.attestor_identity, att.signed_message(), att.signature)
    add(CHECK_ATT_SIGNATURE, sig_ok, REASON_BAD_SIGNATURE)

    trusted_fps = {i.fingerprint for i in policy.trusted_attestors}
    add(CHECK_ATT_TRUSTED, att.attestor_identity.fingerprint in trusted_fps, REASON_UNTRUSTED_SIGNER)

    add(CHECK_SOURCE_TRUSTED, att.source_id in policy.trusted_sources, REASON_SOURCE_NOT_TRUSTED)

    add(CHECK_RECORD_TYPE, att.record_type == policy.required_record_type, REASON_RECORD_TYPE)

    whitelist = set(policy.filter_whitelist)
    add(
        CHECK_FILTER_WHITELIST,
        all(spec.spec_digest in whitelist for spec in chain.filter_specs),
        REASON_NOT_WHITELISTED,
    )

    proofs_ok = len(chain.filter_proofs) == len(chain.filter_specs) and all(
        verify_filter_proof(proof, spec)
        for proof, spec in zip(chain.filter_proofs, chain.filter_specs)
    )
    add(CHECK_FILTER_PROOFS, proofs_ok, REASON_BAD_FILTER_PROOF)

    linkage_ok = True
    cursor = att.content_digest
    for proof in chain.filter_proofs:
        if proof.input_digest != cursor:
            linkage_ok = False
        cursor = proof.output_digest
    if chain.inference_proof is not None:
        if chain.inference_proof.input_digest != cursor:
            linkage_ok = False
        cursor = chain.inference_proof.output_digest
    add(CHECK_LINKAGE, linkage_ok, REASON_LINKAGE)
    terminal = cursor

    add(CHECK_MODEL, *_split(_check_model(chain, policy.model_requirement)))

    age = now - att.issued_at
    if age < 0:
        add(CHECK_FRESHNESS, False, REASON_FUTURE)
    else:
        add(CHECK_FRESHNESS, age <= policy.max_age_seconds, REASON_STALE)

    delivered_sealed = chain.payload.kind == PAYLOAD_SEALED
    delivery_ok = (
        policy.delivery == DELIVERY_ANY
        or (policy.delivery == DELIVERY_SEALED and delivered_sealed)
        or (policy.delivery == DELIVERY_PLAINTEXT and not delivered_sealed)
    )
    add(CHECK_DELIVERY, delivery_ok, REASON_DELIVERY)

    expected_type = PAYLOAD_OUTPUT if chain.inference_proof is not None else PAYLOAD_RECORD
    if chain.payload.effective_type != expected_type:
        add(CHECK_PAYLOAD, False, REASON_PAYLOAD_TYPE)
    else:
        add(CHECK_PAYLOAD, chain.payload.digest == terminal, REASON_PAYLOAD_DIGEST)

    verdict = all(c.ok for c in checks)
    return VerificationReport(verdict=verdict, checks=tuple(checks), verified_at=now)


def _split(reason: str) -> tuple[bool, str]:
    return reason == REASON_OK, reason


def verify_chain_bytes(data: bytes, policy: VerifierPolicy, now: int | None = None) -> VerificationReport:
    """Verify a chain from its canonical encoding; parse failures fail the report."""
    now = now if now is not None else now_s()
    try:
        chain = PropChain.from_canonical_bytes(data)
    except ParseError:
        return VerificationReport(
            verdict=False,
            checks=(Check(CHECK_PARSE, False, REASON_MALFORMED),),
            verified_at=now,
        )
    return verify_chain(chain, policy, now)
