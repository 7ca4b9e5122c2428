"""Privacy-preserving-oracle stand-in.

The attestor is an honest-by-construction relay process holding a signing
key: a simulation of the trust boundary a TEE or cryptographic oracle would
provide in deployment, not of the enclave machinery itself. It relays a
client<->source session over the framed protocol, commits to the transcript
it observed, and signs a SourceAttestation binding the session commitment
to the digest of the fetched record.

Two attestation modes exist:

* ``oracle-proxy``  — the attestor signs the full attestation payload. The
  source runs unmodified and never learns the attestor exists.
* ``source-signed`` — the source itself signed the record digest (the
  infrastructure-modification mode); the attestation repackages that
  signature. Only the content digest is covered by it: the request
  commitment fields are checked for internal consistency at verification,
  and ``issued_at`` is copied from the record's own fetch timestamp.

The attestation never contains the bearer credential; it appears only as a
digest inside the request commitment.
"""

from __future__ import annotations

import dataclasses
import socket
import threading
import time
from typing import Callable, Iterable

from . import wire
from .core import (
    DOMAIN_ATTESTATION,
    DOMAIN_SOURCE_RECORD,
    DataRecord,
    Digest,
    Doc,
    KeyIdentity,
    SecretKey,
    digest,
    doc_digest,
    hex_to_bytes,
    record_digest,
    require_keys,
    sign,
    verify_sig,
)
from .errors import (
    AttestorUnavailable,
    BadSourceSignature,
    BindFailure,
    ConnectFailure,
    MalformedFrame,
    MissingSourceSignature,
    NonCanonicalValue,
    UnknownKey,
)
from .source import FetchRequest, FetchResponse, SourceDescriptor, fetch

MODE_ORACLE_PROXY = "oracle-proxy"
MODE_SOURCE_SIGNED = "source-signed"

VERIFY_OK = "ok"
VERIFY_UNTRUSTED_SIGNER = "UntrustedSigner"
VERIFY_BAD_SIGNATURE = "BadSignature"
VERIFY_MALFORMED = "Malformed"

_MODE_ROLE = {MODE_ORACLE_PROXY: "attestor", MODE_SOURCE_SIGNED: "source"}


def request_commitment(source_id: str, record_type: str, credential: str) -> tuple[Digest, Digest]:
    """(credential digest, request digest) for a fetch session.

    The request digest commits to what was asked of which source without
    revealing the credential.
    """
    credential_digest = digest(credential.encode("utf-8"))
    request_digest = doc_digest(
        {
            "credential_digest": credential_digest.hex,
            "record_type": record_type,
            "source_id": source_id,
        }
    )
    return credential_digest, request_digest


@dataclasses.dataclass(frozen=True)
class SourceAttestation:
    mode: str
    attestor_identity: KeyIdentity
    source_id: str
    record_type: str
    credential_digest: Digest
    request_digest: Digest
    content_digest: Digest
    issued_at: int
    signature: bytes

    def payload_doc(self) -> Doc:
        return {
            "attestor_identity": self.attestor_identity.to_doc(),
            "content_digest": self.content_digest.hex,
            "credential_digest": self.credential_digest.hex,
            "issued_at": self.issued_at,
            "mode": self.mode,
            "record_type": self.record_type,
            "request_digest": self.request_digest.hex,
            "source_id": self.source_id,
        }

    def signed_message(self) -> bytes:
        if self.mode == MODE_SOURCE_SIGNED:
            return DOMAIN_SOURCE_RECORD + self.content_digest.value
        return DOMAIN_ATTESTATION + doc_digest(self.payload_doc()).value

    def to_doc(self) -> Doc:
        doc = self.payload_doc()
        doc["signature"] = self.signature.hex()
        return doc

    @classmethod
    def from_doc(cls, doc: Doc) -> "SourceAttestation":
        require_keys(
            doc,
            frozenset(
                {
                    "attestor_identity",
                    "content_digest",
                    "credential_digest",
                    "issued_at",
                    "mode",
                    "record_type",
                    "request_digest",
                    "signature",
                    "source_id",
                }
            ),
        )
        try:
            return cls(
                mode=doc["mode"],
                attestor_identity=KeyIdentity.from_doc(doc["attestor_identity"]),
                source_id=doc["source_id"],
                record_type=doc["record_type"],
                credential_digest=Digest.from_hex(doc["credential_digest"]),
                request_digest=Digest.from_hex(doc["request_digest"]),
                content_digest=Digest.from_hex(doc["content_digest"]),
                issued_at=doc["issued_at"],
                signature=hex_to_bytes(doc["signature"]),
            )
        except (KeyError, TypeError, ValueError, UnknownKey) as exc:
            raise NonCanonicalValue(f"malformed attestation: {exc}") from exc


def build_attestation(
    secret: SecretKey,
    source_id: str,
    request: FetchRequest,
    record: DataRecord,
    issued_at: int,
) -> SourceAttestation:
    """Sign an oracle-proxy attestation over an observed fetch."""
    credential_digest, req_digest = request_commitment(source_id, request.record_type, request.credential)
    att = SourceAttestation(
        mode=MODE_ORACLE_PROXY,
        attestor_identity=secret.identity,
        source_id=source_id,
        record_type=request.record_type,
        credential_digest=credential_digest,
        request_digest=req_digest,
        content_digest=record_digest(record),
        issued_at=issued_at,
        signature=b"",
    )
    signature = sign(secret, att.signed_message())
    return dataclasses.replace(att, signature=signature)


def wrap_source_signed(
    response: FetchResponse, source_identity: KeyIdentity, credential: str
) -> SourceAttestation:
    """Repackage a source's own record signature as an attestation."""
    if response.source_signature is None:
        raise MissingSourceSignature("response carries no source signature")
    record = response.record
    content_digest = record_digest(record)
    if not verify_sig(source_identity, DOMAIN_SOURCE_RECORD + content_digest.value, response.source_signature):
        raise BadSourceSignature("source signature does not verify under the source identity")
    credential_digest, req_digest = request_commitment(record.source_id, record.content_type, credential)
    return SourceAttestation(
        mode=MODE_SOURCE_SIGNED,
        attestor_identity=source_identity,
        source_id=record.source_id,
        record_type=record.content_type,
        credential_digest=credential_digest,
        request_digest=req_digest,
        content_digest=content_digest,
        issued_at=record.fetched_at,
        signature=response.source_signature,
    )


def verify_attestation(att: SourceAttestation, trust: Iterable[KeyIdentity]) -> str:
    """``ok`` or a reason code; never raises on malformed input."""
    try:
        if att.mode not in _MODE_ROLE:
            return VERIFY_MALFORMED
        if att.attestor_identity.role != _MODE_ROLE[att.mode]:
            return VERIFY_MALFORMED
        if not isinstance(att.issued_at, int) or att.issued_at <= 0:
            return VERIFY_MALFORMED
        expected_req = doc_digest(
            {
                "credential_digest": att.credential_digest.hex,
                "record_type": att.record_type,
                "source_id": att.source_id,
            }
        )
        if expected_req != att.request_digest:
            return VERIFY_MALFORMED
        if not verify_sig(att.attestor_identity, att.signed_message(), att.signature):
            return VERIFY_BAD_SIGNATURE
        trusted = {identity.fingerprint for identity in trust}
        if att.attestor_identity.fingerprint not in trusted:
            return VERIFY_UNTRUSTED_SIGNER
        return VERIFY_OK
    except Exception:
        return VERIFY_MALFORMED


class Attestor:
    """In-process attestor: relays fetches itself and signs what it saw."""

    def __init__(self, secret: SecretKey, clock: Callable[[], float] = time.time):
        if secret.role != "attestor":
            raise UnknownKey("attestor requires a key with the attestor role")
        self.secret = secret
        self.identity = secret.identity
        self._clock = clock
        self._sign_lock = threading.Lock()

    def attest_fetch(self, source: SourceDescriptor, request: FetchRequest) -> tuple[DataRecord, SourceAttestation]:
        """Fetch through the attestor and return the record with its attestation.

        Source-side errors (AuthDenied, NotFound, ...) propagate unchanged;
        the source cannot tell this session from a direct one.
        """
        response = fetch(source.host, source.port, request)
        record = response.record
        with self._sign_lock:
            att = build_attestation(self.secret, source.source_id, request, record, int(self._clock()))
        return record, att


class AttestorProxy:
    """Attestor as a local proxy process: clients direct a session at a
    configured source id, the proxy relays the frames verbatim, keeps a
    digest transcript, and appends a signed attestation frame.
    """

    def __init__(
        self,
        secret: SecretKey,
        sources: dict[str, tuple[str, int]],
        host: str = "127.0.0.1",
        port: int = 0,
        clock: Callable[[], float] = time.time,
    ):
        if secret.role != "attestor":
            raise UnknownKey("attestor requires a key with the attestor role")
        self.secret = secret
        self.identity = secret.identity
        self.sources = dict(sources)
        self._host = host
        self._port = port
        self._clock = clock
        self._sock: socket.socket | None = None
        self._thread: threading.Thread | None = None
        self._closed = threading.Event()
        self._sign_lock = threading.Lock()
        self._transcript_lock = threading.Lock()
        self.transcripts: list[list[dict]] = []

    @property
    def endpoint(self) -> tuple[str, int]:
        if self._sock is None:
            raise BindFailure("proxy not started")
        return self._sock.getsockname()[:2]

    def start(self) -> "AttestorProxy":
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((self._host, self._port))
        except OSError as exc:
            sock.close()
            raise BindFailure(f"cannot bind attestor proxy: {exc}") from exc
        sock.listen(16)
        self._sock = sock
        self._thread = threading.Thread(target=self._accept_loop, daemon=True, name="attestor-proxy")
        self._thread.start()
        return self

    def _accept_loop(self) -> None:
        assert self._sock is not None
        while not self._closed.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._relay_session, args=(conn,), daemon=True).start()

    def _relay_session(self, client: socket.socket) -> None:
        transcript: list[dict] = []

        def note(direction: str, payload: bytes) -> None:
            transcript.append({"dir": direction, "len": len(payload), "sha256": digest(payload).hex})

        with client:
            client.settimeout(10.0)
            try:
                init = wire.recv_doc(client)
            except (MalformedFrame, ConnectFailure):
                return
            if not isinstance(init, dict) or init.get("op") != "attest_init":
                self._send_error(client, wire.ERR_MALFORMED, "expected attest_init")
                return
            source_id = init.get("source_id")
            endpoint = self.sources.get(source_id) if isinstance(source_id, str) else None
            if endpoint is None:
                self._send_error(client, wire.ERR_UNKNOWN_SOURCE, f"no such source: {source_id!r}")
                return
            try:
                request_payload = wire.recv_frame(client)
            except (MalformedFrame, ConnectFailure):
                return
            if request_payload is None:
                return
            note("client->source", request_payload)
            try:
                upstream = wire.connect(*endpoint)
            except ConnectFailure as exc:
                self._send_error(client, wire.ERR_MALFORMED, f"source unreachable: {exc}")
                return
            with upstream:
                try:
                    wire.send_frame(upstream, request_payload)
                    response_payload = wire.recv_frame(upstream)
                except (MalformedFrame, ConnectFailure) as exc:
                    self._send_error(client, wire.ERR_MALFORMED, f"source relay failed: {exc}")
                    return
            if response_payload is None:
                self._send_error(client, wire.ERR_MALFORMED, "source closed without answering")
                return
            note("source->client", response_payload)
            try:
                wire.send_frame(client, response_payload)
            except (MalformedFrame, ConnectFailure):
                return
            with self._transcript_lock:
                self.transcripts.append(transcript)
            # Attest only sessions that produced a record.
            try:
                request_doc = wire.decode_frame(request_payload)
                response_doc = wire.decode_frame(response_payload)
                if not (isinstance(response_doc, dict) and response_doc.get("op") == "record"):
                    return
                request = FetchRequest(
                    subject_id=request_doc["subject_id"],
                    credential=request_doc["credential"],
                    record_type=request_doc["record_type"],
                )
                record = FetchResponse.from_doc(response_doc).record
            except Exception:
                self._send_error(client, wire.ERR_MALFORMED, "session not attestable")
                return
            with self._sign_lock:
                att = build_attestation(self.secret, source_id, request, record, int(self._clock()))
            try:
                wire.send_doc(client, {"attestation": att.to_doc(), "op": "attestation"})
            except (MalformedFrame, ConnectFailure):
                pass

    @staticmethod
    def _send_error(conn: socket.socket, code: str, message: str) -> None:
        try:
            wire.send_doc(conn, wire.error_doc(code, message))
        except Exception:
            pass

    def shutdown(self) -> None:
        if self._closed.is_set():
            return
        self._closed.set()
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._sock.close()
            except OSError:
                pass
        if self._thread is not None:
            self._thread.join(timeout=2.0)


def attest_via_proxy(
    proxy_host: str,
    proxy_port: int,
    source_id: str,
    request: FetchRequest,
    timeout: float = 5.0,
) -> tuple[DataRecord, SourceAttestation]:
    """Run a fetch session through a running attestor proxy."""
    try:
        sock = wire.connect(proxy_host, proxy_port, timeout=timeout)
    except ConnectFailure as exc:
        raise AttestorUnavailable(f"attestor proxy unreachable: {exc}") from exc
    with sock:
        wire.send_doc(sock, {"op": "attest_init", "source_id": source_id})
        wire.send_doc(sock, request.to_doc())
        response = wire.raise_for_error(wire.recv_doc(sock))
        record = FetchResponse.from_doc(response).record
        att_frame = wire.raise_for_error(wire.recv_doc(sock))
    if not (isinstance(att_frame, dict) and att_frame.get("op") == "attestation"):
        raise AttestorUnavailable("proxy did not return an attestation")
    att = SourceAttestation.from_doc(att_frame["attestation"])
    return record, att
