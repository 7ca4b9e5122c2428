"""User-side preprocessing with provable application.

Filters are pure functions of (spec, input record). Applying one yields a
new record with transformed content; attesting one yields a signed binding
of input digest to output digest under the disclosed spec digest, so a
consumer can whitelist exactly which transforms it accepts without ever
seeing the input.

Paths are dot-separated object keys; an all-digit segment indexes into an
array when the traversal stands at one. Redaction of a missing path is a
no-op and selection of a missing path just leaves the field absent, but the
numeric kinds (bucketize, noise) fail loudly on missing or mistyped paths:
dropping a privacy transform silently is safe, silently skipping a
semantics-bearing one is not.

The noise kind adds a discrete-Laplace perturbation whose randomness is
derived from the input and spec digests, so any party holding the input can
replay and attest the exact output. That determinism deliberately trades
away the secrecy a privacy accountant would demand; see README caveats.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import threading

from .core import (
    DOMAIN_FILTER,
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
    sign_payload,
    verify_payload,
)
from .errors import (
    NonCanonicalValue,
    OutputMismatch,
    ParamSchemaMismatch,
    PathMissing,
    PathTypeMismatch,
    UnknownKey,
)

REDACTION_MARKER = "␀REDACTED"

FILTER_KINDS = ("identity", "redact", "select", "bucketize", "noise")


def parse_path(path: str) -> list[str]:
    if not path or not isinstance(path, str):
        raise ParamSchemaMismatch(f"bad path: {path!r}")
    segments = path.split(".")
    if any(seg == "" for seg in segments):
        raise ParamSchemaMismatch(f"empty segment in path: {path!r}")
    return segments


def _resolve_parent(content: Doc, segments: list[str]):
    """Walk to the container holding the last segment.

    Returns (container, key_or_index) or None when the path does not resolve.
    Raises PathTypeMismatch when a segment hits a scalar.
    """
    node = content
    for i, seg in enumerate(segments):
        last = i == len(segments) - 1
        if isinstance(node, dict):
            if seg not in node:
                return None
            if last:
                return node, seg
            node = node[seg]
        elif isinstance(node, list):
            if not seg.isdigit():
                return None
            idx = int(seg)
            if idx >= len(node):
                return None
            if last:
                return node, idx
            node = node[idx]
        else:
            raise PathTypeMismatch(f"path segment {seg!r} traverses a scalar")
    return None


@dataclasses.dataclass(frozen=True)
class FilterSpec:
    """Public description of one transform: name@version, kind, parameters."""

    filter_id: str
    kind: str
    params: Doc

    def __post_init__(self):
        _validate_params(self.kind, self.params)
        if "@" not in self.filter_id:
            raise ParamSchemaMismatch(f"filter_id must be name@version: {self.filter_id!r}")

    @property
    def spec_digest(self) -> Digest:
        return doc_digest(self.to_doc())

    def to_doc(self) -> Doc:
        return {"filter_id": self.filter_id, "kind": self.kind, "params": self.params}

    @classmethod
    def from_doc(cls, doc: Doc) -> "FilterSpec":
        try:
            require_keys(doc, frozenset({"filter_id", "kind", "params"}))
        except NonCanonicalValue as exc:
            raise ParamSchemaMismatch(str(exc)) from exc
        try:
            return cls(filter_id=doc["filter_id"], kind=doc["kind"], params=doc["params"])
        except KeyError as exc:
            raise ParamSchemaMismatch(f"filter spec missing field {exc}") from exc


def _require_path_list(params: Doc, kind: str) -> list[str]:
    if not isinstance(params, dict) or set(params.keys()) != {"paths"}:
        raise ParamSchemaMismatch(f"{kind} expects params {{paths: [...]}}")
    paths = params["paths"]
    if not isinstance(paths, list) or not paths or not all(isinstance(p, str) for p in paths):
        raise ParamSchemaMismatch(f"{kind} paths must be a non-empty list of strings")
    for p in paths:
        parse_path(p)
    return paths


def _validate_params(kind: str, params: Doc) -> None:
    if kind == "identity":
        if params != {}:
            raise ParamSchemaMismatch("identity takes no parameters")
    elif kind == "redact":
        _require_path_list(params, "redact")
    elif kind == "select":
        paths = _require_path_list(params, "select")
        for p in paths:
            if any(seg.isdigit() for seg in parse_path(p)):
                raise ParamSchemaMismatch("select paths may not contain array indices")
    elif kind == "bucketize":
        if not isinstance(params, dict) or set(params.keys()) != {"boundaries", "path"}:
            raise ParamSchemaMismatch("bucketize expects params {path, boundaries}")
        parse_path(params["path"])
        bounds = params["boundaries"]
        if (
            not isinstance(bounds, list)
            or not bounds
            or not all(isinstance(b, int) and not isinstance(b, bool) for b in bounds)
            or any(a >= b for a, b in zip(bounds, bounds[1:]))
        ):
            raise ParamSchemaMismatch("boundaries must be a strictly increasing list of integers")
    elif kind == "noise":
        if not isinstance(params, dict) or set(params.keys()) != {"path", "scale"}:
            raise ParamSchemaMismatch("noise expects params {path, scale}")
        parse_path(params["path"])
        scale = params["scale"]
        if not isinstance(scale, int) or isinstance(scale, bool) or scale <= 0:
            raise ParamSchemaMismatch("scale must be a positive integer")
    else:
        raise ParamSchemaMismatch(f"unknown filter kind: {kind!r}")


def _get_int_leaf(content: Doc, path: str, kind: str) -> tuple[object, object, int]:
    located = _resolve_parent(content, parse_path(path))
    if located is None:
        raise PathMissing(f"{kind} path {path!r} does not resolve")
    container, key = located
    value = container[key]
    if not isinstance(value, int) or isinstance(value, bool):
        raise PathTypeMismatch(f"{kind} path {path!r} holds {type(value).__name__}, not an integer")
    return container, key, value


def _apply_redact(content: Doc, paths: list[str]) -> Doc:
    for path in paths:
        located = _resolve_parent(content, parse_path(path))
        if located is None:
            continue
        container, key = located
        container[key] = REDACTION_MARKER
    return content


def _apply_select(original: Doc, paths: list[str]) -> Doc:
    if not isinstance(original, dict):
        raise PathTypeMismatch("select requires object content at the root")
    out: dict = {}
    for path in paths:
        segments = parse_path(path)
        node = original
        for seg in segments[:-1]:
            if not isinstance(node, dict) or seg not in node:
                node = None
                break
            node = node[seg]
        if not isinstance(node, dict) or segments[-1] not in node:
            continue
        cursor = out
        for seg in segments[:-1]:
            cursor = cursor.setdefault(seg, {})
            if not isinstance(cursor, dict):
                raise PathTypeMismatch(f"select paths conflict at segment {seg!r}")
        cursor[segments[-1]] = copy.deepcopy(node[segments[-1]])
    return out


def bucket_index(value: int, boundaries: list[int]) -> int:
    """Index of the half-open bucket holding value: count of boundaries <= value."""
    index = 0
    for b in boundaries:
        if value >= b:
            index += 1
    return index


def apply_filter(spec: FilterSpec, record: DataRecord) -> DataRecord:
    """Transform a record's content; metadata fields pass through unchanged."""
    if spec.kind == "identity":
        return record
    content = copy.deepcopy(record.content)
    if spec.kind == "redact":
        content = _apply_redact(content, spec.params["paths"])
    elif spec.kind == "select":
        content = _apply_select(content, spec.params["paths"])
    elif spec.kind == "bucketize":
        container, key, value = _get_int_leaf(content, spec.params["path"], "bucketize")
        container[key] = bucket_index(value, spec.params["boundaries"])
    elif spec.kind == "noise":
        container, key, value = _get_int_leaf(content, spec.params["path"], "noise")
        seed = noise_seed(record_digest(record), spec.spec_digest)
        container[key] = value + sample_discrete_laplace(spec.params["scale"], seed)
    return dataclasses.replace(record, content=content)


@dataclasses.dataclass(frozen=True)
class FilterProof:
    """Signed binding of digest(input) -> digest(output) under a spec digest."""

    spec_digest: Digest
    input_digest: Digest
    output_digest: Digest
    executor_identity: KeyIdentity
    signature: bytes

    def payload_doc(self) -> Doc:
        return {
            "input_digest": self.input_digest.hex,
            "output_digest": self.output_digest.hex,
            "spec_digest": self.spec_digest.hex,
        }

    def to_doc(self) -> Doc:
        return {
            "executor_identity": self.executor_identity.to_doc(),
            "input_digest": self.input_digest.hex,
            "output_digest": self.output_digest.hex,
            "signature": self.signature.hex(),
            "spec_digest": self.spec_digest.hex,
        }

    @classmethod
    def from_doc(cls, doc: Doc) -> "FilterProof":
        require_keys(
            doc,
            frozenset(
                {"executor_identity", "input_digest", "output_digest", "signature", "spec_digest"}
            ),
        )
        try:
            return cls(
                spec_digest=Digest.from_hex(doc["spec_digest"]),
                input_digest=Digest.from_hex(doc["input_digest"]),
                output_digest=Digest.from_hex(doc["output_digest"]),
                executor_identity=KeyIdentity.from_doc(doc["executor_identity"]),
                signature=hex_to_bytes(doc["signature"]),
            )
        except (KeyError, TypeError, ValueError, UnknownKey) as exc:
            raise NonCanonicalValue(f"malformed filter proof: {exc}") from exc


_sign_lock = threading.Lock()


def attest_filter(
    executor_secret: SecretKey, spec: FilterSpec, input_record: DataRecord, output_record: DataRecord
) -> FilterProof:
    """Sign the input->output binding after recomputing the transform."""
    recomputed = apply_filter(spec, input_record)
    if recomputed.to_doc() != output_record.to_doc():
        raise OutputMismatch("supplied output is not the transform of the input under this spec")
    proof = FilterProof(
        spec_digest=spec.spec_digest,
        input_digest=record_digest(input_record),
        output_digest=record_digest(output_record),
        executor_identity=executor_secret.identity,
        signature=b"",
    )
    with _sign_lock:
        signature = sign_payload(executor_secret, DOMAIN_FILTER, proof.payload_doc())
    return dataclasses.replace(proof, signature=signature)


def verify_filter_proof(proof: FilterProof, expected_spec: FilterSpec) -> bool:
    """Signature and spec binding check; linkage is the chain verifier's job."""
    if proof.executor_identity.role != "executor":
        return False
    if proof.spec_digest != expected_spec.spec_digest:
        return False
    return verify_payload(proof.executor_identity, DOMAIN_FILTER, proof.payload_doc(), proof.signature)


# --- deterministic discrete Laplace -------------------------------------------
#
# Exact integer sampling in the style of Canonne, Kamath, and Steinke: every
# random choice is driven by a SHA-256 counter stream expanded from an
# 8-byte seed, so the sample is reproducible on any platform, with no
# floating point anywhere.


def noise_seed(input_digest: Digest, spec_digest: Digest) -> bytes:
    """First 8 bytes of sha256(input digest || spec digest)."""
    return digest(input_digest.value + spec_digest.value).value[:8]


class _BitStream:
    """Deterministic bit source: sha256(seed || counter) blocks."""

    def __init__(self, seed: bytes):
        self._seed = seed
        self._counter = 0
        self._bits = 0
        self._nbits = 0

    def _refill(self) -> None:
        block = hashlib.sha256(self._seed + self._counter.to_bytes(8, "big")).digest()
        self._counter += 1
        self._bits = int.from_bytes(block, "big")
        self._nbits = 256

    def take_bit(self) -> int:
        if self._nbits == 0:
            self._refill()
        self._nbits -= 1
        return (self._bits >> self._nbits) & 1

    def take_bits(self, n: int) -> int:
        value = 0
        for _ in range(n):
            value = (value << 1) | self.take_bit()
        return value

    def uniform_below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection from the next power of two."""
        if n <= 1:
            return 0
        width = (n - 1).bit_length()
        while True:
            value = self.take_bits(width)
            if value < n:
                return value


def _bernoulli(num: int, den: int, bits: _BitStream) -> bool:
    """True with probability num/den."""
    return bits.uniform_below(den) < num


def _bernoulli_exp_frac(num: int, den: int, bits: _BitStream) -> bool:
    """True with probability exp(-num/den), for num <= den."""
    k = 1
    while _bernoulli(num, den * k, bits):
        k += 1
    return k % 2 == 1


def _bernoulli_exp(num: int, den: int, bits: _BitStream) -> bool:
    """True with probability exp(-num/den), any non-negative ratio."""
    while num > den:
        if not _bernoulli_exp_frac(1, 1, bits):
            return False
        num -= den
    return _bernoulli_exp_frac(num, den, bits)


def sample_discrete_laplace(scale: int, seed: bytes) -> int:
    """One draw from the two-sided geometric with pmf proportional to exp(-|k|/scale)."""
    if scale <= 0:
        raise ParamSchemaMismatch("scale must be a positive integer")
    bits = _BitStream(seed)
    while True:
        u = bits.uniform_below(scale)
        if not _bernoulli_exp(u, scale, bits):
            continue
        v = 0
        while _bernoulli_exp(1, 1, bits):
            v += 1
        magnitude = u + scale * v
        negative = bits.take_bit() == 1
        if negative and magnitude == 0:
            continue
        return -magnitude if negative else magnitude
