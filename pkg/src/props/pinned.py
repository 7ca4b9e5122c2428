"""Pinned model specification and deterministic fixed-point execution.

A pinned spec freezes everything that determines an inference: the
environment (feature paths, preprocessing, arithmetic and decision rules)
and the weights, by digest. Execution is Q32.32 saturating fixed point
with round-to-nearest-even multiplication, so independent executors on any
platform produce bit-identical outputs; the committee's exact-match voting
depends on that.

Two pinning kinds:

* ``Exact``      — env plus weights digest; anyone holding the weights can
  replicate the run.
* ``ServiceRef`` — an opaque service identifier. The proof binds "this
  service mapped this input to this output" while the environment and
  weights stay private.
"""

from __future__ import annotations

import dataclasses
import threading
from fractions import Fraction
from typing import Callable, Iterable

from . import kernels
from .core import (
    DOMAIN_INFERENCE,
    DataRecord,
    Digest,
    Doc,
    KeyIdentity,
    SecretKey,
    doc_digest,
    hex_to_bytes,
    now_s,
    require_keys,
    record_digest,
    sign_payload,
    verify_payload,
)
from .errors import (
    FeaturePathError,
    InexactValue,
    LengthMismatch,
    NonCanonicalValue,
    OutputMismatch,
    Overflow,
    UnknownKey,
    UnknownService,
    UnknownTransform,
    WeightsDigestMismatch,
)
from .filters import parse_path

ARITHMETIC_TAG = "q32.32-saturating"
TIE_RULE_TAG = "score>=threshold→approve"

KIND_EXACT = "Exact"
KIND_SERVICE_REF = "ServiceRef"

DECISION_APPROVE = "approve"
DECISION_DENY = "deny"

# Elementwise integer feature transforms available to environment descriptors.
PREPROCESSING_REGISTRY: dict[str, Callable[[int], int]] = {
    "clamp-nonneg@1": lambda v: v if v >= 0 else 0,
    "abs@1": abs,
}

Q_ONE = kernels.Q_ONE


def q_from_decimal(text: str) -> int:
    """Exact Q32.32 representation of a plain decimal string.

    Rejects anything that does not land exactly on the 2**-32 grid, so a
    pinned weight can never silently round.
    """
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise InexactValue(f"not a decimal number: {text!r}") from exc
    scaled = value * Q_ONE
    if scaled.denominator != 1:
        raise InexactValue(f"{text!r} is not exactly representable in Q32.32")
    rep = scaled.numerator
    if not (kernels.INT64_MIN <= rep <= kernels.INT64_MAX):
        raise InexactValue(f"{text!r} is outside the Q32.32 range")
    return rep


def q_to_decimal(rep: int) -> str:
    """Exact decimal string of a Q32.32 value (inverse of q_from_decimal)."""
    frac = Fraction(rep, Q_ONE)
    sign = "-" if frac < 0 else ""
    frac = abs(frac)
    whole, rem = divmod(frac.numerator, frac.denominator)
    if rem == 0:
        return f"{sign}{whole}"
    digits = []
    while rem:
        rem *= 10
        d, rem = divmod(rem, frac.denominator)
        digits.append(str(d))
    return f"{sign}{whole}." + "".join(digits)


@dataclasses.dataclass(frozen=True)
class EnvDescriptor:
    env_version: str
    feature_paths: tuple[str, ...]
    preprocessing: tuple[str, ...] = ()
    arithmetic: str = ARITHMETIC_TAG
    tie_rule: str = TIE_RULE_TAG

    def __post_init__(self):
        object.__setattr__(self, "feature_paths", tuple(self.feature_paths))
        object.__setattr__(self, "preprocessing", tuple(self.preprocessing))
        if self.arithmetic != ARITHMETIC_TAG:
            raise NonCanonicalValue(f"unsupported arithmetic tag: {self.arithmetic!r}")
        if self.tie_rule != TIE_RULE_TAG:
            raise NonCanonicalValue(f"unsupported tie rule tag: {self.tie_rule!r}")
        if not self.feature_paths:
            raise NonCanonicalValue("at least one feature path is required")
        for path in self.feature_paths:
            parse_path(path)
        for transform in self.preprocessing:
            if transform not in PREPROCESSING_REGISTRY:
                raise UnknownTransform(f"unknown preprocessing transform: {transform!r}")

    def to_doc(self) -> Doc:
        return {
            "arithmetic": self.arithmetic,
            "env_version": self.env_version,
            "feature_paths": list(self.feature_paths),
            "preprocessing": list(self.preprocessing),
            "tie_rule": self.tie_rule,
        }

    @classmethod
    def from_doc(cls, doc: Doc) -> "EnvDescriptor":
        if not isinstance(doc, dict):
            raise NonCanonicalValue("env descriptor must be an object")
        try:
            return cls(
                env_version=doc["env_version"],
                feature_paths=tuple(doc["feature_paths"]),
                preprocessing=tuple(doc.get("preprocessing", ())),
                arithmetic=doc.get("arithmetic", ARITHMETIC_TAG),
                tie_rule=doc.get("tie_rule", TIE_RULE_TAG),
            )
        except (KeyError, TypeError) as exc:
            raise NonCanonicalValue(f"malformed env descriptor: {exc}") from exc


@dataclasses.dataclass(frozen=True)
class ModelWeights:
    """Q32.32 representations of the weight vector, bias, and threshold."""

    weights: tuple[int, ...]
    bias: int
    threshold: int

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        for rep in (*self.weights, self.bias, self.threshold):
            if not isinstance(rep, int) or not (kernels.INT64_MIN <= rep <= kernels.INT64_MAX):
                raise NonCanonicalValue("weight representations must be signed 64-bit integers")

    @classmethod
    def from_decimal_strings(cls, weights: Iterable[str], bias: str, threshold: str) -> "ModelWeights":
        return cls(
            weights=tuple(q_from_decimal(w) for w in weights),
            bias=q_from_decimal(bias),
            threshold=q_from_decimal(threshold),
        )

    def to_doc(self) -> Doc:
        return {"bias": self.bias, "threshold": self.threshold, "weights": list(self.weights)}

    @classmethod
    def from_doc(cls, doc: Doc) -> "ModelWeights":
        if not isinstance(doc, dict):
            raise NonCanonicalValue("weights must be an object")
        try:
            return cls(weights=tuple(doc["weights"]), bias=doc["bias"], threshold=doc["threshold"])
        except (KeyError, TypeError) as exc:
            raise NonCanonicalValue(f"malformed weights: {exc}") from exc

    @property
    def weights_digest(self) -> Digest:
        return doc_digest(self.to_doc())


@dataclasses.dataclass(frozen=True)
class ModelSpec:
    kind: str
    env: EnvDescriptor | None = None
    weights_digest: Digest | None = None
    service_id: str | None = None

    def __post_init__(self):
        if self.kind == KIND_EXACT:
            if self.env is None or self.weights_digest is None or self.service_id is not None:
                raise NonCanonicalValue("Exact spec requires env and weights_digest only")
        elif self.kind == KIND_SERVICE_REF:
            if self.service_id is None or self.env is not None or self.weights_digest is not None:
                raise NonCanonicalValue("ServiceRef spec requires service_id only")
        else:
            raise NonCanonicalValue(f"unknown spec kind: {self.kind!r}")

    def to_doc(self) -> Doc:
        if self.kind == KIND_EXACT:
            return {
                "env": self.env.to_doc(),
                "kind": KIND_EXACT,
                "weights_digest": self.weights_digest.hex,
            }
        return {"kind": KIND_SERVICE_REF, "service_id": self.service_id}

    @classmethod
    def from_doc(cls, doc: Doc) -> "ModelSpec":
        if not isinstance(doc, dict):
            raise NonCanonicalValue("model spec must be an object")
        kind = doc.get("kind")
        try:
            if kind == KIND_EXACT:
                return cls(
                    kind=KIND_EXACT,
                    env=EnvDescriptor.from_doc(doc["env"]),
                    weights_digest=Digest.from_hex(doc["weights_digest"]),
                )
            if kind == KIND_SERVICE_REF:
                return cls(kind=KIND_SERVICE_REF, service_id=doc["service_id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise NonCanonicalValue(f"malformed model spec: {exc}") from exc
        raise NonCanonicalValue(f"unknown spec kind: {kind!r}")

    @property
    def pinned_digest(self) -> Digest:
        return doc_digest(self.to_doc())


def pin_model(env: EnvDescriptor, weights: ModelWeights) -> ModelSpec:
    """Bind an environment and a weight vector into an Exact pinned spec."""
    if len(weights.weights) != len(env.feature_paths):
        raise LengthMismatch(
            f"{len(weights.weights)} weights for {len(env.feature_paths)} feature paths"
        )
    return ModelSpec(kind=KIND_EXACT, env=env, weights_digest=weights.weights_digest)


def service_ref(service_id: str) -> ModelSpec:
    return ModelSpec(kind=KIND_SERVICE_REF, service_id=service_id)


@dataclasses.dataclass(frozen=True)
class InferenceOutput:
    decision: str
    score: int

    def __post_init__(self):
        if self.decision not in (DECISION_APPROVE, DECISION_DENY):
            raise NonCanonicalValue(f"unknown decision: {self.decision!r}")

    def to_doc(self) -> Doc:
        return {"decision": self.decision, "score": self.score}

    @classmethod
    def from_doc(cls, doc: Doc) -> "InferenceOutput":
        require_keys(doc, frozenset({"decision", "score"}))
        try:
            return cls(decision=doc["decision"], score=doc["score"])
        except KeyError as exc:
            raise NonCanonicalValue(f"malformed inference output: {exc}") from exc


def extract_features(env: EnvDescriptor, record: DataRecord) -> list[int]:
    """Resolve feature paths to integers, then run the preprocessing chain."""
    from .filters import _resolve_parent  # shared path traversal

    features = []
    for path in env.feature_paths:
        located = _resolve_parent(record.content, parse_path(path))
        if located is None:
            raise FeaturePathError(f"feature path {path!r} does not resolve")
        container, key = located
        value = container[key]
        if not isinstance(value, int) or isinstance(value, bool):
            raise FeaturePathError(f"feature path {path!r} holds {type(value).__name__}")
        features.append(value)
    for transform in env.preprocessing:
        fn = PREPROCESSING_REGISTRY[transform]
        features = [fn(v) for v in features]
    return features


def execute_pinned(
    spec: ModelSpec, weights: ModelWeights, record: DataRecord, strict: bool = False
) -> InferenceOutput:
    """Deterministic scoring run under an Exact pinned spec.

    score = saturating Q32.32 dot(weights, features) + bias, decision by the
    pinned tie rule. With ``strict`` set, saturation anywhere raises
    Overflow instead of clamping (a debugging aid, not a pinned mode).
    """
    if spec.kind != KIND_EXACT:
        raise UnknownService("only Exact specs are executable locally")
    if weights.weights_digest != spec.weights_digest:
        raise WeightsDigestMismatch("weights do not match the pinned digest")
    if len(weights.weights) != len(env_of(spec).feature_paths):
        raise LengthMismatch("weight vector length does not match the env")
    features = extract_features(env_of(spec), record)
    features_q = [kernels.q_from_int(v) for v in features]
    if strict:
        _check_overflow(weights, features)
    score = kernels.q_dot(list(weights.weights), features_q, weights.bias)
    decision = DECISION_APPROVE if score >= weights.threshold else DECISION_DENY
    return InferenceOutput(decision=decision, score=score)


def env_of(spec: ModelSpec) -> EnvDescriptor:
    if spec.env is None:
        raise UnknownService("spec carries no environment")
    return spec.env


def _check_overflow(weights: ModelWeights, features: list[int]) -> None:
    acc = 0
    for w, f in zip(weights.weights, features):
        rep = f << kernels.Q_FRAC_BITS
        if not (kernels.INT64_MIN <= rep <= kernels.INT64_MAX):
            raise Overflow(f"feature {f} exceeds the Q32.32 range")
        term = kernels.q_mul(w, rep)
        exact_q, exact_rem = divmod(w * rep, Q_ONE)
        if exact_rem > (Q_ONE >> 1) or (exact_rem == (Q_ONE >> 1) and exact_q & 1):
            exact_q += 1
        if term != exact_q:
            raise Overflow("product saturated")
        acc += term
        if not (kernels.INT64_MIN <= acc <= kernels.INT64_MAX):
            raise Overflow("accumulator saturated")
    if not (kernels.INT64_MIN <= acc + weights.bias <= kernels.INT64_MAX):
        raise Overflow("bias addition saturated")


@dataclasses.dataclass(frozen=True)
class InferenceProof:
    """Signed binding of (pinned spec, input, output) digests.

    ``signatures`` holds one entry for a single trusted executor and one per
    agreeing node for committee runs; every signature covers the same
    domain-tagged message, which includes the round timestamp.
    """

    pinned_digest: Digest
    input_digest: Digest
    output_digest: Digest
    executed_at: int
    signatures: tuple[tuple[KeyIdentity, bytes], ...]

    def payload_doc(self) -> Doc:
        return {
            "executed_at": self.executed_at,
            "input_digest": self.input_digest.hex,
            "output_digest": self.output_digest.hex,
            "pinned_digest": self.pinned_digest.hex,
        }

    def to_doc(self) -> Doc:
        return {
            "executed_at": self.executed_at,
            "input_digest": self.input_digest.hex,
            "output_digest": self.output_digest.hex,
            "pinned_digest": self.pinned_digest.hex,
            "signatures": [
                {"signature": sig.hex(), "signer": identity.to_doc()}
                for identity, sig in self.signatures
            ],
        }

    @classmethod
    def from_doc(cls, doc: Doc) -> "InferenceProof":
        require_keys(
            doc,
            frozenset(
                {"executed_at", "input_digest", "output_digest", "pinned_digest", "signatures"}
            ),
        )
        try:
            signatures = tuple(
                (
                    KeyIdentity.from_doc(require_keys(entry, frozenset({"signature", "signer"}))["signer"]),
                    hex_to_bytes(entry["signature"]),
                )
                for entry in doc["signatures"]
            )
            return cls(
                pinned_digest=Digest.from_hex(doc["pinned_digest"]),
                input_digest=Digest.from_hex(doc["input_digest"]),
                output_digest=Digest.from_hex(doc["output_digest"]),
                executed_at=doc["executed_at"],
                signatures=signatures,
            )
        except (KeyError, TypeError, ValueError, UnknownKey) as exc:
            raise NonCanonicalValue(f"malformed inference proof: {exc}") from exc


_sign_lock = threading.Lock()


def sign_inference_payload(secret: SecretKey, payload_doc: Doc) -> bytes:
    with _sign_lock:
        return sign_payload(secret, DOMAIN_INFERENCE, payload_doc)


def attest_inference(
    executor_secret: SecretKey,
    spec: ModelSpec,
    weights: ModelWeights,
    record: DataRecord,
    output: InferenceOutput,
    executed_at: int | None = None,
) -> InferenceProof:
    """Single-executor proof that output = run of the pinned spec on the record."""
    recomputed = execute_pinned(spec, weights, record)
    if recomputed != output:
        raise OutputMismatch("supplied output does not match the pinned execution")
    proof = InferenceProof(
        pinned_digest=spec.pinned_digest,
        input_digest=record_digest(record),
        output_digest=doc_digest(output.to_doc()),
        executed_at=executed_at if executed_at is not None else now_s(),
        signatures=(),
    )
    signature = sign_inference_payload(executor_secret, proof.payload_doc())
    return dataclasses.replace(proof, signatures=((executor_secret.identity, signature),))


class ServiceRegistry:
    """Executor-side registry of opaque services backed by exact models."""

    def __init__(self):
        self._services: dict[str, tuple[ModelSpec, ModelWeights]] = {}

    def register(self, service_id: str, spec: ModelSpec, weights: ModelWeights) -> None:
        if spec.kind != KIND_EXACT:
            raise UnknownService("a service must be backed by an Exact spec")
        self._services[service_id] = (spec, weights)

    def execute(self, service_id: str, record: DataRecord) -> InferenceOutput:
        if service_id not in self._services:
            raise UnknownService(f"no service registered as {service_id!r}")
        spec, weights = self._services[service_id]
        return execute_pinned(spec, weights, record)

    def attest_service_ref(
        self,
        executor_secret: SecretKey,
        service_id: str,
        record: DataRecord,
        output: InferenceOutput,
        executed_at: int | None = None,
    ) -> InferenceProof:
        """Proof binding the ServiceRef digest; env and weights stay private."""
        recomputed = self.execute(service_id, record)
        if recomputed != output:
            raise OutputMismatch("supplied output does not match the service execution")
        proof = InferenceProof(
            pinned_digest=service_ref(service_id).pinned_digest,
            input_digest=record_digest(record),
            output_digest=doc_digest(output.to_doc()),
            executed_at=executed_at if executed_at is not None else now_s(),
            signatures=(),
        )
        signature = sign_inference_payload(executor_secret, proof.payload_doc())
        return dataclasses.replace(proof, signatures=((executor_secret.identity, signature),))


def verify_single_signature(proof: InferenceProof) -> KeyIdentity | None:
    """The signing identity of a one-signature proof, or None if invalid."""
    if len(proof.signatures) != 1:
        return None
    identity, signature = proof.signatures[0]
    if identity.role not in ("executor", "committee-node"):
        return None
    if not verify_payload(identity, DOMAIN_INFERENCE, proof.payload_doc(), signature):
        return None
    return identity
