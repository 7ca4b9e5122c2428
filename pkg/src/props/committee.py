"""Decentralized oracle committee simulation.

n nodes independently execute the same Exact pinned spec on the same input
and vote with the digest of their output. Because execution is bit
deterministic, consensus reduces to exact-match signature counting: a proof
is produced when at least ``quorum_t`` nodes signed the same digest triple,
and it carries exactly those signatures. There is no leader and no view
change; a single aggregation round either reaches quorum or reports
ConsensusFailure inside the verdict.

Fault injection covers independent faults only: a wrong-output or
equivocating node deviates with a node-unique corruption, and a crashed
node never votes. Colluding nodes that all sign one agreed-on lie hold real
keys and are indistinguishable from an honest quorum by construction; that
case is outside the fault bound (at most n - quorum_t faulty) this module
defends.

ServiceRef specs are rejected: committee members can only vote on runs they
can replicate.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor, wait
from typing import Iterable, Protocol

from . import kernels
from .core import (
    DOMAIN_INFERENCE,
    DataRecord,
    Digest,
    Doc,
    KeyIdentity,
    SecretKey,
    doc_digest,
    now_s,
    record_digest,
    verify_payload,
)
from .errors import NonCanonicalValue, UnknownKey, UnknownService
from .pinned import (
    DECISION_APPROVE,
    DECISION_DENY,
    InferenceOutput,
    InferenceProof,
    KIND_EXACT,
    ModelSpec,
    ModelWeights,
    execute_pinned,
    sign_inference_payload,
)

BEHAVIOR_HONEST = "honest"
BEHAVIOR_WRONG_OUTPUT = "wrong-output"
BEHAVIOR_CRASH = "crash"
BEHAVIOR_EQUIVOCATE = "equivocate"
BEHAVIORS = (BEHAVIOR_HONEST, BEHAVIOR_WRONG_OUTPUT, BEHAVIOR_CRASH, BEHAVIOR_EQUIVOCATE)

CONSENSUS_FAILURE = "ConsensusFailure"

VERIFY_OK = "ok"
VERIFY_INSUFFICIENT_QUORUM = "InsufficientQuorum"
VERIFY_DUPLICATE_SIGNER = "DuplicateSigner"
VERIFY_UNKNOWN_SIGNER = "UnknownSigner"
VERIFY_PIN_MISMATCH = "PinMismatch"
VERIFY_BAD_SIGNATURE = "BadSignature"
VERIFY_MALFORMED = "Malformed"


@dataclasses.dataclass(frozen=True)
class CommitteeConfig:
    nodes: tuple[KeyIdentity, ...]
    quorum_t: int
    fault_plan: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not (1 <= self.quorum_t <= len(self.nodes)):
            raise NonCanonicalValue(
                f"quorum {self.quorum_t} out of range for {len(self.nodes)} nodes"
            )
        for fp, behavior in self.fault_plan.items():
            if behavior not in BEHAVIORS:
                raise NonCanonicalValue(f"unknown behavior {behavior!r} for node {fp}")

    def behavior_of(self, identity: KeyIdentity) -> str:
        return self.fault_plan.get(identity.fingerprint.hex, BEHAVIOR_HONEST)

    def to_doc(self) -> Doc:
        return {
            "nodes": [identity.to_doc() for identity in self.nodes],
            "quorum_t": self.quorum_t,
        }

    @classmethod
    def from_doc(cls, doc: Doc, fault_plan: dict | None = None) -> "CommitteeConfig":
        if not isinstance(doc, dict):
            raise NonCanonicalValue("committee config must be an object")
        try:
            nodes = tuple(KeyIdentity.from_doc(n) for n in doc["nodes"])
            return cls(nodes=nodes, quorum_t=doc["quorum_t"], fault_plan=fault_plan or {})
        except (KeyError, TypeError, UnknownKey) as exc:
            raise NonCanonicalValue(f"malformed committee config: {exc}") from exc


@dataclasses.dataclass
class Vote:
    identity: KeyIdentity
    output: InferenceOutput
    output_digest: Digest
    signature: bytes


class Voter(Protocol):
    identity: KeyIdentity

    def cast_vote(
        self, spec: ModelSpec, weights: ModelWeights, record: DataRecord, executed_at: int
    ) -> Vote | None: ...


class LocalNode:
    """In-process committee member with an injectable fault behavior."""

    def __init__(self, secret: SecretKey, behavior: str = BEHAVIOR_HONEST, index: int = 0):
        if secret.role != "committee-node":
            raise UnknownKey("committee nodes require the committee-node role")
        if behavior not in BEHAVIORS:
            raise NonCanonicalValue(f"unknown behavior: {behavior!r}")
        self.secret = secret
        self.identity = secret.identity
        self.behavior = behavior
        self.index = index
        self._calls = 0

    def cast_vote(
        self, spec: ModelSpec, weights: ModelWeights, record: DataRecord, executed_at: int
    ) -> Vote | None:
        self._calls += 1
        if self.behavior == BEHAVIOR_CRASH:
            return None
        output = execute_pinned(spec, weights, record)
        if self.behavior == BEHAVIOR_WRONG_OUTPUT:
            output = self._corrupt(output, weights, offset_sign=1)
        elif self.behavior == BEHAVIOR_EQUIVOCATE:
            # A different lie on every call; with a single aggregator this
            # collapses to one node-unique wrong vote per round.
            output = self._corrupt(output, weights, offset_sign=1 if self._calls % 2 else -1)
        payload = {
            "executed_at": executed_at,
            "input_digest": record_digest(record).hex,
            "output_digest": doc_digest(output.to_doc()).hex,
            "pinned_digest": spec.pinned_digest.hex,
        }
        signature = sign_inference_payload(self.secret, payload)
        return Vote(
            identity=self.identity,
            output=output,
            output_digest=doc_digest(output.to_doc()),
            signature=signature,
        )

    def _corrupt(self, output: InferenceOutput, weights: ModelWeights, offset_sign: int) -> InferenceOutput:
        score = kernels.q_sat(output.score + offset_sign * (self.index + 1) * kernels.Q_ONE)
        decision = DECISION_APPROVE if score >= weights.threshold else DECISION_DENY
        return InferenceOutput(decision=decision, score=score)


@dataclasses.dataclass(frozen=True)
class CommitteeVerdict:
    agreed_output: InferenceOutput | None
    proof: InferenceProof | None
    votes: dict
    failure: str | None = None

    def to_doc(self) -> Doc:
        return {
            "agreed_output": self.agreed_output.to_doc() if self.agreed_output else None,
            "failure": self.failure,
            "proof": self.proof.to_doc() if self.proof else None,
            "votes": dict(self.votes),
        }


def run_committee(
    voters: Iterable[Voter],
    config: CommitteeConfig,
    spec: ModelSpec,
    weights: ModelWeights,
    record: DataRecord,
    deadline: float = 2.0,
    executed_at: int | None = None,
) -> CommitteeVerdict:
    """One voting round. Quorum failures land in the verdict, never raise.

    The aggregator fixes the round timestamp up front so every node signs
    the same message for the same result.
    """
    if spec.kind != KIND_EXACT:
        raise UnknownService("committee execution requires an Exact pinned spec")
    voters = list(voters)
    round_ts = executed_at if executed_at is not None else now_s()
    votes: dict[str, str] = {}
    results: dict[str, Vote] = {}
    with ThreadPoolExecutor(max_workers=max(1, len(voters))) as pool:
        futures = {
            pool.submit(voter.cast_vote, spec, weights, record, round_ts): voter for voter in voters
        }
        done, pending = wait(futures, timeout=deadline)
        for future in pending:
            future.cancel()
        for future in done:
            voter = futures[future]
            fp = voter.identity.fingerprint.hex
            try:
                vote = future.result()
            except Exception:
                vote = None
            if vote is None:
                votes[fp] = "crash"
            else:
                votes[fp] = vote.output_digest.hex
                results[fp] = vote
        for future in pending:
            votes[futures[future].identity.fingerprint.hex] = "crash"
    groups: dict[str, list[str]] = {}
    for fp, digest_hex in votes.items():
        if digest_hex != "crash":
            groups.setdefault(digest_hex, []).append(fp)
    winner = None
    for digest_hex, members in sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0])):
        if len(members) >= config.quorum_t:
            winner = (digest_hex, sorted(members))
        break
    if winner is None:
        return CommitteeVerdict(agreed_output=None, proof=None, votes=votes, failure=CONSENSUS_FAILURE)
    digest_hex, members = winner
    agreed = results[members[0]].output
    proof = InferenceProof(
        pinned_digest=spec.pinned_digest,
        input_digest=record_digest(record),
        output_digest=Digest.from_hex(digest_hex),
        executed_at=round_ts,
        signatures=tuple((results[fp].identity, results[fp].signature) for fp in members),
    )
    return CommitteeVerdict(agreed_output=agreed, proof=proof, votes=votes, failure=None)


def verify_committee_proof(
    proof: InferenceProof, config: CommitteeConfig, expected_pinned: Digest
) -> str:
    """``ok`` or a reason code; purely local, no network.

    Strict: every signature carried by the proof must verify, not merely a
    quorum of them. An honest aggregator only ever includes the signatures
    of agreeing nodes, so a proof with any dud signature is tampered.
    """
    try:
        known = {identity.fingerprint.hex: identity for identity in config.nodes}
        seen: set[str] = set()
        payload = proof.payload_doc()
        for identity, signature in proof.signatures:
            fp = identity.fingerprint.hex
            if fp not in known or identity != known[fp]:
                return VERIFY_UNKNOWN_SIGNER
            if fp in seen:
                return VERIFY_DUPLICATE_SIGNER
            seen.add(fp)
            if not verify_payload(identity, DOMAIN_INFERENCE, payload, signature):
                return VERIFY_BAD_SIGNATURE
        if proof.pinned_digest != expected_pinned:
            return VERIFY_PIN_MISMATCH
        if len(seen) < config.quorum_t:
            return VERIFY_INSUFFICIENT_QUORUM
        return VERIFY_OK
    except Exception:
        return VERIFY_MALFORMED
