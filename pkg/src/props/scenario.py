"""Scenario orchestration: wire a declarative config into running components,
drive one pipeline end to end, and write the artifacts.

A scenario config is a single JSON document describing the source fixture,
the subject's fetch, the filter list, an optional model and committee, the
delivery mode, and the policy knobs. Keys are provisioned fresh per run, so
reruns differ only in timestamps and signatures while every content digest
stays identical.

Attack runs reuse the honest pipeline and inject exactly one named fault;
the expected detection (a failing check and reason, or a committee
consensus failure) is part of the attack table in this module.
"""

from __future__ import annotations

import dataclasses
import json
import os
import pathlib
import subprocess
import sys
import time

from . import workers
from .attestor import Attestor, AttestorProxy, attest_via_proxy, build_attestation
from .chain import (
    CHECK_ATT_TRUSTED,
    CHECK_FILTER_WHITELIST,
    CHECK_FRESHNESS,
    CHECK_MODEL,
    CHECK_PAYLOAD,
    DELIVERY_PLAINTEXT,
    DELIVERY_SEALED,
    ModelRequirement,
    Payload,
    PropChain,
    REASON_NOT_WHITELISTED,
    REASON_PAYLOAD_DIGEST,
    REASON_PIN_MISMATCH,
    REASON_STALE,
    REASON_UNTRUSTED_SIGNER,
    REQUIRE_COMMITTEE,
    REQUIRE_EXACT,
    REQUIRE_NONE,
    VerificationReport,
    VerifierPolicy,
    report_export,
    seal_payload,
    open_payload,
    verify_chain,
)
from .committee import (
    CONSENSUS_FAILURE,
    CommitteeConfig,
    CommitteeVerdict,
    LocalNode,
    RemoteNode,
    run_committee,
)
from .core import (
    DataRecord,
    Doc,
    SecretKey,
    export_json,
    keygen,
    now_s,
)
from .errors import ConfigError, UnknownAttack
from .filters import FilterSpec, apply_filter, attest_filter
from .pinned import (
    EnvDescriptor,
    InferenceOutput,
    ModelSpec,
    ModelWeights,
    attest_inference,
    pin_model,
)
from .source import FetchRequest, RecordServer, RecordStore, SourceDescriptor

SCENARIOS = ("train-ehr", "infer-loan")

ATTACKS = ("tamper-data", "swap-filter", "swap-model", "forge-sig", "stale", "byzantine-2")

# attack -> (failing check id, reason code); byzantine-2 is caught before a
# chain exists, as a committee consensus failure.
EXPECTED_DETECTION = {
    "tamper-data": (CHECK_PAYLOAD, REASON_PAYLOAD_DIGEST),
    "swap-filter": (CHECK_FILTER_WHITELIST, REASON_NOT_WHITELISTED),
    "swap-model": (CHECK_MODEL, REASON_PIN_MISMATCH),
    "forge-sig": (CHECK_ATT_TRUSTED, REASON_UNTRUSTED_SIGNER),
    "stale": (CHECK_FRESHNESS, REASON_STALE),
    "byzantine-2": ("committee", CONSENSUS_FAILURE),
}


def load_config(path: str | os.PathLike) -> Doc:
    try:
        with open(path, "rb") as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load scenario config {path}: {exc}") from exc


def bundled_config_path(scenario: str) -> pathlib.Path:
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario: {scenario!r}")
    name = scenario.replace("-", "_") + ".json"
    return pathlib.Path(__file__).parent / "configs" / name


@dataclasses.dataclass
class ScenarioResult:
    scenario: str
    passed: bool
    report: VerificationReport | None
    chain: PropChain | None
    committee_verdict: CommitteeVerdict | None
    out_dir: pathlib.Path | None
    elapsed_s: float


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


class ScenarioRun:
    """One configured pipeline run, honest or with a named injected attack."""

    def __init__(
        self,
        config: Doc,
        scenario: str | None = None,
        attack: str | None = None,
        multiprocess: bool = False,
        out_dir: str | os.PathLike | None = None,
    ):
        if not isinstance(config, dict) or config.get("v") != 1:
            raise ConfigError("scenario config must be a v1 object")
        self.config = config
        self.scenario = scenario or config.get("scenario")
        _require(self.scenario in SCENARIOS, f"unknown scenario: {self.scenario!r}")
        _require(
            config.get("scenario") == self.scenario,
            f"config is for scenario {config.get('scenario')!r}, not {self.scenario!r}",
        )
        if attack is not None and attack not in ATTACKS:
            raise UnknownAttack(f"unknown attack: {attack!r}")
        self.attack = attack
        self.multiprocess = multiprocess
        self.out_dir = pathlib.Path(out_dir) if out_dir is not None else None
        self._validate()
        self._procs: list[subprocess.Popen] = []
        self._servers: list = []
        self._secrets: dict[str, SecretKey] = {}

    # --- config validation -------------------------------------------------

    def _validate(self) -> None:
        cfg = self.config
        src = cfg.get("source")
        _require(isinstance(src, dict), "missing source section")
        for key in ("source_id", "credentials", "records"):
            _require(key in src, f"source section missing {key!r}")
        subject = cfg.get("subject")
        _require(isinstance(subject, dict), "missing subject section")
        for key in ("subject_id", "credential", "record_type"):
            _require(key in subject, f"subject section missing {key!r}")
        _require(
            src["credentials"].get(subject["subject_id"]) == subject["credential"],
            "subject credential does not match the source seeding",
        )
        _require(
            any(
                r.get("subject_id") == subject["subject_id"]
                and r.get("record_type") == subject["record_type"]
                for r in src["records"]
            ),
            "no seeded record matches the subject fetch",
        )
        self.filter_specs = tuple(FilterSpec.from_doc(f) for f in cfg.get("filters", []))
        model = cfg.get("model")
        if model is not None:
            env = EnvDescriptor(
                env_version=model["env"]["env_version"],
                feature_paths=tuple(model["env"]["feature_paths"]),
                preprocessing=tuple(model["env"].get("preprocessing", ())),
            )
            weights = ModelWeights.from_decimal_strings(
                model["weights"], model["bias"], model["threshold"]
            )
            self.model: tuple[ModelSpec, ModelWeights] | None = (pin_model(env, weights), weights)
        else:
            self.model = None
        committee = cfg.get("committee")
        if committee is not None:
            _require(self.model is not None, "a committee needs a model")
            _require(
                1 <= committee.get("quorum_t", 0) <= committee.get("n", 0),
                "committee quorum out of range",
            )
        self.delivery = cfg.get("delivery", DELIVERY_PLAINTEXT)
        _require(self.delivery in (DELIVERY_PLAINTEXT, DELIVERY_SEALED), "bad delivery mode")
        policy = cfg.get("policy")
        _require(isinstance(policy, dict) and "max_age_seconds" in policy, "missing policy section")
        self.requirement_kind = policy.get("model_requirement", REQUIRE_NONE)
        if cfg.get("committee") is not None:
            _require(self.requirement_kind == REQUIRE_COMMITTEE, "committee configs require the committee policy")
        elif self.model is not None:
            _require(self.requirement_kind == REQUIRE_EXACT, "a model without a committee uses the exact policy")
        else:
            _require(self.requirement_kind == REQUIRE_NONE, "no model configured but the policy demands one")

    # --- component lifecycle -------------------------------------------------

    def _keygen(self, role: str, name: str) -> SecretKey:
        secret, _ = keygen(role)
        self._secrets[name] = secret
        return secret

    def _start_source(self, store_doc: Doc) -> tuple[str, int]:
        cfg = self.config["source"]
        secret = self._secrets["source"]
        if self.multiprocess:
            return self._spawn_worker(
                "source",
                {
                    "host": "127.0.0.1",
                    "port": 0,
                    "source_id": cfg["source_id"],
                    "signing_enabled": bool(cfg.get("signing_enabled", False)),
                    "store": store_doc,
                    "secret": secret.to_doc(),
                },
            )
        store = RecordStore.from_doc(store_doc)
        descriptor = SourceDescriptor(
            source_id=cfg["source_id"],
            host="127.0.0.1",
            port=0,
            source_identity=secret.identity,
            signing_enabled=bool(cfg.get("signing_enabled", False)),
        )
        server = RecordServer(descriptor, store, secret).start()
        self._servers.append(server)
        return server.endpoint

    def _start_attestor(self, source_endpoint: tuple[str, int], clock) -> tuple[str, int]:
        secret = self._secrets["attestor"]
        source_id = self.config["source"]["source_id"]
        if self.multiprocess:
            # The stale attack shifts the attestor clock; the worker takes an offset.
            offset = int(clock() - time.time()) if clock is not time.time else 0
            return self._spawn_worker(
                "attestor",
                {
                    "host": "127.0.0.1",
                    "port": 0,
                    "secret": secret.to_doc(),
                    "sources": {source_id: list(source_endpoint)},
                    "clock_offset": offset,
                },
            )
        proxy = AttestorProxy(secret, {source_id: source_endpoint}, clock=clock).start()
        self._servers.append(proxy)
        return proxy.endpoint

    def _spawn_worker(self, kind: str, worker_config: Doc) -> tuple[str, int]:
        proc = subprocess.Popen(
            [sys.executable, "-m", "props.workers", kind, "--config-json", json.dumps(worker_config)],
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
        self._procs.append(proc)
        line = proc.stdout.readline().strip()
        if not line.startswith(workers.READY_PREFIX):
            proc.kill()
            raise ConfigError(f"{kind} worker failed to start: {line!r}")
        port = int(line.split()[1])
        return "127.0.0.1", port

    def _teardown(self) -> None:
        for server in self._servers:
            try:
                server.shutdown()
            except Exception:
                pass
        for proc in self._procs:
            try:
                proc.terminate()
                proc.wait(timeout=3)
            except Exception:
                proc.kill()

    # --- the run itself ---------------------------------------------------------

    def run(self) -> ScenarioResult:
        started = time.monotonic()
        try:
            result = self._run_inner()
        finally:
            self._teardown()
        result.elapsed_s = time.monotonic() - started
        return result

    def _run_inner(self) -> ScenarioResult:
        cfg = self.config
        subject = cfg["subject"]
        source_cfg = cfg["source"]

        self._keygen("source", "source")
        self._keygen("attestor", "attestor")
        self._keygen("executor", "executor")
        if self.delivery == DELIVERY_SEALED:
            self._keygen("recipient", "recipient")

        clock = time.time
        if self.attack == "stale":
            margin = int(cfg["policy"]["max_age_seconds"]) + 3600
            clock = lambda: time.time() - margin  # noqa: E731

        store_doc = {"credentials": source_cfg["credentials"], "records": source_cfg["records"]}
        source_endpoint = self._start_source(store_doc)
        attestor_endpoint = self._start_attestor(source_endpoint, clock)

        request = FetchRequest(
            subject_id=subject["subject_id"],
            credential=subject["credential"],
            record_type=subject["record_type"],
        )
        record, attestation = attest_via_proxy(
            attestor_endpoint[0], attestor_endpoint[1], source_cfg["source_id"], request
        )

        if self.attack == "forge-sig":
            rogue = keygen("attestor")[0]
            attestation = build_attestation(
                rogue, source_cfg["source_id"], request, record, int(clock())
            )

        # filters: honest list, or the swap-filter substitute
        executed_specs = list(self.filter_specs)
        if self.attack == "swap-filter":
            substitute = FilterSpec("sneaky-identity@1", "identity", {})
            executed_specs[-1:] = [substitute]

        executor = self._secrets["executor"]
        current = record
        filter_proofs = []
        for spec in executed_specs:
            transformed = apply_filter(spec, current)
            filter_proofs.append(attest_filter(executor, spec, current, transformed))
            current = transformed
        delivered_record = current

        # model stage
        committee_verdict = None
        inference_proof = None
        output: InferenceOutput | None = None
        committee_cfg = None
        if self.model is not None:
            spec, weights = self.model
            if self.attack == "swap-model":
                perturbed = ModelWeights(weights.weights, weights.bias + 1, weights.threshold)
                spec, weights = pin_model(spec.env, perturbed), perturbed
            if cfg.get("committee") is not None:
                committee_cfg, voters = self._build_committee(cfg["committee"])
                committee_verdict = run_committee(
                    voters, committee_cfg, spec, weights, delivered_record
                )
                if committee_verdict.failure is not None:
                    return ScenarioResult(
                        scenario=self.scenario,
                        passed=False,
                        report=None,
                        chain=None,
                        committee_verdict=committee_verdict,
                        out_dir=self._write_artifacts(None, None, committee_verdict),
                        elapsed_s=0.0,
                    )
                inference_proof = committee_verdict.proof
                output = committee_verdict.agreed_output
            else:
                output = None
                from .pinned import execute_pinned

                output = execute_pinned(spec, weights, delivered_record)
                inference_proof = attest_inference(executor, spec, weights, delivered_record, output)

        # payload assembly
        if output is not None:
            plain = output
            payload = Payload(kind="output", output=output)
        else:
            plain = delivered_record
            payload = Payload(kind="record", record=delivered_record)
        if self.attack == "tamper-data":
            plain = _tamper(plain)
            payload = (
                Payload(kind="output", output=plain)
                if isinstance(plain, InferenceOutput)
                else Payload(kind="record", record=plain)
            )
        if self.delivery == DELIVERY_SEALED:
            payload = Payload(kind="sealed", sealed=seal_payload(self._secrets["recipient"].identity, plain))

        chain = PropChain(
            attestation=attestation,
            filter_specs=tuple(self.filter_specs),
            filter_proofs=tuple(filter_proofs),
            inference_proof=inference_proof,
            payload=payload,
            created_at=now_s(),
        )
        policy = self._build_policy(committee_cfg)
        report = verify_chain(chain, policy, now=now_s())
        out_dir = self._write_artifacts(chain, report, committee_verdict)
        return ScenarioResult(
            scenario=self.scenario,
            passed=report.verdict,
            report=report,
            chain=chain,
            committee_verdict=committee_verdict,
            out_dir=out_dir,
            elapsed_s=0.0,
        )

    def _build_committee(self, committee_cfg: Doc):
        n = committee_cfg["n"]
        fault_plan_by_name = dict(committee_cfg.get("fault_plan", {}))
        if self.attack == "byzantine-2":
            fault_plan_by_name = {"node-1": "wrong-output", "node-2": "crash"}
        node_secrets = [self._keygen("committee-node", f"node-{i}") for i in range(n)]
        fault_plan = {}
        for name, behavior in fault_plan_by_name.items():
            _require(name in self._secrets, f"fault plan names unknown node {name!r}")
            fault_plan[self._secrets[name].identity.fingerprint.hex] = behavior
        config = CommitteeConfig(
            nodes=tuple(s.identity for s in node_secrets),
            quorum_t=committee_cfg["quorum_t"],
            fault_plan=fault_plan,
        )
        if self.multiprocess:
            voters = []
            for i, secret in enumerate(node_secrets):
                endpoint = self._spawn_worker(
                    "committee-node",
                    {
                        "host": "127.0.0.1",
                        "port": 0,
                        "secret": secret.to_doc(),
                        "behavior": config.behavior_of(secret.identity),
                        "index": i,
                    },
                )
                voters.append(RemoteNode(secret.identity, endpoint[0], endpoint[1]))
        else:
            voters = [
                LocalNode(secret, config.behavior_of(secret.identity), index=i)
                for i, secret in enumerate(node_secrets)
            ]
        return config, voters

    def _build_policy(self, committee_cfg: CommitteeConfig | None) -> VerifierPolicy:
        cfg_policy = self.config["policy"]
        if self.requirement_kind == REQUIRE_NONE:
            requirement = ModelRequirement(kind=REQUIRE_NONE)
        elif self.requirement_kind == REQUIRE_COMMITTEE:
            spec, _ = self.model
            requirement = ModelRequirement(
                kind=REQUIRE_COMMITTEE, pinned_digest=spec.pinned_digest, committee=committee_cfg
            )
        else:
            spec, _ = self.model
            requirement = ModelRequirement(kind=REQUIRE_EXACT, pinned_digest=spec.pinned_digest)
        return VerifierPolicy(
            trusted_attestors=(self._secrets["attestor"].identity,),
            trusted_sources=(self.config["source"]["source_id"],),
            filter_whitelist=tuple(s.spec_digest for s in self.filter_specs),
            required_record_type=self.config["subject"]["record_type"],
            model_requirement=requirement,
            max_age_seconds=int(cfg_policy["max_age_seconds"]),
            delivery=self.delivery,
        )

    # --- artifacts ------------------------------------------------------------------

    def _write_artifacts(
        self,
        chain: PropChain | None,
        report: VerificationReport | None,
        committee_verdict: CommitteeVerdict | None,
    ) -> pathlib.Path | None:
        if self.out_dir is None:
            return None
        out = self.out_dir
        out.mkdir(parents=True, exist_ok=True)
        keys_dir = out / "keys"
        keys_dir.mkdir(exist_ok=True)
        for name, secret in self._secrets.items():
            (keys_dir / f"{name}.identity.json").write_bytes(
                export_json({"type": "key-identity", "v": 1, **secret.identity.to_doc()})
            )
        if "recipient" in self._secrets:
            secret_path = keys_dir / "recipient.secret.json"
            secret_path.write_bytes(
                export_json({"type": "key-secret", "v": 1, **self._secrets["recipient"].to_doc()})
            )
            secret_path.chmod(0o600)
        transcripts = out / "transcripts"
        transcripts.mkdir(exist_ok=True)
        for server in self._servers:
            if isinstance(server, AttestorProxy):
                for i, transcript in enumerate(server.transcripts):
                    (transcripts / f"session-{i}.json").write_bytes(
                        export_json({"frames": transcript, "type": "transcript", "v": 1})
                    )
        if chain is not None:
            (out / "chain.json").write_bytes(chain.export())
        if report is not None:
            (out / "report.json").write_bytes(report_export(report))
        if committee_verdict is not None:
            (out / "verdict.json").write_bytes(
                export_json({"type": "committee-verdict", "v": 1, **committee_verdict.to_doc()})
            )
        if chain is not None and chain.payload.kind == "sealed" and "recipient" in self._secrets:
            opened = open_payload(self._secrets["recipient"], chain.payload.sealed)
            doc = opened.to_doc()
            (out / "decrypted_payload.json").write_bytes(
                export_json({"payload": doc, "type": "decrypted-payload", "v": 1})
            )
        return out


def _tamper(plain):
    """Minimal semantic corruption of the delivered payload."""
    if isinstance(plain, InferenceOutput):
        return InferenceOutput(decision=plain.decision, score=plain.score + 1)
    content = json.loads(json.dumps(plain.content))
    _bump_first_leaf(content)
    return dataclasses.replace(plain, content=content)


def _bump_first_leaf(node) -> bool:
    if isinstance(node, dict):
        for key in sorted(node.keys()):
            if _bump_first_leaf_value(node, key):
                return True
            if _bump_first_leaf(node[key]):
                return True
    elif isinstance(node, list):
        for i in range(len(node)):
            if _bump_first_leaf_value(node, i):
                return True
            if _bump_first_leaf(node[i]):
                return True
    return False


def _bump_first_leaf_value(container, key) -> bool:
    value = container[key]
    if isinstance(value, bool):
        return False
    if isinstance(value, int):
        container[key] = value + 1
        return True
    if isinstance(value, str):
        container[key] = value + "␀"
        return True
    return False


def run_scenario(
    config: Doc,
    scenario: str | None = None,
    out_dir: str | os.PathLike | None = None,
    multiprocess: bool = False,
) -> ScenarioResult:
    return ScenarioRun(config, scenario=scenario, multiprocess=multiprocess, out_dir=out_dir).run()


def run_attack(
    config: Doc,
    attack: str,
    out_dir: str | os.PathLike | None = None,
    multiprocess: bool = False,
) -> tuple[bool, str]:
    """Run a scenario with one injected fault.

    Returns (caught_as_expected, detail). An attack counts as caught only
    when verification failed with exactly the expected check and reason, or,
    for byzantine-2, when the committee reported a consensus failure.
    """
    if attack not in ATTACKS:
        raise UnknownAttack(f"unknown attack: {attack!r}")
    result = ScenarioRun(config, attack=attack, multiprocess=multiprocess, out_dir=out_dir).run()
    expected_check, expected_reason = EXPECTED_DETECTION[attack]
    if attack == "byzantine-2":
        verdict = result.committee_verdict
        if verdict is not None and verdict.failure == CONSENSUS_FAILURE and result.chain is None:
            return True, f"committee reported {CONSENSUS_FAILURE}"
        return False, f"expected {CONSENSUS_FAILURE}, got {verdict and verdict.failure!r}"
    if result.report is None:
        return False, "no verification report produced"
    if result.report.verdict:
        return False, "attack was not detected: report passed"
    failed = {c.check_id: c.reason for c in result.report.failed_checks()}
    if failed == {expected_check: expected_reason}:
        return True, f"caught: {expected_check} failed with {expected_reason}"
    return False, f"expected only {expected_check}/{expected_reason}, got {failed}"
