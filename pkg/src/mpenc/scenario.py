"""Scripted simulation scenarios: JSON in, deterministic JSON report out.

A scenario file declares the cast of members, a timeline of room and user
actions on a logical clock, an optional fault plan for the channel, and a
list of assertions to check once the clock runs out. Running the same
scenario with the same seed reproduces the identical report, byte for byte
(minus the optional timestamp), which makes failures replayable and reports
diffable.

Schema reference: docs/scenario-schema.md.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from . import crypto
from .liveness import FlowControlPolicy
from .session import (
    MembershipChanged,
    MessageAccepted,
    MessageRejected,
    OperationFailed,
    OperationRejected,
    OperationStarted,
    OperationSucceeded,
    SecurityWarning,
    Session,
    SessionConfig,
)
from .simchannel import FaultSpec, SimChannel


class SchemaError(Exception):
    """The scenario document does not follow the documented schema."""


ACTIONS = ("join", "leave", "disconnect", "send", "propose")
FAULT_ACTIONS = ("drop", "delay", "tamper", "duplicate")
FAULT_KINDS = ("any", "data", "greeting")
CHECKS = (
    "transcripts-equal",
    "keys-equal",
    "warning-expected",
    "no-warnings",
    "op-count",
    "packet-count",
)
_POLICY_FIELDS = (
    "ack_grace",
    "full_ack_timeout",
    "resend_interval",
    "heartbeat_interval",
)


@dataclass(frozen=True)
class Step:
    at: int
    action: str
    member: str
    text: str = ""
    include: tuple[str, ...] = ()
    exclude: tuple[str, ...] = ()
    refresh: bool = False


@dataclass(frozen=True)
class Scenario:
    name: str
    members: tuple[str, ...]
    timeline: tuple[Step, ...]
    faults: tuple[FaultSpec, ...]
    policy: FlowControlPolicy
    run_until: int
    assertions: tuple[dict, ...] = field(default_factory=tuple)


# ---------------------------------------------------------------------------
# Validation


def _need(doc: dict, key: str, types, where: str):
    if key not in doc:
        raise SchemaError(f"{where}: missing required key {key!r}")
    value = doc[key]
    if not isinstance(value, types):
        raise SchemaError(f"{where}: {key!r} has the wrong type")
    return value


def _opt(doc: dict, key: str, types, default, where: str):
    if key not in doc:
        return default
    value = doc[key]
    if value is not None and not isinstance(value, types):
        raise SchemaError(f"{where}: {key!r} has the wrong type")
    return value


def _no_extras(doc: dict, allowed: set[str], where: str) -> None:
    extras = sorted(set(doc) - allowed)
    if extras:
        raise SchemaError(f"{where}: unknown key(s) {', '.join(extras)}")


def _member_list(value, members: tuple[str, ...], where: str) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(m, str) for m in value):
        raise SchemaError(f"{where}: expected a list of member ids")
    for m in value:
        if m not in members:
            raise SchemaError(f"{where}: {m!r} is not a declared member")
    return tuple(value)


def _parse_step(doc, members: tuple[str, ...], index: int) -> Step:
    where = f"timeline[{index}]"
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: each step must be an object")
    _no_extras(
        doc, {"at", "action", "member", "text", "include", "exclude", "refresh"}, where
    )
    at = _need(doc, "at", int, where)
    if isinstance(at, bool) or at < 0:
        raise SchemaError(f"{where}: 'at' must be a non-negative integer")
    action = _need(doc, "action", str, where)
    if action not in ACTIONS:
        raise SchemaError(f"{where}: unknown action {action!r}")
    member = _need(doc, "member", str, where)
    if member not in members:
        raise SchemaError(f"{where}: {member!r} is not a declared member")

    text = _opt(doc, "text", str, "", where)
    include = _member_list(doc.get("include", []), members, where)
    exclude = _member_list(doc.get("exclude", []), members, where)
    refresh = _opt(doc, "refresh", bool, False, where)

    if action == "send":
        if "text" not in doc:
            raise SchemaError(f"{where}: send requires 'text'")
        if include or exclude or refresh:
            raise SchemaError(f"{where}: stray argument for action 'send'")
    elif action == "propose":
        if "text" in doc:
            raise SchemaError(f"{where}: stray argument for action 'propose'")
        if sum([bool(include), bool(exclude), bool(refresh)]) != 1:
            raise SchemaError(
                f"{where}: propose requires exactly one of include/exclude/refresh"
            )
    elif include or exclude or refresh or "text" in doc:
        raise SchemaError(f"{where}: stray argument for action {action!r}")
    return Step(at, action, member, text, include, exclude, refresh)


def _parse_fault(doc, members: tuple[str, ...], index: int) -> FaultSpec:
    where = f"faults[{index}]"
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: each fault must be an object")
    _no_extras(
        doc,
        {"action", "sender", "kind", "occurrence", "delay", "record", "bit"},
        where,
    )
    action = _need(doc, "action", str, where)
    if action not in FAULT_ACTIONS:
        raise SchemaError(f"{where}: unknown fault action {action!r}")
    sender = _opt(doc, "sender", str, None, where)
    if sender is not None and sender not in members:
        raise SchemaError(f"{where}: {sender!r} is not a declared member")
    kind = _opt(doc, "kind", str, "any", where)
    if kind not in FAULT_KINDS:
        raise SchemaError(f"{where}: unknown packet kind {kind!r}")
    occurrence = _opt(doc, "occurrence", int, 1, where)
    if isinstance(occurrence, bool) or occurrence < 1:
        raise SchemaError(f"{where}: 'occurrence' must be a positive integer")
    delay = _opt(doc, "delay", int, 0, where)
    if action == "delay" and delay < 1:
        raise SchemaError(f"{where}: delay faults need 'delay' >= 1")
    record = _opt(doc, "record", str, None, where)
    bit = _opt(doc, "bit", int, 0, where)
    if isinstance(bit, bool) or bit < 0:
        raise SchemaError(f"{where}: 'bit' must be a non-negative integer")
    return FaultSpec(
        action=action, sender=sender, kind=kind,
        occurrence=occurrence, delay=delay, record=record, bit=bit,
    )


def _parse_assertion(doc, members: tuple[str, ...], index: int) -> dict:
    where = f"assertions[{index}]"
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: each assertion must be an object")
    check = _need(doc, "check", str, where)
    if check not in CHECKS:
        raise SchemaError(f"{where}: unknown check {check!r}")
    allowed = {"check", "members"}
    if check == "warning-expected":
        allowed |= {"code", "member"}
        _need(doc, "code", str, where)
        member = _need(doc, "member", str, where)
        if member not in members:
            raise SchemaError(f"{where}: {member!r} is not a declared member")
    elif check == "op-count":
        allowed |= {"kind", "status", "member", "count"}
        count = _need(doc, "count", int, where)
        if isinstance(count, bool) or count < 0:
            raise SchemaError(f"{where}: 'count' must be a non-negative integer")
        status = _opt(doc, "status", str, "succeeded", where)
        if status not in ("started", "succeeded", "failed", "rejected"):
            raise SchemaError(f"{where}: unknown status {status!r}")
        member = _opt(doc, "member", str, None, where)
        if member is not None and member not in members:
            raise SchemaError(f"{where}: {member!r} is not a declared member")
    elif check == "packet-count":
        allowed |= {"kind", "count"}
        count = _need(doc, "count", int, where)
        if isinstance(count, bool) or count < 0:
            raise SchemaError(f"{where}: 'count' must be a non-negative integer")
        kind = _opt(doc, "kind", str, "all", where)
        if kind not in ("all", "data", "greeting", "other"):
            raise SchemaError(f"{where}: unknown packet kind {kind!r}")
    if "members" in doc:
        _member_list(doc["members"], members, where)
    _no_extras(doc, allowed, where)
    return dict(doc)


def _parse_policy(doc, where: str) -> FlowControlPolicy:
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: 'policy' must be an object")
    _no_extras(doc, set(_POLICY_FIELDS), where)
    kwargs = {}
    for name in _POLICY_FIELDS:
        if name not in doc:
            continue
        value = doc[name]
        if name == "heartbeat_interval" and value is None:
            kwargs[name] = None
            continue
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise SchemaError(f"{where}: {name!r} must be a positive integer")
        kwargs[name] = value
    return FlowControlPolicy(**kwargs)


def parse_scenario(doc, default_name: str = "scenario") -> Scenario:
    """Validate a decoded JSON document against the scenario schema."""
    if not isinstance(doc, dict):
        raise SchemaError("scenario: top level must be an object")
    _no_extras(
        doc,
        {"name", "members", "timeline", "faults", "policy", "run_until",
         "assertions"},
        "scenario",
    )
    name = _opt(doc, "name", str, default_name, "scenario")
    members_raw = _need(doc, "members", list, "scenario")
    if not members_raw or not all(isinstance(m, str) and m for m in members_raw):
        raise SchemaError("scenario: 'members' must be a non-empty list of ids")
    if len(set(members_raw)) != len(members_raw):
        raise SchemaError("scenario: member ids must be distinct")
    members = tuple(members_raw)

    timeline_raw = _opt(doc, "timeline", list, [], "scenario")
    timeline = tuple(
        _parse_step(s, members, i) for i, s in enumerate(timeline_raw)
    )
    for earlier, later in zip(timeline, timeline[1:]):
        if later.at < earlier.at:
            raise SchemaError("scenario: timeline times must be non-decreasing")

    faults = tuple(
        _parse_fault(f, members, i)
        for i, f in enumerate(_opt(doc, "faults", list, [], "scenario"))
    )
    assertions = tuple(
        _parse_assertion(a, members, i)
        for i, a in enumerate(_opt(doc, "assertions", list, [], "scenario"))
    )
    policy = _parse_policy(_opt(doc, "policy", dict, {}, "scenario"), "scenario")

    last_at = timeline[-1].at if timeline else 0
    run_until = _opt(doc, "run_until", int, None, "scenario")
    if run_until is None:
        run_until = last_at + 32 if timeline else 0
    elif isinstance(run_until, bool) or run_until < 0:
        raise SchemaError("scenario: 'run_until' must be a non-negative integer")
    elif timeline and run_until <= last_at:
        raise SchemaError("scenario: timeline extends past 'run_until'")

    return Scenario(name, members, timeline, faults, policy, run_until, assertions)


# ---------------------------------------------------------------------------
# Execution


def _notice_json(notice) -> dict:
    if isinstance(notice, MessageAccepted):
        return {
            "type": "message-accepted",
            "author": notice.author,
            "body": notice.body.decode("utf-8", "replace"),
            "mid": notice.mid.hex(),
        }
    if isinstance(notice, MessageRejected):
        return {
            "type": "message-rejected",
            "body": notice.body.decode("utf-8", "replace"),
            "reason": notice.reason,
        }
    if isinstance(notice, MembershipChanged):
        return {
            "type": "membership-changed",
            "members": list(notice.members),
            "previous": list(notice.previous),
        }
    if isinstance(notice, OperationStarted):
        return {
            "type": "operation-started",
            "kind": notice.kind,
            "initiator": notice.initiator,
            "members": list(notice.members),
        }
    if isinstance(notice, OperationSucceeded):
        return {
            "type": "operation-succeeded",
            "kind": notice.kind,
            "initiator": notice.initiator,
        }
    if isinstance(notice, OperationRejected):
        return {
            "type": "operation-rejected",
            "kind": notice.kind,
            "initiator": notice.initiator,
        }
    if isinstance(notice, OperationFailed):
        return {
            "type": "operation-failed",
            "kind": notice.kind,
            "initiator": notice.initiator,
            "reason": notice.reason,
        }
    if isinstance(notice, SecurityWarning):
        return {"type": "security-warning", "code": notice.code,
                "detail": notice.detail}
    return {"type": "unknown", "repr": repr(notice)}


@dataclass
class RunResult:
    """Everything a report or an assertion needs after a run."""

    scenario: Scenario
    seed: int
    sessions: dict[str, Session]
    channel: SimChannel
    notices: dict[str, list]


def run_scenario(sc: Scenario, seed: int = 0) -> RunResult:
    base = f"{sc.name}:{seed}"
    identity = {
        p: crypto.sign_key_generate(crypto.Rng(f"{base}:id:{p}"))
        for p in sc.members
    }
    pubs = {p: crypto.sign_public(s) for p, s in identity.items()}
    channel = SimChannel(list(sc.faults))
    config = SessionConfig(policy=sc.policy)
    sessions: dict[str, Session] = {}
    notices: dict[str, list] = {p: [] for p in sc.members}
    for p in sc.members:
        s = Session(
            p, identity[p], pubs.get,
            rng=crypto.Rng(f"{base}:rng:{p}"), config=config,
        )
        sessions[p] = s
        channel.add_session(s)

    idx = 0
    while channel.now < sc.run_until:
        while idx < len(sc.timeline) and sc.timeline[idx].at <= channel.now:
            step = sc.timeline[idx]
            idx += 1
            session = sessions[step.member]
            if step.action == "join":
                channel.join(step.member)
            elif step.action == "leave":
                session.shutdown()
            elif step.action == "disconnect":
                channel.part(step.member)
            elif step.action == "send":
                session.send_message(step.text)
            elif step.action == "propose":
                session.propose(
                    include=step.include, exclude=step.exclude,
                    refresh=step.refresh,
                )
        channel.step()
        for p, s in sessions.items():
            notices[p].extend(s.drain_notices())
    return RunResult(sc, seed, sessions, channel, notices)


# ---------------------------------------------------------------------------
# Assertions


def _targets(assertion: dict, sc: Scenario) -> tuple[str, ...]:
    return tuple(assertion.get("members", sc.members))


def _check_transcripts_equal(assertion, run: RunResult):
    logs = {p: run.sessions[p].log for p in _targets(assertion, run.scenario)}
    baseline = next(iter(logs.values()))
    if all(log == baseline for log in logs.values()):
        return True, f"{len(logs)} identical transcript(s)"
    lengths = ", ".join(f"{p}:{len(log)}" for p, log in sorted(logs.items()))
    return False, f"transcripts differ ({lengths})"


def _check_keys_equal(assertion, run: RunResult):
    targets = _targets(assertion, run.scenario)
    missing = [p for p in targets if run.sessions[p].cur is None]
    if missing:
        return False, f"no established keys at {', '.join(sorted(missing))}"
    keys = {p: run.sessions[p].cur.keys for p in targets}
    sids = {k.sid for k in keys.values()}
    secrets = {k.group_key for k in keys.values()}
    if len(sids) == 1 and len(secrets) == 1:
        return True, f"{len(targets)} member(s) share one key"
    return False, f"{len(sids)} distinct sid(s), {len(secrets)} distinct key(s)"


def _check_warning_expected(assertion, run: RunResult):
    code, member = assertion["code"], assertion["member"]
    hits = [
        n for n in run.notices[member]
        if isinstance(n, SecurityWarning) and n.code == code
    ]
    if hits:
        return True, f"{member} warned {code} x{len(hits)}"
    return False, f"{member} never warned {code}"


def _check_no_warnings(assertion, run: RunResult):
    noisy = {
        p: [n.code for n in run.notices[p] if isinstance(n, SecurityWarning)]
        for p in _targets(assertion, run.scenario)
    }
    noisy = {p: codes for p, codes in noisy.items() if codes}
    if not noisy:
        return True, "no warnings anywhere"
    detail = "; ".join(f"{p}: {', '.join(codes)}" for p, codes in sorted(noisy.items()))
    return False, detail


_OP_CLASSES = {
    "started": OperationStarted,
    "succeeded": OperationSucceeded,
    "failed": OperationFailed,
    "rejected": OperationRejected,
}


def _check_op_count(assertion, run: RunResult):
    member = assertion.get("member") or run.scenario.members[0]
    status = assertion.get("status", "succeeded")
    kind = assertion.get("kind")
    cls = _OP_CLASSES[status]
    hits = [
        n for n in run.notices[member]
        if isinstance(n, cls) and (kind is None or n.kind == kind)
    ]
    want = assertion["count"]
    label = f"{kind or 'any'}/{status}"
    if len(hits) == want:
        return True, f"{member} saw {want} {label} operation(s)"
    return False, f"{member} saw {len(hits)} {label} operation(s), wanted {want}"


def _check_packet_count(assertion, run: RunResult):
    kind = assertion.get("kind", "all")
    counts = run.channel.delivered
    got = sum(counts.values()) if kind == "all" else counts[kind]
    want = assertion["count"]
    if got == want:
        return True, f"{want} {kind} packet(s) delivered"
    return False, f"{got} {kind} packet(s) delivered, wanted {want}"


_CHECKERS = {
    "transcripts-equal": _check_transcripts_equal,
    "keys-equal": _check_keys_equal,
    "warning-expected": _check_warning_expected,
    "no-warnings": _check_no_warnings,
    "op-count": _check_op_count,
    "packet-count": _check_packet_count,
}


def evaluate_assertions(run: RunResult) -> list[dict]:
    results = []
    for assertion in run.scenario.assertions:
        ok, detail = _CHECKERS[assertion["check"]](assertion, run)
        entry = {k: v for k, v in assertion.items()}
        entry.update(ok=ok, detail=detail)
        results.append(entry)
    return results


# ---------------------------------------------------------------------------
# Report


def _fingerprint(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def build_report(run: RunResult, timestamp: str | None = None) -> dict:
    assertions = evaluate_assertions(run)
    members = {}
    for p in run.scenario.members:
        s = run.sessions[p]
        keys = s.cur.keys if s.cur else None
        chain = s.server_order.chain_hash
        members[p] = {
            "members": list(s.members),
            "log": [
                [author, body.decode("utf-8", "replace")] for author, body in s.log
            ],
            "notices": [_notice_json(n) for n in run.notices[p]],
            "warnings": [
                {"code": n.code, "detail": n.detail}
                for n in run.notices[p]
                if isinstance(n, SecurityWarning)
            ],
            "chain_hash": chain.hex() if chain else None,
            "sid": keys.sid.hex() if keys else None,
            "key_fingerprint": _fingerprint(keys.group_key) if keys else None,
        }
    report = {
        "scenario": run.scenario.name,
        "seed": run.seed,
        "ticks": run.channel.now,
        "packets": dict(sorted(run.channel.delivered.items())),
        "members": members,
        "assertions": assertions,
        "ok": all(a["ok"] for a in assertions),
    }
    if timestamp is not None:
        report["generated_at"] = timestamp
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
