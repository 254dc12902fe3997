"""End-to-end encrypted group messaging over an ordering server.

The central object is :class:`Session`: one per member, driven entirely by
the transport.  Feed it every broadcast packet (``receive``), room roster
changes (``channel_joined`` / ``channel_event``), and a clock (``tick``);
drain the queued :class:`SendPacket` / :class:`LeaveChannel` /
:class:`KickMember` actions back into the transport and the notice stream
(message deliveries, membership changes, security warnings) into the
application.  ``propose`` starts membership operations, ``send_message``
encrypts application payloads, ``shutdown`` winds the session down with a
final consistency check.

For tests and protocol exploration, :class:`SimChannel` provides a
deterministic in-process broadcast server with scripted faults, and the
``scenario`` helpers (:func:`parse_scenario`, :func:`run_scenario`,
:func:`build_report`) run whole multi-member scripts described as JSON.
The ``mpenc-sim`` command line wraps those helpers.
"""

from __future__ import annotations

from .codec import (
    Record,
    RecordType,
    decode_records,
    encode_record,
    encode_records,
    frame,
    packet_id,
    unframe,
)
from .errors import (
    AuthFailure,
    Incomplete,
    InvalidMembers,
    Malformed,
    MessageTooLarge,
    NotMpenc,
    ProtocolError,
    ProtocolViolation,
    Undecryptable,
    UnsupportedVersion,
)
from .liveness import (
    WARN_FULL_ACK,
    WARN_PRESENCE,
    AckScheduler,
    ConsistencyMonitor,
    FlowControlPolicy,
    FullAckWarning,
    HeartbeatScheduler,
    PresenceTracker,
    PresenceWarning,
    ResendRequest,
)
from .scenario import (
    RunResult,
    Scenario,
    SchemaError,
    Step,
    build_report,
    evaluate_assertions,
    parse_scenario,
    report_json,
    run_scenario,
)
from .session import (
    WARN_BUFFERED,
    WARN_MALFORMED,
    WARN_OP_TIMEOUT,
    WARN_SHUTDOWN,
    WARN_UNDECRYPTABLE,
    KickMember,
    LeaveChannel,
    MembershipChanged,
    MessageAccepted,
    MessageRejected,
    OperationFailed,
    OperationRejected,
    OperationStarted,
    OperationSucceeded,
    SecurityWarning,
    SendPacket,
    Session,
    SessionConfig,
)
from .simchannel import FaultSpec, SimChannel
from .transcript import AddResult, AddStatus, MessageLog, Msg, MsgKind, Transcript

__version__ = "0.1.0"

__all__ = [
    # session
    "Session",
    "SessionConfig",
    "MessageAccepted",
    "MessageRejected",
    "MembershipChanged",
    "OperationStarted",
    "OperationSucceeded",
    "OperationRejected",
    "OperationFailed",
    "SecurityWarning",
    "SendPacket",
    "LeaveChannel",
    "KickMember",
    "WARN_OP_TIMEOUT",
    "WARN_BUFFERED",
    "WARN_SHUTDOWN",
    "WARN_UNDECRYPTABLE",
    "WARN_MALFORMED",
    # liveness
    "FlowControlPolicy",
    "ConsistencyMonitor",
    "AckScheduler",
    "HeartbeatScheduler",
    "PresenceTracker",
    "FullAckWarning",
    "PresenceWarning",
    "ResendRequest",
    "WARN_FULL_ACK",
    "WARN_PRESENCE",
    # transcript
    "Transcript",
    "MessageLog",
    "Msg",
    "MsgKind",
    "AddResult",
    "AddStatus",
    # codec
    "RecordType",
    "Record",
    "encode_record",
    "encode_records",
    "decode_records",
    "frame",
    "unframe",
    "packet_id",
    # simulation
    "SimChannel",
    "FaultSpec",
    "Scenario",
    "Step",
    "SchemaError",
    "RunResult",
    "parse_scenario",
    "run_scenario",
    "evaluate_assertions",
    "build_report",
    "report_json",
    # errors
    "ProtocolError",
    "Malformed",
    "NotMpenc",
    "UnsupportedVersion",
    "ProtocolViolation",
    "AuthFailure",
    "InvalidMembers",
    "Incomplete",
    "MessageTooLarge",
    "Undecryptable",
    "__version__",
]
