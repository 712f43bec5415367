"""Wire protocol: length-prefixed JSON text frames.

A frame is the decimal byte length of the payload, a newline, then the
payload (UTF-8 JSON). Messages carry a kind, a per-direction strictly
increasing sequence number and a payload; decoders ignore unknown payload
fields so either end can evolve independently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

MAX_FRAME = 4 * 1024 * 1024

KIND_SNAPSHOT = "state_snapshot"
KIND_COMMAND = "command"
KIND_FEEDBACK = "feedback"
KIND_GOAL_EVENT = "goal_event"
KIND_ERROR = "error"

KNOWN_KINDS = (KIND_SNAPSHOT, KIND_COMMAND, KIND_FEEDBACK, KIND_GOAL_EVENT, KIND_ERROR)

COMMAND_TYPES = (
    "force",  # direct virtual force on the active control point
    "tracker",  # raw tracker displacement
    "emitter",  # laser emitter pose
    "request",  # discrete toggles / control-point change / gripper
    "object_vel",  # bimanual object velocity
)


class WireError(ValueError):
    pass


@dataclass
class WireMessage:
    kind: str
    seq: int
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KNOWN_KINDS:
            raise WireError(f"unknown message kind {self.kind!r}")


def encode_message(msg: WireMessage) -> bytes:
    payload = json.dumps(
        {"kind": msg.kind, "seq": msg.seq, "payload": msg.payload},
        separators=(",", ":"),
        sort_keys=True,
        allow_nan=False,
    ).encode()
    return b"%d\n%s" % (len(payload), payload)


def decode_message(payload: bytes) -> WireMessage:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"malformed payload: {exc}") from None
    if not isinstance(obj, dict):
        raise WireError("payload must be a JSON object")
    kind = obj.get("kind")
    seq = obj.get("seq")
    if kind not in KNOWN_KINDS:
        raise WireError(f"unknown message kind {kind!r}")
    if not isinstance(seq, int):
        raise WireError("missing integer sequence number")
    payload_obj = obj.get("payload", {})
    if not isinstance(payload_obj, dict):
        raise WireError("payload field must be an object")
    return WireMessage(kind=kind, seq=seq, payload=payload_obj)


class FrameDecoder:
    """Incremental parser for length-prefixed frames off a byte stream."""

    def __init__(self):
        self._buffer = b""

    def feed(self, data: bytes):
        """Yields (message | None, error | None) per completed frame."""
        self._buffer += data
        out = []
        while True:
            newline = self._buffer.find(b"\n")
            if newline < 0:
                if len(self._buffer) > 32:
                    out.append((None, WireError("oversized frame header")))
                    self._buffer = b""
                break
            header = self._buffer[:newline]
            try:
                length = int(header)
                if not 0 <= length <= MAX_FRAME:
                    raise ValueError
            except ValueError:
                out.append((None, WireError(f"bad frame header {header[:16]!r}")))
                self._buffer = self._buffer[newline + 1 :]
                continue
            if len(self._buffer) - newline - 1 < length:
                break
            payload = self._buffer[newline + 1 : newline + 1 + length]
            self._buffer = self._buffer[newline + 1 + length :]
            try:
                out.append((decode_message(payload), None))
            except WireError as exc:
                out.append((None, exc))
        return out


def encode_snapshot(seq: int, payload: dict) -> WireMessage:
    return WireMessage(kind=KIND_SNAPSHOT, seq=seq, payload=payload)


def decode_command(msg: WireMessage) -> dict:
    """Validated operator event from a command message.

    Unknown extra payload fields are ignored; missing/invalid required
    fields raise WireError without tearing the connection down.
    """
    if msg.kind != KIND_COMMAND:
        raise WireError(f"expected a command message, got {msg.kind!r}")
    ctype = msg.payload.get("type")
    if ctype not in COMMAND_TYPES:
        raise WireError(f"unknown command type {ctype!r}")
    event = {"kind": ctype}
    if ctype in ("force", "tracker"):
        event["side"] = _side(msg.payload)
        event["vec" if ctype == "force" else "pos"] = _vec3(
            msg.payload, "vec" if ctype == "force" else "pos"
        )
    elif ctype == "emitter":
        event["pos"] = _vec3(msg.payload, "pos")
        event["dir"] = _vec3(msg.payload, "dir")
    elif ctype == "request":
        name = msg.payload.get("name")
        if not isinstance(name, str) or not name:
            raise WireError("request command needs a name")
        event["name"] = name
        if "value" in msg.payload:
            event["value"] = msg.payload["value"]
    elif ctype == "object_vel":
        event["vec"] = _vec3(msg.payload, "vec")
    return event


def _side(payload: dict) -> str:
    side = payload.get("side")
    if side not in ("left", "right"):
        raise WireError(f"side must be left or right, got {side!r}")
    return side


def _vec3(payload: dict, key: str):
    raw = payload.get(key)
    if (
        not isinstance(raw, (list, tuple))
        or len(raw) != 3
        or not all(isinstance(v, (int, float)) for v in raw)
    ):
        raise WireError(f"{key} must be a 3-element number list")
    return [float(v) for v in raw]
