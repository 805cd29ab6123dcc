"""SDN-style controller, per-node agents, and the conventional data plane.

The controller and agents are sequential message processors that share no
state and communicate only over session channels: ordered, mutually
authenticated (shared token) byte channels carrying one structured text
record per line.  Every request receives exactly one terminal response,
an ack or an error; an unreachable peer surfaces as a local timeout error.
Everything runs on a deterministic virtual-time scheduler, so a whole
network fits in one process and injected delays, drops, and crashes are
reproducible.

Wire format (one message per line, UTF-8 JSON): fields kind,
correlation_id, auth_token, integrity_tag, payload.  The integrity tag is
a keyed BLAKE2b digest over the other four fields serialized canonically;
fetch_data responses reference out-of-band binary timetag blobs rather
than inlining them.  Production-grade encrypted tunnels are deliberately
abstracted to this token-plus-tag channel; a real cipher layer would wrap
the same frames.
"""

from __future__ import annotations

import hashlib
import heapq
import hmac
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import QlanError, ValidationError
from .spectrum import WssConfig

MESSAGE_KINDS = ("apply_allocation", "arm", "disarm", "fetch_data", "status", "ack", "error")
DEFAULT_TIMEOUT_S = 30.0


class AuthError(QlanError):
    """Token mismatch or unregistered peer."""


class IntegrityError(QlanError):
    """Frame integrity tag did not verify."""


class BudgetExceededError(QlanError):
    """Admitting the transfer would exceed data-plane capacity; the
    transfer is deferred at the agent, not dropped."""


class PartialArmError(QlanError):
    """Some agents did not acknowledge an arm command."""

    def __init__(self, missing: list[str]):
        super().__init__(f"arm failed for nodes: {', '.join(missing)}")
        self.missing = list(missing)


@dataclass(frozen=True)
class ControlMessage:
    kind: str
    correlation_id: str
    payload: dict

    def __post_init__(self) -> None:
        if self.kind not in MESSAGE_KINDS:
            raise ValidationError(f"unknown message kind {self.kind!r}")


def encode_frame(message: ControlMessage, token: str) -> bytes:
    body = {
        "kind": message.kind,
        "correlation_id": message.correlation_id,
        "auth_token": token,
        "payload": message.payload,
    }
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
    tag = hashlib.blake2b(
        canonical.encode("utf-8"), key=token.encode("utf-8"), digest_size=16
    ).hexdigest()
    body["integrity_tag"] = tag
    return (json.dumps(body, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def decode_frame(line: bytes, token: str) -> ControlMessage:
    try:
        body = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"unparseable frame: {exc}") from None
    expected_fields = {"kind", "correlation_id", "auth_token", "integrity_tag", "payload"}
    if set(body) != expected_fields:
        raise IntegrityError(f"frame fields {sorted(body)} != {sorted(expected_fields)}")
    tag = body.pop("integrity_tag")
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
    expected = hashlib.blake2b(
        canonical.encode("utf-8"), key=token.encode("utf-8"), digest_size=16
    ).hexdigest()
    if not hmac.compare_digest(tag, expected):
        raise IntegrityError("frame integrity tag mismatch")
    if body["auth_token"] != token:
        raise AuthError("frame carries a foreign auth token")
    return ControlMessage(body["kind"], body["correlation_id"], body["payload"])


@dataclass
class DataPlaneBudget:
    """Admission ledger for conventional data-plane transfers."""

    capacity_bps: float
    admitted_bps: float = 0.0
    peak_bps: float = 0.0
    transfers: int = 0

    def admit(self, demand_bps: float) -> None:
        if demand_bps < 0:
            raise ValidationError("demand must be non-negative")
        if self.admitted_bps + demand_bps > self.capacity_bps:
            raise BudgetExceededError(
                f"demand {demand_bps:.3g} b/s would exceed capacity "
                f"{self.capacity_bps:.3g} b/s (admitted {self.admitted_bps:.3g})"
            )
        self.admitted_bps += demand_bps
        self.peak_bps = max(self.peak_bps, self.admitted_bps)
        self.transfers += 1

    def release(self, demand_bps: float) -> None:
        self.admitted_bps = max(0.0, self.admitted_bps - demand_bps)


class SimNet:
    """Deterministic discrete-event scheduler with a registry of endpoints."""

    def __init__(self, token: str, seed: int = 0):
        self.token = token
        self.now = 0.0
        self._seq = 0
        self._queue: list[tuple[float, int, Callable[[], None]]] = []
        self.endpoints: dict[str, "Agent"] = {}
        self._rng = np.random.default_rng(np.random.SeedSequence([seed & 0x7FFFFFFF, 0x7E7]))

    def register(self, agent: "Agent") -> None:
        if agent.name in self.endpoints:
            raise ValidationError(f"duplicate endpoint name {agent.name!r}")
        self.endpoints[agent.name] = agent

    def schedule(self, delay_s: float, fn: Callable[[], None]) -> dict:
        """Queue fn after delay; the returned handle's 'cancelled' flag stops
        it (a cancelled entry does not advance the clock)."""
        self._seq += 1
        handle = {"cancelled": False}
        heapq.heappush(self._queue, (self.now + max(0.0, delay_s), self._seq, fn, handle))
        return handle

    def run(self) -> None:
        while self._queue:
            t, _, fn, handle = heapq.heappop(self._queue)
            if handle["cancelled"]:
                continue
            self.now = max(self.now, t)
            fn()

    def step(self, deadline: float) -> bool:
        """Process the next event if it is due by the deadline; returns
        False once nothing (non-cancelled) is due."""
        while self._queue and self._queue[0][0] <= deadline:
            t, _, fn, handle = heapq.heappop(self._queue)
            if handle["cancelled"]:
                continue
            self.now = max(self.now, t)
            fn()
            return True
        return False

    def session_channel(self, peer_a: str, peer_b: str) -> "SessionChannel":
        """Authenticated bidirectional channel between two registered peers."""
        for name in (peer_a, peer_b):
            if name not in self.endpoints:
                raise AuthError(f"connection refused: {name!r} is not registered")
        a, b = self.endpoints[peer_a], self.endpoints[peer_b]
        if a.token != b.token:
            raise AuthError("connection refused: shared token mismatch")
        channel = SessionChannel(self, a, b)
        a.channels[peer_b] = channel
        b.channels[peer_a] = channel
        return channel


@dataclass
class LinkFaults:
    """Injectable transport behavior for one channel."""

    delay_s: float = 0.0
    jitter_s: float = 0.0
    drop_rate: float = 0.0
    corrupt_next: bool = False


class SessionChannel:
    """Ordered byte channel between two endpoints; frames are full encoded
    lines so the wire codec is exercised end to end."""

    def __init__(self, net: SimNet, a: "Agent", b: "Agent"):
        self.net = net
        self.ends = {a.name: a, b.name: b}
        self.faults = LinkFaults()
        self._last_delivery: dict[str, float] = {a.name: 0.0, b.name: 0.0}

    def other(self, name: str) -> "Agent":
        for end_name, agent in self.ends.items():
            if end_name != name:
                return agent
        raise ValidationError(f"{name!r} is not an endpoint of this channel")

    def send(self, sender: str, frame: bytes) -> None:
        receiver = self.other(sender)
        if self.faults.corrupt_next:
            self.faults.corrupt_next = False
            frame = self._flip_byte(frame)
        if self.faults.drop_rate > 0 and self.net._rng.random() < self.faults.drop_rate:
            return
        delay = self.faults.delay_s
        if self.faults.jitter_s > 0:
            delay += float(self.net._rng.exponential(self.faults.jitter_s))
        deliver_at = max(self.net.now + delay, self._last_delivery[receiver.name])
        self._last_delivery[receiver.name] = deliver_at
        self.net.schedule(deliver_at - self.net.now, lambda: receiver.receive(self, frame))

    @staticmethod
    def _flip_byte(frame: bytes) -> bytes:
        mid = len(frame) // 2
        return frame[:mid] + bytes([frame[mid] ^ 0x5A]) + frame[mid + 1:]


class Agent:
    """Sequential message processor.  Subclasses implement on_request()."""

    def __init__(self, net: SimNet, name: str, token: str | None = None):
        self.net = net
        self.name = name
        self.token = token if token is not None else net.token
        self.channels: dict[str, SessionChannel] = {}
        self.responses: dict[str, ControlMessage] = {}
        self._pending: dict[str, dict] = {}
        self._counter = 0
        self.integrity_failures = 0
        net.register(self)

    # -- requester side -----------------------------------------------------
    def request(
        self, peer: str, kind: str, payload: dict, timeout_s: float = DEFAULT_TIMEOUT_S
    ) -> str:
        if peer not in self.channels:
            self.net.session_channel(self.name, peer)
        cid = f"{self.name}-{self._counter}"
        self._counter += 1
        message = ControlMessage(kind, cid, payload)
        self.channels[peer].send(self.name, encode_frame(message, self.token))
        self._pending[cid] = self.net.schedule(timeout_s, lambda: self._expire(cid))
        return cid

    def call(self, peer: str, kind: str, payload: dict, timeout_s: float = DEFAULT_TIMEOUT_S) -> ControlMessage:
        """Request, run the network to quiescence, return the response."""
        cid = self.request(peer, kind, payload, timeout_s)
        self.net.run()
        return self.responses[cid]

    def _expire(self, cid: str) -> None:
        if cid in self._pending:
            del self._pending[cid]
            self.responses[cid] = ControlMessage(
                "error", cid, {"reason": "timeout: no response"}
            )

    def _resolve(self, message: ControlMessage) -> None:
        timer = self._pending.pop(message.correlation_id, None)
        if timer is None:
            return  # late duplicate (response after timeout): dropped
        timer["cancelled"] = True
        self.responses[message.correlation_id] = message

    # -- receiver side ------------------------------------------------------
    def receive(self, channel: SessionChannel, frame: bytes) -> None:
        try:
            message = decode_frame(frame, self.token)
        except (IntegrityError, AuthError):
            self.integrity_failures += 1
            return  # discard; the channel survives
        if message.kind in ("ack", "error"):
            self._resolve(message)
            return
        response = self.on_request(message)
        if response is not None:
            channel.send(self.name, encode_frame(response, self.token))

    def on_request(self, message: ControlMessage) -> ControlMessage | None:
        return ControlMessage(
            "error", message.correlation_id, {"reason": f"unhandled kind {message.kind}"}
        )


class WssAgent(Agent):
    """Holds the switch routing table; configuration swaps are atomic."""

    def __init__(self, net: SimNet, name: str = "wss", token: str | None = None):
        super().__init__(net, name, token)
        self.config = WssConfig()
        self.fail_mode: str | None = None  # test hook: crash_before_commit / crash_after_commit

    def on_request(self, message: ControlMessage) -> ControlMessage | None:
        if message.kind == "status":
            return ControlMessage(
                "ack", message.correlation_id, {"routing_table": self.config.to_table_text()}
            )
        if message.kind == "apply_allocation":
            if self.fail_mode == "crash_before_commit":
                self.fail_mode = None
                return None  # crashed: no commit, no response
            try:
                staged = WssConfig.from_table_text(message.payload["routing_table"])
            except (ValidationError, KeyError, ValueError) as exc:
                return ControlMessage(
                    "error", message.correlation_id, {"reason": f"invalid routing table: {exc}"}
                )
            changed = staged != self.config
            self.config = staged  # atomic swap: the reference flips in one step
            if self.fail_mode == "crash_after_commit":
                self.fail_mode = None
                return None
            return ControlMessage(
                "ack", message.correlation_id, {"applied": True, "changed": changed}
            )
        return super().on_request(message)


@dataclass
class _ArmedCapture:
    capture_id: str
    logical_epoch: int
    actual_epoch: int
    duration_s: float
    basis: str
    canceled: bool = False


CaptureFn = Callable[[str, str, int, int, float, str], bytes]
"""(node, capture_id, logical_epoch, actual_epoch, duration_s, basis) -> timetag bytes."""


class NodeAgent(Agent):
    """Measurement endpoint: arms captures on PPS edges and serves the
    resulting timetag records."""

    def __init__(
        self,
        net: SimNet,
        name: str,
        capture_fn: CaptureFn,
        token: str | None = None,
    ):
        super().__init__(net, name, token)
        self.capture_fn = capture_fn
        self.armed: dict[str, _ArmedCapture] = {}
        self.data: dict[str, bytes] = {}

    def on_request(self, message: ControlMessage) -> ControlMessage | None:
        if message.kind == "arm":
            p = message.payload
            logical = int(p["epoch"])
            # Start at the commanded PPS edge, or the next one if the command
            # arrived after it.
            if self.net.now < logical:
                actual = logical
            else:
                actual = int(math.ceil(self.net.now))
            capture = _ArmedCapture(
                p["capture"], logical, actual, float(p["duration"]), p.get("basis", "NONE")
            )
            self.armed[capture.capture_id] = capture
            done_at = actual + capture.duration_s
            self.net.schedule(done_at - self.net.now, lambda: self._complete(capture))
            return ControlMessage(
                "ack", message.correlation_id, {"epoch": actual, "node": self.name}
            )
        if message.kind == "disarm":
            cid = message.payload.get("capture")
            if cid in self.armed:
                self.armed[cid].canceled = True
            return ControlMessage("ack", message.correlation_id, {"disarmed": cid})
        if message.kind == "fetch_data":
            cid = message.payload.get("capture")
            if cid not in self.data:
                return ControlMessage(
                    "error", message.correlation_id, {"reason": f"unknown capture {cid!r}"}
                )
            blob = self.data[cid]
            capture = self.armed[cid]
            return ControlMessage(
                "ack",
                message.correlation_id,
                {
                    "capture": cid,
                    "epoch": capture.actual_epoch,
                    "blob_bits": len(blob) * 8,
                    "duration": capture.duration_s,
                    "stream_ref": f"{self.name}/{cid}",
                },
            )
        if message.kind == "status":
            return ControlMessage(
                "ack",
                message.correlation_id,
                {"completed": sorted(self.data), "armed": sorted(self.armed)},
            )
        return super().on_request(message)

    def _complete(self, capture: _ArmedCapture) -> None:
        if capture.canceled:
            return
        self.data[capture.capture_id] = self.capture_fn(
            self.name,
            capture.capture_id,
            capture.logical_epoch,
            capture.actual_epoch,
            capture.duration_s,
            capture.basis,
        )

    def take_blob(self, capture_id: str) -> bytes:
        """Out-of-band binary transfer; the control message only carried the
        reference."""
        return self.data[capture_id]


class Controller(Agent):
    """Single centralized controller: configures the switch, coordinates
    epoch-armed measurements, and collects timestamp records against the
    data-plane budget."""

    def __init__(
        self,
        net: SimNet,
        budget: DataPlaneBudget,
        name: str = "controller",
        token: str | None = None,
    ):
        super().__init__(net, name, token)
        self.budget = budget

    def apply_allocation(self, wss_name: str, routing_table: str) -> ControlMessage:
        return self.call(wss_name, "apply_allocation", {"routing_table": routing_table})

    def wss_status(self, wss_name: str) -> str:
        response = self.call(wss_name, "status", {})
        if response.kind != "ack":
            raise QlanError(f"status failed: {response.payload}")
        return response.payload["routing_table"]

    def arm_measurement(
        self,
        nodes: list[str],
        epoch: int,
        duration_s: float,
        basis_by_node: dict[str, str],
        capture_id: str,
        timeout_s: float = DEFAULT_TIMEOUT_S,
    ) -> dict[str, int]:
        """Parallel arm commands to every node; returns actual epochs.

        If any node fails to acknowledge, the others are disarmed and a
        PartialArmError lists the missing nodes.
        """
        cids = {
            node: self.request(
                node,
                "arm",
                {
                    "epoch": epoch,
                    "duration": duration_s,
                    "basis": basis_by_node.get(node, "NONE"),
                    "capture": capture_id,
                },
                timeout_s,
            )
            for node in nodes
        }
        # Decide by the ack deadline so a missing node can still abort the
        # others before their captures complete.
        deadline = self.net.now + timeout_s
        while any(cid in self._pending for cid in cids.values()):
            if not self.net.step(deadline):
                break
        actual: dict[str, int] = {}
        missing = []
        for node, cid in cids.items():
            response = self.responses.get(cid)
            if response is not None and response.kind == "ack":
                actual[node] = int(response.payload["epoch"])
            else:
                missing.append(node)
        if missing:
            for node in nodes:
                if node not in missing:
                    self.call(node, "disarm", {"capture": capture_id})
            self.net.run()
            raise PartialArmError(missing)
        self.net.run()  # captures complete here
        return actual

    def fetch_data(self, node: str, capture_id: str) -> bytes:
        """Collect one capture's timetag blob, admitting its streaming
        demand against the budget; over-budget transfers are deferred at
        the agent (the data is retained) and the admission error raised."""
        response = self.call(node, "fetch_data", {"capture": capture_id})
        if response.kind != "ack":
            raise QlanError(f"fetch_data({node}, {capture_id}) failed: {response.payload}")
        bits = response.payload["blob_bits"]
        duration = max(float(response.payload["duration"]), 1e-9)
        demand_bps = bits / duration
        self.budget.admit(demand_bps)
        try:
            agent = self.net.endpoints[node]
            assert isinstance(agent, NodeAgent)
            return agent.take_blob(capture_id)
        finally:
            self.budget.release(demand_bps)
