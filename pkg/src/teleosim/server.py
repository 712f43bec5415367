"""Live teleoperation server.

The simulation loop owns one thread; every client connection gets a reader
and a writer thread. Communication crosses through bounded queues only:
commands in (drained once per tick, in arrival order), snapshots out (depth
8, dropping the oldest when a slow client falls behind, so the loop never
blocks). Snapshots go out at 30 Hz while the sim steps at 100 Hz.

The same port speaks two transports: the native length-prefixed JSON frames
(first byte is a digit) and RFC 6455 WebSocket text frames for browsers
(request starts with "GET ").
"""

from __future__ import annotations

import base64
import hashlib
import json
import socket
import struct
import threading
import time
from collections import deque

import numpy as np

from .mission import MissionRunner
from .wire import (
    KIND_COMMAND,
    KIND_ERROR,
    KIND_FEEDBACK,
    KIND_GOAL_EVENT,
    KIND_SNAPSHOT,
    FrameDecoder,
    WireError,
    WireMessage,
    decode_command,
    encode_message,
)

SNAPSHOT_QUEUE_DEPTH = 8
SNAPSHOT_DIVISOR = 3  # 100 Hz sim -> ~30 Hz wire (every 3rd step, 33 ms)
WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def build_snapshot_payload(runner: MissionRunner) -> dict:
    """Everything the UI renders; physics numbers come straight from the sim
    (clients must display them verbatim, never recompute)."""
    state = runner.state
    world = runner.world
    pose = world.base_pose(state)
    chains = {}
    for name in sorted(world.arms):
        fk = world.arm_fk(state, name)
        chains[name] = {
            "q": [float(v) for v in state.chains[name].q],
            "links": {
                link: [round(float(v), 6) for v in t.translation]
                for link, t in fk.items()
            },
            "ee": [round(float(v), 6) for v in world.ee_position(state, name)],
        }
    forces = {}
    for side, ch in runner.channels.items():
        forces[side] = {
            "active": ch.active,
            "control_point": ch.control_point,
            "vec": [float(v) for v in ch.last_force],
        }
    weights = runner.last_weights
    spot = runner.smoothed_spot
    goal = runner.bb.get("goal")
    return {
        "t": round(state.clock, 6),
        "base": {"x": pose[0], "y": pose[1], "yaw": pose[2], "z": pose[3]},
        "chains": chains,
        "forces": forces,
        "beta": [None if not np.isfinite(v) else float(v) for v in weights.beta],
        "w": [float(v) for v in weights.w],
        "f_bar": float(runner.transport.f_bar),
        "squeeze": float(state.hold.squeeze) if state.hold else 0.0,
        "sensed": {
            "left": [float(v) for v in state.sensed_forces.left],
            "right": [float(v) for v in state.sensed_forces.right],
        },
        "gripper": {"position": state.gripper.position, "effort": state.gripper.effort},
        "spot": None if spot is None else [float(v) for v in spot],
        "goal": None if goal is None else [float(v) for v in np.asarray(goal)],
        "active_actions": sorted(runner.active_tasks),
        "bt_status": runner.bt_status,
        "objects": {
            name: {
                "pos": [float(v) for v in obj.pose.translation],
                "half_extents": [float(v) for v in obj.half_extents],
                "grasped": obj.grasped,
            }
            for name, obj in sorted(state.objects.items())
        },
        "feedback": runner.last_feedback.as_dict(),
        "slip_count": state.slip_count,
        "goals_reached": runner.goals_reached,
    }


class _Client:
    def __init__(self, conn: socket.socket, addr, server: "TeleopServer"):
        self.conn = conn
        self.addr = addr
        self.server = server
        self.out_queue: deque = deque(maxlen=SNAPSHOT_QUEUE_DEPTH)
        self.out_ready = threading.Event()
        self.seq_out = 0
        self.websocket = False
        self.alive = True

    def next_seq(self) -> int:
        self.seq_out += 1
        return self.seq_out

    def enqueue(self, kind: str, payload: dict):
        # deque(maxlen) drops from the head once full: oldest-first
        self.out_queue.append((kind, payload))
        self.out_ready.set()

    def close(self):
        self.alive = False
        self.out_ready.set()
        try:
            self.conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.conn.close()


class TeleopServer:
    def __init__(self, runner: MissionRunner, host: str = "127.0.0.1", port: int = 8571,
                 rate: float = 1.0):
        self.runner = runner
        self.host = host
        self.port = port
        self.rate = rate  # 1.0 = real time, 0 = as fast as possible
        self.clients: list[_Client] = []
        self.clients_lock = threading.Lock()
        self.command_queue: deque = deque(maxlen=256)
        self.stop_event = threading.Event()
        self.listener: socket.socket | None = None
        self.threads: list[threading.Thread] = []
        self.step_count = 0
        self.goal_event_index = 0

    # -- lifecycle

    def start(self):
        self.listener = socket.create_server((self.host, self.port))
        self.listener.settimeout(0.2)
        self.port = self.listener.getsockname()[1]
        accept = threading.Thread(target=self._accept_loop, daemon=True, name="accept")
        sim = threading.Thread(target=self._sim_loop, daemon=True, name="sim")
        self.threads += [accept, sim]
        accept.start()
        sim.start()

    def stop(self):
        self.stop_event.set()
        with self.clients_lock:
            clients = list(self.clients)
        for client in clients:
            client.close()
        if self.listener is not None:
            self.listener.close()
        for thread in self.threads:
            thread.join(timeout=2.0)

    def serve_forever(self):
        self.start()
        try:
            while not self.stop_event.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    # -- sim loop

    def _sim_loop(self):
        dt = self.runner.dt
        next_deadline = time.monotonic()
        while not self.stop_event.is_set():
            while self.command_queue:
                event = self.command_queue.popleft()
                self.runner.submit_event(event)
            self.runner.tick_once()
            self.step_count += 1
            self._broadcast_goal_events()
            if self.step_count % SNAPSHOT_DIVISOR == 0:
                payload = build_snapshot_payload(self.runner)
                with self.clients_lock:
                    for client in self.clients:
                        client.enqueue(KIND_SNAPSHOT, payload)
            if self.rate > 0:
                next_deadline += dt / self.rate
                delay = next_deadline - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                else:
                    next_deadline = time.monotonic()

    def _broadcast_goal_events(self):
        events = self.runner.goal_events[self.goal_event_index :]
        self.goal_event_index = len(self.runner.goal_events)
        if not events:
            return
        with self.clients_lock:
            for client in self.clients:
                for event in events:
                    client.enqueue(KIND_GOAL_EVENT, event)

    # -- networking

    def _accept_loop(self):
        while not self.stop_event.is_set():
            try:
                conn, addr = self.listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            client = _Client(conn, addr, self)
            with self.clients_lock:
                self.clients.append(client)
            reader = threading.Thread(target=self._reader, args=(client,), daemon=True)
            writer = threading.Thread(target=self._writer, args=(client,), daemon=True)
            self.threads += [reader, writer]
            reader.start()
            writer.start()

    def _drop(self, client: _Client):
        client.close()
        with self.clients_lock:
            if client in self.clients:
                self.clients.remove(client)

    def _reader(self, client: _Client):
        try:
            first = client.conn.recv(4, socket.MSG_PEEK)
        except OSError:
            self._drop(client)
            return
        if first.startswith(b"GET "):
            if not self._websocket_handshake(client):
                self._drop(client)
                return
            client.websocket = True
            self._read_websocket(client)
        else:
            self._read_frames(client)

    def _handle_payload(self, client: _Client, data: bytes):
        decoder = FrameDecoder()
        for message, error in decoder.feed(data):
            self._dispatch(client, message, error)

    def _dispatch(self, client: _Client, message: WireMessage | None, error):
        if error is not None:
            client.enqueue(KIND_ERROR, {"message": str(error)})
            return
        if message.kind != KIND_COMMAND:
            client.enqueue(KIND_ERROR, {"message": f"unexpected {message.kind}"})
            return
        try:
            event = decode_command(message)
        except WireError as exc:
            client.enqueue(KIND_ERROR, {"message": str(exc)})
            return
        self.command_queue.append(event)

    def _read_frames(self, client: _Client):
        decoder = FrameDecoder()
        while client.alive and not self.stop_event.is_set():
            try:
                data = client.conn.recv(65536)
            except OSError:
                break
            if not data:
                break
            for message, error in decoder.feed(data):
                self._dispatch(client, message, error)
        self._drop(client)

    # -- plain frame writer / websocket writer

    def _writer(self, client: _Client):
        while client.alive and not self.stop_event.is_set():
            client.out_ready.wait(timeout=0.2)
            client.out_ready.clear()
            while True:
                try:
                    kind, payload = client.out_queue.popleft()
                except IndexError:
                    break
                msg = WireMessage(kind=kind, seq=client.next_seq(), payload=payload)
                try:
                    if client.websocket:
                        body = json.dumps(
                            {"kind": msg.kind, "seq": msg.seq, "payload": msg.payload},
                            separators=(",", ":"), sort_keys=True,
                        ).encode()
                        client.conn.sendall(_ws_text_frame(body))
                    else:
                        client.conn.sendall(encode_message(msg))
                except OSError:
                    self._drop(client)
                    return

    # -- websocket support

    def _websocket_handshake(self, client: _Client) -> bool:
        data = b""
        while b"\r\n\r\n" not in data:
            try:
                chunk = client.conn.recv(4096)
            except OSError:
                return False
            if not chunk:
                return False
            data += chunk
            if len(data) > 65536:
                return False
        headers = {}
        for line in data.split(b"\r\n")[1:]:
            if b":" in line:
                key, _, value = line.partition(b":")
                headers[key.strip().lower()] = value.strip()
        key = headers.get(b"sec-websocket-key")
        if key is None:
            return False
        accept = base64.b64encode(hashlib.sha1(key + WS_GUID.encode()).digest())
        response = (
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\n"
            b"Connection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept + b"\r\n\r\n"
        )
        try:
            client.conn.sendall(response)
        except OSError:
            return False
        return True

    def _read_websocket(self, client: _Client):
        buffer = b""
        while client.alive and not self.stop_event.is_set():
            try:
                data = client.conn.recv(65536)
            except OSError:
                break
            if not data:
                break
            buffer += data
            while True:
                frame, buffer = _ws_parse_frame(buffer)
                if frame is None:
                    break
                opcode, payload = frame
                if opcode == 8:  # close
                    client.alive = False
                    break
                if opcode == 9:  # ping -> pong
                    try:
                        client.conn.sendall(_ws_frame(10, payload))
                    except OSError:
                        client.alive = False
                    continue
                if opcode in (1, 2):
                    try:
                        message = WireMessage(**json.loads(payload.decode()))
                        self._dispatch(client, message, None)
                    except (ValueError, TypeError) as exc:
                        client.enqueue(KIND_ERROR, {"message": f"bad message: {exc}"})
        self._drop(client)


def _ws_frame(opcode: int, payload: bytes) -> bytes:
    header = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        header += bytes([n])
    elif n < 65536:
        header += bytes([126]) + struct.pack(">H", n)
    else:
        header += bytes([127]) + struct.pack(">Q", n)
    return header + payload


def _ws_text_frame(payload: bytes) -> bytes:
    return _ws_frame(1, payload)


def _ws_parse_frame(buffer: bytes):
    """Parse one client frame (masked); returns ((opcode, payload), rest)."""
    if len(buffer) < 2:
        return None, buffer
    opcode = buffer[0] & 0x0F
    masked = buffer[1] & 0x80
    length = buffer[1] & 0x7F
    offset = 2
    if length == 126:
        if len(buffer) < 4:
            return None, buffer
        length = struct.unpack(">H", buffer[2:4])[0]
        offset = 4
    elif length == 127:
        if len(buffer) < 10:
            return None, buffer
        length = struct.unpack(">Q", buffer[2:10])[0]
        offset = 10
    mask = b""
    if masked:
        if len(buffer) < offset + 4:
            return None, buffer
        mask = buffer[offset : offset + 4]
        offset += 4
    if len(buffer) < offset + length:
        return None, buffer
    payload = buffer[offset : offset + length]
    if masked:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return (opcode, payload), buffer[offset + length :]
