import json
import socket
import time
from pathlib import Path

import numpy as np
import pytest

from teleosim.cli import main as cli_main
from teleosim.mission import MissionRunner, TraceEvent, load_trace, run_mission
from teleosim.scenario import load_scenario, scenario_from_dict
from teleosim.wire import FrameDecoder, WireMessage, encode_message

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def minimal_scenario(**overrides):
    raw = {
        "seed": 9,
        "robot": {
            "arms": {
                "left": {"mount": [0.0, 0.15, 0.0], "links": [0.45, 0.4]},
                "right": {"mount": [0.0, -0.15, 0.0], "links": [0.45, 0.4]},
            },
            "initial_q": {"left": [0.3, -0.35, 1.1], "right": [-0.3, -0.35, 1.1]},
        },
        "scene": {"surfaces": [
            {"label": "floor", "point": [0, 0, 0], "normal": [0, 0, 1],
             "half_u": 30, "half_v": 30},
        ]},
        "perception": {"dwell_time": 0.0, "spot_noise_sigma": 0.0,
                       "force_noise_sigma": 0.0},
    }
    raw.update(overrides)
    return scenario_from_dict(raw)


class TestRunMission:
    def test_empty_trace_logs_every_step(self, tmp_path):
        report = run_mission(minimal_scenario(), None, [], tmp_path, max_time=1.0)
        assert report["completed"] is True
        assert report["steps"] == 100
        csv_lines = (tmp_path / "log.csv").read_text().splitlines()
        assert len(csv_lines) == 101  # header + one row per step

    def test_missing_scenario_file_errors(self, capsys):
        rc = cli_main(["run", "--scenario", "/nope/missing.yaml", "--out", "/tmp/x"])
        assert rc == 2
        assert "missing.yaml" in capsys.readouterr().err

    def test_missing_tree_file_errors(self, tmp_path, capsys):
        rc = cli_main([
            "run", "--scenario", str(SCENARIOS / "tracking_course.yaml"),
            "--tree", "/nope/tree.bt", "--out", str(tmp_path),
        ])
        assert rc == 2
        assert "tree.bt" in capsys.readouterr().err

    def test_report_written(self, tmp_path):
        report = run_mission(minimal_scenario(), None, [], tmp_path, max_time=0.5)
        on_disk = json.loads((tmp_path / "report.json").read_text())
        assert on_disk["steps"] == report["steps"]


class TestDeterminism:
    def test_replay_byte_identical(self, tmp_path):
        scenario_path = SCENARIOS / "shared_reach.yaml"
        trace_path = SCENARIOS / "traces" / "shared_reach_on.jsonl"
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            run_mission(
                load_scenario(scenario_path), None, load_trace(trace_path), out,
                max_time=3.0,
            )
            outputs.append((out / "log.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_seed_changes_noise(self, tmp_path):
        scenario = load_scenario(SCENARIOS / "transport.yaml")
        trace = load_trace(SCENARIOS / "traces" / "transport.jsonl")
        a = run_mission(scenario, None, trace, tmp_path / "a", seed=1, max_time=3.0)
        scenario = load_scenario(SCENARIOS / "transport.yaml")
        b = run_mission(scenario, None, trace, tmp_path / "b", seed=2, max_time=3.0)
        assert (tmp_path / "a/log.csv").read_bytes() != (tmp_path / "b/log.csv").read_bytes()
        assert a["steps"] == b["steps"]


class TestOperatorEvents:
    def test_toggle_resets_reference(self):
        runner = MissionRunner(minimal_scenario())
        runner.apply_event("tracker", {"side": "right", "pos": [0.2, 0.0, 0.0]})
        runner.apply_event("request", {"name": "toggle_right", "value": True})
        runner.tick_once()
        # reference was reset at the tracker's current pose: no force yet
        assert np.allclose(runner.channels["right"].last_force, 0.0)

    def test_cp_switch_counted_once(self):
        runner = MissionRunner(minimal_scenario())
        runner.apply_event("request", {"name": "cp_change", "side": "right", "target": "base"})
        runner.apply_event("request", {"name": "cp_change", "side": "right", "target": "base"})
        assert runner.cp_switches == 1

    def test_mirroring_drives_both_arms(self):
        runner = MissionRunner(minimal_scenario(), vtr_enabled=False)
        runner.apply_event("request", {"name": "toggle_right", "value": True})
        runner.apply_event("request", {"name": "mirror", "value": True})
        runner.apply_event("force", {"side": "right", "vec": [0.0, -1.0, 0.0]})
        q_left_before = runner.state.chains["left"].q.copy()
        for _ in range(50):
            runner.tick_once()
        q_left_after = runner.state.chains["left"].q
        assert not np.allclose(q_left_before, q_left_after)
        # mirrored force flips y: left shoulder yaw moves opposite the right
        assert runner.state.chains["left"].q[0] * runner.state.chains["right"].q[0] < 0

    def test_unknown_event_rejected(self):
        runner = MissionRunner(minimal_scenario())
        with pytest.raises(ValueError):
            runner.apply_event("warp", {})


class TestFeedbackIntegration:
    def test_toggle_vibrates_single_then_double(self):
        runner = MissionRunner(minimal_scenario())
        runner.submit_event({"kind": "request", "name": "toggle_right", "value": True})
        runner.tick_once()
        assert runner.last_feedback.vibration == [
            {"target": "right_forearm", "pattern": "single"}
        ]
        runner.submit_event({"kind": "request", "name": "toggle_right", "value": False})
        runner.tick_once()
        assert runner.last_feedback.vibration == [
            {"target": "right_forearm", "pattern": "double"}
        ]

    def test_forearm_squeeze_tracks_force(self):
        runner = MissionRunner(minimal_scenario())
        runner.apply_event("request", {"name": "toggle_right", "value": True})
        runner.apply_event("force", {"side": "right", "vec": [1.0, 0.0, 0.0]})
        runner.tick_once()
        assert runner.last_feedback.forearm_squeeze["right"] == pytest.approx(0.5)


class TestServer:
    def _connect(self, port):
        conn = socket.create_connection(("127.0.0.1", port), timeout=5.0)
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return conn

    def _recv_messages(self, conn, decoder, want, timeout=5.0):
        got = []
        deadline = time.monotonic() + timeout
        while len(got) < want and time.monotonic() < deadline:
            try:
                data = conn.recv(65536)
            except socket.timeout:
                continue
            if not data:
                break
            for message, error in decoder.feed(data):
                assert error is None
                got.append(message)
        return got

    def test_snapshot_stream_and_command_roundtrip(self):
        from teleosim.server import TeleopServer

        runner = MissionRunner(minimal_scenario())
        server = TeleopServer(runner, port=0, rate=0.0)
        server.start()
        try:
            conn = self._connect(server.port)
            conn.settimeout(0.5)
            decoder = FrameDecoder()
            first = self._recv_messages(conn, decoder, 3)
            assert len(first) >= 3
            assert all(m.kind == "state_snapshot" for m in first)
            seqs = [m.seq for m in first]
            assert seqs == sorted(seqs)

            cmd = WireMessage(kind="command", seq=1, payload={
                "type": "request", "name": "toggle_right", "value": True})
            conn.sendall(encode_message(cmd))
            cmd = WireMessage(kind="command", seq=2, payload={
                "type": "force", "side": "right", "vec": [1.0, 0.0, 0.0]})
            conn.sendall(encode_message(cmd))

            deadline = time.monotonic() + 5.0
            reflected = None
            while time.monotonic() < deadline:
                msgs = self._recv_messages(conn, decoder, 1)
                if not msgs:
                    continue
                payload = msgs[0].payload
                if payload["forces"]["right"]["vec"][0] == 1.0:
                    reflected = payload
                    break
            assert reflected is not None
            conn.close()
        finally:
            server.stop()

    def test_malformed_frame_gets_error_reply_connection_survives(self):
        from teleosim.server import TeleopServer

        runner = MissionRunner(minimal_scenario())
        server = TeleopServer(runner, port=0, rate=0.0)
        server.start()
        try:
            conn = self._connect(server.port)
            conn.settimeout(0.5)
            decoder = FrameDecoder()
            conn.sendall(b"9\n{\"kind\": ")  # declared length, broken JSON
            deadline = time.monotonic() + 5.0
            saw_error = False
            while time.monotonic() < deadline and not saw_error:
                for message in self._recv_messages(conn, decoder, 1):
                    if message.kind == "error":
                        saw_error = True
            assert saw_error
            # the connection still streams snapshots afterwards
            more = self._recv_messages(conn, decoder, 2)
            assert any(m.kind == "state_snapshot" for m in more)
            conn.close()
        finally:
            server.stop()
