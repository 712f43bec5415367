#!/usr/bin/env python3
"""Generate the operator traces shipped under scenarios/traces/.

The reach traces are produced by closed-loop scripted operators (a P-law
from goal error to virtual force, plus control-point switching for the
no-sharing variant) recorded against the same deterministic sim that will
replay them. Re-running this script reproduces the files byte for byte.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from teleosim.mission import MissionRunner, TraceEvent, dump_trace  # noqa: E402
from teleosim.scenario import load_scenario  # noqa: E402

TRACES = ROOT / "scenarios" / "traces"

FORCE_MAX = 3.5  # N
FORCE_GAIN = 10.0  # N/m of goal error


def q4(vec):
    return [float(round(v, 4)) for v in vec]


def tracking_course_trace() -> list[TraceEvent]:
    """Laser spot path: 2 m along +x, one turn, 2 m along +y (4 m total)."""
    events = []

    def spot_at(t):
        if t <= 5.0:
            return 1.2 + 0.4 * t, 0.0
        if t <= 10.0:
            return 3.2, 0.4 * (t - 5.0)
        return 3.2, 2.0

    t = 0.0
    while t <= 10.0 + 1e-9:
        x, y = spot_at(t)
        events.append(
            TraceEvent(round(t, 2), "emitter",
                       {"pos": [round(x, 4), round(y, 4), 3.0], "dir": [0.0, 0.0, -1.0]})
        )
        t += 0.05
    return events


class ReachOperator:
    """Scripted operator for the three-goal reach missions."""

    def __init__(self, runner: MissionRunner, allow_switch: bool):
        self.runner = runner
        self.allow_switch = allow_switch
        self.mode = "arm"
        self.last_force = np.zeros(3)
        self.events: list[TraceEvent] = []

    def emit(self, kind, data):
        self.events.append(TraceEvent(round(self.runner.state.clock, 6), kind, data))
        self.runner.apply_event(kind, data)

    def force(self, vec):
        vec = np.asarray(q4(vec))
        if np.linalg.norm(vec - self.last_force) > 2e-3:
            self.emit("force", {"side": "right", "vec": q4(vec)})
            self.last_force = vec

    def step(self):
        runner = self.runner
        scenario = runner.scenario
        if runner.goals_reached >= len(scenario.goals):
            if np.any(self.last_force):
                self.emit("force", {"side": "right", "vec": [0.0, 0.0, 0.0]})
                self.last_force = np.zeros(3)
            return True
        goal = np.asarray(scenario.goals[runner.goals_reached])
        p_ee = runner.world.ee_position(runner.state, "right")
        base_x = runner.world.base_pose(runner.state)[0]
        # distance from the right shoulder (base_x, -0.15, 0.6) to the goal
        shoulder_dist = float(np.linalg.norm(
            [goal[0] - base_x, goal[1] + 0.15, goal[2] - 0.6]
        ))

        if self.allow_switch:
            if self.mode == "arm" and shoulder_dist > 0.74:
                self.force(np.zeros(3))
                self.emit("request", {"name": "cp_change", "side": "right", "target": "base"})
                self.mode = "base"
            elif self.mode == "base" and base_x >= goal[0] - 0.45:
                self.force(np.zeros(3))
                self.emit("request", {"name": "cp_change", "side": "right", "target": "right_ee"})
                self.mode = "arm"

        if self.mode == "base":
            err = np.array([goal[0] - 0.45 - base_x, 0.0, 0.0])
        else:
            err = goal - p_ee
        f = FORCE_GAIN * err
        norm = np.linalg.norm(f)
        if norm > FORCE_MAX:
            f *= FORCE_MAX / norm
        self.force(f)
        return False


def reach_trace(vtr_on: bool, allow_switch: bool, max_time: float = 60.0):
    scenario = load_scenario(ROOT / "scenarios" / "shared_reach.yaml")
    runner = MissionRunner(scenario, vtr_enabled=vtr_on)
    op = ReachOperator(runner, allow_switch=allow_switch)
    op.emit("request", {"name": "toggle_right", "value": True})
    done_at = None
    while runner.state.clock < max_time:
        done = op.step()
        runner.tick_once()
        if done and done_at is None:
            done_at = runner.state.clock
        if done_at is not None and runner.state.clock > done_at + 0.2:
            break
    return op.events, runner


def transport_trace() -> list[TraceEvent]:
    events = [
        TraceEvent(0.0, "request", {"name": "bimanual_grasp", "object": "block"}),
        TraceEvent(4.0, "object_vel", {"vec": [0.02, 0.0, 0.0]}),
        TraceEvent(8.0, "base_vel", {"linear": [0.0, 0.0, 0.0], "yaw_rate": 0.05}),
        TraceEvent(12.0, "base_vel", {"linear": [0.0, 0.0, 0.0], "yaw_rate": 0.0}),
        TraceEvent(29.0, "object_vel", {"vec": [0.0, 0.0, 0.0]}),
    ]
    return events


def main():
    TRACES.mkdir(parents=True, exist_ok=True)

    dump_trace(tracking_course_trace(), TRACES / "tracking_course.jsonl")
    print("tracking_course.jsonl written")

    events, runner = reach_trace(vtr_on=True, allow_switch=False)
    dump_trace(events, TRACES / "shared_reach_on.jsonl")
    print(f"shared_reach_on: goals={runner.goals_reached} switches={runner.cp_switches} "
          f"t={runner.state.clock:.2f} events={len(events)}")

    events, runner = reach_trace(vtr_on=False, allow_switch=True)
    dump_trace(events, TRACES / "shared_reach_switches.jsonl")
    print(f"shared_reach_switches: goals={runner.goals_reached} switches={runner.cp_switches} "
          f"t={runner.state.clock:.2f} events={len(events)}")

    events, runner = reach_trace(vtr_on=False, allow_switch=False, max_time=30.0)
    dump_trace(events, TRACES / "shared_reach_stuck.jsonl")
    print(f"shared_reach_stuck: goals={runner.goals_reached} switches={runner.cp_switches} "
          f"t={runner.state.clock:.2f} events={len(events)}")

    dump_trace(transport_trace(), TRACES / "transport.jsonl")
    print("transport.jsonl written")


if __name__ == "__main__":
    main()
