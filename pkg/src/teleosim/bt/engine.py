"""Behavior-tree interpreter.

Control-flow nodes: sequence and fallback (both with memory: while a child
is running, earlier finished children are not re-ticked), parallel with an
M-of-N success policy, reactive_sequence (re-ticks earlier children every
loop and halts a running child when an earlier one fails), and
infinite_loop (restarts its child forever).

Leaves are conditions (instant success/failure) and action modules with a
start/abort lifecycle: the first tick sends a start request to the
environment, later ticks poll it, and halting a running action delivers
exactly one abort.

Any node may carry a ``pre_while`` blackboard predicate (checked before
every tick; failing it halts the subtree and returns failure) and a
``post_on_success`` blackboard mutation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Status(str, enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    RUNNING = "running"

    def __str__(self):  # pragma: no cover - cosmetic
        return self.value


class BtError(ValueError):
    pass


CONTROL_KINDS = ("sequence", "fallback", "parallel", "reactive_sequence", "infinite_loop")
LEAF_KINDS = ("condition", "action")

TRACK = "Track"
REACH = "Reach"
MODE_SET = "Set"
MODE_KEEP = "Keep"
MODE_NONE = "None"


@dataclass
class ActionParams:
    """Validated controller-facing parameters of an action module."""

    command_mode: str = TRACK
    linear_mode: str = MODE_SET
    angular_mode: str = MODE_NONE
    goal_frame: str = ""
    final_goal_distance: tuple = (0.0, 0.0, 0.0)
    final_ref_orientation: float | tuple = 0.0
    linear_error_norm: float = 0.02
    angular_error_norm: float = 0.05
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command_mode not in (TRACK, REACH):
            raise BtError(f"command_mode must be Track or Reach, got {self.command_mode!r}")
        for mode in (self.linear_mode, self.angular_mode):
            if mode not in (MODE_SET, MODE_KEEP, MODE_NONE):
                raise BtError(f"linear/angular mode must be Set, Keep or None, got {mode!r}")
        if self.linear_mode == MODE_NONE and self.angular_mode == MODE_NONE:
            raise BtError("linear_mode and angular_mode cannot both be None")
        if self.linear_mode == MODE_SET and not self.linear_error_norm > 0:
            raise BtError("linear_error_norm must be > 0 when linear_mode is Set")
        if self.angular_mode == MODE_SET and not self.angular_error_norm > 0:
            raise BtError("angular_error_norm must be > 0 when angular_mode is Set")

    @staticmethod
    def from_dict(raw: dict) -> "ActionParams":
        known = {f for f in ActionParams.__dataclass_fields__ if f != "extra"}
        kwargs = {}
        extra = {}
        for key, value in raw.items():
            if key in known:
                if key == "final_goal_distance" and isinstance(value, (list, tuple)):
                    value = tuple(float(v) for v in value)
                kwargs[key] = value
            else:
                extra[key] = value
        return ActionParams(extra=extra, **kwargs)


class Blackboard(dict):
    """Shared key-value memory; plain dict with a get-with-default veneer."""

    def flag(self, key: str) -> bool:
        return bool(self.get(key, False))


@dataclass
class BtNode:
    kind: str
    name: str = ""
    children: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    leaf_id: str = ""
    m: int = 0  # parallel success threshold
    pre_while: str = ""
    post_on_success: str = ""
    # runtime state, excluded from structural equality
    cursor: int = field(default=0, compare=False, repr=False)
    started: bool = field(default=False, compare=False, repr=False)
    latched: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in CONTROL_KINDS + LEAF_KINDS:
            raise BtError(f"unknown node kind {self.kind!r}")
        if self.kind in LEAF_KINDS:
            if self.children:
                raise BtError(f"{self.kind} leaves cannot have children")
            if not self.leaf_id:
                raise BtError(f"{self.kind} leaf needs an id")
        if self.kind == "infinite_loop" and len(self.children) != 1:
            raise BtError("infinite_loop takes exactly one child")
        if self.kind == "parallel":
            n = len(self.children)
            if not 1 <= self.m <= max(n, 1):
                raise BtError(f"parallel M={self.m} out of range 1..{n}")

    def label(self) -> str:
        return self.name or self.leaf_id or self.kind

    def iter_nodes(self):
        yield self
        for child in self.children:
            yield from child.iter_nodes()


class Environment:
    """Leaf callback registry: conditions return bool, actions have a
    start/poll/abort lifecycle keyed by id."""

    def __init__(self, conditions=None, actions=None):
        self.conditions = dict(conditions or {})
        self.actions = dict(actions or {})

    def eval_condition(self, cond_id: str, params: dict, bb: Blackboard) -> bool:
        try:
            fn = self.conditions[cond_id]
        except KeyError:
            raise BtError(f"unknown condition id {cond_id!r}") from None
        return bool(fn(params, bb))

    def _action(self, action_id: str):
        try:
            return self.actions[action_id]
        except KeyError:
            raise BtError(f"unknown action id {action_id!r}") from None

    def start_action(self, action_id: str, params: dict, bb: Blackboard):
        self._action(action_id).start(params, bb)

    def poll_action(self, action_id: str, bb: Blackboard) -> Status:
        return self._action(action_id).poll(bb)

    def abort_action(self, action_id: str, bb: Blackboard):
        self._action(action_id).abort(bb)


def _check_pre(node: BtNode, bb: Blackboard) -> bool:
    expr = node.pre_while
    if not expr:
        return True
    negate = expr.startswith("!")
    key = expr[1:] if negate else expr
    value = bb.flag(key)
    return (not value) if negate else value


def _apply_post(node: BtNode, bb: Blackboard):
    if not node.post_on_success:
        return
    for clause in node.post_on_success.split(";"):
        clause = clause.strip()
        if not clause:
            continue
        if "=" not in clause:
            raise BtError(f"malformed post_on_success clause {clause!r}")
        key, raw = clause.split("=", 1)
        bb[key.strip()] = _parse_scalar(raw.strip())


def _parse_scalar(raw: str):
    low = raw.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def tick(node: BtNode, bb: Blackboard, env: Environment) -> Status:
    """Propagate one tick through the tree."""
    if not _check_pre(node, bb):
        halt_subtree(node, bb, env)
        return Status.FAILURE
    status = _tick_inner(node, bb, env)
    if status is Status.SUCCESS:
        _apply_post(node, bb)
    return status


def _tick_inner(node: BtNode, bb: Blackboard, env: Environment) -> Status:
    if node.kind == "condition":
        ok = env.eval_condition(node.leaf_id, node.params, bb)
        return Status.SUCCESS if ok else Status.FAILURE

    if node.kind == "action":
        if not node.started:
            env.start_action(node.leaf_id, node.params, bb)
            node.started = True
        status = env.poll_action(node.leaf_id, bb)
        if status is not Status.RUNNING:
            node.started = False
        return status

    if node.kind == "sequence":
        while node.cursor < len(node.children):
            status = tick(node.children[node.cursor], bb, env)
            if status is Status.RUNNING:
                return Status.RUNNING
            if status is Status.FAILURE:
                node.cursor = 0
                return Status.FAILURE
            node.cursor += 1
        node.cursor = 0
        return Status.SUCCESS

    if node.kind == "fallback":
        while node.cursor < len(node.children):
            status = tick(node.children[node.cursor], bb, env)
            if status is Status.RUNNING:
                return Status.RUNNING
            if status is Status.SUCCESS:
                node.cursor = 0
                return Status.SUCCESS
            node.cursor += 1
        node.cursor = 0
        return Status.FAILURE

    if node.kind == "reactive_sequence":
        for i, child in enumerate(node.children):
            status = tick(child, bb, env)
            if status is Status.FAILURE:
                for later in node.children[i + 1 :]:
                    halt_subtree(later, bb, env)
                return Status.FAILURE
            if status is Status.RUNNING:
                return Status.RUNNING
        return Status.SUCCESS

    if node.kind == "parallel":
        if not node.latched:
            node.latched = [None] * len(node.children)
        for i, child in enumerate(node.children):
            if node.latched[i] is None:
                status = tick(child, bb, env)
                if status is not Status.RUNNING:
                    node.latched[i] = status
        succ = sum(1 for s in node.latched if s is Status.SUCCESS)
        fail = sum(1 for s in node.latched if s is Status.FAILURE)
        n = len(node.children)
        if succ >= node.m:
            result = Status.SUCCESS
        elif fail > n - node.m:
            result = Status.FAILURE
        else:
            return Status.RUNNING
        for i, child in enumerate(node.children):
            if node.latched[i] is None:
                halt_subtree(child, bb, env)
        node.latched = []
        return result

    if node.kind == "infinite_loop":
        status = tick(node.children[0], bb, env)
        if status is not Status.RUNNING:
            _reset(node.children[0])
        return Status.RUNNING

    raise BtError(f"unhandled node kind {node.kind!r}")  # pragma: no cover


def halt_subtree(node: BtNode, bb: Blackboard, env: Environment):
    """Abort every running action underneath and reset control-flow state."""
    for sub in node.iter_nodes():
        if sub.kind == "action" and sub.started:
            env.abort_action(sub.leaf_id, bb)
            sub.started = False
        sub.cursor = 0
        sub.latched = []


def _reset(node: BtNode):
    """Clear control-flow memory without delivering aborts (used when a
    child finished on its own inside infinite_loop)."""
    for sub in node.iter_nodes():
        sub.cursor = 0
        sub.latched = []
        if sub.kind == "action":
            sub.started = False
