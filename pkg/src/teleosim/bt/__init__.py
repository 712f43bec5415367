from .engine import (
    ActionParams,
    Blackboard,
    BtError,
    BtNode,
    Environment,
    Status,
    halt_subtree,
    tick,
)
from .parser import ParseError, parse_tree, serialize_tree

__all__ = [
    "ActionParams",
    "Blackboard",
    "BtError",
    "BtNode",
    "Environment",
    "ParseError",
    "Status",
    "halt_subtree",
    "parse_tree",
    "serialize_tree",
    "tick",
]
