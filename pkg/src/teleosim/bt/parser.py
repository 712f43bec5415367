"""Declarative tree documents.

Grammar (indentation-free, whitespace-insensitive)::

    node     := control | leaf
    control  := kind [name] [ "(" params ")" ] "{" node* "}"
    leaf     := ("condition" | "action") "(" id [ "," params ] ")"
    params   := key "=" value ("," key "=" value)*

Kinds: sequence, fallback, parallel, reactive_sequence, infinite_loop,
condition, action. Vectors are semicolon-separated ("final_goal_distance =
-1;0;0"). Values containing spaces, commas or "=" must be double-quoted.
"#" starts a comment until end of line. Special keys on any node: ``M``
(parallel success threshold), ``_while`` (blackboard guard re-checked every
tick), ``_onSuccess`` (blackboard mutation, e.g. "track_requested=false").
"""

from __future__ import annotations

import re

from .engine import BtError, BtNode, CONTROL_KINDS, LEAF_KINDS

_TOKEN_RE = re.compile(
    r"""
    \s+
  | \#[^\n]*
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<punct>[{}(),=])
  | (?P<atom>[^\s{}(),="#]+)
    """,
    re.VERBOSE,
)


class ParseError(BtError):
    pass


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ParseError(f"unexpected character {text[pos]!r} at offset {pos}")
        pos = match.end()
        if match.lastgroup == "string":
            raw = match.group("string")[1:-1]
            tokens.append(("string", raw.replace('\\"', '"')))
        elif match.lastgroup == "punct":
            tokens.append(("punct", match.group("punct")))
        elif match.lastgroup == "atom":
            tokens.append(("atom", match.group("atom")))
    return tokens


def decode_value(raw: str):
    """Type a parameter value: bool, int, float, semicolon vector or string."""
    low = raw.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    if ";" in raw:
        parts = raw.split(";")
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            raise ParseError(f"malformed vector {raw!r}") from None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def encode_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ";".join(_format_float(v) for v in value)
    if isinstance(value, float):
        return _format_float(value)
    if isinstance(value, int):
        return str(value)
    text = str(value)
    if re.search(r'[\s{}(),="#]', text) or text == "":
        return '"' + text.replace('"', '\\"') + '"'
    return text


def _format_float(v: float) -> str:
    return repr(float(v))


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def next(self):
        tok = self.peek()
        if tok[0] is None:
            raise ParseError("unexpected end of document")
        self.pos += 1
        return tok

    def expect(self, value):
        kind, tok = self.next()
        if kind != "punct" or tok != value:
            raise ParseError(f"expected {value!r}, found {tok!r}")

    def parse_node(self) -> BtNode:
        kind_tok, kind = self.next()
        if kind_tok != "atom":
            raise ParseError(f"expected a node kind, found {kind!r}")
        if kind not in CONTROL_KINDS + LEAF_KINDS:
            raise ParseError(f"unknown node kind {kind!r}")
        if kind in LEAF_KINDS:
            return self.parse_leaf(kind)
        return self.parse_control(kind)

    def parse_leaf(self, kind: str) -> BtNode:
        self.expect("(")
        id_tok, leaf_id = self.next()
        if id_tok not in ("atom", "string"):
            raise ParseError(f"expected a {kind} id, found {leaf_id!r}")
        params = {}
        while True:
            tok_kind, tok = self.next()
            if tok_kind == "punct" and tok == ")":
                break
            if tok_kind == "punct" and tok == ",":
                key, value = self.parse_param()
                params[key] = value
            else:
                raise ParseError(f"expected ',' or ')' in {kind} leaf, found {tok!r}")
        node = BtNode(kind=kind, leaf_id=leaf_id)
        self.attach_params(node, params)
        return node

    def parse_control(self, kind: str) -> BtNode:
        name = ""
        params = {}
        tok_kind, tok = self.peek()
        if tok_kind == "atom":
            name = tok
            self.next()
            tok_kind, tok = self.peek()
        if tok_kind == "punct" and tok == "(":
            self.next()
            while True:
                key, value = self.parse_param()
                params[key] = value
                tok_kind, tok = self.next()
                if tok_kind == "punct" and tok == ")":
                    break
                if not (tok_kind == "punct" and tok == ","):
                    raise ParseError(f"expected ',' or ')' in parameter list, found {tok!r}")
        self.expect("{")
        children = []
        while True:
            tok_kind, tok = self.peek()
            if tok_kind == "punct" and tok == "}":
                self.next()
                break
            if tok_kind is None:
                raise ParseError("unterminated block: missing '}'")
            children.append(self.parse_node())
        m = params.pop("M", 0)
        node = BtNode(kind=kind, name=name, children=children, m=int(m) if m else 0)
        self.attach_params(node, params)
        return node

    def parse_param(self):
        key_kind, key = self.next()
        if key_kind != "atom":
            raise ParseError(f"expected a parameter name, found {key!r}")
        self.expect("=")
        val_kind, raw = self.next()
        if val_kind == "string":
            return key, raw
        if val_kind != "atom":
            raise ParseError(f"expected a value for {key!r}, found {raw!r}")
        return key, decode_value(raw)

    def attach_params(self, node: BtNode, params: dict):
        node.pre_while = params.pop("_while", "")
        node.post_on_success = params.pop("_onSuccess", "")
        node.params = params


def parse_tree(text: str) -> BtNode:
    """Parse a tree document; rejects trailing garbage."""
    tokens = _tokenize(text)
    if not tokens:
        raise ParseError("empty tree document")
    parser = _Parser(tokens)
    root = parser.parse_node()
    kind, tok = parser.peek()
    if kind is not None:
        raise ParseError(f"trailing garbage after tree root: {tok!r}")
    return root


def serialize_tree(node: BtNode, indent: int = 0) -> str:
    pad = "    " * indent
    params = []
    if node.kind == "parallel":
        params.append(("M", node.m))
    params.extend(sorted(node.params.items()))
    if node.pre_while:
        params.append(("_while", node.pre_while))
    if node.post_on_success:
        params.append(("_onSuccess", node.post_on_success))
    param_text = ", ".join(f"{k}={encode_value(v)}" for k, v in params)

    if node.kind in LEAF_KINDS:
        inner = node.leaf_id if not param_text else f"{node.leaf_id}, {param_text}"
        return f"{pad}{node.kind}({inner})"

    head = node.kind + (f" {node.name}" if node.name else "")
    if param_text:
        head += f" ({param_text})"
    lines = [f"{pad}{head} {{"]
    for child in node.children:
        lines.append(serialize_tree(child, indent + 1))
    lines.append(pad + "}")
    return "\n".join(lines)
