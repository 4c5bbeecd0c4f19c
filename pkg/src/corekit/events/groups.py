"""Preconfigured event groups and the derived-metric formula language.

Formulas support +, -, *, /, parentheses, numeric literals, event
names, and the reserved words `runtime` (seconds) and `clock` (Hz).
They are parsed into small tuple trees and evaluated directly; no
Python evaluation of user text takes place.

Group file format:

    group <NAME>
    use <EVENT>:<SLOT>
    metric <label> = <formula>
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from ..errors import EventSpecError

RESERVED = ("runtime", "clock")

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/()]))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise EventSpecError(
                "bad character %r in formula %r" % (text[pos], text)
            )
        if m.group("num") is not None:
            tokens.append(("num", m.group("num")))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name")))
        else:
            tokens.append(("op", m.group("op")))
        pos = m.end()
    return tokens


class _Parser:
    """Recursive descent over the token list; standard precedence."""

    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise EventSpecError("formula %r ends unexpectedly" % self.text)
        self.pos += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek() is not None:
            raise EventSpecError(
                "trailing tokens in formula %r" % self.text
            )
        return node

    def expr(self):
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            node = ("add" if op == "+" else "sub", node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            node = ("mul" if op == "*" else "div", node, self.factor())
        return node

    def factor(self):
        kind, value = self.take()
        if kind == "num":
            return ("num", float(value))
        if kind == "name":
            return ("var", value)
        if (kind, value) == ("op", "("):
            node = self.expr()
            if self.take() != ("op", ")"):
                raise EventSpecError("unbalanced parentheses in %r" % self.text)
            return node
        if (kind, value) == ("op", "-"):
            return ("neg", self.factor())
        raise EventSpecError("unexpected %r in formula %r" % (value, self.text))


def parse_formula(text: str):
    return _Parser(text).parse()


def formula_variables(node) -> set[str]:
    kind = node[0]
    if kind == "num":
        return set()
    if kind == "var":
        return {node[1]}
    out = set()
    for child in node[1:]:
        out |= formula_variables(child)
    return out


def eval_formula(node, env: dict[str, float]) -> float | None:
    """None signals an undefined value: a missing input or a division
    by zero.  None propagates through every operator."""
    kind = node[0]
    if kind == "num":
        return node[1]
    if kind == "var":
        return env.get(node[1])
    if kind == "neg":
        value = eval_formula(node[1], env)
        return None if value is None else -value
    left = eval_formula(node[1], env)
    right = eval_formula(node[2], env)
    if left is None or right is None:
        return None
    if kind == "add":
        return left + right
    if kind == "sub":
        return left - right
    if kind == "mul":
        return left * right
    if kind == "div":
        return None if right == 0 else left / right
    raise EventSpecError("corrupt formula node %r" % (node,))


@dataclass(frozen=True)
class Metric:
    name: str
    text: str
    ast: tuple


@dataclass
class EventGroup:
    """A named event selection plus its derived-metric formulas."""

    name: str
    assignments: list[tuple[str, str]]  # (event, slot) pairs
    metrics: list[Metric]

    def event_names(self) -> list[str]:
        return [event for event, _ in self.assignments]


def parse_groups(text: str, arch) -> dict[str, EventGroup]:
    """Parse a group file, validating names against the arch table."""
    groups: dict[str, EventGroup] = {}
    current: EventGroup | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("group "):
            name = line.split(None, 1)[1].strip()
            if name in groups:
                raise EventSpecError("duplicate group %s at line %d" % (name, lineno))
            current = EventGroup(name=name, assignments=[], metrics=[])
            groups[name] = current
            continue
        if current is None:
            raise EventSpecError("line %d appears before any group" % lineno)
        if line.startswith("use "):
            spec = line.split(None, 1)[1].strip()
            event_name, sep, slot_name = spec.partition(":")
            if not sep:
                raise EventSpecError(
                    "use line %d needs EVENT:SLOT, got %r" % (lineno, spec)
                )
            event = arch.event(event_name)
            slot = arch.slot(slot_name)
            if slot_name not in event.counters:
                raise EventSpecError(
                    "event %s cannot be counted on %s" % (event_name, slot_name)
                )
            if any(s == slot_name for _, s in current.assignments):
                raise EventSpecError(
                    "counter %s assigned twice in group %s" % (slot_name, current.name)
                )
            current.assignments.append((event_name, slot_name))
            continue
        if line.startswith("metric "):
            body = line[len("metric "):]
            name, sep, formula = body.partition("=")
            if not sep:
                raise EventSpecError("metric line %d lacks '='" % lineno)
            name = name.strip()
            formula = formula.strip()
            ast = parse_formula(formula)
            known = set(current.event_names()) | set(RESERVED)
            unknown = formula_variables(ast) - known
            if unknown:
                raise EventSpecError(
                    "metric %r in group %s references %s, which the group "
                    "does not measure"
                    % (name, current.name, ", ".join(sorted(unknown)))
                )
            current.metrics.append(Metric(name=name, text=formula, ast=ast))
            continue
        raise EventSpecError("unrecognized group file line %d: %r" % (lineno, raw))
    return groups


def load_arch_groups(arch) -> dict[str, EventGroup]:
    path = resources.files("corekit.events").joinpath(
        "data/groups_%s.txt" % arch.name
    )
    return parse_groups(path.read_text(encoding="utf-8"), arch)
