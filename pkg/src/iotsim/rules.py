"""Condition/action rule language for the edge and cloud rule engines.

Grammar (AND binds tighter than OR, both left-associative):

    rule    := "WHEN" cond ("FOR" INT "TICKS")? "THEN" action ("PRIORITY" INT)?
    cond    := term ("OR" term)*
    term    := factor ("AND" factor)*
    factor  := operand CMP NUMBER | "(" cond ")"
    operand := PROP_PATH | AGG "(" PROP_PATH "," INT ")"
    AGG     := MEAN | MIN | MAX | STDDEV | EWMA
    CMP     := ">" | ">=" | "<" | "<=" | "==" | "!="
    action  := "SET" "(" DEVICE "," RESOURCE "," VALUE ")"
             | "NOTIFY" "(" TOPIC "," STRING ")"
             | "ESCALATE" "(" STRING ")"

PROP_PATH is thing.property. VALUE is a number, a quoted string, or one of
on/off/true/false. EWMA's integer argument is a span n; the smoothing factor
is alpha = 2 / (n + 1). Comparisons are strict at boundaries (23.0 > 23 is
false). Rule files hold one rule per line; '#' starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

AGGREGATES = ("MEAN", "MIN", "MAX", "STDDEV", "EWMA")
KEYWORDS = {"WHEN", "FOR", "TICKS", "THEN", "PRIORITY", "OR", "AND",
            "SET", "NOTIFY", "ESCALATE", *AGGREGATES}
CMP_OPS = (">=", "<=", "==", "!=", ">", "<")


class RuleError(Exception):
    pass


class RuleSyntaxError(RuleError):
    def __init__(self, line: int, col: int, expected: list[str], found: str):
        self.line = line
        self.col = col
        self.expected = expected
        self.found = found
        super().__init__(
            f"line {line} col {col}: expected {' | '.join(expected)}, found {found}"
        )


class UnknownAggregate(RuleError):
    def __init__(self, line: int, col: int, name: str):
        self.line = line
        self.col = col
        self.name = name
        super().__init__(f"line {line} col {col}: unknown aggregate {name!r}")


class UnresolvedReference(RuleError):
    """Raised at link time when a rule names an unknown thing/device."""


# -- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class PropRef:
    thing: str
    prop: str

    def text(self) -> str:
        return f"{self.thing}.{self.prop}"


@dataclass(frozen=True)
class AggRef:
    fn: str
    ref: PropRef
    window: int

    def text(self) -> str:
        return f"{self.fn}({self.ref.text()}, {self.window})"


Operand = Union[PropRef, AggRef]


@dataclass(frozen=True)
class Comparison:
    operand: Operand
    op: str
    value: float

    def text(self) -> str:
        return f"{self.operand.text()} {self.op} {format_number(self.value)}"


@dataclass(frozen=True)
class And:
    terms: tuple  # of Comparison | Or

    def text(self) -> str:
        parts = []
        for t in self.terms:
            parts.append(f"({t.text()})" if isinstance(t, Or) else t.text())
        return " AND ".join(parts)


@dataclass(frozen=True)
class Or:
    terms: tuple  # of Comparison | And

    def text(self) -> str:
        return " OR ".join(t.text() for t in self.terms)


Condition = Union[Comparison, And, Or]


@dataclass(frozen=True)
class SetAction:
    device: str
    resource: str
    value: Union[bool, float, str]

    def text(self) -> str:
        return f"SET({self.device}, {self.resource}, {format_value(self.value)})"


@dataclass(frozen=True)
class NotifyAction:
    topic: str
    message: str

    def text(self) -> str:
        return f'NOTIFY({self.topic}, "{self.message}")'


@dataclass(frozen=True)
class EscalateAction:
    reason: str

    def text(self) -> str:
        return f'ESCALATE("{self.reason}")'


Action = Union[SetAction, NotifyAction, EscalateAction]


@dataclass(frozen=True)
class ParsedRule:
    condition: Condition
    action: Action
    for_ticks: int | None = None
    priority: int = 0

    def operands(self) -> list[Operand]:
        out: list[Operand] = []

        def walk(node):
            if isinstance(node, Comparison):
                out.append(node.operand)
            else:
                for t in node.terms:
                    walk(t)

        walk(self.condition)
        return out

    def text(self) -> str:
        parts = [f"WHEN {self.condition.text()}"]
        if self.for_ticks is not None:
            parts.append(f"FOR {self.for_ticks} TICKS")
        parts.append(f"THEN {self.action.text()}")
        if self.priority != 0:
            parts.append(f"PRIORITY {self.priority}")
        return " ".join(parts)


def format_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def format_value(v: Union[bool, float, str]) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, (int, float)):
        return format_number(float(v))
    return f'"{v}"'


# -- tokenizer ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<number>-?\d+(\.\d+)?([eE][-+]?\d+)?)
      | (?P<string>"[^"]*")
      | (?P<cmp>>=|<=|==|!=|>|<)
      | (?P<punct>[(),])
      | (?P<word>[A-Za-z_][A-Za-z0-9_-]*(\.[A-Za-z_][A-Za-z0-9_-]*)?)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # number | string | cmp | punct | word | end
    value: str
    line: int
    col: int


def tokenize(text: str, line: int = 1) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise RuleSyntaxError(line, pos + 1, ["a valid token"], repr(text[pos]))
        if m.lastgroup != "ws":
            tokens.append(Token(m.lastgroup, m.group(), line, pos + 1))
        pos = m.end()
    tokens.append(Token("end", "", line, len(text) + 1))
    return tokens


# -- parser ------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected: list[str]) -> RuleSyntaxError:
        tok = self.peek()
        found = tok.value if tok.kind != "end" else "end of rule"
        return RuleSyntaxError(tok.line, tok.col, expected, repr(found) if tok.kind != "end" else found)

    def expect_word(self, word: str) -> Token:
        tok = self.peek()
        if tok.kind != "word" or tok.value != word:
            raise self.fail([word])
        return self.next()

    def expect_punct(self, ch: str) -> Token:
        tok = self.peek()
        if tok.kind != "punct" or tok.value != ch:
            raise self.fail([repr(ch)])
        return self.next()

    def expect_int(self) -> int:
        tok = self.peek()
        if tok.kind != "number" or not re.fullmatch(r"-?\d+", tok.value):
            raise self.fail(["an integer"])
        self.next()
        return int(tok.value)

    def expect_number(self) -> float:
        tok = self.peek()
        if tok.kind != "number":
            raise self.fail(["a number"])
        self.next()
        return float(tok.value)

    def expect_string(self) -> str:
        tok = self.peek()
        if tok.kind != "string":
            raise self.fail(["a quoted string"])
        self.next()
        return tok.value[1:-1]

    def expect_ident(self, what: str) -> str:
        tok = self.peek()
        if tok.kind != "word" or tok.value in KEYWORDS or "." in tok.value:
            raise self.fail([what])
        self.next()
        return tok.value

    # grammar productions

    def rule(self) -> ParsedRule:
        self.expect_word("WHEN")
        condition = self.cond()
        for_ticks = None
        if self.peek().kind == "word" and self.peek().value == "FOR":
            self.next()
            for_ticks = self.expect_int()
            self.expect_word("TICKS")
        self.expect_word("THEN")
        action = self.action()
        priority = 0
        if self.peek().kind == "word" and self.peek().value == "PRIORITY":
            self.next()
            priority = self.expect_int()
        if self.peek().kind != "end":
            raise self.fail(["end of rule"])
        return ParsedRule(condition, action, for_ticks, priority)

    def cond(self) -> Condition:
        terms = [self.term()]
        while self.peek().kind == "word" and self.peek().value == "OR":
            self.next()
            terms.append(self.term())
        if len(terms) == 1:
            return terms[0]
        return Or(tuple(terms))

    def term(self) -> Condition:
        factors = [self.factor()]
        while self.peek().kind == "word" and self.peek().value == "AND":
            self.next()
            factors.append(self.factor())
        if len(factors) == 1:
            return factors[0]
        return And(tuple(factors))

    def factor(self) -> Condition:
        tok = self.peek()
        if tok.kind == "punct" and tok.value == "(":
            self.next()
            inner = self.cond()
            self.expect_punct(")")
            return inner
        operand = self.operand()
        op_tok = self.peek()
        if op_tok.kind != "cmp":
            raise self.fail(list(CMP_OPS))
        self.next()
        value = self.expect_number()
        return Comparison(operand, op_tok.value, value)

    def operand(self) -> Operand:
        tok = self.peek()
        if tok.kind != "word":
            raise self.fail(["a property path", "an aggregate"])
        nxt = self.tokens[self.i + 1]
        if "." not in tok.value and nxt.kind == "punct" and nxt.value == "(":
            # aggregate call
            if tok.value not in AGGREGATES:
                raise UnknownAggregate(tok.line, tok.col, tok.value)
            self.next()
            self.next()  # '('
            ref = self.prop_path()
            self.expect_punct(",")
            window = self.expect_int()
            self.expect_punct(")")
            return AggRef(tok.value, ref, window)
        return self.prop_path()

    def prop_path(self) -> PropRef:
        tok = self.peek()
        if tok.kind != "word" or "." not in tok.value or tok.value in KEYWORDS:
            raise self.fail(["thing.property"])
        self.next()
        thing, prop = tok.value.split(".", 1)
        return PropRef(thing, prop)

    def action(self) -> Action:
        tok = self.peek()
        if tok.kind != "word" or tok.value not in ("SET", "NOTIFY", "ESCALATE"):
            raise self.fail(["SET", "NOTIFY", "ESCALATE"])
        self.next()
        self.expect_punct("(")
        if tok.value == "SET":
            device = self.expect_ident("a device name")
            self.expect_punct(",")
            resource = self.expect_ident("a resource name")
            self.expect_punct(",")
            value = self.set_value()
            self.expect_punct(")")
            return SetAction(device, resource, value)
        if tok.value == "NOTIFY":
            topic = self.expect_ident("a topic segment")
            self.expect_punct(",")
            message = self.expect_string()
            self.expect_punct(")")
            return NotifyAction(topic, message)
        reason = self.expect_string()
        self.expect_punct(")")
        return EscalateAction(reason)

    def set_value(self) -> Union[bool, float, str]:
        tok = self.peek()
        if tok.kind == "number":
            self.next()
            return float(tok.value)
        if tok.kind == "string":
            self.next()
            return tok.value[1:-1]
        if tok.kind == "word" and tok.value in ("on", "true"):
            self.next()
            return True
        if tok.kind == "word" and tok.value in ("off", "false"):
            self.next()
            return False
        raise self.fail(["a number", "a quoted string", "on", "off", "true", "false"])


def parse_rule(text: str, line: int = 1) -> ParsedRule:
    """Parse one rule; raises RuleSyntaxError/UnknownAggregate with position."""
    return _Parser(tokenize(text, line)).rule()


def parse_rule_file(text: str) -> list[tuple[int, ParsedRule]]:
    """Parse a rule file: one rule per line, '#' comments, blank lines skipped.

    Returns (line number, rule) pairs; the first error aborts with its real
    line number.
    """
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        code = raw.split("#", 1)[0]
        if not code.strip():
            continue
        # keep leading whitespace so error columns match the source line
        out.append((lineno, parse_rule(code.rstrip(), line=lineno)))
    return out
