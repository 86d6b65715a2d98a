"""Pyretic-flavoured policy DSL: lexer, parser, pretty-printer and evaluator.

Grammar (whitespace and newlines are insignificant)::

    policy     := [ "final_policy" "=" ] parallel
    parallel   := sequential ( "+" sequential )*
    sequential := atom ( ">>" atom )*
    atom       := "(" parallel ")" | match | forward | "drop"
    match      := "match" "(" field "=" value ( "," field "=" value )* ")"
    forward    := "sdx" "." "fwd" "(" "participant" "." target ")"
    target     := "peers" "[" QUOTED_NAME "]" | "phys_ports" "[" INT "]"
    field      := "dstport" | "srcport" | "dstip" | "srcip"

``>>`` binds tighter than ``+``. Sequential composition distributes over
parallel composition, so every policy normalises to a flat list of terms,
each a conjunction of match predicates followed by exactly one action.
"""

from __future__ import annotations

import enum
import ipaddress
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .errors import PolicySyntaxError, UnknownPeer, UnsupportedField

PORT_FIELDS = ("dstport", "srcport")
IP_FIELDS = ("dstip", "srcip")
MATCH_FIELDS = PORT_FIELDS + IP_FIELDS

# probe attribute read by each match field
_PROBE_ATTR = {"dstport": "dstport", "srcport": "srcport", "dstip": "dst_ip", "srcip": "src_ip"}


@dataclass(frozen=True)
class MatchPredicate:
    field: str
    value: Union[int, ipaddress.IPv4Network]

    def __post_init__(self):
        if self.field in PORT_FIELDS:
            if isinstance(self.value, bool) or not isinstance(self.value, int):
                raise TypeError(f"{self.field} needs an integer port")
            if not 0 <= self.value <= 65535:
                raise ValueError(f"port {self.value} out of range 0-65535")
        elif self.field in IP_FIELDS:
            if not isinstance(self.value, ipaddress.IPv4Network):
                object.__setattr__(self, "value", ipaddress.IPv4Network(self.value))
        else:
            raise UnsupportedField(self.field)

    def matches(self, probe) -> bool:
        got = getattr(probe, _PROBE_ATTR[self.field])
        if self.field in PORT_FIELDS:
            return got == self.value
        return ipaddress.IPv4Address(got) in self.value

    def __str__(self):
        if self.field in PORT_FIELDS:
            return f"match({self.field}={self.value})"
        return f"match({self.field}='{self.value}')"


class ActionKind(enum.Enum):
    FWD_PARTICIPANT = "fwd_participant"
    FWD_PHYS_PORT = "fwd_phys_port"
    DROP = "drop"


@dataclass(frozen=True)
class PolicyAction:
    kind: ActionKind
    participant: Optional[str] = None
    port_index: Optional[int] = None

    def __post_init__(self):
        if self.kind is ActionKind.FWD_PARTICIPANT:
            ok = self.participant is not None and self.port_index is None
        elif self.kind is ActionKind.FWD_PHYS_PORT:
            ok = self.participant is None and isinstance(self.port_index, int) and self.port_index >= 0
        else:
            ok = self.participant is None and self.port_index is None
        if not ok:
            raise ValueError(f"malformed {self.kind.value} action")

    @classmethod
    def fwd_participant(cls, name):
        return cls(ActionKind.FWD_PARTICIPANT, participant=name)

    @classmethod
    def fwd_phys_port(cls, index):
        return cls(ActionKind.FWD_PHYS_PORT, port_index=index)

    @classmethod
    def drop(cls):
        return cls(ActionKind.DROP)

    def __str__(self):
        if self.kind is ActionKind.FWD_PARTICIPANT:
            return f"sdx.fwd(participant.peers['{self.participant}'])"
        if self.kind is ActionKind.FWD_PHYS_PORT:
            return f"sdx.fwd(participant.phys_ports[{self.port_index}])"
        return "drop"


@dataclass(frozen=True)
class Term:
    """A sequential chain of matches ending in one action."""

    matches: tuple
    action: PolicyAction
    span: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "matches", tuple(self.matches))

    def applies_to(self, probe) -> bool:
        return all(m.matches(probe) for m in self.matches)

    def port_constraint(self, name="dstport"):
        """Literal this term pins ``name`` to, None if unconstrained.

        Raises ValueError when two predicates demand different literals,
        i.e. the term can never match.
        """
        values = {m.value for m in self.matches if m.field == name}
        if len(values) > 1:
            raise ValueError("contradictory port predicates")
        return values.pop() if values else None

    def satisfiable(self) -> bool:
        try:
            self.port_constraint("dstport")
            self.port_constraint("srcport")
        except ValueError:
            return False
        return True


@dataclass(frozen=True)
class Parallel:
    children: tuple
    span: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("Parallel needs at least two children")


PolicyAst = Union[Term, Parallel]


@dataclass(frozen=True)
class ParticipantPolicies:
    """A participant's parsed outbound and inbound policies (either may be absent)."""

    outbound: Optional[PolicyAst] = None
    inbound: Optional[PolicyAst] = None


def terms(ast: Optional[PolicyAst]) -> tuple:
    """Flatten an AST into its terms, in source order."""
    if ast is None:
        return ()
    if isinstance(ast, Term):
        return (ast,)
    out = []
    for child in ast.children:
        out.extend(terms(child))
    return tuple(out)


def from_terms(items: Iterable[Term], span=None) -> PolicyAst:
    items = tuple(items)
    if not items:
        raise ValueError("a policy needs at least one term")
    if len(items) == 1:
        return items[0]
    return Parallel(items, span=span)


# -- lexer -------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<shr>>>)
  | (?P<punct>[()\[\].=+,])
  | (?P<int>\d+)
  | (?P<str>'[^'\n]*')
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # 'name', 'int', 'str', 'eof' or the punctuation text itself
    text: str
    start: int  # byte offsets
    end: int


def tokenize(text: str) -> list:
    tokens = []
    pos = 0
    byte_pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PolicySyntaxError(byte_pos, "a token", text[pos])
        chunk = m.group()
        nbytes = len(chunk.encode("utf-8"))
        kind = m.lastgroup
        if kind != "ws":
            if kind in ("shr", "punct"):
                kind = chunk
            tokens.append(Token(kind, chunk, byte_pos, byte_pos + nbytes))
        pos = m.end()
        byte_pos += nbytes
    tokens.append(Token("eof", "", byte_pos, byte_pos))
    return tokens


# -- parser ------------------------------------------------------------------

@dataclass
class _Partial:
    matches: tuple
    action: Optional[PolicyAction]
    start: int
    end: int


class _Parser:
    def __init__(self, text, peer_names):
        self.tokens = tokenize(text)
        self.i = 0
        self.peer_names = None if peer_names is None else frozenset(peer_names)

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind, text=None, what=None):
        tok = self.tok
        if tok.kind != kind or (text is not None and tok.text != text):
            raise PolicySyntaxError(tok.start, what or repr(text or kind), tok.text or "end of input")
        return self.advance()

    def parse(self):
        if self.tok.kind == "name" and self.tok.text == "final_policy":
            self.advance()
            self.expect("=")
        start = self.tok.start
        partials = self.parallel()
        self.expect("eof", what="'+', '>>' or end of input")
        for p in partials:
            if p.action is None:
                raise PolicySyntaxError(p.end, "an action terminating the chain")
        items = [Term(p.matches, p.action, span=(p.start, p.end)) for p in partials]
        return from_terms(items, span=(start, self.tokens[self.i - 2].end))

    def parallel(self):
        partials = self.sequential()
        while self.tok.kind == "+":
            self.advance()
            partials = partials + self.sequential()
        return partials

    def sequential(self):
        left = self.atom()
        while self.tok.kind == ">>":
            op = self.advance()
            for p in left:
                if p.action is not None:
                    raise PolicySyntaxError(op.start, "no composition after an action", ">>")
            right = self.atom()
            left = [
                _Partial(l.matches + r.matches, r.action, min(l.start, r.start), max(l.end, r.end))
                for l in left
                for r in right
            ]
        return left

    def atom(self):
        tok = self.tok
        if tok.kind == "(":
            self.advance()
            inner = self.parallel()
            self.expect(")")
            return inner
        if tok.kind == "name" and tok.text == "match":
            return [self.match()]
        if tok.kind == "name" and tok.text == "sdx":
            return [self.forward()]
        if tok.kind == "name" and tok.text == "drop":
            self.advance()
            return [_Partial((), PolicyAction.drop(), tok.start, tok.end)]
        raise PolicySyntaxError(tok.start, "'(', 'match', 'sdx.fwd' or 'drop'", tok.text or "end of input")

    def match(self):
        start = self.advance().start
        self.expect("(")
        preds = [self.predicate()]
        while self.tok.kind == ",":
            self.advance()
            preds.append(self.predicate())
        end = self.expect(")").end
        return _Partial(tuple(preds), None, start, end)

    def predicate(self):
        name = self.expect("name", what="a match field")
        if name.text not in MATCH_FIELDS:
            raise UnsupportedField(name.text)
        self.expect("=")
        tok = self.tok
        if name.text in PORT_FIELDS:
            self.expect("int", what="an integer port")
            value = int(tok.text)
            if value > 65535:
                raise PolicySyntaxError(tok.start, "a port in 0-65535", tok.text)
            return MatchPredicate(name.text, value)
        self.expect("str", what="a quoted IPv4 prefix")
        try:
            net = ipaddress.IPv4Network(tok.text[1:-1])
        except ValueError:
            raise PolicySyntaxError(tok.start, "a valid IPv4 prefix", tok.text) from None
        return MatchPredicate(name.text, net)

    def forward(self):
        start = self.advance().start
        self.expect(".")
        self.expect("name", "fwd")
        self.expect("(")
        self.expect("name", "participant")
        self.expect(".")
        target = self.expect("name", what="'peers' or 'phys_ports'")
        self.expect("[")
        if target.text == "peers":
            tok = self.expect("str", what="a quoted participant name")
            peer = tok.text[1:-1]
            if self.peer_names is not None and peer not in self.peer_names:
                raise UnknownPeer(peer)
            action = PolicyAction.fwd_participant(peer)
        elif target.text == "phys_ports":
            tok = self.expect("int", what="a port index")
            action = PolicyAction.fwd_phys_port(int(tok.text))
        else:
            raise PolicySyntaxError(target.start, "'peers' or 'phys_ports'", target.text)
        self.expect("]")
        end = self.expect(")").end
        return _Partial((), action, start, end)


def parse_policy(text: str, peer_names=None) -> PolicyAst:
    """Parse policy source into a flat AST.

    ``peer_names`` restricts which names ``participant.peers['X']`` may use;
    pass None to skip the check.
    """
    if not text.strip():
        raise PolicySyntaxError(0, "a non-empty policy")
    return _Parser(text, peer_names).parse()


def _term_str(term: Term) -> str:
    return " >> ".join([str(m) for m in term.matches] + [str(term.action)])


def pretty_print(ast: PolicyAst) -> str:
    if isinstance(ast, Term):
        return _term_str(ast)
    return " + ".join(f"({_term_str(t)})" for t in terms(ast))


def eval_policy(ast: Optional[PolicyAst], probe) -> frozenset:
    """Actions of every term whose predicates all match ``probe``."""
    return frozenset(t.action for t in terms(ast) if t.applies_to(probe))


def port_literals(asts: Iterable[Optional[PolicyAst]], name="dstport") -> list:
    """Sorted distinct literals used for ``name`` across the given policies."""
    found = set()
    for ast in asts:
        for t in terms(ast):
            found.update(m.value for m in t.matches if m.field == name)
    return sorted(found)


def ast_to_dict(ast: PolicyAst) -> dict:
    """Structured echo of an AST (used by the CLI)."""
    if isinstance(ast, Parallel):
        return {"parallel": [ast_to_dict(t) for t in ast.children], "span": ast.span}
    return {
        "matches": [{"field": m.field, "value": str(m.value) if m.field in IP_FIELDS else m.value}
                    for m in ast.matches],
        "action": {
            "kind": ast.action.kind.value,
            "participant": ast.action.participant,
            "port_index": ast.action.port_index,
        },
        "span": ast.span,
    }
