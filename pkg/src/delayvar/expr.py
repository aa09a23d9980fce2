"""Scalar expressions over the delayed-trajectory argument slots.

An expression is a parsed formula over a fixed vocabulary of named slots:

    t            current time
    q[i], qd[i]  state component i and its velocity
    qtau[i], qdtau[i]   delayed state / velocity, evaluated at t - tau
    u[a], utau[a]       control and delayed control (optimal-control mode)
    p[i]         costate component i
    lambda[j]    isoperimetric multiplier j

Lagrangians, constraint integrands, vector fields, symmetry generators and
gauge terms are all instances of one Expression type.  Evaluation works on
plain floats or elementwise on numpy arrays (one entry per grid node), and
derivatives with respect to any slot component are computed by forward-mode
dual arithmetic, exact up to floating round-off.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

Value = Union[float, np.ndarray]

FUNCTIONS = ("sin", "cos", "exp", "ln", "abs")

# Slot names legal in user-supplied sources, per parse mode.  The dimension of
# each name is fixed by the problem (n states, m controls).
_MODE_SLOTS = {
    "lagrangian": ("q", "qd", "qtau", "qdtau"),
    "ocp": ("q", "u", "qtau", "utau"),
}

_SLOT_KEY_RE = re.compile(r"^(?:t|(?:q|qd|qtau|qdtau|u|utau|p|lambda)\[\d+\])$")


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    """Syntax error; `position` is the 1-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position + 1})")
        self.position = position + 1


class EvalError(ExprError):
    """Evaluation failed (missing slot value, bad shapes)."""


class DomainError(EvalError):
    """Arithmetic left the expression's domain (division by zero, ...)."""

    def __init__(self, message: str, subtree: str):
        super().__init__(f"{message} in subexpression '{subtree}'")
        self.subtree = subtree


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Slot:
    name: str
    index: int | None  # None only for 't'

    @property
    def key(self) -> str:
        return self.name if self.index is None else f"{self.name}[{self.index}]"


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    lhs: "Node"
    rhs: "Node"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Node"


Node = Union[Num, Slot, Neg, Bin, Call]


def _collect_slots(node: Node, out: set[str]) -> None:
    if isinstance(node, Slot):
        out.add(node.key)
    elif isinstance(node, Neg):
        _collect_slots(node.arg, out)
    elif isinstance(node, Bin):
        _collect_slots(node.lhs, out)
        _collect_slots(node.rhs, out)
    elif isinstance(node, Call):
        _collect_slots(node.arg, out)


# ---------------------------------------------------------------------------
# Printing.  parse(print(e)) must reproduce the tree exactly, so parentheses
# are chosen from operator precedence: +,- (10) < *,/ (20) < ^ (30) < unary
# minus (35) < atoms (40).  Unary minus is a grammar 'base', hence -x^2 parses
# (and prints) as (-x)^2.

_PREC = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}


def _prec(node: Node) -> int:
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 35
    return 40


def format_node(node: Node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Slot):
        return node.key
    if isinstance(node, Neg):
        inner = format_node(node.arg)
        if _prec(node.arg) < 35:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Call):
        return f"{node.fn}({format_node(node.arg)})"
    if isinstance(node, Bin):
        lhs, rhs = format_node(node.lhs), format_node(node.rhs)
        if node.op in "+-":
            # left-associative chain; wrap right +/- to keep the shape
            if _prec(node.rhs) <= 10:
                rhs = f"({rhs})"
            return f"{lhs} {node.op} {rhs}"
        if node.op in "*/":
            if _prec(node.lhs) < 20:
                lhs = f"({lhs})"
            if _prec(node.rhs) <= 20:
                rhs = f"({rhs})"
            return f"{lhs}{node.op}{rhs}"
        # power: left operand must be a grammar base (atom or unary minus)
        if _prec(node.lhs) < 35:
            lhs = f"({lhs})"
        if _prec(node.rhs) < 30:
            rhs = f"({rhs})"
        return f"{lhs}^{rhs}"
    raise TypeError(f"not an AST node: {node!r}")


# ---------------------------------------------------------------------------
# Tokenizer / parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<sym>[-+*/^()\[\],]))"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            at = len(source) - len(stripped)
            raise ParseError(f"unexpected character {stripped[0]!r}", at)
        kind = match.lastgroup
        tokens.append((kind, match.group(kind), match.start(kind)))
        pos = match.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, slot_dims: Mapping[str, int]):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0
        self.slot_dims = slot_dims

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def next(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> None:
        kind, value, pos = self.next()
        if value != text:
            got = value if value else "end of input"
            raise ParseError(f"expected {text!r}, got {got!r}", pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, value, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {value!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.next()[1]
            node = Bin(op, node, self.factor())
        return node

    def factor(self) -> Node:
        node = self.base()
        if self.peek()[1] == "^":
            self.next()
            node = Bin("^", node, self.factor())
        return node

    def base(self) -> Node:
        kind, value, pos = self.next()
        if kind == "num":
            return Num(float(value))
        if value == "-":
            return Neg(self.base())
        if value == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            return self.name(value, pos)
        got = value if value else "end of input"
        raise ParseError(f"expected a value, got {got!r}", pos)

    def name(self, name: str, pos: int) -> Node:
        if self.peek()[1] == "(":
            if name not in FUNCTIONS:
                raise ParseError(f"unknown function {name!r}", pos)
            self.next()
            arg = self.expr()
            if self.peek()[1] == ",":
                raise ParseError(f"{name} takes exactly one argument", self.peek()[2])
            self.expect(")")
            return Call(name, arg)
        if self.peek()[1] == "[":
            if name not in self.slot_dims:
                raise ParseError(f"unknown identifier {name!r}", pos)
            self.next()
            kind, text, ipos = self.next()
            if kind != "num" or not text.isdigit():
                raise ParseError("slot index must be a nonnegative integer", ipos)
            index = int(text)
            self.expect("]")
            dim = self.slot_dims[name]
            if index >= dim:
                raise ParseError(
                    f"index {index} out of range for {name} (dimension {dim})", ipos
                )
            return Slot(name, index)
        if name == "t":
            return Slot("t", None)
        raise ParseError(f"unknown identifier {name!r}", pos)


# ---------------------------------------------------------------------------
# Evaluation.  _eval returns (value, partials) where partials maps slot keys
# to derivative values; only slots listed in `want` are tracked.


def _padd(a: dict, b: dict) -> dict:
    if not a:
        return dict(b)
    out = dict(a)
    for key, val in b.items():
        out[key] = out[key] + val if key in out else val
    return out


def _psub(a: dict, b: dict) -> dict:
    out = dict(a)
    for key, val in b.items():
        out[key] = out[key] - val if key in out else -val
    return out


def _pscale(p: dict, c: Value) -> dict:
    return {key: c * val for key, val in p.items()}


def _eval(node: Node, env: Mapping[str, Value], want: frozenset) -> tuple[Value, dict]:
    if isinstance(node, Num):
        return node.value, {}
    if isinstance(node, Slot):
        key = node.key
        try:
            value = env[key]
        except KeyError:
            raise EvalError(f"no value supplied for slot '{key}'") from None
        return value, {key: 1.0} if key in want else {}
    if isinstance(node, Neg):
        val, part = _eval(node.arg, env, want)
        return -val, {k: -v for k, v in part.items()}
    if isinstance(node, Call):
        val, part = _eval(node.arg, env, want)
        return _eval_call(node, val, part)
    if isinstance(node, Bin):
        lv, lp = _eval(node.lhs, env, want)
        rv, rp = _eval(node.rhs, env, want)
        op = node.op
        if op == "+":
            return lv + rv, _padd(lp, rp)
        if op == "-":
            return lv - rv, _psub(lp, rp)
        if op == "*":
            if not lp and not rp:
                return lv * rv, {}
            return lv * rv, _padd(_pscale(lp, rv), _pscale(rp, lv))
        if op == "/":
            if np.any(np.asarray(rv) == 0.0):
                raise DomainError("division by zero", format_node(node))
            if not lp and not rp:
                return lv / rv, {}
            part = _pscale(lp, 1.0 / rv)
            if rp:
                part = _psub(part, _pscale(rp, lv / (rv * rv)))
            return lv / rv, part
        return _eval_pow(node, lv, lp, rv, rp)
    raise TypeError(f"not an AST node: {node!r}")


def _eval_call(node: Call, val: Value, part: dict) -> tuple[Value, dict]:
    fn = node.fn
    if fn == "sin":
        return np.sin(val), _pscale(part, np.cos(val))
    if fn == "cos":
        return np.cos(val), _pscale(part, -np.sin(val))
    if fn == "exp":
        ev = np.exp(val)
        return ev, _pscale(part, ev)
    if fn == "ln":
        if np.any(np.asarray(val) <= 0.0):
            raise DomainError("ln of a non-positive value", format_node(node))
        return np.log(val), _pscale(part, 1.0 / val)
    if fn == "abs":
        if part and np.any(np.asarray(val) == 0.0):
            raise DomainError("derivative of abs at zero", format_node(node))
        return np.abs(val), _pscale(part, np.sign(val))
    raise EvalError(f"unknown function {fn!r}")


def _eval_pow(node: Bin, a: Value, pa: dict, b: Value, pb: dict) -> tuple[Value, dict]:
    tree = lambda: format_node(node)
    a_arr, b_arr = np.asarray(a), np.asarray(b)
    negative = a_arr < 0.0
    if np.any(negative & (np.mod(b_arr, 1.0) != 0.0)):
        raise DomainError("fractional power of negative base", tree())
    if np.any((a_arr == 0.0) & (b_arr < 0.0)):
        raise DomainError("zero raised to a negative power", tree())
    value = np.power(a, b)
    if not pa and not pb:
        return value, {}
    if pb:
        # general exponent: a^b = exp(b ln a) needs a > 0
        if np.any(a_arr <= 0.0):
            raise DomainError(
                "derivative of power with non-constant exponent needs positive base",
                tree(),
            )
        part = _pscale(pb, value * np.log(a))
        if pa:
            part = _padd(part, _pscale(pa, value * b / a))
        return value, part
    # constant exponent: d(a^b) = b a^(b-1) da
    if np.all(b_arr == 0.0):
        return value, {}
    if np.any((a_arr == 0.0) & (b_arr < 1.0)):
        raise DomainError("derivative of power at zero base", tree())
    return value, _pscale(pa, b * np.power(a, b - 1.0))


# ---------------------------------------------------------------------------
# Public types


@dataclass(frozen=True)
class DualValue:
    """Value of an expression together with its tracked partial derivatives."""

    value: float
    partials: Mapping[str, float]


@dataclass(frozen=True)
class EvalPoint:
    """Argument values for one evaluation of an expression.

    Vectors follow the problem dimensions; `lam` carries the isoperimetric
    multipliers bound to the lambda[j] slots.
    """

    t: float = 0.0
    q: Sequence[float] = ()
    qd: Sequence[float] = ()
    qtau: Sequence[float] = ()
    qdtau: Sequence[float] = ()
    u: Sequence[float] | None = None
    utau: Sequence[float] | None = None
    p: Sequence[float] | None = None
    lam: Sequence[float] | None = None

    def env(self) -> dict[str, float]:
        env = {"t": self.t}
        for name in ("q", "qd", "qtau", "qdtau", "u", "utau", "p"):
            values = getattr(self, name)
            if values is None:
                continue
            for i, v in enumerate(values):
                env[f"{name}[{i}]"] = v
        if self.lam is not None:
            for j, v in enumerate(self.lam):
                env[f"lambda[{j}]"] = v
        return env


def _as_env(x) -> Mapping[str, Value]:
    return x.env() if isinstance(x, EvalPoint) else x


@dataclass(frozen=True)
class Expression:
    """Immutable parsed expression; reentrant and safe for concurrent use."""

    ast: Node
    free_slots: frozenset[str]
    n: int = 1
    mode: str = "lagrangian"
    m: int = 0

    @classmethod
    def from_ast(cls, ast: Node, n: int, mode: str, m: int = 0) -> "Expression":
        slots: set[str] = set()
        _collect_slots(ast, slots)
        return cls(ast=ast, free_slots=frozenset(slots), n=n, mode=mode, m=m)

    def __str__(self) -> str:
        return format_node(self.ast)

    def evaluate(self, x) -> Value:
        value, _ = _eval(self.ast, _as_env(x), frozenset())
        return value

    def partial(self, slot: str, x) -> Value:
        if not _SLOT_KEY_RE.match(slot):
            raise EvalError(f"malformed slot name {slot!r}")
        if slot not in self.free_slots:
            return 0.0
        _, partials = _eval(self.ast, _as_env(x), frozenset((slot,)))
        return partials.get(slot, 0.0)

    def dual(self, x, slots: Sequence[str] | None = None) -> DualValue:
        want = frozenset(self.free_slots if slots is None else slots)
        value, partials = _eval(self.ast, _as_env(x), want)
        return DualValue(value=value, partials=partials)


def parse_expression(
    source: str, n: int = 1, mode: str = "lagrangian", m: int | None = None
) -> Expression:
    """Parse a formula into an Expression.

    `n` is the state dimension; `m` the control dimension (ocp mode only,
    defaults to n).  Raises ParseError with the offending offset for syntax
    errors, unknown identifiers, bad arity and out-of-range slot indices.
    """
    if mode not in _MODE_SLOTS:
        raise ValueError(f"mode must be one of {sorted(_MODE_SLOTS)}, got {mode!r}")
    if m is None:
        m = n
    dims = {}
    for name in _MODE_SLOTS[mode]:
        dims[name] = m if name in ("u", "utau") else n
    ast = _Parser(source, dims).parse()
    return Expression.from_ast(ast, n=n, mode=mode, m=m)


def evaluate(e: Expression, x) -> Value:
    return e.evaluate(x)


def partial(e: Expression, slot: str, x) -> Value:
    return e.partial(slot, x)


def dual_evaluate(e: Expression, x, slots: Sequence[str] | None = None) -> DualValue:
    return e.dual(x, slots)


# ---------------------------------------------------------------------------
# AST composition (augmented Lagrangians, Hamiltonians, slot renaming)


def zero_expression(n: int = 1, mode: str = "lagrangian", m: int = 0) -> Expression:
    return Expression.from_ast(Num(0.0), n=n, mode=mode, m=m)


def one_expression(n: int = 1, mode: str = "lagrangian", m: int = 0) -> Expression:
    return Expression.from_ast(Num(1.0), n=n, mode=mode, m=m)


def combine_augmented(L: Expression, g: Sequence[Expression]) -> Expression:
    """Build L - lambda[0]*g_0 - ... - lambda[k-1]*g_{k-1} as one tree."""
    ast = L.ast
    for j, gj in enumerate(g):
        ast = Bin("-", ast, Bin("*", Slot("lambda", j), gj.ast))
    return Expression.from_ast(ast, n=L.n, mode=L.mode, m=L.m)


def combine_hamiltonian(
    L: Expression, g: Sequence[Expression], phi: Sequence[Expression]
) -> Expression:
    """Build L - lambda.g + p.phi over the optimal-control slots."""
    ast = combine_augmented(L, g).ast
    for i, phi_i in enumerate(phi):
        ast = Bin("+", ast, Bin("*", Slot("p", i), phi_i.ast))
    return Expression.from_ast(ast, n=L.n, mode="ocp", m=L.m)


def rename_slots(e: Expression, mapping: Mapping[str, str], mode: str | None = None) -> Expression:
    """Rename slot families (e.g. qd -> u) keeping component indices."""

    def walk(node: Node) -> Node:
        if isinstance(node, Slot) and node.name in mapping:
            return Slot(mapping[node.name], node.index)
        if isinstance(node, Neg):
            return Neg(walk(node.arg))
        if isinstance(node, Bin):
            return Bin(node.op, walk(node.lhs), walk(node.rhs))
        if isinstance(node, Call):
            return Call(node.fn, walk(node.arg))
        return node

    return Expression.from_ast(walk(e.ast), n=e.n, mode=mode or e.mode, m=e.m)
