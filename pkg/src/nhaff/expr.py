"""Small symbolic expression language for model coefficients.

Expressions are built from real literals, named variables, the binary
operators ``+ - * / ^``, unary minus and the functions ``sin cos tan sqrt
exp log``.  They are parsed from strings, evaluated against a name->float
binding, and differentiated exactly.  Trees are immutable, so evaluation
is re-entrant and expressions can be shared freely between threads.

Precedence is the usual one: ``^`` binds tightest (right associative),
then unary minus, then ``* /``, then ``+ -``.  In particular ``-x^2``
means ``-(x^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Bin",
    "Neg",
    "Call",
    "ExprError",
    "ParseError",
    "EvalError",
    "DomainError",
    "parse",
    "num",
    "var",
    "add",
    "sub",
    "mul",
    "div",
    "powx",
    "neg",
    "call",
    "FUNCTIONS",
]


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    """Syntax error; ``offset`` is the byte position in the source text."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class EvalError(ExprError):
    """Evaluation failed (unbound name, bad arity, ...)."""


class DomainError(EvalError):
    """Math domain error (log of non-positive, division by zero, ...)."""


def _checked_pow(b: float, e: float) -> float:
    if b == 0.0 and e < 0.0:
        raise DomainError("zero raised to a negative power")
    if b < 0.0 and not float(e).is_integer():
        raise DomainError("negative base with non-integer exponent")
    return b ** e


def _checked_sqrt(x: float) -> float:
    if x < 0.0:
        raise DomainError("sqrt of a negative number")
    return math.sqrt(x)


def _checked_log(x: float) -> float:
    if x <= 0.0:
        raise DomainError("log of a non-positive number")
    return math.log(x)


#: Functions the grammar accepts, mapped to their float implementations.
FUNCTIONS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "sqrt": _checked_sqrt,
    "exp": math.exp,
    "log": _checked_log,
}

_FUNC_DERIV_BUILDERS = {}  # filled in after the node classes exist


@dataclass(frozen=True)
class Expr:
    """Base node of the expression tree."""

    def eval(self, bindings: Mapping[str, float]) -> float:
        raise NotImplementedError

    def diff(self, name: str) -> "Expr":
        raise NotImplementedError

    def subst(self, mapping: Mapping[str, "Expr"]) -> "Expr":
        """Simultaneous substitution of variables by expressions."""
        raise NotImplementedError

    def variables(self) -> set[str]:
        return set(v.name for v in self._walk() if isinstance(v, Var))

    def _walk(self) -> Iterator["Expr"]:
        yield self

    def __str__(self) -> str:
        return _format(self, 0)


@dataclass(frozen=True)
class Num(Expr):
    value: float

    def eval(self, bindings):
        return self.value

    def diff(self, name):
        return Num(0.0)

    def subst(self, mapping):
        return self


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def eval(self, bindings):
        try:
            return float(bindings[self.name])
        except KeyError:
            raise EvalError(f"unbound name '{self.name}'") from None

    def diff(self, name):
        return Num(1.0 if name == self.name else 0.0)

    def subst(self, mapping):
        return mapping.get(self.name, self)


@dataclass(frozen=True)
class Bin(Expr):
    op: str  # one of + - * / ^
    lhs: Expr
    rhs: Expr

    def eval(self, bindings):
        a = self.lhs.eval(bindings)
        b = self.rhs.eval(bindings)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            if b == 0.0:
                raise DomainError(f"division by zero in '{self}'")
            return a / b
        # '^' -- keep in sync with the compiled code path (_pycode)
        try:
            if isinstance(self.rhs, Num) and _small_int(self.rhs.value) is not None:
                return a ** _small_int(self.rhs.value)
            return _checked_pow(a, b)
        except (DomainError, ZeroDivisionError, OverflowError) as exc:
            raise DomainError(f"{exc} in '{self}'") from None

    def diff(self, name):
        u, v = self.lhs, self.rhs
        du, dv = u.diff(name), v.diff(name)
        if self.op == "+":
            return add(du, dv)
        if self.op == "-":
            return sub(du, dv)
        if self.op == "*":
            return add(mul(du, v), mul(u, dv))
        if self.op == "/":
            return div(sub(mul(du, v), mul(u, dv)), mul(v, v))
        # power rule for constant exponents, exp/log form otherwise
        if isinstance(v, Num):
            return mul(mul(v, powx(u, Num(v.value - 1.0))), du)
        return mul(self, add(mul(dv, call("log", u)), div(mul(v, du), u)))

    def subst(self, mapping):
        return Bin(self.op, self.lhs.subst(mapping), self.rhs.subst(mapping))

    def _walk(self):
        yield self
        yield from self.lhs._walk()
        yield from self.rhs._walk()


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def eval(self, bindings):
        return -self.arg.eval(bindings)

    def diff(self, name):
        return neg(self.arg.diff(name))

    def subst(self, mapping):
        return Neg(self.arg.subst(mapping))

    def _walk(self):
        yield self
        yield from self.arg._walk()


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr

    def eval(self, bindings):
        x = self.arg.eval(bindings)
        try:
            return FUNCTIONS[self.fn](x)
        except DomainError as exc:
            raise DomainError(f"{exc} in '{self}'") from None
        except (ValueError, OverflowError) as exc:
            raise DomainError(f"{exc} in '{self}'") from None

    def diff(self, name):
        inner = _FUNC_DERIV_BUILDERS[self.fn](self.arg)
        return mul(inner, self.arg.diff(name))

    def subst(self, mapping):
        return Call(self.fn, self.arg.subst(mapping))

    def _walk(self):
        yield self
        yield from self.arg._walk()


_FUNC_DERIV_BUILDERS.update(
    {
        "sin": lambda u: call("cos", u),
        "cos": lambda u: neg(call("sin", u)),
        "tan": lambda u: div(Num(1.0), mul(call("cos", u), call("cos", u))),
        "sqrt": lambda u: div(Num(0.5), call("sqrt", u)),
        "exp": lambda u: call("exp", u),
        "log": lambda u: div(Num(1.0), u),
    }
)


# ---------------------------------------------------------------------------
# smart constructors (light constant folding; keeps derivative trees small)

def num(value: float) -> Num:
    return Num(float(value))


def var(name: str) -> Var:
    return Var(name)


def _is_num(e: Expr, value: float | None = None) -> bool:
    return isinstance(e, Num) and (value is None or e.value == value)


def add(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Bin("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_num(b, 0.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if _is_num(a, 0.0):
        return neg(b)
    return Bin("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Bin("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0):
        return Num(0.0)
    if _is_num(b, 1.0):
        return a
    return Bin("/", a, b)


def powx(a: Expr, b: Expr) -> Expr:
    if _is_num(b, 1.0):
        return a
    if _is_num(b, 0.0):
        return Num(1.0)
    return Bin("^", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def call(fn: str, arg: Expr) -> Expr:
    if fn not in FUNCTIONS:
        raise EvalError(f"unknown function '{fn}'")
    return Call(fn, arg)


# ---------------------------------------------------------------------------
# parsing

_NAME_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_NAME_CHARS = _NAME_START | set("0123456789")
_DIGITS = set("0123456789")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t\r\n":
            self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _expect(self, ch: str):
        if self._peek() != ch:
            raise ParseError(f"expected '{ch}'", self.pos)
        self.pos += 1

    def parse(self) -> Expr:
        e = self._expr()
        self._skip_ws()
        if self.pos != len(self.text):
            raise ParseError(f"unexpected '{self.text[self.pos]}'", self.pos)
        return e

    def _expr(self) -> Expr:
        e = self._term()
        while self._peek() in ("+", "-"):
            op = self.text[self.pos]
            self.pos += 1
            e = Bin(op, e, self._term())
        return e

    def _term(self) -> Expr:
        e = self._unary()
        while self._peek() in ("*", "/"):
            op = self.text[self.pos]
            self.pos += 1
            e = Bin(op, e, self._unary())
        return e

    def _unary(self) -> Expr:
        if self._peek() == "-":
            self.pos += 1
            return Neg(self._unary())
        return self._power()

    def _power(self) -> Expr:
        base = self._atom()
        if self._peek() == "^":
            self.pos += 1
            return Bin("^", base, self._unary())
        return base

    def _atom(self) -> Expr:
        ch = self._peek()
        if ch == "(":
            self.pos += 1
            e = self._expr()
            self._expect(")")
            return e
        if ch in _DIGITS or ch == ".":
            return self._number()
        if ch in _NAME_START:
            start = self.pos
            while self.pos < len(self.text) and self.text[self.pos] in _NAME_CHARS:
                self.pos += 1
            name = self.text[start:self.pos]
            if self._peek() == "(":
                if name not in FUNCTIONS:
                    raise ParseError(f"unknown function '{name}'", start)
                self.pos += 1
                arg = self._expr()
                self._expect(")")
                return Call(name, arg)
            return Var(name)
        if ch == "":
            raise ParseError("unexpected end of input", self.pos)
        raise ParseError(f"unexpected '{ch}'", self.pos)

    def _number(self) -> Num:
        start = self.pos
        text = self.text
        while self.pos < len(text) and text[self.pos] in _DIGITS:
            self.pos += 1
        if self.pos < len(text) and text[self.pos] == ".":
            self.pos += 1
            while self.pos < len(text) and text[self.pos] in _DIGITS:
                self.pos += 1
        if self.pos < len(text) and text[self.pos] in "eE":
            mark = self.pos
            self.pos += 1
            if self.pos < len(text) and text[self.pos] in "+-":
                self.pos += 1
            if self.pos < len(text) and text[self.pos] in _DIGITS:
                while self.pos < len(text) and text[self.pos] in _DIGITS:
                    self.pos += 1
            else:
                self.pos = mark  # not an exponent after all (e.g. "2e" -> "2", "e")
        try:
            return Num(float(text[start:self.pos]))
        except ValueError:
            raise ParseError("malformed number", start) from None


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree.

    Raises :class:`ParseError` (with a byte offset) on malformed input or
    an unknown function name.
    """
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# printing; parse(str(e)) evaluates identically to e

def _prec(e: Expr) -> float:
    if isinstance(e, Bin):
        return {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}[e.op]
    if isinstance(e, Neg):
        return 2.5
    if isinstance(e, Num) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 2.5
    return 10


def _format(e: Expr, parent: float) -> str:
    if isinstance(e, Num):
        s = repr(e.value)
    elif isinstance(e, Var):
        s = e.name
    elif isinstance(e, Call):
        s = f"{e.fn}({_format(e.arg, 0)})"
    elif isinstance(e, Neg):
        s = "-" + _format(e.arg, 2.5)
    elif isinstance(e, Bin):
        if e.op in "+-":
            s = f"{_format(e.lhs, 1)} {e.op} {_format(e.rhs, 1.5)}"
        elif e.op in "*/":
            s = f"{_format(e.lhs, 2)}{e.op}{_format(e.rhs, 2.5)}"
        else:  # ^ is right-associative and binds tighter than unary minus
            s = f"{_format(e.lhs, 4)}^{_format(e.rhs, 3)}"
    else:  # pragma: no cover
        raise TypeError(f"not an Expr: {e!r}")
    return f"({s})" if _prec(e) < parent else s


# ---------------------------------------------------------------------------
# code generation (used by the model layer to evaluate frames fast)

def _small_int(value: float) -> int | None:
    if value.is_integer() and abs(value) <= 64:
        return int(value)
    return None


def _pycode(e: Expr) -> str:
    """Python source for ``e``; variables are mangled to ``v_<name>``.

    The emitted code reproduces :meth:`Expr.eval` bit for bit: the same
    power/function helpers are used, plain ``/`` and integer powers are
    emitted where the interpreter takes the same fast path.
    """
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return "v_" + e.name
    if isinstance(e, Neg):
        return f"(-{_pycode(e.arg)})"
    if isinstance(e, Call):
        return f"_fn_{e.fn}({_pycode(e.arg)})"
    if isinstance(e, Bin):
        if e.op == "^":
            k = _small_int(e.rhs.value) if isinstance(e.rhs, Num) else None
            if k is not None:
                return f"({_pycode(e.lhs)})**{k}" if k >= 0 else f"({_pycode(e.lhs)})**({k})"
            return f"_pow({_pycode(e.lhs)}, {_pycode(e.rhs)})"
        return f"({_pycode(e.lhs)} {e.op} {_pycode(e.rhs)})"
    raise TypeError(f"not an Expr: {e!r}")


_CODEGEN_GLOBALS = {
    "_pow": _checked_pow,
    "_fn_sin": math.sin,
    "_fn_cos": math.cos,
    "_fn_tan": math.tan,
    "_fn_sqrt": _checked_sqrt,
    "_fn_exp": math.exp,
    "_fn_log": _checked_log,
}


def compile_batch(
    exprs: list[Expr],
    arg_names: list[str],
    constants: Mapping[str, float] | None = None,
) -> Callable[..., tuple[float, ...]]:
    """Compile a list of expressions into one positional-argument function.

    The returned callable takes ``len(arg_names)`` floats and returns a
    tuple with one value per expression (duplicate expressions are
    computed once).  ``constants`` are baked in as local bindings.
    """
    constants = dict(constants or {})
    slots: dict[str, str] = {}
    out: list[str] = []
    for e in exprs:
        src = _pycode(e)
        if src not in slots:
            slots[src] = f"t{len(slots)}"
        out.append(slots[src])
    lines = [f"def _batch({', '.join('v_' + a for a in arg_names)}):"]
    for name, value in constants.items():
        lines.append(f"    v_{name} = {value!r}")
    for src, tmp in slots.items():
        lines.append(f"    {tmp} = {src}")
    lines.append(f"    return ({', '.join(out)}{',' if len(out) == 1 else ''})")
    ns: dict = dict(_CODEGEN_GLOBALS)
    exec("\n".join(lines), ns)  # noqa: S102 - source is generated locally
    return ns["_batch"]
