"""Model files in, trajectories and reports out.

The model language::

    var x, y;
    param w = 2*pi;
    interval 0 .. 5;
    2*y*x'' - x*y'' + 2*x*x'^2 - x' + sin(t) = 0;
    y - x^2 = 0;

Derivatives are written with primes or ``diff(x, t, k)``.  Parameters are
folded into constants at parse time.  A JSON document with the keys
``variables``, ``parameters``, ``equations`` and ``interval`` is accepted as
an alternative; its equations use the same expression syntax.
"""

from __future__ import annotations

import io
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelSyntaxError, NonSquareError
from .expr import (FUNCTIONS, T, Jet, Point, add, as_expr, div, func, mul,
                   neg, power, to_str)

__all__ = ["DaeSystem", "Point", "Trajectory", "parse_model", "load_model",
           "validate_square", "format_model", "emit_trajectory_csv",
           "read_trajectory_csv", "emit_report_json", "load_point"]

RESERVED = {"t", "pi", "diff", "var", "param", "interval", *FUNCTIONS}


@dataclass
class DaeSystem:
    names: list
    equations: list
    params: dict = field(default_factory=dict)
    t0: float = 0.0
    t_end: float = 1.0

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def m(self) -> int:
        return len(self.equations)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def jet(self, name: str, order: int = 0) -> Jet:
        return Jet(self.index(name), order)


@dataclass
class Trajectory:
    names: list
    times: list
    states: list
    component: int = 0
    status: str = "ok"
    failure_time: float | None = None
    message: str = ""
    drift: list = field(default_factory=list)  # constraint residual per sample

    def column(self, name: str) -> np.ndarray:
        j = self.names.index(name)
        return np.array([row[j] for row in self.states])

    def __len__(self):
        return len(self.times)


# ------------------------------------------------------------------- lexer

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+|\#[^\n]*)
  | (?P<nl>\n)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<dots>\.\.)
  | (?P<op>[-+*/^(),;='])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list:
    toks = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ModelSyntaxError(f"unexpected character {text[pos]!r}",
                                   line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


# ------------------------------------------------------------------ parser

class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.names: list = []
        self.params: dict = {}

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        return ModelSyntaxError(msg, tok.line, tok.col)

    def accept(self, text):
        if self.tok.kind in ("op", "dots") and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")

    def name(self) -> str:
        if self.tok.kind != "name":
            raise self.error(f"expected an identifier, found {self.tok.text!r}")
        self.i += 1
        return self.toks[self.i - 1].text

    # statements
    def model(self):
        equations = []
        t0, t_end = 0.0, 1.0
        while self.tok.kind != "eof":
            word = self.tok.text if self.tok.kind == "name" else None
            nxt = self.toks[self.i + 1]
            is_decl = not (nxt.kind == "op" and nxt.text in "'=+-*/^(")
            if word == "var" and is_decl:
                self.i += 1
                self.declare_vars()
            elif word == "param" and is_decl:
                self.i += 1
                self.declare_param()
            elif word == "interval" and is_decl:
                self.i += 1
                t0 = self.constant()
                self.expect("..")
                t_end = self.constant()
                self.expect(";")
            else:
                equations.append(self.equation())
        return DaeSystem(list(self.names), equations, dict(self.params),
                         float(t0), float(t_end))

    def declare_vars(self):
        while True:
            tok = self.tok
            nm = self.name()
            if nm in RESERVED:
                raise self.error(f"{nm!r} is reserved", tok)
            if nm in self.names or nm in self.params:
                raise self.error(f"duplicate declaration of {nm!r}", tok)
            self.names.append(nm)
            if not self.accept(","):
                break
        self.expect(";")

    def declare_param(self):
        tok = self.tok
        nm = self.name()
        if nm in RESERVED:
            raise self.error(f"{nm!r} is reserved", tok)
        if nm in self.names or nm in self.params:
            raise self.error(f"duplicate declaration of {nm!r}", tok)
        self.expect("=")
        self.params[nm] = self.constant()
        self.expect(";")

    def constant(self) -> float:
        tok = self.tok
        e = self.expr()
        if e.jets or e.has_t():
            raise self.error("expected a constant expression", tok)
        return float(e.value)

    def equation(self):
        lhs = self.expr()
        self.expect("=")
        rhs = self.expr()
        self.expect(";")
        if rhs == as_expr(0):
            return lhs
        return add(lhs, neg(rhs))

    # expressions: sum > product > unary minus > power > postfix primes
    def expr(self):
        terms = [self.term()]
        while True:
            if self.accept("+"):
                terms.append(self.term())
            elif self.accept("-"):
                terms.append(neg(self.term()))
            else:
                break
        return add(*terms) if len(terms) > 1 else terms[0]

    def term(self):
        return self.term_tail(self.unary())

    def term_tail(self, e):
        factors = [e]
        while True:
            if self.accept("*"):
                factors.append(self.unary())
            elif self.accept("/"):
                e = mul(*factors) if len(factors) > 1 else factors[0]
                factors = [div(e, self.unary())]
            else:
                break
        return mul(*factors) if len(factors) > 1 else factors[0]

    def unary(self):
        if self.accept("-"):
            return neg(self.unary())
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self):
        base = self.primary()
        if self.accept("^"):
            tok = self.tok
            negative = self.accept("-")
            if self.tok.kind != "num":
                raise self.error("exponent must be an integer literal", tok)
            text = self.tok.text
            self.i += 1
            if not re.fullmatch(r"\d+", text) or negative:
                raise self.error(f"non-integer exponent {'-' if negative else ''}{text}", tok)
            return power(base, int(text))
        return base

    def primary(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            text = tok.text
            value = int(text) if re.fullmatch(r"\d+", text) else float(text)
            return as_expr(value)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind != "name":
            found = tok.text or "end of input"
            raise self.error(f"unexpected {found!r}")
        nm = self.name()
        if nm == "diff":
            return self.diff_call(tok)
        if nm in FUNCTIONS:
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return func(nm, arg)
        if nm == "t":
            return T
        if nm == "pi":
            return as_expr(math.pi)
        if nm in self.params:
            return as_expr(self.params[nm])
        if nm in self.names:
            order = 0
            while self.accept("'"):
                order += 1
            return Jet(self.names.index(nm), order)
        raise self.error(f"unknown identifier {nm!r}", tok)

    def diff_call(self, tok):
        self.expect("(")
        vtok = self.tok
        nm = self.name()
        if nm not in self.names:
            raise self.error(f"diff expects a declared variable, got {nm!r}", vtok)
        self.expect(",")
        if self.name() != "t":
            raise self.error("diff differentiates with respect to t only", tok)
        order = 1
        if self.accept(","):
            ktok = self.tok
            if ktok.kind != "num" or not re.fullmatch(r"\d+", ktok.text):
                raise self.error("derivative order must be an integer", ktok)
            self.i += 1
            order = int(ktok.text)
        self.expect(")")
        return Jet(self.names.index(nm), order)


def parse_model(text: str) -> DaeSystem:
    """Parse a model in the DSL, or in JSON when the text is a JSON object."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return _parse_json_model(stripped)
    return _Parser(text).model()


def parse_expression(text: str, names, params=None):
    p = _Parser(text)
    p.names = list(names)
    p.params = dict(params or {})
    e = p.expr()
    if p.tok.kind != "eof":
        raise p.error(f"unexpected {p.tok.text!r}")
    return e


def _parse_json_model(text: str) -> DaeSystem:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelSyntaxError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    names = list(doc.get("variables", []))
    if len(set(names)) != len(names):
        raise ModelSyntaxError("duplicate variable names")
    for nm in names:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", nm) or nm in RESERVED:
            raise ModelSyntaxError(f"invalid variable name {nm!r}")
    params = {}
    for nm, val in doc.get("parameters", {}).items():
        params[nm] = float(val) if isinstance(val, (int, float)) else \
            parse_expression(str(val), [], params).value
    equations = []
    for k, src in enumerate(doc.get("equations", [])):
        lhs, eq, rhs = src.partition("=")
        try:
            e = parse_expression(lhs, names, params)
            if eq:
                e = add(e, neg(parse_expression(rhs.rstrip().rstrip(";"), names, params)))
        except ModelSyntaxError as exc:
            raise ModelSyntaxError(f"equation {k + 1}: {exc}") from None
        equations.append(e)
    t0, t_end = doc.get("interval", [0.0, 1.0])
    return DaeSystem(names, equations, params, float(t0), float(t_end))


def load_model(path) -> DaeSystem:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def validate_square(sys: DaeSystem) -> None:
    if sys.m != sys.n or sys.n == 0:
        raise NonSquareError(sys.m, sys.n)


def format_model(sys: DaeSystem) -> str:
    """Render a system in the DSL; parameters are already folded in."""
    out = io.StringIO()
    if sys.names:
        out.write("var " + ", ".join(sys.names) + ";\n")
    for nm, val in sys.params.items():
        out.write(f"param {nm} = {val!r};\n")
    out.write(f"interval {sys.t0!r} .. {sys.t_end!r};\n")
    for e in sys.equations:
        out.write(to_str(e, sys.names) + " = 0;\n")
    return out.getvalue()


def load_point(path_or_doc, sys: DaeSystem) -> Point:
    """Read an initial point: ``{"t": t0, "values": {"x": 1, "x'": 0}}``."""
    if isinstance(path_or_doc, dict):
        doc = path_or_doc
    else:
        with open(path_or_doc, encoding="utf-8") as fh:
            doc = json.load(fh)
    values = {}
    for key, val in doc.get("values", {}).items():
        e = parse_expression(key, sys.names)
        if not isinstance(e, Jet):
            raise ModelSyntaxError(f"initial value key {key!r} is not a variable")
        values[e] = float(val)
    return Point(float(doc.get("t", sys.t0)), values)


# ------------------------------------------------------------------ output

def _g15(x: float) -> str:
    return f"{float(x):.15g}"


def emit_trajectory_csv(traj: Trajectory) -> str:
    lines = [",".join(["t", *traj.names, "component"])]
    for t, row in zip(traj.times, traj.states):
        lines.append(",".join([_g15(t), *map(_g15, row), str(traj.component)]))
    return "\n".join(lines) + "\n"


def read_trajectory_csv(text: str) -> Trajectory:
    rows = [ln.split(",") for ln in text.strip().splitlines()]
    names = rows[0][1:-1]
    times = [float(r[0]) for r in rows[1:]]
    states = [[float(v) for v in r[1:-1]] for r in rows[1:]]
    component = int(rows[1][-1]) if len(rows) > 1 else 0
    return Trajectory(names, times, states, component)


def _jsonable(obj):
    if isinstance(obj, float):
        if math.isinf(obj) and obj < 0:
            return None
        return obj
    if isinstance(obj, (np.floating,)):
        return _jsonable(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def emit_report_json(**sections) -> str:
    """Serialize a report; absent signature entries are written as null."""
    doc = {"schema": 1}
    doc.update(_jsonable(sections))
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"
