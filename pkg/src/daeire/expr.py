"""Immutable expression trees over jet variables.

A jet variable ``x_j^(k)`` is an independent algebraic coordinate standing
for the k-th derivative of the j-th dependent variable.  Expressions are
built through the smart constructors (``add``, ``mul``, ...), which only fold
constants and drop identities; no cancellation is attempted, so a term such
as ``x - x`` survives and structural degeneracy stays visible.
"""

from __future__ import annotations

import math
from numbers import Number

import numpy as np

from .errors import (EvaluationDivisionError, ExpressionError,
                     NonPolynomialError, UnassignedVariableError)

NEG_INF = float("-inf")
FUNCTIONS = ("sin", "cos", "tanh", "exp")

_MATH = {"sin": math.sin, "cos": math.cos, "tanh": math.tanh, "exp": math.exp}


class Expr:
    __slots__ = ("_hash", "_jets")

    def _key(self):
        raise NotImplementedError

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            h = hash((type(self).__name__,) + self._key())
            object.__setattr__(self, "_hash", h)
            return h

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or hash(self) != hash(other):
            return False
        return self._key() == other._key()

    def __setattr__(self, name, value):
        raise AttributeError("expressions are immutable")

    @property
    def jets(self) -> frozenset:
        """All jet variables occurring in the expression."""
        try:
            return self._jets
        except AttributeError:
            found = frozenset().union(*(c.jets for c in self.children))
            object.__setattr__(self, "_jets", found)
            return found

    @property
    def children(self) -> tuple:
        return ()

    def has_t(self) -> bool:
        return any(c.has_t() for c in self.children)

    # operator sugar, always through the smart constructors
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return add(self, neg(as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __repr__(self):
        return f"Expr({to_str(self)})"

    def __str__(self):
        return to_str(self)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        if not isinstance(value, Number) or isinstance(value, bool):
            raise ExpressionError(f"constant must be a real number, got {value!r}")
        if isinstance(value, float) and value.is_integer() and abs(value) < 2**53:
            value = int(value)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "_jets", frozenset())

    def _key(self):
        return (self.value,)


class TVar(Expr):
    """The independent variable t."""

    __slots__ = ()

    def __init__(self):
        object.__setattr__(self, "_jets", frozenset())

    def _key(self):
        return ()

    def has_t(self):
        return True


class Jet(Expr):
    """Jet coordinate x_var^(order); ``var`` is a 0-based variable index."""

    __slots__ = ("var", "order")

    def __init__(self, var: int, order: int = 0):
        if order < 0 or var < 0:
            raise ExpressionError(f"invalid jet variable ({var}, {order})")
        object.__setattr__(self, "var", int(var))
        object.__setattr__(self, "order", int(order))
        object.__setattr__(self, "_jets", frozenset((self,)))

    def _key(self):
        return (self.var, self.order)

    def __lt__(self, other):
        return (self.var, self.order) < (other.var, other.order)

    def shifted(self, k: int = 1) -> "Jet":
        return Jet(self.var, self.order + k)


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms):
        object.__setattr__(self, "terms", tuple(terms))

    def _key(self):
        return self.terms

    @property
    def children(self):
        return self.terms


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors):
        object.__setattr__(self, "factors", tuple(factors))

    def _key(self):
        return self.factors

    @property
    def children(self):
        return self.factors


class Pow(Expr):
    __slots__ = ("base", "exp")

    def __init__(self, base, exp: int):
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "exp", exp)

    def _key(self):
        return (self.base, self.exp)

    @property
    def children(self):
        return (self.base,)


class Neg(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg):
        object.__setattr__(self, "arg", arg)

    def _key(self):
        return (self.arg,)

    @property
    def children(self):
        return (self.arg,)


class Div(Expr):
    __slots__ = ("num", "den")

    def __init__(self, num, den):
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    def _key(self):
        return (self.num, self.den)

    @property
    def children(self):
        return (self.num, self.den)


class Func(Expr):
    __slots__ = ("name", "arg")

    def __init__(self, name: str, arg):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "arg", arg)

    def _key(self):
        return (self.name, self.arg)

    @property
    def children(self):
        return (self.arg,)


ZERO = Const(0)
ONE = Const(1)
T = TVar()


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, Number) and not isinstance(value, bool):
        return Const(value)
    raise ExpressionError(f"cannot convert {value!r} to an expression")


def is_const(e, value=None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


# ---------------------------------------------------------------- constructors

def add(*terms) -> Expr:
    flat = []
    total = 0
    for term in map(as_expr, terms):
        parts = term.terms if isinstance(term, Add) else (term,)
        for p in parts:
            if isinstance(p, Const):
                total += p.value
            else:
                flat.append(p)
    if total != 0 or not flat:
        flat.append(Const(total))
    return flat[0] if len(flat) == 1 else Add(flat)


def mul(*factors) -> Expr:
    flat = []
    coeff = 1
    for factor in map(as_expr, factors):
        parts = factor.factors if isinstance(factor, Mul) else (factor,)
        for p in parts:
            if isinstance(p, Const):
                coeff *= p.value
            else:
                flat.append(p)
    if coeff == 0:
        return ZERO
    if coeff != 1 or not flat:
        flat.insert(0, Const(coeff))
    return flat[0] if len(flat) == 1 else Mul(flat)


def power(base, k) -> Expr:
    base = as_expr(base)
    if isinstance(k, float) and k.is_integer():
        k = int(k)
    if not isinstance(k, int) or isinstance(k, bool) or k < 0:
        raise ExpressionError(f"exponent must be a non-negative integer, got {k!r}")
    if k == 0:
        return ONE
    if k == 1:
        return base
    if isinstance(base, Const):
        return Const(base.value ** k)
    return Pow(base, k)


def neg(arg) -> Expr:
    arg = as_expr(arg)
    if isinstance(arg, Const):
        return Const(-arg.value)
    if isinstance(arg, Neg):
        return arg.arg
    return Neg(arg)


def div(num, den) -> Expr:
    num, den = as_expr(num), as_expr(den)
    if isinstance(den, Const):
        if den.value == 0:
            raise ExpressionError("quotient with a literal zero denominator")
        if den.value == 1:
            return num
        if isinstance(num, Const):
            return Const(num.value / den.value)
    if is_const(num, 0):
        return ZERO
    return Div(num, den)


def func(name: str, arg) -> Expr:
    if name not in FUNCTIONS:
        raise ExpressionError(f"unsupported function {name!r}")
    arg = as_expr(arg)
    if isinstance(arg, Const):
        return Const(_MATH[name](arg.value))
    return Func(name, arg)


def sin(a):
    return func("sin", a)


def cos(a):
    return func("cos", a)


def tanh(a):
    return func("tanh", a)


def exp(a):
    return func("exp", a)


# ------------------------------------------------------------- differentiation

def _chain(e: Expr, d) -> Expr:
    """Differentiate ``e`` with ``d`` supplying the derivative of each leaf."""
    if isinstance(e, (Const, TVar, Jet)):
        return d(e)
    if isinstance(e, Add):
        return add(*(_chain(t, d) for t in e.terms))
    if isinstance(e, Mul):
        out = []
        fs = e.factors
        for i, f in enumerate(fs):
            df = _chain(f, d)
            if not is_const(df, 0):
                out.append(mul(*fs[:i], df, *fs[i + 1:]))
        return add(*out)
    if isinstance(e, Pow):
        db = _chain(e.base, d)
        return mul(e.exp, power(e.base, e.exp - 1), db)
    if isinstance(e, Neg):
        return neg(_chain(e.arg, d))
    if isinstance(e, Div):
        dn, dd = _chain(e.num, d), _chain(e.den, d)
        if is_const(dd, 0):
            return div(dn, e.den)
        return div(add(mul(dn, e.den), neg(mul(e.num, dd))), power(e.den, 2))
    if isinstance(e, Func):
        da = _chain(e.arg, d)
        if is_const(da, 0):
            return ZERO
        a = e.arg
        outer = {
            "sin": lambda: cos(a),
            "cos": lambda: neg(sin(a)),
            "exp": lambda: exp(a),
            "tanh": lambda: add(1, neg(power(tanh(a), 2))),
        }[e.name]()
        return mul(outer, da)
    raise ExpressionError(f"unknown node {type(e).__name__}")


def _total_leaf(e):
    if isinstance(e, Jet):
        return e.shifted(1)
    if isinstance(e, TVar):
        return ONE
    return ZERO


def total_derivative(e: Expr) -> Expr:
    """Formal total derivative D = d/dt + sum_k x^(k+1) d/dx^(k)."""
    return _chain(e, _total_leaf)


def partial_derivative(e: Expr, v: Jet) -> Expr:
    """Partial derivative treating every jet coordinate as independent."""
    if v not in e.jets:
        return ZERO
    return _chain(e, lambda leaf: ONE if leaf == v else ZERO)


def partial_t(e: Expr) -> Expr:
    return _chain(e, lambda leaf: ONE if isinstance(leaf, TVar) else ZERO)


# ------------------------------------------------------------------- queries

def highest_order(e: Expr, j: int):
    """Largest k with x_j^(k) in ``e``; NEG_INF when x_j is absent."""
    orders = [v.order for v in e.jets if v.var == j]
    return max(orders) if orders else NEG_INF


def is_polynomial_in_jets(e: Expr) -> bool:
    if isinstance(e, (Const, TVar, Jet)):
        return True
    if isinstance(e, Func):
        return not e.arg.jets
    if isinstance(e, Div):
        return not e.den.jets and is_polynomial_in_jets(e.num)
    return all(is_polynomial_in_jets(c) for c in e.children)


def degree(e: Expr) -> int:
    """Total degree in the jet coordinates of a jet-polynomial expression."""
    if isinstance(e, (Const, TVar)):
        return 0
    if isinstance(e, Jet):
        return 1
    if isinstance(e, Add):
        return max(degree(t) for t in e.terms)
    if isinstance(e, Mul):
        return sum(degree(f) for f in e.factors)
    if isinstance(e, Pow):
        return e.exp * degree(e.base)
    if isinstance(e, Neg):
        return degree(e.arg)
    if isinstance(e, Div):
        if e.den.jets:
            raise NonPolynomialError("jet variable in a denominator")
        return degree(e.num)
    if isinstance(e, Func):
        if e.arg.jets:
            raise NonPolynomialError(f"{e.name} applied to a jet variable")
        return 0
    raise ExpressionError(f"unknown node {type(e).__name__}")


def substitute(e: Expr, mapping: dict) -> Expr:
    """Replace leaves (jets or ``T``) by expressions, rebuilding bottom-up."""
    if e in mapping:
        return as_expr(mapping[e])
    if isinstance(e, (Const, TVar, Jet)):
        return e
    if not any(k in mapping for k in e.jets) and not (T in mapping and e.has_t()):
        return e
    if isinstance(e, Add):
        return add(*(substitute(t, mapping) for t in e.terms))
    if isinstance(e, Mul):
        return mul(*(substitute(f, mapping) for f in e.factors))
    if isinstance(e, Pow):
        return power(substitute(e.base, mapping), e.exp)
    if isinstance(e, Neg):
        return neg(substitute(e.arg, mapping))
    if isinstance(e, Div):
        return div(substitute(e.num, mapping), substitute(e.den, mapping))
    if isinstance(e, Func):
        return func(e.name, substitute(e.arg, mapping))
    raise ExpressionError(f"unknown node {type(e).__name__}")


def node_count(e: Expr) -> int:
    return 1 + sum(node_count(c) for c in e.children)


# ---------------------------------------------------------------- evaluation

class Point:
    """A point (t, X) in jet space."""

    __slots__ = ("t", "values")

    def __init__(self, t: float, values: dict | None = None):
        self.t = float(t)
        self.values = dict(values or {})

    def __getitem__(self, v: Jet) -> float:
        return self.values[v]

    def __contains__(self, v) -> bool:
        return v in self.values

    def with_values(self, extra: dict) -> "Point":
        vals = dict(self.values)
        vals.update(extra)
        return Point(self.t, vals)

    def __repr__(self):
        items = ", ".join(f"x{v.var}^({v.order})={val:.6g}"
                          for v, val in sorted(self.values.items()))
        return f"Point(t={self.t:.6g}, {items})"


def evaluate(e: Expr, p: Point) -> float:
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, TVar):
        return p.t
    if isinstance(e, Jet):
        try:
            return float(p.values[e])
        except KeyError:
            raise UnassignedVariableError(
                f"no value for x{e.var + 1}^({e.order})") from None
    if isinstance(e, Add):
        return math.fsum(evaluate(t, p) for t in e.terms)
    if isinstance(e, Mul):
        out = 1.0
        for f in e.factors:
            out *= evaluate(f, p)
        return out
    if isinstance(e, Pow):
        return evaluate(e.base, p) ** e.exp
    if isinstance(e, Neg):
        return -evaluate(e.arg, p)
    if isinstance(e, Div):
        den = evaluate(e.den, p)
        if abs(den) < 1e-300:
            raise EvaluationDivisionError("division by zero during evaluation")
        return evaluate(e.num, p) / den
    if isinstance(e, Func):
        return _MATH[e.name](evaluate(e.arg, p))
    raise ExpressionError(f"unknown node {type(e).__name__}")


# --------------------------------------------------------------- code emission

def _code(e: Expr, index: dict) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, TVar):
        return "t"
    if isinstance(e, Jet):
        try:
            return f"x[{index[e]}]"
        except KeyError:
            raise UnassignedVariableError(
                f"no slot for x{e.var + 1}^({e.order})") from None
    if isinstance(e, Add):
        return "(" + " + ".join(_code(t, index) for t in e.terms) + ")"
    if isinstance(e, Mul):
        return "(" + " * ".join(_code(f, index) for f in e.factors) + ")"
    if isinstance(e, Pow):
        return f"({_code(e.base, index)} ** {e.exp})"
    if isinstance(e, Neg):
        return f"(-{_code(e.arg, index)})"
    if isinstance(e, Div):
        return f"({_code(e.num, index)} / {_code(e.den, index)})"
    if isinstance(e, Func):
        return f"{e.name}({_code(e.arg, index)})"
    raise ExpressionError(f"unknown node {type(e).__name__}")


_NS = {"sin": np.sin, "cos": np.cos, "tanh": np.tanh, "exp": np.exp}


def lambdify(exprs, slots) -> callable:
    """Compile expressions to ``f(t, x) -> ndarray`` with x ordered as ``slots``.

    The generated code works for real or complex ``x``.
    """
    index = {v: i for i, v in enumerate(slots)}
    body = ", ".join(_code(e, index) for e in exprs)
    src = f"def _f(t, x):\n    return [{body}]\n"
    ns = dict(_NS)
    exec(compile(src, "<lambdify>", "exec"), ns)
    raw = ns["_f"]

    def f(t, x):
        x = np.asarray(x)
        vals = raw(t, x)
        dtype = np.result_type(x.dtype, float)
        if x.ndim > 1:
            # batched columns: x has shape (len(slots), batch)
            out = np.empty((len(vals),) + x.shape[1:], dtype=dtype)
            for i, v in enumerate(vals):
                out[i] = v
            return out
        return np.array(vals, dtype=dtype)

    f.source = src
    return f


def lambdify_jacobian(exprs, wrt, slots) -> callable:
    """Compile d(exprs)/d(wrt) to ``J(t, x) -> ndarray`` (rows x len(wrt)).

    A batched ``x`` of shape (len(slots), batch) gives (rows, cols, batch).
    """
    index = {v: i for i, v in enumerate(slots)}
    lines = ["def _J(t, x):",
             f"    J = zeros(({len(exprs)}, {len(wrt)}) + x.shape[1:], "
             "dtype=result_type(x.dtype, float))"]
    for i, e in enumerate(exprs):
        for j, v in enumerate(wrt):
            de = partial_derivative(e, v)
            if not is_const(de, 0):
                lines.append(f"    J[{i}, {j}] = {_code(de, index)}")
    lines.append("    return J")
    src = "\n".join(lines) + "\n"
    ns = dict(_NS, zeros=np.zeros, result_type=np.result_type)
    exec(compile(src, "<lambdify_jacobian>", "exec"), ns)
    raw = ns["_J"]

    def jac(t, x):
        return raw(t, np.asarray(x))

    jac.source = src
    return jac


# ------------------------------------------------------------------- display

def jet_name(v: Jet, names=None) -> str:
    base = names[v.var] if names is not None else f"x{v.var + 1}"
    if v.order <= 3:
        return base + "'" * v.order
    return f"diff({base}, t, {v.order})"


def _num(value) -> str:
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


# binding strength: sum < product < unary minus < power < atom
_PREC = {Add: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def _prec(e) -> int:
    if isinstance(e, Const) and e.value < 0:
        return 3
    return _PREC.get(type(e), 5)


def to_str(e: Expr, names=None) -> str:
    """Render in the model language; the parser reads it back unchanged."""
    if isinstance(e, Const):
        return _num(e.value)
    if isinstance(e, TVar):
        return "t"
    if isinstance(e, Jet):
        return jet_name(e, names)
    if isinstance(e, Add):
        parts = [_wrap(e.terms[0], 1, names)]
        for term in e.terms[1:]:
            if isinstance(term, Neg):
                parts.append(" - " + _wrap(term.arg, 2, names))
            elif isinstance(term, Const) and term.value < 0:
                parts.append(" - " + _num(-term.value))
            else:
                parts.append(" + " + _wrap(term, 2, names))
        return "".join(parts)
    if isinstance(e, Mul):
        first = _wrap(e.factors[0], 3, names)
        rest = [_wrap(f, 4, names, strict_neg=True) for f in e.factors[1:]]
        return "*".join([first] + rest)
    if isinstance(e, Div):
        return f"{_wrap(e.num, 2, names)}/{_wrap(e.den, 5, names)}"
    if isinstance(e, Pow):
        return f"{_wrap(e.base, 5, names)}^{e.exp}"
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, 4, names)
    if isinstance(e, Func):
        return f"{e.name}({to_str(e.arg, names)})"
    raise ExpressionError(f"unknown node {type(e).__name__}")


def _wrap(e, min_prec, names, strict_neg=False) -> str:
    s = to_str(e, names)
    p = _prec(e)
    if p < min_prec or (strict_neg and p == 3):
        return f"({s})"
    return s
