"""Scene definition language: a small infix expression grammar plus a
sectioned key/value file format.

Grammar sketch::

    file     := { section }
    section  := '[' name ']' { key '=' value }
    value    := expr | '(' expr {',' expr} ')' | nested tuples (domain)
    expr     := infix arithmetic over t, x1..xn with + - * / ^,
                unary minus, and sin cos exp log sqrt abs norm min max

Precedence is ``^`` (right-associative) over unary minus over ``* /``
over ``+ -``.  ``norm(x)`` takes the bare ambient point ``x`` and is the
only place the unindexed variable is legal.  Sections are ``[scene]``
(name, dim, time_window, domain), ``[interface]`` (phi, chart_width),
``[fields]`` (v_plus, v_minus), ``[densities]`` (rho_plus, rho_minus)
and optional ``[tolerances]``.

The parser is hand-written recursive descent with Pratt-style binding
powers; every diagnostic carries a 1-based line/column.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import EvalError, SceneSemanticError, SceneSyntaxError
from .fields import BulkField, DensityField, TwoPhaseScene, validate_scene
from .geometry import Box, InterfaceChart, MovingInterface

__all__ = [
    "Expression",
    "SceneDocument",
    "parse",
    "parse_expression",
    "pretty",
    "compile_document",
    "compile_scene_text",
]

_FUNCTIONS = {
    "sin": 1, "cos": 1, "exp": 1, "log": 1, "sqrt": 1, "abs": 1,
    "norm": 1, "min": 2, "max": 2,
}

_NUMPY_FUNC = {
    "sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs,
}

_MAX_DEPTH = 400


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expression:
    """Base class; nodes carry a (line, column) span for diagnostics."""

    span: tuple


@dataclass(frozen=True)
class Num(Expression):
    value: float


@dataclass(frozen=True)
class Var(Expression):
    name: str                     # "t", "x" (inside norm) or "x<k>"
    index: int = -1               # 1-based coordinate index for x<k>


@dataclass(frozen=True)
class Unary(Expression):
    op: str
    operand: Expression


@dataclass(frozen=True)
class Binary(Expression):
    op: str
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Call(Expression):
    func: str
    args: tuple


@dataclass(frozen=True)
class Tuple(Expression):
    items: tuple


# ---------------------------------------------------------------------------
# lexer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),=\[\]]))"
)


@dataclass
class _Token:
    kind: str          # num | ident | op | end
    text: str
    line: int
    col: int


def _tokenize(text: str, line: int, col0: int = 1):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            bad_at = pos + (len(text[pos:]) - len(stripped))
            raise SceneSyntaxError(
                f"unexpected character {stripped[0]!r}", line, col0 + bad_at)
        pos_tok = m.start() + len(m.group(0)) - len(m.group(0).lstrip())
        if m.lastgroup == "num":
            tokens.append(_Token("num", m.group("num"), line, col0 + pos_tok))
        elif m.lastgroup == "ident":
            tokens.append(_Token("ident", m.group("ident"), line, col0 + pos_tok))
        else:
            tokens.append(_Token("op", m.group("op"), line, col0 + pos_tok))
        pos = m.end()
    tokens.append(_Token("end", "", line, col0 + len(text)))
    return tokens


# ---------------------------------------------------------------------------
# Pratt parser
# ---------------------------------------------------------------------------

_LBP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_UNARY_BP = 30
_VAR_RE = re.compile(r"^x(\d+)$")


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0
        self.depth = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        t = self.tokens[self.pos]
        if t.kind != "end":
            self.pos += 1
        return t

    def expect_op(self, op: str):
        t = self.tok
        if t.kind != "op" or t.text != op:
            raise SceneSyntaxError(f"expected {op!r}", t.line, t.col)
        return self.advance()

    def _enter(self):
        self.depth += 1
        if self.depth > _MAX_DEPTH:
            t = self.tok
            raise SceneSyntaxError("expression too deeply nested", t.line, t.col)

    def _leave(self):
        self.depth -= 1

    def expression(self, rbp: int = 0) -> Expression:
        self._enter()
        try:
            left = self.nud()
            while self.tok.kind == "op" and _LBP.get(self.tok.text, 0) > rbp:
                left = self.led(left)
            return left
        finally:
            self._leave()

    def nud(self) -> Expression:
        t = self.advance()
        span = (t.line, t.col)
        if t.kind == "num":
            return Num(span, float(t.text))
        if t.kind == "ident":
            name = t.text
            if self.tok.kind == "op" and self.tok.text == "(":
                if name not in _FUNCTIONS:
                    raise SceneSemanticError(f"unknown function {name!r}",
                                             t.line, t.col)
                self.advance()
                args = [self.expression()]
                while self.tok.kind == "op" and self.tok.text == ",":
                    self.advance()
                    args.append(self.expression())
                self.expect_op(")")
                if len(args) != _FUNCTIONS[name]:
                    raise SceneSemanticError(
                        f"{name} takes {_FUNCTIONS[name]} argument(s), "
                        f"got {len(args)}", t.line, t.col)
                if name == "norm":
                    arg = args[0]
                    if not (isinstance(arg, Var) and arg.name == "x"):
                        raise SceneSemanticError(
                            "norm applies to the bare point variable x",
                            t.line, t.col)
                return Call(span, name, tuple(args))
            if name == "t":
                return Var(span, "t")
            if name == "x":
                return Var(span, "x")
            m = _VAR_RE.match(name)
            if m:
                return Var(span, name, int(m.group(1)))
            raise SceneSemanticError(f"unknown variable {name!r}", t.line, t.col)
        if t.kind == "op" and t.text == "-":
            return Unary(span, "-", self.expression(_UNARY_BP))
        if t.kind == "op" and t.text == "+":
            return self.expression(_UNARY_BP)
        if t.kind == "op" and t.text == "(":
            inner = self.expression()
            if self.tok.kind == "op" and self.tok.text == ",":
                items = [inner]
                while self.tok.kind == "op" and self.tok.text == ",":
                    self.advance()
                    items.append(self.expression())
                self.expect_op(")")
                return Tuple(span, tuple(items))
            self.expect_op(")")
            return inner
        raise SceneSyntaxError(
            f"expected a number, variable, function or '(', got {t.text!r}"
            if t.kind != "end" else "unexpected end of expression",
            t.line, t.col)

    def led(self, left: Expression) -> Expression:
        t = self.advance()
        span = (t.line, t.col)
        op = t.text
        if op == "^":
            right = self.expression(_LBP[op] - 1)   # right-associative
        else:
            right = self.expression(_LBP[op])
        return Binary(span, op, left, right)


def _parse_tokens(tokens, allow_tuple: bool) -> Expression:
    p = _Parser(tokens)
    # tuples only appear at value top level; nested tuples handled by nud
    expr = p.expression()
    t = p.tok
    if t.kind != "end":
        raise SceneSyntaxError(f"unexpected trailing input {t.text!r}",
                               t.line, t.col)
    if not allow_tuple:
        _reject_tuples(expr)
    return expr


def _reject_tuples(node: Expression):
    if isinstance(node, Tuple):
        raise SceneSemanticError("tuple not allowed here", *node.span)
    for child in _children(node):
        _reject_tuples(child)


def _children(node: Expression):
    if isinstance(node, Unary):
        return (node.operand,)
    if isinstance(node, Binary):
        return (node.left, node.right)
    if isinstance(node, (Call, Tuple)):
        return node.args if isinstance(node, Call) else node.items
    return ()


def parse_expression(text: str, line: int = 1, col0: int = 1,
                     allow_tuple: bool = False) -> Expression:
    """Parse one expression (or a parenthesized tuple when allowed)."""
    return _parse_tokens(_tokenize(text, line, col0), allow_tuple)


# ---------------------------------------------------------------------------
# evaluation and printing
# ---------------------------------------------------------------------------

def _walk(node: Expression):
    yield node
    for child in _children(node):
        yield from _walk(child)


def check_variables(expr: Expression, dim: int, allow_vars: bool = True):
    """Semantic pass: coordinate indices within dimension, bare ``x`` only
    under norm (parser enforces that), variables forbidden in constants,
    no tuples inside scalar expressions."""
    for node in _walk(expr):
        if isinstance(node, Tuple):
            raise SceneSemanticError("tuple not allowed inside an expression",
                                     *node.span)
        if isinstance(node, Var):
            if not allow_vars:
                raise SceneSemanticError(
                    f"variable {node.name!r} not allowed in a constant",
                    *node.span)
            if node.index > dim:
                raise SceneSemanticError(
                    f"variable {node.name} exceeds dimension {dim}",
                    *node.span)


def evaluate(expr: Expression, t, X):
    """Evaluate over a scalar time and point batch ``X`` of shape
    ``(..., n)``; raises :class:`EvalError` with the node location when a
    non-finite value appears."""
    X = np.asarray(X, dtype=float)
    with np.errstate(all="ignore"):
        return _eval(expr, t, X)


def _check_finite(value, node):
    if not np.all(np.isfinite(value)):
        raise EvalError(
            f"non-finite value in {_describe(node)}", *node.span)
    return value


def _describe(node) -> str:
    if isinstance(node, Binary):
        return f"operator {node.op!r}"
    if isinstance(node, Call):
        return f"function {node.func!r}"
    if isinstance(node, Unary):
        return "unary minus"
    return "expression"


def _eval(node: Expression, t, X):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name == "t":
            return t
        if node.name == "x":
            raise EvalError("bare x outside norm", *node.span)
        return X[..., node.index - 1]
    if isinstance(node, Unary):
        return _check_finite(-_eval(node.operand, t, X), node)
    if isinstance(node, Binary):
        a = _eval(node.left, t, X)
        b = _eval(node.right, t, X)
        if node.op == "+":
            out = a + b
        elif node.op == "-":
            out = a - b
        elif node.op == "*":
            out = a * b
        elif node.op == "/":
            out = np.divide(a, b)
        else:
            out = np.power(a, b)
        return _check_finite(out, node)
    if isinstance(node, Call):
        if node.func == "norm":
            return _check_finite(np.sqrt(np.sum(X * X, axis=-1)), node)
        args = [_eval(a, t, X) for a in node.args]
        if node.func == "min":
            out = np.minimum(*args)
        elif node.func == "max":
            out = np.maximum(*args)
        else:
            out = _NUMPY_FUNC[node.func](args[0])
        return _check_finite(out, node)
    raise EvalError("tuple cannot be evaluated as a scalar", *node.span)


def _prec(node: Expression) -> int:
    if isinstance(node, Binary):
        return _LBP[node.op]
    if isinstance(node, Unary):
        return _UNARY_BP
    return 100


def pretty(node: Expression) -> str:
    """Minimal-parenthesis rendering that reparses to an equivalent AST."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        inner = pretty(node.operand)
        if _prec(node.operand) < _UNARY_BP:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Binary):
        lhs, rhs = pretty(node.left), pretty(node.right)
        p = _LBP[node.op]
        if node.op == "^":
            if _prec(node.left) <= p:
                lhs = f"({lhs})"
            if _prec(node.right) < p:
                rhs = f"({rhs})"
        else:
            if _prec(node.left) < p:
                lhs = f"({lhs})"
            if _prec(node.right) <= p:
                rhs = f"({rhs})"
        return f"{lhs} {node.op} {rhs}"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(pretty(a) for a in node.args)})"
    if isinstance(node, Tuple):
        return f"({', '.join(pretty(a) for a in node.items)})"
    raise TypeError(node)


# ---------------------------------------------------------------------------
# scene document
# ---------------------------------------------------------------------------

_SECTIONS = {
    "scene": {"name", "dim", "time_window", "domain"},
    "interface": {"phi", "chart_width"},
    "fields": {"v_plus", "v_minus"},
    "densities": {"rho_plus", "rho_minus"},
    "tolerances": {"tol_interface", "tol_noslip", "tol_transmission",
                   "tol_grazing", "newton_tol", "chart_tol"},
}
_REQUIRED = {
    "scene": {"name", "dim", "time_window", "domain"},
    "interface": {"phi"},
    "fields": {"v_plus", "v_minus"},
    "densities": {"rho_plus", "rho_minus"},
}


@dataclass
class SceneDocument:
    name: str
    dim: int
    time_window: tuple
    domain: Box
    phi: Expression
    v_plus: list
    v_minus: list
    rho_plus: Expression
    rho_minus: Expression
    chart_width: Optional[float] = None
    tolerances: dict = field(default_factory=dict)


_SECTION_RE = re.compile(r"^\[([A-Za-z_][A-Za-z_0-9]*)\]\s*$")


def parse(text: str) -> SceneDocument:
    """Parse and structurally validate a scene document."""
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    raw: dict = {}
    section = None
    for lineno, full_line in enumerate(text.splitlines(), start=1):
        line = full_line.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        m = _SECTION_RE.match(line.strip())
        if m:
            section = m.group(1)
            if section not in _SECTIONS:
                raise SceneSemanticError(f"unknown section [{section}]",
                                         lineno, 1)
            raw.setdefault(section, {})
            continue
        if section is None:
            raise SceneSyntaxError("content before first [section] header",
                                   lineno, 1)
        if "=" not in line:
            raise SceneSyntaxError("expected 'key = value'", lineno, 1)
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _SECTIONS[section]:
            raise SceneSemanticError(
                f"unknown key {key!r} in section [{section}]", lineno, 1)
        if key in raw[section]:
            raise SceneSemanticError(f"duplicate key {key!r}", lineno, 1)
        col0 = full_line.index("=") + 2
        raw[section][key] = (value, lineno, col0)

    for sec, req in _REQUIRED.items():
        if sec not in raw:
            raise SceneSemanticError(f"missing section [{sec}]")
        missing = req - set(raw[sec])
        if missing:
            raise SceneSemanticError(
                f"missing key(s) {sorted(missing)} in section [{sec}]")

    def expr_of(sec, key, allow_tuple=False):
        value, line, col = raw[sec][key]
        return parse_expression(value, line, col, allow_tuple=allow_tuple)

    name = raw["scene"]["name"][0].strip()
    if not name:
        raise SceneSemanticError("scene name must be nonempty",
                                 raw["scene"]["name"][1], 1)

    dim_expr = expr_of("scene", "dim")
    dim_val = _const(dim_expr, "dim")
    if dim_val != int(dim_val) or int(dim_val) < 2:
        raise SceneSemanticError("dim must be an integer >= 2",
                                 *dim_expr.span)
    dim = int(dim_val)

    tw_expr = expr_of("scene", "time_window", allow_tuple=True)
    if not isinstance(tw_expr, Tuple) or len(tw_expr.items) != 2:
        raise SceneSemanticError("time_window must be a pair (a, b)",
                                 *tw_expr.span)
    a, b = (_const(e, "time_window") for e in tw_expr.items)
    if not a < b:
        raise SceneSemanticError("time_window must satisfy a < b",
                                 *tw_expr.span)

    dom_expr = expr_of("scene", "domain", allow_tuple=True)
    if not isinstance(dom_expr, Tuple) or len(dom_expr.items) != dim:
        raise SceneSemanticError(
            f"domain must list {dim} coordinate ranges", *dom_expr.span)
    lo, hi = [], []
    for item in dom_expr.items:
        if not isinstance(item, Tuple) or len(item.items) != 2:
            raise SceneSemanticError("each domain range must be a pair",
                                     *item.span)
        lo_k, hi_k = (_const(e, "domain") for e in item.items)
        if not lo_k < hi_k:
            raise SceneSemanticError("domain range must satisfy lo < hi",
                                     *item.span)
        lo.append(lo_k)
        hi.append(hi_k)
    domain = Box(np.array(lo), np.array(hi))

    phi = expr_of("interface", "phi")
    check_variables(phi, dim)

    def vector_of(key):
        e = expr_of("fields", key, allow_tuple=True)
        if not isinstance(e, Tuple):
            raise SceneSemanticError(
                f"{key} must be a {dim}-component tuple", *e.span)
        if len(e.items) != dim:
            raise SceneSemanticError(
                f"{key} has {len(e.items)} components, scene dim is {dim}",
                *e.span)
        for comp in e.items:
            check_variables(comp, dim)
        return list(e.items)

    v_plus = vector_of("v_plus")
    v_minus = vector_of("v_minus")

    rho_plus = expr_of("densities", "rho_plus")
    rho_minus = expr_of("densities", "rho_minus")
    check_variables(rho_plus, dim)
    check_variables(rho_minus, dim)

    chart_width = None
    tolerances = {}
    if "interface" in raw and "chart_width" in raw["interface"]:
        chart_width = _const(expr_of("interface", "chart_width"), "chart_width")
        if chart_width <= 0:
            raise SceneSemanticError("chart_width must be positive")
    for key in raw.get("tolerances", {}):
        tolerances[key] = _const(expr_of("tolerances", key), key)

    return SceneDocument(name=name, dim=dim, time_window=(a, b), domain=domain,
                         phi=phi, v_plus=v_plus, v_minus=v_minus,
                         rho_plus=rho_plus, rho_minus=rho_minus,
                         chart_width=chart_width, tolerances=tolerances)


def _const(expr: Expression, what: str) -> float:
    check_variables(expr, dim=0, allow_vars=False)
    if isinstance(expr, Tuple):
        raise SceneSemanticError(f"{what} must be a scalar constant",
                                 *expr.span)
    return float(evaluate(expr, 0.0, np.zeros(1)))


# ---------------------------------------------------------------------------
# compilation to a TwoPhaseScene
# ---------------------------------------------------------------------------

def _scalar_closure(expr: Expression) -> Callable:
    def f(t, X):
        return evaluate(expr, t, X)

    return f


def _vector_closure(components) -> Callable:
    def f(t, X):
        X = np.asarray(X, dtype=float)
        vals = [np.broadcast_to(np.asarray(evaluate(c, t, X), dtype=float),
                                X.shape[:-1]) for c in components]
        return np.stack(vals, axis=-1)

    return f


def compile_document(doc: SceneDocument, validate: bool = True) -> TwoPhaseScene:
    """Compile a parsed scene document into evaluable fields.

    Level-set derivatives use the finite-difference defaults of
    :class:`MovingInterface` (user expressions carry no analytic
    derivatives).  Growth constants are estimated from domain samples with
    a 1.5x margin; densities are required to be strictly positive on the
    sample grid.
    """
    iface = MovingInterface(
        dim=doc.dim,
        phi=_scalar_closure(doc.phi),
        time_window=doc.time_window,
        domain=doc.domain,
        name=doc.name,
    )
    width = doc.chart_width
    if width is None:
        width = 0.1 * doc.domain.diameter()
    tol = dict(doc.tolerances)
    chart = InterfaceChart(
        iface, width,
        newton_tol=tol.pop("newton_tol", 1e-12),
        chart_tol=tol.pop("chart_tol", 1e-8),
    )

    vp = _vector_closure(doc.v_plus)
    vm = _vector_closure(doc.v_minus)
    rp = _scalar_closure(doc.rho_plus)
    rm = _scalar_closure(doc.rho_minus)

    # sample grid for positivity and growth estimates
    side = 6 if doc.dim > 2 else 12
    axes = [np.linspace(doc.domain.lo[k], doc.domain.hi[k], side)
            for k in range(doc.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=-1)
    a, b = doc.time_window
    times = np.linspace(a + 1e-3 * (b - a), b - 1e-3 * (b - a), 5)

    growth = {"plus": 0.0, "minus": 0.0}
    for t in times:
        for key, dens in (("rho_plus", rp), ("rho_minus", rm)):
            vals = np.atleast_1d(dens(float(t), grid))
            if np.any(vals <= 0.0):
                raise SceneSemanticError(
                    f"{key} is not strictly positive on the sample grid")
        for key, fld in (("plus", vp), ("minus", vm)):
            v = np.atleast_2d(fld(float(t), grid))
            ratio = np.linalg.norm(v, axis=-1) / (1.0 + np.linalg.norm(grid, axis=-1))
            growth[key] = max(growth[key], float(np.max(ratio)))

    scene = TwoPhaseScene(
        iface=iface,
        chart=chart,
        v_plus=BulkField(vp, growth_const=1.5 * growth["plus"] + 1e-12),
        v_minus=BulkField(vm, growth_const=1.5 * growth["minus"] + 1e-12),
        rho_plus=DensityField(rp),
        rho_minus=DensityField(rm),
        name=doc.name,
        metadata={"source": "scenelang"},
        **tol,
    )
    if validate:
        report = validate_scene(scene, n_times=20, n_points=20)
        if not report.passed:
            raise SceneSemanticError(
                "scene violates interface conditions:\n" + str(report))
    return scene


def compile_scene_text(text: str, validate: bool = True) -> TwoPhaseScene:
    """Parse and compile scene text in one step."""
    return compile_document(parse(text), validate=validate)
