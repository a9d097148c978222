"""Reader, validator and printer for ``.sian-model`` files.

A model file is line oriented::

    model goodwin
    states: x1, x2, x3, x4
    params: b, c, alpha, beta, gamma, delta, sigma
    inputs:
    eq x1' = -b*x1 + 1/(c + x4)
    ...
    output y1 = x1

Expressions are rational: ``+ - * / ( )``, integer literals, identifiers and ``^`` with a
positive integer literal exponent. ``#`` starts a comment.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from utils.algebra_helper import (
    IdentifiabilityError,
    Polynomial,
    RationalFunction,
    VariableContext,
    ratfun_normalize,
)

logger = logging.getLogger(__name__)

RATIONALIZE_HINT = (
    "only rational right-hand sides are accepted; rewrite the model with auxiliary states "
    "(see 'Rationalizing models' in README.md)"
)

IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*$")
EQ_RE = re.compile(r"eq\s+(?P<name>\S+?)\s*'\s*=(?P<expr>.*)$")
OUTPUT_RE = re.compile(r"output\s+(?P<name>\S+?)\s*=(?P<expr>.*)$")
TOKEN_RE = re.compile(
    r"(?P<space>\s+)"
    r"|(?P<number>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*/^(),])"
    r"|(?P<other>.)"
)

SECTIONS = ("states", "params", "inputs")


class ModelParseError(IdentifiabilityError):
    def __init__(self, message: str, line: int = 0, column: int = 0, hint: Optional[str] = None):
        self.message = message
        self.line = line
        self.column = column
        self.hint = hint
        text = f"line {line}, column {column}: {message}" if line else message
        if hint:
            text += f" ({hint})"
        super().__init__(text)


class ModelValidationError(ModelParseError):
    """A parsed model carries error diagnostics and cannot be analyzed."""

    def __init__(self, diagnostics: "Diagnostics"):
        self.diagnostics = diagnostics
        first = diagnostics.errors[0]
        span = first.span or SourceSpan(0, 0)
        super().__init__(first.message, span.line, span.column)


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int


@dataclass(frozen=True)
class Diagnostic:
    severity: str        # "error" | "warning"
    span: Optional[SourceSpan]
    message: str

    def __str__(self) -> str:
        where = f"{self.span.line}:{self.span.column}: " if self.span else ""
        return f"{self.severity}: {where}{self.message}"


@dataclass
class Diagnostics:
    entries: List[Diagnostic] = field(default_factory=list)

    def add(self, severity: str, message: str, span: Optional[SourceSpan] = None) -> None:
        self.entries.append(Diagnostic(severity, span, message))

    @property
    def errors(self) -> List[Diagnostic]:
        return [d for d in self.entries if d.severity == "error"]

    @property
    def warnings(self) -> List[Diagnostic]:
        return [d for d in self.entries if d.severity == "warning"]

    @property
    def has_errors(self) -> bool:
        return bool(self.errors)

    def __iter__(self) -> Iterator[Diagnostic]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(eq=False)
class Model:
    name: str
    states: List[str]
    params: List[str]
    inputs: List[str]
    outputs: List[Tuple[str, RationalFunction]]
    rhs: Dict[str, RationalFunction]
    context: VariableContext
    spans: Dict[str, SourceSpan] = field(default_factory=dict)
    duplicate_equations: List[Tuple[str, SourceSpan]] = field(default_factory=list)

    @property
    def ring(self):
        return self.context.ring

    @property
    def unknowns(self) -> List[str]:
        """Parameters first, then initial conditions named ``<state>(0)``."""
        return list(self.params) + [initial_condition_name(x) for x in self.states]

    @property
    def output_names(self) -> List[str]:
        return [name for name, _ in self.outputs]

    def output(self, name: str) -> RationalFunction:
        for output_name, expr in self.outputs:
            if output_name == name:
                return expr
        raise KeyError(name)

    def _key(self):
        return (
            self.name, tuple(self.states), tuple(self.params), tuple(self.inputs),
            tuple(self.outputs), tuple(sorted(self.rhs.items())),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Model):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())


def initial_condition_name(state: str) -> str:
    return f"{state}(0)"


class _ExpressionParser:
    """Recursive descent over one expression, producing an unnormalized (num, den) pair."""

    def __init__(self, text: str, line: int, column: int, context: VariableContext):
        self.line = line
        self.context = context
        self.tokens = list(self._tokenize(text, column))
        self.pos = 0

    def _tokenize(self, text: str, column: int):
        previous = None
        for match in TOKEN_RE.finditer(text):
            kind = match.lastgroup
            value = match.group()
            col = column + match.start()
            if kind == "space":
                continue
            if kind == "other":
                if value == "'":
                    raise ModelParseError("derivatives may only appear on the left of 'eq'", self.line, col)
                raise ModelParseError(f"unexpected character '{value}'", self.line, col)
            if kind == "number" and not value.isdigit() and previous == "^":
                raise ModelParseError(
                    f"exponent '{value}' is not a positive integer", self.line, col, RATIONALIZE_HINT,
                )
            if kind == "number" and not value.isdigit():
                raise ModelParseError(
                    f"decimal literal '{value}' is not allowed; write it as a fraction p/q",
                    self.line, col,
                )
            if kind == "op" and value == "**":
                raise ModelParseError("use '^' for powers", self.line, col)
            previous = value
            yield kind, value, col
        yield "end", "", column + len(text)

    def _peek(self):
        return self.tokens[self.pos]

    def _next(self):
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def _error(self, message: str, token=None, hint: Optional[str] = None):
        token = token or self._peek()
        raise ModelParseError(message, self.line, token[2], hint)

    def parse(self) -> Tuple[Polynomial, Polynomial]:
        if self._peek()[0] == "end":
            self._error("empty expression")
        value = self._expr()
        if self._peek()[0] != "end":
            self._error(f"unexpected '{self._peek()[1]}'")
        return value

    def _expr(self):
        num, den = self._term()
        while self._peek()[1] in ("+", "-") and self._peek()[0] == "op":
            op = self._next()[1]
            n2, d2 = self._term()
            if den == d2:
                num = num + n2 if op == "+" else num - n2
            else:
                cross = n2 * den
                num = num * d2 + cross if op == "+" else num * d2 - cross
                den = den * d2
        return num, den

    def _term(self):
        num, den = self._unary()
        while self._peek()[0] == "op" and self._peek()[1] in ("*", "/"):
            op_token = self._next()
            n2, d2 = self._unary()
            if op_token[1] == "*":
                num, den = num * n2, den * d2
            else:
                if not n2:
                    self._error("division by zero", op_token)
                num, den = num * d2, den * n2
        return num, den

    def _unary(self):
        token = self._peek()
        if token[0] == "op" and token[1] in ("-", "+"):
            self._next()
            num, den = self._unary()
            return (-num, den) if token[1] == "-" else (num, den)
        return self._power()

    def _power(self):
        num, den = self._atom()
        if self._peek()[0] == "op" and self._peek()[1] == "^":
            caret = self._next()
            exponent = self._peek()
            if exponent[0] != "number":
                self._error("exponent must be a positive integer literal", exponent, RATIONALIZE_HINT)
            self._next()
            k = int(exponent[1])
            if k < 1:
                self._error("exponent must be a positive integer literal", exponent, RATIONALIZE_HINT)
            if self._peek()[0] == "op" and self._peek()[1] == "^":
                self._error("chained exponents are ambiguous; add parentheses", caret)
            num, den = num ** k, den ** k
        return num, den

    def _atom(self):
        ring = self.context.ring
        token = self._next()
        kind, value, col = token
        if kind == "number":
            return ring.ground_new(int(value)), ring.one
        if kind == "ident":
            if self._peek()[1] == "(":
                raise ModelParseError(
                    f"function call '{value}(...)' is not a rational construct",
                    self.line, col, RATIONALIZE_HINT,
                )
            if value.startswith("_"):
                raise ModelParseError(f"identifier '{value}' may not start with '_'", self.line, col)
            if value not in self.context:
                hint = None
                if value == "t":
                    hint = "time is not a symbol; model time dependence with a state or an input"
                raise ModelParseError(f"undeclared symbol '{value}'", self.line, col, hint)
            return self.context.gen(value), ring.one
        if kind == "op" and value == "(":
            inner = self._expr()
            if self._peek()[1] != ")":
                self._error("expected ')'")
            self._next()
            return inner
        if kind == "end":
            raise ModelParseError("unexpected end of expression", self.line, col)
        raise ModelParseError(f"unexpected '{value}'", self.line, col)


def _split_declaration(body: str, line: int, column: int) -> List[Tuple[str, SourceSpan]]:
    names = []
    if not body.strip():
        return names
    offset = 0
    for piece in body.split(","):
        stripped = piece.strip()
        col = column + offset + (len(piece) - len(piece.lstrip()))
        offset += len(piece) + 1
        if not IDENT_RE.match(stripped):
            raise ModelParseError(f"'{stripped}' is not a valid identifier", line, col)
        names.append((stripped, SourceSpan(line, col)))
    return names


def _strip_comment(raw: str) -> str:
    return raw.split("#", 1)[0].rstrip()


def parse_model(text: str, name: Optional[str] = None) -> Model:
    """Parse a model document.

    Args:
        text: File contents.
        name: Fallback model name when the document has no ``model`` line.

    Returns:
        Model whose right-hand sides and outputs are normalized rational functions.

    Raises:
        ModelParseError: on the first syntax error, undeclared symbol or non-rational construct.
    """
    declared: Dict[str, List[Tuple[str, SourceSpan]]] = {section: [] for section in SECTIONS}
    seen_sections = set()
    model_name = None
    equation_lines: List[Tuple[str, int, int, re.Match]] = []

    # Pass 1: declarations; expressions are deferred until every name is known.
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        stripped = line.strip()
        if not stripped:
            continue
        indent = len(line) - len(line.lstrip())
        keyword = stripped.split(":", 1)[0].strip() if ":" in stripped else None

        if stripped.startswith("model ") or stripped == "model":
            if model_name is not None:
                raise ModelParseError("duplicate 'model' line", lineno, indent + 1)
            model_name = stripped[len("model"):].strip()
            if not model_name:
                raise ModelParseError("'model' needs a name", lineno, indent + 1)
        elif keyword in SECTIONS:
            if keyword in seen_sections:
                raise ModelParseError(f"duplicate '{keyword}:' section", lineno, indent + 1)
            seen_sections.add(keyword)
            body_start = line.index(":") + 1
            declared[keyword] = _split_declaration(line[body_start:], lineno, body_start + 1)
        elif stripped.startswith("eq ") or stripped.startswith("eq\t"):
            match = EQ_RE.match(stripped)
            if not match:
                raise ModelParseError("expected \"eq <state>' = <expression>\"", lineno, indent + 1)
            equation_lines.append(("eq", lineno, indent, match))
        elif stripped.startswith("output ") or stripped.startswith("output\t"):
            match = OUTPUT_RE.match(stripped)
            if not match:
                raise ModelParseError("expected 'output <name> = <expression>'", lineno, indent + 1)
            equation_lines.append(("output", lineno, indent, match))
        else:
            raise ModelParseError(f"unrecognized line '{stripped}'", lineno, indent + 1)

    states = [n for n, _ in declared["states"]]
    params = [n for n, _ in declared["params"]]
    inputs = [n for n, _ in declared["inputs"]]
    unique_names = list(dict.fromkeys(states + params + inputs))
    if not unique_names:
        raise ModelParseError("the model declares no states, parameters or inputs")
    context = VariableContext(unique_names)

    spans: Dict[str, SourceSpan] = {}
    for section in SECTIONS:
        for n, span in declared[section]:
            spans.setdefault(n, span)

    rhs: Dict[str, RationalFunction] = {}
    outputs: List[Tuple[str, RationalFunction]] = []
    duplicate_equations: List[Tuple[str, SourceSpan]] = []

    # Pass 2: expressions.
    for kind, lineno, indent, match in equation_lines:
        target = match.group("name")
        target_col = indent + match.start("name") + 1
        expr_col = indent + match.start("expr") + 1
        if not IDENT_RE.match(target):
            raise ModelParseError(f"'{target}' is not a valid identifier", lineno, target_col)
        num, den = _ExpressionParser(match.group("expr"), lineno, expr_col, context).parse()
        value = ratfun_normalize(num, den)
        span = SourceSpan(lineno, target_col)

        if kind == "eq":
            if target not in states:
                raise ModelParseError(f"equation for '{target}', which is not a declared state", lineno, target_col)
            if target in rhs:
                duplicate_equations.append((target, span))
                continue
            rhs[target] = value
            spans[f"eq {target}"] = span
        else:
            outputs.append((target, value))
            spans.setdefault(f"output {target}", span)

    model = Model(
        name=model_name or name or "unnamed",
        states=states,
        params=params,
        inputs=inputs,
        outputs=outputs,
        rhs=rhs,
        context=context,
        spans=spans,
        duplicate_equations=duplicate_equations,
    )
    logger.debug(f"Parsed model '{model.name}': {len(states)} states, {len(params)} params, "
                 f"{len(inputs)} inputs, {len(outputs)} outputs")
    return model


def _state_closure(m: Model) -> List[str]:
    """States that some output depends on, directly or through the right-hand sides."""
    state_set = set(m.states)
    reached = set()
    frontier = [v for _, g in m.outputs for v in g.variables() if v in state_set]
    while frontier:
        x = frontier.pop()
        if x in reached:
            continue
        reached.add(x)
        if x in m.rhs:
            frontier.extend(v for v in m.rhs[x].variables() if v in state_set and v not in reached)
    return [x for x in m.states if x in reached]


def validate_model(m: Model) -> Diagnostics:
    diagnostics = Diagnostics()

    seen: Dict[str, str] = {}
    for section, names in (("states", m.states), ("params", m.params), ("inputs", m.inputs)):
        for n in names:
            if n in seen:
                where = "twice" if seen[n] == section else f"in both '{seen[n]}' and '{section}'"
                diagnostics.add("error", f"'{n}' is declared {where}", m.spans.get(n))
            else:
                seen[n] = section

    for state, span in m.duplicate_equations:
        diagnostics.add("error", f"second equation for state '{state}'", span)
    for state in dict.fromkeys(m.states):
        if state not in m.rhs:
            diagnostics.add("error", f"state '{state}' has no equation", m.spans.get(state))

    if not m.outputs:
        diagnostics.add("error", "the model declares no outputs")
    output_names = set()
    for name, expr in m.outputs:
        span = m.spans.get(f"output {name}")
        if name in output_names:
            diagnostics.add("error", f"output '{name}' is declared twice", span)
        output_names.add(name)
        if name in seen:
            diagnostics.add("error", f"output name '{name}' clashes with a declared symbol", span)
        if expr.is_constant():
            diagnostics.add("warning", f"output '{name}' is a constant and carries no information", span)

    reached = set(_state_closure(m))
    for state in dict.fromkeys(m.states):
        if state not in reached:
            diagnostics.add("warning", f"state '{state}' does not influence any output", m.spans.get(state))

    for d in diagnostics:
        logger.debug(f"{m.name}: {d}")
    return diagnostics


def _format_coefficient(c) -> str:
    if c.denominator == 1:
        return str(c.numerator)
    return f"{c.numerator}/{c.denominator}"


def _format_polynomial(p: Polynomial) -> str:
    if not p:
        return "0"
    names = [str(s) for s in p.ring.symbols]
    pieces = []
    for monom, coeff in p.terms():
        factors = []
        for i, e in enumerate(monom):
            if e == 1:
                factors.append(names[i])
            elif e:
                factors.append(f"{names[i]}^{e}")
        magnitude = abs(coeff)
        if not factors:
            body = _format_coefficient(magnitude)
        elif magnitude == 1:
            body = "*".join(factors)
        else:
            body = "*".join([_format_coefficient(magnitude)] + factors)
        sign = "-" if coeff < 0 else "+"
        if not pieces:
            pieces.append(body if sign == "+" else f"-{body}")
        else:
            pieces.append(f"{sign} {body}")
    return " ".join(pieces)


def format_expression(e: RationalFunction) -> str:
    num = _format_polynomial(e.numerator)
    if e.denominator == e.ring.one:
        return num
    return f"({num})/({_format_polynomial(e.denominator)})"


def serialize_model(m: Model) -> str:
    lines = [
        f"model {m.name}",
        f"states: {', '.join(m.states)}",
        f"params: {', '.join(m.params)}",
        f"inputs: {', '.join(m.inputs)}".rstrip(),
    ]
    for state in m.states:
        if state in m.rhs:
            lines.append(f"eq {state}' = {format_expression(m.rhs[state])}")
    for name, expr in m.outputs:
        lines.append(f"output {name} = {format_expression(expr)}")
    return "\n".join(lines) + "\n"


def load_model(path) -> Model:
    """Read and parse a model file; the file stem names the model if it has no ``model`` line."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_model(text, name=path.name.split(".")[0])


def model_from_sections(
    states: Sequence[str], params: Sequence[str], inputs: Sequence[str],
    equations: Dict[str, str], outputs: Dict[str, str], name: str = "model",
) -> Model:
    """Build a model from expression strings; convenience for tests and the interactive page."""
    lines = [
        f"model {name}",
        f"states: {', '.join(states)}",
        f"params: {', '.join(params)}",
        f"inputs: {', '.join(inputs)}",
    ]
    lines += [f"eq {x}' = {expr}" for x, expr in equations.items()]
    lines += [f"output {y} = {expr}" for y, expr in outputs.items()]
    return parse_model("\n".join(lines))


def ensure_valid(m: Model) -> Diagnostics:
    """Validate ``m`` and raise ModelValidationError if any diagnostic is an error."""
    diagnostics = validate_model(m)
    if diagnostics.has_errors:
        raise ModelValidationError(diagnostics)
    for warning in diagnostics.warnings:
        logger.warning(f"{m.name}: {warning}")
    return diagnostics
