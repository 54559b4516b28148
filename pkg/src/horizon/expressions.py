"""Rule expression language.

Grammar (lowest precedence first)::

    expr    := or
    or      := and ("||" and)*
    and     := unary ("&&" unary)*
    unary   := "!" unary | cmp
    cmp     := operand (CMPOP operand)?
    operand := literal | path | path "." fn "(" arg ")" | "(" expr ")"
    path    := ident ("." ident | "[" string "]")*

``CMPOP`` is one of ``< <= > >= == !=``; ``===`` and ``!==`` are accepted as
spellings of ``==`` and ``!=``.  ``fn`` is ``includes``, ``contains`` or
``matches``.  Literals are ``true``, ``false``, decimal numbers and
double-quoted strings with JSON escapes.

Expressions are parsed once, checked against a :class:`ContextSchema`, and the
resulting :class:`TypedExpression` is evaluated against any number of
contexts.  ``&&`` and ``||`` short-circuit.
"""

from __future__ import annotations

import json
import operator
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Iterator, Mapping, Union

from .errors import (
    ContextTypeError,
    ExpressionSyntaxError,
    ExpressionTypeError,
    MissingAttribute,
    RegexError,
    SchemaDefinitionError,
    UnknownAttribute,
)

BOOLEAN = "boolean"
NUMBER = "number"
STRING = "string"
LIST = "list<string>"
MAP_NUMBER = "map<string,number>"
MAP_BOOLEAN = "map<string,boolean>"
MAP_STRING = "map<string,string>"

ATTRIBUTE_TYPES = (BOOLEAN, NUMBER, STRING, LIST, MAP_NUMBER, MAP_BOOLEAN, MAP_STRING)
MAP_VALUE_TYPES = {MAP_NUMBER: NUMBER, MAP_BOOLEAN: BOOLEAN, MAP_STRING: STRING}

FUNCTIONS = ("includes", "contains", "matches")
COMPARISONS = ("<", "<=", ">", ">=", "==", "!=")
_ORDERING = ("<", "<=", ">", ">=")

_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_PATH_RE = re.compile(rf"{_IDENT}(?:\.{_IDENT})*\Z", re.ASCII)


def is_attribute_path(text: str) -> bool:
    return isinstance(text, str) and _PATH_RE.match(text) is not None


# -- AST ---------------------------------------------------------------------


@dataclass(frozen=True)
class Key:
    """A ``["..."]`` segment of a path."""

    name: str


@dataclass(frozen=True)
class Literal:
    value: bool | float | str
    pos: tuple[int, int] = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Path:
    parts: tuple[Union[str, Key], ...]
    pos: tuple[int, int] = field(default=(0, 0), compare=False, repr=False)

    @property
    def text(self) -> str:
        out = []
        for part in self.parts:
            if isinstance(part, Key):
                out.append(f"[{json.dumps(part.name, ensure_ascii=False)}]")
            else:
                out.append(f".{part}" if out else part)
        return "".join(out)


@dataclass(frozen=True)
class Call:
    fn: str
    target: Path
    arg: "Node"
    pos: tuple[int, int] = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Node"
    right: "Node"
    pos: tuple[int, int] = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Not:
    operand: "Node"
    pos: tuple[int, int] = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class And:
    left: "Node"
    right: "Node"
    pos: tuple[int, int] = field(default=(0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Or:
    left: "Node"
    right: "Node"
    pos: tuple[int, int] = field(default=(0, 0), compare=False, repr=False)


Node = Union[Literal, Path, Call, Compare, Not, And, Or]


# -- lexer -------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    value: Any
    line: int
    column: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>===|!==|==|!=|<=|>=|&&|\|\||[<>!.()\[\],])
    """,
    re.VERBOSE | re.ASCII,
)

_OP_KINDS = {
    "===": "cmp", "!==": "cmp", "==": "cmp", "!=": "cmp", "<=": "cmp", ">=": "cmp",
    "<": "cmp", ">": "cmp", "&&": "and", "||": "or", "!": "not", ".": "dot",
    "(": "lparen", ")": "rparen", "[": "lbracket", "]": "rbracket", ",": "comma",
}
_OP_ALIASES = {"===": "==", "!==": "!="}


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        column = pos - line_start + 1
        if m is None:
            if source[pos] == '"':
                raise ExpressionSyntaxError("unterminated string", line, column)
            raise ExpressionSyntaxError(f"unexpected character {source[pos]!r}", line, column)
        kind = m.lastgroup
        text = m.group()
        if kind == "number":
            tokens.append(Token("number", text, float(text), line, column))
        elif kind == "string":
            try:
                value = json.loads(text)
            except ValueError as exc:
                raise ExpressionSyntaxError(f"bad string literal: {exc}", line, column) from None
            tokens.append(Token("string", text, value, line, column))
        elif kind == "ident":
            if text in ("true", "false"):
                tokens.append(Token("bool", text, text == "true", line, column))
            else:
                tokens.append(Token("ident", text, text, line, column))
        elif kind == "op":
            tokens.append(Token(_OP_KINDS[text], text, _OP_ALIASES.get(text, text), line, column))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = m.start() + text.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", None, line, pos - line_start + 1))
    return tokens


# -- parser ------------------------------------------------------------------


class _Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected: str):
        tok = self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise ExpressionSyntaxError(f"unexpected {found}", tok.line, tok.column, expected)

    def expect(self, kind: str, expected: str) -> Token:
        if self.tok.kind != kind:
            self.fail(expected)
        return self.advance()

    def parse(self) -> Node:
        node = self.parse_or()
        if self.tok.kind != "eof":
            self.fail("'&&', '||' or end of input")
        return node

    def parse_or(self) -> Node:
        left = self.parse_and()
        while self.tok.kind == "or":
            tok = self.advance()
            left = Or(left, self.parse_and(), pos=(tok.line, tok.column))
        return left

    def parse_and(self) -> Node:
        left = self.parse_unary()
        while self.tok.kind == "and":
            tok = self.advance()
            left = And(left, self.parse_unary(), pos=(tok.line, tok.column))
        return left

    def parse_unary(self) -> Node:
        if self.tok.kind == "not":
            tok = self.advance()
            return Not(self.parse_unary(), pos=(tok.line, tok.column))
        return self.parse_cmp()

    def parse_cmp(self) -> Node:
        left = self.parse_operand()
        if self.tok.kind == "cmp":
            tok = self.advance()
            right = self.parse_operand()
            return Compare(tok.value, left, right, pos=(tok.line, tok.column))
        return left

    def parse_operand(self) -> Node:
        tok = self.tok
        if tok.kind in ("number", "string", "bool"):
            self.advance()
            return Literal(tok.value, pos=(tok.line, tok.column))
        if tok.kind == "lparen":
            self.advance()
            node = self.parse_or()
            self.expect("rparen", "')'")
            return node
        if tok.kind == "ident":
            return self.parse_path()
        self.fail("a literal, attribute path, '!' or '('")

    def parse_path(self) -> Node:
        start = self.advance()
        parts: list[str | Key] = [start.value]
        pos = (start.line, start.column)
        while True:
            if self.tok.kind == "dot":
                self.advance()
                name = self.expect("ident", "an attribute name or function")
                if name.value in FUNCTIONS and self.tok.kind == "lparen":
                    self.advance()
                    arg = self.parse_operand()
                    if self.tok.kind == "comma":
                        self.fail(f"')' ({name.value} takes one argument)")
                    self.expect("rparen", "')'")
                    return Call(name.value, Path(tuple(parts), pos=pos), arg,
                                pos=(name.line, name.column))
                parts.append(name.value)
            elif self.tok.kind == "lbracket":
                self.advance()
                key = self.expect("string", "a string key")
                self.expect("rbracket", "']'")
                parts.append(Key(key.value))
            else:
                return Path(tuple(parts), pos=pos)


def parse_expression(source: str) -> Node:
    """Parse rule text into an AST; raises :class:`ExpressionSyntaxError`."""
    if not isinstance(source, str):
        raise ExpressionSyntaxError("expression must be text", 1, 1)
    return _Parser(source).parse()


# -- printer -----------------------------------------------------------------

_PREC = {Or: 1, And: 2, Not: 3, Compare: 4}


def to_source(node: Node) -> str:
    """Render an AST as canonical rule text; ``parse_expression`` inverts it."""
    if isinstance(node, Literal):
        if isinstance(node.value, bool):
            return "true" if node.value else "false"
        if isinstance(node.value, float):
            return str(int(node.value)) if node.value.is_integer() and abs(node.value) < 1e16 else repr(node.value)
        return json.dumps(node.value, ensure_ascii=False)
    if isinstance(node, Path):
        return node.text
    if isinstance(node, Call):
        return f"{node.target.text}.{node.fn}({_wrap(node.arg, 5)})"
    if isinstance(node, Compare):
        return f"{_wrap(node.left, 5)} {node.op} {_wrap(node.right, 5)}"
    if isinstance(node, Not):
        return f"!{_wrap(node.operand, 3)}"
    if isinstance(node, And):
        return f"{_wrap(node.left, 2)} && {_wrap(node.right, 3)}"
    if isinstance(node, Or):
        return f"{_wrap(node.left, 1)} || {_wrap(node.right, 2)}"
    raise TypeError(f"not an expression node: {node!r}")


def _wrap(node: Node, min_prec: int) -> str:
    text = to_source(node)
    if _PREC.get(type(node), 9) < min_prec:
        return f"({text})"
    return text


def walk(node: Node) -> Iterator[Node]:
    yield node
    if isinstance(node, Call):
        yield from walk(node.target)
        yield from walk(node.arg)
    elif isinstance(node, (Compare, And, Or)):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, Not):
        yield from walk(node.operand)


# -- schema ------------------------------------------------------------------


@dataclass(frozen=True)
class ContextSchema:
    """Declared context attributes: dotted path -> type name."""

    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        attrs = dict(self.attributes)
        for path, type_name in attrs.items():
            if not is_attribute_path(path):
                raise SchemaDefinitionError(f"invalid attribute path {path!r}")
            if type_name not in ATTRIBUTE_TYPES:
                raise SchemaDefinitionError(
                    f"attribute {path!r} has unknown type {type_name!r}; "
                    f"expected one of {', '.join(ATTRIBUTE_TYPES)}"
                )
        paths = sorted(attrs)
        for a, b in zip(paths, paths[1:]):
            if b.startswith(a + "."):
                raise SchemaDefinitionError(f"attribute {a!r} is a prefix of {b!r}")
        object.__setattr__(self, "attributes", attrs)

    def merged(self, additions: Mapping[str, str]) -> "ContextSchema":
        return ContextSchema({**self.attributes, **additions})

    def to_dict(self) -> dict[str, Any]:
        return {"attributes": dict(sorted(self.attributes.items()))}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "ContextSchema":
        if not data:
            return cls()
        return cls(dict(data.get("attributes", {})))

    def resolve(self, path: Path) -> tuple[str, str, str | None]:
        """Return ``(attribute, type, key)`` for a path node.

        ``key`` is the bracket key for map lookups, else ``None``; ``type`` is
        the type of the value the path denotes.
        """
        names = []
        rest = list(path.parts)
        while rest and not isinstance(rest[0], Key):
            names.append(rest.pop(0))
        attribute = ".".join(names)
        if attribute not in self.attributes:
            raise UnknownAttribute(path.text if not rest else attribute)
        type_name = self.attributes[attribute]
        if not rest:
            return attribute, type_name, None
        if type_name not in MAP_VALUE_TYPES:
            raise ExpressionTypeError(path.text, "map", type_name,
                                      f"{attribute!r} is {type_name} and cannot be indexed")
        key = rest.pop(0)
        value_type = MAP_VALUE_TYPES[type_name]
        if rest:
            raise ExpressionTypeError(path.text, "map", value_type,
                                      f"{path.text!r}: {value_type} value cannot be indexed further")
        return attribute, value_type, key.name


# -- typecheck ---------------------------------------------------------------


@dataclass(frozen=True)
class TypedExpression:
    """An expression checked against a schema, ready for evaluation."""

    ast: Node
    schema: ContextSchema
    attributes: frozenset[str]

    @property
    def source(self) -> str:
        return to_source(self.ast)


def typecheck(expr: Node | str, schema: ContextSchema) -> TypedExpression:
    if isinstance(expr, str):
        expr = parse_expression(expr)
    checker = _Checker(schema)
    result = checker.type_of(expr)
    if result != BOOLEAN:
        raise ExpressionTypeError(to_source(expr), BOOLEAN, result,
                                  f"rule must be boolean, got {result}")
    return TypedExpression(expr, schema, frozenset(checker.attributes))


def compile_rule(source: str, schema: ContextSchema) -> TypedExpression:
    return typecheck(parse_expression(source), schema)


class _Checker:
    def __init__(self, schema: ContextSchema):
        self.schema = schema
        self.attributes: set[str] = set()

    def type_of(self, node: Node) -> str:
        if isinstance(node, Literal):
            if isinstance(node.value, bool):
                return BOOLEAN
            if isinstance(node.value, float):
                return NUMBER
            return STRING
        if isinstance(node, Path):
            attribute, type_name, _ = self.schema.resolve(node)
            self.attributes.add(attribute)
            return type_name
        if isinstance(node, Call):
            target = self.type_of(node.target)
            arg = self.type_of(node.arg)
            allowed = (LIST, STRING) if node.fn == "includes" else (STRING,)
            if target not in allowed:
                raise ExpressionTypeError(to_source(node), " or ".join(allowed), target)
            if arg != STRING:
                raise ExpressionTypeError(to_source(node), STRING, arg)
            if node.fn == "matches" and isinstance(node.arg, Literal):
                _compile_regex(node.arg.value)
            return BOOLEAN
        if isinstance(node, Compare):
            left, right = self.type_of(node.left), self.type_of(node.right)
            if node.op in _ORDERING:
                if left != NUMBER or right != NUMBER:
                    raise ExpressionTypeError(
                        to_source(node), left, right,
                        f"{to_source(node)!r}: {node.op} needs number operands, got {left} and {right}",
                    )
            elif left != right or left not in (NUMBER, STRING, BOOLEAN):
                raise ExpressionTypeError(
                    to_source(node), left, right,
                    f"{to_source(node)!r}: cannot compare {left} with {right}",
                )
            return BOOLEAN
        if isinstance(node, Not):
            self._expect_boolean(node, node.operand)
            return BOOLEAN
        if isinstance(node, (And, Or)):
            self._expect_boolean(node, node.left)
            self._expect_boolean(node, node.right)
            return BOOLEAN
        raise TypeError(f"not an expression node: {node!r}")

    def _expect_boolean(self, parent: Node, child: Node) -> None:
        actual = self.type_of(child)
        if actual != BOOLEAN:
            raise ExpressionTypeError(to_source(parent), BOOLEAN, actual,
                                      f"{to_source(child)!r} is {actual}, expected boolean")


@lru_cache(maxsize=512)
def _compile_regex(pattern: str) -> re.Pattern:
    try:
        return re.compile(pattern)
    except re.error as exc:
        raise RegexError(pattern, str(exc)) from None


# -- contexts ----------------------------------------------------------------


class EvaluationContext:
    """Attribute values for one evaluation.

    Accepts nested objects (canonical) or top-level dotted keys, which are
    expanded into the nested form.
    """

    def __init__(self, values: Mapping[str, Any] | None = None):
        self.values = _expand(values or {})

    @classmethod
    def of(cls, ctx: "EvaluationContext | Mapping[str, Any] | None") -> "EvaluationContext":
        return ctx if isinstance(ctx, EvaluationContext) else cls(ctx)

    def lookup(self, attribute: str) -> Any:
        node: Any = self.values
        for name in attribute.split("."):
            if not isinstance(node, Mapping) or name not in node:
                raise MissingAttribute(attribute)
            node = node[name]
        return node

    def to_dict(self) -> dict[str, Any]:
        return self.values

    def __eq__(self, other):
        return isinstance(other, EvaluationContext) and self.values == other.values

    def __repr__(self):
        return f"EvaluationContext({self.values!r})"


def _expand(values: Mapping[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in values.items():
        node = out
        names = key.split(".") if isinstance(key, str) else [key]
        for name in names[:-1]:
            child = node.get(name)
            child = dict(child) if isinstance(child, Mapping) else {}
            node[name] = child
            node = child
        last = names[-1]
        if isinstance(value, Mapping) and isinstance(node.get(last), Mapping):
            node[last] = merge_values(node[last], value)
        else:
            node[last] = value
    return out


def merge_values(base: Mapping, extra: Mapping) -> dict:
    """Deep-merge two nested attribute mappings; ``extra`` wins on leaves."""
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = merge_values(merged[key], value)
        else:
            merged[key] = value
    return merged


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


_CHECKS = {
    BOOLEAN: lambda v: isinstance(v, bool),
    NUMBER: _is_number,
    STRING: lambda v: isinstance(v, str),
    LIST: lambda v: isinstance(v, (list, tuple)) and all(isinstance(x, str) for x in v),
}


def conforms(value: Any, type_name: str) -> bool:
    if type_name in MAP_VALUE_TYPES:
        check = _CHECKS[MAP_VALUE_TYPES[type_name]]
        return isinstance(value, Mapping) and all(check(v) for v in value.values())
    return _CHECKS[type_name](value)


# -- evaluation --------------------------------------------------------------

_CMP_FUNCS = {
    "<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
    "==": operator.eq, "!=": operator.ne,
}


def evaluate(expr: TypedExpression, ctx: "EvaluationContext | Mapping[str, Any]") -> bool:
    """Evaluate a checked expression.

    Raises :class:`MissingAttribute`, :class:`ContextTypeError` or
    :class:`RegexError`; these are the failures the feature evaluator turns
    into default values.
    """
    return bool(_Eval(expr.schema, EvaluationContext.of(ctx)).run(expr.ast))


class _Eval:
    def __init__(self, schema: ContextSchema, ctx: EvaluationContext):
        self.schema = schema
        self.ctx = ctx

    def run(self, node: Node) -> Any:
        if isinstance(node, And):
            return bool(self.run(node.left)) and bool(self.run(node.right))
        if isinstance(node, Or):
            return bool(self.run(node.left)) or bool(self.run(node.right))
        if isinstance(node, Not):
            return not self.run(node.operand)
        if isinstance(node, Compare):
            left, right = self.run(node.left), self.run(node.right)
            if _is_number(left):
                left, right = float(left), float(right)
            return _CMP_FUNCS[node.op](left, right)
        if isinstance(node, Literal):
            return node.value
        if isinstance(node, Path):
            return self.path(node)
        if isinstance(node, Call):
            target = self.path(node.target)
            arg = self.run(node.arg)
            if node.fn == "matches":
                return _compile_regex(arg).search(target) is not None
            return arg in target
        raise TypeError(f"not an expression node: {node!r}")

    def path(self, node: Path) -> Any:
        attribute, type_name, key = self.schema.resolve(node)
        value = self.ctx.lookup(attribute)
        if key is None:
            if not conforms(value, type_name):
                raise ContextTypeError(attribute, type_name, value)
            return value
        if not isinstance(value, Mapping):
            raise ContextTypeError(attribute, self.schema.attributes[attribute], value)
        if key not in value:
            raise MissingAttribute(node.text)
        value = value[key]
        if not conforms(value, type_name):
            raise ContextTypeError(node.text, type_name, value)
        return value


def references(expr: TypedExpression, changed: str) -> bool:
    """Whether a change at attribute path ``changed`` can affect ``expr``."""
    for attribute in expr.attributes:
        if attribute == changed or attribute.startswith(changed + ".") or changed.startswith(attribute + "."):
            return True
    return False
