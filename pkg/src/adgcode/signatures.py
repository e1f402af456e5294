"""Parsing of API signature corpora and description/code datasets.

Signature grammar, one declaration per line::

    type <Name> [: <ParentName>]
    method <Name> ( [<Type> {, <Type>}] ) -> [<Type> {, <Type>}]
    # comment

Names are identifiers that may contain ``.`` (qualified names) and ``#``
(disambiguated overloads).  A type referenced before (or without) an explicit
declaration is implicitly declared as a root type.

Dataset files hold one record per line: description and code separated by a
single tab, each side already space-tokenized.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .graph import Adg, ApiMethodNode, ParamType, TypeHierarchy


class SignatureError(ValueError):
    """Problem in a signature corpus, with line/column context."""

    def __init__(self, message: str, line: int, col: int | None = None):
        loc = f"line {line}" if col is None else f"line {line}, col {col}"
        super().__init__(f"{loc}: {message}")
        self.line = line
        self.col = col


class DataFormatError(ValueError):
    """Malformed dataset record."""


@dataclass(frozen=True)
class TypeDecl:
    name: str
    parent: str | None
    line: int
    implicit: bool = False


@dataclass(frozen=True)
class MethodDecl:
    name: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    line: int


@dataclass(frozen=True)
class SignatureCorpus:
    """Parsed type and method declarations with source-line provenance."""

    types: tuple[TypeDecl, ...]
    methods: tuple[MethodDecl, ...]

    def hierarchy(self) -> TypeHierarchy:
        return TypeHierarchy(ParamType(t.name, t.parent) for t in self.types)

    def nodes(self) -> tuple[ApiMethodNode, ...]:
        """Methods as graph nodes; ids are dense in declaration order."""
        return tuple(
            ApiMethodNode(id=i, name=m.name, inputs=m.inputs, outputs=m.outputs)
            for i, m in enumerate(self.methods)
        )

    def canonical_form(self) -> tuple:
        """Order-insensitive comparable value ignoring line provenance."""
        return (
            frozenset((t.name, t.parent) for t in self.types),
            tuple((m.name, m.inputs, m.outputs) for m in self.methods),
        )

    def canonical_text(self) -> str:
        """Re-emit the corpus: types topologically (parents first, ties by
        name), then methods in declaration order."""
        by_name = {t.name: t for t in self.types}
        emitted: set[str] = set()
        lines: list[str] = []
        pending = sorted(by_name)
        while pending:
            progressed = False
            remaining = []
            for name in pending:
                parent = by_name[name].parent
                if parent is None or parent in emitted:
                    decl = by_name[name]
                    if decl.parent is None:
                        lines.append(f"type {decl.name}")
                    else:
                        lines.append(f"type {decl.name} : {decl.parent}")
                    emitted.add(name)
                    progressed = True
                else:
                    remaining.append(name)
            pending = remaining
            if not progressed:  # unreachable for a valid corpus (acyclic parents)
                raise SignatureError("cyclic type declarations", 0)
        for m in self.methods:
            ins = ", ".join(m.inputs)
            outs = ", ".join(m.outputs)
            lines.append(f"method {m.name} ({ins}) -> {outs}".rstrip())
        return "\n".join(lines) + "\n"


_TOKEN_RE = re.compile(r"(?P<ws>\s+)|(?P<ident>[A-Za-z_][A-Za-z0-9_.#]*)|(?P<arrow>->)|(?P<sym>[(),:])")


def _scan(text: str, line_no: int) -> list[tuple[str, str, int]]:
    """Tokenize one line into (kind, value, column) triples; 1-based columns."""
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SignatureError(f"unexpected character {text[pos]!r}", line_no, pos + 1)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    return tokens


class _LineParser:
    def __init__(self, tokens: list[tuple[str, str, int]], line_no: int, line_len: int):
        self.tokens = tokens
        self.line = line_no
        self.end_col = line_len + 1
        self.pos = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, kind: str, what: str, value: str | None = None) -> str:
        tok = self.peek()
        if tok is None:
            raise SignatureError(f"expected {what}", self.line, self.end_col)
        k, v, col = tok
        if k != kind or (value is not None and v != value):
            raise SignatureError(f"expected {what}, found {v!r}", self.line, col)
        self.pos += 1
        return v

    def done(self) -> None:
        tok = self.peek()
        if tok is not None:
            raise SignatureError(f"unexpected {tok[1]!r}", self.line, tok[2])

    def type_list(self, terminator: str | None) -> tuple[str, ...]:
        """[Ident {, Ident}] up to (and excluding) ``terminator`` or line end."""
        items: list[str] = []
        tok = self.peek()
        if tok is None or (terminator is not None and tok[1] == terminator):
            return ()
        items.append(self.take("ident", "a type name"))
        while True:
            tok = self.peek()
            if tok is not None and tok[0] == "sym" and tok[1] == ",":
                self.pos += 1
                items.append(self.take("ident", "a type name"))
            else:
                return tuple(items)


def parse_signatures(text: str) -> SignatureCorpus:
    """Parse a signature corpus; comments and blank lines are ignored.

    Raises SignatureError with line/column on syntax problems, and on
    duplicate method or duplicate explicit type declarations (naming both
    lines).  Types referenced before declaration are implicitly declared as
    root types; a later explicit declaration may upgrade an implicit one.
    """
    type_order: list[str] = []
    types: dict[str, TypeDecl] = {}
    methods: list[MethodDecl] = []
    method_lines: dict[str, int] = {}

    def reference(name: str, line_no: int) -> None:
        if name not in types:
            types[name] = TypeDecl(name, None, line_no, implicit=True)
            type_order.append(name)

    for line_no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parser = _LineParser(_scan(raw, line_no), line_no, len(raw))
        keyword = parser.take("ident", "'type' or 'method'")
        if keyword == "type":
            name = parser.take("ident", "a type name")
            parent = None
            if parser.peek() is not None:
                parser.take("sym", "':'", ":")
                parent = parser.take("ident", "a parent type name")
            parser.done()
            prev = types.get(name)
            if prev is not None and not prev.implicit:
                raise SignatureError(
                    f"duplicate declaration of type {name!r} (first on line {prev.line})",
                    line_no,
                )
            if parent is not None:
                reference(parent, line_no)
            if prev is None:
                type_order.append(name)
            types[name] = TypeDecl(name, parent, line_no)
        elif keyword == "method":
            name = parser.take("ident", "a method name")
            parser.take("sym", "'('", "(")
            inputs = parser.type_list(")")
            parser.take("sym", "')'", ")")
            parser.take("arrow", "'->'")
            outputs = parser.type_list(None)
            parser.done()
            if name in method_lines:
                raise SignatureError(
                    f"duplicate method {name!r} (first on line {method_lines[name]})",
                    line_no,
                )
            method_lines[name] = line_no
            for t in inputs + outputs:
                reference(t, line_no)
            methods.append(MethodDecl(name, inputs, outputs, line_no))
        else:
            raise SignatureError(
                f"expected 'type' or 'method', found {keyword!r}", line_no
            )
    return SignatureCorpus(
        types=tuple(types[n] for n in type_order),
        methods=tuple(methods),
    )


def emit_signatures(corpus: SignatureCorpus) -> str:
    return corpus.canonical_text()


def link_api_tokens(vocabulary: Iterable[str], adg: Adg) -> dict[str, int]:
    """Map each vocabulary token that names a graph method to its node id."""
    index: dict[str, int] = {}
    for token in vocabulary:
        node_id = adg.id_of(token)
        if node_id is not None:
            index[token] = node_id
    return index


_NAME_CHARS = re.compile(r"[A-Za-z0-9_.#]+|\S")
_DESC_KEEP = re.compile(r"[^a-z0-9_.#]+")


def tokenize_description(text: str) -> list[str]:
    """Lowercase, replace special characters with spaces, split."""
    return [t for t in _DESC_KEEP.sub(" ", text.lower()).split() if t]


def tokenize_code(text: str) -> list[str]:
    """Split on whitespace and punctuation, keeping qualified names intact."""
    return _NAME_CHARS.findall(text)


Pair = tuple[tuple[str, ...], tuple[str, ...]]


def parse_pairs(text: str, *, source: str = "<data>") -> list[Pair]:
    """Parse description/code records: two tab-separated token fields per line."""
    pairs: list[Pair] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) != 2:
            raise DataFormatError(
                f"{source}, line {line_no}: expected 2 tab-separated fields, got {len(fields)}"
            )
        desc = tuple(fields[0].split())
        code = tuple(fields[1].split())
        pairs.append((desc, code))
    return pairs


def format_pairs(pairs: Sequence[Pair]) -> str:
    return "".join(f"{' '.join(d)}\t{' '.join(c)}\n" for d, c in pairs)


def read_pairs(path: str) -> list[Pair]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_pairs(fh.read(), source=path)


def write_pairs(path: str, pairs: Sequence[Pair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_pairs(pairs))
