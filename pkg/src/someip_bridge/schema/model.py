"""Message schemas and the ``.msg`` parser."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional

from ..errors import ParseError, UnknownType

# name -> (struct code, size)
PRIMITIVES = {
    "bool": ("?", 1),
    "int8": ("b", 1),
    "uint8": ("B", 1),
    "int16": ("h", 2),
    "uint16": ("H", 2),
    "int32": ("i", 4),
    "uint32": ("I", 4),
    "int64": ("q", 8),
    "uint64": ("Q", 8),
    "float32": ("f", 4),
    "float64": ("d", 8),
}
ALIASES = {"byte": "uint8", "char": "uint8"}
STRING = "string"
BUILTINS = frozenset(PRIMITIVES) | {STRING}
BYTE_TYPES = frozenset({"uint8"})
INT_RANGES = {
    "int8": (-(1 << 7), (1 << 7) - 1),
    "uint8": (0, (1 << 8) - 1),
    "int16": (-(1 << 15), (1 << 15) - 1),
    "uint16": (0, (1 << 16) - 1),
    "int32": (-(1 << 31), (1 << 31) - 1),
    "uint32": (0, (1 << 32) - 1),
    "int64": (-(1 << 63), (1 << 63) - 1),
    "uint64": (0, (1 << 64) - 1),
}

_IDENT = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")
_TYPE = re.compile(r"^(?P<base>[A-Za-z][A-Za-z0-9_/]*)(?P<array>\[(?P<bound><=)?(?P<n>[0-9]*)\])?$")


@dataclass(frozen=True)
class FieldDef:
    name: str
    type_name: str
    count: Optional[int] = None  # fixed array length
    sequence: bool = False  # unbounded sequence
    schema: Optional["MessageSchema"] = None  # resolved nested type

    @property
    def is_array(self) -> bool:
        return self.sequence or self.count is not None

    @property
    def is_primitive(self) -> bool:
        return self.type_name in PRIMITIVES

    @property
    def is_string(self) -> bool:
        return self.type_name == STRING

    @property
    def is_bytes(self) -> bool:
        """uint8 arrays are carried as ``bytes`` values."""
        return self.is_array and self.type_name in BYTE_TYPES

    def type_text(self) -> str:
        suffix = "[]" if self.sequence else f"[{self.count}]" if self.count is not None else ""
        return self.type_name + suffix


@dataclass(frozen=True)
class MessageSchema:
    type_name: str
    fields: tuple = ()

    @property
    def package(self) -> str:
        return self.type_name.split("/", 1)[0] if "/" in self.type_name else ""

    @property
    def short_name(self) -> str:
        return self.type_name.rsplit("/", 1)[-1]

    def field(self, name: str) -> FieldDef:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def closure(self) -> list:
        """Distinct nested schemas reachable from this one, dependencies first,
        ending with ``self``."""
        seen: dict[str, MessageSchema] = {}

        def visit(s: MessageSchema):
            if s.type_name in seen:
                return
            for f in s.fields:
                if f.schema is not None:
                    visit(f.schema)
            seen[s.type_name] = s
        visit(self)
        return list(seen.values())

    def leaf_count(self) -> int:
        """Primitive/string leaves in the flattened tree (an array counts once)."""
        return sum(f.schema.leaf_count() if f.schema is not None else 1 for f in self.fields)

    def to_msg(self) -> str:
        return "".join(f"{f.type_text()} {f.name}\n" for f in self.fields)


def canonical_name(type_name: str) -> str:
    """``pkg/msg/Name`` -> ``pkg/Name``."""
    parts = type_name.split("/")
    if len(parts) == 3 and parts[1] == "msg":
        return f"{parts[0]}/{parts[2]}"
    return type_name


@dataclass(frozen=True)
class _RawField:
    line: int
    name: str
    base: str
    count: Optional[int]
    sequence: bool


def _parse_lines(text: str, source: Optional[str] = None) -> list:
    fields = []
    names = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line.replace("<=", ""):
            # constant declaration; no runtime meaning here
            continue
        tokens = line.split()
        if len(tokens) != 2:
            raise ParseError(f"expected 'type name', got {line!r}", lineno, source)
        type_tok, name = tokens
        m = _TYPE.match(type_tok)
        if not m:
            raise ParseError(f"bad type {type_tok!r}", lineno, source)
        if "<=" in type_tok or m.group("bound"):
            raise ParseError(f"bounded types are not supported: {type_tok!r}", lineno, source)
        if not _IDENT.match(name):
            raise ParseError(f"bad field name {name!r}", lineno, source)
        if name in names:
            raise ParseError(f"duplicate field {name!r}", lineno, source)
        names.add(name)
        count = None
        sequence = False
        if m.group("array") is not None:
            if m.group("n"):
                count = int(m.group("n"))
                if count < 1:
                    raise ParseError("fixed array length must be >= 1", lineno, source)
            else:
                sequence = True
        base = ALIASES.get(m.group("base"), m.group("base"))
        fields.append(_RawField(lineno, name, base, count, sequence))
    return fields


def resolve_name(base: str, package: str) -> str:
    """Qualify a type reference the way ROS does."""
    if base in BUILTINS:
        return base
    if base == "Header":
        return "std_msgs/Header"
    if "/" in base:
        return canonical_name(base)
    return f"{package}/{base}" if package else base


def _build(type_name: str, raw_fields: list, lookup: Callable[[str, int], "MessageSchema"],
           package: str) -> MessageSchema:
    fields = []
    for rf in raw_fields:
        full = resolve_name(rf.base, package)
        nested = None if full in BUILTINS else lookup(full, rf.line)
        fields.append(FieldDef(rf.name, full if nested is None else nested.type_name,
                               rf.count, rf.sequence, nested))
    return MessageSchema(type_name, tuple(fields))


def parse_msg_file(text: str, type_name: str = "", registry: Optional["SchemaRegistry"] = None,
                   *, source: Optional[str] = None) -> MessageSchema:
    """Parse ``.msg`` text; nested references resolve through ``registry``."""
    type_name = canonical_name(type_name)
    package = type_name.split("/", 1)[0] if "/" in type_name else ""
    raw = _parse_lines(text, source)

    def lookup(full: str, line: int) -> MessageSchema:
        if registry is None or full not in registry:
            raise UnknownType(full, line)
        return registry.get(full)
    return _build(type_name, raw, lookup, package)


class SchemaRegistry:
    """Type name -> schema; immutable once loading is done."""

    def __init__(self, schemas: Iterable[MessageSchema] = ()):
        self._schemas: dict[str, MessageSchema] = {}
        for s in schemas:
            self.add(s)

    def __contains__(self, type_name) -> bool:
        return canonical_name(type_name) in self._schemas

    def __iter__(self):
        return iter(self._schemas.values())

    def __len__(self):
        return len(self._schemas)

    def names(self) -> list:
        return sorted(self._schemas)

    def get(self, type_name: str) -> MessageSchema:
        try:
            return self._schemas[canonical_name(type_name)]
        except KeyError:
            raise UnknownType(type_name) from None

    def add(self, schema: MessageSchema) -> MessageSchema:
        for s in schema.closure():
            existing = self._schemas.get(s.type_name)
            if existing is not None and existing != s:
                raise ParseError(f"conflicting definitions for {s.type_name}")
            self._schemas[s.type_name] = s
        return schema

    def parse(self, text: str, type_name: str, source: Optional[str] = None) -> MessageSchema:
        return self.add(parse_msg_file(text, type_name, self, source=source))

    def load_texts(self, texts: dict) -> "SchemaRegistry":
        """Load ``{type_name: msg_text}`` in dependency order."""
        pending = {canonical_name(k): v for k, v in texts.items()}
        active: list = []

        def load(full: str, line: Optional[int] = None) -> MessageSchema:
            if full in self._schemas:
                return self._schemas[full]
            if full not in pending:
                raise UnknownType(full, line)
            if full in active:
                cycle = " -> ".join(active + [full])
                raise ParseError(f"recursive type: {cycle}", line, full)
            active.append(full)
            try:
                raw = _parse_lines(pending[full], full)
                schema = _build(full, raw, load, full.split("/", 1)[0])
            finally:
                active.pop()
            self._schemas[full] = schema
            return schema

        for name in sorted(pending):
            load(name)
        return self

    def load_dir(self, root) -> "SchemaRegistry":
        """Load every ``<package>/msg/<Name>.msg`` under ``root``."""
        root = Path(root)
        texts = {}
        for path in sorted(root.glob("*/msg/*.msg")):
            texts[f"{path.parent.parent.name}/{path.stem}"] = path.read_text(encoding="utf-8")
        return self.load_texts(texts)

    @classmethod
    def bundled(cls) -> "SchemaRegistry":
        texts = {}
        base = resources.files("someip_bridge") / "msgs"
        for pkg in sorted(base.iterdir(), key=lambda p: p.name):
            msg_dir = pkg / "msg"
            if not msg_dir.is_dir():
                continue
            for entry in sorted(msg_dir.iterdir(), key=lambda p: p.name):
                if entry.name.endswith(".msg"):
                    texts[f"{pkg.name}/{entry.name[:-4]}"] = entry.read_text(encoding="utf-8")
        return cls().load_texts(texts)


# Message types used to exercise the bridge, smallest to largest.
BUNDLED_EVAL_TYPES = (
    "geometry_msgs/Point",
    "sensor_msgs/NavSatFix",
    "sensor_msgs/PointCloud2",
    "tf2_msgs/TFMessage",
    "autoware_msgs/Waypoint",
)
