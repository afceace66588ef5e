"""Route configuration: the interface-definition file, the deployment JSON,
and the cross-check that keeps the two aligned.

Interface file grammar (line oriented, ``//`` comments)::

    package <dotted.name>
    interface <Name> {
        version {
            major <int>
            minor <int>
        }
        broadcast <Method> {
            out {
                <pkg/Type> data
            }
        }
    }
    typeCollection <Name> {
        struct <pkg/Type> {
            <FieldType> <field>
        }
    }
    deployment for <package>.<Interface> {
        <Key> = <value>
    }

Field types are Franca names (``UInt32``, ``Double``, ``String`` ...) or
nested struct type names, with optional ``[]`` / ``[N]`` suffix.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .errors import (ConfigError, IdMismatch, InvalidId, MissingField, ParseError,
                     UnknownType)
from .net import Endpoint
from .schema import Direction, FieldDef, MessageSchema, SchemaRegistry
from .schema.model import BUILTINS
from .sd_wire import ServiceKey
from .someip import EVENT_BIT

DEPLOYMENT_FORMAT = "someip-bridge/deployment/1"

FRANCA_TYPES = {
    "bool": "Boolean", "int8": "Int8", "uint8": "UInt8", "int16": "Int16", "uint16": "UInt16",
    "int32": "Int32", "uint32": "UInt32", "int64": "Int64", "uint64": "UInt64",
    "float32": "Float", "float64": "Double", "string": "String",
}
FROM_FRANCA = {v: k for k, v in FRANCA_TYPES.items()}

ID_FIELDS = ("service_id", "instance_id", "event_id", "eventgroup_id")
NAME_FIELDS = ("interface_name", "method_name", "service_name", "package_name")

# fields each file carries; the intersection is cross-checked
INTERFACE_FIELDS = ("package_name", "interface_name", "major_version", "minor_version",
                    "method_name", "type_name", "service_name", *ID_FIELDS)
DEPLOYMENT_FIELDS = ("package_name", "interface_name", "method_name", "service_name",
                     "major_version", "minor_version", *ID_FIELDS,
                     "direction", "topic", "type_name", "address", "port")

_DEPLOY_KEYS = {
    "ServiceName": "service_name",
    "SomeIpServiceID": "service_id",
    "SomeIpInstanceID": "instance_id",
    "SomeIpEventID": "event_id",
    "SomeIpEventGroupID": "eventgroup_id",
}
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_DOTTED = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")


@dataclass(frozen=True)
class BridgeRouteConfig:
    direction: Direction
    topic: str
    type_name: str
    service_id: int
    instance_id: int
    event_id: int
    eventgroup_id: int
    major_version: int
    minor_version: int
    interface_name: str
    method_name: str
    service_name: str
    package_name: str
    address: str
    port: int
    schema: Optional[MessageSchema] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        check_route_fields(self)

    @property
    def key(self) -> ServiceKey:
        return ServiceKey(self.service_id, self.instance_id)

    @property
    def method_id(self) -> int:
        """The event id as it appears in the SOME/IP header."""
        return self.event_id | EVENT_BIT

    @property
    def endpoint(self) -> Endpoint:
        return Endpoint(self.address, self.port)

    @property
    def name(self) -> str:
        return f"{self.service_name}/{self.topic}"

    def with_schema(self, schema: MessageSchema) -> "BridgeRouteConfig":
        return replace(self, schema=schema)

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "schema":
                continue
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Direction) else v
        return out


def check_route_fields(cfg) -> None:
    for name in ID_FIELDS:
        value = getattr(cfg, name)
        if not isinstance(value, int) or isinstance(value, bool) or not 0 < value <= 0xFFFF:
            raise InvalidId(name, value)
    if cfg.instance_id == 0xFFFF:
        raise InvalidId("instance_id", cfg.instance_id)
    if not isinstance(cfg.major_version, int) or not 0 <= cfg.major_version <= 0xFF:
        raise InvalidId("major_version", cfg.major_version)
    if not isinstance(cfg.minor_version, int) or not 0 <= cfg.minor_version <= 0xFFFFFFFF:
        raise InvalidId("minor_version", cfg.minor_version)
    for name in ("interface_name", "method_name", "service_name"):
        if not _IDENT.match(getattr(cfg, name) or ""):
            raise ConfigError(f"{name} must be an identifier, got {getattr(cfg, name)!r}")
    if not _DOTTED.match(cfg.package_name or ""):
        raise ConfigError(f"package_name must be a dotted identifier, got {cfg.package_name!r}")
    if not cfg.topic or any(c.isspace() for c in cfg.topic):
        raise ConfigError(f"bad topic name {cfg.topic!r}")
    if not isinstance(cfg.port, int) or not 0 <= cfg.port <= 0xFFFF:
        raise InvalidId("port", cfg.port)
    Endpoint.parse(f"{cfg.address}:{cfg.port}")


def parse_int(value, name: str) -> int:
    if isinstance(value, bool):
        raise InvalidId(name, value)
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 0)
        except ValueError:
            pass
    raise InvalidId(name, value)


# -- interface file ---------------------------------------------------------

def franca_type(f: FieldDef) -> str:
    base = FRANCA_TYPES.get(f.type_name, f.type_name)
    if f.sequence:
        return base + "[]"
    if f.count is not None:
        return f"{base}[{f.count}]"
    return base


_FTYPE = re.compile(r"^(?P<base>[A-Za-z_][A-Za-z0-9_/]*)(?:\[(?P<n>[0-9]*)\])?$")


def _schemas_from_structs(structs: dict, registry: Optional[SchemaRegistry]) -> dict:
    """Build schemas from parsed struct blocks: ``{type_name: [(line, ftype, name)]}``."""
    built: dict = {}
    active: list = []

    def build(type_name: str, line: Optional[int]) -> MessageSchema:
        if type_name in built:
            return built[type_name]
        if type_name not in structs:
            if registry is not None and type_name in registry:
                return registry.get(type_name)
            raise UnknownType(type_name, line)
        if type_name in active:
            raise ParseError(f"recursive struct {type_name}", line)
        active.append(type_name)
        out = []
        for lineno, ftype, fname in structs[type_name]:
            m = _FTYPE.match(ftype)
            if not m:
                raise ParseError(f"bad field type {ftype!r}", lineno)
            base = m.group("base")
            count = int(m.group("n")) if m.group("n") else None
            sequence = "[" in ftype and count is None
            prim = FROM_FRANCA.get(base)
            if prim is not None:
                out.append(FieldDef(fname, prim, count, sequence))
            elif base in BUILTINS:
                raise ParseError(f"use Franca type names, not {base!r}", lineno)
            else:
                nested = build(base, lineno)
                out.append(FieldDef(fname, nested.type_name, count, sequence, nested))
        active.pop()
        schema = built[type_name] = MessageSchema(type_name, tuple(out))
        return schema

    for name in structs:
        build(name, None)
    return built


def parse_interface(text: str, registry: Optional[SchemaRegistry] = None) -> dict:
    """Parse an interface file into a flat field dict (plus ``schemas``).

    Absent blocks simply leave their fields out; the cross-check reports them.
    """
    found: dict = {}
    structs: dict = {}
    stack: list = []
    current_struct = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        top = stack[-1] if stack else None
        if line == "}":
            if not stack:
                raise ParseError("unbalanced '}'", lineno)
            closed = stack.pop()
            if closed == "struct":
                current_struct = None
            continue
        if toks[0] == "package" and len(toks) == 2 and top is None:
            found["package_name"] = toks[1]
        elif toks[0] == "interface" and len(toks) == 3 and toks[2] == "{" and top is None:
            found["interface_name"] = toks[1]
            stack.append("interface")
        elif toks == ["version", "{"] and top == "interface":
            stack.append("version")
        elif top == "version" and len(toks) == 2 and toks[0] in ("major", "minor"):
            found[f"{toks[0]}_version"] = parse_int(toks[1], f"{toks[0]}_version")
        elif toks[0] == "broadcast" and len(toks) == 3 and toks[2] == "{" and top == "interface":
            found["method_name"] = toks[1]
            stack.append("broadcast")
        elif toks == ["out", "{"] and top == "broadcast":
            stack.append("out")
        elif top == "out" and len(toks) == 2:
            found["type_name"] = toks[0]
        elif toks[0] == "typeCollection" and len(toks) == 3 and toks[2] == "{" and top is None:
            stack.append("typeCollection")
        elif toks[0] == "struct" and len(toks) == 3 and toks[2] == "{" and top == "typeCollection":
            current_struct = toks[1]
            if current_struct in structs:
                raise ParseError(f"duplicate struct {current_struct}", lineno)
            structs[current_struct] = []
            stack.append("struct")
        elif top == "struct" and len(toks) == 2:
            structs[current_struct].append((lineno, toks[0], toks[1]))
        elif toks[:2] == ["deployment", "for"] and len(toks) == 4 and toks[3] == "{" and top is None:
            stack.append("deployment")
        elif top == "deployment" and "=" in line:
            key, _, value = (p.strip() for p in line.partition("="))
            target = _DEPLOY_KEYS.get(key)
            if target is None:
                raise ParseError(f"unknown deployment key {key!r}", lineno)
            if target == "service_name":
                found[target] = value.strip('"')
            else:
                found[target] = parse_int(value, target)
        else:
            raise ParseError(f"unexpected line {line!r}", lineno)
    if stack:
        raise ParseError(f"unclosed block {stack[-1]!r}")
    found["schemas"] = _schemas_from_structs(structs, registry)
    return found


# -- deployment file --------------------------------------------------------

def parse_deployment(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"deployment JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("deployment JSON must be an object")
    fmt = doc.get("format", DEPLOYMENT_FORMAT)
    if fmt != DEPLOYMENT_FORMAT:
        raise ConfigError(f"unsupported deployment format {fmt!r}")
    out = {}
    for key in ("package_name", "interface_name", "method_name", "service_name",
                "topic", "type_name"):
        if key in doc:
            out[key] = doc[key]
    for key in (*ID_FIELDS, "major_version", "minor_version"):
        if key in doc:
            out[key] = parse_int(doc[key], key)
    if "direction" in doc:
        try:
            out["direction"] = Direction.parse(str(doc["direction"]))
        except ValueError:
            raise ConfigError(f"bad direction {doc['direction']!r}") from None
    endpoint = doc.get("endpoint")
    if isinstance(endpoint, dict):
        if "address" in endpoint:
            out["address"] = endpoint["address"]
        if "port" in endpoint:
            out["port"] = parse_int(endpoint["port"], "port")
    return out


# -- cross-check --------------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    kind: str  # "missing", "mismatch" or "error"
    field: str
    interface_value: object = None
    deployment_value: object = None
    where: str = ""

    def to_error(self) -> ConfigError:
        if self.kind == "missing":
            return MissingField(self.field, self.where)
        if self.kind == "error":
            return ConfigError(str(self))
        return IdMismatch(self.field, self.interface_value, self.deployment_value)

    def __str__(self) -> str:
        if self.kind == "missing":
            return f"missing {self.field} in {self.where}"
        if self.kind == "error":
            return f"{self.field}: {self.where}"
        return (f"mismatch {self.field}: interface={self.interface_value!r} "
                f"deployment={self.deployment_value!r}")


def compare_pair(iface: dict, deploy: dict) -> list:
    findings = []
    for name in INTERFACE_FIELDS:
        if name not in iface:
            findings.append(Finding("missing", name, where="interface file"))
    for name in DEPLOYMENT_FIELDS:
        if name not in deploy:
            findings.append(Finding("missing", name, where="deployment file"))
    for name in INTERFACE_FIELDS:
        if name in iface and name in deploy and iface[name] != deploy[name]:
            findings.append(Finding("mismatch", name, iface[name], deploy[name]))
    return findings


def route_from_pair(iface_text: str, deploy_text: str,
                    registry: Optional[SchemaRegistry] = None) -> BridgeRouteConfig:
    iface = parse_interface(iface_text, registry)
    deploy = parse_deployment(deploy_text)
    findings = compare_pair(iface, deploy)
    if findings:
        raise findings[0].to_error()
    type_name = deploy["type_name"]
    schema = iface["schemas"].get(type_name)
    if schema is None:
        if registry is None or type_name not in registry:
            raise UnknownType(type_name)
        schema = registry.get(type_name)
    values = {name: deploy[name] for name in DEPLOYMENT_FIELDS}
    return BridgeRouteConfig(schema=schema, **values)


def find_pairs(directory) -> list:
    """``(interface, deployment)`` path pairs sharing a stem in ``directory``."""
    directory = Path(directory)
    pairs = []
    for iface in sorted(directory.glob("*.fidl")):
        deploy = iface.with_suffix(".json")
        if not deploy.exists():
            raise MissingField("deployment file", str(deploy))
        pairs.append((iface, deploy))
    return pairs


def load_bridge_config(files, registry: Optional[SchemaRegistry] = None) -> list:
    """Load routes from ``(interface_path, deployment_path)`` pairs.

    Raises IdMismatch / MissingField when a pair disagrees.
    """
    routes = []
    for iface_path, deploy_path in files:
        iface_text = Path(iface_path).read_text(encoding="utf-8")
        deploy_text = Path(deploy_path).read_text(encoding="utf-8")
        routes.append(route_from_pair(iface_text, deploy_text, registry))
    return routes
