"""Interface / deployment file generator.

Fourteen manual inputs (the ten route identifiers and names, plus the data
endpoint address and port, the direction and the topic) and a message
definition are enough to produce the file pair the bridge loads.  The
output is a pure function of the inputs and the schema text.

The generated interface file has a fixed boilerplate part and a
schema-dependent part (the struct declarations in the ``typeCollection``
block); :class:`GeneratedPair` reports both line counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Optional

from .config import (DEPLOYMENT_FORMAT, BridgeRouteConfig, Finding, check_route_fields,
                     compare_pair, franca_type, parse_deployment, parse_int, parse_interface)
from .errors import BridgeError, ConfigError, MissingField
from .schema import Direction, MessageSchema, SchemaRegistry, canonical_name

# prompt order: the ten route requirements, then the four deployment extras
MANUAL_INPUTS = (
    ("interface_name", "Interface name"),
    ("method_name", "Method name"),
    ("major_version", "Major version"),
    ("minor_version", "Minor version"),
    ("service_id", "Service ID"),
    ("instance_id", "Instance ID"),
    ("event_id", "Event ID"),
    ("eventgroup_id", "Eventgroup ID"),
    ("service_name", "Service name"),
    ("package_name", "Package name"),
    ("address", "Data endpoint address"),
    ("port", "Data endpoint port"),
    ("direction", "Direction (bus_to_someip / someip_to_bus)"),
    ("topic", "Topic name"),
)
_INT_FIELDS = {"major_version", "minor_version", "service_id", "instance_id", "event_id",
               "eventgroup_id", "port"}


@dataclass(frozen=True)
class GeneratorInput:
    interface_name: str
    method_name: str
    major_version: int
    minor_version: int
    service_id: int
    instance_id: int
    event_id: int
    eventgroup_id: int
    service_name: str
    package_name: str
    address: str = "127.0.0.1"
    port: int = 30501
    direction: Direction = Direction.BUS_TO_SOMEIP
    topic: str = "/bridge"
    msg: Optional[str] = None  # path to a .msg file
    type_name: Optional[str] = None  # bundled type, or the name to give ``msg``

    def __post_init__(self):
        check_route_fields(self)

    @classmethod
    def from_strings(cls, values: dict, **extra) -> "GeneratorInput":
        kwargs = {}
        for name, raw in values.items():
            if name in _INT_FIELDS:
                kwargs[name] = parse_int(raw, name)
            elif name == "direction" and isinstance(raw, str):
                try:
                    kwargs[name] = Direction.parse(raw)
                except ValueError:
                    raise ConfigError(f"bad direction {raw!r}") from None
            else:
                kwargs[name] = raw
        missing = [n for n, _ in MANUAL_INPUTS if n not in kwargs]
        if missing:
            raise MissingField(missing[0], "generator input")
        return cls(**kwargs, **extra)


@dataclass(frozen=True)
class GeneratedPair:
    stem: str
    interface_text: str
    deployment_text: str
    boilerplate_lines: int
    schema_lines: int

    @property
    def total_lines(self) -> int:
        return self.boilerplate_lines + self.schema_lines

    def write(self, out_dir) -> tuple:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        iface = out / f"{self.stem}.fidl"
        deploy = out / f"{self.stem}.json"
        iface.write_text(self.interface_text, encoding="utf-8")
        deploy.write_text(self.deployment_text, encoding="utf-8")
        return iface, deploy


def _msg_type_name(path: Path, given: Optional[str]) -> str:
    if given:
        return canonical_name(given)
    if path.parent.name == "msg" and path.parent.parent.name:
        return f"{path.parent.parent.name}/{path.stem}"
    return f"custom_msgs/{path.stem}"


def resolve_input_schema(inp: GeneratorInput, registry: Optional[SchemaRegistry]) -> MessageSchema:
    registry = registry if registry is not None else SchemaRegistry.bundled()
    if inp.msg:
        path = Path(inp.msg)
        text = path.read_text(encoding="utf-8")
        return registry.parse(text, _msg_type_name(path, inp.type_name), source=str(path))
    if inp.type_name:
        return registry.get(canonical_name(inp.type_name))
    raise MissingField("msg", "generator input")


def struct_lines(schema: MessageSchema) -> list:
    """The schema-dependent lines: one struct block per distinct type."""
    lines = []
    for s in schema.closure():
        lines.append(f"    struct {s.type_name} {{")
        for f in s.fields:
            lines.append(f"        {franca_type(f)} {f.name}")
        lines.append("    }")
    return lines


def _interface_text(inp: GeneratorInput, schema: MessageSchema) -> tuple:
    head = [
        "// generated by someip-bridge confgen; regenerate instead of editing",
        f"package {inp.package_name}",
        "",
        f"interface {inp.interface_name} {{",
        "    version {",
        f"        major {inp.major_version}",
        f"        minor {inp.minor_version}",
        "    }",
        "",
        f"    broadcast {inp.method_name} {{",
        "        out {",
        f"            {schema.type_name} data",
        "        }",
        "    }",
        "}",
        "",
        f"typeCollection {inp.interface_name}Types {{",
    ]
    body = struct_lines(schema)
    tail = [
        "}",
        "",
        f"deployment for {inp.package_name}.{inp.interface_name} {{",
        f'    ServiceName = "{inp.service_name}"',
        f"    SomeIpServiceID = 0x{inp.service_id:04X}",
        f"    SomeIpInstanceID = 0x{inp.instance_id:04X}",
        f"    SomeIpEventID = 0x{inp.event_id:04X}",
        f"    SomeIpEventGroupID = 0x{inp.eventgroup_id:04X}",
        "}",
    ]
    return "\n".join(head + body + tail) + "\n", len(head) + len(tail), len(body)


def _deployment_doc(inp: GeneratorInput, schema: MessageSchema) -> dict:
    return {
        "format": DEPLOYMENT_FORMAT,
        "package_name": inp.package_name,
        "interface_name": inp.interface_name,
        "method_name": inp.method_name,
        "service_name": inp.service_name,
        "major_version": inp.major_version,
        "minor_version": inp.minor_version,
        "service_id": f"0x{inp.service_id:04X}",
        "instance_id": f"0x{inp.instance_id:04X}",
        "event_id": f"0x{inp.event_id:04X}",
        "eventgroup_id": f"0x{inp.eventgroup_id:04X}",
        "direction": inp.direction.value,
        "topic": inp.topic,
        "type_name": schema.type_name,
        "endpoint": {"address": inp.address, "port": inp.port},
    }


def generate(inp: GeneratorInput, registry: Optional[SchemaRegistry] = None) -> GeneratedPair:
    schema = resolve_input_schema(inp, registry)
    iface, fixed, body = _interface_text(inp, schema)
    deploy = json.dumps(_deployment_doc(inp, schema), indent=2) + "\n"
    return GeneratedPair(
        stem=f"{inp.interface_name}_{inp.direction.value}",
        interface_text=iface,
        deployment_text=deploy,
        boilerplate_lines=fixed + deploy.count("\n"),
        schema_lines=body,
    )


def validate_pair(interface_text: str, deployment_text: str,
                  registry: Optional[SchemaRegistry] = None) -> list:
    """Every disagreement between the two files; empty means loadable."""
    try:
        iface = parse_interface(interface_text, registry)
    except BridgeError as exc:
        return [Finding("error", "interface file", where=str(exc))]
    try:
        deploy = parse_deployment(deployment_text)
    except BridgeError as exc:
        return [Finding("error", "deployment file", where=str(exc))]
    findings = compare_pair(iface, deploy)
    if not findings:
        type_name = deploy["type_name"]
        if type_name not in iface["schemas"] and (registry is None or type_name not in registry):
            findings.append(Finding("missing", "type_name", where=f"struct {type_name}"))
        else:
            values = {n: deploy[n] for n in
                      [f.name for f in fields(BridgeRouteConfig) if f.name != "schema"]}
            try:
                BridgeRouteConfig(**values)
            except BridgeError as exc:
                findings.append(Finding("error", "route", where=str(exc)))
    return findings


def prompt_inputs(ask: Callable[[str], str] = input) -> dict:
    """Ask for the fourteen manual inputs in order; returns raw strings."""
    values = {}
    for name, label in MANUAL_INPUTS:
        while True:
            raw = ask(f"{label}: ").strip()
            if raw:
                values[name] = raw
                break
    return values
