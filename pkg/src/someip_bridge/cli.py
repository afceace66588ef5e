"""Command-line entry point: bridge, confgen, bench and inspect.

Exit codes: 0 ok, 1 runtime failure, 2 configuration error, 3 discovery
timeout.  ``BRIDGE_LOG`` and ``BRIDGE_CONFIG_DIR`` provide defaults for
``--log-level`` and ``--config-dir``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import signal
import socket
import struct
import sys
import threading
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .bus import Bus, Topic
from .config import BridgeRouteConfig, find_pairs, load_bridge_config, parse_deployment
from .errors import (BridgeError, CodecError, ConfigError, DiscoveryTimeout, SchemaError,
                     UnknownType)
from .net import SD_MULTICAST, Endpoint, set_buffers
from .schema import Direction, SchemaRegistry, decode_bus, decode_someip, encode_someip
from .sd_wire import is_sd, someip_to_sd
from .someip import decode_message

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_DISCOVERY = 3

log = logging.getLogger("someip_bridge.cli")

LOG_FORMAT = "ts=%(asctime)s level=%(levelname)s logger=%(name)s %(message)s"


def parse_endpoint(text: str) -> Endpoint:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise argparse.ArgumentTypeError(f"expected ADDRESS:PORT, got {text!r}")
    try:
        return Endpoint(host, int(port))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _sizes(text: str) -> list:
    try:
        sizes = [int(float(s)) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None
    if not sizes or min(sizes) <= 0:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return sizes


def _registry(msg_dir) -> SchemaRegistry:
    registry = SchemaRegistry.bundled()
    if msg_dir:
        registry.load_dir(msg_dir)
    return registry


def _add_sd_options(p) -> None:
    p.add_argument("--sd-address", default="127.0.0.1",
                   help="local address for SD and data sockets (default 127.0.0.1)")
    p.add_argument("--sd-port", type=int, default=0,
                   help="SD unicast port (default 0: ephemeral)")
    p.add_argument("--sd-group", type=parse_endpoint, default=SD_MULTICAST,
                   help=f"SD multicast group (default {SD_MULTICAST.address}:{SD_MULTICAST.port})")


def _stop_on_signals(event: threading.Event) -> None:
    def handler(signum, _frame):
        log.info("signal=%s action=shutdown", signal.Signals(signum).name)
        event.set()
    signal.signal(signal.SIGTERM, handler)
    signal.signal(signal.SIGINT, handler)


# bridge

def _config_pairs(args) -> list:
    pairs = [tuple(p) for p in (args.pair or [])]
    if not pairs:
        if not args.config_dir:
            raise ConfigError("no --pair given and no --config-dir / BRIDGE_CONFIG_DIR set")
        pairs = find_pairs(args.config_dir)
        if not pairs:
            raise ConfigError(f"no *.fidl / *.json pairs in {args.config_dir}")
    return pairs


def cmd_bridge(args) -> int:
    from .bench.replay import Recorder, load_trace, replay
    from .bridge import Bridge
    from .transport import UdpNetwork

    try:
        registry = _registry(args.msg_dir)
        routes = load_bridge_config(_config_pairs(args), registry)
        trace = load_trace(args.replay) if args.replay else None
    except (ConfigError, SchemaError, OSError, BridgeError) as exc:
        log.error("config_error=%r", str(exc))
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    stop = threading.Event()
    _stop_on_signals(stop)
    net = UdpNetwork(interface=args.sd_address)
    bus = Bus(args.bus)
    bridge = Bridge(net, bus, Endpoint(args.sd_address, args.sd_port), group=args.sd_group,
                    registry=registry)
    recorder = None
    try:
        try:
            for cfg in routes:
                bridge.add_route(cfg)
        except (ConfigError, SchemaError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        outputs = [Topic(r.topic, r.type_name) for r in routes
                   if r.direction is Direction.SOMEIP_TO_BUS]
        if args.record:
            recorder = Recorder(bus, args.record, outputs)
        if args.echo:
            for r in bridge.routes:
                if r.cfg.direction is Direction.SOMEIP_TO_BUS:
                    bus.create_subscriber(Topic(r.cfg.topic, r.cfg.type_name),
                                          _echo(r.cfg.topic, r.schema))
        bridge.start()
        for r in bridge.routes:
            c = r.cfg
            log.info("route=%s direction=%s topic=%s type=%s service=0x%04x instance=0x%04x "
                     "event=0x%04x eventgroup=0x%04x major=%d endpoint=%s", r.name,
                     c.direction.value, c.topic, c.type_name, c.service_id, c.instance_id,
                     c.event_id, c.eventgroup_id, c.major_version, r.data_endpoint)
        print(f"bridge running: {len(bridge.routes)} route(s)", file=sys.stderr, flush=True)
        if trace is not None:
            threading.Thread(target=_replay_when_subscribed,
                             args=(bridge, trace, bus, args, stop, replay), daemon=True).start()
        deadline = time.monotonic() + args.duration if args.duration else None
        while not stop.wait(0.1):
            if deadline is not None and time.monotonic() >= deadline:
                break
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BridgeError as exc:
        log.error("fatal=%r", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        bridge.stop()
        if recorder is not None:
            recorder.close()
        bus.close()
        net.close()
        metrics = {name: m for name, m in bridge.metrics().items()}
        log.info("shutdown metrics=%s", json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def _echo(topic: str, schema):
    # someip_digest matches the digest a SOME/IP sender logs for the same value
    def show(sample):
        try:
            wire = encode_someip(schema, decode_bus(schema, sample.payload))
            again = hashlib.sha256(wire).hexdigest()
        except (CodecError, SchemaError) as exc:
            again = f"undecodable:{exc}"
        log.info("topic=%s seq=%d bytes=%d digest=%s someip_digest=%s", topic, sample.seq,
                 len(sample.payload), hashlib.sha256(sample.payload).hexdigest(), again)
    return show


def _replay_when_subscribed(bridge, trace, bus, args, stop, replay) -> None:
    senders = [r for r in bridge.routes if r.cfg.direction is Direction.BUS_TO_SOMEIP]
    deadline = time.monotonic() + args.discovery_timeout
    while senders and not all(r.subscribers() for r in senders):
        if stop.is_set() or time.monotonic() > deadline:
            log.warning("replay=start reason=no subscribers after %.1fs", args.discovery_timeout)
            break
        time.sleep(0.05)
    n = 0
    for _ in range(args.loop if args.loop > 0 else 1 << 62):
        if stop.is_set():
            break
        n += replay(trace, bus, timing=not args.no_timing)
    log.info("replay=done samples=%d", n)


# confgen

_CONFGEN_FLAGS = {
    "interface_name": "--interface-name",
    "method_name": "--method-name",
    "major_version": "--major-version",
    "minor_version": "--minor-version",
    "service_id": "--service-id",
    "instance_id": "--instance-id",
    "event_id": "--event-id",
    "eventgroup_id": "--eventgroup-id",
    "service_name": "--service-name",
    "package_name": "--package-name",
    "address": "--address",
    "port": "--port",
    "direction": "--direction",
    "topic": "--topic",
}


def cmd_confgen(args) -> int:
    from .confgen import GeneratorInput, generate, prompt_inputs, validate_pair

    try:
        registry = _registry(args.msg_dir)
        if args.validate:
            iface, deploy = (Path(p).read_text(encoding="utf-8") for p in args.validate)
            findings = validate_pair(iface, deploy, registry)
            for f in findings:
                print(f)
            if findings:
                return EXIT_CONFIG
            print("ok: pair is consistent")
            return EXIT_OK
        if args.interactive:
            values = prompt_inputs()
        else:
            values = {k: getattr(args, k) for k in _CONFGEN_FLAGS if getattr(args, k) is not None}
        inp = GeneratorInput.from_strings(values, msg=args.msg, type_name=args.type)
        pair = generate(inp, registry)
        out_dir = args.out_dir or args.config_dir or "."
        iface_path, deploy_path = pair.write(out_dir)
    except (ConfigError, SchemaError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {iface_path}")
    print(f"wrote {deploy_path}")
    print(f"lines: boilerplate={pair.boilerplate_lines} schema={pair.schema_lines} "
          f"total={pair.total_lines}")
    return EXIT_OK


# bench

def cmd_bench_pipeline(args) -> int:
    from .bench.pipeline import run_pipeline
    from .bench.stats import report, text_table, write_json

    try:
        result = run_pipeline(args.sizes, args.iters, args.transport, warmup=args.warmup,
                              timeout=args.timeout, seed=args.seed)
    except TimeoutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DISCOVERY
    meta = {"iterations": args.iters, "warmup": args.warmup, "seed": args.seed,
            "lost": result.lost, "mismatched": result.mismatched,
            "sink_grows": result.sink_grows, "version": __version__}
    try:
        doc = report(result.traces, transport=args.transport, meta=meta)
    except BridgeError as exc:
        print(f"error: {exc} (lost={result.lost})", file=sys.stderr)
        return EXIT_RUNTIME
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fp:
            write_json(doc, fp)
    if args.trace_out:
        with open(args.trace_out, "w", encoding="utf-8") as fp:
            for t in result.traces:
                fp.write(json.dumps(asdict(t), sort_keys=True) + "\n")
    sys.stdout.write(text_table(doc))
    print(f"lost={result.lost} mismatched={result.mismatched}")
    return EXIT_OK if result.mismatched == 0 else EXIT_RUNTIME


def _route_from_deployment(path, registry) -> BridgeRouteConfig:
    """Load a route from a deployment file, using its sibling .fidl when present."""
    path = Path(path)
    iface = path.with_suffix(".fidl")
    if path.suffix == ".fidl" or iface.exists():
        return load_bridge_config([(iface, path.with_suffix(".json"))], registry)[0]
    doc = parse_deployment(Path(path).read_text(encoding="utf-8"))
    fields = {k: doc[k] for k in BridgeRouteConfig.__dataclass_fields__ if k in doc}
    cfg = BridgeRouteConfig(**fields)
    if cfg.type_name not in registry:
        raise UnknownType(cfg.type_name)
    return cfg


def cmd_bench_mock_ap(args) -> int:
    from .bench.mock_ap import PeerRole, run_mock_ap
    from .transport import UdpNetwork

    try:
        registry = _registry(args.msg_dir)
        cfg = _route_from_deployment(args.config, registry)
    except (ConfigError, SchemaError, OSError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    stop = threading.Event()
    _stop_on_signals(stop)
    net = UdpNetwork(interface=args.sd_address)
    try:
        peer = run_mock_ap(PeerRole(args.role), cfg, net, Endpoint(args.sd_address, args.sd_port),
                           count=args.count, rate=args.rate, timeout=args.timeout,
                           group=args.sd_group, registry=registry, seed=args.seed,
                           should_stop=stop.is_set)
    except DiscoveryTimeout as exc:
        print(f"discovery timeout: {exc}", file=sys.stderr)
        return EXIT_DISCOVERY
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        net.close()
    for d in peer.digests:
        print(f"digest={d}")
    print(f"role={args.role} sent={peer.sent} received={peer.received} invalid={peer.invalid}",
          flush=True)
    if args.role == "receiver" and peer.received < args.count:
        return EXIT_RUNTIME
    return EXIT_OK


# inspect

MALFORMED_REASON = "bad magic/length"


def hexdump(data: bytes, width: int = 16) -> str:
    lines = []
    for off in range(0, len(data), width):
        chunk = data[off:off + width]
        hexpart = " ".join(f"{b:02x}" for b in chunk)
        text = "".join(chr(b) if 32 <= b < 127 else "." for b in chunk)
        lines.append(f"  {off:08x}  {hexpart:<{width * 3}} |{text}|")
    return "\n".join(lines)


def describe_datagram(data: bytes, schema=None) -> list:
    """One line per SOME/IP message in ``data`` (plus SD entries / fields)."""
    out = []
    rest = bytes(data)
    while rest:
        try:
            msg, rest = decode_message(rest)
        except CodecError as exc:
            out.append(f"malformed reason={MALFORMED_REASON!r} detail={str(exc)!r} "
                       f"bytes={len(rest)}")
            out.append(hexdump(rest))
            return out
        h = msg.header
        out.append(f"someip service=0x{h.service_id:04x} method=0x{h.method_id:04x} "
                   f"client=0x{h.client_id:04x} session=0x{h.session_id:04x} "
                   f"type={h.message_type.name} rc={h.return_code.name} "
                   f"iface={h.interface_version} length={h.length}")
        if is_sd(msg):
            try:
                sd = someip_to_sd(msg)
            except CodecError as exc:
                out.append(f"  sd malformed detail={str(exc)!r}")
                continue
            for e in sd.entries:
                line = (f"  sd {e.entry_type.name} service=0x{e.key.service_id:04x} "
                        f"instance=0x{e.key.instance_id:04x} major={e.major_version} "
                        f"ttl={e.ttl}")
                if e.eventgroup_id is not None:
                    line += f" eventgroup=0x{e.eventgroup_id:04x}"
                else:
                    line += f" minor={e.minor_version}"
                if e.endpoint is not None:
                    line += f" endpoint={e.endpoint.address}:{e.endpoint.port}"
                out.append(line)
        elif schema is not None:
            try:
                value = decode_someip(schema, msg.payload)
            except (CodecError, SchemaError) as exc:
                out.append(f"  payload undecodable detail={str(exc)!r}")
            else:
                out.append("  " + _format_value(value))
    return out


def _format_value(value) -> str:
    def short(v):
        if isinstance(v, (bytes, bytearray)):
            return f"<{len(v)} bytes>" if len(v) > 16 else v.hex()
        if isinstance(v, dict):
            return {k: short(x) for k, x in v.items()}
        if isinstance(v, list):
            return [short(x) for x in v]
        return v
    return json.dumps(short(value), sort_keys=False, default=str)


def _inspect_schema(args, registry):
    if args.schema:
        path = Path(args.schema)
        name = args.type or f"inspect_msgs/{path.stem}"
        return registry.parse(path.read_text(encoding="utf-8"), name, source=str(path))
    if args.type:
        return registry.get(args.type)
    return None


def cmd_inspect(args) -> int:
    from .bench.replay import RecordKind, TraceWriter, read_trace

    try:
        registry = _registry(args.msg_dir)
        schema = _inspect_schema(args, registry)
    except (ConfigError, SchemaError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.trace:
        try:
            with open(args.trace, "rb") as fp:
                for rec in read_trace(fp):
                    if rec.kind is RecordKind.DATAGRAM:
                        print(f"datagram t_ns={rec.t_ns} source={rec.name} bytes={len(rec.payload)}")
                        for line in describe_datagram(rec.payload, schema):
                            print(line)
                    elif rec.kind is RecordKind.BUS_SAMPLE:
                        print(f"bus topic={rec.name} t_ns={rec.t_ns} bytes={len(rec.payload)}")
                        if schema is not None:
                            try:
                                print("  " + _format_value(decode_bus(schema, rec.payload)))
                            except (CodecError, SchemaError) as exc:
                                print(f"  payload undecodable detail={str(exc)!r}")
                    else:
                        print(f"topic name={rec.name} type={rec.payload.decode('utf-8', 'replace')}")
        except BridgeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        except OSError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK

    if not (args.listen or args.group):
        print("config error: one of --trace, --listen or --group is required", file=sys.stderr)
        return EXIT_CONFIG
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    if hasattr(socket, "SO_REUSEPORT"):
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
    set_buffers(sock, 8 << 20)
    try:
        if args.group:
            sock.bind((args.group.address, args.group.port))
            mreq = struct.pack("4s4s", socket.inet_aton(args.group.address),
                               socket.inet_aton(args.interface))
            sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        else:
            sock.bind(tuple(args.listen))
    except OSError as exc:
        print(f"config error: cannot bind: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"listening on {sock.getsockname()[0]}:{sock.getsockname()[1]}", file=sys.stderr,
          flush=True)
    stop = threading.Event()
    _stop_on_signals(stop)
    sock.settimeout(0.1)
    writer = None
    record_fp = open(args.record, "wb") if args.record else None
    if record_fp is not None:
        writer = TraceWriter(record_fp)
    seen = 0
    deadline = time.monotonic() + args.duration if args.duration else None
    try:
        while not stop.is_set() and (args.count == 0 or seen < args.count):
            if deadline is not None and time.monotonic() >= deadline:
                break
            try:
                data, addr = sock.recvfrom(65536)
            except socket.timeout:
                continue
            seen += 1
            if writer is not None:
                writer.datagram(f"{addr[0]}:{addr[1]}", data)
            print(f"datagram source={addr[0]}:{addr[1]} bytes={len(data)}")
            for line in describe_datagram(data, schema):
                print(line)
            sys.stdout.flush()
    finally:
        sock.close()
        if record_fp is not None:
            record_fp.close()
    return EXIT_OK


# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="someip-bridge",
        description="Bridge a topic bus to SOME/IP; generate route configs; benchmark; inspect.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=os.environ.get("BRIDGE_LOG", "info"),
                        choices=["debug", "info", "warning", "error"],
                        help="log verbosity (env BRIDGE_LOG, default info)")
    parser.add_argument("--config-dir", default=os.environ.get("BRIDGE_CONFIG_DIR"),
                        help="directory of *.fidl/*.json route pairs (env BRIDGE_CONFIG_DIR)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("bridge", help="run bridge routes until SIGTERM/SIGINT")
    p.add_argument("--pair", nargs=2, action="append", metavar=("INTERFACE", "DEPLOYMENT"),
                   help="one route: interface file and deployment file (repeatable)")
    p.add_argument("--msg-dir", help="extra <package>/msg/<Name>.msg definitions")
    p.add_argument("--bus", choices=["inproc", "udp"], default="inproc",
                   help="bus transport inside this process (default inproc)")
    _add_sd_options(p)
    p.add_argument("--replay", metavar="TRACE", help="publish the samples of a trace file")
    p.add_argument("--no-timing", action="store_true",
                   help="replay back to back instead of at the recorded spacing")
    p.add_argument("--loop", type=int, default=1, help="replay passes, 0 for endless (default 1)")
    p.add_argument("--discovery-timeout", type=float, default=10.0,
                   help="seconds replay waits for SOME/IP subscribers (default 10)")
    p.add_argument("--record", metavar="TRACE", help="record someip_to_bus output topics")
    p.add_argument("--echo", action="store_true", help="log every output sample with a digest")
    p.add_argument("--duration", type=float, default=0.0,
                   help="exit after this many seconds (default 0: run until signalled)")
    p.set_defaults(func=cmd_bridge)

    p = sub.add_parser("confgen", help="generate an interface/deployment pair for one route")
    for name, flag in _CONFGEN_FLAGS.items():
        p.add_argument(flag, dest=name, help=name.replace("_", " "))
    p.add_argument("--msg", help="message definition file (.msg)")
    p.add_argument("--type", help="bundled type name, or the name to give --msg")
    p.add_argument("--msg-dir", help="extra <package>/msg/<Name>.msg definitions")
    p.add_argument("--out-dir", help="output directory (default --config-dir or .)")
    p.add_argument("--interactive", action="store_true", help="prompt for the manual inputs")
    p.add_argument("--validate", nargs=2, metavar=("INTERFACE", "DEPLOYMENT"),
                   help="check an existing pair instead of generating")
    p.set_defaults(func=cmd_confgen)

    bench = sub.add_parser("bench", help="latency pipeline and mock SOME/IP peer")
    bsub = bench.add_subparsers(dest="bench_command", required=True, metavar="BENCH")
    p = bsub.add_parser("pipeline", help="run the A->B->C->D latency pipeline")
    p.add_argument("--sizes", type=_sizes, default=None,
                   help="comma-separated point counts (default 100,1000,5000,10000,50000,"
                        "100000,500000)")
    p.add_argument("--iters", type=int, default=30, help="measured rounds (default 30)")
    p.add_argument("--warmup", type=int, default=2, help="discarded rounds (default 2)")
    p.add_argument("--transport", choices=["inproc", "udp"], default="udp",
                   help="inproc (virtual network) or udp loopback (default udp)")
    p.add_argument("--timeout", type=float, default=5.0, help="per-sample timeout in seconds")
    p.add_argument("--seed", type=int, default=0, help="payload and ordering seed")
    p.add_argument("--json", metavar="PATH", help="write the JSON report here")
    p.add_argument("--trace-out", metavar="PATH", help="write raw checkpoint traces (NDJSON)")
    p.set_defaults(func=cmd_bench_pipeline)

    p = bsub.add_parser("mock-ap", help="SOME/IP-only peer that sends or receives a route")
    p.add_argument("--role", choices=["sender", "receiver"], required=True)
    p.add_argument("--config", required=True, metavar="DEPLOYMENT",
                   help="route deployment file (.json)")
    p.add_argument("--msg-dir", help="extra <package>/msg/<Name>.msg definitions")
    _add_sd_options(p)
    p.add_argument("--count", type=int, default=10, help="notifications to send/await")
    p.add_argument("--rate", type=float, default=10.0, help="sender rate in Hz (default 10)")
    p.add_argument("--timeout", type=float, default=10.0, help="discovery timeout in seconds")
    p.add_argument("--seed", type=int, default=0, help="seed for generated values")
    p.set_defaults(func=cmd_bench_mock_ap)

    p = sub.add_parser("inspect", help="decode SOME/IP datagrams from a socket or trace file")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--listen", type=parse_endpoint, metavar="ADDRESS:PORT",
                     help="bind a unicast socket and decode what arrives")
    src.add_argument("--group", type=parse_endpoint, metavar="ADDRESS:PORT",
                     help="join a multicast group (e.g. the SD group)")
    src.add_argument("--trace", metavar="TRACE", help="decode a recorded trace file")
    p.add_argument("--interface", default="127.0.0.1", help="interface for --group")
    p.add_argument("--schema", metavar="MSG", help="decode payloads with this .msg file")
    p.add_argument("--type", help="decode payloads as this bundled type (or name for --schema)")
    p.add_argument("--msg-dir", help="extra <package>/msg/<Name>.msg definitions")
    p.add_argument("--count", type=int, default=0, help="stop after N datagrams (0: no limit)")
    p.add_argument("--duration", type=float, default=0.0, help="stop after N seconds")
    p.add_argument("--record", metavar="TRACE", help="also write received datagrams to a trace")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()), format=LOG_FORMAT,
                        stream=sys.stderr)
    if getattr(args, "sizes", "unset") is None:
        from .bench.pointcloud import DEFAULT_SIZES
        args.sizes = list(DEFAULT_SIZES)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_OK
    except Exception as exc:  # last resort: documented exit code instead of a traceback
        log.exception("fatal=%r", str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
