"""Single-pass conversion between the bus and SOME/IP encodings.

For each (schema, direction) a specialised converter is generated once
and cached: it walks the source bytes, validates them exactly as the
decoders do, and writes the target encoding in the same pass without
building an intermediate value.  Primitives move as unsigned integers
of their width, never as floats, so float bit patterns (NaN payloads
included) survive.
"""

from __future__ import annotations

import enum
import struct
import threading
from array import array

from ..errors import PayloadTruncated, ShapeMismatch
from .model import PRIMITIVES, FieldDef, MessageSchema


class Direction(enum.Enum):
    BUS_TO_SOMEIP = "bus_to_someip"
    SOMEIP_TO_BUS = "someip_to_bus"

    @classmethod
    def parse(cls, text: str) -> "Direction":
        norm = text.strip().lower().replace("-", "_")
        aliases = {"bustosomeip": cls.BUS_TO_SOMEIP, "someiptobus": cls.SOMEIP_TO_BUS}
        if norm in aliases:
            return aliases[norm]
        return cls(norm)

    @property
    def reverse(self) -> "Direction":
        return Direction.SOMEIP_TO_BUS if self is Direction.BUS_TO_SOMEIP else Direction.BUS_TO_SOMEIP


_SWAP_CODES = {2: "H", 4: "I", 8: "Q"}
# bytearray values: slice-assigning anything else into a bytearray copies it first
_PADS = tuple(bytearray(i) for i in range(8))


def _put(out: bytearray, o: int, chunk) -> None:
    with memoryview(out) as view:
        view[o:o + len(chunk)] = chunk


def _swap(chunk, size: int) -> bytes:
    a = array(_SWAP_CODES[size])
    a.frombytes(chunk)
    a.byteswap()
    return a.tobytes()


def _trunc(path: str):
    raise PayloadTruncated(f"{path or '<root>'}: payload truncated")


def _shape(path: str, msg: str):
    raise ShapeMismatch(path, msg)


def _utf8(raw: bytes, path: str) -> None:
    try:
        raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ShapeMismatch(path, f"invalid UTF-8: {exc}") from None


_NAMESPACE = {
    "_trunc": _trunc,
    "_shape": _shape,
    "_utf8": _utf8,
    "_swap": _swap,
    "_PADS": _PADS,
    "_put": _put,
    "_u32le": struct.Struct("<I").unpack_from,
    "_u32be": struct.Struct(">I").unpack_from,
    "_p32le": struct.Struct("<I").pack,
    "_p32be": struct.Struct(">I").pack,
    "_pi32le": struct.Struct("<I").pack_into,
    "_pi32be": struct.Struct(">I").pack_into,
}
for _k, _c in _SWAP_CODES.items():
    _NAMESPACE[f"_rl{_k}"] = struct.Struct("<" + _c).unpack_from
    _NAMESPACE[f"_rb{_k}"] = struct.Struct(">" + _c).unpack_from
    _NAMESPACE[f"_wl{_k}"] = struct.Struct("<" + _c).pack_into
    _NAMESPACE[f"_wb{_k}"] = struct.Struct(">" + _c).pack_into


class _Gen:
    def __init__(self):
        self.lines: list = []
        self.depth = 1
        self.n = 0

    def emit(self, line: str) -> None:
        self.lines.append("    " * self.depth + line)

    def var(self, prefix: str) -> str:
        self.n += 1
        return f"{prefix}{self.n}"

    def indent(self):
        gen = self

        class _Block:
            def __enter__(self):
                gen.depth += 1

            def __exit__(self, *exc):
                gen.depth -= 1
        return _Block()


def _p(path: str) -> str:
    return repr(path)


class _BusToSomeip(_Gen):
    """Source aligned little-endian, target packed big-endian.

    The packed output never exceeds the aligned input it came from.
    """

    bound = "n - pos"

    def check(self, k, path):
        self.emit(f"if pos + {k} > n: _trunc({_p(path)})")

    def align(self, k):
        if k > 1:
            self.emit(f"pos += -(pos - base) & {k - 1}")

    def prim(self, f: FieldDef, path: str):
        size = PRIMITIVES[f.type_name][1]
        self.align(size)
        self.check(size, path)
        if f.type_name == "bool":
            self.emit(f"if src[pos] > 1: _shape({_p(path)}, 'bool byte')")
        if size == 1:
            self.emit("out[o] = src[pos]")
        else:
            self.emit(f"_wb{size}(out, o, _rl{size}(src, pos)[0])")
        self.emit(f"o += {size}")
        self.emit(f"pos += {size}")

    def prim_block(self, f: FieldDef, count: str, path: str, guard_empty: bool):
        size = PRIMITIVES[f.type_name][1]
        total = self.var("t")
        self.emit(f"{total} = {count} * {size}" if size > 1 else f"{total} = {count}")
        if size > 1:
            if guard_empty:
                self.emit(f"if {count}: pos += -(pos - base) & {size - 1}")
            else:
                self.align(size)
        self.emit(f"if pos + {total} > n: _trunc({_p(path)})")
        if f.type_name == "bool":
            self.emit(f"if src[pos:pos + {total}].translate(None, b'\\x00\\x01'): "
                      f"_shape({_p(path)}, 'bool array')")
        return total, size

    def copy(self, total, size):
        if size == 1:
            self.emit(f"_put(out, o, mv[pos:pos + {total}])")
        else:
            self.emit(f"_put(out, o, _swap(mv[pos:pos + {total}], {size}))")
        self.emit(f"o += {total}")
        self.emit(f"pos += {total}")

    def string(self, path: str):
        length = self.var("L")
        self.align(4)
        self.check(4, path)
        self.emit(f"{length} = _u32le(src, pos)[0]")
        self.emit("pos += 4")
        self.emit(f"if {length} < 1: _shape({_p(path)}, 'string length must include the terminator')")
        self.emit(f"if pos + {length} > n: _trunc({_p(path)})")
        self.emit(f"if src[pos + {length} - 1]: _shape({_p(path)}, 'string not zero-terminated')")
        s = self.var("s")
        self.emit(f"{s} = src[pos:pos + {length} - 1]")
        self.emit(f"_utf8({s}, {_p(path)})")
        self.emit(f"_pi32be(out, o, {length} - 1)")
        self.emit(f"_put(out, o + 4, {s})")
        self.emit(f"o += {length} + 3")
        self.emit(f"pos += {length}")

    def element(self, f: FieldDef, path: str):
        if f.schema is not None:
            self.struct(f.schema, path)
        elif f.is_string:
            self.string(path)
        else:
            self.prim(f, path)

    def field(self, f: FieldDef, path: str):
        if f.sequence:
            count = self.var("c")
            self.align(4)
            self.check(4, path)
            self.emit(f"{count} = _u32le(src, pos)[0]")
            self.emit("pos += 4")
            self.emit(f"if {count} > n: _trunc({_p(path)})")
            if f.is_primitive:
                total, size = self.prim_block(f, count, path, guard_empty=True)
                self.emit(f"_pi32be(out, o, {total})")
                self.emit("o += 4")
                self.copy(total, size)
            else:
                at = self.var("at")
                start = self.var("p")
                self.emit(f"{at} = o")
                self.emit("o += 4")
                self.emit(f"for _ in range({count}):")
                with self.indent():
                    self.emit(f"{start} = pos")
                    self.element(f, path + "[]")
                    self.emit(f"if pos == {start}: _shape({_p(path)}, 'zero-size element')")
                self.emit(f"_pi32be(out, {at}, o - {at} - 4)")
        elif f.count is not None:
            if f.is_primitive:
                total, size = self.prim_block(f, str(f.count), path, guard_empty=False)
                self.copy(total, size)
            else:
                self.emit(f"for _ in range({f.count}):")
                with self.indent():
                    self.element(f, path + "[]")
        else:
            self.element(f, path)

    def struct(self, schema: MessageSchema, path: str):
        if not schema.fields:
            self.emit("pass")
        for f in schema.fields:
            self.field(f, f"{path}.{f.name}" if path else f.name)


class _SomeipToBus(_Gen):
    """Source packed big-endian, target aligned little-endian.

    Every padding run is shorter than the input unit that follows it, so
    the output is at most twice the input.
    """

    bound = "2 * (n - pos) + 8"

    def check(self, k, path):
        self.emit(f"if pos + {k} > n: _trunc({_p(path)})")

    def out_align(self, k):
        if k > 1:
            a = self.var("a")
            self.emit(f"{a} = (reserve - o) & {k - 1}")
            self.emit(f"out[o:o + {a}] = _PADS[{a}]")
            self.emit(f"o += {a}")

    def prim(self, f: FieldDef, path: str):
        size = PRIMITIVES[f.type_name][1]
        self.check(size, path)
        if f.type_name == "bool":
            self.emit(f"if src[pos] > 1: _shape({_p(path)}, 'bool byte')")
        if size == 1:
            self.emit("out[o] = src[pos]")
        else:
            self.out_align(size)
            self.emit(f"_wl{size}(out, o, _rb{size}(src, pos)[0])")
        self.emit(f"o += {size}")
        self.emit(f"pos += {size}")

    def copy(self, f: FieldDef, total: str, count: str, guard_empty: bool, path: str):
        size = PRIMITIVES[f.type_name][1]
        if f.type_name == "bool":
            self.emit(f"if src[pos:pos + {total}].translate(None, b'\\x00\\x01'): "
                      f"_shape({_p(path)}, 'bool array')")
        if size == 1:
            self.emit(f"_put(out, o, mv[pos:pos + {total}])")
        else:
            if guard_empty:
                self.emit(f"if {count}:")
                with self.indent():
                    self.out_align(size)
            else:
                self.out_align(size)
            self.emit(f"_put(out, o, _swap(mv[pos:pos + {total}], {size}))")
        self.emit(f"o += {total}")
        self.emit(f"pos += {total}")

    def string(self, path: str):
        length = self.var("L")
        self.check(4, path)
        self.emit(f"{length} = _u32be(src, pos)[0]")
        self.emit("pos += 4")
        self.emit(f"if pos + {length} > n: _trunc({_p(path)})")
        s = self.var("s")
        self.emit(f"{s} = src[pos:pos + {length}]")
        self.emit(f"_utf8({s}, {_p(path)})")
        self.out_align(4)
        self.emit(f"_pi32le(out, o, {length} + 1)")
        self.emit(f"_put(out, o + 4, {s})")
        self.emit(f"o += 4 + {length}")
        self.emit("out[o] = 0")
        self.emit("o += 1")
        self.emit(f"pos += {length}")

    def element(self, f: FieldDef, path: str):
        if f.schema is not None:
            self.struct(f.schema, path)
        elif f.is_string:
            self.string(path)
        else:
            self.prim(f, path)

    def field(self, f: FieldDef, path: str):
        if f.sequence:
            nbytes = self.var("B")
            self.check(4, path)
            self.emit(f"{nbytes} = _u32be(src, pos)[0]")
            self.emit("pos += 4")
            self.emit(f"if pos + {nbytes} > n: _trunc({_p(path)})")
            if f.is_primitive:
                size = PRIMITIVES[f.type_name][1]
                count = self.var("c")
                if size > 1:
                    self.emit(f"if {nbytes} % {size}: _shape({_p(path)}, "
                              f"'length is not a whole number of elements')")
                    self.emit(f"{count} = {nbytes} // {size}")
                else:
                    self.emit(f"{count} = {nbytes}")
                self.out_align(4)
                self.emit(f"_pi32le(out, o, {count})")
                self.emit("o += 4")
                self.copy(f, nbytes, count, guard_empty=True, path=path)
            else:
                end = self.var("e")
                at = self.var("at")
                count = self.var("c")
                start = self.var("p")
                self.emit(f"{end} = pos + {nbytes}")
                self.out_align(4)
                self.emit(f"{at} = o")
                self.emit("o += 4")
                self.emit(f"{count} = 0")
                self.emit(f"while pos < {end}:")
                with self.indent():
                    self.emit(f"{start} = pos")
                    self.element(f, path + "[]")
                    self.emit(f"if pos == {start}: _shape({_p(path)}, 'zero-size element')")
                    self.emit(f"{count} += 1")
                self.emit(f"if pos != {end}: _shape({_p(path)}, "
                          f"'elements overrun the declared sequence length')")
                self.emit(f"_pi32le(out, {at}, {count})")
        elif f.count is not None:
            if f.is_primitive:
                size = PRIMITIVES[f.type_name][1]
                total = f.count * size
                self.check(total, path)
                self.copy(f, str(total), str(f.count), guard_empty=False, path=path)
            else:
                self.emit(f"for _ in range({f.count}):")
                with self.indent():
                    self.element(f, path + "[]")
        else:
            self.element(f, path)

    def struct(self, schema: MessageSchema, path: str):
        if not schema.fields:
            self.emit("pass")
        for f in schema.fields:
            self.field(f, f"{path}.{f.name}" if path else f.name)


def generate_source(schema: MessageSchema, direction: Direction) -> str:
    """Source of ``convert_into(src, pos, out, reserve) -> end``.

    Reads the message starting at ``src[pos]`` and writes the converted
    bytes into ``out`` from index ``reserve`` on, growing ``out`` first if
    it is shorter than the direction's size bound.  Bytes past the returned
    end index are left untouched.
    """
    gen = _BusToSomeip() if direction is Direction.BUS_TO_SOMEIP else _SomeipToBus()
    gen.emit("if type(src) is not bytes: src = bytes(src)")
    gen.emit("mv = memoryview(src)")
    gen.emit("n = len(src)")
    gen.emit("base = pos")
    gen.emit(f"need = reserve + {gen.bound}")
    gen.emit("if len(out) < need: out += bytes(need - len(out))")
    gen.emit("o = reserve")
    gen.struct(schema, "")
    gen.emit("if pos != n: _shape('', f'{n - pos} trailing bytes')")
    gen.emit("return o")
    return "def convert_into(src, pos, out, reserve):\n" + "\n".join(gen.lines) + "\n"


class Converter:
    """Compiled converter for one (schema, direction).

    Calling it returns a fresh ``bytearray``.  :meth:`into` writes into a
    caller-owned buffer instead, which is how the bridge keeps large
    conversions free of allocation once its buffer has grown.
    """

    def __init__(self, schema: MessageSchema, direction: Direction, into):
        self.schema = schema
        self.direction = direction
        self.into = into

    def __call__(self, src, pos: int = 0, reserve: int = 0) -> bytearray:
        out = bytearray()
        end = self.into(src, pos, out, reserve)
        del out[end:]
        return out


class BufferedConverter:
    """Converter bound to one reusable output buffer (one caller at a time).

    Returns a memoryview of the buffer; release it (or use it as a context
    manager) before the next call, which may need to grow the buffer.
    """

    def __init__(self, converter: Converter):
        self.converter = converter
        self.buffer = bytearray()

    def __call__(self, src, pos: int = 0, reserve: int = 0) -> memoryview:
        end = self.converter.into(src, pos, self.buffer, reserve)
        return memoryview(self.buffer)[:end]


_cache: dict = {}
_cache_lock = threading.Lock()


def compile_converter(schema: MessageSchema, direction: Direction) -> Converter:
    key = (schema, direction)
    conv = _cache.get(key)
    if conv is None:
        src = generate_source(schema, direction)
        ns = dict(_NAMESPACE)
        exec(compile(src, f"<convert {schema.type_name} {direction.value}>", "exec"), ns)
        conv = Converter(schema, direction, ns["convert_into"])
        with _cache_lock:
            _cache[key] = conv
    return conv


def convert(schema: MessageSchema, data, direction: Direction) -> bytes:
    """Re-encode ``data`` from one canonical encoding into the other."""
    return bytes(compile_converter(schema, Direction(direction))(data))
