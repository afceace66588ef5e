"""Value validation and the two canonical byte encodings.

Bus encoding (DDS side)
    Little-endian.  Every primitive is aligned to its own size, measured
    from the start of the message.  A string is a 4-byte length (counting
    the terminator), the UTF-8 bytes and one zero byte.  A sequence is a
    4-byte element count followed by its elements; fixed arrays are inline.

SOME/IP payload encoding
    Big-endian and packed (no padding).  Strings and sequences carry a
    4-byte length in bytes (strings without terminator); fixed arrays are
    inline.

Values are plain Python data: ``dict`` for messages, ``list`` for arrays,
``bytes`` for ``uint8`` arrays.
"""

from __future__ import annotations

import math
import struct

from ..errors import PayloadTruncated, ShapeMismatch
from .model import INT_RANGES, PRIMITIVES, FieldDef, MessageSchema

_U32_LE = struct.Struct("<I")
_U32_BE = struct.Struct(">I")


def _join(path: str, name) -> str:
    if isinstance(name, int):
        return f"{path}[{name}]"
    return f"{path}.{name}" if path else name


# -- validation -----------------------------------------------------------

def _check_primitive(type_name: str, value, path: str) -> None:
    if type_name == "bool":
        if not isinstance(value, bool):
            raise ShapeMismatch(path, f"expected bool, got {type(value).__name__}")
    elif type_name in ("float32", "float64"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ShapeMismatch(path, f"expected float, got {type(value).__name__}")
        if type_name == "float32" and math.isfinite(value) and abs(value) > 3.4028234663852886e38:
            raise ShapeMismatch(path, f"{value} overflows float32")
    else:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ShapeMismatch(path, f"expected int, got {type(value).__name__}")
        lo, hi = INT_RANGES[type_name]
        if not lo <= value <= hi:
            raise ShapeMismatch(path, f"{value} out of range for {type_name}")


def _check_element(f: FieldDef, value, path: str) -> None:
    if f.schema is not None:
        validate(f.schema, value, path)
    elif f.is_string:
        if not isinstance(value, str):
            raise ShapeMismatch(path, f"expected str, got {type(value).__name__}")
    else:
        _check_primitive(f.type_name, value, path)


def validate(schema: MessageSchema, value, path: str = "") -> None:
    """Raise ShapeMismatch unless ``value`` conforms to ``schema``."""
    if not isinstance(value, dict):
        raise ShapeMismatch(path, f"expected mapping for {schema.type_name}")
    expected = {f.name for f in schema.fields}
    extra = set(value) - expected
    if extra:
        raise ShapeMismatch(path, f"unexpected fields {sorted(extra)}")
    for f in schema.fields:
        fpath = _join(path, f.name)
        if f.name not in value:
            raise ShapeMismatch(fpath, "missing")
        v = value[f.name]
        if f.is_bytes:
            if not isinstance(v, (bytes, bytearray)):
                raise ShapeMismatch(fpath, "expected bytes for uint8 array")
            if f.count is not None and len(v) != f.count:
                raise ShapeMismatch(fpath, f"expected {f.count} bytes, got {len(v)}")
        elif f.is_array:
            if not isinstance(v, (list, tuple)):
                raise ShapeMismatch(fpath, "expected list")
            if f.count is not None and len(v) != f.count:
                raise ShapeMismatch(fpath, f"expected {f.count} elements, got {len(v)}")
            for i, item in enumerate(v):
                _check_element(f, item, _join(fpath, i))
        else:
            _check_element(f, v, fpath)


# -- bus encoding ---------------------------------------------------------

def _pad(buf: bytearray, align: int) -> None:
    buf.extend(b"\0" * (-len(buf) % align))


def _bus_prim(buf: bytearray, type_name: str, value) -> None:
    code, size = PRIMITIVES[type_name]
    _pad(buf, size)
    buf += struct.pack("<" + code, value)


def _bus_string(buf: bytearray, value: str) -> None:
    raw = value.encode("utf-8")
    _pad(buf, 4)
    buf += _U32_LE.pack(len(raw) + 1)
    buf += raw
    buf += b"\0"


def _bus_elements(buf: bytearray, f: FieldDef, items) -> None:
    if f.is_bytes:
        buf += bytes(items)
    elif f.is_primitive:
        if items:
            code, size = PRIMITIVES[f.type_name]
            _pad(buf, size)
            buf += struct.pack(f"<{len(items)}{code}", *items)
    elif f.is_string:
        for s in items:
            _bus_string(buf, s)
    else:
        for item in items:
            _bus_struct(buf, f.schema, item)


def _bus_struct(buf: bytearray, schema: MessageSchema, value: dict) -> None:
    for f in schema.fields:
        v = value[f.name]
        if f.sequence:
            _pad(buf, 4)
            buf += _U32_LE.pack(len(v))
            _bus_elements(buf, f, v)
        elif f.count is not None:
            _bus_elements(buf, f, v)
        elif f.schema is not None:
            _bus_struct(buf, f.schema, v)
        elif f.is_string:
            _bus_string(buf, v)
        else:
            _bus_prim(buf, f.type_name, v)


def encode_bus(schema: MessageSchema, value: dict) -> bytes:
    validate(schema, value)
    buf = bytearray()
    _bus_struct(buf, schema, value)
    return bytes(buf)


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def need(self, n: int, path: str) -> int:
        start = self.pos
        if start + n > len(self.data):
            raise PayloadTruncated(f"{path or '<root>'}: need {n} bytes at offset {start}, "
                                   f"only {len(self.data) - start} left")
        self.pos = start + n
        return start

    def align(self, n: int, path: str) -> None:
        pad = -self.pos % n
        if pad:
            self.need(pad, path)


def _decode_prim(r: _Reader, type_name: str, endian: str, path: str, aligned: bool):
    code, size = PRIMITIVES[type_name]
    if aligned:
        r.align(size, path)
    start = r.need(size, path)
    if type_name == "bool":
        b = r.data[start]
        if b > 1:
            raise ShapeMismatch(path, f"bool byte {b}")
        return bool(b)
    return struct.unpack_from(endian + code, r.data, start)[0]


def _decode_prim_array(r: _Reader, f: FieldDef, n: int, endian: str, path: str, aligned: bool):
    code, size = PRIMITIVES[f.type_name]
    if n and aligned:
        r.align(size, path)
    start = r.need(n * size, path)
    if f.is_bytes:
        return bytes(r.data[start:start + n])
    if f.type_name == "bool":
        raw = bytes(r.data[start:start + n])
        if raw.translate(None, b"\0\1"):
            raise ShapeMismatch(path, "bool array holds bytes other than 0/1")
        return [b == 1 for b in raw]
    return list(struct.unpack_from(f"{endian}{n}{code}", r.data, start))


def _utf8(raw: bytes, path: str) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ShapeMismatch(path, f"invalid UTF-8: {exc}") from None


def _bus_read_string(r: _Reader, path: str) -> str:
    r.align(4, path)
    (n,) = _U32_LE.unpack_from(r.data, r.need(4, path))
    if n < 1:
        raise ShapeMismatch(path, "string length must include the terminator")
    start = r.need(n, path)
    raw = bytes(r.data[start:start + n])
    if raw[-1] != 0:
        raise ShapeMismatch(path, "string not zero-terminated")
    return _utf8(raw[:-1], path)


def _bus_read_elements(r: _Reader, f: FieldDef, n: int, path: str):
    if f.is_primitive:
        return _decode_prim_array(r, f, n, "<", path, True)
    if f.is_string:
        return [_bus_read_string(r, _join(path, i)) for i in range(n)]
    items = []
    for i in range(n):
        start = r.pos
        items.append(_bus_read_struct(r, f.schema, _join(path, i)))
        if r.pos == start:
            raise ShapeMismatch(path, "zero-size element")
    return items


def _bus_read_struct(r: _Reader, schema: MessageSchema, path: str) -> dict:
    out = {}
    for f in schema.fields:
        fpath = _join(path, f.name)
        if f.sequence:
            r.align(4, fpath)
            (n,) = _U32_LE.unpack_from(r.data, r.need(4, fpath))
            if n > len(r.data):
                raise PayloadTruncated(f"{fpath}: sequence count {n} exceeds payload")
            out[f.name] = _bus_read_elements(r, f, n, fpath)
        elif f.count is not None:
            out[f.name] = _bus_read_elements(r, f, f.count, fpath)
        elif f.schema is not None:
            out[f.name] = _bus_read_struct(r, f.schema, fpath)
        elif f.is_string:
            out[f.name] = _bus_read_string(r, fpath)
        else:
            out[f.name] = _decode_prim(r, f.type_name, "<", fpath, True)
    return out


def decode_bus(schema: MessageSchema, data) -> dict:
    r = _Reader(data)
    value = _bus_read_struct(r, schema, "")
    if r.pos != len(data):
        raise ShapeMismatch("", f"{len(data) - r.pos} trailing bytes")
    return value


# -- SOME/IP payload encoding ---------------------------------------------

def _sip_string(buf: bytearray, value: str) -> None:
    raw = value.encode("utf-8")
    buf += _U32_BE.pack(len(raw))
    buf += raw


def _sip_elements(buf: bytearray, f: FieldDef, items) -> None:
    if f.is_bytes:
        buf += bytes(items)
    elif f.is_primitive:
        code, _ = PRIMITIVES[f.type_name]
        buf += struct.pack(f">{len(items)}{code}", *items)
    elif f.is_string:
        for s in items:
            _sip_string(buf, s)
    else:
        for item in items:
            _sip_struct(buf, f.schema, item)


def _sip_struct(buf: bytearray, schema: MessageSchema, value: dict) -> None:
    for f in schema.fields:
        v = value[f.name]
        if f.sequence:
            at = len(buf)
            buf += b"\0\0\0\0"
            _sip_elements(buf, f, v)
            _U32_BE.pack_into(buf, at, len(buf) - at - 4)
        elif f.count is not None:
            _sip_elements(buf, f, v)
        elif f.schema is not None:
            _sip_struct(buf, f.schema, v)
        elif f.is_string:
            _sip_string(buf, v)
        else:
            code, _ = PRIMITIVES[f.type_name]
            buf += struct.pack(">" + code, v)


def encode_someip(schema: MessageSchema, value: dict) -> bytes:
    validate(schema, value)
    buf = bytearray()
    _sip_struct(buf, schema, value)
    return bytes(buf)


def _sip_read_string(r: _Reader, path: str) -> str:
    (n,) = _U32_BE.unpack_from(r.data, r.need(4, path))
    start = r.need(n, path)
    return _utf8(bytes(r.data[start:start + n]), path)


def _sip_read_struct(r: _Reader, schema: MessageSchema, path: str) -> dict:
    out = {}
    for f in schema.fields:
        fpath = _join(path, f.name)
        if f.sequence:
            (nbytes,) = _U32_BE.unpack_from(r.data, r.need(4, fpath))
            end = r.pos + nbytes
            if end > len(r.data):
                raise PayloadTruncated(f"{fpath}: sequence of {nbytes} bytes exceeds payload")
            if f.is_primitive:
                size = PRIMITIVES[f.type_name][1]
                if nbytes % size:
                    raise ShapeMismatch(fpath, f"{nbytes} bytes is not a whole number of {f.type_name}")
                out[f.name] = _decode_prim_array(r, f, nbytes // size, ">", fpath, False)
            else:
                items = []
                while r.pos < end:
                    ipath = _join(fpath, len(items))
                    start = r.pos
                    if f.is_string:
                        items.append(_sip_read_string(r, ipath))
                    else:
                        items.append(_sip_read_struct(r, f.schema, ipath))
                    if r.pos == start:
                        raise ShapeMismatch(fpath, "zero-size element")
                if r.pos != end:
                    raise ShapeMismatch(fpath, "elements overrun the declared sequence length")
                out[f.name] = items
        elif f.count is not None:
            if f.is_primitive:
                out[f.name] = _decode_prim_array(r, f, f.count, ">", fpath, False)
            elif f.is_string:
                out[f.name] = [_sip_read_string(r, _join(fpath, i)) for i in range(f.count)]
            else:
                out[f.name] = [_sip_read_struct(r, f.schema, _join(fpath, i))
                               for i in range(f.count)]
        elif f.schema is not None:
            out[f.name] = _sip_read_struct(r, f.schema, fpath)
        elif f.is_string:
            out[f.name] = _sip_read_string(r, fpath)
        else:
            out[f.name] = _decode_prim(r, f.type_name, ">", fpath, False)
    return out


def decode_someip(schema: MessageSchema, data) -> dict:
    r = _Reader(data)
    value = _sip_read_struct(r, schema, "")
    if r.pos != len(data):
        raise ShapeMismatch("", f"{len(data) - r.pos} trailing bytes")
    return value
