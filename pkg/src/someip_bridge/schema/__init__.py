"""Message schemas, the two canonical encodings, and conversion between them."""

from .codec import decode_bus, decode_someip, encode_bus, encode_someip, validate
from .convert import (BufferedConverter, Converter, Direction, compile_converter, convert,
                      generate_source)
from .model import (BUNDLED_EVAL_TYPES, PRIMITIVES, FieldDef, MessageSchema,
                    SchemaRegistry, canonical_name, parse_msg_file)

__all__ = [
    "BUNDLED_EVAL_TYPES", "PRIMITIVES", "BufferedConverter", "Converter", "Direction", "FieldDef", "MessageSchema",
    "SchemaRegistry", "canonical_name", "compile_converter", "convert", "decode_bus",
    "decode_someip", "encode_bus", "encode_someip", "generate_source", "parse_msg_file",
    "validate",
]
