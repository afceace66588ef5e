"""Hypothesis strategies for schemas and schema-conforming values."""

from hypothesis import strategies as st

from someip_bridge.schema import PRIMITIVES, FieldDef, MessageSchema
from someip_bridge.schema.model import INT_RANGES

MAX_ITEMS = 4


def primitive_values(type_name: str, allow_nan: bool = False):
    if type_name == "bool":
        return st.booleans()
    if type_name == "float32":
        return st.floats(width=32, allow_nan=allow_nan)
    if type_name == "float64":
        return st.floats(allow_nan=allow_nan)
    lo, hi = INT_RANGES[type_name]
    return st.integers(lo, hi)


def _element(f: FieldDef, allow_nan: bool):
    if f.schema is not None:
        return values_for(f.schema, allow_nan)
    if f.is_string:
        return st.text(max_size=12)
    return primitive_values(f.type_name, allow_nan)


def _field(f: FieldDef, allow_nan: bool):
    if f.is_bytes:
        if f.count is not None:
            return st.binary(min_size=f.count, max_size=f.count)
        return st.binary(max_size=64)
    if f.is_array:
        size = {"min_size": f.count, "max_size": f.count} if f.count is not None \
            else {"max_size": MAX_ITEMS}
        return st.lists(_element(f, allow_nan), **size)
    return _element(f, allow_nan)


def values_for(schema: MessageSchema, allow_nan: bool = False):
    return st.fixed_dictionaries({f.name: _field(f, allow_nan) for f in schema.fields})


_names = st.from_regex(r"[a-z][a-z0-9_]{0,7}", fullmatch=True)
_leaf_types = st.sampled_from(sorted(PRIMITIVES) + ["string"])


def _fields(children):
    kind = st.one_of(
        st.just({}),
        st.just({"sequence": True}),
        st.integers(1, 3).map(lambda n: {"count": n}),
    )
    leaf = st.tuples(_leaf_types, kind).map(lambda t: (t[0], None, t[1]))
    nested = st.tuples(children, kind).map(lambda t: (t[0].type_name, t[0], t[1]))
    return st.lists(st.tuples(_names, st.one_of(leaf, nested)), min_size=1, max_size=6,
                    unique_by=lambda t: t[0])


_counter = iter(range(1 << 62))


def _make(field_specs) -> MessageSchema:
    fields = tuple(FieldDef(name, type_name, schema=sub, **kind)
                   for name, (type_name, sub, kind) in field_specs)
    return MessageSchema(f"gen_msgs/T{next(_counter)}", fields)


def _leaf_schema():
    leaf = st.tuples(_leaf_types, st.just({})).map(lambda t: (t[0], None, t[1]))
    return st.lists(st.tuples(_names, leaf), min_size=1, max_size=4,
                    unique_by=lambda t: t[0]).map(_make)


schemas = st.recursive(_leaf_schema(), lambda children: _fields(children).map(_make),
                       max_leaves=6)


@st.composite
def schema_and_value(draw, allow_nan: bool = False):
    schema = draw(schemas)
    return schema, draw(values_for(schema, allow_nan))
