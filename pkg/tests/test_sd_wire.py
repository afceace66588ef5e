import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sd_offer_payload
from someip_bridge.errors import MalformedEntry
from someip_bridge.net import Endpoint
from someip_bridge.sd_wire import (ANY_INSTANCE, EntryType, SdEntry, SdMessage, ServiceKey,
                                   decode_sd, encode_sd, is_sd, sd_to_someip, someip_to_sd)
from someip_bridge.someip import decode_message, encode_message

OFFER = SdEntry(EntryType.OFFER_SERVICE, ServiceKey(0x1234, 0x0001), 1, 3, minor_version=0,
                endpoint=Endpoint("127.0.0.1", 40000))


def test_offer_layout_matches_oracle():
    payload = encode_sd(SdMessage((OFFER,), reboot=True, session_id=1))
    assert payload == sd_offer_payload(0x1234, 0x0001, 1, 0, 3, "127.0.0.1", 40000)
    assert len(payload) == 40


def test_offer_is_48_bytes_after_the_length_field():
    data = encode_message(sd_to_someip(SdMessage((OFFER,), True, 1)))
    assert int.from_bytes(data[4:8], "big") == 48
    assert data[:4] == b"\xff\xff\x81\x00"


def test_sd_message_is_valid_someip():
    sd = SdMessage((OFFER,), True, 7)
    msg, rest = decode_message(encode_message(sd_to_someip(sd)))
    assert not rest and is_sd(msg)
    assert someip_to_sd(msg) == sd


def test_unknown_entry_type_skipped_and_counted():
    find = SdEntry(EntryType.FIND_SERVICE, ServiceKey(0x1234, ANY_INSTANCE), 0xFF, 3,
                   minor_version=0xFFFFFFFF)
    payload = bytearray(encode_sd(SdMessage((OFFER, find), True, 1)))
    payload[8] = 0x42  # first entry's type code
    decoded = decode_sd(bytes(payload))
    assert decoded.entries == (find,)
    assert decoded.skipped == 1


@pytest.mark.parametrize("cut", [0, 5, 11, 20, 39])
def test_structural_damage_raises(cut):
    payload = encode_sd(SdMessage((OFFER,), True, 1))
    with pytest.raises(MalformedEntry):
        decode_sd(payload[:cut])


def test_entry_invariants():
    with pytest.raises(ValueError):
        SdEntry(EntryType.SUBSCRIBE_EVENTGROUP, ServiceKey(1, 1))
    with pytest.raises(ValueError):
        SdEntry(EntryType.OFFER_SERVICE, ServiceKey(1, 1), eventgroup_id=1)
    with pytest.raises(ValueError):
        SdEntry(EntryType.OFFER_SERVICE, ServiceKey(1, 1), ttl=1 << 24)


def test_matching_grid():
    ids = [0x0001, 0x0002, ANY_INSTANCE]
    for sid_f in (0x10, 0x11):
        for iid_f in ids:
            for iid_o in (0x0001, 0x0002):
                find, offer = ServiceKey(sid_f, iid_f), ServiceKey(0x10, iid_o)
                expected = sid_f == 0x10 and (iid_f == ANY_INSTANCE or iid_f == iid_o)
                assert find.matches(offer) is expected


u16 = st.integers(0, 0xFFFF)
endpoints = st.builds(Endpoint, st.sampled_from(["127.0.0.1", "10.0.0.7", "192.168.1.20"]),
                      st.integers(1, 0xFFFF))


@st.composite
def entries(draw):
    etype = draw(st.sampled_from(list(EntryType)))
    key = ServiceKey(draw(u16), draw(u16))
    ttl = draw(st.integers(0, 0xFFFFFF))
    major = draw(st.integers(0, 255))
    if etype.is_eventgroup:
        ep = draw(endpoints) if etype is EntryType.SUBSCRIBE_EVENTGROUP else draw(
            st.none() | endpoints)
        return SdEntry(etype, key, major, ttl, eventgroup_id=draw(u16), endpoint=ep)
    ep = draw(endpoints) if etype is EntryType.OFFER_SERVICE else draw(st.none() | endpoints)
    return SdEntry(etype, key, major, ttl, minor_version=draw(st.integers(0, 0xFFFFFFFF)),
                   endpoint=ep)


@settings(max_examples=200, deadline=None)
@given(st.lists(entries(), max_size=6), st.booleans())
def test_round_trip(items, reboot):
    msg = SdMessage(tuple(items), reboot, 1)
    assert decode_sd(encode_sd(msg)) == msg
