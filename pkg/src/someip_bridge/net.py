"""Addressing types shared by the SD, bridge and transport layers."""

from __future__ import annotations

import ipaddress
import socket
import sys
from typing import NamedTuple


class Endpoint(NamedTuple):
    address: str
    port: int

    def __str__(self) -> str:
        return f"{self.address}:{self.port}"

    @classmethod
    def parse(cls, text: str) -> "Endpoint":
        host, sep, port = text.rpartition(":")
        if not sep or not host:
            raise ValueError(f"expected host:port, got {text!r}")
        ipaddress.IPv4Address(host)
        port_no = int(port)
        if not 0 <= port_no <= 0xFFFF:
            raise ValueError(f"port out of range: {port_no}")
        return cls(host, port_no)


SD_MULTICAST = Endpoint("224.244.224.245", 30490)


# Linux-only option that ignores net.core.rmem_max; needs CAP_NET_ADMIN
_SO_RCVBUFFORCE = getattr(socket, "SO_RCVBUFFORCE", 33 if sys.platform.startswith("linux") else None)


def set_buffers(sock: socket.socket, size: int) -> int:
    """Best-effort receive/send buffer sizing; returns the receive size granted."""
    for opt in (_SO_RCVBUFFORCE, socket.SO_RCVBUF):
        if opt is None:
            continue
        try:
            sock.setsockopt(socket.SOL_SOCKET, opt, size)
            break
        except OSError:
            continue
    try:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, size)
    except OSError:
        pass
    return sock.getsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF)
