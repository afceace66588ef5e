"""Binds SD state machines to a network socket.

One :class:`SdHost` owns the SD unicast socket of a process (and its
multicast membership).  Any number of :class:`~someip_bridge.sd.SdServer`
or :class:`~someip_bridge.sd.SdClient` instances attach to it; every
received SD message is offered to each of them, and their timers are armed
on the network clock.  All state-machine calls happen on the network's
dispatch context.  :attr:`SdHost.lock` guards the machines for readers on
other threads (e.g. a bus callback asking for the current subscribers).
"""

from __future__ import annotations

import logging
import threading
from typing import Callable, Optional

from .errors import CodecError, MalformedEntry
from .net import SD_MULTICAST, Endpoint
from .sd import SdEvent, Send
from .sd_wire import is_sd, sd_to_someip, someip_to_sd
from .someip import decode_message, encode_message

log = logging.getLogger(__name__)


class _Attachment:
    def __init__(self, machine, on_event):
        self.machine = machine
        self.on_event = on_event
        self.timer = None
        self.armed_at: Optional[float] = None


class SdHost:
    def __init__(self, net, unicast: Endpoint, group: Endpoint = SD_MULTICAST,
                 *, join_group: bool = True):
        self.net = net
        self.group = group
        self.endpoint = net.bind(unicast, self._on_datagram)
        if join_group:
            net.join(group, self.endpoint)
        self._attached: list[_Attachment] = []
        self.malformed = 0
        self.received = 0
        self.closed = False
        self.lock = threading.RLock()

    def attach(self, machine, on_event: Optional[Callable[[SdEvent], None]] = None) -> None:
        with self.lock:
            self._attached.append(_Attachment(machine, on_event))
            self._rearm(self._attached[-1])

    def detach(self, machine) -> None:
        for att in list(self._attached):
            if att.machine is machine:
                if att.timer is not None:
                    att.timer.cancel()
                self._attached.remove(att)

    def close(self) -> None:
        for att in self._attached:
            if att.timer is not None:
                att.timer.cancel()
        self._attached.clear()
        self.net.unbind(self.endpoint)
        self.closed = True

    def _find(self, machine) -> _Attachment:
        for att in self._attached:
            if att.machine is machine:
                return att
        raise KeyError("state machine not attached")

    def command(self, machine, fn, *args):
        """Run ``fn(*args, now)`` against ``machine`` and dispatch its outputs.

        Must be called from the network's dispatch context.
        """
        with self.lock:
            att = self._find(machine)
            outputs = fn(*args, self.net.now())
            self._apply(att, outputs)
            return outputs

    def _apply(self, att: _Attachment, outputs) -> None:
        for out in outputs:
            if isinstance(out, Send):
                self._transmit(out)
            elif att.on_event is not None:
                try:
                    att.on_event(out)
                except Exception:
                    log.exception("SD event handler failed for %s", out)
        self._rearm(att)

    def _transmit(self, send: Send) -> None:
        if self.closed:
            return
        dest = send.dest or self.group
        data = encode_message(sd_to_someip(send.message))
        self.net.send(self.endpoint, dest, data)

    def _rearm(self, att: _Attachment) -> None:
        deadline = att.machine.next_deadline()
        if deadline == att.armed_at:
            return
        if att.timer is not None:
            att.timer.cancel()
        att.armed_at = deadline
        att.timer = None if deadline is None else self.net.call_at(deadline, self._fire, att)

    def _fire(self, att: _Attachment) -> None:
        with self.lock:
            if att not in self._attached:
                return
            att.armed_at = None
            att.timer = None
            self._apply(att, att.machine.poll(self.net.now()))

    def _on_datagram(self, data: bytes, source: Endpoint) -> None:
        if source == self.endpoint:
            return
        try:
            msg, _ = decode_message(data)
            if not is_sd(msg):
                raise MalformedEntry("non-SD message on SD port")
            sd = someip_to_sd(msg)
        except (CodecError, MalformedEntry) as exc:
            self.malformed += 1
            log.debug("dropping SD datagram from %s: %s", source, exc)
            return
        with self.lock:
            self.received += 1
            now = self.net.now()
            for att in list(self._attached):
                self._apply(att, att.machine.handle(sd, source, now))
