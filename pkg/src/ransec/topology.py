"""Monolithic and disaggregated user-plane pipelines.

A pipeline is a chain of network-function nodes joined by links. Each link
carries bytes over a transport and each node owns the protection endpoints
for the links it terminates. PDCP runs between the UE and the node hosting
the CU user plane (gNB or CU-UP); the DU only relays PDCP PDUs into F1-U.
"""

from __future__ import annotations

import enum
import errno
import itertools
import queue
import select
import socket
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import wire
from .errors import EchoFailure, RansecError, TopologyError, TransportError
from .links import (DtlsChannel, EspChannel, PdcpEntity, PlainChannel, ProvisioningSession,
                    derive_static_key, dtls_provision, pdcp_provision, sa_provision)
from .scenario import CP_INTERFACES, E1, F1C, F1U, N3, UU, LinkSpec, ScenarioConfig

UE_BEARER = 1


class NodeRole(str, enum.Enum):
    UE = "UE"
    DU = "DU"
    CU_UP = "CU-UP"
    CU_CP = "CU-CP"
    GNB = "gNB-monolithic"
    UPF = "UPF"
    AMF = "AMF-stub"


# -- transports ---------------------------------------------------------------------

class _QueueEnd:
    def __init__(self, inbox: queue.SimpleQueue, outbox: queue.SimpleQueue):
        self._inbox, self._outbox = inbox, outbox

    def send(self, data: bytes) -> None:
        self._outbox.put(data)

    def recv(self, timeout: Optional[float] = None) -> Optional[bytes]:
        try:
            return self._inbox.get(timeout=timeout) if timeout else self._inbox.get_nowait()
        except queue.Empty:
            return None

    def pending(self) -> bool:
        return not self._inbox.empty()


class InProcessTransport:
    """Lossless, ordered queue pair."""

    kind = "in-process"

    def __init__(self):
        ab, ba = queue.SimpleQueue(), queue.SimpleQueue()
        self.a = _QueueEnd(ba, ab)
        self.b = _QueueEnd(ab, ba)

    def close(self) -> None:
        pass


class _UdpEnd:
    def __init__(self, sock: socket.socket):
        self.sock = sock

    def send(self, data: bytes) -> None:
        self.sock.send(data)

    def recv(self, timeout: Optional[float] = None) -> Optional[bytes]:
        ready, _, _ = select.select([self.sock], [], [], timeout or 0)
        if not ready:
            return None
        return self.sock.recv(65535)

    def pending(self) -> bool:
        return bool(select.select([self.sock], [], [], 0)[0])


class UdpLoopbackTransport:
    """Two connected datagram sockets on 127.0.0.1. Port 0 picks an ephemeral port."""

    kind = "udp-loopback"

    def __init__(self, port_a: int = 0, port_b: int = 0):
        socks = []
        try:
            for port in (port_a, port_b):
                s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                socks.append(s)
                s.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
                s.bind(("127.0.0.1", port))
        except OSError as exc:
            for s in socks:
                s.close()
            if exc.errno == errno.EADDRINUSE:
                raise TransportError(errno.EADDRINUSE, f"port in use: {exc}") from exc
            raise
        sa, sb = socks
        sa.connect(sb.getsockname())
        sb.connect(sa.getsockname())
        self.ports = (sa.getsockname()[1], sb.getsockname()[1])
        self.a, self.b = _UdpEnd(sa), _UdpEnd(sb)

    def close(self) -> None:
        self.a.sock.close()
        self.b.sock.close()


def attach_transport(link, kind: Optional[str] = None, port: Optional[int] = None):
    """Create the transport for ``link`` (a LinkSpec or Link); kind/port override the spec."""
    spec = link.spec if isinstance(link, Link) else link
    kind = kind or spec.transport
    port = spec.port if port is None else port
    if kind == "in-process":
        transport = InProcessTransport()
    elif kind == "udp-loopback":
        transport = UdpLoopbackTransport(port, port + 1 if port else 0)
    else:
        raise TopologyError(f"unknown transport {kind!r}")
    if isinstance(link, Link):
        link.transport.close()
        link.transport = transport
    return transport


# -- links and nodes ---------------------------------------------------------------------

Fault = Callable[[str, bytes], list]


class Link:
    """A transport between node ``a`` (upstream / CU-CP side) and node ``b``.

    ``fault`` is a test hook: called with (sender name, bytes) it returns the list
    of datagrams actually put on the wire, so it can drop, duplicate or corrupt.
    """

    def __init__(self, spec: LinkSpec, a: str, b: str, transport=None):
        self.spec = spec
        self.name = spec.interface_name
        self.a, self.b = a, b
        self.transport = transport or attach_transport(spec)
        self.fault: Optional[Fault] = None
        self.trace: Optional[list] = None

    def _end(self, node: str):
        if node == self.a:
            return self.transport.a
        if node == self.b:
            return self.transport.b
        raise TopologyError(f"{node} is not an endpoint of {self.name}")

    def peer(self, node: str) -> str:
        return self.b if node == self.a else self.a

    def send(self, sender: str, data: bytes) -> None:
        end = self._end(sender)
        if self.spec.added_delay_us:
            deadline = time.perf_counter_ns() + int(self.spec.added_delay_us * 1000)
            while time.perf_counter_ns() < deadline:
                pass
        datagrams = [data] if self.fault is None else self.fault(sender, data)
        for d in datagrams:
            if self.trace is not None:
                self.trace.append((self.name, sender, bytes(d)))
            end.send(d)

    def recv(self, receiver: str, timeout: Optional[float] = 1.0) -> Optional[bytes]:
        return self._end(receiver).recv(timeout)

    def pending(self, receiver: str) -> bool:
        return self._end(receiver).pending()

    def close(self) -> None:
        self.transport.close()


class Node:
    role: NodeRole

    def __init__(self, name: str):
        self.name = name
        self.ops: Counter = Counter()
        self.channels: dict = {}

    def handle(self, iface: str, data: bytes):
        """Process ``data`` that arrived on ``iface``; return (out_iface, bytes).

        ``out_iface`` None means the data leaves the pipeline at this node.
        """
        raise TopologyError(f"{self.name} does not forward user-plane traffic")

    def _decap(self, iface: str, data: bytes, teid: int) -> bytes:
        pkt = wire.decode_gtpu(self.channels[iface].unprotect(data))
        if pkt.teid != teid:
            raise TopologyError(f"{self.name}: unknown TEID 0x{pkt.teid:08x} on {iface}")
        return pkt.payload

    def _encap(self, iface: str, payload: bytes, teid: int) -> bytes:
        return self.channels[iface].protect(wire.encode_gtpu(teid, payload))


class UeNode(Node):
    role = NodeRole.UE

    def __init__(self, name, pdcp: PdcpEntity):
        super().__init__(name)
        self.pdcp = pdcp

    def handle(self, iface, data):
        if iface == "app":
            return UU, self.pdcp.protect(data)
        return None, self.pdcp.unprotect(data)


class DuNode(Node):
    role = NodeRole.DU

    def __init__(self, name):
        super().__init__(name)
        self.f1u_teid = 0
        self.ue_contexts: dict = {}

    def handle(self, iface, data):
        if iface == UU:
            return F1U, self._encap(F1U, data, self.f1u_teid)
        return UU, self._decap(F1U, data, self.f1u_teid)


def _blame(link: str, exc: RansecError) -> RansecError:
    # the failing protection belongs to ``link``, not the link the bytes arrived on
    exc.failed_link = link
    return exc


class CuUpNode(Node):
    role = NodeRole.CU_UP

    def __init__(self, name, pdcp: PdcpEntity, teids):
        super().__init__(name)
        self.pdcp = pdcp
        self.teids = teids
        self.f1u_teid = 0
        self.n3_teid = 0
        self.bearer_contexts: dict = {}

    def handle(self, iface, data):
        if iface == F1U:
            pdu = self._decap(F1U, data, self.f1u_teid)
            try:
                sdu = self.pdcp.unprotect(pdu)
            except RansecError as exc:
                raise _blame(UU, exc)
            return N3, self._encap(N3, sdu, self.n3_teid)
        pdu = self.pdcp.protect(self._decap(N3, data, self.n3_teid))
        return F1U, self._encap(F1U, pdu, self.f1u_teid)


class GnbNode(Node):
    role = NodeRole.GNB

    def __init__(self, name, pdcp: PdcpEntity, teids):
        super().__init__(name)
        self.pdcp = pdcp
        self.teids = teids
        self.n3_teid = 0

    def handle(self, iface, data):
        if iface == UU:
            return N3, self._encap(N3, self.pdcp.unprotect(data), self.n3_teid)
        return UU, self.pdcp.protect(self._decap(N3, data, self.n3_teid))


class UpfNode(Node):
    """Terminates N3 and answers every packet with an identical echo."""

    role = NodeRole.UPF

    def __init__(self, name):
        super().__init__(name)
        self.n3_teid = 0

    def handle(self, iface, data):
        return N3, self._encap(N3, self._decap(N3, data, self.n3_teid), self.n3_teid)


class CuCpNode(Node):
    role = NodeRole.CU_CP

    def __init__(self, name):
        super().__init__(name)
        self.transactions = itertools.count(1)
        self.ue_ids = itertools.count(1)


class AmfStub(Node):
    role = NodeRole.AMF


# -- topology -------------------------------------------------------------------------------

@dataclass
class EchoResult:
    rtt_ns: int
    crypto_ops: dict
    payload: bytes = b""

    @property
    def rtt_us(self) -> float:
        return self.rtt_ns / 1000

    def total(self, kind: Optional[str] = None) -> int:
        return sum(v for ops in self.crypto_ops.values() for k, v in ops.items()
                   if kind is None or k == kind)


@dataclass
class PipelineTopology:
    mode: str
    nodes: dict
    links: dict
    scenario: Optional[ScenarioConfig] = None
    up_path: tuple = ()
    _workers: list = field(default_factory=list, repr=False)

    def node(self, role: NodeRole) -> Node:
        for n in self.nodes.values():
            if n.role == role:
                return n
        raise TopologyError(f"no {role.value} node in a {self.mode} topology")

    def secured_links(self) -> list[str]:
        return [name for name, link in self.links.items() if link.spec.security is not None]

    def crypto_ops(self) -> dict:
        return {name: dict(n.ops) for name, n in self.nodes.items()}

    def install_teids(self, f1u_teid: Optional[int], n3_teid: int) -> None:
        """Point the UP tunnels at TEIDs allocated by bearer context setup."""
        if self.mode == "disaggregated":
            self.node(NodeRole.DU).f1u_teid = f1u_teid
            cuup = self.node(NodeRole.CU_UP)
            cuup.f1u_teid, cuup.n3_teid = f1u_teid, n3_teid
        else:
            self.node(NodeRole.GNB).n3_teid = n3_teid
        self.node(NodeRole.UPF).n3_teid = n3_teid

    def enable_trace(self) -> list:
        trace: list = []
        for link in self.links.values():
            link.trace = trace
        return trace

    # -- echo --------------------------------------------------------------------------

    def send_echo(self, payload: bytes, timeout: float = 1.0) -> EchoResult:
        before = {name: Counter(n.ops) for name, n in self.nodes.items()}
        if self._workers:
            rtt, echoed = self._echo_threaded(payload, timeout)
        else:
            rtt, echoed = self._echo_stepped(payload, timeout)
        if echoed != payload:
            raise EchoFailure(UU, self.node(NodeRole.UE).name,
                              RansecError("echoed payload differs from the sent payload"))
        ops = {}
        for name, n in self.nodes.items():
            delta = n.ops - before[name]
            ops[name] = dict(delta)
        return EchoResult(rtt, ops, echoed)

    def _echo_stepped(self, payload, timeout):
        node = self.node(NodeRole.UE)
        iface, data = "app", payload
        start = time.perf_counter_ns()
        while True:
            try:
                out_iface, data = node.handle(iface, data)
            except RansecError as exc:
                raise EchoFailure(getattr(exc, "failed_link", iface), node.name, exc) from exc
            if out_iface is None:
                break
            link = self.links[out_iface]
            link.send(node.name, data)
            nxt = self.nodes[link.peer(node.name)]
            data = link.recv(nxt.name, timeout)
            if data is None:
                raise EchoFailure(out_iface, nxt.name, TimeoutError("no packet arrived"))
            node, iface = nxt, out_iface
        return time.perf_counter_ns() - start, data

    # multi-worker mode: one thread per node, one pump thread per link end

    def start(self) -> None:
        if self._workers:
            return
        self._stop = threading.Event()
        self._results: queue.SimpleQueue = queue.SimpleQueue()
        self._inboxes = {name: queue.SimpleQueue() for name in self.nodes}
        for link in self.links.values():
            if link.name in CP_INTERFACES:
                continue
            for end in (link.a, link.b):
                t = threading.Thread(target=self._pump, args=(link, end), daemon=True)
                self._workers.append(t)
        for name in self.nodes:
            t = threading.Thread(target=self._work, args=(name,), daemon=True)
            self._workers.append(t)
        for t in self._workers:
            t.start()

    def stop(self) -> None:
        if not self._workers:
            return
        self._stop.set()
        for box in self._inboxes.values():
            box.put(None)
        for t in self._workers:
            t.join(timeout=2)
        self._workers = []

    def _pump(self, link: Link, end: str) -> None:
        while not self._stop.is_set():
            data = link.recv(end, timeout=0.05)
            if data is not None:
                self._inboxes[end].put((link.name, data))

    def _work(self, name: str) -> None:
        node, inbox = self.nodes[name], self._inboxes[name]
        while True:
            item = inbox.get()
            if item is None:
                return
            iface, data = item
            try:
                out_iface, data = node.handle(iface, data)
            except RansecError as exc:
                self._results.put(EchoFailure(getattr(exc, "failed_link", iface), name, exc))
                continue
            if out_iface is None:
                self._results.put(data)
            else:
                self.links[out_iface].send(name, data)

    def _echo_threaded(self, payload, timeout):
        ue = self.node(NodeRole.UE).name
        start = time.perf_counter_ns()
        self._inboxes[ue].put(("app", payload))
        try:
            out = self._results.get(timeout=timeout)
        except queue.Empty:
            raise EchoFailure(UU, ue, TimeoutError("echo did not return")) from None
        rtt = time.perf_counter_ns() - start
        if isinstance(out, EchoFailure):
            raise out
        return rtt, out

    def close(self) -> None:
        self.stop()
        for link in self.links.values():
            link.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def send_echo(pipeline: PipelineTopology, payload: bytes) -> EchoResult:
    return pipeline.send_echo(payload)


def _link_keys(scenario: ScenarioConfig, iface: str):
    master = scenario.keys.get(iface)
    return master.hex() if master is not None else scenario.seed


def _secure_channels(spec: LinkSpec, scenario, session: ProvisioningSession):
    """Return (channel at a, channel at b) for an ESP/DTLS/plain link."""
    suite = spec.suite
    if suite is None:
        return PlainChannel(), PlainChannel()
    seed = _link_keys(scenario, spec.interface_name)
    label = spec.interface_name
    if suite.kind == "dtls":
        client, server = dtls_provision(
            derive_static_key(seed, f"{label}/a2b/key", 16),
            derive_static_key(seed, f"{label}/b2a/key", 16),
            derive_static_key(seed, f"{label}/a2b/salt", 4),
            derive_static_key(seed, f"{label}/b2a/salt", 4))
        return DtlsChannel(client), DtlsChannel(server)
    pairs = {}
    for direction in ("a2b", "b2a"):
        pairs[direction] = sa_provision(
            suite, derive_static_key(seed, f"{label}/{direction}/enc", suite.key_bytes),
            derive_static_key(seed, f"{label}/{direction}/auth", suite.auth_key_len),
            session=session)
    return (EspChannel(pairs["a2b"][0], pairs["b2a"][1]),
            EspChannel(pairs["b2a"][0], pairs["a2b"][1]))


def build_topology(scenario: ScenarioConfig) -> PipelineTopology:
    """Wire nodes and links for ``scenario`` with every secured link provisioned."""
    mode = scenario.mode
    session = ProvisioningSession()
    uu = scenario.link(UU)
    seed = _link_keys(scenario, UU)
    if uu.security is None:
        ue_pdcp, net_pdcp = pdcp_provision(UE_BEARER, integrity_enabled=False,
                                           ciphering_enabled=False)
    else:
        ue_pdcp, net_pdcp = pdcp_provision(
            UE_BEARER, derive_static_key(seed, "Uu/int", 16), derive_static_key(seed, "Uu/enc", 16),
            integrity_enabled=True, ciphering_enabled=uu.ciphering)
    teids = itertools.count(1)
    ue = UeNode("UE", ue_pdcp)
    upf = UpfNode("UPF")
    if mode == "disaggregated":
        du, cucp, amf = DuNode("DU"), CuCpNode("CU-CP"), AmfStub("AMF")
        cuup = CuUpNode("CU-UP", net_pdcp, teids)
        nodes = [ue, du, cuup, cucp, upf, amf]
        wiring = {UU: (ue, du), F1U: (du, cuup), N3: (cuup, upf), F1C: (cucp, du), E1: (cucp, cuup)}
        up_path = (UU, F1U, N3)
    elif mode == "monolithic":
        gnb = GnbNode("gNB", net_pdcp, teids)
        nodes = [ue, gnb, upf]
        wiring = {UU: (ue, gnb), N3: (gnb, upf)}
        up_path = (UU, N3)
    else:
        raise TopologyError(f"unknown mode {mode!r}")
    for n in nodes:
        if isinstance(n, (UeNode, CuUpNode, GnbNode)):
            n.pdcp.ops = n.ops
    links = {}
    for iface, (a, b) in wiring.items():
        spec = scenario.link(iface)
        links[iface] = Link(spec, a.name, b.name)
        if iface == UU:
            continue
        ch_a, ch_b = _secure_channels(spec, scenario, session)
        for node, ch in ((a, ch_a), (b, ch_b)):
            if not isinstance(ch, PlainChannel):
                ch.bind(node.ops)
            node.channels[iface] = ch
    topo = PipelineTopology(mode, {n.name: n for n in nodes}, links, scenario, up_path)
    topo.session = session
    topo.install_teids(next(teids) if mode == "disaggregated" else None, next(teids))
    return topo
