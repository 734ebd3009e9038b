import socket
import time

import pytest
from hypothesis import given, settings, strategies as st

from ransec import wire
from ransec.errors import (EchoFailure, InvalidSuiteForInterface, TopologyError, TransportError,
                           UnknownSuite)
from ransec.scenario import E1, F1C, F1U, N3, UU, LinkSpec, ScenarioConfig, preset
from ransec.suites import ESP_SUITES
from ransec.topology import (InProcessTransport, NodeRole, UdpLoopbackTransport, attach_transport,
                             build_topology, send_echo)

PAYLOAD = bytes(range(256)) * 4


def _ops_by_kind(result):
    out = {}
    for ops in result.crypto_ops.values():
        for k, v in ops.items():
            out[k] = out.get(k, 0) + v
    return out


# -- construction ----------------------------------------------------------------------

def test_disaggregated_secured_has_three_up_links_secured():
    topo = build_topology(preset("disaggregated", "Uu=NIA2+NEA2,F1-U=AES-GCM-128,N3=AES-GCM-128"))
    assert sorted(topo.secured_links()) == sorted([UU, F1U, N3])
    assert {n.role for n in topo.nodes.values()} == {
        NodeRole.UE, NodeRole.DU, NodeRole.CU_UP, NodeRole.CU_CP, NodeRole.UPF, NodeRole.AMF}


def test_monolithic_secured_has_two_secured_links():
    topo = build_topology(preset("monolithic", "all"))
    assert sorted(topo.secured_links()) == sorted([UU, N3])
    roles = [n.role for n in topo.nodes.values()]
    assert roles.count(NodeRole.UE) == 1 and roles.count(NodeRole.UPF) == 1
    assert NodeRole.GNB in roles and NodeRole.DU not in roles


@pytest.mark.parametrize("iface,suite", [(F1U, "DTLS-1.2-AES-GCM-128"), (N3, "NIA2+NEA2"),
                                         (UU, "AES-GCM-128"), (F1C, "NIA2+NEA2")])
def test_interface_suite_mapping_enforced(iface, suite):
    with pytest.raises(InvalidSuiteForInterface):
        LinkSpec(iface, suite)


@pytest.mark.parametrize("iface", [F1C, E1])
@pytest.mark.parametrize("suite", ["AES-GCM-128", "DTLS-1.2-AES-GCM-128"])
def test_control_interfaces_take_esp_or_dtls(iface, suite):
    assert LinkSpec(iface, suite).suite.id == suite


def test_unknown_suite_and_mode():
    with pytest.raises(UnknownSuite):
        LinkSpec(N3, "AES-XTS")
    with pytest.raises(TopologyError):
        ScenarioConfig(mode="split-7.2")
    with pytest.raises(TopologyError):
        ScenarioConfig(mode="monolithic", links={F1U: LinkSpec(F1U, "AES-GCM-128")})


def test_spis_unique_across_topology():
    topo = build_topology(preset("disaggregated", "all"))
    assert len(topo.session.used) == 2 * 4  # four ESP links, one SA pair per direction


# -- echo -------------------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["monolithic", "disaggregated"])
def test_baseline_echo_identity_and_zero_ops(mode):
    with build_topology(preset(mode)) as topo:
        res = send_echo(topo, PAYLOAD)
    assert res.payload == PAYLOAD
    assert res.total() == 0
    assert res.rtt_ns > 0


@pytest.mark.parametrize("suite", ESP_SUITES, ids=lambda s: s.id)
def test_disaggregated_adds_four_esp_ops(suite):
    secure = f"Uu=NIA2+NEA2,F1-U={suite.id},N3={suite.id}"
    with build_topology(preset("disaggregated", secure)) as dis, \
            build_topology(preset("monolithic", f"Uu=NIA2+NEA2,N3={suite.id}")) as mono:
        d, m = dis.send_echo(PAYLOAD), mono.send_echo(PAYLOAD)
    assert _ops_by_kind(m) == {"nia2": 4, "nea2": 4, "esp": 4}
    assert _ops_by_kind(d) == {"nia2": 4, "nea2": 4, "esp": 8}
    assert d.total() - m.total() == 4
    assert d.total("esp") - m.total("esp") == 4
    assert d.crypto_ops["DU"] == {"esp": 2} and d.crypto_ops["CU-UP"]["esp"] == 4


def test_integrity_only_uu_halves_pdcp_ops():
    scen = preset("monolithic", "all").with_link(UU, ciphering=False)
    with build_topology(scen) as topo:
        assert _ops_by_kind(topo.send_echo(PAYLOAD)) == {"nia2": 4, "esp": 4}


@settings(max_examples=50, deadline=None)
@given(st.binary(max_size=2000), st.sampled_from(["monolithic", "disaggregated"]),
       st.sampled_from(["none", "all"]))
def test_echo_payload_identity(payload, mode, secure):
    with build_topology(preset(mode, secure)) as topo:
        for _ in range(3):
            assert topo.send_echo(payload).payload == payload


def test_ops_deterministic_across_echoes():
    with build_topology(preset("disaggregated", "all")) as topo:
        first = topo.send_echo(PAYLOAD).crypto_ops
        for _ in range(20):
            assert topo.send_echo(PAYLOAD).crypto_ops == first


def test_byte_trace_reproducible():
    traces = []
    for _ in range(2):
        with build_topology(preset("disaggregated", "all", seed=5)) as topo:
            trace = topo.enable_trace()
            for i in range(5):
                topo.send_echo(bytes([i]) * 100)
            traces.append(trace)
    assert traces[0] == traces[1]
    assert len(traces[0]) == 5 * 6
    # the DU forwards PDCP PDUs inside F1-U; the payload never appears in clear
    assert all(bytes([1]) * 100 not in d for _, _, d in traces[0][6:12])


def test_keys_change_trace():
    def trace(seed):
        with build_topology(preset("monolithic", "all", seed=seed)) as topo:
            t = topo.enable_trace()
            topo.send_echo(b"x" * 64)
            return t
    assert trace(1) != trace(2)


def test_threaded_mode_matches_stepped():
    with build_topology(preset("disaggregated", "all")) as topo:
        topo.start()
        for i in range(50):
            res = topo.send_echo(bytes([i]) * 512)
            assert res.payload == bytes([i]) * 512
            assert res.total("esp") == 8
        topo.stop()
        assert topo.send_echo(b"stepped again").payload == b"stepped again"


@pytest.mark.parametrize("threaded", [False, True])
def test_udp_loopback_pipeline(threaded):
    scen = preset("disaggregated", "all")
    for iface in (UU, F1U, N3):
        scen = scen.with_link(iface, transport="udp-loopback")
    with build_topology(scen) as topo:
        if threaded:
            topo.start()
        for _ in range(20):
            assert topo.send_echo(PAYLOAD).payload == PAYLOAD


# -- fault attribution ---------------------------------------------------------------

def _flip_last(sender, data):
    bad = bytearray(data)
    bad[-1] ^= 1
    return [bytes(bad)]


@pytest.mark.parametrize("iface", [UU, F1U, N3])
def test_tamper_names_link(iface):
    with build_topology(preset("disaggregated", "all")) as topo:
        topo.links[iface].fault = _flip_last
        with pytest.raises(EchoFailure) as info:
            topo.send_echo(PAYLOAD)
    assert info.value.link == iface
    assert iface in str(info.value)


def test_tamper_names_link_threaded():
    with build_topology(preset("disaggregated", "all")) as topo:
        topo.start()
        topo.links[N3].fault = _flip_last
        with pytest.raises(EchoFailure) as info:
            topo.send_echo(PAYLOAD)
    assert info.value.link == N3


def test_dropped_packet_times_out_with_link_name():
    with build_topology(preset("monolithic", "all")) as topo:
        topo.links[N3].fault = lambda sender, data: []
        with pytest.raises(EchoFailure) as info:
            topo.send_echo(PAYLOAD, timeout=0.05)
    assert info.value.link == N3


def test_teid_mismatch_rejected():
    with build_topology(preset("disaggregated")) as topo:
        topo.node(NodeRole.UPF).n3_teid = 999
        with pytest.raises(EchoFailure) as info:
            topo.send_echo(PAYLOAD)
    assert info.value.link == N3 and "TEID" in str(info.value)


def test_install_teids_feeds_gtpu_headers():
    with build_topology(preset("disaggregated")) as topo:
        topo.install_teids(0x100, 0x200)
        trace = topo.enable_trace()
        topo.send_echo(b"x")
    teids = {(name, wire.decode_gtpu(d).teid) for name, _, d in trace if name in (F1U, N3)}
    assert teids == {(F1U, 0x100), (N3, 0x200)}


# -- transports ----------------------------------------------------------------------

def test_in_process_million_packets_in_order():
    t = InProcessTransport()
    n = 10**6
    for i in range(n):
        t.a.send(i)
    got = [t.b.recv() for _ in range(n)]
    assert got == list(range(n))
    assert t.b.recv() is None


def test_udp_loopback_gtpu_roundtrip():
    packet = wire.encode_gtpu(0xABCD, bytes(range(256)) * 4)
    assert len(packet) == 1032
    t = UdpLoopbackTransport()
    try:
        t.a.send(packet)
        assert t.b.recv(timeout=1.0) == packet
        t.b.send(packet)
        assert t.a.recv(timeout=1.0) == packet
    finally:
        t.close()


def test_udp_port_in_use():
    blocker = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    blocker.bind(("127.0.0.1", 0))
    port = blocker.getsockname()[1]
    try:
        with pytest.raises(TransportError):
            UdpLoopbackTransport(port, 0)
        with pytest.raises(TransportError):
            attach_transport(LinkSpec(N3, transport="udp-loopback", port=port))
    finally:
        blocker.close()


def test_attach_transport_replaces_link_transport():
    with build_topology(preset("monolithic")) as topo:
        t = attach_transport(topo.links[N3], "udp-loopback")
        assert topo.links[N3].transport is t
        assert topo.send_echo(b"over udp").payload == b"over udp"


def test_added_delay_floor():
    spec = LinkSpec(N3, added_delay_us=100)
    scen = ScenarioConfig(mode="monolithic", links={N3: spec})
    with build_topology(scen) as topo:
        link = topo.links[N3]
        for _ in range(20):
            start = time.perf_counter_ns()
            link.send("gNB", b"x")
            assert link.recv("UPF") == b"x"
            assert time.perf_counter_ns() - start >= 100_000
        # an echo crosses N3 twice
        assert topo.send_echo(b"x").rtt_ns >= 200_000
