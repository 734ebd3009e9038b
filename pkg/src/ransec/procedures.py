"""F1-C UE Context Setup and E1 Bearer Context Setup over optionally secured links.

Messages use a small TLV encoding instead of ASN.1 PER so wire lengths are
deterministic. Each run is timed from the moment the CU-CP starts sending the
request until it has decoded the matching response.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from typing import Optional

from .errors import MalformedPacket, ProcedureTimeout, RansecError, TopologyError
from .scenario import E1, F1C
from .topology import CuCpNode, CuUpNode, DuNode, Link, NodeRole, PipelineTopology

UE_CONTEXT_SETUP = "UeContextSetup"
BEARER_CONTEXT_SETUP = "BearerContextSetup"
REQUEST, RESPONSE = "request", "response"

_PROC_CODES = {UE_CONTEXT_SETUP: 1, BEARER_CONTEXT_SETUP: 2}
_KIND_CODES = {REQUEST: 0, RESPONSE: 1}
_IE_CODES = {"ue_id": 1, "f1u_teid": 2, "n3_teid": 3}
_HEADER = struct.Struct("!BBIB")
_IE = struct.Struct("!BHI")


@dataclass(frozen=True)
class ProcedureMessage:
    procedure: str
    kind: str
    transaction_id: int
    fields: dict = field(default_factory=dict)


def encode_message(msg: ProcedureMessage) -> bytes:
    parts = [_HEADER.pack(_PROC_CODES[msg.procedure], _KIND_CODES[msg.kind],
                          msg.transaction_id, len(msg.fields))]
    for name, value in msg.fields.items():
        parts.append(_IE.pack(_IE_CODES[name], 4, value))
    return b"".join(parts)


def decode_message(data: bytes) -> ProcedureMessage:
    if len(data) < _HEADER.size:
        raise MalformedPacket("control message truncated")
    proc, kind, txid, count = _HEADER.unpack_from(data)
    procs = {v: k for k, v in _PROC_CODES.items()}
    kinds = {v: k for k, v in _KIND_CODES.items()}
    ies = {v: k for k, v in _IE_CODES.items()}
    if proc not in procs or kind not in kinds:
        raise MalformedPacket(f"unknown procedure/kind code {proc}/{kind}")
    if len(data) != _HEADER.size + count * _IE.size:
        raise MalformedPacket("control message length does not match its IE count")
    fields = {}
    for i in range(count):
        code, length, value = _IE.unpack_from(data, _HEADER.size + i * _IE.size)
        if code not in ies or length != 4:
            raise MalformedPacket(f"bad IE code {code} / length {length}")
        fields[ies[code]] = value
    return ProcedureMessage(procs[proc], kinds[kind], txid, fields)


@dataclass(frozen=True)
class TranscriptEntry:
    timestamp_ns: int
    direction: str
    message: ProcedureMessage
    wire_length: int


@dataclass
class ProcedureTranscript:
    procedure: str
    entries: list = field(default_factory=list)
    duration_ns: int = 0
    ignored: int = 0

    @property
    def duration_us(self) -> float:
        return self.duration_ns / 1000

    @property
    def request(self) -> TranscriptEntry:
        return self.entries[0]

    @property
    def response(self) -> TranscriptEntry:
        return self.entries[1]

    def export(self, with_timestamps: bool = True) -> str:
        """One line per message: timestamp, direction, kind, wire length (tab separated)."""
        lines = []
        for e in self.entries:
            cols = [str(e.timestamp_ns)] if with_timestamps else []
            cols += [e.direction, f"{e.message.procedure}.{e.message.kind}", str(e.wire_length)]
            lines.append("\t".join(cols))
        return "\n".join(lines) + "\n"


def _exchange(procedure, initiator, responder, link: Link, iface: str, fields: dict,
              respond, timeout: float) -> ProcedureTranscript:
    transcript = ProcedureTranscript(procedure)
    txid = next(initiator.transactions)
    request = ProcedureMessage(procedure, REQUEST, txid, fields)
    to_resp, to_init = f"{initiator.name}->{responder.name}", f"{responder.name}->{initiator.name}"
    start = time.perf_counter_ns()
    data = initiator.channels[iface].protect(encode_message(request))
    transcript.entries.append(TranscriptEntry(start, to_resp, request, len(data)))
    link.send(initiator.name, data)

    data = link.recv(responder.name, timeout)
    if data is None:
        raise ProcedureTimeout(f"{procedure} request lost on {iface}")
    got = decode_message(responder.channels[iface].unprotect(data))
    if got.procedure != procedure or got.kind != REQUEST:
        raise MalformedPacket(f"{responder.name} expected a {procedure} request")
    reply = ProcedureMessage(procedure, RESPONSE, got.transaction_id, respond(got))
    link.send(responder.name, responder.channels[iface].protect(encode_message(reply)))

    while True:
        data = link.recv(initiator.name, timeout)
        if data is None:
            raise ProcedureTimeout(f"{procedure} response lost on {iface}")
        msg = decode_message(initiator.channels[iface].unprotect(data))
        if msg.kind == RESPONSE and msg.transaction_id == txid and msg.procedure == procedure:
            break
        transcript.ignored += 1
    end = time.perf_counter_ns()
    transcript.entries.append(TranscriptEntry(end, to_init, msg, len(data)))
    transcript.duration_ns = end - start

    # late duplicates: replays are rejected by secured channels, plain ones fail matching
    for node in (initiator, responder):
        while link.pending(node.name):
            data = link.recv(node.name, None)
            try:
                node.channels[iface].unprotect(data)
            except RansecError:
                pass
            transcript.ignored += 1
    return transcript


def run_ue_context_setup(cucp: CuCpNode, du: DuNode, link: Link, ue_id: Optional[int] = None,
                         timeout: float = 1.0) -> ProcedureTranscript:
    """CU-CP asks the DU to create a UE context; the DU installs it and answers."""
    ue_id = next(cucp.ue_ids) if ue_id is None else ue_id

    def respond(req):
        du.ue_contexts[req.fields["ue_id"]] = {"transaction_id": req.transaction_id}
        return {"ue_id": req.fields["ue_id"]}

    return _exchange(UE_CONTEXT_SETUP, cucp, du, link, F1C, {"ue_id": ue_id}, respond, timeout)


def run_bearer_context_setup(cucp: CuCpNode, cuup: CuUpNode, link: Link,
                             ue_id: Optional[int] = None,
                             timeout: float = 1.0) -> ProcedureTranscript:
    """CU-CP asks the CU-UP for a bearer; the response carries fresh F1-U and N3 TEIDs."""
    ue_id = next(cucp.ue_ids) if ue_id is None else ue_id

    def respond(req):
        f1u, n3 = next(cuup.teids), next(cuup.teids)
        cuup.bearer_contexts[req.fields["ue_id"]] = (f1u, n3)
        return {"ue_id": req.fields["ue_id"], "f1u_teid": f1u, "n3_teid": n3}

    return _exchange(BEARER_CONTEXT_SETUP, cucp, cuup, link, E1, {"ue_id": ue_id}, respond,
                     timeout)


@dataclass
class RegistrationTranscript:
    ue_context: ProcedureTranscript
    bearer_context: ProcedureTranscript

    @property
    def teids(self) -> tuple:
        f = self.bearer_context.response.message.fields
        return f["f1u_teid"], f["n3_teid"]


def run_registration_sequence(topology: PipelineTopology, install: bool = True,
                              timeout: float = 1.0) -> RegistrationTranscript:
    """AMF-stub triggered registration: UE Context Setup, then Bearer Context Setup.

    With ``install`` the new TEIDs replace the user-plane tunnels' current ones.
    """
    if topology.mode != "disaggregated":
        raise TopologyError("registration sequence needs a disaggregated topology")
    topology.node(NodeRole.AMF)  # the stub only triggers; raises if absent
    cucp = topology.node(NodeRole.CU_CP)
    ue_id = next(cucp.ue_ids)
    ue_ctx = run_ue_context_setup(cucp, topology.node(NodeRole.DU), topology.links[F1C],
                                  ue_id, timeout)
    bearer = run_bearer_context_setup(cucp, topology.node(NodeRole.CU_UP), topology.links[E1],
                                      ue_id, timeout)
    result = RegistrationTranscript(ue_ctx, bearer)
    if install:
        topology.install_teids(*result.teids)
    return result
