"""Byte-exact codecs for the PDUs carried on each emulated interface.

All multi-byte integers are big-endian. Every codec is a pure function.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

from .errors import EncodingError, MalformedPacket, UnsupportedVersion

# GTP-U: version 1, PT=1, no E/S/PN flags; message type 255 (G-PDU)
GTPU_FLAGS = 0x30
GTPU_GPDU = 0xFF
GTPU_HEADER_LEN = 8
_GTPU = struct.Struct("!BBHI")

ESP_HEADER_LEN = 8
_ESP = struct.Struct("!II")

DTLS_HEADER_LEN = 13
DTLS_1_2 = 0xFEFD
DTLS_1_0 = 0xFEFF
CONTENT_APPLICATION_DATA = 23
_DTLS = struct.Struct("!BHH6sH")

PDCP_HEADER_LEN = 3
PDCP_MAC_LEN = 4
PDCP_SN_BITS = 18
PDCP_SN_MOD = 1 << PDCP_SN_BITS


@dataclass(frozen=True)
class GtpuPacket:
    teid: int
    payload: bytes


@dataclass(frozen=True)
class EspPacket:
    spi: int
    sequence: int
    iv: bytes
    ciphertext: bytes
    icv: bytes

    def header(self) -> bytes:
        return _ESP.pack(self.spi, self.sequence)


@dataclass(frozen=True)
class DtlsRecord:
    content_type: int
    epoch: int
    sequence: int
    body: bytes
    version: int = DTLS_1_2

    def header(self) -> bytes:
        return _encode_dtls_header(self.content_type, self.version, self.epoch,
                                   self.sequence, len(self.body))


@dataclass(frozen=True)
class PdcpPdu:
    sn: int
    payload: bytes
    mac_i: Optional[bytes] = None


def _check_uint(name: str, value: int, bits: int) -> None:
    if not 0 <= value < (1 << bits):
        raise EncodingError(f"{name}={value} does not fit in {bits} bits")


# -- GTP-U -----------------------------------------------------------------

def encode_gtpu(teid: int, payload: bytes) -> bytes:
    _check_uint("teid", teid, 32)
    if len(payload) > 0xFFFF:
        raise EncodingError(f"GTP-U payload of {len(payload)} bytes exceeds 65535")
    return _GTPU.pack(GTPU_FLAGS, GTPU_GPDU, len(payload), teid) + bytes(payload)


def decode_gtpu(data: bytes) -> GtpuPacket:
    if len(data) < GTPU_HEADER_LEN:
        raise MalformedPacket(f"GTP-U packet truncated: {len(data)} < 8 bytes")
    flags, msg_type, length, teid = _GTPU.unpack_from(data)
    if flags >> 5 != 1 or not flags & 0x10:
        raise UnsupportedVersion(f"not a GTPv1-U header (flags 0x{flags:02x})")
    if flags & 0x07:
        raise MalformedPacket("GTP-U optional header fields are not supported")
    if msg_type != GTPU_GPDU:
        raise MalformedPacket(f"unsupported GTP-U message type {msg_type}")
    if length != len(data) - GTPU_HEADER_LEN:
        raise MalformedPacket(
            f"GTP-U length field {length} != {len(data) - GTPU_HEADER_LEN} payload bytes")
    return GtpuPacket(teid, bytes(data[GTPU_HEADER_LEN:]))


# -- ESP -------------------------------------------------------------------

def encode_esp(packet: EspPacket, suite=None) -> bytes:
    """Serialize SPI | sequence | IV | ciphertext | ICV.

    When ``suite`` is given the IV and ICV lengths are checked against it.
    """
    _check_uint("spi", packet.spi, 32)
    _check_uint("sequence", packet.sequence, 32)
    if suite is not None:
        if len(packet.iv) != suite.iv_len:
            raise EncodingError(f"IV is {len(packet.iv)} bytes, {suite.id} needs {suite.iv_len}")
        if len(packet.icv) != suite.tag_len:
            raise EncodingError(f"ICV is {len(packet.icv)} bytes, {suite.id} needs {suite.tag_len}")
    return b"".join((packet.header(), packet.iv, packet.ciphertext, packet.icv))


def decode_esp(data: bytes, suite) -> EspPacket:
    minimum = ESP_HEADER_LEN + suite.iv_len + suite.tag_len
    if len(data) < minimum:
        raise MalformedPacket(f"ESP packet of {len(data)} bytes shorter than {minimum}")
    spi, seq = _ESP.unpack_from(data)
    iv_end = ESP_HEADER_LEN + suite.iv_len
    icv_start = len(data) - suite.tag_len
    data = bytes(data)
    return EspPacket(spi, seq, data[ESP_HEADER_LEN:iv_end], data[iv_end:icv_start],
                     data[icv_start:])


def esp_overhead(suite) -> int:
    """Fixed framing bytes (header, IV, ICV); excludes the trailer."""
    return ESP_HEADER_LEN + suite.iv_len + suite.tag_len


# -- DTLS 1.2 record layer ---------------------------------------------------

def _encode_dtls_header(content_type, version, epoch, sequence, length) -> bytes:
    _check_uint("content_type", content_type, 8)
    _check_uint("epoch", epoch, 16)
    _check_uint("sequence", sequence, 48)
    _check_uint("length", length, 16)
    return _DTLS.pack(content_type, version, epoch, sequence.to_bytes(6, "big"), length)


DTLS_MAX_PLAINTEXT = 1 << 14
DTLS_MAX_BODY = DTLS_MAX_PLAINTEXT + 2048  # ciphertext expansion allowance


def encode_dtls_record(record: DtlsRecord) -> bytes:
    if record.version != DTLS_1_2:
        raise UnsupportedVersion(f"DTLS version 0x{record.version:04x} is not 1.2")
    if record.content_type == CONTENT_APPLICATION_DATA and not record.body:
        raise EncodingError("application-data record needs a non-empty body")
    if len(record.body) > DTLS_MAX_BODY:
        raise EncodingError(f"DTLS record body of {len(record.body)} bytes exceeds {DTLS_MAX_BODY}")
    return record.header() + bytes(record.body)


def decode_dtls_record(data: bytes) -> DtlsRecord:
    if len(data) < DTLS_HEADER_LEN:
        raise MalformedPacket(f"DTLS record truncated: {len(data)} < 13 bytes")
    ctype, version, epoch, seq, length = _DTLS.unpack_from(data)
    if version != DTLS_1_2:
        raise UnsupportedVersion(f"DTLS version 0x{version:04x} is not 1.2")
    if length != len(data) - DTLS_HEADER_LEN:
        raise MalformedPacket(
            f"DTLS length field {length} != {len(data) - DTLS_HEADER_LEN} body bytes")
    if ctype == CONTENT_APPLICATION_DATA and length == 0:
        raise MalformedPacket("empty application-data record")
    if length > DTLS_MAX_BODY:
        raise MalformedPacket(f"DTLS record body of {length} bytes exceeds {DTLS_MAX_BODY}")
    return DtlsRecord(ctype, epoch, int.from_bytes(seq, "big"), bytes(data[DTLS_HEADER_LEN:]),
                      version)


# -- PDCP (data PDU, 18-bit SN) ---------------------------------------------
#
# Octet 0: D/C=1 | R R R R R | SN[17:16]; octets 1-2: SN[15:0]. MAC-I trails the payload.

def encode_pdcp_header(sn: int) -> bytes:
    if not 0 <= sn < PDCP_SN_MOD:
        raise EncodingError(f"PDCP SN {sn} outside 0..2^18-1")
    return bytes((0x80 | (sn >> 16), (sn >> 8) & 0xFF, sn & 0xFF))


def encode_pdcp(pdu: PdcpPdu) -> bytes:
    header = encode_pdcp_header(pdu.sn)
    if pdu.mac_i is None:
        return header + bytes(pdu.payload)
    if len(pdu.mac_i) != PDCP_MAC_LEN:
        raise EncodingError(f"MAC-I must be 4 bytes, got {len(pdu.mac_i)}")
    return header + bytes(pdu.payload) + bytes(pdu.mac_i)


def decode_pdcp_header(data: bytes) -> int:
    if len(data) < PDCP_HEADER_LEN:
        raise MalformedPacket(f"PDCP PDU truncated: {len(data)} < 3 bytes")
    if data[0] & 0xFC != 0x80:
        raise MalformedPacket(f"not a PDCP data PDU (octet 0 = 0x{data[0]:02x})")
    return ((data[0] & 0x03) << 16) | (data[1] << 8) | data[2]


def decode_pdcp(data: bytes, integrity_enabled: bool) -> PdcpPdu:
    sn = decode_pdcp_header(data)
    data = bytes(data)
    if not integrity_enabled:
        return PdcpPdu(sn, data[PDCP_HEADER_LEN:])
    if len(data) < PDCP_HEADER_LEN + PDCP_MAC_LEN:
        raise MalformedPacket("PDCP PDU too short to carry MAC-I")
    return PdcpPdu(sn, data[PDCP_HEADER_LEN:-PDCP_MAC_LEN], data[-PDCP_MAC_LEN:])


# -- debug dump ----------------------------------------------------------------

def annotate(kind: str, data: bytes, suite=None, integrity: bool = True) -> list[tuple[str, str]]:
    """Return (field, value) rows describing an encoded PDU, for hex dumps."""
    if kind == "gtpu":
        p = decode_gtpu(data)
        return [("flags", f"0x{data[0]:02x}"), ("message_type", f"0x{data[1]:02x} (G-PDU)"),
                ("length", str(len(p.payload))), ("teid", f"0x{p.teid:08x}"),
                ("payload", p.payload.hex())]
    if kind == "esp":
        if suite is None:
            raise ValueError("ESP dump needs a suite to locate IV and ICV")
        p = decode_esp(data, suite)
        return [("spi", f"0x{p.spi:08x}"), ("sequence", str(p.sequence)), ("iv", p.iv.hex()),
                ("ciphertext", p.ciphertext.hex()), ("icv", p.icv.hex())]
    if kind == "dtls":
        r = decode_dtls_record(data)
        return [("content_type", str(r.content_type)), ("version", f"0x{r.version:04x}"),
                ("epoch", str(r.epoch)), ("sequence", str(r.sequence)),
                ("length", str(len(r.body))), ("body", r.body.hex())]
    if kind == "pdcp":
        p = decode_pdcp(data, integrity)
        rows = [("d/c", "data"), ("sn", str(p.sn)), ("payload", p.payload.hex())]
        if p.mac_i is not None:
            rows.append(("mac_i", p.mac_i.hex()))
        return rows
    raise ValueError(f"unknown PDU kind {kind!r}")
