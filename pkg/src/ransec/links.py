"""Stateful protection endpoints: ESP security associations, DTLS record
endpoints and PDCP bearer entities.

Every endpoint is owned by one worker at a time. Rejected packets never change
endpoint state. Successful operations bump the owner's ``ops`` counter so a
pipeline can account for every cryptographic primitive it ran.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from . import _aes, wire
from .errors import (AuthenticationError, EncodingError, IntegrityError, KeyLengthError,
                     MalformedPacket, PaddingError, ReplayError, SequenceExhausted, UnknownSpi)
from .suites import (DTLS_AES_GCM_128, SecuritySuite, UuSecurityInputs, aead_open, aead_seal,
                     cbc_hmac_protect, cbc_hmac_unprotect, get_suite, gmac_protect, gmac_verify,
                     nea2_crypt, nea2_crypt_into, nia2_mac)

ESP_SEQ_MAX = (1 << 32) - 1
DTLS_SEQ_MAX = (1 << 48) - 1
PDCP_COUNT_LIMIT = 1 << 32
REPLAY_WINDOW = 64
IPPROTO_IPIP = 4


def derive_static_key(seed, label: str, length: int) -> bytes:
    """Deterministic test key material; stands in for keys agreed at deployment."""
    return hashlib.shake_256(f"ransec|{seed}|{label}".encode()).digest(length)


class ReplayWindow:
    """Sliding anti-replay bitmap anchored at the highest authenticated sequence."""

    def __init__(self, size: int = REPLAY_WINDOW):
        self.size = size
        self.top = 0
        self.bitmap = 0

    def check(self, seq: int) -> None:
        if seq > self.top:
            return
        offset = self.top - seq
        if offset >= self.size:
            raise ReplayError(f"sequence {seq} is left of the window (highest {self.top})")
        if self.bitmap >> offset & 1:
            raise ReplayError(f"sequence {seq} already received")

    def update(self, seq: int) -> None:
        if seq > self.top:
            shift = seq - self.top
            self.bitmap = ((self.bitmap << shift) | 1) & ((1 << self.size) - 1)
            self.top = seq
        else:
            self.bitmap |= 1 << (self.top - seq)

    def state(self):
        return self.top, self.bitmap


# -- ESP -------------------------------------------------------------------------

GMAC_HEADROOM = 16  # ESP header + IV, written in front of a GMAC payload


@dataclass
class SecurityAssociation:
    """One direction of an ESP tunnel, either the protecting or unprotecting end."""

    spi: int
    suite: SecuritySuite
    enc_key: bytes
    auth_key: bytes = b""
    direction: str = "protect"
    next_header: int = IPPROTO_IPIP
    tx_sequence: int = 0
    window: ReplayWindow = field(default_factory=ReplayWindow)
    ops: Optional[Counter] = None

    def __post_init__(self):
        self.suite = get_suite(self.suite)
        if self.suite.kind != "esp":
            raise ValueError(f"{self.suite.id} is not an ESP suite")
        if len(self.enc_key) != self.suite.key_bytes:
            raise KeyLengthError(f"{self.suite.id} needs {self.suite.key_bytes} bytes of "
                                 f"encryption keying material, got {len(self.enc_key)}")
        if len(self.auth_key) != self.suite.auth_key_len:
            raise KeyLengthError(f"{self.suite.id} needs {self.suite.auth_key_len} bytes of "
                                 f"authentication key, got {len(self.auth_key)}")
        if self.direction not in ("protect", "unprotect"):
            raise ValueError(f"direction must be 'protect' or 'unprotect', not {self.direction!r}")
        aes_len = self.suite.key_len // 8
        self._aes_key = bytes(self.enc_key[:aes_len])
        self._salt = bytes(self.enc_key[aes_len:])

    # the transform itself, shared with the benchmark
    def iv_for(self, seq: int) -> bytes:
        if self.suite.is_cbc:
            # unpredictable IV: forward cipher applied to the sequence number
            return _aes.ecb_encrypt(self._aes_key, seq.to_bytes(16, "big"))
        return seq.to_bytes(self.suite.iv_len, "big")

    def seal(self, seq: int, plaintext, out=None, frame=None) -> tuple[bytes, bytes, bytes]:
        """Protect an already padded ESP payload; returns (iv, body, icv).

        ``frame`` is an optional writable buffer laid out as 16 bytes of
        headroom followed by ``plaintext``. GMAC suites write header and IV
        into the headroom and authenticate the frame in place.
        """
        suite = self.suite
        iv = self.iv_for(seq)
        header = wire._ESP.pack(self.spi, seq)
        if suite.is_gcm:
            body, icv = aead_seal(suite, self._aes_key, self._salt + iv, header, plaintext, out)
        elif suite.is_gmac:
            joined = None
            if frame is not None:
                joined = memoryview(frame)
                joined[:GMAC_HEADROOM] = header + iv
            body, icv = gmac_protect(suite, self._aes_key, self._salt + iv, plaintext,
                                     aad=header + iv, joined=joined)
        else:
            body, icv = cbc_hmac_protect(suite, self._aes_key, self.auth_key, iv, plaintext,
                                         aad=header, out=out)
        return iv, body, icv

    def open(self, packet: wire.EspPacket) -> bytes:
        suite = self.suite
        header = packet.header()
        if suite.is_gcm:
            return aead_open(suite, self._aes_key, self._salt + packet.iv, header,
                             packet.ciphertext, packet.icv)
        if suite.is_gmac:
            return gmac_verify(suite, self._aes_key, self._salt + packet.iv, packet.ciphertext,
                               packet.icv, aad=header + packet.iv)
        return cbc_hmac_unprotect(suite, self._aes_key, self.auth_key, packet.iv,
                                  packet.ciphertext, packet.icv, aad=header)

    def pad(self, inner: bytes, headroom: int = 0):
        """ESP payload with trailer; with ``headroom`` a bytearray of that many
        leading spare bytes followed by the payload."""
        align = math.lcm(self.suite.pad_block, 4)
        padlen = -(len(inner) + 2) % align
        trailer = bytes(range(1, padlen + 1)) + bytes((padlen, self.next_header))
        if headroom:
            return bytearray(headroom) + inner + trailer
        return bytes(inner) + trailer

    def protect(self, inner: bytes) -> bytes:
        if self.direction != "protect":
            raise ValueError("this SA is the unprotecting end")
        if self.tx_sequence >= ESP_SEQ_MAX:
            raise SequenceExhausted(f"SPI 0x{self.spi:08x} used all 2^32-1 sequence numbers")
        seq = self.tx_sequence + 1
        if self.suite.is_gmac:
            frame = self.pad(inner, GMAC_HEADROOM)
            iv, body, icv = self.seal(seq, memoryview(frame)[GMAC_HEADROOM:], frame=frame)
        else:
            iv, body, icv = self.seal(seq, self.pad(inner))
        self.tx_sequence = seq
        if self.ops is not None:
            self.ops["esp"] += 1
        return b"".join((wire._ESP.pack(self.spi, seq), iv, body, icv))

    def unprotect(self, data: bytes) -> bytes:
        if self.direction != "unprotect":
            raise ValueError("this SA is the protecting end")
        packet = wire.decode_esp(data, self.suite)
        if packet.spi != self.spi:
            raise UnknownSpi(f"no SA for SPI 0x{packet.spi:08x}")
        if packet.sequence == 0:
            raise ReplayError("ESP sequence number 0 is never sent")
        self.window.check(packet.sequence)
        plaintext = self.open(packet)
        inner = self._strip_trailer(plaintext)
        self.window.update(packet.sequence)
        if self.ops is not None:
            self.ops["esp"] += 1
        return inner

    def _strip_trailer(self, plaintext: bytes) -> bytes:
        if len(plaintext) < 2:
            raise PaddingError("ESP payload too short for its trailer")
        padlen, next_header = plaintext[-2], plaintext[-1]
        if padlen > len(plaintext) - 2 or next_header != self.next_header:
            raise PaddingError("bad ESP trailer")
        end = len(plaintext) - 2 - padlen
        if plaintext[end:-2] != bytes(range(1, padlen + 1)):
            raise PaddingError("bad ESP padding bytes")
        return plaintext[:end]

    def state(self):
        return self.tx_sequence, self.window.state()


class ProvisioningSession:
    """Hands out SPIs that are unique across every SA provisioned through it."""

    def __init__(self, first_spi: int = 0x1000):
        self._next = itertools.count(first_spi)
        self.used: set[int] = set()

    def claim(self, spi: Optional[int] = None) -> int:
        if spi is None:
            spi = next(s for s in self._next if s not in self.used)
        if not 0 < spi <= 0xFFFFFFFF:
            raise ValueError(f"SPI {spi} outside 1..2^32-1")
        if spi in self.used:
            raise ValueError(f"SPI 0x{spi:08x} already provisioned in this session")
        self.used.add(spi)
        return spi


def sa_provision(suite, enc_key: bytes, auth_key: bytes = b"", spi: Optional[int] = None,
                 session: Optional[ProvisioningSession] = None):
    """Create the (protect, unprotect) SA pair for one tunnel direction.

    Keys are installed on both ends directly; no handshake traffic exists.
    """
    if session is not None:
        spi = session.claim(spi)
    elif spi is None:
        raise ValueError("pass an SPI or a ProvisioningSession to allocate one")
    tx = SecurityAssociation(spi, suite, bytes(enc_key), bytes(auth_key), "protect")
    rx = SecurityAssociation(spi, suite, bytes(enc_key), bytes(auth_key), "unprotect")
    return tx, rx


def esp_protect(sa: SecurityAssociation, inner_packet: bytes) -> bytes:
    return sa.protect(inner_packet)


def esp_unprotect(sa: SecurityAssociation, data: bytes) -> bytes:
    return sa.unprotect(data)


# -- DTLS 1.2 record protection ----------------------------------------------------

class DtlsEndpoint:
    """Record-layer half of a pre-keyed DTLS 1.2 AES-128-GCM association.

    The per-record nonce is salt | epoch | sequence. Because epoch and sequence
    are already in the record header, no explicit nonce is carried in the body.
    """

    suite = DTLS_AES_GCM_128

    def __init__(self, write_key: bytes, write_salt: bytes, read_key: bytes, read_salt: bytes,
                 epoch: int = 1, ops: Optional[Counter] = None):
        for name, key in (("write_key", write_key), ("read_key", read_key)):
            if len(key) != 16:
                raise KeyLengthError(f"{name} must be 128 bits, got {8 * len(key)}")
        for name, salt in (("write_salt", write_salt), ("read_salt", read_salt)):
            if len(salt) != 4:
                raise KeyLengthError(f"{name} must be 4 bytes, got {len(salt)}")
        self.write_key, self.write_salt = bytes(write_key), bytes(write_salt)
        self.read_key, self.read_salt = bytes(read_key), bytes(read_salt)
        self.epoch = epoch
        self.next_sequence = 0
        self.window = ReplayWindow()
        self.ops = ops

    @staticmethod
    def _seq_num(epoch: int, sequence: int) -> bytes:
        return epoch.to_bytes(2, "big") + sequence.to_bytes(6, "big")

    def protect(self, message: bytes,
                content_type: int = wire.CONTENT_APPLICATION_DATA) -> bytes:
        if self.next_sequence > DTLS_SEQ_MAX:
            raise SequenceExhausted("DTLS sequence space exhausted for this epoch")
        if len(message) > wire.DTLS_MAX_PLAINTEXT:
            raise EncodingError(f"{len(message)}-byte message exceeds the "
                                f"{wire.DTLS_MAX_PLAINTEXT}-byte DTLS record limit")
        seq = self.next_sequence
        seq_num = self._seq_num(self.epoch, seq)
        aad = seq_num + bytes((content_type,)) + wire.DTLS_1_2.to_bytes(2, "big") \
            + len(message).to_bytes(2, "big")
        ct, tag = aead_seal(self.suite, self.write_key, self.write_salt + seq_num, aad, message)
        record = wire.DtlsRecord(content_type, self.epoch, seq, ct + tag)
        self.next_sequence = seq + 1
        if self.ops is not None:
            self.ops["dtls"] += 1
        return wire.encode_dtls_record(record)

    def unprotect(self, data: bytes) -> bytes:
        record = wire.decode_dtls_record(data)
        if record.epoch < self.epoch:
            raise ReplayError(f"record from stale epoch {record.epoch}")
        if record.epoch > self.epoch:
            raise AuthenticationError(f"no keys for epoch {record.epoch}")
        if len(record.body) < self.suite.tag_len:
            raise MalformedPacket("DTLS record body shorter than the GCM tag")
        # DTLS sequence numbers start at 0; the window is keyed by seq + 1
        self.window.check(record.sequence + 1)
        seq_num = self._seq_num(record.epoch, record.sequence)
        plain_len = len(record.body) - self.suite.tag_len
        aad = seq_num + bytes((record.content_type,)) + wire.DTLS_1_2.to_bytes(2, "big") \
            + plain_len.to_bytes(2, "big")
        message = aead_open(self.suite, self.read_key, self.read_salt + seq_num, aad,
                            record.body[:plain_len], record.body[plain_len:])
        self.window.update(record.sequence + 1)
        if self.ops is not None:
            self.ops["dtls"] += 1
        return message

    def state(self):
        return self.next_sequence, self.window.state()


def dtls_provision(client_write_key: bytes, server_write_key: bytes,
                   client_write_salt: bytes, server_write_salt: bytes, epoch: int = 1):
    """Return (client, server) endpoints sharing pre-provisioned record keys."""
    client = DtlsEndpoint(client_write_key, client_write_salt, server_write_key,
                          server_write_salt, epoch)
    server = DtlsEndpoint(server_write_key, server_write_salt, client_write_key,
                          client_write_salt, epoch)
    return client, server


def dtls_protect(endpoint: DtlsEndpoint, message: bytes) -> bytes:
    return endpoint.protect(message)


def dtls_unprotect(endpoint: DtlsEndpoint, data: bytes) -> bytes:
    return endpoint.unprotect(data)


# -- PDCP -------------------------------------------------------------------------

PDCP_WINDOW = 1 << (wire.PDCP_SN_BITS - 1)
UPLINK, DOWNLINK = 0, 1


class PdcpEntity:
    """One end of a PDCP data radio bearer (18-bit SN).

    Protection runs MAC-then-encrypt: NIA2 over header and SDU, MAC-I appended,
    then NEA2 over SDU and MAC-I. Delivery is assumed in order, so any COUNT
    below the next expected one is a duplicate and rejected.
    """

    def __init__(self, bearer: int, integrity_key: bytes = b"", ciphering_key: bytes = b"",
                 integrity_enabled: bool = True, ciphering_enabled: bool = True,
                 tx_direction: int = UPLINK, ops: Optional[Counter] = None):
        if ciphering_enabled and not integrity_enabled:
            raise ValueError("ciphering without integrity protection is not offered")
        if not 0 <= bearer < 32:
            raise ValueError(f"bearer {bearer} is not a 5-bit id")
        if integrity_enabled and len(integrity_key) != 16:
            raise KeyLengthError("NIA2 key must be 128 bits")
        if ciphering_enabled and len(ciphering_key) != 16:
            raise KeyLengthError("NEA2 key must be 128 bits")
        self.bearer = bearer
        self.integrity_key = bytes(integrity_key)
        self.ciphering_key = bytes(ciphering_key)
        self.integrity_enabled = integrity_enabled
        self.ciphering_enabled = ciphering_enabled
        self.tx_direction = tx_direction
        self.rx_direction = 1 - tx_direction
        self.tx_count = 0
        self.rx_count = 0
        self.ops = ops

    def _inputs(self, count: int, direction: int, key: bytes) -> UuSecurityInputs:
        return UuSecurityInputs(count, self.bearer, direction, key)

    def protect_count(self, count: int, sdu: bytes, out=None) -> bytes:
        """MAC-then-encrypt ``sdu`` at an explicit COUNT; no state change.

        With ``out`` (at least len(sdu) + 23 bytes) the PDU is written there and a
        view is returned, so large SDUs need no fresh allocation.
        """
        header = wire.encode_pdcp_header(count & (wire.PDCP_SN_MOD - 1))
        if not self.integrity_enabled:
            return header + bytes(sdu)
        mac = nia2_mac(self._inputs(count, self.tx_direction, self.integrity_key), sdu,
                       prefix=header)
        if out is not None:
            view = memoryview(out)
            view[:len(header)] = header
            n = len(header) + len(sdu) + len(mac)
            if self.ciphering_enabled:
                nea2_crypt_into(self._inputs(count, self.tx_direction, self.ciphering_key),
                                (sdu, mac), view[len(header):])
            else:
                view[len(header):n - len(mac)] = sdu
                view[n - len(mac):n] = mac
            return view[:n]
        body = b"".join((sdu, mac))
        if self.ciphering_enabled:
            body = nea2_crypt(self._inputs(count, self.tx_direction, self.ciphering_key), body)
        return b"".join((header, body))

    def protect(self, sdu: bytes) -> bytes:
        if self.tx_count >= PDCP_COUNT_LIMIT:
            raise SequenceExhausted("PDCP COUNT exhausted")
        pdu = self.protect_count(self.tx_count, sdu)
        self.tx_count += 1
        if self.ops is not None and self.integrity_enabled:
            self.ops["nia2"] += 1
            if self.ciphering_enabled:
                self.ops["nea2"] += 1
        return pdu

    def _rx_count_for(self, sn: int) -> int:
        deliv_sn = self.rx_count & (wire.PDCP_SN_MOD - 1)
        hfn = self.rx_count >> wire.PDCP_SN_BITS
        if sn < deliv_sn - PDCP_WINDOW:
            hfn += 1
        elif sn >= deliv_sn + PDCP_WINDOW:
            hfn -= 1
        if hfn < 0:
            raise ReplayError(f"SN {sn} precedes the first COUNT")
        return (hfn << wire.PDCP_SN_BITS) | sn

    def unprotect(self, pdu: bytes) -> bytes:
        sn = wire.decode_pdcp_header(pdu)
        if self.integrity_enabled and len(pdu) < wire.PDCP_HEADER_LEN + wire.PDCP_MAC_LEN:
            raise MalformedPacket("PDCP PDU too short to carry MAC-I")
        count = self._rx_count_for(sn)
        if count < self.rx_count:
            raise ReplayError(f"COUNT {count} already delivered")
        if count >= PDCP_COUNT_LIMIT:
            raise SequenceExhausted("PDCP COUNT exhausted")
        header, body = bytes(pdu[:wire.PDCP_HEADER_LEN]), bytes(pdu[wire.PDCP_HEADER_LEN:])
        if self.integrity_enabled:
            if self.ciphering_enabled:
                body = nea2_crypt(self._inputs(count, self.rx_direction, self.ciphering_key), body)
            sdu, mac = body[:-wire.PDCP_MAC_LEN], body[-wire.PDCP_MAC_LEN:]
            expected = nia2_mac(self._inputs(count, self.rx_direction, self.integrity_key),
                                sdu, prefix=header)
            if expected != mac:
                raise IntegrityError(f"MAC-I mismatch at COUNT {count}")
        else:
            sdu = body
        self.rx_count = count + 1
        if self.ops is not None and self.integrity_enabled:
            self.ops["nia2"] += 1
            if self.ciphering_enabled:
                self.ops["nea2"] += 1
        return sdu

    def state(self):
        return self.tx_count, self.rx_count


def pdcp_provision(bearer: int, integrity_key: bytes = b"", ciphering_key: bytes = b"",
                   integrity_enabled: bool = True, ciphering_enabled: bool = True):
    """Return the (UE, network) entity pair for one bearer."""
    ue = PdcpEntity(bearer, integrity_key, ciphering_key, integrity_enabled,
                    ciphering_enabled, UPLINK)
    net = PdcpEntity(bearer, integrity_key, ciphering_key, integrity_enabled,
                     ciphering_enabled, DOWNLINK)
    return ue, net


def pdcp_protect(entity: PdcpEntity, sdu: bytes) -> bytes:
    return entity.protect(sdu)


def pdcp_unprotect(entity: PdcpEntity, pdu: bytes) -> bytes:
    return entity.unprotect(pdu)


# -- channel adapters used by the topology -------------------------------------------

class PlainChannel:
    kind = "none"

    def protect(self, data: bytes) -> bytes:
        return data

    def unprotect(self, data: bytes) -> bytes:
        return data

    def state(self):
        return ()


class EspChannel:
    kind = "esp"

    def __init__(self, tx: SecurityAssociation, rx: SecurityAssociation):
        self.tx, self.rx = tx, rx

    def protect(self, data: bytes) -> bytes:
        return self.tx.protect(data)

    def unprotect(self, data: bytes) -> bytes:
        return self.rx.unprotect(data)

    def bind(self, ops: Counter) -> None:
        self.tx.ops = self.rx.ops = ops

    def state(self):
        return self.tx.state(), self.rx.state()


class DtlsChannel:
    kind = "dtls"

    def __init__(self, endpoint: DtlsEndpoint):
        self.endpoint = endpoint

    def protect(self, data: bytes) -> bytes:
        return self.endpoint.protect(data)

    def unprotect(self, data: bytes) -> bytes:
        return self.endpoint.unprotect(data)

    def bind(self, ops: Counter) -> None:
        self.endpoint.ops = ops

    def state(self):
        return self.endpoint.state()
