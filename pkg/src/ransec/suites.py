"""Protection algorithms and the catalog of suites the emulator can put on a link.

Block-cipher work is delegated to OpenSSL through ``cryptography``; the 3GPP
input-block layouts for NEA2/NIA2 and the bit-granular CMAC are built here.
"""

from __future__ import annotations

import hmac as _hmac
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives import hmac as crypto_hmac
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import _aes
from .errors import AuthenticationError, KeyLengthError, PaddingError, UnknownSuite

AES_BLOCK = 16


@dataclass(frozen=True)
class SecuritySuite:
    """One concrete protection configuration.

    ``key_len`` is the AES key size in bits. ``salt_len`` extra bytes of keying
    material follow the AES key for GCM/GMAC (the 4-byte nonce salt).
    ``pad_block`` is the ESP payload alignment the suite requires.
    """

    id: str
    kind: str  # "esp" | "dtls" | "uu"
    cipher: str
    integrity: str
    key_len: int
    iv_len: int
    tag_len: int
    salt_len: int = 0
    auth_key_len: int = 0
    pad_block: int = 4

    def __post_init__(self):
        if self.cipher.startswith("AES-GCM") and self.integrity != "GCM-builtin":
            raise ValueError(f"{self.id}: GCM suites use the built-in GCM tag")
        if self.cipher == "NULL" and not self.integrity.startswith(("AES-GMAC", "AES-CMAC")):
            raise ValueError(f"{self.id}: NULL cipher needs GMAC or CMAC integrity")
        if self.tag_len not in (4, 16):
            raise ValueError(f"{self.id}: tag length {self.tag_len} not in (4, 16)")

    @property
    def key_bytes(self) -> int:
        """Length of the encryption keying material (AES key plus salt)."""
        return self.key_len // 8 + self.salt_len

    @property
    def is_gcm(self) -> bool:
        return self.cipher.startswith("AES-GCM")

    @property
    def is_gmac(self) -> bool:
        return self.integrity.startswith("AES-GMAC")

    @property
    def is_cbc(self) -> bool:
        return self.cipher.startswith("AES-CBC")


AES_CBC_128_HMAC = SecuritySuite("AES-CBC-128+HMAC-SHA256-128", "esp", "AES-CBC-128",
                                 "HMAC-SHA256-128", 128, 16, 16, auth_key_len=32, pad_block=16)
AES_CBC_256_HMAC = SecuritySuite("AES-CBC-256+HMAC-SHA256-128", "esp", "AES-CBC-256",
                                 "HMAC-SHA256-128", 256, 16, 16, auth_key_len=32, pad_block=16)
AES_GCM_128 = SecuritySuite("AES-GCM-128", "esp", "AES-GCM-128", "GCM-builtin", 128, 8, 16,
                            salt_len=4)
AES_GCM_256 = SecuritySuite("AES-GCM-256", "esp", "AES-GCM-256", "GCM-builtin", 256, 8, 16,
                            salt_len=4)
NULL_GMAC_128 = SecuritySuite("NULL+AES-GMAC-128", "esp", "NULL", "AES-GMAC-128", 128, 8, 16,
                              salt_len=4)
NULL_GMAC_256 = SecuritySuite("NULL+AES-GMAC-256", "esp", "NULL", "AES-GMAC-256", 256, 8, 16,
                              salt_len=4)
DTLS_AES_GCM_128 = SecuritySuite("DTLS-1.2-AES-GCM-128", "dtls", "AES-GCM-128", "GCM-builtin",
                                 128, 0, 16, salt_len=4, pad_block=1)
UU_NIA2_NEA2 = SecuritySuite("NIA2+NEA2", "uu", "AES-CTR-128", "AES-CMAC-32bit", 128, 0, 4,
                             auth_key_len=16, pad_block=1)

ESP_SUITES = (AES_CBC_128_HMAC, AES_CBC_256_HMAC, AES_GCM_128, AES_GCM_256,
              NULL_GMAC_128, NULL_GMAC_256)
_CATALOG = ESP_SUITES + (DTLS_AES_GCM_128, UU_NIA2_NEA2)
_BY_NAME = {s.id: s for s in _CATALOG}


def suite_catalog() -> list[SecuritySuite]:
    return list(_CATALOG)


def suite_names() -> list[str]:
    return [s.id for s in _CATALOG]


def get_suite(name) -> SecuritySuite:
    if isinstance(name, SecuritySuite):
        return name
    try:
        return _BY_NAME[name]
    except KeyError:
        raise UnknownSuite(name, _BY_NAME) from None


# -- 3GPP option 2: NEA2 (AES-CTR) and NIA2 (AES-CMAC) -----------------------

@dataclass(frozen=True)
class UuSecurityInputs:
    count: int
    bearer: int
    direction: int  # 0 uplink, 1 downlink
    key: bytes

    def __post_init__(self):
        if not 0 <= self.count < 1 << 32:
            raise ValueError(f"COUNT {self.count} is not a 32-bit value")
        if not 0 <= self.bearer < 32:
            raise ValueError(f"BEARER {self.bearer} is not a 5-bit value")
        if self.direction not in (0, 1):
            raise ValueError(f"DIRECTION must be 0 or 1, got {self.direction}")
        if len(self.key) != 16:
            raise KeyLengthError(f"option-2 keys are 128 bits, got {8 * len(self.key)}")

    def block(self) -> bytes:
        """COUNT | BEARER | DIRECTION | 0^26, the 64-bit prefix both algorithms share."""
        return self.count.to_bytes(4, "big") + bytes(
            ((self.bearer << 3) | (self.direction << 2), 0, 0, 0))


def _bit_length(data: bytes, length_bits: Optional[int]) -> int:
    if length_bits is None:
        return 8 * len(data)
    if not 0 <= length_bits <= 8 * len(data):
        raise ValueError(f"length {length_bits} bits exceeds {len(data)}-byte buffer")
    return length_bits


def _mask_tail(data: bytes, nbits: int) -> bytes:
    nbytes = (nbits + 7) // 8
    out = bytes(data[:nbytes])
    spare = 8 * nbytes - nbits
    if spare:
        out = out[:-1] + bytes((out[-1] & (0xFF << spare) & 0xFF,))
    return out


def nea2_crypt(inputs: UuSecurityInputs, data: bytes, length_bits: Optional[int] = None) -> bytes:
    """128-NEA2 keystream XOR. Bits past ``length_bits`` in the last byte come out zero."""
    nbits = _bit_length(data, length_bits)
    counter_block = inputs.block() + bytes(8)
    if nbits == 8 * len(data):
        return _aes.ctr_xor(inputs.key, counter_block, data)
    return _mask_tail(_aes.ctr_xor(inputs.key, counter_block, _mask_tail(data, nbits)), nbits)


@lru_cache(maxsize=512)
def _cmac_subkeys(key: bytes) -> tuple[bytes, bytes]:
    subkey = int.from_bytes(_aes.ecb_encrypt(key, bytes(AES_BLOCK)), "big")
    keys = []
    for _ in range(2):
        carry = subkey >> 127
        subkey = ((subkey << 1) & ((1 << 128) - 1)) ^ (0x87 if carry else 0)
        keys.append(subkey.to_bytes(AES_BLOCK, "big"))
    return keys[0], keys[1]


def aes_cmac(key: bytes, message: bytes, length_bits: Optional[int] = None) -> bytes:
    """AES-CMAC over the first ``length_bits`` bits of ``message``; 16-byte tag."""
    nbits = _bit_length(message, length_bits)
    k1, k2 = _cmac_subkeys(bytes(key))
    if nbits and nbits % 128 == 0:
        last_start = nbits // 8 - AES_BLOCK
        last = bytes(message[last_start:nbits // 8])
        subkey = k1
    else:
        last_start = (nbits // 128) * AES_BLOCK
        tail = _mask_tail(message[last_start:], nbits - 8 * last_start)
        bit = nbits % 8
        if bit:
            last = tail[:-1] + bytes((tail[-1] | (0x80 >> bit),))
        else:
            last = tail + b"\x80"
        last = last.ljust(AES_BLOCK, b"\x00")
        subkey = k2
    last = (int.from_bytes(last, "big") ^ int.from_bytes(subkey, "big")).to_bytes(AES_BLOCK, "big")
    return _aes.cbc_mac(bytes(key), memoryview(message)[:last_start], last)


_CMAC_STREAM = 1 << 12  # above this NIA2 MACs the message in place instead of joining


def _cmac_aligned(key: bytes, head: bytes, body) -> bytes:
    """CMAC of ``head`` + ``body`` where ``head`` is block aligned and ``body`` non-empty."""
    k1, k2 = _cmac_subkeys(bytes(key))
    n = len(body)
    cut = n - (n % AES_BLOCK or AES_BLOCK)
    tail = bytes(body[cut:])
    if len(tail) == AES_BLOCK:
        last, subkey = tail, k1
    else:
        last, subkey = (tail + b"\x80").ljust(AES_BLOCK, b"\x00"), k2
    last = (int.from_bytes(last, "big") ^ int.from_bytes(subkey, "big")).to_bytes(AES_BLOCK, "big")
    return _aes.cbc_mac(bytes(key), (head, memoryview(body)[:cut]), last)


def nia2_mac(inputs: UuSecurityInputs, message: bytes, length_bits: Optional[int] = None,
             prefix: bytes = b"") -> bytes:
    """128-NIA2: the 32 most significant bits of CMAC(COUNT|BEARER|DIRECTION|0^26|MESSAGE).

    ``prefix`` is prepended to ``message`` (PDCP passes its header this way);
    ``length_bits`` then counts prefix and message together.
    """
    if length_bits is None:
        if len(message) > _CMAC_STREAM:
            # complete the first blocks from the message, then MAC the rest in place
            start = inputs.block() + bytes(prefix)
            k = -len(start) % AES_BLOCK
            return _cmac_aligned(inputs.key, start + bytes(message[:k]),
                                 memoryview(message)[k:])[:4]
        nbits = 8 * (len(prefix) + len(message))
        data = b"".join((inputs.block(), prefix, message))
    else:
        total = bytes(prefix) + bytes(message)
        nbits = _bit_length(total, length_bits)
        data = inputs.block() + total[:(nbits + 7) // 8]
    return aes_cmac(inputs.key, data, 64 + nbits)[:4]


def nea2_crypt_into(inputs: UuSecurityInputs, parts, out) -> memoryview:
    """NEA2 over the concatenation of ``parts`` (whole bytes), written into ``out``."""
    return _aes.ctr_into(inputs.key, inputs.block() + bytes(8), parts, out)


def _check_key(suite: SecuritySuite, key: bytes) -> None:
    if len(key) != suite.key_len // 8:
        raise KeyLengthError(f"{suite.id} needs a {suite.key_len}-bit key, got {8 * len(key)}")


@lru_cache(maxsize=512)
def _aesgcm(key: bytes) -> AESGCM:
    return AESGCM(key)


def aead_seal(suite: SecuritySuite, key: bytes, nonce: bytes, aad: bytes,
              plaintext: bytes, out=None) -> tuple[bytes, bytes]:
    """AES-GCM seal; returns (ciphertext, tag).

    ``out`` (at least ``len(plaintext) + 16`` bytes) receives ciphertext and tag,
    and the returned ciphertext is a view into it.
    """
    if not suite.is_gcm:
        raise ValueError(f"{suite.id} is not an AEAD suite")
    _check_key(suite, key)
    if out is not None:
        n = len(plaintext)
        view = memoryview(out)[:n + suite.tag_len]
        _aesgcm(bytes(key)).encrypt_into(nonce, plaintext, aad or None, view)
        return view[:n], bytes(view[n:])
    sealed = _aesgcm(bytes(key)).encrypt(nonce, plaintext, aad or None)
    return sealed[:-suite.tag_len], sealed[-suite.tag_len:]


def aead_open(suite: SecuritySuite, key: bytes, nonce: bytes, aad: bytes, ciphertext: bytes,
              tag: bytes) -> bytes:
    if not suite.is_gcm:
        raise ValueError(f"{suite.id} is not an AEAD suite")
    _check_key(suite, key)
    if len(tag) != suite.tag_len:
        raise AuthenticationError("tag has the wrong length")
    try:
        return _aesgcm(bytes(key)).decrypt(nonce, bytes(ciphertext) + bytes(tag), aad or None)
    except InvalidTag:
        raise AuthenticationError("AES-GCM tag mismatch") from None


# -- AES-CBC + HMAC-SHA-256-128 (encrypt-then-MAC) ------------------------------

def _hmac_icv(auth_key: bytes, tag_len: int, *parts) -> bytes:
    h = crypto_hmac.HMAC(auth_key, hashes.SHA256())
    for part in parts:
        h.update(part)
    return h.finalize()[:tag_len]


def cbc_hmac_protect(suite: SecuritySuite, enc_key: bytes, auth_key: bytes, iv: bytes,
                     plaintext: bytes, aad: bytes = b"", out=None) -> tuple[bytes, bytes]:
    """Encrypt a block-aligned plaintext, then HMAC ``aad | iv | ciphertext``.

    ``out`` optionally receives the ciphertext (at least ``len(plaintext) + 15`` bytes);
    the returned ciphertext is then a view into it.
    """
    if not suite.is_cbc:
        raise ValueError(f"{suite.id} is not a CBC suite")
    _check_key(suite, enc_key)
    if len(auth_key) != suite.auth_key_len:
        raise KeyLengthError(f"{suite.id} needs a {8 * suite.auth_key_len}-bit HMAC key")
    if len(plaintext) % AES_BLOCK:
        raise ValueError("CBC plaintext must be padded to the AES block size")
    ciphertext = _aes.cbc_encrypt(bytes(enc_key), bytes(iv), plaintext, out)
    return ciphertext, _hmac_icv(auth_key, suite.tag_len, aad, iv, ciphertext)


def cbc_hmac_unprotect(suite: SecuritySuite, enc_key: bytes, auth_key: bytes, iv: bytes,
                       ciphertext: bytes, icv: bytes, aad: bytes = b"") -> bytes:
    """Verify the ICV first, then decrypt. Returns the still-padded plaintext."""
    if not suite.is_cbc:
        raise ValueError(f"{suite.id} is not a CBC suite")
    _check_key(suite, enc_key)
    expected = _hmac_icv(auth_key, suite.tag_len, aad, iv, ciphertext)
    if not _hmac.compare_digest(expected, bytes(icv)):
        raise AuthenticationError("HMAC-SHA-256-128 ICV mismatch")
    if len(ciphertext) % AES_BLOCK:
        raise PaddingError("ciphertext is not a whole number of blocks")
    return _aes.cbc_decrypt(bytes(enc_key), bytes(iv), ciphertext)


# -- NULL encryption + AES-GMAC -------------------------------------------------

_GMAC_STREAM = 1 << 19


def _gmac_tag(key: bytes, nonce: bytes, aad: bytes, payload: bytes, joined=None) -> bytes:
    if joined is not None:
        return _aesgcm(bytes(key)).encrypt(nonce, b"", joined)
    if len(payload) <= _GMAC_STREAM:
        return _aesgcm(bytes(key)).encrypt(nonce, b"", b"".join((aad, payload)))
    # large payloads: stream the AAD rather than copying it into one buffer
    enc = Cipher(algorithms.AES(key), modes.GCM(nonce)).encryptor()
    if aad:
        enc.authenticate_additional_data(aad)
    enc.authenticate_additional_data(payload)
    enc.finalize()
    return enc.tag


def gmac_protect(suite: SecuritySuite, key: bytes, nonce: bytes, payload: bytes,
                 aad: bytes = b"", joined=None) -> tuple[bytes, bytes]:
    """Authenticate ``aad | payload`` without encrypting; payload passes through.

    ``joined``, when the caller already holds ``aad | payload`` in one buffer,
    is authenticated as is instead of copying the two together.
    """
    if not suite.is_gmac:
        raise ValueError(f"{suite.id} is not a GMAC suite")
    _check_key(suite, key)
    if joined is not None and len(joined) != len(aad) + len(payload):
        raise ValueError("joined buffer is not aad | payload")
    return payload, _gmac_tag(key, nonce, aad, payload, joined)


def gmac_verify(suite: SecuritySuite, key: bytes, nonce: bytes, payload: bytes, icv: bytes,
                aad: bytes = b"") -> bytes:
    if not suite.is_gmac:
        raise ValueError(f"{suite.id} is not a GMAC suite")
    _check_key(suite, key)
    if not _hmac.compare_digest(_gmac_tag(key, nonce, aad, payload), bytes(icv)):
        raise AuthenticationError("AES-GMAC ICV mismatch")
    return payload
