# Per-thread cached AES contexts. OpenSSL context setup costs ~10 us, more than
# the AES work on a 1 KiB packet, so CBC and ECB contexts are created once per
# key and re-chained by hand instead of re-initialised per call.

from __future__ import annotations

import threading

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

BLOCK = 16
_SMALL = 1 << 14
_local = threading.local()


def _cache() -> dict:
    c = getattr(_local, "ctx", None)
    if c is None:
        c = _local.ctx = {}
    return c


def _xor(a: bytes, b: bytes) -> bytes:
    n = len(a)
    return (int.from_bytes(a, "big") ^ int.from_bytes(b[:n], "big")).to_bytes(n, "big")


def _ecb(key: bytes):
    c = _cache()
    ctx = c.get(("ecb", key))
    if ctx is None:
        ctx = c[("ecb", key)] = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return ctx


def ecb_encrypt(key: bytes, data: bytes) -> bytes:
    return _ecb(key).update(data)


class _Chain:
    """A never-finalised CBC context plus the last block it emitted or consumed."""

    def __init__(self, ctx):
        self.ctx = ctx
        self.last = bytes(BLOCK)


def _chain(kind: str, key: bytes) -> _Chain:
    c = _cache()
    ch = c.get((kind, key))
    if ch is None:
        mode = modes.CBC(bytes(BLOCK))
        cipher = Cipher(algorithms.AES(key), mode)
        ch = c[(kind, key)] = _Chain(cipher.encryptor() if kind == "cbc-e" else cipher.decryptor())
    return ch


def cbc_encrypt(key: bytes, iv: bytes, data, out=None):
    """AES-CBC over block-aligned ``data``. With ``out``, writes there and returns a view."""
    n = len(data)
    if n == 0:
        return b"" if out is None else memoryview(out)[:0]
    ch = _chain("cbc-e", key)
    view = memoryview(data)
    # context chains from ch.last; substitute our IV by pre-whitening block 1
    first = _xor(_xor(bytes(view[:BLOCK]), ch.last), iv)
    if out is None:
        res = ch.ctx.update(first) + (ch.ctx.update(view[BLOCK:]) if n > BLOCK else b"")
        ch.last = res[-BLOCK:]
        return res
    ch.ctx.update_into(first, out)
    if n > BLOCK:
        ch.ctx.update_into(view[BLOCK:], memoryview(out)[BLOCK:])
    res = memoryview(out)[:n]
    ch.last = bytes(res[-BLOCK:])
    return res


def cbc_decrypt(key: bytes, iv: bytes, data: bytes) -> bytes:
    n = len(data)
    if n == 0:
        return b""
    ch = _chain("cbc-d", key)
    res = ch.ctx.update(bytes(data))
    # first block came out XORed with the context's previous ciphertext, not our IV
    fixed = _xor(_xor(res[:BLOCK], ch.last), iv)
    ch.last = bytes(data[-BLOCK:])
    return fixed + res[BLOCK:]


def cbc_mac(key: bytes, prefix, last: bytes) -> bytes:
    """Final CBC-MAC block over ``prefix`` followed by block ``last``.

    ``prefix`` is one block-aligned buffer or a tuple of them, MACed in order.
    """
    ch = _chain("cbc-e", key)
    chunks = [memoryview(c) for c in (prefix if isinstance(prefix, tuple) else (prefix,))]
    chunks = [c for c in chunks if len(c)]
    if not chunks:
        tag = ch.ctx.update(_xor(last, ch.last))
        ch.last = tag
        return tag
    # the context chains from ch.last; cancel that on the very first block
    ch.ctx.update(_xor(bytes(chunks[0][:BLOCK]), ch.last))
    chunks[0] = chunks[0][BLOCK:]
    scratch = getattr(_local, "scratch", None)
    if scratch is None:
        scratch = _local.scratch = bytearray((1 << 16) + BLOCK)
    step = 1 << 16
    for view in chunks:
        for off in range(0, len(view), step):
            ch.ctx.update_into(view[off:off + step], scratch)
    tag = ch.ctx.update(last)
    ch.last = tag
    return tag


_TEMPLATE = np.zeros((_SMALL // BLOCK + 1, BLOCK), np.uint8)
_TEMPLATE[:, 8:] = np.arange(len(_TEMPLATE), dtype=">u8").view(np.uint8).reshape(-1, 8)


def ctr_xor(key: bytes, counter_block: bytes, data) -> bytes:
    """AES-CTR with a 128-bit big-endian counter starting at ``counter_block``."""
    n = len(data)
    nblocks = -(-n // BLOCK)
    if n > _SMALL or counter_block[8:] != bytes(8):
        # CTR keeps no partial block, so finalize() would only add an empty copy
        return Cipher(algorithms.AES(key), modes.CTR(counter_block)).encryptor().update(data)
    blocks = _TEMPLATE[:nblocks].copy()
    blocks[:, :8] = np.frombuffer(counter_block[:8], np.uint8)
    stream = np.frombuffer(ecb_encrypt(key, blocks.data), np.uint8, count=n)
    return np.bitwise_xor(np.frombuffer(data, np.uint8), stream).tobytes()


def ctr_into(key: bytes, counter_block: bytes, parts, out) -> memoryview:
    """AES-CTR over the concatenation of ``parts`` written into ``out``.

    ``out`` needs one spare block beyond the total length (OpenSSL's rule for
    update_into). Returns a view of the written bytes.
    """
    total = sum(len(p) for p in parts)
    view = memoryview(out)
    if total <= _SMALL and counter_block[8:] == bytes(8):
        view[:total] = ctr_xor(key, counter_block, b"".join(parts))
        return view[:total]
    enc = Cipher(algorithms.AES(key), modes.CTR(counter_block)).encryptor()
    off = 0
    for p in parts:
        if len(p):
            enc.update_into(p, view[off:])
            off += len(p)
    return view[:total]
