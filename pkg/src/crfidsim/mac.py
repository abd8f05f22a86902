"""AES-128 CMAC and the single-block payload cipher.

The CMAC construction (subkey derivation, last-block masking, CBC
chaining) is implemented here directly so its structure is visible and
testable; only the AES block primitive comes from `cryptography`.
"""

from __future__ import annotations

from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

BLOCK = 16
_MASK128 = (1 << 128) - 1
_RB = 0x87


@dataclass(frozen=True)
class MacTag:
    tag: bytes

    def __post_init__(self) -> None:
        if len(self.tag) != BLOCK:
            raise ValueError("tag must be 128 bits")

    def hex(self) -> str:
        return self.tag.hex()


def _check_key(key: bytes) -> None:
    if len(key) != BLOCK:
        raise ValueError("key must be 128 bits")


def _aes_encrypt_block(key: bytes, block: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def _aes_decrypt_block(key: bytes, block: bytes) -> bytes:
    dec = Cipher(algorithms.AES(key), modes.ECB()).decryptor()
    return dec.update(block) + dec.finalize()


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def _dbl(block: bytes) -> bytes:
    """Doubling in GF(2^128) with the CMAC reduction constant."""
    v = int.from_bytes(block, "big") << 1
    if v >> 128:
        v ^= _RB
    return (v & _MASK128).to_bytes(BLOCK, "big")


def _subkeys(key: bytes) -> tuple[bytes, bytes]:
    l = _aes_encrypt_block(key, bytes(BLOCK))
    k1 = _dbl(l)
    return k1, _dbl(k1)


def cmac(key: bytes, message: bytes) -> MacTag:
    """CMAC-AES128 over a message of any length, including empty."""
    _check_key(key)
    k1, k2 = _subkeys(key)
    if message and len(message) % BLOCK == 0:
        head, last = message[:-BLOCK], _xor(message[-BLOCK:], k1)
    else:
        tail = message[len(message) - len(message) % BLOCK :] if message else b""
        padded = tail + b"\x80" + bytes(BLOCK - len(tail) - 1)
        head, last = message[: len(message) - len(tail)], _xor(padded, k2)
    x = bytes(BLOCK)
    for i in range(0, len(head), BLOCK):
        x = _aes_encrypt_block(key, _xor(x, head[i : i + BLOCK]))
    return MacTag(_aes_encrypt_block(key, _xor(x, last)))


def _nonce_bytes(nonce: int | bytes) -> bytes:
    if isinstance(nonce, int):
        if not 0 <= nonce < (1 << 128):
            raise ValueError("nonce out of 128-bit range")
        return nonce.to_bytes(BLOCK, "big")
    if len(nonce) != BLOCK:
        raise ValueError("nonce must be 128 bits")
    return bytes(nonce)


def mac_firmware(firmware: bytes, nonce: int | bytes, key: bytes) -> MacTag:
    """Tag over firmware with the nonce appended after the image bytes."""
    return cmac(key, firmware + _nonce_bytes(nonce))


def sc_encrypt(payload: bytes, key: bytes) -> bytes:
    """Encrypt exactly one 128-bit block under the session key."""
    _check_key(key)
    if len(payload) != BLOCK:
        raise ValueError("payload must be one 128-bit block")
    return _aes_encrypt_block(key, payload)


def sc_decrypt(payload: bytes, key: bytes) -> bytes:
    _check_key(key)
    if len(payload) != BLOCK:
        raise ValueError("payload must be one 128-bit block")
    return _aes_decrypt_block(key, payload)
