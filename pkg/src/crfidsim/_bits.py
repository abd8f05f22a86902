"""Shared bit-vector plumbing.

Two packing conventions coexist in this codebase and are kept explicit in
function names:

* SRAM bytes unpack LSB-first (bit 0 of a byte is the first response bit).
* Protocol material (keys, nonces, helper data, tags) packs MSB-first.
"""

from __future__ import annotations

from typing import Iterable, Sequence


def bits_from_byte_lsb(byte: int) -> tuple[int, ...]:
    return tuple((byte >> i) & 1 for i in range(8))


def byte_from_bits_lsb(bits: Sequence[int]) -> int:
    if len(bits) != 8:
        raise ValueError("need exactly 8 bits")
    return sum((b & 1) << i for i, b in enumerate(bits))


def pack_msb(bits: Sequence[int]) -> bytes:
    """Pack a bit sequence into bytes, first bit into the MSB of byte 0.

    Length must be a multiple of 8.
    """
    if len(bits) % 8:
        raise ValueError("bit length not a multiple of 8")
    out = bytearray(len(bits) // 8)
    for i, b in enumerate(bits):
        if b & 1:
            out[i >> 3] |= 0x80 >> (i & 7)
    return bytes(out)


def unpack_msb(data: bytes, nbits: int | None = None) -> tuple[int, ...]:
    nbits = 8 * len(data) if nbits is None else nbits
    if nbits > 8 * len(data):
        raise ValueError("asked for more bits than supplied")
    return tuple((data[i >> 3] >> (7 - (i & 7))) & 1 for i in range(nbits))


def int_from_bits(bits: Iterable[int]) -> int:
    """Coefficient-ascending: bits[i] is the coefficient of x^i (bit i)."""
    v = 0
    for i, b in enumerate(bits):
        if b & 1:
            v |= 1 << i
    return v


def bits_from_int(value: int, length: int) -> tuple[int, ...]:
    return tuple((value >> i) & 1 for i in range(length))


def hamming_distance(a: Sequence[int], b: Sequence[int]) -> int:
    if len(a) != len(b):
        raise ValueError("length mismatch")
    return sum(1 for x, y in zip(a, b) if (x ^ y) & 1)


def xor_bits(a: Sequence[int], b: Sequence[int]) -> tuple[int, ...]:
    if len(a) != len(b):
        raise ValueError("length mismatch")
    return tuple((x ^ y) & 1 for x, y in zip(a, b))
