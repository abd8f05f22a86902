"""EPC Gen2 access-command framing over a bit-exact transport.

Everything a reader sends is one BlockWrite-coded frame:

    cmd 0xC7 | membank(2) | wordptr(EBV-8) | wordcount(8) |
    data(16*wordcount) | rn(16) | crc(16)

Security commands ride on reserved membank-0 word pointers: 0x03 is
key-setup (Authenticate), 0x7D wraps an encrypted write (SecureComm),
0x7E is the privilege drop (TagPrivilege). Anything else decodes as a
plain BlockWrite. The CRC is the Gen2 air-interface CRC-16 (polynomial
0x1021, preset 0xFFFF, transmitted complemented); a receiver recomputes
the register over frame-plus-crc and expects the constant residue.
"""

from __future__ import annotations

from dataclasses import dataclass

CMD_BLOCKWRITE = 0xC7
WORDPTR_AUTHENTICATE = 0x03
WORDPTR_SECURECOMM = 0x7D
WORDPTR_TAGPRIVILEGE = 0x7E
TAGPRIVILEGE_WORD = 0x0001
MAX_WORDS = 255
DOWNLOAD_WORDS = 4096

CRC_POLY = 0x1021
CRC_PRESET = 0xFFFF
CRC_RESIDUE = 0x1D0F


class BadCrcError(ValueError):
    pass


class UnknownDiscriminatorError(ValueError):
    pass


class WordPtrRangeError(ValueError):
    pass


class FrameFormatError(ValueError):
    """Structurally malformed frame (lengths disagree despite a good CRC)."""


@dataclass(frozen=True)
class BitString:
    """Immutable bit sequence; bit 0 is the first bit on the air (MSB side)."""

    value: int = 0
    length: int = 0

    def __post_init__(self) -> None:
        if self.length < 0 or self.value < 0 or self.value >> self.length:
            raise ValueError("value does not fit in length bits")

    def __len__(self) -> int:
        return self.length

    def concat(self, other: "BitString") -> "BitString":
        return BitString(self.value << other.length | other.value,
                         self.length + other.length)

    def field(self, start: int, nbits: int) -> int:
        if start < 0 or nbits < 0 or start + nbits > self.length:
            raise ValueError("field out of range")
        return (self.value >> (self.length - start - nbits)) & ((1 << nbits) - 1)

    def bit(self, i: int) -> int:
        return self.field(i, 1)

    def flip(self, i: int) -> "BitString":
        if not 0 <= i < self.length:
            raise ValueError("bit index out of range")
        return BitString(self.value ^ (1 << (self.length - 1 - i)), self.length)

    def to_bytes(self) -> bytes:
        """MSB-first packing; the last byte is zero-padded on the right."""
        pad = -self.length % 8
        return ((self.value << pad)).to_bytes((self.length + pad) // 8, "big")


def _bs(value: int, length: int) -> BitString:
    return BitString(value, length)


def _make_crc_table() -> list[int]:
    table = []
    for byte in range(256):
        reg = byte << 8
        for _ in range(8):
            reg = ((reg << 1) ^ CRC_POLY if reg & 0x8000 else reg << 1) & 0xFFFF
        table.append(reg)
    return table


_CRC_TABLE = _make_crc_table()


def _crc_register(bits: BitString) -> int:
    reg = CRC_PRESET
    nbytes, rem = divmod(bits.length, 8)
    v = bits.value >> rem
    for shift in range(8 * (nbytes - 1), -1, -8):
        byte = (v >> shift) & 0xFF
        reg = ((reg << 8) ^ _CRC_TABLE[((reg >> 8) ^ byte) & 0xFF]) & 0xFFFF
    for i in range(rem - 1, -1, -1):
        top = ((reg >> 15) ^ (bits.value >> i)) & 1
        reg = (reg << 1) & 0xFFFF
        if top:
            reg ^= CRC_POLY
    return reg


def crc16(bits: BitString) -> int:
    """Transmitted CRC value: the complemented register."""
    if bits.length == 0:
        raise ValueError("empty bit string")
    return _crc_register(bits) ^ 0xFFFF


def residue_ok(frame_bits: BitString) -> bool:
    return _crc_register(frame_bits) == CRC_RESIDUE


def ebv_encode(value: int) -> BitString:
    """Extension-bit vector: 7 value bits per byte, big-endian groups."""
    if value < 0:
        raise ValueError("EBV value must be non-negative")
    groups = [value & 0x7F]
    value >>= 7
    while value:
        groups.append(value & 0x7F)
        value >>= 7
    out = BitString()
    for i, g in enumerate(reversed(groups)):
        ext = 1 if i < len(groups) - 1 else 0
        out = out.concat(_bs(ext << 7 | g, 8))
    return out


def _ebv_decode(bits: BitString, pos: int) -> tuple[int, int]:
    value = 0
    for _ in range(5):
        if pos + 8 > bits.length:
            raise FrameFormatError("truncated EBV field")
        byte = bits.field(pos, 8)
        pos += 8
        value = value << 7 | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise FrameFormatError("EBV field too long")


# ------------------------------------------------------------ command views

@dataclass(frozen=True)
class BlockWrite:
    membank: int
    wordptr: int
    words: tuple[int, ...]


@dataclass(frozen=True)
class Authenticate:
    csi: int


@dataclass(frozen=True)
class SecureComm:
    inner_wordptr: int
    ciphertext: bytes


@dataclass(frozen=True)
class TagPrivilege:
    pass


CommandView = BlockWrite | Authenticate | SecureComm | TagPrivilege

_RESERVED_BANK0_PTRS = frozenset(
    {WORDPTR_AUTHENTICATE, WORDPTR_SECURECOMM, WORDPTR_TAGPRIVILEGE}
)


@dataclass(frozen=True)
class Gen2Frame:
    bits: BitString

    def to_hex(self) -> str:
        return " ".join(f"{b:02x}" for b in self.bits.to_bytes())


@dataclass(frozen=True)
class FrameFields:
    membank: int
    wordptr: int
    words: tuple[int, ...]
    rn: int
    crc: int


def _raw_fields(cmd: CommandView) -> tuple[int, int, tuple[int, ...]]:
    if isinstance(cmd, Authenticate):
        if not 0 <= cmd.csi <= 0xFF:
            raise ValueError("CSI must fit one byte")
        return 0, WORDPTR_AUTHENTICATE, (cmd.csi,)
    if isinstance(cmd, SecureComm):
        if not 0 <= cmd.inner_wordptr < DOWNLOAD_WORDS:
            raise WordPtrRangeError("inner wordptr outside the download area")
        if len(cmd.ciphertext) != 16:
            raise ValueError("ciphertext must be one 128-bit block")
        ct_words = tuple(
            int.from_bytes(cmd.ciphertext[i : i + 2], "big") for i in range(0, 16, 2)
        )
        return 0, WORDPTR_SECURECOMM, (cmd.inner_wordptr,) + ct_words
    if isinstance(cmd, TagPrivilege):
        return 0, WORDPTR_TAGPRIVILEGE, (TAGPRIVILEGE_WORD,)
    if isinstance(cmd, BlockWrite):
        if not 0 <= cmd.membank <= 3:
            raise ValueError("membank must be 0..3")
        if cmd.membank == 0 and cmd.wordptr in _RESERVED_BANK0_PTRS:
            raise WordPtrRangeError("reserved membank-0 wordptr")
        if cmd.wordptr < 0:
            raise WordPtrRangeError("wordptr must be non-negative")
        if not 1 <= len(cmd.words) <= MAX_WORDS:
            raise ValueError(f"word count must be 1..{MAX_WORDS}")
        if any(not 0 <= w <= 0xFFFF for w in cmd.words):
            raise ValueError("data words must be 16-bit")
        return cmd.membank, cmd.wordptr, tuple(cmd.words)
    raise TypeError(f"not a command view: {cmd!r}")


def encode(cmd: CommandView, rn: int) -> Gen2Frame:
    if not 0 <= rn <= 0xFFFF:
        raise ValueError("rn must be 16-bit")
    membank, wordptr, words = _raw_fields(cmd)
    body = _bs(CMD_BLOCKWRITE, 8).concat(_bs(membank, 2)).concat(ebv_encode(wordptr))
    body = body.concat(_bs(len(words), 8))
    for w in words:
        body = body.concat(_bs(w, 16))
    body = body.concat(_bs(rn, 16))
    return Gen2Frame(bits=body.concat(_bs(crc16(body), 16)))


def parse_fields(frame: Gen2Frame) -> FrameFields:
    """Field-level parse with CRC verification, before discrimination."""
    bits = frame.bits
    if bits.length < 8 + 2 + 8 + 8 + 16 + 16:
        raise FrameFormatError("frame too short")
    if not residue_ok(bits):
        raise BadCrcError("residue check failed")
    if bits.field(0, 8) != CMD_BLOCKWRITE:
        raise UnknownDiscriminatorError("unknown command code")
    membank = bits.field(8, 2)
    wordptr, pos = _ebv_decode(bits, 10)
    if pos + 8 > bits.length:
        raise FrameFormatError("frame too short")
    wordcount = bits.field(pos, 8)
    pos += 8
    if pos + 16 * wordcount + 32 != bits.length:
        raise FrameFormatError("wordcount disagrees with frame length")
    words = tuple(bits.field(pos + 16 * i, 16) for i in range(wordcount))
    pos += 16 * wordcount
    return FrameFields(
        membank=membank,
        wordptr=wordptr,
        words=words,
        rn=bits.field(pos, 16),
        crc=bits.field(pos + 16, 16),
    )


def decode(frame: Gen2Frame) -> CommandView:
    f = parse_fields(frame)
    if f.membank == 0 and f.wordptr == WORDPTR_AUTHENTICATE:
        if len(f.words) != 1 or f.words[0] > 0xFF:
            raise UnknownDiscriminatorError("malformed key-setup command")
        return Authenticate(csi=f.words[0])
    if f.membank == 0 and f.wordptr == WORDPTR_SECURECOMM:
        if len(f.words) != 9:
            raise UnknownDiscriminatorError("malformed encrypted-write wrapper")
        inner = f.words[0]
        if inner >= DOWNLOAD_WORDS:
            raise WordPtrRangeError("inner wordptr outside the download area")
        ct = b"".join(w.to_bytes(2, "big") for w in f.words[1:])
        return SecureComm(inner_wordptr=inner, ciphertext=ct)
    if f.membank == 0 and f.wordptr == WORDPTR_TAGPRIVILEGE:
        if f.words != (TAGPRIVILEGE_WORD,):
            raise UnknownDiscriminatorError("malformed privilege command")
        return TagPrivilege()
    if len(f.words) < 1:
        raise FrameFormatError("empty write")
    return BlockWrite(membank=f.membank, wordptr=f.wordptr, words=f.words)


def reader_split(cmd: BlockWrite) -> list[BlockWrite]:
    """Emulate readers that only pass single-word BlockWrites."""
    if not isinstance(cmd, BlockWrite):
        raise TypeError("only plain BlockWrite commands are split")
    if len(cmd.words) < 1:
        raise ValueError("nothing to split")
    return [
        BlockWrite(membank=cmd.membank, wordptr=cmd.wordptr + i, words=(w,))
        for i, w in enumerate(cmd.words)
    ]


def frame_from_hex(text: str, nbits: int | None = None) -> Gen2Frame:
    """Rebuild a frame from whitespace-separated hex bytes.

    Without an explicit bit length the longest suffix-padded length whose
    residue verifies is chosen.
    """
    data = bytes.fromhex("".join(text.split()))
    total = 8 * len(data)
    packed = int.from_bytes(data, "big")
    if nbits is not None:
        if not 0 < nbits <= total:
            raise ValueError("bit length out of range")
        return Gen2Frame(bits=BitString(packed >> (total - nbits), nbits))
    for length in range(total, max(total - 8, 0), -1):
        pad = total - length
        if packed & ((1 << pad) - 1):
            continue
        candidate = BitString(packed >> pad, length)
        if residue_ok(candidate):
            return Gen2Frame(bits=candidate)
    raise BadCrcError("no bit length yields a valid residue")
