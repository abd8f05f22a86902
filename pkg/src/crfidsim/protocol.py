"""Token and prover state machines with a tamper-capable channel.

A session walks the wire flow end to end: privilege drop, setup write,
key exchange (nonce, challenge, helper data), chunked image transfer
into the download area, then one encrypted tag whose verification gates
the copy into the application area. Every reset or brownout wipes the
volatile key material; the application area changes only inside
commit_firmware after the tag check passes.
"""

from __future__ import annotations

import base64
import enum
import random
from dataclasses import dataclass, field
from typing import Sequence

from . import enroll, fuzzy, gen2, mac, puf
from ._bits import pack_msb, unpack_msb
from .layout import DEFAULT_LAYOUT, MemoryLayout

CHUNK_WORDS = 32
SETUP_WORDPTR = 0x04
METHOD_CMAC_AES128 = 0x01
CSI_CMAC_AES128 = 0x01

TEMP_LEGAL_MIN = 0.0
TEMP_LEGAL_MAX = 40.0


class TokenMode(enum.Enum):
    BOOTING = "Booting"
    KEY_READY = "KeyReady"
    FIRMWARE_UPDATE = "FirmwareUpdate"
    USER_CODE = "UserCode"
    HALTED = "Halted"


class ErrorCode(enum.Enum):
    BAD_MODE = 1
    BAD_SETUP = 2
    SIZE_TOO_LARGE = 3
    BAD_WORDPTR = 4
    BAD_METHOD = 5
    MAC_MISMATCH = 6


class UpdateOutcome(enum.Enum):
    COMMITTED = "Committed"
    REJECTED_BY_TOKEN = "RejectedByToken"
    KEY_RECOVERY_FAILURE = "KeyRecoveryFailure"
    BROWNOUT_ABORTED = "BrownoutAborted"
    TIMEOUT = "Timeout"


class DuplicateEnrollmentError(ValueError):
    pass


class UnknownTokenError(KeyError):
    pass


# ------------------------------------------------------------------ replies

@dataclass(frozen=True)
class Ack:
    what: str


@dataclass(frozen=True)
class Nak:
    code: ErrorCode


@dataclass(frozen=True)
class AuthReply:
    nonce: bytes
    challenge: int
    helper: bytes


Reply = Ack | Nak | AuthReply | None


# ----------------------------------------------------------------- firmware

@dataclass(frozen=True)
class Segment:
    load_offset: int            # words, download-area-relative
    data: bytes

    def __post_init__(self) -> None:
        if self.load_offset < 0:
            raise ValueError("negative load offset")
        if not self.data:
            raise ValueError("empty segment")


@dataclass(frozen=True)
class FirmwareImage:
    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("image needs at least one segment")
        spans = sorted(
            (2 * s.load_offset, 2 * s.load_offset + len(s.data)) for s in self.segments
        )
        for (_, end), (start, _) in zip(spans, spans[1:]):
            if start < end:
                raise ValueError("segments overlap")

    @property
    def total_bytes(self) -> int:
        return max(2 * s.load_offset + len(s.data) for s in self.segments)

    def assemble(self) -> bytes:
        buf = bytearray(self.total_bytes)
        for s in self.segments:
            off = 2 * s.load_offset
            buf[off : off + len(s.data)] = s.data
        return bytes(buf)


def image_to_text(image: FirmwareImage) -> str:
    lines = [
        f"total_bytes: {image.total_bytes}",
        f"segments: {len(image.segments)}",
    ]
    for i, s in enumerate(image.segments):
        lines.append(f"segment {i}: offset={s.load_offset} bytes={len(s.data)}")
        lines.append(f"data {i}: {base64.b64encode(s.data).decode()}")
    return "\n".join(lines) + "\n"


def image_from_text(text: str) -> FirmwareImage:
    meta: dict[int, int] = {}
    data: dict[int, bytes] = {}
    declared = None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if key.startswith("segment "):
            idx = int(key.split()[1])
            parts = dict(p.split("=", 1) for p in value.split())
            meta[idx] = int(parts["offset"])
        elif key.startswith("data "):
            data[int(key.split()[1])] = base64.b64decode(value)
        elif key == "segments":
            declared = int(value)
    if declared is None or declared != len(meta) or declared != len(data):
        raise ValueError("malformed firmware image file")
    return FirmwareImage(segments=tuple(
        Segment(load_offset=meta[i], data=data[i]) for i in range(declared)
    ))


def demo_images() -> dict[str, FirmwareImage]:
    """Three fixed pseudorandom images of unequal size."""
    out = {}
    for name, size in (("blinky", 399), ("sense", 273), ("boot-shim", 223)):
        rng = random.Random(f"fw-{name}")
        out[name] = FirmwareImage(
            segments=(Segment(load_offset=0, data=rng.randbytes(size)),)
        )
    return out


# ----------------------------------------------------------------- database

class ProverDb:
    """token_id -> enrollment record, write-once per token."""

    def __init__(self) -> None:
        self._records: dict[int, enroll.EnrollmentRecord] = {}

    def add(self, record: enroll.EnrollmentRecord) -> None:
        if record.device_id in self._records:
            raise DuplicateEnrollmentError(f"token {record.device_id} already enrolled")
        self._records[record.device_id] = record

    def get(self, token_id: str) -> enroll.EnrollmentRecord:
        try:
            return self._records[token_id]
        except KeyError:
            raise UnknownTokenError(f"token {token_id} not enrolled") from None

    def __contains__(self, token_id: str) -> bool:
        return token_id in self._records

    def __len__(self) -> int:
        return len(self._records)


# -------------------------------------------------------------- token state

@dataclass(frozen=True)
class UpdateSetup:
    size: int
    start_word: int
    method: int

    def to_words(self) -> tuple[int, int, int, int]:
        if not 0 <= self.size < (1 << 32):
            raise ValueError("size out of u32 range")
        return (
            (self.size >> 16) & 0xFFFF,
            self.size & 0xFFFF,
            self.start_word & 0xFFFF,
            (self.method & 0xFF) << 8,
        )

    @classmethod
    def from_words(cls, words: Sequence[int]) -> "UpdateSetup":
        if len(words) != 4:
            raise ValueError("setup needs exactly 4 words")
        return cls(
            size=(words[0] << 16) | words[1],
            start_word=words[2],
            method=(words[3] >> 8) & 0xFF,
        )


@dataclass
class TokenNvm:
    crp_map: enroll.CrpBlockMap
    firmware_update_flag: bool = False
    bootloader_version: str = "1.0"
    bootloader: bytes = b"immutable-bootloader"
    app_area: bytearray = field(
        default_factory=lambda: bytearray(DEFAULT_LAYOUT.app_bytes)
    )
    download_area: bytearray = field(
        default_factory=lambda: bytearray(DEFAULT_LAYOUT.download_bytes)
    )


@dataclass
class TokenState:
    mode: TokenMode
    nvm: TokenNvm
    temperature: float
    otf: bool = False
    nonce: bytes | None = None
    challenge: int | None = None
    sk: fuzzy.SessionKey | None = None
    helper: fuzzy.HelperData | None = None
    pending_setup: UpdateSetup | None = None
    update: UpdateSetup | None = None
    reset_scheduled: bool = False

    def volatile_cleared(self) -> bool:
        return (
            self.nonce is None
            and self.challenge is None
            and self.sk is None
            and self.helper is None
            and self.pending_setup is None
            and self.update is None
        )


def _clear_volatile(state: TokenState) -> None:
    state.nonce = None
    state.challenge = None
    state.sk = None
    state.helper = None
    state.pending_setup = None
    state.update = None


def token_boot(
    device: puf.PufDevice,
    nvm: TokenNvm,
    temperature: float,
    boot_seed: int,
    fe_config: fuzzy.FeConfig | None = None,
    layout: MemoryLayout = DEFAULT_LAYOUT,
) -> TokenState:
    """Power-on flow: temperature gate, fresh nonce/challenge, key derivation."""
    if not TEMP_LEGAL_MIN <= temperature <= TEMP_LEGAL_MAX:
        return TokenState(
            mode=TokenMode.HALTED, nvm=nvm, temperature=temperature, otf=True
        )
    cfg = fe_config or fuzzy.default_config()
    nonce = puf.trng_next(device, 128, trial_seed=4 * boot_seed,
                          temperature=temperature)
    c_bits = puf.trng_next(device, 8, trial_seed=4 * boot_seed + 1,
                           temperature=temperature)
    challenge = int("".join(str(b) for b in c_bits), 2)
    sample = puf.readout(device, temperature, trial_seed=4 * boot_seed + 2)
    r = enroll.challenge_to_response(nvm.crp_map, challenge, sample.bits)
    sk, helper = fuzzy.fe_gen(r, cfg)
    mode = TokenMode.KEY_READY if nvm.firmware_update_flag else TokenMode.USER_CODE
    return TokenState(
        mode=mode,
        nvm=nvm,
        temperature=temperature,
        nonce=pack_msb(nonce),
        challenge=challenge,
        sk=sk,
        helper=helper,
    )


def commit_firmware(state: TokenState) -> TokenState:
    """Copy the verified download range into the application area."""
    setup = state.update
    if state.mode is not TokenMode.FIRMWARE_UPDATE or setup is None:
        raise ValueError("commit outside a verified update session")
    off = 2 * setup.start_word
    state.nvm.app_area[off : off + setup.size] = (
        state.nvm.download_area[off : off + setup.size]
    )
    state.nvm.firmware_update_flag = False
    state.reset_scheduled = True
    return state


def _reject(state: TokenState, code: ErrorCode, reset: bool = False) -> tuple[TokenState, Reply]:
    if reset:
        state.reset_scheduled = True
    return state, Nak(code)


def token_handle(state: TokenState, frame: gen2.Gen2Frame) -> tuple[TokenState, Reply]:
    """One reader frame against the token state machine."""
    if state.mode is TokenMode.HALTED:
        return state, None
    try:
        view = gen2.decode(frame)
    except gen2.BadCrcError:
        return state, None
    except gen2.WordPtrRangeError:
        return _reject(state, ErrorCode.BAD_WORDPTR)
    except (gen2.UnknownDiscriminatorError, gen2.FrameFormatError):
        return state, None

    if isinstance(view, gen2.TagPrivilege):
        state.nvm.firmware_update_flag = True
        _clear_volatile(state)
        state.reset_scheduled = True
        return state, Ack("privilege")

    if isinstance(view, gen2.BlockWrite) and view.membank == 0:
        if view.wordptr != SETUP_WORDPTR:
            return _reject(state, ErrorCode.BAD_WORDPTR)
        if state.mode is not TokenMode.KEY_READY:
            return _reject(state, ErrorCode.BAD_MODE)
        if len(view.words) != 4:
            return _reject(state, ErrorCode.BAD_SETUP)
        state.pending_setup = UpdateSetup.from_words(view.words)
        return state, Ack("setup")

    if isinstance(view, gen2.Authenticate):
        if state.mode is not TokenMode.KEY_READY:
            return _reject(state, ErrorCode.BAD_MODE, reset=True)
        setup = state.pending_setup
        if setup is None:
            return _reject(state, ErrorCode.BAD_SETUP, reset=True)
        if view.csi != CSI_CMAC_AES128 or setup.method != METHOD_CMAC_AES128:
            return _reject(state, ErrorCode.BAD_METHOD, reset=True)
        area_bytes = len(state.nvm.download_area)
        if setup.start_word >= area_bytes // 2:
            return _reject(state, ErrorCode.BAD_WORDPTR, reset=True)
        if setup.size <= 0 or 2 * setup.start_word + setup.size > area_bytes:
            return _reject(state, ErrorCode.SIZE_TOO_LARGE, reset=True)
        off = 2 * setup.start_word
        state.nvm.download_area[off : off + setup.size] = bytes(setup.size)
        state.update = setup
        state.pending_setup = None
        state.mode = TokenMode.FIRMWARE_UPDATE
        assert state.nonce is not None and state.challenge is not None
        assert state.helper is not None
        return state, AuthReply(
            nonce=state.nonce,
            challenge=state.challenge,
            helper=pack_msb(state.helper.bits),
        )

    if isinstance(view, gen2.BlockWrite):   # membank 1..3: data-plane write
        if view.membank != 3:
            return _reject(state, ErrorCode.BAD_WORDPTR)
        if state.mode is not TokenMode.FIRMWARE_UPDATE:
            return _reject(state, ErrorCode.BAD_MODE)
        area_words = len(state.nvm.download_area) // 2
        if view.wordptr + len(view.words) > area_words:
            return _reject(state, ErrorCode.BAD_WORDPTR)
        off = 2 * view.wordptr
        for i, w in enumerate(view.words):
            state.nvm.download_area[off + 2 * i : off + 2 * i + 2] = w.to_bytes(2, "big")
        return state, Ack("chunk")

    if isinstance(view, gen2.SecureComm):
        if state.mode is not TokenMode.FIRMWARE_UPDATE or state.update is None:
            return _reject(state, ErrorCode.BAD_MODE, reset=True)
        assert state.sk is not None and state.nonce is not None
        setup = state.update
        key = state.sk.as_bytes()
        s_prime = mac.sc_decrypt(view.ciphertext, key)
        off = 2 * setup.start_word
        received = bytes(state.nvm.download_area[off : off + setup.size])
        s = mac.mac_firmware(received, state.nonce, key)
        if s.tag == s_prime:
            commit_firmware(state)
            return state, Ack("commit")
        state.reset_scheduled = True
        return state, Nak(ErrorCode.MAC_MISMATCH)

    return state, None


# ------------------------------------------------------------- simulation

class TokenSim:
    """One simulated token: device, NVM, auto power-on reset handling."""

    def __init__(
        self,
        device: puf.PufDevice,
        crp_map: enroll.CrpBlockMap,
        temperature: float = 25.0,
        session_seed: int = 0,
        fe_config: fuzzy.FeConfig | None = None,
    ) -> None:
        self.device = device
        self.nvm = TokenNvm(crp_map=crp_map)
        self.temperature = temperature
        self.session_seed = session_seed
        self.fe_config = fe_config or fuzzy.default_config()
        self.boot_count = 0
        self.brownout_pending = False
        self.state = self._boot()

    def _boot(self) -> TokenState:
        self.boot_count += 1
        return token_boot(
            self.device,
            self.nvm,
            self.temperature,
            boot_seed=self.session_seed * 100_000 + self.boot_count,
            fe_config=self.fe_config,
        )

    def power_cycle(self) -> None:
        self.brownout_pending = False
        self.state = self._boot()

    def inject_brownout(self) -> None:
        """Supply dipped below the operating threshold mid-session."""
        _clear_volatile(self.state)
        self.state.mode = TokenMode.HALTED
        self.state.reset_scheduled = False
        self.brownout_pending = True

    def deliver(self, frame: gen2.Gen2Frame) -> Reply:
        if self.brownout_pending:
            return None
        self.state, reply = token_handle(self.state, frame)
        if self.state.reset_scheduled:
            self.power_cycle()
        return reply


@dataclass
class TamperPolicy:
    """Frame-level channel interference, keyed by delivery index."""

    flips: dict[int, tuple[int, ...]] = field(default_factory=dict)
    drops: frozenset[int] = frozenset()
    replays: dict[int, gen2.Gen2Frame] = field(default_factory=dict)


class Channel:
    """Reader-to-token transport with optional tampering and a transcript."""

    def __init__(self, token: TokenSim, policy: TamperPolicy | None = None) -> None:
        self.token = token
        self.policy = policy or TamperPolicy()
        self.counter = 0
        self.transcript: list[str] = []

    def send(self, frame: gen2.Gen2Frame) -> Reply:
        index = self.counter
        self.counter += 1
        if index in self.policy.drops:
            return None
        flips = self.policy.flips.get(index)
        if flips:
            bits = frame.bits
            for pos in flips:
                bits = bits.flip(pos % bits.length)
            frame = gen2.Gen2Frame(bits=bits)
        self.transcript.append(frame.to_hex())
        reply = self.token.deliver(frame)
        replay = self.policy.replays.get(index)
        if replay is not None:
            self.transcript.append(replay.to_hex())
            self.token.deliver(replay)
        return reply

    def reset_token(self) -> None:
        """Models the reader cycling its RF field."""
        self.token.power_cycle()


# ----------------------------------------------------------------- prover

def _image_words(data: bytes) -> list[int]:
    if len(data) % 2:
        data += b"\x00"
    return [int.from_bytes(data[i : i + 2], "big") for i in range(0, len(data), 2)]


def _run_attempt(
    record: enroll.EnrollmentRecord,
    image: FirmwareImage,
    channel: Channel,
    rng: random.Random,
    chunk_words: int,
    start_word: int,
    use_reader_split: bool,
    fe_config: fuzzy.FeConfig,
) -> UpdateOutcome:
    def rn() -> int:
        return rng.randrange(1 << 16)

    def fail_kind() -> UpdateOutcome:
        if channel.token.brownout_pending:
            return UpdateOutcome.BROWNOUT_ABORTED
        return UpdateOutcome.TIMEOUT

    reply = channel.send(gen2.encode(gen2.TagPrivilege(), rn()))
    if not isinstance(reply, Ack):
        return fail_kind()

    assembled = image.assemble()
    setup = UpdateSetup(
        size=len(assembled), start_word=start_word, method=METHOD_CMAC_AES128
    )
    reply = channel.send(gen2.encode(
        gen2.BlockWrite(membank=0, wordptr=SETUP_WORDPTR, words=setup.to_words()),
        rn(),
    ))
    if not isinstance(reply, Ack):
        return fail_kind()

    reply = channel.send(gen2.encode(gen2.Authenticate(csi=CSI_CMAC_AES128), rn()))
    if isinstance(reply, Nak):
        return UpdateOutcome.REJECTED_BY_TOKEN
    if not isinstance(reply, AuthReply):
        return fail_kind()
    auth = reply

    r_ref = record.reference_for_challenge(auth.challenge)
    helper = fuzzy.HelperData(bits=unpack_msb(auth.helper, fe_config.helper_bits))
    try:
        sk = fuzzy.fe_rec(r_ref, helper, fe_config)
    except fuzzy.KeyRecoveryFailure:
        return UpdateOutcome.KEY_RECOVERY_FAILURE

    words = _image_words(assembled)
    for i in range(0, len(words), chunk_words):
        chunk = gen2.BlockWrite(
            membank=3,
            wordptr=start_word + i,
            words=tuple(words[i : i + chunk_words]),
        )
        parts = gen2.reader_split(chunk) if use_reader_split else [chunk]
        for part in parts:
            reply = channel.send(gen2.encode(part, rn()))
            if not isinstance(reply, Ack):
                return fail_kind()

    key = sk.as_bytes()
    tag = mac.mac_firmware(assembled, auth.nonce, key)
    sc = gen2.SecureComm(
        inner_wordptr=start_word, ciphertext=mac.sc_encrypt(tag.tag, key)
    )
    reply = channel.send(gen2.encode(sc, rn()))
    if isinstance(reply, Ack):
        return UpdateOutcome.COMMITTED
    if isinstance(reply, Nak):
        return UpdateOutcome.REJECTED_BY_TOKEN
    return fail_kind()


def prover_update(
    db: ProverDb,
    token_id: str,
    image: FirmwareImage,
    channel: Channel,
    chunk_words: int = CHUNK_WORDS,
    start_word: int = 0,
    max_attempts: int = 3,
    use_reader_split: bool = False,
    fe_config: fuzzy.FeConfig | None = None,
    rng_seed: int = 0,
) -> UpdateOutcome:
    """Drive a full update; fresh sessions retry transient key failures."""
    record = db.get(token_id)
    cfg = fe_config or fuzzy.default_config()
    rng = random.Random(rng_seed)
    outcome = UpdateOutcome.TIMEOUT
    for attempt in range(max_attempts):
        if attempt:
            channel.reset_token()
        outcome = _run_attempt(
            record, image, channel, rng, chunk_words, start_word,
            use_reader_split, cfg,
        )
        if outcome not in (
            UpdateOutcome.KEY_RECOVERY_FAILURE,
            UpdateOutcome.BROWNOUT_ABORTED,
        ):
            return outcome
    return outcome
