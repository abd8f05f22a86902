"""Enrollment pipeline: stability screening, de-biasing, CRP-block map.

Selection happens at byte granularity. A byte survives screening only if
every one of its bits reads identically across all corner-temperature
readouts; its reference value is the per-bit majority over nominal-
temperature readouts (any tie discards the byte). De-biasing then keeps
only bytes whose reference has Hamming weight 4, and the survivors are
packed, in address order, into blocks of 31 bytes. A block resolves a
challenge to 248 response bits (byte order ascending, LSB-first bits).
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import puf
from .layout import DEFAULT_LAYOUT, MemoryLayout

BLOCK_BYTES = 31
BLOCK_BITS = 8 * BLOCK_BYTES

DEFAULT_CORNER_TEMPS = (0.0, 40.0)
NOMINAL_TEMP = 25.0


class EmptyRegionError(ValueError):
    """No bytes survived a selection stage."""


class InsufficientMaterialError(ValueError):
    """Not enough winnowed bytes for even one CRP block."""


@dataclass(frozen=True)
class StableByteMask:
    addresses: tuple[int, ...]
    values: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.addresses) != len(self.values):
            raise ValueError("addresses and values must align")
        if any(a >= b for a, b in zip(self.addresses, self.addresses[1:])):
            raise ValueError("addresses must be strictly increasing")

    def __len__(self) -> int:
        return len(self.addresses)


@dataclass(frozen=True)
class CrpBlock:
    start_address: int
    offsets: tuple[int, ...]

    def addresses(self) -> tuple[int, ...]:
        return tuple(self.start_address + o for o in self.offsets)


@dataclass(frozen=True)
class CrpBlockMap:
    blocks: tuple[CrpBlock, ...]
    block_bytes: int = BLOCK_BYTES

    def __len__(self) -> int:
        return len(self.blocks)

    def block_for_challenge(self, c: int) -> CrpBlock:
        return self.blocks[c % len(self.blocks)]


@dataclass
class EnrollmentRecord:
    device_id: str
    crp_map: CrpBlockMap
    references: tuple[tuple[int, ...], ...]    # 248 bits per block
    corner_temps: tuple[float, ...] = DEFAULT_CORNER_TEMPS
    nominal_temp: float = NOMINAL_TEMP
    corner_readouts: int = 0
    nominal_readouts: int = 0

    def reference_for_challenge(self, c: int) -> tuple[int, ...]:
        return self.references[c % len(self.crp_map)]


def _eligible_slice(layout: MemoryLayout) -> tuple[int, int]:
    return layout.eligible_start, layout.eligible_bytes


def _byte_matrix(readouts: Sequence[puf.Readout], layout: MemoryLayout) -> np.ndarray:
    """Stack readouts restricted to the eligible region: (reads, bytes, 8)."""
    start, nbytes = _eligible_slice(layout)
    rows = []
    for r in readouts:
        bits = r.bits[8 * start : 8 * (start + nbytes)]
        if bits.size != 8 * nbytes:
            raise ValueError("readout does not cover the eligible region")
        rows.append(bits.reshape(nbytes, 8))
    return np.stack(rows)


def pre_select(
    corner_readouts: puf.DumpSet,
    nominal_readouts: puf.DumpSet,
    corner_temps: Sequence[float] = DEFAULT_CORNER_TEMPS,
    min_corner_readouts: int = 2,
    min_nominal_readouts: int = 10,
    layout: MemoryLayout = DEFAULT_LAYOUT,
) -> StableByteMask:
    """Keep bytes that are bit-stable at every corner; majority-vote values.

    A per-bit tie in the nominal vote discards the whole byte.
    """
    corner_sets = []
    for t in corner_temps:
        group = corner_readouts.at_temperature(t)
        if len(group) < min_corner_readouts:
            raise ValueError(
                f"need at least {min_corner_readouts} readouts at {t} C, "
                f"got {len(group)}"
            )
        corner_sets.extend(group)
    nominal = nominal_readouts.at_temperature(NOMINAL_TEMP)
    if len(nominal) < min_nominal_readouts:
        raise ValueError(
            f"need at least {min_nominal_readouts} nominal readouts, got {len(nominal)}"
        )

    corner = _byte_matrix(corner_sets, layout)
    stable = (corner == corner[0]).all(axis=(0, 2))

    nom = _byte_matrix(nominal, layout)
    ones = nom.sum(axis=0, dtype=np.int64)
    majority = (2 * ones > len(nominal)).astype(np.uint8)
    tie = (2 * ones == len(nominal)).any(axis=1)

    keep = stable & ~tie
    if not keep.any():
        raise EmptyRegionError("no byte survived stability screening")
    start, _ = _eligible_slice(layout)
    idx = np.flatnonzero(keep)
    weights = 1 << np.arange(8)  # LSB-first bit order within a byte
    values = (majority[idx] * weights).sum(axis=1)
    return StableByteMask(
        addresses=tuple(int(start + i) for i in idx),
        values=tuple(int(v) for v in values),
    )


def debias(mask: StableByteMask, hamming_weights: frozenset[int] = frozenset({4})) -> StableByteMask:
    """Retain bytes whose reference value is Hamming-weight balanced."""
    if len(mask) == 0:
        raise EmptyRegionError("empty input mask")
    kept = [
        (a, v) for a, v in zip(mask.addresses, mask.values)
        if bin(v).count("1") in hamming_weights
    ]
    if not kept:
        raise EmptyRegionError("no byte survived de-biasing")
    addresses, values = zip(*kept)
    return StableByteMask(addresses=addresses, values=values)


def build_map(mask: StableByteMask, block_bytes: int = BLOCK_BYTES) -> CrpBlockMap:
    """Greedily pack consecutive winnowed bytes into fixed-size blocks."""
    if len(mask) < block_bytes:
        raise InsufficientMaterialError(
            f"inadequate key material: {len(mask)} bytes < one {block_bytes}-byte block"
        )
    blocks = []
    for i in range(len(mask) // block_bytes):
        chunk = mask.addresses[i * block_bytes : (i + 1) * block_bytes]
        start = chunk[0]
        blocks.append(CrpBlock(start_address=start,
                               offsets=tuple(a - start for a in chunk)))
    return CrpBlockMap(blocks=tuple(blocks), block_bytes=block_bytes)


def efficiency(crp_map: CrpBlockMap, eligible_bits: int = DEFAULT_LAYOUT.eligible_bits) -> float:
    """Fraction of the eligible region turned into usable response bits."""
    if eligible_bits <= 0:
        raise ValueError("eligible_bits must be positive")
    return len(crp_map) * 8 * crp_map.block_bytes / eligible_bits


def _byte_bits_lsb(readout_bits: np.ndarray, address: int) -> np.ndarray:
    return readout_bits[8 * address : 8 * address + 8]


def challenge_to_response(
    crp_map: CrpBlockMap, c: int, readout_bits: np.ndarray
) -> tuple[int, ...]:
    """Resolve a challenge to its block's 248 response bits.

    The block index is c modulo the block count; bytes are read in offset
    order, bits LSB-first within each byte.
    """
    block = crp_map.block_for_challenge(c)
    out: list[int] = []
    for addr in block.addresses():
        bits = _byte_bits_lsb(np.asarray(readout_bits), addr)
        if bits.size != 8:
            raise ValueError("readout does not cover the mapped region")
        out.extend(int(b) for b in bits)
    return tuple(out)


def _mask_reference_bits(values: Sequence[int]) -> tuple[int, ...]:
    out: list[int] = []
    for v in values:
        out.extend((v >> j) & 1 for j in range(8))
    return tuple(out)


def build_record(
    device_id: str,
    mask: StableByteMask,
    crp_map: CrpBlockMap,
    corner_temps: Sequence[float] = DEFAULT_CORNER_TEMPS,
    corner_readouts: int = 0,
    nominal_readouts: int = 0,
) -> EnrollmentRecord:
    by_addr = dict(zip(mask.addresses, mask.values))
    references = []
    for block in crp_map.blocks:
        values = [by_addr[a] for a in block.addresses()]
        references.append(_mask_reference_bits(values))
    return EnrollmentRecord(
        device_id=device_id,
        crp_map=crp_map,
        references=tuple(references),
        corner_temps=tuple(corner_temps),
        corner_readouts=corner_readouts,
        nominal_readouts=nominal_readouts,
    )


def enroll_device(
    device: puf.PufDevice,
    device_id: str,
    corner_temps: Sequence[float] = DEFAULT_CORNER_TEMPS,
    corner_readouts: int = 5,
    nominal_readouts: int = 11,
    trial_seed_base: int = 10_000,
    layout: MemoryLayout = DEFAULT_LAYOUT,
) -> EnrollmentRecord:
    """Full pipeline against a live device model."""
    corners = puf.collect_dump(device, 0, corner_temps, corner_readouts,
                               trial_seed_base=trial_seed_base)
    nominal = puf.collect_dump(device, 0, [NOMINAL_TEMP], nominal_readouts,
                               trial_seed_base=trial_seed_base + 1000)
    mask = pre_select(corners, nominal, corner_temps=corner_temps,
                      min_nominal_readouts=min(10, nominal_readouts), layout=layout)
    winnowed = debias(mask)
    crp_map = build_map(winnowed)
    return build_record(device_id, winnowed, crp_map, corner_temps,
                        corner_readouts, nominal_readouts)


def measure_pipeline_ber(
    device: puf.PufDevice,
    record: EnrollmentRecord,
    temperatures: Sequence[float] = DEFAULT_CORNER_TEMPS,
    trials_per_temp: int = 5,
    trial_seed_base: int = 500_000,
) -> float:
    """Pooled regeneration BER of all mapped bytes against the references."""
    errors = 0
    bits = 0
    trial = trial_seed_base
    for t in temperatures:
        for _ in range(trials_per_temp):
            r = puf.readout(device, t, trial)
            trial += 1
            for c in range(len(record.crp_map)):
                got = challenge_to_response(record.crp_map, c, r.bits)
                ref = record.references[c]
                errors += sum(a != b for a, b in zip(got, ref))
                bits += len(ref)
    return errors / bits


# -------------------------------------------------------------- persistence

def record_to_text(record: EnrollmentRecord) -> str:
    lines = [
        f"device_id: {record.device_id}",
        f"corner_temps: {','.join(str(t) for t in record.corner_temps)}",
        f"nominal_temp: {record.nominal_temp}",
        f"corner_readouts: {record.corner_readouts}",
        f"nominal_readouts: {record.nominal_readouts}",
        f"block_bytes: {record.crp_map.block_bytes}",
        f"blocks: {len(record.crp_map)}",
    ]
    for i, block in enumerate(record.crp_map.blocks):
        offs = ",".join(str(o) for o in block.offsets)
        lines.append(f"block {i}: start={block.start_address} offsets={offs}")
    for i, ref in enumerate(record.references):
        raw = bytes(
            sum((ref[8 * j + b] & 1) << b for b in range(8))
            for j in range(len(ref) // 8)
        )
        lines.append(f"ref {i}: {base64.b64encode(raw).decode()}")
    return "\n".join(lines) + "\n"


def record_from_text(text: str) -> EnrollmentRecord:
    fields: dict[str, str] = {}
    blocks: dict[int, CrpBlock] = {}
    refs: dict[int, tuple[int, ...]] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if key.startswith("block "):
            idx = int(key.split()[1])
            parts = dict(p.split("=", 1) for p in value.split())
            blocks[idx] = CrpBlock(
                start_address=int(parts["start"]),
                offsets=tuple(int(o) for o in parts["offsets"].split(",")),
            )
        elif key.startswith("ref "):
            idx = int(key.split()[1])
            refs[idx] = _mask_reference_bits(base64.b64decode(value))
        else:
            fields[key] = value
    n = int(fields["blocks"])
    crp_map = CrpBlockMap(
        blocks=tuple(blocks[i] for i in range(n)),
        block_bytes=int(fields["block_bytes"]),
    )
    return EnrollmentRecord(
        device_id=fields["device_id"],
        crp_map=crp_map,
        references=tuple(refs[i] for i in range(n)),
        corner_temps=tuple(float(t) for t in fields["corner_temps"].split(",")),
        nominal_temp=float(fields["nominal_temp"]),
        corner_readouts=int(fields["corner_readouts"]),
        nominal_readouts=int(fields["nominal_readouts"]),
    )
