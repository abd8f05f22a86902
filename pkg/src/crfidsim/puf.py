"""Simulated SRAM PUF: per-cell power-up model, dump ingestion, metrics.

Each cell carries a probability of powering up as 1. Temperature scales a
cell's flip probability (relative to its preferred value) by a
piecewise-linear factor anchored at 1.0 for 25 C and rising toward the
extremes. Readouts are deterministic given (device seed, trial seed).

The TRNG region at the SRAM base is populated from the device's noisy-cell
budget first, mirroring the provisioning step that places the entropy
source over metastable cells; a fully noiseless device therefore has a
degenerate (constant) TRNG, which the health check flags.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .layout import DEFAULT_LAYOUT

TEMP_MIN = -15.0
TEMP_MAX = 80.0

# (temperature C, flip-probability scale); linear between anchors
DEFAULT_TEMP_ANCHORS: tuple[tuple[float, float], ...] = (
    (-15.0, 5.0),
    (0.0, 2.5),
    (25.0, 1.0),
    (40.0, 2.5),
    (80.0, 9.0),
)

TRNG_FOLD = 16

DUMP_MAGIC = b"SPUF"
DUMP_VERSION = 1


class TemperatureRangeError(ValueError):
    pass


class InsufficientEntropyError(ValueError):
    pass


@dataclass(frozen=True)
class PufDevice:
    num_cells: int
    cell_one_prob: np.ndarray
    rng_seed: int
    temp_anchors: tuple[tuple[float, float], ...] = DEFAULT_TEMP_ANCHORS
    trng_region_cells: int = DEFAULT_LAYOUT.trng_cells

    def __post_init__(self) -> None:
        if self.num_cells <= 0:
            raise ValueError("num_cells must be positive")
        if len(self.cell_one_prob) != self.num_cells:
            raise ValueError("cell_one_prob length mismatch")
        p = self.cell_one_prob
        if ((p < 0) | (p > 1)).any():
            raise ValueError("cell probabilities must lie in [0, 1]")
        self.cell_one_prob.setflags(write=False)


@dataclass(frozen=True)
class Readout:
    bits: np.ndarray
    temperature: float

    def __post_init__(self) -> None:
        self.bits.setflags(write=False)


@dataclass
class DumpSet:
    device_id: int
    readouts: list[Readout] = field(default_factory=list)

    @property
    def num_cells(self) -> int:
        if not self.readouts:
            raise ValueError("empty dump set")
        return len(self.readouts[0].bits)

    def at_temperature(self, temperature: float, tol: float = 0.01) -> list[Readout]:
        return [r for r in self.readouts if abs(r.temperature - temperature) <= tol]

    def temperatures(self) -> list[float]:
        seen: list[float] = []
        for r in self.readouts:
            if not any(abs(r.temperature - t) <= 0.01 for t in seen):
                seen.append(r.temperature)
        return seen


def synth_device(
    num_cells: int = 16384,
    stable_frac: float = 0.86,
    noisy_epsilon: float = 0.001,
    bias: float = 0.5,
    seed: int = 0,
    trng_region_cells: int = DEFAULT_LAYOUT.trng_cells,
) -> PufDevice:
    """Synthesize a device.

    A stable_frac share of cells gets a one-probability of noisy_epsilon or
    1 - noisy_epsilon (split according to bias); the rest draw their
    one-probability uniformly. The uniform budget is spent on the TRNG
    region first.
    """
    for name, v in (("stable_frac", stable_frac), ("noisy_epsilon", noisy_epsilon),
                    ("bias", bias)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1]")
    rng = np.random.default_rng(seed)
    prob = np.empty(num_cells, dtype=np.float64)

    n_uniform = int(round((1.0 - stable_frac) * num_cells))
    region = min(trng_region_cells, num_cells)
    in_region = min(n_uniform, region)
    uniform_idx = np.arange(in_region)
    left_over = n_uniform - in_region
    if left_over > 0:
        rest = rng.choice(np.arange(region, num_cells), size=left_over, replace=False)
        uniform_idx = np.concatenate([uniform_idx, rest])

    stable_mask = np.ones(num_cells, dtype=bool)
    stable_mask[uniform_idx] = False
    n_stable = int(stable_mask.sum())
    leans_one = rng.random(n_stable) < bias
    prob[stable_mask] = np.where(leans_one, 1.0 - noisy_epsilon, noisy_epsilon)
    prob[uniform_idx] = rng.random(len(uniform_idx))
    return PufDevice(
        num_cells=num_cells,
        cell_one_prob=prob,
        rng_seed=seed,
        trng_region_cells=trng_region_cells,
    )


def temp_scale(device: PufDevice, temperature: float) -> float:
    xs = [a[0] for a in device.temp_anchors]
    ys = [a[1] for a in device.temp_anchors]
    return float(np.interp(temperature, xs, ys))


def _temperature_probs(device: PufDevice, temperature: float) -> np.ndarray:
    if not TEMP_MIN <= temperature <= TEMP_MAX:
        raise TemperatureRangeError(
            f"temperature {temperature} outside model range [{TEMP_MIN}, {TEMP_MAX}]"
        )
    p = device.cell_one_prob
    prefers_one = p >= 0.5
    flip = np.where(prefers_one, 1.0 - p, p)
    flip = np.minimum(flip * temp_scale(device, temperature), 0.5)
    return np.where(prefers_one, 1.0 - flip, flip)


def _trial_rng(device: PufDevice, trial_seed: int, temperature: float) -> np.random.Generator:
    temp_key = int(round(temperature * 100)) + 200_000
    return np.random.default_rng([device.rng_seed, trial_seed, temp_key])


def readout(device: PufDevice, temperature: float, trial_seed: int) -> Readout:
    """One full-array power-up sample at the given temperature."""
    probs = _temperature_probs(device, temperature)
    rng = _trial_rng(device, trial_seed, temperature)
    bits = (rng.random(device.num_cells) < probs).astype(np.uint8)
    return Readout(bits=bits, temperature=temperature)


def collect_dump(
    device: PufDevice,
    device_id: int,
    temperatures: Sequence[float],
    readouts_per_temp: int,
    trial_seed_base: int = 0,
) -> DumpSet:
    """Characterization run: repeated readouts at each temperature."""
    out = DumpSet(device_id=device_id)
    trial = trial_seed_base
    for t in temperatures:
        for _ in range(readouts_per_temp):
            out.readouts.append(readout(device, t, trial))
            trial += 1
    return out


# -------------------------------------------------------------------- metrics

def ber(reference: Sequence[int], trials: Sequence[Sequence[int]]) -> float:
    """Mean fractional Hamming distance of the trials from the reference."""
    ref = np.asarray(reference, dtype=np.uint8)
    if len(trials) == 0:
        raise ValueError("need at least one trial")
    total = 0.0
    for t in trials:
        arr = np.asarray(t, dtype=np.uint8)
        if arr.shape != ref.shape:
            raise ValueError("trial length mismatch")
        total += float(np.mean(arr != ref))
    return total / len(trials)


def bias(readouts: Sequence[Sequence[int]]) -> float:
    """Empirical probability of 1 pooled over all bits of all readouts."""
    if len(readouts) == 0:
        raise ValueError("need at least one readout")
    ones = 0
    bits = 0
    for r in readouts:
        arr = np.asarray(r, dtype=np.uint8)
        ones += int(arr.sum())
        bits += arr.size
    return ones / bits


# ----------------------------------------------------------------------- trng

def trng_next(
    device: PufDevice,
    nbits: int,
    trial_seed: int,
    temperature: float = 25.0,
    fold: int = TRNG_FOLD,
) -> np.ndarray:
    """Random bits from XOR-folded power-up values of the TRNG region.

    Each power cycle of the region yields region_cells // fold bits; the
    call draws fresh cycles until nbits are collected.
    """
    if not 0 < nbits <= 128:
        raise ValueError("nbits must be in 1..128")
    region = device.trng_region_cells
    if region < fold:
        raise InsufficientEntropyError(
            f"TRNG region of {region} cells cannot feed a {fold}-bit fold"
        )
    per_cycle = region // fold
    probs = _temperature_probs(device, temperature)[:region]
    out = np.empty(0, dtype=np.uint8)
    cycle = 0
    while out.size < nbits:
        rng = _trial_rng(device, trial_seed * 65536 + cycle, temperature)
        cells = (rng.random(region) < probs).astype(np.uint8)
        folded = cells[: per_cycle * fold].reshape(per_cycle, fold).sum(axis=1) % 2
        out = np.concatenate([out, folded.astype(np.uint8)])
        cycle += 1
    return out[:nbits]


@dataclass(frozen=True)
class TrngHealth:
    position_freq: np.ndarray
    degenerate: bool


def trng_health(
    device: PufDevice, cycles: int = 200, trial_seed: int = 0, fold: int = TRNG_FOLD
) -> TrngHealth:
    """Per-fold-position one-frequency over repeated cycles.

    Degenerate means some output position is constant across all sampled
    cycles (e.g. a noiseless device).
    """
    region = device.trng_region_cells
    per_cycle = region // fold
    probs = _temperature_probs(device, 25.0)[:region]
    acc = np.zeros(per_cycle, dtype=np.int64)
    for c in range(cycles):
        rng = _trial_rng(device, (trial_seed + 1) * 131072 + c, 25.0)
        cells = (rng.random(region) < probs).astype(np.uint8)
        folded = cells[: per_cycle * fold].reshape(per_cycle, fold).sum(axis=1) % 2
        acc += folded.astype(np.int64)
    freq = acc / cycles
    degenerate = bool(((freq == 0.0) | (freq == 1.0)).any())
    return TrngHealth(position_freq=freq, degenerate=degenerate)


# -------------------------------------------------------------------- dump IO

def write_dump(path: str, dump: DumpSet) -> None:
    """Binary layout: magic, version u8, device id u32, cell count u32,
    readout count u16, then per readout a centi-degree i16 and the packed
    bits (LSB-first within each byte). Integers little-endian.
    """
    cells = dump.num_cells
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(struct.pack("<BIIH", DUMP_VERSION, dump.device_id, cells,
                             len(dump.readouts)))
        for r in dump.readouts:
            if len(r.bits) != cells:
                raise ValueError("inconsistent readout length")
            fh.write(struct.pack("<h", int(round(r.temperature * 100))))
            fh.write(np.packbits(r.bits, bitorder="little").tobytes())


def read_dump(path: str) -> DumpSet:
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    magic = buf.read(4)
    if magic != DUMP_MAGIC:
        raise ValueError("not a dump file (bad magic)")
    version, device_id, cells, count = struct.unpack("<BIIH", buf.read(11))
    if version != DUMP_VERSION:
        raise ValueError(f"unsupported dump version {version}")
    nbytes = (cells + 7) // 8
    out = DumpSet(device_id=device_id)
    for _ in range(count):
        (centi,) = struct.unpack("<h", buf.read(2))
        packed = np.frombuffer(buf.read(nbytes), dtype=np.uint8)
        bits = np.unpackbits(packed, bitorder="little")[:cells]
        out.readouts.append(Readout(bits=bits, temperature=centi / 100.0))
    if buf.read(1):
        raise ValueError("trailing bytes after last readout")
    return out


def device_from_dump(dump: DumpSet, seed: int = 0) -> PufDevice:
    """Fit a per-cell one-probability model to recorded readouts.

    Plain per-cell frequency pooled over all temperatures. A cell the dump
    never saw flip is treated as deterministic, so a noiseless dump yields
    a noiseless device.
    """
    cells = dump.num_cells
    ones = np.zeros(cells, dtype=np.int64)
    for r in dump.readouts:
        ones += r.bits
    prob = ones / len(dump.readouts)
    return PufDevice(num_cells=cells, cell_one_prob=prob, rng_seed=seed)
