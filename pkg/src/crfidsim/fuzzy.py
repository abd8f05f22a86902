"""Reverse fuzzy extractor over per-block BCH syndromes.

The cheap half (fe_gen) runs on the constrained device: it publishes one
syndrome per response block as helper data and keeps the information-set
bits as the session key. The expensive half (fe_rec) runs on the prover:
it corrects its enrolled copy of the response toward each published
syndrome and re-derives the same key, provided every block is within t
bits of the device's readout.

Key derivation uses the information-set coordinates of each block: for a
linear code those coordinates are a bijection with the syndrome coset, so
the key carries exactly k bits of residual entropy per block and no hash
is needed on the device.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterator, Sequence

import numpy as np

from . import bch
from ._bits import int_from_bits, pack_msb


@dataclass(frozen=True)
class FeConfig:
    code: bch.BchParams
    blocks: int

    @property
    def response_bits(self) -> int:
        return self.blocks * self.code.n

    @property
    def key_bits(self) -> int:
        return self.blocks * self.code.k

    @property
    def helper_bits(self) -> int:
        return self.blocks * (self.code.n - self.code.k)


def default_config() -> FeConfig:
    """8 blocks of BCH(31,16,3): 248 response bits, 128 key bits."""
    return FeConfig(code=bch.make_code(31, 16, 3), blocks=8)


@dataclass(frozen=True)
class HelperData:
    bits: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class SessionKey:
    bits: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.bits)

    def as_bytes(self) -> bytes:
        return pack_msb(self.bits)


class KeyRecoveryFailure(Exception):
    """Some block failed bounded-distance decoding."""


def _blocks_of(r: Sequence[int], cfg: FeConfig) -> list[tuple[int, ...]]:
    n = cfg.code.n
    return [tuple(r[i * n : (i + 1) * n]) for i in range(cfg.blocks)]


def fe_gen(r: Sequence[int], cfg: FeConfig) -> tuple[SessionKey, HelperData]:
    """Helper data = concatenated per-block syndromes; key = info-set bits."""
    if len(r) != cfg.response_bits:
        raise ValueError(f"response length {len(r)} != {cfg.response_bits}")
    helper: list[int] = []
    key: list[int] = []
    for block in _blocks_of(r, cfg):
        helper.extend(bch.syndrome(block, cfg.code).bits)
        key.extend(block[i] for i in cfg.code.info_positions)
    return SessionKey(tuple(key)), HelperData(tuple(helper))


def fe_rec(r_prime: Sequence[int], h: HelperData, cfg: FeConfig) -> SessionKey:
    """Correct each enrolled block toward its published syndrome.

    Raises KeyRecoveryFailure if any block cannot be decoded; there are no
    partial keys.
    """
    if len(r_prime) != cfg.response_bits:
        raise ValueError(f"response length {len(r_prime)} != {cfg.response_bits}")
    if len(h) != cfg.helper_bits:
        raise ValueError(f"helper length {len(h)} != {cfg.helper_bits}")
    nk = cfg.code.n - cfg.code.k
    key: list[int] = []
    for i, block in enumerate(_blocks_of(r_prime, cfg)):
        target = bch.Syndrome(tuple(h.bits[i * nk : (i + 1) * nk]))
        try:
            fixed = bch.correct(block, target, cfg.code)
        except bch.DecodeFailure as exc:
            raise KeyRecoveryFailure(f"block {i}: {exc}") from exc
        key.extend(fixed[j] for j in cfg.code.info_positions)
    return SessionKey(tuple(key))


# ------------------------------------------------------------------ analytics

def _binom_cdf(t: int, n: int, p: float) -> float:
    # direct summation, n <= 63 terms; double precision throughout
    return sum(math.comb(n, i) * p**i * (1.0 - p) ** (n - i) for i in range(t + 1))


def key_failure_prob(ber: float, cfg: FeConfig) -> float:
    """Probability that at least one block exceeds t errors.

    Per-block failure is 1 - BinomialCDF(t; n, ber); blocks fail
    independently.
    """
    if not 0.0 <= ber <= 1.0:
        raise ValueError("ber must be in [0, 1]")
    p1 = 1.0 - _binom_cdf(cfg.code.t, cfg.code.n, ber)
    return 1.0 - (1.0 - p1) ** cfg.blocks


def residual_min_entropy(bias: float, cfg: FeConfig) -> float:
    """Min-entropy of the key after publishing n-k helper bits per block."""
    if not 0.0 < bias < 1.0:
        raise ValueError("bias must be in (0, 1)")
    n, k = cfg.code.n, cfg.code.k
    per_block = -n * math.log2(max(bias, 1.0 - bias)) - (n - k)
    return cfg.blocks * per_block


def coset_candidates(h: HelperData, cfg: FeConfig) -> Iterator[tuple[int, ...]]:
    """All responses consistent with the given helper data (toy scale only).

    Enumerates every length-(blocks*n) word whose per-block syndromes equal
    the helper. Feasible only for a single small block; used by the attack
    demonstration.
    """
    if cfg.blocks != 1 or cfg.code.n > 20:
        raise ValueError("coset enumeration is only supported at toy scale")
    n = cfg.code.n
    target = tuple(h.bits)
    from ._bits import bits_from_int

    for w in range(1 << n):
        word = bits_from_int(w, n)
        if bch.syndrome(word, cfg.code).bits == target:
            yield word


# -------------------------------------------------------- Monte-Carlo kernel

@dataclass(frozen=True)
class DecodeTables:
    """Vectorized decoding aids derived from the scalar codec."""

    parity: np.ndarray        # (n, n-k) uint8, row i = syndrome of unit i
    leaders: np.ndarray       # (2^(n-k),) int64 coset-leader bitmask, -1 if none
    info: np.ndarray          # (k,) info positions
    powers: np.ndarray        # (n-k,) uint64 bit weights for syndrome indexing


def build_decode_tables(code: bch.BchParams) -> DecodeTables:
    nk = code.n - code.k
    if nk > 20:
        raise ValueError("coset-leader table too large for this code")
    parity = np.zeros((code.n, nk), dtype=np.uint8)
    row_ints = []
    for i in range(code.n):
        word = [0] * code.n
        word[i] = 1
        s = bch.syndrome(word, code).bits
        parity[i] = s
        row_ints.append(int_from_bits(s))
    leaders = np.full(1 << nk, -1, dtype=np.int64)
    leaders[0] = 0
    for weight in range(1, code.t + 1):
        for positions in combinations(range(code.n), weight):
            idx = 0
            mask = 0
            for p in positions:
                idx ^= row_ints[p]
                mask |= 1 << p
            # distance 2t+1 guarantees distinct syndromes up to weight t
            assert leaders[idx] == -1
            leaders[idx] = mask
    return DecodeTables(
        parity=parity,
        leaders=leaders,
        info=np.array(code.info_positions, dtype=np.int64),
        powers=(np.uint64(1) << np.arange(nk, dtype=np.uint64)),
    )


def run_sessions(
    r: np.ndarray, e: np.ndarray, cfg: FeConfig, tables: DecodeTables | None = None
) -> np.ndarray:
    """Vectorized fe_gen/fe_rec outcome for pre-drawn inputs.

    r, e: uint8 arrays of shape (sessions, blocks, n); r is the enrolled
    response, r^e the device readout. Returns a bool array marking sessions
    whose recovery failed or produced a key different from the device's.
    """
    if tables is None:
        tables = build_decode_tables(cfg.code)
    readout = r ^ e
    helper = (readout.astype(np.uint8) @ tables.parity) & 1   # device side
    key_dev = readout[:, :, tables.info]
    s_prime = (r.astype(np.uint8) @ tables.parity) & 1        # prover side
    delta = (s_prime ^ helper).astype(np.uint64)
    idx = (delta * tables.powers).sum(axis=2)
    masks = tables.leaders[idx.astype(np.int64)]
    undecodable = (masks == -1).any(axis=1)
    bitpos = np.arange(cfg.code.n, dtype=np.uint64)
    errbits = ((masks[:, :, None].astype(np.uint64) >> bitpos) & 1).astype(np.uint8)
    corrected = r ^ errbits
    key_rec = corrected[:, :, tables.info]
    mismatch = (key_rec != key_dev).any(axis=(1, 2))
    return undecodable | mismatch


@dataclass(frozen=True)
class McResult:
    sessions: int
    failures: int

    @property
    def rate(self) -> float:
        return self.failures / self.sessions


def mc_key_failure(
    ber: float, cfg: FeConfig, sessions: int, seed: int, batch_size: int = 100_000
) -> McResult:
    """Empirical key-failure rate over simulated fe_gen/fe_rec sessions."""
    tables = build_decode_tables(cfg.code)
    rng = np.random.default_rng(seed)
    failures = 0
    remaining = sessions
    while remaining > 0:
        b = min(batch_size, remaining)
        shape = (b, cfg.blocks, cfg.code.n)
        r = rng.integers(0, 2, size=shape, dtype=np.uint8)
        e = (rng.random(size=shape) < ber).astype(np.uint8)
        failures += int(run_sessions(r, e, cfg, tables).sum())
        remaining -= b
    return McResult(sessions=sessions, failures=failures)
