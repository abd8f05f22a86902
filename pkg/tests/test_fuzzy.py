"""Reverse fuzzy extractor tests.

Frozen analytic values were computed by a standalone exact-arithmetic
script (Fraction-based binomial CDF, direct log2 evaluation) before being
pinned here.
"""

import random
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crfidsim import bch, fuzzy

# frozen oracle values
PFAIL_DEFAULT_AT_0094 = 0.0016031772430667986
PFAIL_63_5_AT_0094 = 7.450640477041816e-07
HMIN_BIAS_4990 = 127.28513788378592
HMIN_BIAS_5374 = 102.19107983699828


def toy_config() -> fuzzy.FeConfig:
    return fuzzy.FeConfig(code=bch.make_code(7, 4, 1), blocks=1)


def cfg63() -> fuzzy.FeConfig:
    return fuzzy.FeConfig(code=bch.make_code(63, 24, 7), blocks=5)


def random_response(rng: random.Random, cfg: fuzzy.FeConfig) -> tuple[int, ...]:
    return tuple(rng.randint(0, 1) for _ in range(cfg.response_bits))


def flip_within_t(rng, r, cfg, max_flips=None):
    """Flip at most min(t, max_flips) bits in every block."""
    out = list(r)
    n, t = cfg.code.n, cfg.code.t
    limit = t if max_flips is None else min(t, max_flips)
    total = 0
    for b in range(cfg.blocks):
        for p in rng.sample(range(n), rng.randint(0, limit)):
            out[b * n + p] ^= 1
            total += 1
    return tuple(out), total


def test_default_config_shape():
    cfg = fuzzy.default_config()
    assert cfg.response_bits == 248
    assert cfg.key_bits == 128
    assert cfg.helper_bits == 120


def test_fe_gen_all_zeros_toy():
    key, helper = fuzzy.fe_gen((0,) * 7, toy_config())
    assert helper.bits == (0, 0, 0)
    assert key.bits == (0, 0, 0, 0)


def test_fe_gen_output_lengths_default():
    cfg = fuzzy.default_config()
    rng = random.Random(3)
    key, helper = fuzzy.fe_gen(random_response(rng, cfg), cfg)
    assert len(helper) == 120
    assert len(key) == 128
    assert len(key.as_bytes()) == 16


def test_fe_gen_length_mismatch():
    with pytest.raises(ValueError):
        fuzzy.fe_gen((0,) * 100, fuzzy.default_config())


def test_fe_rec_length_mismatch():
    cfg = fuzzy.default_config()
    with pytest.raises(ValueError):
        fuzzy.fe_rec((0,) * 100, fuzzy.HelperData((0,) * 120), cfg)
    with pytest.raises(ValueError):
        fuzzy.fe_rec((0,) * 248, fuzzy.HelperData((0,) * 15), cfg)


def test_noiseless_self_consistency():
    cfg = fuzzy.default_config()
    rng = random.Random(11)
    for _ in range(20):
        r = random_response(rng, cfg)
        key, helper = fuzzy.fe_gen(r, cfg)
        assert fuzzy.fe_rec(r, helper, cfg).bits == key.bits


@pytest.mark.parametrize("make_cfg", [fuzzy.default_config, cfg63, toy_config])
def test_recovery_with_noise_within_t(make_cfg):
    cfg = make_cfg()
    rng = random.Random(42)
    for _ in range(60):
        r = random_response(rng, cfg)
        key, helper = fuzzy.fe_gen(r, cfg)
        noisy_prime, _ = flip_within_t(rng, r, cfg)
        # prover holds noisy_prime as its enrolled copy; device read r
        assert fuzzy.fe_rec(noisy_prime, helper, cfg).bits == key.bits


def test_heavy_noise_fails_or_mismatches():
    cfg = fuzzy.default_config()
    rng = random.Random(17)
    bad = 0
    for _ in range(100):
        r = random_response(rng, cfg)
        key, helper = fuzzy.fe_gen(r, cfg)
        noisy = list(r)
        for p in rng.sample(range(31), 7):  # 7 flips in block 0
            noisy[p] ^= 1
        try:
            rec = fuzzy.fe_rec(tuple(noisy), helper, cfg)
            if rec.bits != key.bits:
                bad += 1
        except fuzzy.KeyRecoveryFailure:
            bad += 1
    assert bad == 100


def test_reusability_multiple_helper_exposures():
    # two noisy readouts of the same enrolled response give different helper
    # data, yet the prover recovers each session's key from its stored copy
    cfg = fuzzy.default_config()
    rng = random.Random(8)
    enrolled = random_response(rng, cfg)
    readout1, flips1 = flip_within_t(rng, enrolled, cfg, max_flips=1)
    readout2, _ = flip_within_t(rng, enrolled, cfg, max_flips=2)
    key1, h1 = fuzzy.fe_gen(readout1, cfg)
    key2, h2 = fuzzy.fe_gen(readout2, cfg)
    assert h1.bits != h2.bits or readout1 == readout2
    assert fuzzy.fe_rec(enrolled, h1, cfg).bits == key1.bits
    assert fuzzy.fe_rec(enrolled, h2, cfg).bits == key2.bits


def test_key_failure_prob_paper_points():
    assert fuzzy.key_failure_prob(0.0094, fuzzy.default_config()) == pytest.approx(
        PFAIL_DEFAULT_AT_0094, rel=1e-12
    )
    assert fuzzy.key_failure_prob(0.0094, cfg63()) == pytest.approx(
        PFAIL_63_5_AT_0094, rel=1e-12
    )
    # published working-point values
    assert abs(fuzzy.key_failure_prob(0.0094, fuzzy.default_config()) - 0.0016) < 5e-5
    assert fuzzy.key_failure_prob(0.0094, cfg63()) == pytest.approx(7.4506e-7, rel=0.02)


def test_key_failure_prob_edges():
    cfg = fuzzy.default_config()
    assert fuzzy.key_failure_prob(0.0, cfg) == 0.0
    assert fuzzy.key_failure_prob(1.0, cfg) == 1.0
    with pytest.raises(ValueError):
        fuzzy.key_failure_prob(-0.1, cfg)


def test_key_failure_prob_runtime():
    cfg = fuzzy.default_config()
    start = time.perf_counter()
    for _ in range(100):
        fuzzy.key_failure_prob(0.0094, cfg)
    assert time.perf_counter() - start < 1.0


def test_residual_min_entropy_values():
    cfg = fuzzy.default_config()
    assert fuzzy.residual_min_entropy(0.5, cfg) == 128.0
    assert fuzzy.residual_min_entropy(0.4990, cfg) == pytest.approx(
        HMIN_BIAS_4990, rel=1e-12
    )
    assert fuzzy.residual_min_entropy(0.5374, cfg) == pytest.approx(
        HMIN_BIAS_5374, rel=1e-12
    )
    assert fuzzy.residual_min_entropy(0.5374, cfg) < 128.0


@settings(max_examples=80, deadline=None)
@given(st.floats(0.001, 0.499))
def test_residual_min_entropy_symmetric_and_below_max(delta):
    cfg = fuzzy.default_config()
    lo = fuzzy.residual_min_entropy(0.5 - delta, cfg)
    hi = fuzzy.residual_min_entropy(0.5 + delta, cfg)
    assert lo == pytest.approx(hi, rel=1e-9)
    assert lo < 128.0


def test_residual_min_entropy_monotone_in_deviation():
    cfg = fuzzy.default_config()
    values = [fuzzy.residual_min_entropy(0.5 + d, cfg) for d in np.linspace(0, 0.45, 50)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_coset_candidates_toy_size():
    cfg = toy_config()
    rng = random.Random(2)
    r = random_response(rng, cfg)
    _, helper = fuzzy.fe_gen(r, cfg)
    candidates = list(fuzzy.coset_candidates(helper, cfg))
    assert len(candidates) == 16
    assert r in candidates
    # candidates are exactly one syndrome coset
    for c in candidates:
        assert bch.syndrome(c, cfg.code).bits == helper.bits


def test_coset_candidates_rejects_full_scale():
    with pytest.raises(ValueError):
        list(fuzzy.coset_candidates(fuzzy.HelperData((0,) * 120), fuzzy.default_config()))


def test_vectorized_kernel_matches_scalar_api():
    cfg = fuzzy.default_config()
    rng = np.random.default_rng(77)
    sessions = 1500
    shape = (sessions, cfg.blocks, cfg.code.n)
    r = rng.integers(0, 2, size=shape, dtype=np.uint8)
    # mixed noise: mostly light, some blocks pushed past t
    e = (rng.random(size=shape) < 0.03).astype(np.uint8)
    failed_vec = fuzzy.run_sessions(r, e, cfg)
    for s in range(sessions):
        enrolled = tuple(int(b) for b in r[s].reshape(-1))
        readout = tuple(int(b) for b in (r[s] ^ e[s]).reshape(-1))
        key_dev, helper = fuzzy.fe_gen(readout, cfg)
        try:
            recovered = fuzzy.fe_rec(enrolled, helper, cfg)
            scalar_failed = recovered.bits != key_dev.bits
        except fuzzy.KeyRecoveryFailure:
            scalar_failed = True
        assert scalar_failed == bool(failed_vec[s]), f"session {s}"


def test_mc_key_failure_converges_small():
    # 10^5-session smoke run; the full 10^6 criterion lives in the
    # acceptance suite
    cfg = fuzzy.default_config()
    res = fuzzy.mc_key_failure(0.0094, cfg, sessions=100_000, seed=9)
    p = PFAIL_DEFAULT_AT_0094
    se = (p * (1 - p) / res.sessions) ** 0.5
    assert abs(res.rate - p) < 4 * se


def test_decode_tables_reject_large_code():
    with pytest.raises(ValueError):
        fuzzy.build_decode_tables(bch.make_code(63, 24, 7))
