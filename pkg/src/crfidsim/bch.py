"""Binary BCH(n,k,t) codecs over GF(2^m).

Provides syndrome computation and bounded-distance correction toward an
arbitrary target syndrome, which is the primitive the key-derivation layer
needs: given a noisy word and the syndrome of the original, recover the
original as long as they differ in at most t positions.

Conventions:
* words and syndromes are 0/1 sequences, coefficient-ascending
  (bits[i] is the coefficient of x^i);
* polynomials are also handled internally as int bitmasks with bit i = x^i;
* the information set is the message half of the systematic construction
  c(x) = x^(n-k) m(x) + (x^(n-k) m(x) mod g(x)), i.e. positions n-k .. n-1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from ._bits import bits_from_int, int_from_bits

# primitive field polynomials, keyed by extension degree m
FIELD_POLYS = {
    3: 0b1011,         # x^3 + x + 1
    5: 0b100101,       # x^5 + x^2 + 1
    6: 0b1000011,      # x^6 + x + 1
}

# the three supported (n, k, t) triples and their field degree
SUPPORTED_CODES = {
    (7, 4, 1): 3,
    (31, 16, 3): 5,
    (63, 24, 7): 6,
}


class UnsupportedCodeError(ValueError):
    """Raised for (n, k, t) triples outside the supported set."""


class DecodeFailure(Exception):
    """No word within distance t of the input has the target syndrome."""


@dataclass(frozen=True)
class BchParams:
    n: int
    k: int
    t: int
    m: int
    field_poly: int
    generator_poly: int
    info_positions: tuple[int, ...]


@dataclass(frozen=True)
class Syndrome:
    bits: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.bits)


class GaloisField:
    """GF(2^m) arithmetic via exp/log tables."""

    def __init__(self, m: int, field_poly: int):
        self.m = m
        self.size = 1 << m
        self.order = self.size - 1
        exp = [0] * (2 * self.order)
        log = [0] * self.size
        x = 1
        for i in range(self.order):
            exp[i] = x
            log[x] = i
            x <<= 1
            if x & self.size:
                x ^= field_poly
        for i in range(self.order, 2 * self.order):
            exp[i] = exp[i - self.order]
        self.exp = exp
        self.log = log

    def multiply(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return self.exp[self.log[a] + self.log[b]]

    def inverse(self, a: int) -> int:
        if a == 0:
            raise ZeroDivisionError("no inverse of 0")
        return self.exp[self.order - self.log[a]]

    def alpha_power(self, i: int) -> int:
        return self.exp[i % self.order]

    def poly_eval(self, coeffs: Sequence[int], x: int) -> int:
        """Evaluate a polynomial (coeffs[i] for x^i) at a field element."""
        acc = 0
        for c in reversed(coeffs):
            acc = self.multiply(acc, x) ^ c
        return acc


@lru_cache(maxsize=None)
def _field(m: int, field_poly: int) -> GaloisField:
    return GaloisField(m, field_poly)


def _poly_mul_gf2(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
    return r


def _poly_mod_gf2(a: int, mod: int) -> int:
    dm = mod.bit_length() - 1
    while a and a.bit_length() - 1 >= dm:
        a ^= mod << (a.bit_length() - 1 - dm)
    return a


def _cyclotomic_coset(rep: int, n: int) -> list[int]:
    coset = []
    j = rep
    while j not in coset:
        coset.append(j)
        j = (j * 2) % n
    return coset


def _minimal_poly(rep: int, gf: GaloisField) -> int:
    """Minimal polynomial of alpha^rep: prod over the coset of (x - alpha^j)."""
    coeffs = [1]
    for j in _cyclotomic_coset(rep, gf.order):
        root = gf.alpha_power(j)
        nxt = [0] * (len(coeffs) + 1)
        for i, c in enumerate(coeffs):
            nxt[i + 1] ^= c
            nxt[i] ^= gf.multiply(c, root)
        coeffs = nxt
    # minimal polynomials of field elements always land in GF(2)
    assert all(c in (0, 1) for c in coeffs)
    return int_from_bits(coeffs)


@lru_cache(maxsize=None)
def make_code(n: int, k: int, t: int) -> BchParams:
    """Build parameters for one of the supported codes.

    The generator polynomial is the lcm of the minimal polynomials of
    alpha^1 .. alpha^2t, assembled by multiplying one minimal polynomial per
    cyclotomic coset.
    """
    try:
        m = SUPPORTED_CODES[(n, k, t)]
    except KeyError:
        raise UnsupportedCodeError(f"unsupported BCH parameters ({n},{k},{t})")
    gf = _field(m, FIELD_POLYS[m])
    reps: list[int] = []
    covered: set[int] = set()
    for i in range(1, 2 * t + 1):
        if i in covered:
            continue
        reps.append(i)
        covered.update(_cyclotomic_coset(i, n))
    g = 1
    for rep in reps:
        g = _poly_mul_gf2(g, _minimal_poly(rep, gf))
    assert g.bit_length() - 1 == n - k
    return BchParams(
        n=n, k=k, t=t, m=m,
        field_poly=FIELD_POLYS[m],
        generator_poly=g,
        info_positions=tuple(range(n - k, n)),
    )


def _check_word(word: Sequence[int], code: BchParams) -> int:
    if len(word) != code.n:
        raise ValueError(f"word length {len(word)} != n={code.n}")
    return int_from_bits(word)


def syndrome(word: Sequence[int], code: BchParams) -> Syndrome:
    """Remainder of the word polynomial mod g(x), as n-k bits."""
    w = _check_word(word, code)
    rem = _poly_mod_gf2(w, code.generator_poly)
    return Syndrome(bits_from_int(rem, code.n - code.k))


def encode(message: Sequence[int], code: BchParams) -> tuple[int, ...]:
    """Systematic encoding; message bits occupy the information positions."""
    if len(message) != code.k:
        raise ValueError(f"message length {len(message)} != k={code.k}")
    shifted = int_from_bits(message) << (code.n - code.k)
    rem = _poly_mod_gf2(shifted, code.generator_poly)
    return bits_from_int(shifted | rem, code.n)


def _power_sums(y: int, code: BchParams) -> list[int]:
    """S_j = y(alpha^j) for j = 1 .. 2t."""
    gf = _field(code.m, code.field_poly)
    positions = [i for i in range(code.n) if (y >> i) & 1]
    sums = []
    for j in range(1, 2 * code.t + 1):
        acc = 0
        for i in positions:
            acc ^= gf.exp[(i * j) % gf.order]
        sums.append(acc)
    return sums


def _berlekamp_massey(syndromes: list[int], gf: GaloisField) -> list[int]:
    """Error locator polynomial (coeffs[i] for x^i) from power sums."""
    c = [1]
    b = [1]
    lam = 0
    shift = 1
    prev_disc = 1
    for idx, s in enumerate(syndromes):
        d = s
        for i in range(1, lam + 1):
            if i < len(c):
                d ^= gf.multiply(c[i], syndromes[idx - i])
        if d == 0:
            shift += 1
            continue
        coef = gf.multiply(d, gf.inverse(prev_disc))
        adj = [0] * shift + [gf.multiply(coef, bb) for bb in b]
        if 2 * lam <= idx:
            b = c[:]
            prev_disc = d
            lam = idx + 1 - lam
            shift = 1
        else:
            shift += 1
        if len(adj) > len(c):
            c = c + [0] * (len(adj) - len(c))
        for i, a in enumerate(adj):
            c[i] ^= a
    return c[: lam + 1]


def _chien_search(locator: list[int], code: BchParams) -> list[int]:
    """Positions i where alpha^-i is a root of the locator."""
    gf = _field(code.m, code.field_poly)
    return [
        i for i in range(code.n)
        if gf.poly_eval(locator, gf.alpha_power(-i % gf.order)) == 0
    ]


def correct(word: Sequence[int], target: Syndrome, code: BchParams) -> tuple[int, ...]:
    """Return the unique w with syndrome(w) = target and HD(word, w) <= t.

    Raises DecodeFailure when no such word exists. The difference between the
    input and the result is found by Berlekamp-Massey over the power sums of
    the syndrome delta, followed by an exhaustive (Chien) root search.
    """
    w = _check_word(word, code)
    if len(target.bits) != code.n - code.k:
        raise ValueError("target syndrome length mismatch")
    target_int = int_from_bits(target.bits)
    delta = _poly_mod_gf2(w, code.generator_poly) ^ target_int
    if delta == 0:
        return bits_from_int(w, code.n)
    # delta, read as a low-degree word, lies in the same coset as the error
    sums = _power_sums(delta, code)
    gf = _field(code.m, code.field_poly)
    locator = _berlekamp_massey(sums, gf)
    degree = len(locator) - 1
    if degree > code.t:
        raise DecodeFailure("error weight exceeds t")
    roots = _chien_search(locator, code)
    if len(roots) != degree:
        raise DecodeFailure("locator does not split over the field")
    err = 0
    for i in roots:
        err |= 1 << i
    fixed = w ^ err
    if _poly_mod_gf2(fixed, code.generator_poly) != target_int:
        raise DecodeFailure("corrected word misses the target syndrome")
    return bits_from_int(fixed, code.n)
