"""Liouville-number inputs, gated selection of approximations, Cantor covers.

The selection gate replaces the paper-style universal polynomial bound with
the measured flow norms: a candidate (p, q) for stage k is accepted when

    |alpha - p/q| * M_k * 2 <= 2^-(k+2),
    M_k = max(||nu_k o f_k^t||_k, ||nu_{k-1} o f_{k-1}^t||_k)  (measured),

and the accepted entry stores every number needed to replay the inequality.
The gate half-width w_k = 2^-(k+2) / (2 M_k) doubles as the level-k interval
half-width of the K' cover, so the covering structure is exactly what the
certificates license.

Covers are kept implicit (center lattice + half-width per level): membership,
nesting, branching counts and canonical-element extraction are all O(levels)
integer/mpfr arithmetic, which is what makes level counts like q = 10^24
tractable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field

import gmpy2
from gmpy2 import mpfr

from .calculus import current_precision, from_hex, real, real_pow2, to_hex
from .errors import CertificateViolation, ConfigError, SelectionBudgetError

__all__ = [
    "AlphaSpec", "ApproxEntry", "ApproxSeq", "CantorCover",
    "select_next_q", "cover_Kprime", "cover_H", "pick_H_element",
]


class AlphaSpec:
    """A target number with a stream of rational approximations.

    kinds:
      {"kind": "liouville_constant", "base": b}
          alpha = sum_j b^-j! with convergents p_j/b^j!.
      {"kind": "digit_rule", "base": b, "exponents": [e_1 < e_2 < ...]}
          alpha = sum_j b^-e_j, convergents p_j/b^e_j (finite stream).
      {"kind": "explicit", "alpha": [p, q] | {"decimal": "..."},
       "pq": [[p_1, q_1], ...]}
          explicit approximations of an explicitly given alpha.
    """

    def __init__(self, config: dict):
        kind = config.get("kind")
        if kind not in ("liouville_constant", "digit_rule", "explicit"):
            raise ConfigError(f"unknown alpha kind {kind!r}")
        self.kind = kind
        self.config = dict(config)
        if kind in ("liouville_constant", "digit_rule"):
            base = config.get("base")
            if not isinstance(base, int) or base < 2:
                raise ConfigError("base must be an integer >= 2")
            self.base = base
            if kind == "digit_rule":
                exps = config.get("exponents")
                if (not isinstance(exps, list) or not exps
                        or any(not isinstance(e, int) or e < 1 for e in exps)
                        or any(b <= a for a, b in zip(exps, exps[1:]))):
                    raise ConfigError("exponents must be strictly increasing positive ints")
                self.exponents = list(exps)
        else:
            a = config.get("alpha")
            if isinstance(a, (list, tuple)) and len(a) == 2:
                self._alpha_pq = (int(a[0]), int(a[1]))
                if self._alpha_pq[1] <= 0:
                    raise ConfigError("alpha denominator must be positive")
            elif isinstance(a, dict) and "decimal" in a:
                self._alpha_pq = None
                self._alpha_decimal = str(a["decimal"])
            else:
                raise ConfigError("explicit alpha needs [p, q] or {'decimal': ...}")
            pq = config.get("pq")
            if not isinstance(pq, list) or not pq:
                raise ConfigError("explicit spec needs a nonempty pq list")
            prev = 0
            self.pq = []
            for item in pq:
                p, q = int(item[0]), int(item[1])
                if q <= prev:
                    raise ConfigError("pq list must have strictly increasing q")
                prev = q
                self.pq.append((p, q))

    def _exponent_stream(self):
        if self.kind == "liouville_constant":
            fact = 1
            for j in itertools.count(1):
                fact *= j
                yield fact
        else:
            yield from self.exponents

    def value(self) -> mpfr:
        """alpha at the ambient precision (series summed below one ulp)."""
        if self.kind == "explicit":
            if self._alpha_pq is not None:
                p, q = self._alpha_pq
                return mpfr(p) / mpfr(q)
            return mpfr(self._alpha_decimal)
        bits = current_precision()
        import math

        total = mpfr(0)
        for e in self._exponent_stream():
            if e * math.log2(self.base) > bits + 64:
                break
            total += 1 / mpfr(self.base) ** e
        return total

    def convergents(self):
        """Stream of (p, q), q strictly increasing.

        For series kinds, p_j/q_j is the truncated sum with q_j = b^{e_j};
        the defining quality |alpha - p_j/q_j| < 2 b^{-e_{j+1}} is re-checked
        numerically for the terms the run actually consumes.
        """
        if self.kind == "explicit":
            yield from self.pq
            return
        p = 0
        prev_e = 0
        for e in self._exponent_stream():
            p = p * self.base ** (e - prev_e) + 1
            prev_e = e
            yield (p, self.base ** e)

    def check_quality(self, p: int, q: int, next_q: int | None) -> None:
        """Assert the stream invariant |alpha - p/q| < 2/next_q (series kinds)."""
        if self.kind == "explicit" or next_q is None:
            return
        err = abs(self.value() - mpfr(p) / mpfr(q))
        if not err < 2 / mpfr(next_q):
            raise CertificateViolation(
                f"convergent p/q={p}/{q} misses its quality bound")


@dataclass(frozen=True)
class ApproxEntry:
    """Accepted stage approximation with its replayable gate certificate."""

    k: int
    p: int
    q: int
    err_hex: str          # |alpha - p/q|
    M_hex: str            # measured gate norm
    w_hex: str            # gate half-width 2^-(k+2) / (2 M)
    precision_bits: int
    norm_records: tuple = ()

    @property
    def err(self) -> mpfr:
        return from_hex(self.err_hex)

    @property
    def M(self) -> mpfr:
        return from_hex(self.M_hex)

    @property
    def w(self) -> mpfr:
        return from_hex(self.w_hex)

    def replay(self) -> bool:
        """Re-verify the gate inequality from the stored fields alone."""
        return self.err * self.M * 2 <= real_pow2(-(self.k + 2))

    def as_record(self) -> dict:
        return {
            "k": self.k, "p": str(self.p), "q": str(self.q),
            "err_hex": self.err_hex, "M_hex": self.M_hex, "w_hex": self.w_hex,
            "precision_bits": self.precision_bits,
            "norms": list(self.norm_records),
        }


@dataclass
class ApproxSeq:
    entries: list = dc_field(default_factory=list)

    def last_q(self) -> int:
        return self.entries[-1].q if self.entries else 1

    def entry(self, k: int) -> ApproxEntry:
        return self.entries[k - 1]

    def replay_all(self):
        for e in self.entries:
            if not e.replay():
                raise CertificateViolation(f"stage {e.k} certificate failed to replay")

    def qs(self):
        return [e.q for e in self.entries]


def select_next_q(alpha: AlphaSpec, k: int, builder, seq: ApproxSeq, *,
                  budget: int = 12, max_q_bits: int | None = None) -> ApproxEntry:
    """Walk the convergent stream until stage k's gate accepts a candidate.

    builder(k, p, q) must build the stage-k state for the candidate and
    return (err, M, precision_bits, norm_records) with err = |alpha - p/q|
    and M the measured gate norm.  Candidates violating the branching
    condition 1/q < w_{k-1} or the precision ceiling are skipped (reported in
    the raised error if the stream runs out).
    """
    if len(seq.entries) != k - 1:
        raise ConfigError(f"stage {k} selection needs exactly {k - 1} accepted entries")
    tried = []
    skipped = []
    prev_q = seq.last_q()
    w_prev = seq.entries[-1].w if seq.entries else None
    count = 0
    for p, q in alpha.convergents():
        if q <= prev_q or q < 2:
            continue
        if count >= budget:
            break
        if max_q_bits is not None and q.bit_length() > max_q_bits:
            skipped.append((q, "precision ceiling"))
            continue
        if w_prev is not None and not (1 / mpfr(q) < w_prev):
            skipped.append((q, "branching condition 1/q < w_{k-1}"))
            continue
        count += 1
        err, M, bits, records = builder(k, p, q)
        tried.append((p, q, to_hex(err), to_hex(M)))
        if err * M * 2 <= real_pow2(-(k + 2)):
            w = real_pow2(-(k + 2)) / (2 * M)
            return ApproxEntry(k, p, q, to_hex(err), to_hex(M), to_hex(w),
                               bits, tuple(records))
    raise SelectionBudgetError(
        k, tried,
        f"stage {k}: approximation stream exhausted after {len(tried)} candidates "
        f"(budget {budget}, {len(skipped)} skipped); the input's convergents "
        f"improve too slowly for this budget")


# ---------------------------------------------------------------------------
# Cantor covers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoverLevel:
    q: int
    w_hex: str            # half-width of the level's segments
    center_kind: str      # "integer" (p/q) or "odd_half" ((2p+1)/(2q))
    count: int            # segments at this level before intersection

    @property
    def w(self) -> mpfr:
        return from_hex(self.w_hex)

    def center(self, p: int) -> mpfr:
        if self.center_kind == "integer":
            return mpfr(p) / self.q
        return mpfr(2 * p + 1) / (2 * self.q)

    def nearest_index(self, tau) -> int:
        if self.center_kind == "integer":
            p = int(gmpy2.floor(tau * self.q + mpfr(1) / 2))
            return min(max(p, 0), self.count - 1)
        p = int(gmpy2.floor(tau * self.q))
        return min(max(p, 0), self.count - 1)

    def member(self, tau) -> bool:
        p = self.nearest_index(tau)
        return abs(tau - self.center(p)) <= self.w


@dataclass
class CantorCover:
    kind: str                 # "Kprime" | "H"
    levels: list              # CoverLevel, shallowest first
    shift: int = 0            # integer part added back for K = K' + [alpha]

    def member(self, tau) -> bool:
        tau = real(tau) - self.shift
        return all(level.member(tau) for level in self.levels)

    def min_children(self) -> list:
        """For each consecutive level pair, a lower bound on the number of
        next-level segments fully inside any current segment (exact lattice
        arithmetic, no enumeration)."""
        out = []
        for a, b in zip(self.levels, self.levels[1:]):
            # centers of level b lie on a lattice of spacing 1/q_b; a segment
            # of half-width w_a admits children with center in a window of
            # length 2(w_a - w_b) regardless of its position
            window = 2 * (a.w - b.w)
            if window <= 0:
                out.append(0)
                continue
            out.append(max(int(gmpy2.floor(window * b.q)) - 1, 0))
        return out

    def assert_nested(self):
        for a, b in zip(self.levels, self.levels[1:]):
            if not b.w < a.w:
                raise CertificateViolation(
                    f"{self.kind} cover level widths fail to shrink")


def cover_Kprime(seq: ApproxSeq, level: int, alpha_floor: int = 0) -> CantorCover:
    """Level-wise cover of K' from the stored gate certificates.

    Level k uses segments [p/q_k - w_k, p/q_k + w_k], 0 <= p <= q_k, with the
    certificate half-width w_k; the intersection across levels is evaluated
    implicitly through per-level membership.
    """
    if level > len(seq.entries):
        raise ConfigError(f"cover needs {level} accepted entries")
    levels = []
    for e in seq.entries[:level]:
        levels.append(CoverLevel(e.q, e.w_hex, "integer", e.q + 1))
    cover = CantorCover("Kprime", levels, shift=alpha_floor)
    cover.assert_nested()
    return cover


def cover_H(seq: ApproxSeq, k0: int, level: int) -> CantorCover:
    """H_{k0} cover through the given level: segments
    [(2p+1)/(2 q_l) - 1/(4 q_l), (2p+1)/(2 q_l) + 1/(4 q_l)], k0 <= l <= level."""
    if level > len(seq.entries):
        raise ConfigError(f"H cover needs {level} accepted entries")
    if not 1 <= k0 <= level:
        raise ConfigError("need 1 <= k0 <= level")
    levels = []
    for e in seq.entries[k0 - 1: level]:
        w = 1 / (4 * mpfr(e.q))
        levels.append(CoverLevel(e.q, to_hex(w), "odd_half", e.q))
    cover = CantorCover("H", levels)
    cover.assert_nested()
    return cover


def pick_H_element(cover: CantorCover, depth: int) -> mpfr:
    """Canonical element: always descend into the lowest-center surviving
    segment; returns the center at the requested depth."""
    if depth < 1 or depth > len(cover.levels):
        raise ConfigError(f"depth {depth} outside cover levels")
    lo = mpfr(0)
    hi = mpfr(1)
    center = None
    for level in cover.levels[:depth]:
        found = None
        # lowest center whose segment fits inside the current interval
        if level.center_kind == "odd_half":
            p_min = int(gmpy2.ceil((lo + level.w) * 2 * level.q - 1) // 2)
        else:
            p_min = int(gmpy2.ceil((lo + level.w) * level.q))
        for p in range(max(p_min - 1, 0), max(p_min + 3, 3)):
            if p >= level.count:
                break
            c = level.center(p)
            if c - level.w >= lo and c + level.w <= hi:
                found = (p, c)
                break
        if found is None:
            raise CertificateViolation(
                f"{cover.kind} cover empty below [{lo}, {hi}] at q={level.q}")
        _, center = found
        lo = center - level.w
        hi = center + level.w
    return center
