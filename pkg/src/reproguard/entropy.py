"""Binary/multi-symbol range coder and probability tables.

Pure integer arithmetic throughout: a 32-bit range, a low accumulator that
may momentarily exceed 32 bits before its carry is folded into already
buffered bytes, and byte-at-a-time renormalization that keeps
``range >= 2**24`` between symbols.  Probabilities are 16-bit
(``Prob16``, the chance of bit 0, clamped to [1, 65535]) so both ends of
the wire share the exact same integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError, MalformedStreamError, TruncatedStreamError
from .safeguard import FlagStream, GuardMode

__all__ = [
    "RangeEncoder",
    "RangeDecoder",
    "prob_to_p16",
    "prob_to_p16_array",
    "encode_flags",
    "decode_flags",
    "FlagReader",
    "CdfTable",
    "gaussian_cdf_table",
]

_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_P16_ONE = 1 << 16


def prob_to_p16(v: float) -> int:
    """Prob16 of bit 0 for a bit-1 probability ``v`` in [0, 1]."""
    if not 0.0 <= v <= 1.0:
        raise InvalidInputError(f"probability {v!r} outside [0, 1] after clipping")
    p = 65536 - int(math.floor(v * 65536.0 + 0.5))
    return min(max(p, 1), 65535)


def prob_to_p16_array(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0.0) or np.any(v > 1.0):
        raise InvalidInputError("probability outside [0, 1] after clipping")
    p = 65536 - np.floor(v * 65536.0 + 0.5).astype(np.int64)
    return np.clip(p, 1, 65535)


class RangeEncoder:
    """Arithmetic encoder writing most-significant bytes first."""

    def __init__(self) -> None:
        self.low = 0
        self.range = _MASK32
        self._buf = bytearray()

    def _carry(self) -> None:
        # nested coding intervals guarantee a byte exists to receive it
        buf = self._buf
        i = len(buf) - 1
        while buf[i] == 0xFF:
            buf[i] = 0
            i -= 1
        buf[i] += 1

    def encode_bit(self, bit: int, p16: int) -> None:
        r0 = (self.range >> 16) * p16
        if bit:
            low = self.low + r0
            if low > _MASK32:
                self._carry()
                low &= _MASK32
            self.low = low
            self.range -= r0
        else:
            self.range = r0
        while self.range < _TOP:
            self._buf.append(self.low >> 24)
            self.low = (self.low << 8) & _MASK32
            self.range <<= 8

    def encode_bits(self, bits, p16s) -> None:
        """Hot path: same coding as encode_bit, loop kept local."""
        low = self.low
        rng = self.range
        buf = self._buf
        for bit, p16 in zip(bits.tolist(), p16s.tolist()):
            r0 = (rng >> 16) * p16
            if bit:
                low += r0
                if low > _MASK32:
                    i = len(buf) - 1
                    while buf[i] == 0xFF:
                        buf[i] = 0
                        i -= 1
                    buf[i] += 1
                    low &= _MASK32
                rng -= r0
            else:
                rng = r0
            while rng < _TOP:
                buf.append(low >> 24)
                low = (low << 8) & _MASK32
                rng <<= 8
        self.low = low
        self.range = rng

    def encode_symbol(self, cum: tuple[int, ...], sym: int) -> None:
        """Code one symbol against a cumulative table summing to 65536."""
        r = self.range >> 16
        lo_cum = cum[sym]
        low = self.low + r * lo_cum
        if low > _MASK32:
            self._carry()
            low &= _MASK32
        self.low = low
        self.range = r * (cum[sym + 1] - lo_cum)
        while self.range < _TOP:
            self._buf.append(self.low >> 24)
            self.low = (self.low << 8) & _MASK32
            self.range <<= 8

    def finish(self) -> bytes:
        for _ in range(4):
            self._buf.append(self.low >> 24)
            self.low = (self.low << 8) & _MASK32
        return bytes(self._buf)


class RangeDecoder:
    """Mirror of RangeEncoder; raises TruncatedStreamError past the end."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise TruncatedStreamError("range-coded stream ended early")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode_bit(self, p16: int) -> int:
        r0 = (self.range >> 16) * p16
        if self.code < r0:
            bit = 0
            self.range = r0
        else:
            bit = 1
            self.code -= r0
            self.range -= r0
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.range <<= 8
        return bit

    def decode_bits(self, p16s) -> np.ndarray:
        n = len(p16s)
        out = np.empty(n, dtype=np.uint8)
        code = self.code
        rng = self.range
        data = self._data
        pos = self._pos
        end = len(data)
        for i, p16 in enumerate(p16s.tolist()):
            r0 = (rng >> 16) * p16
            if code < r0:
                out[i] = 0
                rng = r0
            else:
                out[i] = 1
                code -= r0
                rng -= r0
            while rng < _TOP:
                if pos >= end:
                    raise TruncatedStreamError("range-coded stream ended early")
                code = ((code << 8) | data[pos]) & _MASK32
                pos += 1
                rng <<= 8
        self.code = code
        self.range = rng
        self._pos = pos
        return out

    def decode_symbol(self, cum: tuple[int, ...]) -> int:
        r = self.range >> 16
        target = self.code // r
        if target > 65535:
            target = 65535
        # cum is sorted; bisect for the owning symbol
        lo, hi = 0, len(cum) - 1
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cum[mid] <= target:
                lo = mid
            else:
                hi = mid
        self.code -= r * cum[lo]
        self.range = r * (cum[lo + 1] - cum[lo])
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.range <<= 8
        return lo


# ---------------------------------------------------------------------------
# flag stream coding


def encode_flags(stream: FlagStream, mode: GuardMode) -> bytes:
    """Code risky flags at p0_q16; FULL interleaves each direction flag
    right after its risky flag at an even split."""
    if len(stream) == 0:
        return b""
    enc = RangeEncoder()
    p0 = stream.p0_q16
    full = mode == GuardMode.FULL
    fr = stream.f_r.tolist()
    fd = stream.f_d.tolist()
    for r, d in zip(fr, fd):
        enc.encode_bit(r, p0)
        if full and r:
            if d < 0:
                raise InvalidInputError("risky flag without direction in FULL mode")
            enc.encode_bit(d, 32768)
    return enc.finish()


class FlagReader:
    """Sequential flag decoder, consumed in lockstep with critical values."""

    def __init__(self, data: bytes, count: int, p0_q16: int, mode: GuardMode) -> None:
        if not 1 <= p0_q16 <= 65535:
            raise MalformedStreamError(f"p0_q16 {p0_q16} outside [1, 65535]")
        self._count = count
        self._taken = 0
        self._p0 = p0_q16
        self._full = mode == GuardMode.FULL
        self._dec = RangeDecoder(data) if count > 0 else None

    def take(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Next ``k`` (f_r, f_d) pairs; f_d is -1 where absent."""
        if self._taken + k > self._count:
            raise MalformedStreamError("more flags requested than declared")
        fr = np.empty(k, dtype=np.uint8)
        fd = np.full(k, -1, dtype=np.int8)
        dec = self._dec
        for i in range(k):
            r = dec.decode_bit(self._p0)
            fr[i] = r
            if self._full and r:
                fd[i] = dec.decode_bit(32768)
        self._taken += k
        return fr, fd

    @property
    def exhausted(self) -> bool:
        return self._taken == self._count


def decode_flags(data: bytes, count: int, p0_q16: int, mode: GuardMode) -> FlagStream:
    reader = FlagReader(data, count, p0_q16, mode)
    fr, fd = reader.take(count)
    stream = FlagStream.from_arrays(fr, fd if mode == GuardMode.FULL else None)
    # keep the wire probability, not one re-derived from the decoded flags
    return FlagStream(stream.f_r, stream.f_d, stream.p0, p0_q16)


# ---------------------------------------------------------------------------
# Gaussian cumulative tables


def _phi(x: float) -> float:
    """Standard normal CDF via the Abramowitz-Stegun 7.1.26 erf polynomial."""
    z = x / math.sqrt(2.0)
    sign = 1.0
    if z < 0.0:
        sign = -1.0
        z = -z
    t = 1.0 / (1.0 + 0.3275911 * z)
    poly = t * (
        0.254829592
        + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429)))
    )
    erf = 1.0 - poly * math.exp(-z * z)
    return 0.5 * (1.0 + sign * erf)


@dataclass(frozen=True)
class CdfTable:
    """Frequencies over symbols -A..A summing to 65536, each at least 1."""

    amplitude: int
    freq: tuple[int, ...]
    cum: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.freq) != 2 * self.amplitude + 1:
            raise InvalidInputError("frequency table size mismatch")
        if self.cum[0] != 0 or self.cum[-1] != _P16_ONE:
            raise InvalidInputError("cumulative table must span [0, 65536]")

    def symbol_of(self, value: int) -> int:
        if abs(value) > self.amplitude:
            raise InvalidInputError("value outside table amplitude")
        return value + self.amplitude

    def value_of(self, sym: int) -> int:
        return sym - self.amplitude


@lru_cache(maxsize=512)
def gaussian_cdf_table(sigma: float, amplitude: int = 32) -> CdfTable:
    """Quantized zero-mean Gaussian over integers in [-amplitude, amplitude].

    The distribution is truncated to the alphabet and renormalized (so a very
    wide Gaussian tends to a uniform table), every frequency is at least one,
    and the total is exactly 65536.  Pure function of its arguments.
    """
    if not (math.isfinite(sigma) and sigma > 0.0):
        raise InvalidInputError(f"sigma must be positive and finite, got {sigma!r}")
    if amplitude < 1:
        raise InvalidInputError("amplitude must be >= 1")
    a = int(amplitude)

    # one-sided masses; the negative side mirrors them exactly.  The center
    # mass is a difference against the approximation's own value at zero so
    # the polynomial's small constant bias cancels like in every other bin.
    w = [2.0 * (_phi(0.5 / sigma) - _phi(0.0))]
    for k in range(1, a + 1):
        w.append(_phi((k + 0.5) / sigma) - _phi((k - 0.5) / sigma))

    total = w[0] + 2.0 * sum(w[1:])
    ideal = [x * 65536.0 / total for x in w]

    m = [max(1, int(math.floor(ideal[k]))) for k in range(1, a + 1)]
    rem = [ideal[k] - math.floor(ideal[k]) for k in range(1, a + 1)]

    def center() -> int:
        return 65536 - 2 * sum(m)

    # steer the center frequency toward its ideal share, two units per step
    order = sorted(range(a), key=lambda i: (-rem[i], i))
    oi = 0
    while center() > ideal[0] + 1.0 and oi < len(order):
        m[order[oi]] += 1
        oi += 1
    shrink = sorted(range(a), key=lambda i: (rem[i], i))
    si = 0
    while center() < 1 and si < len(shrink):
        if m[shrink[si]] > 1:
            m[shrink[si]] -= 1
        si += 1
    c = center()
    if c < 1:
        raise InvalidInputError("cannot renormalize table to 65536")

    freq = list(reversed(m)) + [c] + m
    cum = [0]
    for f in freq:
        cum.append(cum[-1] + f)
    return CdfTable(amplitude=a, freq=tuple(freq), cum=tuple(cum))
