"""Deterministic simulation of cross-platform numerical mismatch.

Perturbations are counter-based: draw ``i`` depends only on (seed,
counter+i), so a sequence is reproducible no matter how calls are batched.
The adversarial distribution shifts every value straight toward its nearest
grid boundary, crossing it whenever the error budget allows, which is the
worst case for an unprotected codec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError
from .quantizer import QuantGrid, round_index_array

__all__ = [
    "splitmix64",
    "splitmix64_array",
    "unit_from_u64",
    "Perturbation",
    "PRESETS",
    "preset",
]

_M64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    """One splitmix64 finalization of a 64-bit state."""
    z = (x + _GOLDEN) & _M64
    z = ((z ^ (z >> 30)) * _MIX1) & _M64
    z = ((z ^ (z >> 27)) * _MIX2) & _M64
    return z ^ (z >> 31)


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (x + np.uint64(_GOLDEN)).astype(np.uint64)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def unit_from_u64(z) -> np.ndarray | float:
    """Map 64-bit words to doubles in [0, 1) using the top 53 bits."""
    if isinstance(z, np.ndarray):
        return (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
    return float(z >> 11) * (2.0 ** -53)


_DISTS = ("none", "uniform", "adversarial")

# worst observed reconstruction errors for the supported platform pairs
PRESETS = {
    "pcc-gpu": 5e-7,
    "image-gpu": 8e-6,
}


@dataclass
class Perturbation:
    """Stateful injector; ``counter`` advances once per perturbed value."""

    e_max: float
    dist: str = "uniform"
    seed: int = 0
    counter: int = field(default=0)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.e_max) and self.e_max >= 0.0):
            raise ConfigError(f"e_max must be finite and >= 0, got {self.e_max!r}")
        if self.dist not in _DISTS:
            raise ConfigError(f"dist must be one of {_DISTS}, got {self.dist!r}")
        self.seed = int(self.seed) & _M64
        self.counter = int(self.counter)

    @classmethod
    def none(cls) -> "Perturbation":
        return cls(e_max=0.0, dist="none")

    def reset(self, counter: int = 0) -> None:
        self.counter = counter

    def _draw_units(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
            state = np.uint64(self.seed) + idx * np.uint64(_GOLDEN)
        return unit_from_u64(splitmix64_array(state))

    def perturb_array(self, v, grid: QuantGrid) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("values must be finite")
        n = v.shape[0]
        if self.dist == "none" or self.e_max == 0.0:
            self.counter += n
            out = v.copy()
        elif self.dist == "uniform":
            u = self._draw_units(n)
            self.counter += n
            out = v + (2.0 * u - 1.0) * self.e_max
        else:  # adversarial: full-budget shift toward the nearest boundary
            _, bv = round_index_array(grid, v)
            step = np.where(bv >= v, self.e_max, -self.e_max)
            self.counter += n
            out = v + step
        if grid.domain is not None:
            lo, hi = grid.domain
            out = np.minimum(np.maximum(out, lo), hi)
        return out

    def perturb(self, v: float, grid: QuantGrid) -> float:
        return float(self.perturb_array(np.array([v]), grid)[0])


def preset(name: str, dist: str = "uniform", seed: int = 0) -> Perturbation:
    try:
        e_max = PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {sorted(PRESETS)}"
        ) from None
    return Perturbation(e_max=e_max, dist=dist, seed=seed)
