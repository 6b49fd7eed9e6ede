"""Counter-based deterministic random number generation.

Every piece of artifact randomness (scene synthesis, network init, patch
sampling, k-means seeding, batch shuffling) flows through `CounterRng` so that
identical seeds give bit-identical streams on every platform, independent of
generation order. The construction is fully specified here so it can be
reproduced from this docstring alone:

* `mix64(x)` is the SplitMix64 finalizer (Steele, Lea, Flood 2014), all
  arithmetic modulo 2^64:
      z = x
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
      z = (z ^ (z >> 27)) * 0x94D049BB133111EB
      z = z ^ (z >> 31)
* A stream is addressed by a 64-bit seed plus a tuple of tags (ints or ASCII
  strings). String tags are hashed with FNV-1a 64. The stream key is
      key = mix64(seed); for each tag t: key = mix64(key ^ tag64(t))
* Raw draw i (i = 0, 1, 2, ...) of a stream is
      u_i = mix64(key + (i + 1) * 0x9E3779B97F4A7C15)   (mod 2^64),
  i.e. the SplitMix64 sequence started at `key`.
* `uniform` maps a raw draw to a double in [0, 1) as (u >> 11) * 2**-53.
* `normal` uses the Box-Muller cosine branch on consecutive draw pairs:
      z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
  where u1, u2 are uniforms from draws (2i, 2i+1); 1 - u1 lies in (0, 1].
* `randint(lo, hi)` is lo + min(floor(uniform * (hi - lo)), hi - lo - 1),
  one draw per value.
* `shuffle` is a descending Fisher-Yates; step i (from n-1 down to 1) swaps
  position i with position randint(0, i + 1), one draw per step.
"""

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


def mix64(x):
    """SplitMix64 finalizer on uint64 scalars or arrays."""
    z = np.uint64(x) if np.isscalar(x) else np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
    return z


def _tag64(tag):
    if isinstance(tag, str):
        h = _FNV_OFFSET
        with np.errstate(over="ignore"):
            for b in tag.encode("ascii"):
                h = (h ^ np.uint64(b)) * _FNV_PRIME
        return h
    if isinstance(tag, (int, np.integer)):
        return np.uint64(int(tag) & 0xFFFFFFFFFFFFFFFF)
    raise TypeError(f"stream tag must be int or str, got {type(tag).__name__}")


def stream_key(seed, *tags):
    """Derive the 64-bit key of the (seed, *tags) stream."""
    key = mix64(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    for t in tags:
        key = mix64(key ^ _tag64(t))
    return key


class CounterRng:
    """Stateful view of one counter-based stream; draws advance a counter."""

    def __init__(self, seed, *tags):
        self._key = stream_key(seed, *tags)
        self._counter = 0

    def raw(self, n):
        """Next n raw 64-bit draws as a uint64 array."""
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return mix64(self._key + idx * _GOLDEN)

    def uniform(self, n):
        """n doubles in [0, 1)."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n):
        """n standard normal doubles (Box-Muller, cosine branch)."""
        u = self.uniform(2 * n)
        u1, u2 = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)

    def randint(self, lo, hi, n=None):
        """Integers in [lo, hi); scalar when n is None."""
        if hi <= lo:
            raise ValueError(f"empty integer range [{lo}, {hi})")
        span = hi - lo
        m = 1 if n is None else n
        vals = np.minimum(np.floor(self.uniform(m) * span).astype(np.int64), span - 1) + lo
        return int(vals[0]) if n is None else vals

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle of a list or 1-D array."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i + 1)
            items[i], items[j] = items[j], items[i]
        return items
