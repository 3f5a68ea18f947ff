"""Portable seeded random streams.

xoshiro256** seeded through splitmix64, so that a 64-bit seed gives the same
stream in any implementation.  Variates: uniform doubles from the top 53
bits, Gaussians by Box-Muller, Poisson by Knuth multiplication (mean < 30) or
Hoermann's PTRS rejection, bounded integers by rejection and Fisher-Yates
shuffles.
"""

import math

MASK = (1 << 64) - 1
POISSON_SWITCH = 30.0


def splitmix64(state):
    """One splitmix64 step; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def derive_seed(seed, index):
    """Seed of the ``index``-th independent sub-stream of ``seed``."""
    state = (int(seed) & MASK) ^ ((int(index) * 0xD1B54A32D192ED03) & MASK)
    _, out = splitmix64(state)
    return out


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK


class Xoshiro256:
    """xoshiro256** generator."""

    def __init__(self, seed):
        state = int(seed) & MASK
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
        self.s = s
        self._spare_normal = None

    def next_u64(self):
        s = self.s
        result = (_rotl((s[1] * 5) & MASK, 7) * 9) & MASK
        t = (s[1] << 17) & MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self):
        """Double in ``[0, 1)``."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_range(self, lo, hi):
        return lo + (hi - lo) * self.uniform()

    def normal(self):
        """Standard Gaussian by Box-Muller; the second variate is cached."""
        if self._spare_normal is not None:
            z, self._spare_normal = self._spare_normal, None
            return z
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def bounded(self, n):
        """Uniform integer in ``[0, n)`` without modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = MASK - (MASK % n + 1) % n
        while True:
            x = self.next_u64()
            if x <= limit:
                return x % n

    def shuffle(self, items):
        """Fisher-Yates shuffle in place; returns ``items``."""
        for i in range(len(items) - 1, 0, -1):
            j = self.bounded(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def poisson(self, mean):
        if mean < 0 or not math.isfinite(mean):
            raise ValueError("Poisson mean must be finite and nonnegative")
        if mean == 0:
            return 0
        if mean < POISSON_SWITCH:
            return self._poisson_knuth(mean)
        return self._poisson_ptrs(mean)

    def _poisson_knuth(self, mean):
        limit = math.exp(-mean)
        k, prod = 0, self.uniform()
        while prod > limit:
            k += 1
            prod *= self.uniform()
        return k

    def _poisson_ptrs(self, mean):
        slam = math.sqrt(mean)
        loglam = math.log(mean)
        b = 0.931 + 2.53 * slam
        a = -0.059 + 0.02483 * b
        invalpha = 1.1239 + 1.1328 / (b - 3.4)
        vr = 0.9277 - 3.6224 / (b - 2.0)
        while True:
            U = self.uniform() - 0.5
            V = self.uniform()
            us = 0.5 - abs(U)
            k = math.floor((2.0 * a / us + b) * U + mean + 0.43)
            if us >= 0.07 and V <= vr:
                return k
            if k < 0 or (us < 0.013 and V > us):
                continue
            if (math.log(V) + math.log(invalpha) - math.log(a / (us * us) + b)
                    <= -mean + k * loglam - math.lgamma(k + 1)):
                return k
