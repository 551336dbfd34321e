#!/usr/bin/env python3
"""Reference Gaussian stream, written independently of the C++ library.

splitmix64 state expansion -> xoshiro256++ -> Box-Muller on (0,1] x [0,1)
uniform pairs (cos value first, sin value second). Prints the first 16
normals for each requested seed, one seed per line.

    python3 tools/gen_gaussian_vectors.py > tests/data/gaussian_vectors.txt
"""

import math
import sys

MASK = (1 << 64) - 1


def splitmix64(state):
    while True:
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        yield z ^ (z >> 31)


def rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK


def xoshiro256pp(seed):
    sm = splitmix64(seed)
    s = [next(sm) for _ in range(4)]
    while True:
        result = (rotl((s[0] + s[3]) & MASK, 23) + s[0]) & MASK
        t = (s[1] << 17) & MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = rotl(s[3], 45)
        yield result


def normals(seed, count):
    bits = xoshiro256pp(seed)
    out = []
    while len(out) < count:
        u1 = ((next(bits) >> 11) + 1) * 2.0**-53
        u2 = (next(bits) >> 11) * 2.0**-53
        r = math.sqrt(-2.0 * math.log(u1))
        angle = 2.0 * math.pi * u2
        out.append(r * math.cos(angle))
        out.append(r * math.sin(angle))
    return out[:count]


def main(argv):
    seeds = [int(a) for a in argv[1:]] or [0, 1, 42, 100_000_000]
    print("# first 16 standard normals per seed: seed v0 ... v15")
    print("# splitmix64 -> xoshiro256++ -> Box-Muller, values printed with %.17g")
    for seed in seeds:
        print(seed, " ".join("%.17g" % v for v in normals(seed, 16)))


if __name__ == "__main__":
    main(sys.argv)
