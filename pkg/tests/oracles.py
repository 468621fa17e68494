"""Independent brute-force oracles for the surface metrics."""
import math

import numpy as np


def brute_dice(a, b):
    inter = sum(1 for idx in zip(*np.nonzero(a)) if b[idx])
    tot = int(a.sum()) + int(b.sum())
    return 1.0 if tot == 0 else 2 * inter / tot


def brute_surface(m):
    out = []
    for idx in zip(*np.nonzero(m)):
        for ax in range(3):
            for step in (-1, 1):
                j = list(idx)
                j[ax] += step
                if not (0 <= j[ax] < m.shape[ax]) or not m[tuple(j)]:
                    out.append(idx)
                    break
            else:
                continue
            break
    return np.array(sorted(set(out)), dtype=float).reshape(-1, 3)


def brute_directed(src, dst, sp):
    s, d = src * sp, dst * sp
    return np.sqrt(((s[:, None, :] - d[None, :, :]) ** 2).sum(-1)).min(axis=1)


def brute_p95(d):
    d = np.sort(d)
    pos = 0.95 * (len(d) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(d) - 1)
    return d[lo] + (pos - lo) * (d[hi] - d[lo])


def random_mask_pair(seed, shape=(16, 16, 16)):
    r = np.random.default_rng(seed)
    a = r.random(shape) < r.uniform(0.05, 0.4)
    b = a ^ (r.random(shape) < r.uniform(0.01, 0.2))
    a[r.integers(shape[0]), r.integers(shape[1]), r.integers(shape[2])] = True
    b[r.integers(shape[0]), r.integers(shape[1]), r.integers(shape[2])] = True
    return a.astype(np.uint8), b.astype(np.uint8)
