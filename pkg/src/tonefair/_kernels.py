"""Hot numeric loops: batch histogram distances and Gaussian KDE sums.

Every kernel has a numba ``@njit`` version and a pure-numpy version with the
same signature. The numba path is used when numba imports and the environment
variable ``TONEFAIR_DISABLE_NUMBA`` is unset (or ``0``).
"""
import math
import os

import numpy as np

# metric codes shared by both backends
AD, CVM, FS, HS, HM, KL, KS, KP, KD, PF, WD = range(11)

KL_EPS = 1e-10
AD_EPS = 1e-12
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("TONEFAIR_DISABLE_NUMBA", "0") in ("", "0")


# ---------------------------------------------------------------------------
# numpy implementations


def batch_distances_numpy(P, q, code, width):
    """Distance of every row of ``P`` (n, K) to ``q`` (K,)."""
    P = np.atleast_2d(P)
    if code in (AD, CVM, KS, KP, WD):
        Fp = np.cumsum(P, axis=1)
        Fq = np.cumsum(q)
        Fp[:, -1] = 1.0
        Fq[-1] = 1.0
        diff = Fp - Fq
        if code == AD:
            denom = Fq * (1.0 - Fq)
            keep = (Fq > AD_EPS) & (Fq < 1.0 - AD_EPS)
            terms = np.zeros_like(diff)
            terms[:, keep] = diff[:, keep] ** 2 / denom[keep]
            return terms.sum(axis=1) * width
        if code == CVM:
            return (diff ** 2).sum(axis=1) * width
        if code == WD:
            return np.abs(diff).sum(axis=1) * width
        if code == KS:
            return np.abs(diff).max(axis=1)
        return np.maximum(diff.max(axis=1), 0.0) + np.maximum((-diff).max(axis=1), 0.0)
    if code == FS:
        return np.sqrt(P * q).sum(axis=1)
    if code == HM:
        # 1 - sum(sqrt(p q)) written as half the squared root-difference; exact zero at P == Q
        half = 0.5 * ((np.sqrt(P) - np.sqrt(q)) ** 2).sum(axis=1)
        return np.sqrt(np.maximum(half, 0.0))
    if code == HS:
        s = P + q
        num = 2.0 * P * q
        out = np.zeros_like(P)
        np.divide(num, s, out=out, where=s > 0)
        return out.sum(axis=1)
    if code == KL:
        qc = np.maximum(q, KL_EPS)
        out = np.zeros_like(P)
        pos = P > 0
        ratio = np.where(pos, P, 1.0) / qc
        out[pos] = (P * np.log(ratio))[pos]
        return out.sum(axis=1)
    d = np.abs(P - q)
    if code == KD:
        return (d / (1.0 + d)).sum(axis=1)
    if code == PF:
        return np.sqrt((d ** 2).sum(axis=1))
    raise ValueError(f"unknown metric code {code}")


def gaussian_kde_numpy(queries, support, h, chunk=2048):
    queries = np.asarray(queries, dtype=np.float64)
    out = np.empty(queries.shape[0])
    scale = _INV_SQRT_2PI / (support.shape[0] * h)
    for start in range(0, queries.shape[0], chunk):
        u = (queries[start:start + chunk, None] - support[None, :]) / h
        out[start:start + chunk] = np.exp(-0.5 * u * u).sum(axis=1) * scale
    return out


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True)
    def _row_distance(p, q, Fq, code, width):
        K = p.shape[0]
        acc = 0.0
        if code == AD or code == CVM or code == KS or code == KP or code == WD:
            fp = 0.0
            up = 0.0
            down = 0.0
            for i in range(K):
                fp += p[i]
                f = 1.0 if i == K - 1 else fp
                diff = f - Fq[i]
                if code == AD:
                    if Fq[i] > AD_EPS and Fq[i] < 1.0 - AD_EPS:
                        acc += diff * diff / (Fq[i] * (1.0 - Fq[i]))
                elif code == CVM:
                    acc += diff * diff
                elif code == WD:
                    acc += abs(diff)
                else:
                    if diff > up:
                        up = diff
                    if -diff > down:
                        down = -diff
            if code == KS:
                return max(up, down)
            if code == KP:
                return up + down
            return acc * width
        if code == FS:
            for i in range(K):
                acc += math.sqrt(p[i] * q[i])
            return acc
        if code == HM:
            for i in range(K):
                r = math.sqrt(p[i]) - math.sqrt(q[i])
                acc += r * r
            return math.sqrt(max(0.5 * acc, 0.0))
        if code == HS:
            for i in range(K):
                s = p[i] + q[i]
                if s > 0:
                    acc += 2.0 * p[i] * q[i] / s
            return acc
        if code == KL:
            for i in range(K):
                if p[i] > 0:
                    acc += p[i] * math.log(p[i] / max(q[i], KL_EPS))
            return acc
        if code == KD:
            for i in range(K):
                d = abs(p[i] - q[i])
                acc += d / (1.0 + d)
            return acc
        if code == PF:
            for i in range(K):
                d = p[i] - q[i]
                acc += d * d
            return math.sqrt(acc)
        return np.nan

    @njit(cache=True)
    def batch_distances_numba(P, q, code, width):
        n, K = P.shape
        Fq = np.cumsum(q)
        Fq[K - 1] = 1.0
        out = np.empty(n)
        for r in range(n):
            out[r] = _row_distance(P[r], q, Fq, code, width)
        return out

    @njit(cache=True)
    def gaussian_kde_numba(queries, support, h):
        m = queries.shape[0]
        n = support.shape[0]
        scale = _INV_SQRT_2PI / (n * h)
        out = np.empty(m)
        for i in range(m):
            acc = 0.0
            x = queries[i]
            for j in range(n):
                u = (x - support[j]) / h
                acc += math.exp(-0.5 * u * u)
            out[i] = acc * scale
        return out


def batch_distances(P, q, code, width=1.0):
    P = np.ascontiguousarray(np.atleast_2d(P), dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    if USE_NUMBA:
        out = batch_distances_numba(P, q, int(code), float(width))
        if np.isnan(out).any():
            raise ValueError(f"unknown metric code {code}")
        return out
    return batch_distances_numpy(P, q, int(code), float(width))


def gaussian_kde(queries, support, h):
    queries = np.ascontiguousarray(np.atleast_1d(queries), dtype=np.float64)
    support = np.ascontiguousarray(support, dtype=np.float64)
    if USE_NUMBA:
        return gaussian_kde_numba(queries, support, float(h))
    return gaussian_kde_numpy(queries, support, float(h))
