# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def walk_first_returns(const unsigned char[:, ::1] steps, int d):
    cdef Py_ssize_t B = steps.shape[0], T = steps.shape[1]
    cdef Py_ssize_t b, t
    cdef int j, c, nonzero
    cdef long long pos[64]
    out = np.zeros(B, dtype=np.int64)
    cdef long long[::1] res = out
    if d > 64:
        raise ValueError("d > 64 not supported")
    with nogil:
        for b in range(B):
            for j in range(d):
                pos[j] = 0
            nonzero = 0
            for t in range(T):
                c = steps[b, t]
                if c & 1:
                    pos[c >> 1] -= 1
                else:
                    pos[c >> 1] += 1
                nonzero = 0
                for j in range(d):
                    if pos[j] != 0:
                        nonzero = 1
                        break
                if not nonzero:
                    res[b] = t + 1
                    break
    return out


def coordinate_return_series(const unsigned char[:, ::1] choices,
                             const double[::1] qtable, int d, Py_ssize_t skip):
    cdef Py_ssize_t B = choices.shape[0], T = choices.shape[1]
    cdef Py_ssize_t b, t
    cdef int j, odd
    cdef long long cnt[64]
    cdef double acc, prod
    out = np.zeros(B, dtype=np.float64)
    cdef double[::1] res = out
    if d > 64:
        raise ValueError("d > 64 not supported")
    with nogil:
        for b in range(B):
            for j in range(d):
                cnt[j] = 0
            odd = 0
            acc = 0.0
            for t in range(T):
                j = choices[b, t]
                cnt[j] += 1
                # number of odd counts; the product vanishes unless all are even
                if cnt[j] & 1:
                    odd += 1
                else:
                    odd -= 1
                if t + 1 > skip and odd == 0:
                    prod = 1.0
                    for j in range(d):
                        prod = prod * qtable[cnt[j]]
                    acc += prod
            res[b] = acc
    return out


def killed_walk_visits(const unsigned char[:, ::1] steps, start, target,
                       long long n, int d):
    cdef Py_ssize_t B = steps.shape[0], L = steps.shape[1]
    cdef Py_ssize_t b, t
    cdef int j, c, same, left
    cdef long long pos[64]
    cdef long long s[64]
    cdef long long g[64]
    cdef long long unfinished = 0
    if d > 64:
        raise ValueError("d > 64 not supported")
    for j in range(d):
        s[j] = start[j]
        g[j] = target[j]
    out = np.zeros(B, dtype=np.int64)
    cdef long long[::1] res = out
    with nogil:
        for b in range(B):
            same = 1
            for j in range(d):
                pos[j] = s[j]
                if s[j] != g[j]:
                    same = 0
            res[b] = same
            left = 0
            for t in range(L):
                c = steps[b, t]
                if c & 1:
                    pos[c >> 1] -= 1
                else:
                    pos[c >> 1] += 1
                if pos[c >> 1] < 0 or pos[c >> 1] >= n:
                    left = 1
                    break
                same = 1
                for j in range(d):
                    if pos[j] != g[j]:
                        same = 0
                        break
                res[b] += same
            if not left:
                unfinished += 1
    return out, int(unfinished)


def neighborhood_sums(p, labels, shape, offsets, pair_values):
    return _neighborhood_sums(np.ascontiguousarray(p, dtype=np.float64),
                              np.ascontiguousarray(labels, dtype=np.int64), shape,
                              np.ascontiguousarray(offsets, dtype=np.int64),
                              np.ascontiguousarray(pair_values, dtype=np.float64))


def _neighborhood_sums(const double[::1] p, const long long[::1] labels, shape,
                       const long long[:, ::1] offsets, const double[::1] pair_values):
    cdef int d = len(shape)
    cdef Py_ssize_t N = p.shape[0], K = offsets.shape[0]
    cdef Py_ssize_t a, k, bidx
    cdef int j, inside, nonzero
    cdef long long dims[64]
    cdef long long strides[64]
    cdef long long coord[64]
    cdef long long x, rem
    cdef double b1 = 0.0, b2 = 0.0, s1, s2
    cdef long long pairs = 0
    if d > 64:
        raise ValueError("d > 64 not supported")
    for j in range(d):
        dims[j] = shape[j]
    strides[d - 1] = 1
    for j in range(d - 2, -1, -1):
        strides[j] = strides[j + 1] * dims[j + 1]
    with nogil:
        for a in range(N):
            if labels[a] < 0:
                continue
            rem = a
            for j in range(d):
                coord[j] = rem // strides[j]
                rem = rem - coord[j] * strides[j]
            # per-site partial sums keep the running totals well conditioned
            s1 = 0.0
            s2 = 0.0
            for k in range(K):
                inside = 1
                nonzero = 0
                bidx = 0
                for j in range(d):
                    x = coord[j] + offsets[k, j]
                    if x < 0 or x >= dims[j]:
                        inside = 0
                        break
                    if offsets[k, j] != 0:
                        nonzero = 1
                    bidx += x * strides[j]
                if not inside or labels[bidx] < 0:
                    continue
                s1 += p[bidx]
                if nonzero:
                    s2 += pair_values[k]
                    pairs += 1
            b1 += p[a] * s1
            b2 += s2
    return b1, b2, int(pairs)
