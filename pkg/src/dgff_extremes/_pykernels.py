"""Pure-Python (numpy) implementations of the hot kernels.

Same signatures and semantics as the compiled ``_ckernels`` module. All
randomness is drawn by the caller and passed in, so the two backends agree
up to floating-point summation order.

Step codes: code ``c`` in ``[0, 2d)`` moves coordinate ``c // 2`` by ``+1``
when ``c`` is even and ``-1`` when odd.
"""
import numpy as np

BACKEND = "python"


def _step_vectors(d):
    vec = np.zeros((2 * d, d), dtype=np.int64)
    for c in range(2 * d):
        vec[c, c // 2] = 1 if c % 2 == 0 else -1
    return vec


def walk_first_returns(steps, d):
    """First return time to the origin of each walk, 0 when none within the row.

    Parameters
    ----------
    steps : uint8 array (B, T)
        Step codes, one walk per row.
    d : int
        Dimension.

    Returns
    -------
    int64 array (B,)
    """
    steps = np.asarray(steps, dtype=np.uint8)
    B, T = steps.shape
    vec = _step_vectors(d)
    out = np.zeros(B, dtype=np.int64)
    # Chunk along time so memory stays bounded for long walks.
    chunk = 512
    pos = np.zeros((B, d), dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    for t0 in range(0, T, chunk):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        block = vec[steps[idx, t0:t0 + chunk]]          # (b, c, d)
        path = pos[idx, None, :] + np.cumsum(block, axis=1)
        at_origin = ~np.any(path, axis=2)
        hit = at_origin.any(axis=1)
        first = np.argmax(at_origin, axis=1)
        out[idx[hit]] = t0 + first[hit] + 1
        alive[idx[hit]] = False
        pos[idx] = path[:, -1, :]
    return out


def coordinate_return_series(choices, qtable, d, skip):
    """Sum over ``skip < m <= T`` of ``prod_j q[N_j(m)]`` for each row.

    ``choices[b, m-1]`` is the coordinate moved at step ``m`` and ``N_j(m)``
    counts moves of coordinate ``j`` among the first ``m`` steps. ``q[k]`` is
    the probability that a one-dimensional walk of ``k`` steps sits at 0,
    so ``q[k] = 0`` for odd ``k``; the compiled kernel relies on this and skips
    steps where some count is odd.
    """
    choices = np.asarray(choices, dtype=np.uint8)
    qtable = np.asarray(qtable, dtype=np.float64)
    B, T = choices.shape
    prod = np.ones((B, T), dtype=np.float64)
    for j in range(d):
        counts = np.cumsum(choices == j, axis=1, dtype=np.int64)
        prod *= qtable[counts]
    out = np.zeros(B, dtype=np.float64)
    if skip < T:
        out = prod[:, skip:].sum(axis=1)
    return out


def killed_walk_visits(steps, start, target, n, d):
    """Visits to ``target`` by walks from ``start`` killed on leaving ``[0, n-1]^d``.

    Returns ``(visits, unfinished)`` where ``unfinished`` counts rows that ran
    out of steps before leaving the box.
    """
    steps = np.asarray(steps, dtype=np.uint8)
    start = np.asarray(start, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    B, L = steps.shape
    vec = _step_vectors(d)
    visits = np.zeros(B, dtype=np.int64)
    pos = np.tile(start, (B, 1))
    alive = np.ones(B, dtype=bool)
    if np.array_equal(start, target):
        visits += 1
    chunk = 512
    for t0 in range(0, L, chunk):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        path = pos[idx, None, :] + np.cumsum(vec[steps[idx, t0:t0 + chunk]], axis=1)
        outside = np.any((path < 0) | (path >= n), axis=2)
        left = outside.any(axis=1)
        exit_at = np.where(left, np.argmax(outside, axis=1), path.shape[1])
        inside_steps = np.arange(path.shape[1])[None, :] < exit_at[:, None]
        on_target = np.all(path == target, axis=2) & inside_steps
        visits[idx] += on_target.sum(axis=1)
        alive[idx[left]] = False
        pos[idx] = path[:, -1, :]
    return visits, int(alive.sum())


def neighborhood_sums(p, labels, shape, offsets, pair_values):
    """Dependency-neighborhood sums over l-infinity balls.

    For every site ``a`` with ``labels[a] >= 0`` and every offset ``o`` (row of
    ``offsets``) with ``b = a + o`` inside the grid and ``labels[b] >= 0``:
    ``b1 += p[a] * p[b]``; if ``o != 0`` also ``b2 += pair_values[k]`` and
    ``pairs += 1``.

    Returns ``(b1, b2, pairs)``.
    """
    p = np.asarray(p, dtype=np.float64).reshape(shape)
    member = np.asarray(labels).reshape(shape) >= 0
    pw = np.where(member, p, 0.0)
    b1 = 0.0
    b2 = 0.0
    pairs = 0
    for k, o in enumerate(np.asarray(offsets, dtype=np.int64)):
        src = []
        dst = []
        for oj, nj in zip(o, shape):
            if abs(oj) >= nj:
                break
            src.append(slice(max(0, -oj), nj - max(0, oj)))
            dst.append(slice(max(0, oj), nj - max(0, -oj)))
        else:
            src, dst = tuple(src), tuple(dst)
            both = member[src] & member[dst]
            b1 += float(np.sum(pw[src] * pw[dst]))
            if np.any(o):
                c = int(both.sum())
                pairs += c
                b2 += c * float(pair_values[k])
    return b1, b2, pairs
