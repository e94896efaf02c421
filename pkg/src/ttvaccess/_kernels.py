"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` loop version and a pure-numpy
version. Both consume identical inputs (all randomness is drawn by the caller)
so they return the same answers. The active path is chosen once at import:

    TTVACCESS_DISABLE_NUMBA=1   force the numpy path

Tests and ``benchmarks/bench_kernels.py`` call both paths explicitly.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("TTVACCESS_DISABLE_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
)

# Internal "no label" time; never leaves this module's callers un-converted.
INF_TIME = np.int64(2**62)
EARTH_RADIUS_M = 6_371_000.0


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# great-circle distance


def haversine_np(lat1, lon1, lat2, lon2):
    """Vectorised haversine distance in metres (broadcasting)."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dp * 0.5) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl * 0.5) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(h, 1.0)))


@_njit
def _haversine_scalar(lat1, lon1, lat2, lon2):
    p1 = math.radians(lat1)
    p2 = math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2) - math.radians(lon1)
    h = math.sin(dp * 0.5) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl * 0.5) ** 2
    if h > 1.0:
        h = 1.0
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


# ---------------------------------------------------------------------------
# k nearest neighbours (ties broken by index)


@_njit
def knn_numba(lat, lon, k):
    n = lat.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    best_d = np.empty(k, dtype=np.float64)
    best_j = np.empty(k, dtype=np.int64)
    for i in range(n):
        filled = 0
        for j in range(n):
            if j == i:
                continue
            d = _haversine_scalar(lat[i], lon[i], lat[j], lon[j])
            if filled == k and d >= best_d[k - 1]:
                # j ascends, so an equal distance loses the tie
                continue
            pos = filled if filled < k else k - 1
            while pos > 0 and best_d[pos - 1] > d:
                if pos < k:
                    best_d[pos] = best_d[pos - 1]
                    best_j[pos] = best_j[pos - 1]
                pos -= 1
            best_d[pos] = d
            best_j[pos] = j
            if filled < k:
                filled += 1
        for q in range(k):
            out[i, q] = best_j[q]
    return out


def knn_numpy(lat, lon, k, chunk=512):
    n = lat.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        d = haversine_np(lat[start:stop, None], lon[start:stop, None], lat[None, :], lon[None, :])
        rows = np.arange(stop - start)
        d[rows, rows + start] = np.inf
        order = np.argsort(d, axis=1, kind="stable")
        out[start:stop] = order[:, :k]
    return out


# ---------------------------------------------------------------------------
# RAPTOR round scan
#
# Network layout (all int64):
#   pat_stop_ptr/pat_stops      stop sequence of each pattern (CSR)
#   pat_trip_ptr                trip count offsets per pattern
#   pat_time_ptr                offset of each pattern's [trip][position] block
#   arr, dep                    flat time blocks
#   sp_ptr/sp_pat/sp_pos        (pattern, position) occurrences per stop (CSR)
#   tr_ptr/tr_to/tr_time        walking transfers per stop (CSR), seconds


@_njit
def raptor_numba(
    origin,
    t0,
    horizon,
    max_rides,
    pat_stop_ptr,
    pat_stops,
    pat_trip_ptr,
    pat_time_ptr,
    arr,
    dep,
    sp_ptr,
    sp_pat,
    sp_pos,
    tr_ptr,
    tr_to,
    tr_time,
):
    n_stops = sp_ptr.shape[0] - 1
    n_pat = pat_stop_ptr.shape[0] - 1
    inf = np.int64(2**62)
    best = np.full(n_stops, inf, dtype=np.int64)
    board = np.full(n_stops, inf, dtype=np.int64)
    rides = np.full(n_stops, -1, dtype=np.int64)
    marked = np.zeros(n_stops, dtype=np.bool_)
    ride_marked = np.zeros(n_stops, dtype=np.bool_)
    first_pos = np.empty(n_pat, dtype=np.int64)

    best[origin] = t0
    rides[origin] = 0
    board[origin] = t0
    marked[origin] = True
    for e in range(tr_ptr[origin], tr_ptr[origin + 1]):
        t = t0 + tr_time[e]
        s2 = tr_to[e]
        if t <= horizon and t < board[s2]:
            board[s2] = t
            marked[s2] = True

    for k in range(1, max_rides + 1):
        board_prev = board.copy()
        first_pos[:] = -1
        any_marked = False
        for s in range(n_stops):
            if marked[s]:
                any_marked = True
                marked[s] = False
                for q in range(sp_ptr[s], sp_ptr[s + 1]):
                    p = sp_pat[q]
                    if first_pos[p] < 0 or sp_pos[q] < first_pos[p]:
                        first_pos[p] = sp_pos[q]
        if not any_marked:
            break
        ride_marked[:] = False

        for p in range(n_pat):
            if first_pos[p] < 0:
                continue
            s0 = pat_stop_ptr[p]
            n_pos = pat_stop_ptr[p + 1] - s0
            n_trips = pat_trip_ptr[p + 1] - pat_trip_ptr[p]
            base = pat_time_ptr[p]
            trip = -1
            for pos in range(first_pos[p], n_pos):
                s = pat_stops[s0 + pos]
                if trip >= 0:
                    a = arr[base + trip * n_pos + pos]
                    if a <= horizon and a < best[s]:
                        best[s] = a
                        rides[s] = k
                        ride_marked[s] = True
                bt = board_prev[s]
                if bt == inf:
                    continue
                hi = trip if trip >= 0 else n_trips
                if trip >= 0 and bt > dep[base + trip * n_pos + pos]:
                    continue
                # first trip in [0, hi) departing at or after bt
                lo = 0
                h = hi
                while lo < h:
                    mid = (lo + h) // 2
                    if dep[base + mid * n_pos + pos] < bt:
                        lo = mid + 1
                    else:
                        h = mid
                if lo < hi:
                    trip = lo

        for s in range(n_stops):
            if not ride_marked[s]:
                continue
            a = best[s]
            if a < board[s]:
                board[s] = a
                marked[s] = True
            for e in range(tr_ptr[s], tr_ptr[s + 1]):
                t = a + tr_time[e]
                s2 = tr_to[e]
                if t <= horizon and t < board[s2]:
                    board[s2] = t
                    marked[s2] = True
    return best, rides


def _csr_edges(ptr, sources):
    """Edge indices of all CSR rows in ``sources`` plus the matching source per edge."""
    starts = ptr[sources]
    counts = ptr[sources + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    src = np.repeat(sources, counts)
    offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return np.repeat(starts, counts) + offs, src


def raptor_numpy(
    origin,
    t0,
    horizon,
    max_rides,
    pat_stop_ptr,
    pat_stops,
    pat_trip_ptr,
    pat_time_ptr,
    arr,
    dep,
    sp_ptr,
    sp_pat,
    sp_pos,
    tr_ptr,
    tr_to,
    tr_time,
):
    n_stops = sp_ptr.shape[0] - 1
    n_pat = pat_stop_ptr.shape[0] - 1
    inf = INF_TIME
    best = np.full(n_stops, inf, dtype=np.int64)
    board = np.full(n_stops, inf, dtype=np.int64)
    rides = np.full(n_stops, -1, dtype=np.int64)
    best[origin] = t0
    rides[origin] = 0
    board[origin] = t0

    def relax(sources):
        edges, src = _csr_edges(tr_ptr, sources)
        cand = best[src] + tr_time[edges]
        keep = cand <= horizon
        np.minimum.at(board, tr_to[edges][keep], cand[keep])

    before = board.copy()
    relax(np.array([origin], dtype=np.int64))
    marked = board < before
    marked[origin] = True

    # per time entry: its pattern-position slot; per slot: pattern, offset and trip count
    n_pos = np.diff(pat_stop_ptr)
    n_trips = np.diff(pat_trip_ptr)
    slot_pat = np.repeat(np.arange(n_pat), n_pos)
    slot_pos = np.arange(pat_stops.size) - pat_stop_ptr[slot_pat]
    entry_pat = np.repeat(np.arange(n_pat), np.diff(pat_time_ptr))
    local = np.arange(dep.size) - pat_time_ptr[entry_pat]
    entry_slot = pat_stop_ptr[entry_pat] + local % n_pos[entry_pat]
    first = slot_pos == 0
    big = int(n_trips.max()) + 1 if n_pat else 1
    shift = slot_pat * big

    for k in range(1, max_rides + 1):
        if not marked.any():
            break
        board_prev = board.copy()
        # patterns are FIFO, so the first catchable trip at a slot is a count of earlier departures
        catch = np.bincount(entry_slot[dep < board_prev[pat_stops][entry_slot]], minlength=pat_stops.size)
        # trip on board when reaching a slot: smallest catch at an earlier slot of the same pattern
        run = np.minimum.accumulate(catch - shift) + shift
        on_board = np.empty_like(run)
        on_board[1:] = run[:-1]
        ok = ~first & (on_board < n_trips[slot_pat])
        slots = np.flatnonzero(ok)
        best_before = best.copy()
        if slots.size:
            p = slot_pat[slots]
            a = arr[pat_time_ptr[p] + on_board[slots] * n_pos[p] + slot_pos[slots]]
            keep = a <= horizon
            np.minimum.at(best, pat_stops[slots][keep], a[keep])

        improved = best < best_before
        rides[improved] = k
        sources = np.flatnonzero(improved)
        before = board.copy()
        np.minimum.at(board, sources, best[sources])
        relax(sources)
        marked = board < before
    return best, rides


# ---------------------------------------------------------------------------
# uniform draws -> k distinct indices from range(m)
#
# Draw j picks rank floor(u_j * (m - j)) among the values not yet chosen.


@_njit
def _draw_distinct_numba(u_row, m, out):
    k = out.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    for j in range(k):
        v = np.int64(u_row[j] * (m - j))
        # chosen[:j] is kept sorted ascending
        pos = 0
        while pos < j and chosen[pos] <= v:
            v += 1
            pos += 1
        for q in range(j, pos, -1):
            chosen[q] = chosen[q - 1]
        chosen[pos] = v
        out[j] = v


def draw_distinct_numpy(u, m):
    """Row-wise: map uniforms ``u`` (r, k) to k distinct integers in [0, m)."""
    r, k = u.shape
    out = np.empty((r, k), dtype=np.int64)
    chosen = np.empty((r, 0), dtype=np.int64)
    for j in range(k):
        v = (u[:, j] * (m - j)).astype(np.int64)
        for col in range(j):
            v += v >= chosen[:, col]
        out[:, j] = v
        chosen = np.sort(np.column_stack([chosen, v]), axis=1)
    return out


# ---------------------------------------------------------------------------
# Moran's I permutation replicates


@_njit
def global_moran_perm_numba(z, neighbors, weights, perms, scale):
    n_perm, n = perms.shape
    k = neighbors.shape[1]
    out = np.empty(n_perm, dtype=np.float64)
    zp = np.empty(n, dtype=np.float64)
    for r in range(n_perm):
        for i in range(n):
            zp[i] = z[perms[r, i]]
        acc = 0.0
        for i in range(n):
            lag = 0.0
            for q in range(k):
                lag += weights[i, q] * zp[neighbors[i, q]]
            acc += zp[i] * lag
        out[r] = scale * acc
    return out


def global_moran_perm_numpy(z, neighbors, weights, perms, scale, chunk=256):
    out = np.empty(perms.shape[0], dtype=np.float64)
    for start in range(0, perms.shape[0], chunk):
        zp = z[perms[start : start + chunk]]
        lag = (zp[:, neighbors] * weights[None, :, :]).sum(axis=2)
        out[start : start + chunk] = scale * (zp * lag).sum(axis=1)
    return out


@_njit
def local_moran_perm_numba(i, z, neighbors_i, weights_i, u, scale):
    """Conditional permutation replicates of I_i (others shuffled, z_i held)."""
    n = z.shape[0]
    n_perm, k = u.shape
    out = np.empty(n_perm, dtype=np.float64)
    draw = np.empty(k, dtype=np.int64)
    for r in range(n_perm):
        _draw_distinct_numba(u[r], n - 1, draw)
        lag = 0.0
        for q in range(k):
            j = draw[q]
            if j >= i:
                j += 1
            lag += weights_i[q] * z[j]
        out[r] = scale * z[i] * lag
    return out


def local_moran_perm_numpy(i, z, neighbors_i, weights_i, u, scale):
    draw = draw_distinct_numpy(u, z.shape[0] - 1)
    draw += draw >= i
    return scale * z[i] * (z[draw] * weights_i[None, :]).sum(axis=1)


if USE_NUMBA:
    knn = knn_numba
    raptor = raptor_numba
    global_moran_perm = global_moran_perm_numba
    local_moran_perm = local_moran_perm_numba
else:
    knn = knn_numpy
    raptor = raptor_numpy
    global_moran_perm = global_moran_perm_numpy
    local_moran_perm = local_moran_perm_numpy
